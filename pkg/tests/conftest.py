import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gasso.model import DataBlock, GasParams, Ranks
from gasso.simgen import SettingSpec, generate

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_params(rng, n=30, p1=8, p2=6, ranks=(2, 1, 2), scale=1.0):
    """Unnormalised parameter set with arbitrary (non-identifiable) factors."""
    r0, r1, r2 = ranks
    g = lambda *s: scale * rng.standard_normal(s)  # noqa: E731
    return GasParams(mu1=g(p1), mu2=g(p2), U0=g(n, r0), U1=g(n, r1), U2=g(n, r2),
                     V1=g(p1, r0), V2=g(p2, r0), A1=g(p1, r1), A2=g(p2, r2))


def small_spec(families, seed=0, n=50, p1=30, p2=25, ranks=(1, 1, 1)):
    scale = {"gaussian": 20.0, "bernoulli": 40.0, "poisson": 8.0}
    r0, r1, r2 = ranks
    f1, f2 = families
    sv = lambda base, r: tuple(base * (1.0 - 0.2 * k) for k in range(r))  # noqa: E731
    return SettingSpec(
        "small", families, n=n, p1=p1, p2=p2,
        joint_singvals=sv(scale[f1], r0), ind1_singvals=sv(0.8 * scale[f1], r1),
        ind2_singvals=sv(0.7 * scale[f2], r2),
        intercept_ranges=((-0.5, 0.5), (0.5, 1.0) if f2 == "poisson" else (-0.5, 0.5)),
        seed=seed,
    )


PAIRINGS = [("gaussian", "gaussian"), ("gaussian", "bernoulli"), ("gaussian", "poisson"),
            ("bernoulli", "poisson")]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_gp():
    return generate(small_spec(("gaussian", "poisson"), seed=3))


# one summary line per acceptance criterion, shown at the end of the run
AC_LINES: list[str] = []


def record_ac(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] AC{number} {detail}"
    AC_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if AC_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(AC_LINES, key=lambda s: int(s.split()[1][2:])):
            terminalreporter.write_line(line)
