"""Ground-truth generators for the four simulation settings and the benchmark harness."""
from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .association import association_coefficient
from .expfam import Family, mean_from_natural
from .fitter import FitConfig, fit
from .model import DataBlock, FitResult, GasParams, Ranks, natural_parameters
from .numkit import principal_angle

SETTINGS = ("S1_GG", "S2_GB", "S3_GP", "S4_BP")


@dataclass(frozen=True)
class SettingSpec:
    id: str
    families: tuple[str, str]
    n: int = 200
    p1: int = 120
    p2: int = 120
    joint_singvals: tuple[float, ...] = (180.0, 140.0)
    ind1_singvals: tuple[float, ...] = (120.0, 100.0)
    ind2_singvals: tuple[float, ...] = (100.0, 80.0)
    # half-widths of the symmetric uniform ranges for V1, V2, A1, A2
    loading_ranges: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.5)
    intercept_ranges: tuple[tuple[float, float], tuple[float, float]] = ((-0.5, 0.5), (-0.5, 0.5))
    score_range: float = 0.5
    sparse: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        for sv in (self.joint_singvals, self.ind1_singvals, self.ind2_singvals):
            a = np.asarray(sv, dtype=float)
            if np.any(a <= 0) or np.any(np.diff(a) > 0):
                raise ValueError("singular values must be positive and nonincreasing")
        if self.sparse is not None and not 0.0 <= self.sparse < 1.0:
            raise ValueError("sparse fraction must lie in [0, 1)")

    @property
    def ranks(self) -> Ranks:
        return Ranks(len(self.joint_singvals), len(self.ind1_singvals), len(self.ind2_singvals))

    def replace(self, **kw) -> "SettingSpec":
        return dataclasses.replace(self, **kw)


def preset(setting: int | str, seed: int = 0) -> SettingSpec:
    """Built-in settings 1-4 (Gaussian-Gaussian, -Bernoulli, -Poisson, Bernoulli-Poisson)."""
    key = str(setting).upper()
    if key in ("1", "S1", "S1_GG"):
        return SettingSpec("S1_GG", ("gaussian", "gaussian"), seed=seed)
    if key in ("2", "S2", "S2_GB"):
        return SettingSpec("S2_GB", ("gaussian", "bernoulli"), joint_singvals=(240.0, 220.0),
                           ind1_singvals=(90.0, 80.0), ind2_singvals=(200.0, 180.0),
                           loading_ranges=(0.5, 1.0, 0.5, 0.5), seed=seed)
    if key in ("3", "S3", "S3_GP"):
        return SettingSpec("S3_GP", ("gaussian", "poisson"), joint_singvals=(80.0, 40.0),
                           ind1_singvals=(60.0, 40.0), ind2_singvals=(20.0, 16.0),
                           loading_ranges=(0.5, 0.25, 0.5, 0.5),
                           intercept_ranges=((-0.5, 0.5), (2.0, 3.0)), seed=seed)
    if key in ("4", "S4", "S4_BP"):
        return SettingSpec("S4_BP", ("bernoulli", "poisson"), joint_singvals=(180.0, 140.0),
                           ind1_singvals=(200.0, 160.0), ind2_singvals=(12.0, 10.0),
                           loading_ranges=(5.0, 0.5, 0.5, 0.5),
                           intercept_ranges=((-0.5, 0.5), (2.0, 3.0)), seed=seed)
    raise ValueError(f"unknown setting {setting!r}")


def sparsify(spec: SettingSpec, fraction: float = 0.4) -> SettingSpec:
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    return spec.replace(sparse=fraction)


def high_dim(spec: SettingSpec, p: int) -> SettingSpec:
    """Same setting with ``p1 = p2 = p`` and singular values scaled by ``p / p1``."""
    f = p / spec.p1
    scale = lambda sv: tuple(float(s) * f for s in sv)  # noqa: E731
    return spec.replace(p1=p, p2=p, joint_singvals=scale(spec.joint_singvals),
                        ind1_singvals=scale(spec.ind1_singvals), ind2_singvals=scale(spec.ind2_singvals))


def _qr(M: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(M)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def truncate_loadings(V: np.ndarray, fraction: float, orthonormalize: bool = True) -> np.ndarray:
    """Zero entries below the ``fraction`` quantile of ``|V|``, then re-orthonormalise."""
    if fraction <= 0 or V.shape[1] == 0:
        return V.copy()
    W = V.copy()
    W[np.abs(W) < np.quantile(np.abs(W), fraction)] = 0.0
    dead = np.flatnonzero(~np.any(W != 0, axis=0))
    if dead.size:
        raise ValueError(f"truncation removed loading column {int(dead[0]) + 1}")
    return _qr(W) if orthonormalize else W


def make_truth(spec: SettingSpec) -> GasParams:
    rng = np.random.default_rng(spec.seed)
    n, p1, p2 = spec.n, spec.p1, spec.p2
    r0, r1, r2 = spec.ranks
    a = spec.score_range
    raw = rng.uniform(-a, a, size=(n, r0 + r1 + r2))
    # Gram-Schmidt in the order 1, U0, U1, U2 gives centred, mutually orthogonal scores
    Q = _qr(np.hstack([np.ones((n, 1)), raw]))[:, 1:]
    sv = np.concatenate([spec.joint_singvals, spec.ind1_singvals, spec.ind2_singvals])
    S = Q * sv
    U0, U1, U2 = S[:, :r0], S[:, r0:r0 + r1], S[:, r0 + r1:]
    hv1, hv2, ha1, ha2 = spec.loading_ranges
    V0 = _qr(np.vstack([rng.uniform(-hv1, hv1, (p1, r0)), rng.uniform(-hv2, hv2, (p2, r0))]))
    if spec.sparse:
        V0 = truncate_loadings(V0, spec.sparse)
    A1 = _qr(rng.uniform(-ha1, ha1, (p1, r1)))
    A2 = _qr(rng.uniform(-ha2, ha2, (p2, r2)))
    (l1, h1), (l2, h2) = spec.intercept_ranges
    mu1 = rng.uniform(l1, h1, p1)
    mu2 = rng.uniform(l2, h2, p2)
    return GasParams(mu1=mu1, mu2=mu2, U0=U0, U1=U1, U2=U2, V1=V0[:p1], V2=V0[p1:], A1=A1, A2=A2)


def sample_block(family: str, Theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    fam = Family.parse(family)
    if fam == Family.GAUSSIAN:
        return Theta + rng.standard_normal(Theta.shape)
    mean = mean_from_natural(fam, Theta)
    if fam == Family.BERNOULLI:
        return (rng.random(Theta.shape) < mean).astype(float)
    return rng.poisson(mean).astype(float)


def sample_data(spec: SettingSpec, truth: GasParams, replicate: int = 0) -> tuple[DataBlock, DataBlock]:
    rng = np.random.default_rng([spec.seed, int(replicate)])
    T1, T2 = natural_parameters(truth)
    f1, f2 = spec.families
    return DataBlock(sample_block(f1, T1, rng), f1), DataBlock(sample_block(f2, T2, rng), f2)


def generate(spec: SettingSpec, replicate: int = 0) -> tuple[GasParams, DataBlock, DataBlock]:
    """Truth from ``spec.seed``; data noise from the ``(seed, replicate)`` stream."""
    truth = make_truth(spec)
    d1, d2 = sample_data(spec, truth, replicate)
    return truth, d1, d2


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsRow:
    norm_mu: tuple[float, float]
    norm_jnt: tuple[float, float]
    norm_ind: tuple[float, float]
    norm_theta: tuple[float, float]
    angle_V0: float
    angle_A1: float
    angle_A2: float
    rho_hat: float
    time: float
    iterations: int = 0
    rel_theta: tuple[float, float] = (float("nan"), float("nan"))

    def flat(self) -> dict[str, float]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                for k, x in enumerate(v, 1):
                    out[f"{f.name}{k}"] = float(x)
            else:
                out[f.name] = float(v)
        return out


def _angle(A: np.ndarray, B: np.ndarray) -> float:
    if A.shape[1] == 0 or B.shape[1] == 0:
        return float("nan")
    return principal_angle(A, B)


def _centered_theta(P: GasParams) -> tuple[np.ndarray, np.ndarray]:
    T1, T2 = natural_parameters(P)
    return T1 - T1.mean(axis=0), T2 - T2.mean(axis=0)


def estimated_rho(P: GasParams) -> float:
    T1, T2 = _centered_theta(P)
    try:
        return association_coefficient(T1, T2)
    except ValueError:
        return float("nan")


def evaluate(result: FitResult | GasParams, truth: GasParams, blocks=None) -> MetricsRow:
    """Frobenius losses per block, loading principal angles, estimated association."""
    est = result.params if isinstance(result, FitResult) else result
    fro = np.linalg.norm
    T, E = natural_parameters(truth), natural_parameters(est)
    rows = dict(
        norm_mu=(fro(truth.mu1 - est.mu1), fro(truth.mu2 - est.mu2)),
        norm_jnt=tuple(fro(truth.joint_structure(k) - est.joint_structure(k)) for k in (1, 2)),
        norm_ind=tuple(fro(truth.individual_structure(k) - est.individual_structure(k)) for k in (1, 2)),
        norm_theta=tuple(fro(T[k] - E[k]) for k in (0, 1)),
    )
    rel = tuple(rows["norm_theta"][k] / fro(T[k]) for k in (0, 1))
    return MetricsRow(
        **{k: tuple(float(x) for x in v) for k, v in rows.items()},
        angle_V0=_angle(truth.V0, est.V0),
        angle_A1=_angle(truth.A1, est.A1),
        angle_A2=_angle(truth.A2, est.A2),
        rho_hat=estimated_rho(est),
        time=float(result.wall_time) if isinstance(result, FitResult) else 0.0,
        iterations=int(result.iterations) if isinstance(result, FitResult) else 0,
        rel_theta=tuple(float(x) for x in rel),
    )


# ---------------------------------------------------------------------------
# benchmark


def median_mad(x) -> tuple[float, float]:
    """Median and raw (unscaled) median absolute deviation, ignoring NaN."""
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return float("nan"), float("nan")
    med = float(np.median(x))
    return med, float(np.median(np.abs(x - med)))


@dataclass
class BenchmarkTable:
    spec: SettingSpec
    ranks: Ranks
    rows: dict[str, list[dict[str, float]]] = field(default_factory=dict)
    failures: dict[str, list[str]] = field(default_factory=dict)

    def summary(self, mode: str) -> dict[str, tuple[float, float]]:
        rows = self.rows.get(mode, [])
        if not rows:
            return {}
        return {k: median_mad([r[k] for r in rows]) for k in rows[0]}

    def median(self, mode: str, metric: str) -> float:
        return self.summary(mode)[metric][0]

    def to_csv(self) -> str:
        lines = ["mode,metric,median,mad,n_ok,n_failed"]
        for mode in self.rows:
            ok, bad = len(self.rows[mode]), len(self.failures.get(mode, []))
            for k, (m, d) in self.summary(mode).items():
                lines.append(f"{mode},{k},{m:.6g},{d:.6g},{ok},{bad}")
        return "\n".join(lines) + "\n"

    def pretty(self) -> str:
        names = [("norm_mu", "Norm_avg"), ("norm_jnt", "Norm_jnt"), ("norm_ind", "Norm_ind"),
                 ("norm_theta", "Norm_Theta")]
        out = [f"{self.spec.id}  ranks={tuple(self.ranks)}"]
        for mode in self.rows:
            s = self.summary(mode)
            out.append(f"[{mode}]  ok={len(self.rows[mode])} failed={len(self.failures.get(mode, []))}")
            for key, label in names:
                cells = "  ".join(f"{s[f'{key}{k}'][0]:9.3f}({s[f'{key}{k}'][1]:.2f})" for k in (1, 2))
                out.append(f"  {label:<11}{cells}")
            for key in ("angle_V0", "angle_A1", "angle_A2", "rho_hat", "iterations", "time"):
                out.append(f"  {key:<11}{s[key][0]:9.4f}({s[key][1]:.4f})")
        return "\n".join(out)


def _one(spec, truth, t, cfg, ranks):
    d1, d2 = sample_data(spec, truth, t)
    res = fit(d1, d2, ranks, cfg)
    return evaluate(res, truth).flat()


def run_benchmark(spec: SettingSpec, replicates: int, modes: Sequence[FitConfig] | None = None,
                  rank_override: Optional[Ranks] = None, threads: int = 1,
                  progress=None) -> BenchmarkTable:
    """Fit ``replicates`` fresh data sets drawn from one fixed truth under each config."""
    if replicates < 1:
        raise ValueError("need at least one replicate")
    modes = list(modes) if modes else [FitConfig()]
    truth = make_truth(spec)
    ranks = rank_override or spec.ranks
    table = BenchmarkTable(spec, ranks)

    for cfg in modes:
        label = cfg.mode
        while label in table.rows:
            label += "'"
        table.rows[label] = []
        table.failures[label] = []

        def job(t, cfg=cfg):
            t0 = time.perf_counter()
            try:
                return t, _one(spec, truth, t, cfg, ranks), None
            except Exception as exc:  # recorded, excluded from medians
                return t, None, f"replicate {t}: {type(exc).__name__}: {exc} ({time.perf_counter() - t0:.1f}s)"

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(job, range(replicates)))
        else:
            results = [job(t) for t in range(replicates)]
        for t, row, err in results:
            if err is None:
                table.rows[label].append(row)
            else:
                table.failures[label].append(err)
            if progress is not None:
                progress(label, t, row)
    return table
