import numpy as np
import pytest

from gasso.fitter import FitConfig
from gasso.model import GasParams, Ranks, identifiability_report, natural_parameters
from gasso.numkit import principal_angle
from gasso.simgen import (
    evaluate,
    generate,
    high_dim,
    make_truth,
    median_mad,
    preset,
    run_benchmark,
    sparsify,
    truncate_loadings,
)

from conftest import small_spec


@pytest.mark.parametrize("setting", [1, 2, 3, 4])
def test_truth_is_identifiable(setting):
    # [DERIVED]
    truth = make_truth(preset(setting, seed=2))
    rep = identifiability_report(truth, tol=1e-8)
    assert rep.ok, str(rep)
    assert truth.ranks == Ranks(2, 2, 2)


@pytest.mark.parametrize("setting", [1, 2, 3, 4])
def test_truth_singular_values_and_shapes(setting):
    # [PAPER] stated singular values
    spec = preset(setting)
    t = make_truth(spec)
    assert t.U0.shape == (200, 2) and t.V1.shape == (120, 2) and t.A2.shape == (120, 2)
    assert np.allclose(np.linalg.norm(t.U0, axis=0), spec.joint_singvals)
    assert np.allclose(np.linalg.norm(t.U2, axis=0), spec.ind2_singvals)


def test_poisson_intercepts_in_range():
    # [PAPER] stated intercept range
    t = make_truth(preset(3, seed=5))
    assert t.mu2.min() >= 2.0 and t.mu2.max() <= 3.0
    assert np.all(np.exp(natural_parameters(t)[1]) > 0)


def test_generation_is_deterministic():
    # [TRIVIAL]
    a = generate(preset(2, seed=4), replicate=3)
    b = generate(preset(2, seed=4), replicate=3)
    assert np.array_equal(a[1].X, b[1].X) and np.array_equal(a[2].X, b[2].X)
    assert np.array_equal(a[0].U0, b[0].U0)
    c = generate(preset(2, seed=4), replicate=4)
    assert np.array_equal(a[0].V1, c[0].V1)
    assert not np.array_equal(a[2].X, c[2].X)


def test_sampled_supports():
    # [TRIVIAL]
    _, d1, d2 = generate(preset(4, seed=1))
    assert set(np.unique(d1.X)) <= {0.0, 1.0}
    assert np.all(d2.X >= 0) and np.all(d2.X == np.round(d2.X))


def test_truncation_zero_fraction():
    # [DERIVED]
    rng = np.random.default_rng(0)
    V = np.linalg.qr(rng.uniform(-0.5, 0.5, (240, 2)))[0]
    W = truncate_loadings(V, 0.4, orthonormalize=False)
    assert np.mean(W == 0) >= 0.4
    Q = truncate_loadings(V, 0.4)
    assert np.allclose(Q.T @ Q, np.eye(2), atol=1e-10)
    # the first column keeps its zeros through the orthonormalisation
    assert np.array_equal(Q[:, 0] == 0, W[:, 0] == 0)


def test_sparsify_zero_is_dense():
    # [TRIVIAL]
    base = preset(1, seed=3)
    assert np.array_equal(make_truth(sparsify(base, 0.0)).V1, make_truth(base).V1)
    sp = make_truth(sparsify(base, 0.4))
    V0 = sp.V0
    assert np.allclose(V0.T @ V0, np.eye(2), atol=1e-10)
    assert np.mean(V0 == 0) > 0.1
    with pytest.raises(ValueError):
        sparsify(base, 1.0)


def test_high_dim_scaling():
    # [DERIVED] singular values scale with p / 120
    s = high_dim(preset(1), 240)
    assert (s.p1, s.p2) == (240, 240)
    assert s.joint_singvals == (360.0, 280.0)


def test_spec_validation():
    # [TRIVIAL]
    with pytest.raises(ValueError):
        preset(1).replace(joint_singvals=(1.0, 2.0))
    with pytest.raises(ValueError):
        preset(7)


def test_evaluate_truth_against_itself():
    # [TRIVIAL]
    t = make_truth(preset(1))
    m = evaluate(t, t)
    assert all(v == 0 for v in m.norm_theta + m.norm_mu + m.norm_jnt + m.norm_ind)
    assert m.angle_V0 == pytest.approx(0, abs=1e-6)


def test_angles_ignore_rotation_and_sign(rng):
    # [DERIVED] same column spaces
    t = make_truth(preset(1))
    Q = np.linalg.qr(rng.normal(size=(2, 2)))[0]
    D = np.diag([1.0, -1.0])
    other = t.replace(V1=t.V1 @ Q, V2=t.V2 @ Q, A1=t.A1 @ D, A2=-t.A2)
    m = evaluate(other, t)
    assert m.angle_V0 == pytest.approx(0, abs=1e-6)
    assert m.angle_A1 == pytest.approx(0, abs=1e-6)
    assert m.angle_A2 == pytest.approx(0, abs=1e-6)


def test_losses_match_direct_computation(rng):
    # [DERIVED] Frobenius norms computed directly
    t = make_truth(small_spec(("gaussian", "gaussian")))
    e = t.replace(mu1=t.mu1 + 0.1, U1=t.U1 * 1.1)
    m = evaluate(e, t)
    T = t.mu1 + t.U0 @ t.V1.T + t.U1 @ t.A1.T
    E = e.mu1 + e.U0 @ e.V1.T + e.U1 @ e.A1.T
    assert m.norm_theta[0] == pytest.approx(np.sqrt(np.sum((T - E) ** 2)))
    assert m.norm_mu[0] == pytest.approx(0.1 * np.sqrt(t.mu1.size))
    assert m.norm_ind[0] == pytest.approx(0.1 * np.linalg.norm(t.U1 @ t.A1.T))
    assert m.norm_theta[1] == 0.0
    assert m.angle_A1 == pytest.approx(principal_angle(t.A1, e.A1), abs=1e-12)


def test_zero_rank_angle_is_nan():
    # [TRIVIAL]
    t = make_truth(small_spec(("gaussian", "gaussian"), ranks=(1, 0, 1)))
    assert np.isnan(evaluate(t, t).angle_A1)


def test_median_mad():
    # [DERIVED] hand-computed
    assert median_mad([1, 2, 3, 4, 100]) == (3.0, 1.0)
    assert median_mad([1.0, np.nan, 3.0]) == (2.0, 1.0)
    assert all(np.isnan(median_mad([np.nan])))


def test_benchmark_records_failures_and_summaries():
    # [TRIVIAL]
    spec = small_spec(("gaussian", "bernoulli"), seed=1)
    tab = run_benchmark(spec, 3, [FitConfig(mode="onestep"), FitConfig(mode="full")])
    assert set(tab.rows) == {"onestep", "full"}
    assert len(tab.rows["onestep"]) == 3
    s = tab.summary("full")
    assert s["norm_theta1"][0] == pytest.approx(np.median([r["norm_theta1"] for r in tab.rows["full"]]))
    assert "Norm_Theta" in tab.pretty() and tab.to_csv().startswith("mode,metric")
    bad = run_benchmark(spec, 2, rank_override=Ranks(60, 0, 0))
    assert len(bad.failures["onestep"]) == 2 and not bad.rows["onestep"]


def test_benchmark_threads_match_serial():
    # [TRIVIAL]
    spec = small_spec(("gaussian", "poisson"), seed=2)
    a = run_benchmark(spec, 3, threads=1)
    b = run_benchmark(spec, 3, threads=3)
    for x, y in zip(a.rows["onestep"], b.rows["onestep"]):
        assert {k: v for k, v in x.items() if k != "time"} == {k: v for k, v in y.items() if k != "time"}
