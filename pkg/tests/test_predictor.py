import numpy as np
import pytest
from scipy.special import expit

from gasso.fitter import FitConfig, fit
from gasso.model import DataBlock, GasParams, Ranks
from gasso.predictor import ScoreIndex, annotate, build_score_index, retrieve, top_k_tags
from gasso.simgen import generate, preset


@pytest.fixture(scope="module")
def s2_split():
    """Setting 2 truth with 250 rows; the first 200 are used for fitting."""
    truth, d1, d2 = generate(preset(2, seed=0).replace(n=250))
    tr = slice(0, 200)
    res = fit(DataBlock(d1.X[tr], "gaussian"), DataBlock(d2.X[tr], "bernoulli"), Ranks(2, 2, 2),
              FitConfig(mode="onestep"))
    return res.params, d1.X, d2.X


def _params(rng, n=40, p1=7, p2=5, ranks=(2, 1, 1)):
    r0, r1, r2 = ranks
    g = rng.standard_normal
    return GasParams(mu1=g(p1), mu2=g(p2), U0=g((n, r0)), U1=g((n, r1)), U2=g((n, r2)),
                     V1=np.linalg.qr(g((p1, r0)))[0], V2=g((p2, r0)), A1=np.linalg.qr(g((p1, r1)))[0],
                     A2=g((p2, r2)))


def test_zero_signal_gives_intercept_probabilities(rng):
    # [DERIVED] u0 = 0 leaves logistic(mu2)
    P = _params(rng)
    info = annotate(P, P.mu1.copy(), "gaussian", return_info=True)
    assert np.allclose(info.u0, 0, atol=1e-10)
    assert np.allclose(info.probabilities, expit(P.mu2))


def test_gaussian_annotation_is_least_squares(rng):
    # [DERIVED] unit-variance GLM is OLS
    P = _params(rng)
    x = rng.normal(size=P.mu1.size) * 3
    info = annotate(P, x, "gaussian", return_info=True)
    D = np.hstack([P.V1, P.A1])
    ref = np.linalg.lstsq(D, x - P.mu1, rcond=None)[0][:2]
    assert np.allclose(info.u0, ref, atol=1e-8)


def test_probabilities_stay_inside_unit_interval(rng):
    # [TRIVIAL]
    P = _params(rng).replace(mu2=np.array([800.0, -800.0, 0.0, 1.0, 2.0]))
    p = annotate(P, np.zeros(7), "gaussian")
    assert np.all((p > 0) & (p < 1))


def test_annotation_rejects_bad_input(rng):
    # [TRIVIAL]
    P = _params(rng)
    with pytest.raises(ValueError):
        annotate(P, np.zeros(6), "gaussian")
    with pytest.raises(ValueError):
        annotate(P, np.full(7, 0.5), "bernoulli")


def test_top_k_ties_and_names():
    # [TRIVIAL]
    p = [0.2, 0.9, 0.2, 0.9, 0.1]
    assert top_k_tags(p, 3) == [2, 4, 1]
    assert top_k_tags(p, 2, names="abcde") == ["b", "d"]
    assert top_k_tags(p, 0) == []
    with pytest.raises(ValueError):
        top_k_tags(p, 6)


def test_annotation_beats_frequency_baseline(s2_split):
    # [PAPER] per-word precision of top-10 annotations versus tag frequency
    P, X1, X2 = s2_split
    wins = 0
    for seed in range(20):
        rows = np.random.default_rng(seed).choice(np.arange(200, 250), 25, replace=False)
        tags = np.zeros((rows.size, X2.shape[1]), bool)
        for k, i in enumerate(rows):
            tags[k, [t - 1 for t in top_k_tags(annotate(P, X1[i], "gaussian"), 10)]] = True
        truth = X2[rows] == 1
        used = tags.any(axis=0)
        prec = (tags & truth).sum(axis=0)[used] / tags.sum(axis=0)[used]
        base = truth.mean(axis=0)[used]
        wins += prec.mean() > base.mean()
    assert wins >= 19


def test_precision_inverts_covariance(rng):
    # [DERIVED]
    P = _params(rng)
    idx = build_score_index(P, ridge=0.0)
    C = np.cov(np.hstack([P.U0, P.U2]), rowvar=False)
    assert np.allclose(idx.precision @ C, np.eye(3), atol=1e-10)


def test_large_ridge_approaches_euclidean(rng):
    # [DERIVED]
    P = _params(rng)
    idx = build_score_index(P, ridge=1e8)
    assert np.allclose(idx.precision * 1e8, np.eye(3), atol=1e-6)


def test_index_errors_and_immutability(rng):
    # [TRIVIAL]
    P = _params(rng, n=3)
    with pytest.raises(ValueError):
        build_score_index(P)
    idx = build_score_index(_params(rng))
    with pytest.raises(ValueError):
        idx.scores[0, 0] = 1.0
    with pytest.raises(ValueError):
        ScoreIndex(np.zeros((3, 2)), -np.eye(2), None)
    P = _params(rng)
    with pytest.raises(np.linalg.LinAlgError):
        build_score_index(P.replace(U0=np.ones_like(P.U0)), ridge=0.0)


def test_single_row_and_identical_rows():
    # [TRIVIAL]
    one = ScoreIndex(np.array([[1.0, 2.0]]), np.eye(2), ["only"])
    assert one.distances(np.array([1.0, 2.0]))[0] == 0.0
    same = ScoreIndex(np.ones((4, 2)), np.eye(2), None)
    d = same.distances(np.zeros(2))
    assert np.all(d == d[0])


def test_distance_translation_invariant(rng):
    # [DERIVED] Mahalanobis distance depends on differences only
    S = rng.normal(size=(10, 3))
    M = rng.normal(size=(3, 3))
    Pm = M @ M.T + np.eye(3)
    s, c = rng.normal(size=3), rng.normal(size=3)
    assert np.allclose(ScoreIndex(S, Pm, None).distances(s), ScoreIndex(S + c, Pm, None).distances(s + c))
    assert ScoreIndex(S, Pm, None).distances(S[4])[4] == 0.0


def test_retrieval_finds_the_source_row():
    # [DERIVED] a thresholded fitted row retrieves itself within the top 5%.
    # Such a query is separable, so the penalty is matched to the unpenalised fit.
    hits = total = 0
    for seed in range(4):
        _, d1, d2 = generate(preset(2, seed=seed))
        P = fit(d1, d2, Ranks(2, 2, 2), FitConfig(mode="onestep")).params
        idx = build_score_index(P)
        T2 = P.mu2 + P.U0 @ P.V2.T + P.U2 @ P.A2.T
        for i in np.random.default_rng(seed).choice(200, 20, replace=False):
            res = retrieve(P, idx, (T2[i] > 0).astype(float), ridge=1e-4)
            hits += i in res.order[:10]
            total += 1
    assert hits >= 0.9 * total


def test_retrieve_validates_query(s2_split):
    # [TRIVIAL]
    P, _, _ = s2_split
    idx = build_score_index(P)
    with pytest.raises(ValueError):
        retrieve(P, idx, np.full(P.mu2.size, 0.5))
    with pytest.raises(ValueError):
        retrieve(P, idx, np.zeros(3))
