import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import expit

from gasso import expfam
from gasso.expfam import DomainError, Family

finite = st.floats(-25, 25, allow_nan=False)


def test_parse_aliases():
    # [TRIVIAL]
    assert Family.parse("Normal") is Family.GAUSSIAN
    assert Family.parse("binary") is Family.BERNOULLI
    assert Family.parse("count") is Family.POISSON
    with pytest.raises(ValueError):
        Family.parse("gamma")


@given(finite)
def test_mean_is_derivative_of_cumulant(t):
    # [DERIVED] central finite difference of b
    h = 1e-5
    for fam in Family:
        fd = (expfam.cumulant(fam, t + h) - expfam.cumulant(fam, t - h)) / (2 * h)
        assert fd == pytest.approx(expfam.mean_from_natural(fam, t), rel=1e-5, abs=1e-6)


@given(finite)
def test_variance_is_derivative_of_mean(t):
    # [DERIVED] finite differences
    h = 1e-5
    for fam in Family:
        fd = (expfam.mean_from_natural(fam, t + h) - expfam.mean_from_natural(fam, t - h)) / (2 * h)
        assert fd == pytest.approx(expfam.variance_from_natural(fam, t), rel=1e-4, abs=1e-8)


@given(st.floats(-10, 10))
def test_link_inverts_mean(t):
    # [DERIVED]
    for fam in Family:
        assert expfam.link(fam, expfam.mean_from_natural(fam, t)) == pytest.approx(t, abs=1e-8)


def test_log_density_matches_scipy():
    # [DERIVED] scipy.stats reference densities
    rng = np.random.default_rng(0)
    t = rng.normal(size=50)
    x = rng.normal(size=50)
    assert np.allclose(expfam.log_density(Family.GAUSSIAN, x, t), stats.norm.logpdf(x, loc=t))
    xb = rng.integers(0, 2, 50).astype(float)
    assert np.allclose(expfam.log_density(Family.BERNOULLI, xb, t), stats.bernoulli.logpmf(xb, expit(t)))
    xp = rng.poisson(3, 50).astype(float)
    assert np.allclose(expfam.log_density(Family.POISSON, xp, t), stats.poisson.logpmf(xp, np.exp(t)))


def test_bernoulli_log_density_nonpositive_for_large_theta():
    # [DERIVED] probabilities never exceed 1
    t = np.array([-200.0, -40.0, 40.0, 200.0])
    ll = expfam.log_density(Family.BERNOULLI, np.array([1.0, 1.0, 0.0, 1.0]), t)
    assert np.all(ll <= 0)
    assert ll[-1] == pytest.approx(0.0, abs=1e-12)


def test_mean_clamped_but_finite():
    # [TRIVIAL]
    assert np.isfinite(expfam.mean_from_natural(Family.POISSON, 1e3))
    assert expfam.mean_from_natural(Family.POISSON, 1e3) == pytest.approx(np.exp(expfam.THETA_CLIP))


def test_per_column_dispatch():
    # [TRIVIAL]
    fam = np.array([0, 1, 2], dtype=np.int8)
    t = np.zeros((4, 3))
    assert np.allclose(expfam.mean_from_natural(fam, t), [[0, 0.5, 1]] * 4)


def test_domain_errors():
    # [TRIVIAL]
    with pytest.raises(DomainError):
        expfam.link(Family.BERNOULLI, 1.0)
    with pytest.raises(DomainError):
        expfam.link(Family.POISSON, 0.0)
    with pytest.raises(DomainError):
        expfam.cumulant(Family.GAUSSIAN, np.inf)
    with pytest.raises(DomainError):
        expfam.log_density(Family.POISSON, 2.5, 0.0)


def test_support():
    # [TRIVIAL]
    assert expfam.in_support(Family.BERNOULLI, [0, 1, 2]).tolist() == [True, True, False]
    assert expfam.in_support(Family.POISSON, [0, 3, 3.5, -1]).tolist() == [True, True, False, False]


def test_pearson_residual_floor_flag():
    # [TRIVIAL]
    r, flag = expfam.pearson_residual(Family.BERNOULLI, np.array([1.0, 1.0]), np.array([0.0, -60.0]),
                                      return_flag=True)
    assert r[0] == pytest.approx(1.0)
    assert flag.tolist() == [False, True]
    assert np.isfinite(r).all()
