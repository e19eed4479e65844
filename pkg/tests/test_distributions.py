import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from dsse import distributions as dist
from dsse import presets
from dsse.distributions import GMM, Beta4, Gaussian, Laplacian, PolynomialLogPdf

ALL_MODELS = {
    "gaussian": Gaussian(0.4, 0.3),
    "laplacian": Laplacian(-1.0, 0.7),
    "beta": presets.BETA,
    "beta_gmm": presets.BETA_GMM,
    "poly": presets.POLY,
    "poly_gmm": presets.POLY_GMM,
}


def _interior_points(model, rng, count=50):
    lo, hi = getattr(model, "support", (-np.inf, np.inf))
    if not math.isfinite(lo):
        m, s = model.mean(), math.sqrt(model.var())
        return rng.uniform(m - 3 * s, m + 3 * s, count)
    w = hi - lo
    return rng.uniform(lo + 0.02 * w, hi - 0.02 * w, count)


def test_logpdf_trivial_values():
    assert Beta4(1.0, 1.0, 0.0, 1.0).logpdf(0.5) == pytest.approx(0.0, abs=1e-14)
    assert Gaussian(0.0, 1.0).logpdf(0.0) == pytest.approx(-0.9189385332046727, abs=1e-15)


def test_beta4_against_log_gamma_evaluation():
    a, b, lo, hi = 1.6339, 20.9022, -0.1, 8.268
    x = 0.5
    z = (x - lo) / (hi - lo)
    ref = (
        special.gammaln(a + b) - special.gammaln(a) - special.gammaln(b)
        + (a - 1) * math.log(z) + (b - 1) * math.log1p(-z) - math.log(hi - lo)
    )
    assert presets.BETA.logpdf(x) == pytest.approx(ref, rel=1e-12)


def test_logpdf_outside_support_is_minus_inf():
    assert presets.BETA.logpdf(-0.2) == -np.inf
    assert presets.POLY.logpdf(8.0) == -np.inf


@pytest.mark.parametrize("name", sorted(ALL_MODELS))
def test_derivatives_match_finite_differences(name):
    model = ALL_MODELS[name]
    rng = np.random.default_rng(7)
    xs = _interior_points(model, rng)
    if name == "laplacian":
        xs = xs[np.abs(xs - model.mu) > 1e-3]
    h = 1e-5
    fd1 = (model.logpdf(xs + h) - model.logpdf(xs - h)) / (2 * h)
    fd2 = (model.dlogpdf(xs + h) - model.dlogpdf(xs - h)) / (2 * h)
    g, hh = model.dlogpdf(xs), model.d2logpdf(xs)
    np.testing.assert_allclose(g, fd1, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(hh, fd2, rtol=1e-4, atol=1e-6)


def test_gaussian_gradient_closed_form():
    assert Gaussian(0.0, 1.0).dlogpdf(0.3) == pytest.approx(-0.3)


def test_single_component_mixture_matches_gaussian():
    g = Gaussian(2.0, 0.5)
    m = GMM((1.0,), (2.0,), (0.5,))
    x = np.linspace(0.5, 3.5, 13)
    np.testing.assert_allclose(m.logpdf(x), g.logpdf(x), rtol=1e-13)
    np.testing.assert_allclose(m.dlogpdf(x), g.dlogpdf(x), rtol=1e-12)
    np.testing.assert_allclose(m.d2logpdf(x), g.d2logpdf(x), rtol=1e-12)


def test_derivative_on_boundary_is_domain_error():
    with pytest.raises(dist.DomainError):
        presets.BETA.dlogpdf(-0.1)
    with pytest.raises(dist.DomainError):
        presets.POLY.d2logpdf(presets.POLY.xmax)


@pytest.mark.parametrize("name", ["beta", "beta_gmm", "poly_gmm"])
def test_density_integrates_to_one(name):
    model = ALL_MODELS[name]
    lo, hi = getattr(model, "support", (model.mean() - 12 * math.sqrt(model.var()), model.mean() + 12 * math.sqrt(model.var())))
    total, _ = integrate.quad(lambda t: math.exp(model.logpdf(t)), lo, hi, limit=200)
    assert total == pytest.approx(1.0, abs=1e-7)


def test_polynomial_normalised_integrates_to_one():
    p = presets.POLY.normalized()
    total, _ = integrate.quad(lambda t: math.exp(p.logpdf(t)), p.xmin, p.xmax)
    assert total == pytest.approx(1.0, abs=1e-10)


def test_beta_sample_mean():
    rng = np.random.default_rng(1)
    x = presets.BETA.sample(rng, 100_000)
    b = presets.BETA
    analytic = b.xmin + (b.xmax - b.xmin) * b.alpha / (b.alpha + b.beta)
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - analytic) < 3 * se


def test_beta_gmm_sample_mean():
    rng = np.random.default_rng(2)
    x = presets.BETA_GMM.sample(rng, 100_000)
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - 0.505) < 3 * se


def test_gaussian_sample_ks():
    rng = np.random.default_rng(3)
    x = Gaussian(0.0, 1.0).sample(rng, 5000)
    d = stats.kstest(x, "norm").statistic
    assert d < 1.63 / math.sqrt(x.size)


def test_polynomial_rejection_sampler_matches_density():
    rng = np.random.default_rng(4)
    p = presets.POLY.normalized()
    x = p.sample(rng, 20_000)
    assert x.min() >= p.xmin and x.max() <= p.xmax

    def cdf(t):
        return np.array([integrate.quad(lambda s: math.exp(p.logpdf(s)), p.xmin, ti)[0] for ti in np.atleast_1d(t)])

    d = stats.kstest(x, cdf).statistic
    assert d < 1.63 / math.sqrt(x.size)


def test_sampling_is_seeded():
    a = presets.BETA_GMM.sample(np.random.default_rng(9), 10)
    b = presets.BETA_GMM.sample(np.random.default_rng(9), 10)
    np.testing.assert_array_equal(a, b)


def test_shift_constant_trivial_cases():
    assert dist.shift_constant(Beta4(1.0, 1.0, 0.0, 1.0)) == pytest.approx(0.0, abs=1e-12)
    assert dist.shift_constant(Gaussian(3.7, 1.0 / math.sqrt(2 * math.pi))) == pytest.approx(0.0, abs=1e-14)


def test_beta_shift_constant_from_grid_search():
    b = presets.BETA
    mode = b.xmin + (b.xmax - b.xmin) * (b.alpha - 1) / (b.alpha + b.beta - 2)
    assert mode == pytest.approx(0.158, abs=5e-4)
    grid = np.linspace(b.xmin + 1e-9, b.xmax - 1e-9, 2_000_001)
    assert dist.shift_constant(b) == pytest.approx(float(np.max(b.logpdf(grid))), abs=1e-9)
    assert dist.mode(b) == pytest.approx(mode, abs=1e-9)


def test_residual_non_negative_with_shift():
    rng = np.random.default_rng(5)
    for name, model in ALL_MODELS.items():
        xi = dist.shift_constant(model)
        xs = _interior_points(model, rng, 200)
        assert np.all(xi - model.logpdf(xs) >= -1e-12), name


def test_unbounded_density_rejected():
    with pytest.raises(dist.DistributionError):
        dist.shift_constant(Beta4(0.5, 2.0, 0.0, 1.0))


def test_ge_dominant_component():
    g = dist.ge_reduce(presets.POLY_GMM)
    assert (g.mu, g.sigma) == (6.0, 0.7)


def test_ge_all_components_is_ga():
    g = dist.ge_reduce(presets.BETA_GMM, [0, 1, 2])
    assert g.mu == pytest.approx(0.505, abs=5e-4)
    assert g.sigma == pytest.approx(0.447, rel=5e-3)


def test_ge_single_component_unchanged():
    g = dist.ge_reduce(GMM((1.0,), (2.0,), (0.5,)), [0])
    assert (g.mu, g.sigma) == (2.0, 0.5)


def test_ge_rejects_bad_selection():
    with pytest.raises(dist.DistributionError):
        dist.ge_reduce(presets.POLY_GMM, [])
    with pytest.raises(dist.DistributionError):
        dist.ge_reduce(presets.POLY_GMM, [2])


def test_ga_fit_values():
    g = dist.ga_fit(presets.POLY_GMM)
    assert g.mu == pytest.approx(4.62, abs=1e-12)
    assert g.sigma == pytest.approx(1.66, rel=0.01)
    g = dist.ga_fit(presets.BETA_GMM)
    assert (g.mu, g.sigma) == (pytest.approx(0.505, rel=5e-3), pytest.approx(0.447, rel=5e-3))
    same = Gaussian(1.0, 2.0)
    assert dist.ga_fit(same) == same


def test_ga_of_beta_matches_quadrature_moments():
    b = presets.BETA
    m1, _ = integrate.quad(lambda t: t * math.exp(b.logpdf(t)), b.xmin, b.xmax)
    m2, _ = integrate.quad(lambda t: (t - m1) ** 2 * math.exp(b.logpdf(t)), b.xmin, b.xmax)
    g = dist.ga_fit(b)
    assert g.mu == pytest.approx(m1, rel=1e-8)
    assert g.sigma == pytest.approx(math.sqrt(m2), rel=1e-8)


@pytest.mark.parametrize("name", sorted(ALL_MODELS))
def test_json_round_trip(name):
    model = ALL_MODELS[name]
    assert dist.from_dict(dist.to_dict(model)) == model


def test_unknown_model_type():
    with pytest.raises(dist.UnsupportedModelError):
        dist.from_dict({"type": "weibull"})


def test_invalid_parameters():
    with pytest.raises(dist.DistributionError):
        Gaussian(0.0, 0.0)
    with pytest.raises(dist.DistributionError):
        GMM((0.5, 0.4), (0.0, 1.0), (1.0, 1.0))
    with pytest.raises(dist.DistributionError):
        PolynomialLogPdf((0.0, 1.0), 2.0, 1.0)
