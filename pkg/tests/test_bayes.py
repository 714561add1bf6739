import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from sqtomo.bayes import (
    PriorSpec, QuadratureError, RiskQuadrature, bayes_risk, bayes_risk_mc, beta_gauss_rule,
    bound_at_center, minimize_risk, point_mass_limit, prior_density, sample_prior,
)
from sqtomo.bounds import nh_bound

CENTER = (0.0, 0.0, 0.5)
GRID = np.round(np.linspace(0, 0.95, 96), 4)


def test_spec_validation():
    for bad in [dict(center=(0, 0, 0)), dict(center=(0, 0, 1)), dict(kappa=-1), dict(alpha=0),
                dict(measure="lebesgue")]:
        kw = dict(center=CENTER, kappa=1.0, alpha=1.0) | bad
        with pytest.raises(ValueError):
            PriorSpec(**kw)


def test_symmetric_radial_law():
    spec = PriorSpec(CENTER, 2.0, 4.0)
    assert spec.beta == spec.alpha
    r, w = beta_gauss_rule(spec.alpha, spec.beta, 20)
    assert (w * r).sum() == pytest.approx(0.5, abs=1e-14)


def test_uniform_angular_limit():
    spec = PriorSpec(CENTER, 0.0, 3.0)
    lam = np.linspace(0, np.pi, 7)
    dens = prior_density(spec, 0.5, lam) / (prior_density(spec, 0.5, 0.0))
    np.testing.assert_allclose(dens, 1.0)
    # angular factor is 1/(4 pi): divide out the radial part
    from scipy.stats import beta
    radial = beta.pdf(0.5, 3.0, 3.0) / 0.25
    assert prior_density(spec, 0.5, 1.0) == pytest.approx(radial / (4 * np.pi))


@pytest.mark.parametrize("kappa, alpha", [(0.0, 3.0), (3.0, 2.0), (25.0, 8.0)])
def test_volume_normalisation(kappa, alpha):
    spec = PriorSpec((0.1, 0.2, 0.4), kappa, alpha)
    val, _ = integrate.dblquad(
        lambda lam, r: prior_density(spec, r, lam) * r**2 * np.sin(lam),
        0, 1, 0, np.pi, epsabs=1e-12, epsrel=1e-12,
    )
    assert abs(2 * np.pi * val - 1) < 1e-8


@pytest.mark.parametrize("kappa", [0.0, 2.0, 40.0])
def test_flat_normalisation(kappa):
    spec = PriorSpec(CENTER, kappa, 3.0, measure="flat")
    val, _ = integrate.dblquad(lambda lam, r: prior_density(spec, r, lam), 0, 1, 0, np.pi,
                               epsabs=1e-12, epsrel=1e-12)
    assert abs(2 * np.pi * val - 1) < 1e-8


@pytest.mark.parametrize("kappa", [0.5, 5.0, 200.0])
def test_vmf_matches_textbook_form(kappa):
    spec = PriorSpec(CENTER, kappa, 3.0)
    lam = np.array([0.0, 0.3, 2.0])
    radial = prior_density(PriorSpec(CENTER, 0.0, 3.0), 0.5, lam) * 4 * np.pi
    ang = prior_density(spec, 0.5, lam) / radial
    with np.errstate(over="ignore"):
        ref = kappa * np.exp(kappa * np.cos(lam)) / (4 * np.pi * np.sinh(kappa))
    if np.all(np.isfinite(ref)):
        np.testing.assert_allclose(ang, ref, rtol=1e-12)


def test_density_domain_checks():
    spec = PriorSpec(CENTER, 1.0, 2.0)
    for args in [(1.1, 0.0, 0.0), (0.5, -0.1, 0.0), (0.5, 0.0, 2 * np.pi)]:
        with pytest.raises(ValueError):
            prior_density(spec, *args)


@given(st.floats(0.3, 50), st.floats(0.3, 50))
def test_beta_rule_moments(a, b):
    r, w = beta_gauss_rule(a, b, 32)
    assert abs(w.sum() - 1) < 1e-12
    assert abs((w * r).sum() - a / (a + b)) < 1e-11
    assert abs((w * r**2).sum() - a * (a + 1) / ((a + b) * (a + b + 1))) < 1e-11


def test_beta_rule_huge_shapes():
    r, w = beta_gauss_rule(1e6, 1e6, 64)
    assert np.all(np.isfinite(r)) and abs((w * r).sum() - 0.5) < 1e-12


def test_point_mass_values():
    assert point_mass_limit(0.5, 0.5) == pytest.approx(nh_bound(0.5), abs=1e-12)
    assert point_mass_limit(0.0, 0.5) == pytest.approx(8.75, abs=1e-12)
    sharp = PriorSpec(CENTER, 1e6, 1e6)
    assert bayes_risk(sharp, 0.5) == pytest.approx(8.2141, abs=2e-4)
    assert bayes_risk(sharp, 0.0) == pytest.approx(8.75, abs=2e-4)
    assert bound_at_center(sharp) == nh_bound(0.5)


@pytest.mark.parametrize("alpha", [1.0, 3.0])
def test_uniform_direction_sic_risk(alpha):
    spec = PriorSpec(CENTER, 0.0, alpha)
    er2 = alpha * (alpha + 1) / ((2 * alpha) * (2 * alpha + 1))
    assert bayes_risk(spec, 0.0) == pytest.approx(9 - er2, abs=1e-10)
    mc, se = bayes_risk_mc(spec, 0.0, 200_000, seed=1)
    assert abs(mc - (9 - er2)) < 3 * se + 1e-12


@pytest.mark.parametrize("center, kappa, alpha, r_p", [
    ((0.0, 0.0, 0.5), 3.0, 3.0, 0.3),
    ((0.3, -0.2, 0.5), 20.0, 5.0, 0.5),
    ((-0.6, 0.0, 0.0), 200.0, 50.0, 0.55),
])
def test_quadrature_matches_monte_carlo(center, kappa, alpha, r_p):
    spec = PriorSpec(center, kappa, alpha)
    mc, se = bayes_risk_mc(spec, r_p, 200_000, seed=7)
    assert abs(bayes_risk(spec, r_p) - mc) < 3 * se


def test_rotated_center_same_risk_and_argmin():
    a = PriorSpec((0.0, 0.0, 0.5), 10.0, 10.0)
    b = PriorSpec((0.3, 0.0, -0.4), 10.0, 10.0)
    assert bayes_risk(a, 0.4) == pytest.approx(bayes_risk(b, 0.4), rel=1e-12)
    mc, se = bayes_risk_mc(b, 0.4, 200_000, seed=3)
    assert abs(mc - bayes_risk(a, 0.4)) < 3 * se
    assert minimize_risk(a, GRID).argmin_rp == pytest.approx(minimize_risk(b, GRID).argmin_rp)


def test_risk_continuous():
    spec = PriorSpec(CENTER, 5.0, 5.0)
    h = 1e-3
    for rp in (0.1, 0.4, 0.8):
        slope = abs(bayes_risk(spec, rp + 0.01) - bayes_risk(spec, rp - 0.01)) / 0.02
        assert abs(bayes_risk(spec, rp + h) - bayes_risk(spec, rp)) <= 10 * h * max(slope, 1e-3)


def test_array_input():
    spec = PriorSpec(CENTER, 5.0, 5.0)
    out = bayes_risk(spec, [0.1, 0.2])
    assert out.shape == (2,)
    assert out[1] == pytest.approx(bayes_risk(spec, 0.2))


def test_non_convergence_raises():
    with pytest.raises(QuadratureError):
        bayes_risk(PriorSpec(CENTER, 1.0, 1.0, "flat"), 0.5, RiskQuadrature(3, 4, rtol=1e-14))


def test_minimize_validation():
    spec = PriorSpec(CENTER, 5.0, 5.0)
    with pytest.raises(ValueError):
        minimize_risk(spec, [])
    with pytest.raises(ValueError):
        minimize_risk(spec, [0.2, 1.0])


def test_uniform_prior_recovers_sic():
    assert minimize_risk(PriorSpec(CENTER, 0.0, 1.0), GRID).argmin_rp < 0.02


def test_sharp_prior_tends_to_center():
    curve = minimize_risk(PriorSpec(CENTER, 1e4, 1e4), GRID)
    assert abs(curve.argmin_rp - 0.5) < 0.02
    assert curve.min_risk >= nh_bound(0.5) - 1e-6


def test_broader_direction_costs_more():
    sharp, broad = PriorSpec(CENTER, 30.0, 10.0), PriorSpec(CENTER, 3.0, 10.0)
    cs, cb = minimize_risk(sharp, GRID), minimize_risk(broad, GRID)
    assert cb.min_risk >= cs.min_risk
    ms, ss = bayes_risk_mc(sharp, cs.argmin_rp, 200_000, seed=1)
    mb, sb = bayes_risk_mc(broad, cb.argmin_rp, 200_000, seed=2)
    assert mb - ms > 3 * np.hypot(ss, sb)


def test_schedule_monotone():
    schedule = [(1, 1), (3, 3), (10, 10), (30, 30), (100, 100), (1e3, 1e3), (1e4, 1e4), (1e6, 1e6)]
    risks = [minimize_risk(PriorSpec(CENTER, k, a), GRID).min_risk for k, a in schedule]
    assert np.all(np.diff(risks) < 0)
    assert risks[-1] == pytest.approx(nh_bound(0.5), abs=1e-5)


def test_flat_measure_sharp_limit():
    curve = minimize_risk(PriorSpec(CENTER, 1e3, 1e3, "flat"), GRID)
    assert abs(curve.argmin_rp - 0.5) < 0.02


def test_sampling_volume_only():
    with pytest.raises(ValueError):
        sample_prior(PriorSpec(CENTER, 1.0, 1.0, "flat"), 10, np.random.default_rng(0))
    pts = sample_prior(PriorSpec((0.0, 0.5, 0.0), 50.0, 50.0), 20_000, np.random.default_rng(0))
    assert np.linalg.norm(pts, axis=1).max() <= 1
    assert pts.mean(axis=0)[1] == pytest.approx(0.5 * (1 / np.tanh(50) - 1 / 50), abs=0.01)
