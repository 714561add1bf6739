import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqtomo.adaptive import (
    QuadratureError, QuadratureSpec, TwoStepPlan, checked_scan, combined_mse, fit_b_coefficient,
    optimal_n_sic, run_two_step_gaussian, run_two_step_mc, sic_lab_covariance,
)
from sqtomo.bounds import nh_bound, sic_mse
from sqtomo.povm import StPovmParams, build_sic_povm, build_estimator, probabilities_for_state

THETA = np.array([0.0, 0.0, 0.5])
B_GRID = [10**4, 10**5, 10**6, 10**7]


def test_plan_validation():
    with pytest.raises(ValueError):
        TwoStepPlan(100, 0)
    with pytest.raises(ValueError):
        TwoStepPlan(100, 100)
    with pytest.raises(ValueError):
        TwoStepPlan(100, 10, weight=1.5)
    with pytest.raises(ValueError):
        TwoStepPlan(100, 10, weight="whatever")
    assert TwoStepPlan(100, 10).n_st == 90


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(rtol=0)
    with pytest.raises(ValueError):
        QuadratureSpec(scheme="simpson")


def test_sic_covariance_oracle():
    # covariance of the linear estimator from outcome probabilities, computed directly
    theta = np.array([0.1, -0.3, 0.4])
    params = StPovmParams(0.0, 0.0, (0, 0, 1))
    p = probabilities_for_state(build_sic_povm((0, 0, 1)), theta)
    E = build_estimator(params).lab_matrix
    cov = (E * p) @ E.T - np.outer(theta, theta)
    np.testing.assert_allclose(sic_lab_covariance(theta), cov, atol=1e-13)
    assert np.trace(cov) == pytest.approx(sic_mse(np.linalg.norm(theta)))


@given(st.floats(1e-9, 10), st.floats(1e-9, 10))
def test_optimal_weight_beats_both_stages(m1, m2):
    w = m2 / (m1 + m2)
    c = combined_mse(w, m1, m2)
    assert c <= min(m1, m2) * (1 + 1e-12)
    assert c == pytest.approx(m1 * m2 / (m1 + m2), rel=1e-12)


def test_pure_sic_degenerate_plan():
    n = 2000
    res = run_two_step_mc(THETA, TwoStepPlan(n, n - 1, weight=1.0), 20_000, seed=3)
    assert abs(res.mean_scaled_mse * (n - 1) / n - 8.75) < 3 * res.std_err


def test_mc_at_reference_allocation():
    res = run_two_step_mc(THETA, TwoStepPlan(10**4, 673), 10**4, seed=1)
    gauss = run_two_step_gaussian(THETA, TwoStepPlan(10**4, 673))
    assert res.mean_scaled_mse < 8.75 - 3 * res.std_err
    assert abs(res.mean_scaled_mse - gauss.mean_scaled_mse) < 3 * res.std_err
    assert abs(res.mean_scaled_mse / gauss.mean_scaled_mse - 1) < 0.02
    assert res.mean_scaled_mse >= nh_bound(0.5) - 3 * res.std_err


def test_no_gain_for_maximally_mixed():
    res = run_two_step_mc([0, 0, 0], TwoStepPlan(10**4, 673), 10**4, seed=2)
    assert res.mean_scaled_mse >= 9 - 3 * res.std_err


def test_stages_uncorrelated():
    _, t1, t2 = run_two_step_mc(THETA, TwoStepPlan(2000, 200), 20_000, seed=5, return_stages=True)
    for j in range(3):
        prod = (t1[:, j] - THETA[j]) * (t2[:, j] - THETA[j])
        assert abs(prod.mean()) < 4 * prod.std(ddof=1) / np.sqrt(len(prod))


def test_mc_deterministic():
    a = run_two_step_mc(THETA, TwoStepPlan(1000, 100), 500, seed=9)
    b = run_two_step_mc(THETA, TwoStepPlan(1000, 100), 500, seed=9)
    assert a == b


def test_mc_rejects_pure_state():
    with pytest.raises(ValueError):
        run_two_step_mc([0, 0, 1], TwoStepPlan(1000, 100), 10, seed=0)


def test_gaussian_warns_small_stage_one():
    with pytest.warns(UserWarning):
        try:
            run_two_step_gaussian(THETA, TwoStepPlan(10**4, 50))
        except QuadratureError:
            pass


def test_gaussian_reports_non_convergence():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(QuadratureError):
            run_two_step_gaussian(THETA, TwoStepPlan(10**4, 3))


def test_checked_scan_flags_small_stage_one():
    vals, change, ok = checked_scan(THETA, 10**4, [3, 673, 5000])
    assert list(ok) == [False, True, True]
    assert np.all(change[ok] <= 1e-4 * vals[ok])


def test_quasi_monte_carlo_scheme_agrees():
    plan = TwoStepPlan(10**4, 673)
    ref = run_two_step_gaussian(THETA, plan).mean_scaled_mse
    q = QuadratureSpec("quasi_monte_carlo", points=2**16, refine_points=2**17, rtol=1e-2, seed=1)
    assert run_two_step_gaussian(THETA, plan, q).mean_scaled_mse == pytest.approx(ref, rel=5e-3)


def test_reference_allocation_and_value():
    n = optimal_n_sic(THETA, 10**4)
    assert abs(n - 673) <= 0.15 * 673
    val = run_two_step_gaussian(THETA, TwoStepPlan(10**4, n)).mean_scaled_mse
    assert abs(val - 8.28) <= 0.015 * 8.28


def test_asymptote_reaches_bound():
    n_total = 10**10
    n = optimal_n_sic(THETA, n_total)
    val = run_two_step_gaussian(THETA, TwoStepPlan(n_total, n)).mean_scaled_mse
    assert abs(val / nh_bound(0.5) - 1) < 1e-3


def test_optimum_monotone_in_budget():
    vals = []
    for n_total in [10**3, 10**4, 10**5, 10**6, 10**7, 10**8]:
        n = optimal_n_sic(THETA, n_total)
        vals.append(run_two_step_gaussian(THETA, TwoStepPlan(n_total, n)).mean_scaled_mse)
    assert np.all(np.diff(vals) <= 1e-9)
    assert vals[-1] >= nh_bound(0.5) - 1e-9


def test_optimal_n_sic_needs_budget():
    with pytest.raises(ValueError):
        optimal_n_sic(THETA, 50)


@pytest.mark.parametrize("theta_z, ref", [(-0.5, 6.76), (0.3, 10.28)])
def test_b_law(theta_z, ref):
    b = fit_b_coefficient([0, 0, theta_z], B_GRID)
    assert abs(b.b / ref - 1) < 0.15
    assert b.b > 0 and b.fit_err >= 0
    assert len(b.n_sic_opt) == 4


def test_b_rejects_mixed_state_and_short_grid():
    with pytest.raises(ValueError, match="NA"):
        fit_b_coefficient([0, 0, 0], B_GRID)
    with pytest.raises(ValueError):
        fit_b_coefficient(THETA, [10**4, 10**5, 10**6])
    with pytest.raises(ValueError):
        fit_b_coefficient(THETA, [10**4, 2 * 10**4, 3 * 10**4, 5 * 10**4])
