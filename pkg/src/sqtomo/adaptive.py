"""Two-step adaptive tomography: a SIC-POVM survey followed by a tuned ST-POVM.

Stage one spends ``n_sic`` probes on a fixed SIC-POVM. Its estimate fixes the
stage-two ST-POVM (stretching ``|theta_1|``, oriented along ``theta_1``) used
on the remaining probes, and the two estimates are combined as
``W theta_1 + (1 - W) theta_2``.

Two evaluation routes are provided: a Monte Carlo simulation of the whole
protocol, and a Gaussian approximation of the stage-one estimate integrated
by quadrature, which scales to ``n_total`` far beyond what sampling allows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.stats import norm, qmc

from . import rng as rngmod
from .bounds import nh_bound, sic_mse
from .povm import (
    StPovmParams,
    st_covariance,
    st_estimator_matrix,
    st_expected_mse,
    st_probabilities,
)
from .qstate import as_theta, frame_rotation_matrices

RP_CLAMP = 1 - 1e-6
SIC_DOWNWARD = (0.0, 0.0, 1.0)  # Pi_z of the stage-one tetrahedron points along -z

MseRule = Literal["expected", "realized"]


class QuadratureError(RuntimeError):
    """Successive quadrature refinements disagree by more than ``rtol``."""


@dataclass(frozen=True)
class TwoStepPlan:
    """Probe allocation and weight rule.

    ``weight`` is ``"optimal_per_run"`` (minimise ``W^2 MSE1 + (1-W)^2 MSE2``
    for each run) or a fixed number in ``[0, 1]``. ``mse1_rule`` picks the
    stage-one error fed to the optimal weight: ``"expected"`` uses
    ``(9 - |theta_1|^2) / n_sic`` and ``"realized"`` uses the actual
    ``|theta_1 - theta|^2``, which needs the true state and so is only
    available in simulation.
    """

    n_total: int
    n_sic: int
    weight: str | float = "optimal_per_run"
    mse1_rule: MseRule = "expected"

    def __post_init__(self):
        if not 1 <= self.n_sic < self.n_total:
            raise ValueError("need 1 <= n_sic < n_total")
        if isinstance(self.weight, str):
            if self.weight != "optimal_per_run":
                raise ValueError(f"unknown weight rule {self.weight!r}")
        elif not 0 <= float(self.weight) <= 1:
            raise ValueError("fixed weight must lie in [0, 1]")
        if self.mse1_rule not in ("expected", "realized"):
            raise ValueError(f"unknown mse1 rule {self.mse1_rule!r}")

    @property
    def n_st(self) -> int:
        return self.n_total - self.n_sic


@dataclass(frozen=True)
class TwoStepResult:
    mean_scaled_mse: float
    std_err: float
    mode: str
    n_sic: int = 0
    n_total: int = 0


@dataclass(frozen=True)
class QuadratureSpec:
    """``product_gauss_hermite`` uses ``points`` nodes per axis and checks against
    ``refine_points``; ``quasi_monte_carlo`` uses ``points`` and ``refine_points``
    as scrambled-Sobol sample counts."""

    scheme: str = "product_gauss_hermite"
    points: int = 40
    refine_points: int = 60
    rtol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.rtol <= 0:
            raise ValueError("rtol must be positive")
        if self.scheme not in ("product_gauss_hermite", "quasi_monte_carlo"):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")


@dataclass(frozen=True)
class BCoefficient:
    theta_z: float
    b: float
    fit_err: float
    n_grid: tuple = ()
    n_sic_opt: tuple = ()


def sic_lab_covariance(theta, sic_orientation=SIC_DOWNWARD) -> np.ndarray:
    """Single-probe covariance of the stage-one SIC estimator in the lab frame."""
    rot = StPovmParams(0.0, 0.0, tuple(sic_orientation)).frame()
    return rot.matrix.T @ st_covariance(0.0, rot.apply(as_theta(theta))) @ rot.matrix


def _stage_two_mse(theta: np.ndarray, theta1: np.ndarray) -> np.ndarray:
    """Per-probe expected error of the ST-POVM tuned to ``theta1`` when the state is ``theta``.

    The expected error of an ST-POVM is invariant under rotations about its
    axis, so only the components of ``theta`` along and across ``theta1``
    matter.
    """
    r1 = np.linalg.norm(theta1, axis=-1)
    axis = np.divide(theta1, r1[..., None], out=np.zeros_like(theta1), where=r1[..., None] > 0)
    axis[r1 == 0] = (0.0, 0.0, 1.0)
    along = axis @ theta
    across = np.sqrt(np.clip(theta @ theta - along**2, 0.0, None))
    canonical = np.stack([across, np.zeros_like(along), along], axis=-1)
    return st_expected_mse(np.minimum(r1, RP_CLAMP), canonical)


def _combine(plan: TwoStepPlan, mse1_weight, mse2_weight):
    if isinstance(plan.weight, str):
        return mse2_weight / (mse1_weight + mse2_weight)
    return np.full(np.shape(mse1_weight), float(plan.weight))


def _weights(plan: TwoStepPlan, theta, theta1, realized_mse1, true_mse2):
    if plan.mse1_rule == "realized":
        return _combine(plan, realized_mse1, true_mse2)
    r1 = np.minimum(np.linalg.norm(theta1, axis=-1), 1.0)
    mse1 = sic_mse(r1) / plan.n_sic
    mse2 = nh_bound(np.minimum(r1, RP_CLAMP)) / plan.n_st
    return _combine(plan, mse1, mse2)


def combined_mse(w, mse1, mse2):
    """``W^2 MSE1 + (1 - W)^2 MSE2`` for uncorrelated unbiased stages."""
    return w**2 * mse1 + (1 - w) ** 2 * mse2


def _quadrature_nodes(spec: QuadratureSpec, points: int):
    if spec.scheme == "product_gauss_hermite":
        z, w = hermegauss(points)
        w = w / w.sum()
        nodes = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1).reshape(-1, 3)
        weights = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
        return nodes, weights
    sampler = qmc.Sobol(3, scramble=True, seed=spec.seed)
    u = sampler.random(points)
    return norm.ppf(u), np.full(points, 1.0 / points)


def _gaussian_scaled_mse(theta, plan: TwoStepPlan, spec: QuadratureSpec, points: int,
                         sic_orientation=SIC_DOWNWARD) -> float:
    cov = sic_lab_covariance(theta, sic_orientation) / plan.n_sic
    chol = np.linalg.cholesky(cov + 1e-300 * np.eye(3))
    nodes, weights = _quadrature_nodes(spec, points)
    theta1 = theta + nodes @ chol.T
    inside = np.linalg.norm(theta1, axis=-1) < 1
    theta1, weights = theta1[inside], weights[inside]
    if weights.sum() <= 0:
        raise QuadratureError("no quadrature mass inside the unit ball")
    mse1 = ((theta1 - theta) ** 2).sum(axis=-1)
    mse2 = _stage_two_mse(theta, theta1) / plan.n_st
    w = _weights(plan, theta, theta1, mse1, mse2)
    return float(plan.n_total * (weights * combined_mse(w, mse1, mse2)).sum() / weights.sum())


def run_two_step_gaussian(theta, plan: TwoStepPlan, quadrature: QuadratureSpec | None = None,
                          sic_orientation=SIC_DOWNWARD) -> TwoStepResult:
    """Scaled MSE with the stage-one estimate replaced by its normal approximation.

    The integral over the stage-one estimate is restricted to the open unit
    ball and renormalised. ``std_err`` reports the change between the two
    quadrature resolutions.
    """
    theta = as_theta(theta)
    spec = quadrature or QuadratureSpec()
    if plan.n_sic < 100:
        warnings.warn("n_sic < 100: the normal approximation of stage one is rough", stacklevel=2)
    coarse = _gaussian_scaled_mse(theta, plan, spec, spec.points, sic_orientation)
    fine = _gaussian_scaled_mse(theta, plan, spec, spec.refine_points, sic_orientation)
    if abs(fine - coarse) > spec.rtol * abs(fine):
        raise QuadratureError(f"quadrature not converged: {coarse!r} vs {fine!r}")
    return TwoStepResult(fine, abs(fine - coarse), "gaussian_integral", plan.n_sic, plan.n_total)


def run_two_step_mc(theta, plan: TwoStepPlan, n_runs: int, seed: int,
                    sic_orientation=SIC_DOWNWARD, return_stages: bool = False):
    """Simulate ``n_runs`` independent executions of the two-step protocol.

    Returns a :class:`TwoStepResult`; with ``return_stages`` also returns the
    per-run stage estimates ``(theta_1, theta_2)``.
    """
    theta = as_theta(theta)
    if np.linalg.norm(theta) >= 1:
        raise ValueError("two-step scheme needs a mixed state, |theta| < 1")
    gen = rngmod.stream(seed, "two-step")
    sic_params = StPovmParams(0.0, 0.0, tuple(sic_orientation))
    sic_rot = sic_params.frame()
    p_sic = st_probabilities(0.0, sic_rot.apply(theta))
    counts1 = gen.multinomial(plan.n_sic, p_sic, size=n_runs)
    theta1 = sic_rot.apply_inverse((counts1 / plan.n_sic) @ st_estimator_matrix(0.0).T)

    r1 = np.minimum(np.linalg.norm(theta1, axis=-1), RP_CLAMP)
    rots = frame_rotation_matrices(theta1)
    theta_can = np.einsum("mij,j->mi", rots, theta)
    p2 = st_probabilities(r1, theta_can)
    p2 = np.clip(p2, 0.0, None)
    p2 /= p2.sum(axis=-1, keepdims=True)
    counts2 = gen.multinomial(plan.n_st, p2)
    est2 = np.einsum("mjk,mk->mj", st_estimator_matrix(r1), counts2 / plan.n_st)
    theta2 = np.einsum("mij,mi->mj", rots, est2)

    mse1 = ((theta1 - theta) ** 2).sum(axis=-1)
    mse2 = _stage_two_mse(theta, theta1) / plan.n_st
    w = _weights(plan, theta, theta1, mse1, mse2)
    final = w[:, None] * theta1 + (1 - w)[:, None] * theta2
    scaled = plan.n_total * ((final - theta) ** 2).sum(axis=-1)
    result = TwoStepResult(float(scaled.mean()), float(scaled.std(ddof=1) / np.sqrt(n_runs)),
                           "monte_carlo", plan.n_sic, plan.n_total)
    if return_stages:
        return result, theta1, theta2
    return result


def gaussian_scan(theta, n_total: int, n_sic_values, quadrature: QuadratureSpec | None = None,
                  mse1_rule: MseRule = "expected", sic_orientation=SIC_DOWNWARD) -> np.ndarray:
    """Scaled MSE (coarse quadrature, no refinement check) for each ``n_sic``."""
    theta = as_theta(theta)
    spec = quadrature or QuadratureSpec()
    return np.array([
        _gaussian_scaled_mse(theta, TwoStepPlan(n_total, int(n), mse1_rule=mse1_rule), spec,
                             spec.points, sic_orientation)
        for n in n_sic_values
    ])


def checked_scan(theta, n_total: int, n_sic_values, quadrature: QuadratureSpec | None = None,
                 mse1_rule: MseRule = "expected", sic_orientation=SIC_DOWNWARD):
    """Scan at both quadrature resolutions.

    Returns ``(fine, abs_change, converged)``; points failing the ``rtol``
    check (typically small ``n_sic``, where the normal approximation breaks
    down) are flagged rather than dropped.
    """
    spec = quadrature or QuadratureSpec()
    fine_spec = QuadratureSpec(spec.scheme, spec.refine_points, spec.refine_points, spec.rtol,
                               spec.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        coarse = gaussian_scan(theta, n_total, n_sic_values, spec, mse1_rule, sic_orientation)
        fine = gaussian_scan(theta, n_total, n_sic_values, fine_spec, mse1_rule, sic_orientation)
    change = np.abs(fine - coarse)
    return fine, change, change <= spec.rtol * np.abs(fine)


def _local_minima(values: np.ndarray) -> int:
    interior = (values[1:-1] < values[:-2]) & (values[1:-1] < values[2:])
    return int(interior.sum() + (values[0] < values[1]) + (values[-1] < values[-2]))


def optimal_n_sic(theta, n_total: int, quadrature: QuadratureSpec | None = None,
                  mse1_rule: MseRule = "expected", sic_orientation=SIC_DOWNWARD) -> int:
    """Stage-one allocation minimising the Gaussian-integral scaled MSE.

    Golden-section search over ``log n_sic`` followed by an exhaustive check
    of the neighbouring +-5 integers. A coarse log-grid is checked for a
    single minimum first; otherwise the grid minimum seeds the local search.
    """
    if n_total < 100:
        raise ValueError("n_total must be at least 100")
    theta = as_theta(theta)
    spec = quadrature or QuadratureSpec()
    cache: dict[int, float] = {}

    def f(n: int) -> float:
        n = int(min(max(n, 1), n_total - 1))
        if n not in cache:
            plan = TwoStepPlan(n_total, n, mse1_rule=mse1_rule)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cache[n] = _gaussian_scaled_mse(theta, plan, spec, spec.points, sic_orientation)
        return cache[n]

    grid = np.unique(np.round(np.geomspace(1, n_total - 1, 40)).astype(int))
    values = np.array([f(n) for n in grid])
    i = int(np.argmin(values))
    if _local_minima(values) > 1:
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        dense = np.unique(np.round(np.geomspace(max(lo, 1), hi, 200)).astype(int))
        best = int(dense[np.argmin([f(n) for n in dense])])
    else:
        a, b = np.log(grid[max(i - 1, 0)]), np.log(grid[min(i + 1, len(grid) - 1)])
        g = (np.sqrt(5) - 1) / 2
        c, d = b - g * (b - a), a + g * (b - a)
        fc, fd = f(round(np.exp(c))), f(round(np.exp(d)))
        while np.exp(b) - np.exp(a) > 4:
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - g * (b - a)
                fc = f(round(np.exp(c)))
            else:
                a, c, fc = c, d, fd
                d = a + g * (b - a)
                fd = f(round(np.exp(d)))
        best = int(round(np.exp((a + b) / 2)))
    candidates = range(max(1, best - 5), min(n_total - 1, best + 5) + 1)
    return min(candidates, key=lambda n: (f(n), n))


def fit_b_coefficient(theta, n_grid, quadrature: QuadratureSpec | None = None,
                      sic_orientation=SIC_DOWNWARD) -> BCoefficient:
    """Least-squares slope ``B`` of ``N'_SIC = B sqrt(N)`` through the origin.

    Raises ``ValueError`` for an insufficient grid, and for states where the
    optimum is to never switch (``B`` diverges, e.g. the maximally mixed state).
    """
    theta = as_theta(theta)
    grid = np.array(sorted(int(n) for n in n_grid))
    if len(grid) < 4 or grid[-1] / grid[0] < 100:
        raise ValueError("need at least 4 grid points spanning two decades")
    if np.linalg.norm(theta) < 1e-9:
        raise ValueError("B diverges for the maximally mixed state (NA)")
    n_opt = np.array([optimal_n_sic(theta, int(n), quadrature, sic_orientation=sic_orientation)
                      for n in grid])
    if np.any(n_opt >= grid - 1):
        raise ValueError("optimal allocation is all-SIC; B diverges (NA)")
    x = np.sqrt(grid.astype(float))
    b = float((n_opt * x).sum() / (x * x).sum())
    resid = n_opt - b * x
    err = float(np.sqrt((resid**2).sum() / (len(x) - 1) / (x * x).sum()))
    return BCoefficient(float(theta[2]), b, err, tuple(int(n) for n in grid),
                        tuple(int(n) for n in n_opt))
