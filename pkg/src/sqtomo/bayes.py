"""Bayesian risk of ST-POVMs under separable priors on the Bloch ball.

The prior factorises into a Beta law on the Bloch length and a von
Mises-Fisher law on the direction, both centred on ``PriorSpec.center``.
Coordinates ``(r, lam, phi)`` are spherical coordinates in the prior frame,
whose ``+z`` axis is the centre direction; the ST-POVM is always aligned
with that axis.

Two measure conventions are supported. ``"volume"`` (default) treats the
density as being with respect to ``r^2 sin(lam) dr dlam dphi``, so the radial
marginal is exactly Beta and the direction exactly von Mises-Fisher.
``"flat"`` reads the integral literally as ``dr dlam dphi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

from .bounds import nh_bound
from .povm import StPovmParams, st_expected_mse
from .qstate import as_theta, frame_rotation

MEASURES = ("volume", "flat")
LAGUERRE_KAPPA = 50.0


@dataclass(frozen=True)
class PriorSpec:
    center: tuple
    kappa: float
    alpha: float
    measure: str = "volume"

    def __post_init__(self):
        c = as_theta(self.center).astype(float)
        object.__setattr__(self, "center", tuple(float(v) for v in c))
        r = float(np.linalg.norm(c))
        if not 0 < r < 1:
            raise ValueError("prior centre must satisfy 0 < |center| < 1")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}")

    @property
    def r_center(self) -> float:
        return float(np.linalg.norm(self.center))

    @property
    def beta(self) -> float:
        r = self.r_center
        return self.alpha * (1 - r) / r

    @property
    def axis(self) -> np.ndarray:
        return np.array(self.center) / self.r_center


@dataclass(frozen=True)
class RiskQuadrature:
    """Product Gauss rule (Beta-Jacobi radially, Legendre or Laguerre in ``cos lam``).

    ``points`` nodes per axis, checked against ``refine_points``.
    """

    points: int = 64
    refine_points: int = 96
    rtol: float = 1e-8

    def __post_init__(self):
        if self.rtol <= 0:
            raise ValueError("rtol must be positive")


@dataclass(frozen=True)
class RiskCurve:
    points: tuple
    argmin_rp: float
    min_risk: float


class QuadratureError(RuntimeError):
    pass


def _vmf_angular(kappa: float, cos_lam):
    """Von Mises-Fisher density per unit solid angle, stable for large kappa."""
    cos_lam = np.asarray(cos_lam, dtype=float)
    if kappa == 0:
        return np.full(cos_lam.shape, 1 / (4 * np.pi))
    return kappa / (2 * np.pi * -np.expm1(-2 * kappa)) * np.exp(kappa * (cos_lam - 1))


def _flat_angular(kappa: float, lam):
    # normaliser of exp(kappa cos lam) over dlam dphi is 2 pi^2 I0(kappa)
    lam = np.asarray(lam, dtype=float)
    return np.exp(kappa * (np.cos(lam) - 1)) / (2 * np.pi**2 * special.i0e(kappa))


def prior_density(spec: PriorSpec, r, lam, phi=0.0):
    """Prior density at ``(r, lam, phi)`` in the prior frame, w.r.t. ``spec.measure``."""
    r = np.asarray(r, dtype=float)
    lam = np.asarray(lam, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any((r < 0) | (r > 1)) or np.any((lam < 0) | (lam > np.pi)):
        raise ValueError("coordinates out of range: r in [0, 1], lam in [0, pi]")
    if np.any((phi < 0) | (phi >= 2 * np.pi)):
        raise ValueError("phi must lie in [0, 2 pi)")
    radial = stats.beta.pdf(r, spec.alpha, spec.beta)
    if spec.measure == "volume":
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(r > 0, radial / r**2, np.inf if spec.alpha < 3 else 0.0)
        return radial * _vmf_angular(spec.kappa, np.cos(lam))
    return radial * _flat_angular(spec.kappa, lam)


def beta_gauss_rule(alpha: float, beta: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule for the Beta(alpha, beta) law on [0, 1]; weights sum to one.

    Golub-Welsch on the Jacobi three-term recurrence, which stays stable for
    shape parameters far beyond where closed-form root finders overflow.
    """
    a, b = beta - 1.0, alpha - 1.0  # Jacobi weight (1-x)^a (1+x)^b on [-1, 1]
    k = np.arange(n, dtype=float)
    s = 2 * k + a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        diag = (b**2 - a**2) / (s * (s + 2))
        k1, s1 = k[1:], s[1:]
        off2 = 4 * k1 * (k1 + a) * (k1 + b) * (k1 + a + b) / (s1**2 * (s1 + 1) * (s1 - 1))
    diag[0] = (b - a) / (a + b + 2)
    off2[0] = 4 * (1 + a) * (1 + b) / ((2 + a + b) ** 2 * (3 + a + b))
    x, vec = linalg.eigh_tridiagonal(diag, np.sqrt(off2))
    w = vec[0] ** 2
    return 0.5 * (x + 1), w / w.sum()


def _cos_nodes(spec: PriorSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes in ``u = cos(lam)`` and normalised weights of the angular marginal."""
    kappa = spec.kappa
    if spec.measure == "flat":
        x, w = np.polynomial.legendre.leggauss(n)
        lam = 0.5 * np.pi * (x + 1)
        dens = w * np.exp(kappa * (np.cos(lam) - 1))
        return np.cos(lam), dens / dens.sum()
    if kappa <= LAGUERRE_KAPPA:
        x, w = np.polynomial.legendre.leggauss(n)
        dens = w * np.exp(kappa * (x - 1))
        return x, dens / dens.sum()
    # density ~ kappa e^{-kappa t} in t = 1 - u; the cut at t = 2 loses e^{-2 kappa}
    x, w = np.polynomial.laguerre.laggauss(n)
    t = x / kappa
    keep = t <= 2
    return 1 - t[keep], w[keep] / w[keep].sum()


def _nodes(spec: PriorSpec, points: int):
    r, wr = beta_gauss_rule(spec.alpha, spec.beta, points)
    u, wu = _cos_nodes(spec, points)
    return r, np.clip(u, -1, 1), wr, wu


def _risk_at(spec: PriorSpec, r_p, points: int) -> np.ndarray:
    r, u, wr, wu = _nodes(spec, points)
    rr, uu = np.meshgrid(r, u, indexing="ij")
    weights = np.outer(wr, wu)
    theta = np.stack([rr * np.sqrt(1 - uu**2), np.zeros_like(rr), rr * uu], axis=-1)
    r_p = np.atleast_1d(np.asarray(r_p, dtype=float))
    mse = st_expected_mse(r_p[:, None, None], theta[None])
    return (mse * weights).sum(axis=(1, 2))


def bayes_risk(spec: PriorSpec, r_p, quadrature: RiskQuadrature | None = None):
    """Prior-averaged single-probe MSE of the ST-POVM aligned with the prior axis.

    Accepts a scalar or an array of stretching parameters.
    """
    q = quadrature or RiskQuadrature()
    coarse = _risk_at(spec, r_p, q.points)
    fine = _risk_at(spec, r_p, q.refine_points)
    if np.any(np.abs(fine - coarse) > q.rtol * np.abs(fine)):
        raise QuadratureError("risk quadrature did not converge; raise the number of points")
    return float(fine[0]) if np.ndim(r_p) == 0 else fine


def sample_prior(spec: PriorSpec, n: int, gen: np.random.Generator) -> np.ndarray:
    """Draw ``n`` lab-frame Bloch vectors from a volume-measure prior."""
    if spec.measure != "volume":
        raise ValueError("sampling is implemented for the volume measure only")
    r = stats.beta.rvs(spec.alpha, spec.beta, size=n, random_state=gen)
    if spec.kappa == 0:
        d = gen.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
    else:
        d = stats.vonmises_fisher([0.0, 0.0, 1.0], spec.kappa).rvs(n, random_state=gen)
    aligned = r[:, None] * d
    return frame_rotation(spec.axis).apply_inverse(aligned)


def bayes_risk_mc(spec: PriorSpec, r_p: float, n_samples: int, seed: int) -> tuple[float, float]:
    """Plain Monte Carlo estimate of the risk and its standard error.

    Works entirely in the lab frame: states are sampled around the prior
    centre and each is scored with the ST-POVM oriented along the centre.
    """
    gen = np.random.default_rng(seed)
    states = sample_prior(spec, n_samples, gen)
    frame = StPovmParams(r_p, 0.0, tuple(spec.axis)).frame()
    mse = st_expected_mse(r_p, frame.apply(states))
    return float(mse.mean()), float(mse.std(ddof=1) / np.sqrt(n_samples))


def minimize_risk(spec: PriorSpec, grid, quadrature: RiskQuadrature | None = None) -> RiskCurve:
    """Risk on a grid of ``r_p`` plus a parabolic refinement of the grid minimum."""
    grid = np.asarray(sorted(float(g) for g in grid))
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    if np.any((grid < 0) | (grid >= 1)):
        raise ValueError("grid values must lie in [0, 1)")
    risks = np.atleast_1d(bayes_risk(spec, grid, quadrature))
    i = int(np.argmin(risks))
    best_rp, best = float(grid[i]), float(risks[i])
    if 0 < i < len(grid) - 1:
        x, y = grid[i - 1 : i + 2], risks[i - 1 : i + 2]
        denom = (x[0] - x[1]) * (x[0] - x[2]) * (x[1] - x[2])
        a = (x[2] * (y[1] - y[0]) + x[1] * (y[0] - y[2]) + x[0] * (y[2] - y[1])) / denom
        b = (x[2] ** 2 * (y[0] - y[1]) + x[1] ** 2 * (y[2] - y[0]) + x[0] ** 2 * (y[1] - y[2])) / denom
        if a > 0:
            vertex = float(np.clip(-b / (2 * a), x[0], x[2]))
            v_risk = bayes_risk(spec, vertex, quadrature)
            if v_risk <= best:
                best_rp, best = vertex, v_risk
    return RiskCurve(tuple(zip(grid.tolist(), risks.tolist())), best_rp, best)


def point_mass_limit(r_p: float, r_center: float) -> float:
    """Risk for a prior concentrated on ``(0, 0, r_center)``; equals the bound at ``r_p = r_center``."""
    return float(st_expected_mse(r_p, np.array([0.0, 0.0, r_center])))


def bound_at_center(spec: PriorSpec) -> float:
    return nh_bound(spec.r_center)
