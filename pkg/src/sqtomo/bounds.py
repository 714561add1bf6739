"""Closed-form benchmarks: the Nagaoka-Hayashi bound and the SIC-POVM error.

Both are per-probe total mean squared errors of the Bloch vector; divide by
the number of probes for ``N``-probe figures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(~((r >= 0) & (r <= 1))):  # also catches NaN
        raise ValueError("Bloch length r must lie in [0, 1]")
    return r


def nh_bound(r):
    """``(2 + sqrt(1 - r^2))^2``; works elementwise on arrays."""
    r = _check_r(r)
    out = (2.0 + np.sqrt(1.0 - r**2)) ** 2
    return float(out) if out.ndim == 0 else out


def sic_mse(r):
    """Per-probe MSE of the SIC-POVM with its linear estimator, ``9 - r^2``."""
    r = _check_r(r)
    out = 9.0 - r**2
    return float(out) if out.ndim == 0 else out


def scaled_bound(r, n_probes: int) -> float:
    if n_probes < 1:
        raise ValueError("n_probes must be at least 1")
    return nh_bound(r) / n_probes


@dataclass(frozen=True)
class BoundReport:
    r: float
    c_nh: float
    mse_sic: float

    @classmethod
    def at(cls, r: float) -> "BoundReport":
        return cls(float(r), nh_bound(r), sic_mse(r))
