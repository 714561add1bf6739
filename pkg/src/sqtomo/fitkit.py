"""Group shot records into N-probe estimates and fit ``MSE(N) = C/N + delta``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .noisekit import CalibrationOffset, ConfusionMatrix, ShotRecord, mitigate
from .povm import LinearEstimator, build_estimator, estimate_from_frequencies

DEFAULT_INSTANCES = 10_000
DEFAULT_BOOTSTRAP = 1000


@dataclass(frozen=True)
class MsePoint:
    n: int
    mean_scaled_mse: float
    std_err: float


@dataclass(frozen=True)
class MseCurve:
    points: tuple
    n_resamples: int

    def __post_init__(self):
        ns = [p.n for p in self.points]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("curve points must have strictly increasing N")
        if any(p.std_err < 0 for p in self.points):
            raise ValueError("std_err must be non-negative")

    @classmethod
    def from_arrays(cls, n, scaled_mse, std_err, n_resamples: int = 0) -> "MseCurve":
        order = np.argsort(n)
        pts = tuple(MsePoint(int(n[i]), float(scaled_mse[i]), float(std_err[i])) for i in order)
        return cls(pts, n_resamples)

    def arrays(self):
        return (
            np.array([p.n for p in self.points], dtype=float),
            np.array([p.mean_scaled_mse for p in self.points]),
            np.array([p.std_err for p in self.points]),
        )


@dataclass(frozen=True)
class ScalingFit:
    c: float
    delta: float
    c_err: float
    delta_err: float

    def predict(self, n) -> np.ndarray:
        """Per-N MSE predicted by the model (not scaled by N)."""
        return self.c / np.asarray(n, dtype=float) + self.delta


def _group_counts(outcomes: np.ndarray, group_size: int) -> np.ndarray:
    n_groups = len(outcomes) // group_size
    groups = np.asarray(outcomes[: n_groups * group_size], dtype=np.int64).reshape(n_groups, group_size)
    flat = (np.arange(n_groups)[:, None] * 4 + groups).ravel()
    return np.bincount(flat, minlength=4 * n_groups).reshape(n_groups, 4)


def _estimates_from_counts(counts, group_size, estimator, mitigation, offset):
    f = counts / group_size
    if mitigation is not None:
        f = mitigate(f, mitigation)
    theta_hat = estimate_from_frequencies(estimator, f)
    if offset is not None:
        theta_hat = theta_hat - offset.vector
    return theta_hat


def _resolve_estimator(record: ShotRecord, estimator: LinearEstimator | None) -> LinearEstimator:
    if estimator is not None:
        return estimator
    if record.povm_params is None:
        raise ValueError("record carries no POVM parameters; pass an estimator")
    return build_estimator(record.povm_params)


def group_estimates(
    record: ShotRecord,
    group_size: int,
    estimator: LinearEstimator | None = None,
    mitigation: ConfusionMatrix | None = None,
    offset: CalibrationOffset | None = None,
) -> np.ndarray:
    """One estimate per contiguous group of ``group_size`` shots; leftovers dropped.

    Pipeline per group: frequencies, readout mitigation, linear estimate,
    calibration offset.
    """
    if group_size < 1:
        raise ValueError("group_size must be positive")
    if group_size > len(record):
        raise ValueError("group_size exceeds the record length")
    estimator = _resolve_estimator(record, estimator)
    counts = _group_counts(record.outcomes, group_size)
    return _estimates_from_counts(counts, group_size, estimator, mitigation, offset)


def bootstrap_std_err(values: np.ndarray, n_bootstrap: int, gen: np.random.Generator) -> float:
    """Standard deviation of the mean over bootstrap resamples of ``values``."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float("nan")
    means = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        means[b] = values[gen.integers(0, len(values), len(values))].mean()
    return float(means.std(ddof=1))


def subsample_errors(
    record: ShotRecord,
    group_size: int,
    n_instances: int,
    seed: int,
    estimator: LinearEstimator | None = None,
    mitigation: ConfusionMatrix | None = None,
    offset: CalibrationOffset | None = None,
) -> np.ndarray:
    """Scaled squared errors ``N |theta_hat - theta|^2`` for ``n_instances`` groups.

    The record is split into ``len // N`` groups repeatedly: the first split
    is the contiguous grouping, every later one a fresh random permutation.
    Groups are taken in order until ``n_instances`` have been collected.
    """
    if n_instances < 1:
        raise ValueError("n_instances must be at least 1")
    estimator = _resolve_estimator(record, estimator)
    if group_size > len(record):
        raise ValueError("group_size exceeds the record length")
    gen = rngmod.stream(seed, "subsample", group_size)
    per_split = len(record) // group_size
    out = []
    collected = 0
    split = 0
    while collected < n_instances:
        outcomes = record.outcomes if split == 0 else record.outcomes[gen.permutation(len(record))]
        take = min(per_split, n_instances - collected)
        counts = _group_counts(outcomes[: take * group_size], group_size)
        est = _estimates_from_counts(counts, group_size, estimator, mitigation, offset)
        out.append(group_size * ((est - record.true_theta) ** 2).sum(axis=-1))
        collected += take
        split += 1
    return np.concatenate(out)


def mse_by_subsampling(
    record: ShotRecord,
    group_size: int,
    n_instances: int = DEFAULT_INSTANCES,
    seed: int = 0,
    estimator: LinearEstimator | None = None,
    mitigation: ConfusionMatrix | None = None,
    offset: CalibrationOffset | None = None,
    n_bootstrap: int = DEFAULT_BOOTSTRAP,
) -> tuple[float, float]:
    """Mean scaled MSE ``N * MSE(N)`` over sub-sampled groups, with bootstrap error."""
    errors = subsample_errors(record, group_size, n_instances, seed, estimator, mitigation, offset)
    std_err = bootstrap_std_err(errors, n_bootstrap, rngmod.stream(seed, "bootstrap", group_size))
    return float(errors.mean()), std_err


def build_mse_curve(
    record: ShotRecord,
    group_sizes,
    n_instances: int = DEFAULT_INSTANCES,
    seed: int = 0,
    n_bootstrap: int = DEFAULT_BOOTSTRAP,
    **pipeline,
) -> MseCurve:
    sizes = sorted(int(n) for n in group_sizes)
    rows = [mse_by_subsampling(record, n, n_instances, seed, n_bootstrap=n_bootstrap, **pipeline)
            for n in sizes]
    return MseCurve(tuple(MsePoint(n, m, s) for n, (m, s) in zip(sizes, rows)), n_instances)


def fit_scaling_model(curve: MseCurve) -> ScalingFit:
    """Weighted least squares of ``N MSE(N) = C + N delta``.

    Weights are ``1 / std_err^2``; parameter errors come from the inverse
    normal matrix with the errors taken as absolute.
    """
    n, y, se = curve.arrays()
    if len(np.unique(n)) < 2:
        raise ValueError("need at least two distinct N values")
    if np.any(~np.isfinite(se)) or np.any(se <= 0):
        raise ValueError("degenerate weights: every point needs a positive finite std_err")
    w = 1.0 / se**2
    x = np.column_stack([np.ones_like(n), n])
    normal = x.T @ (w[:, None] * x)
    cov = np.linalg.inv(normal)
    c, delta = cov @ (x.T @ (w * y))
    return ScalingFit(float(c), float(delta), float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])))
