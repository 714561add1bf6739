"""Shot-level measurement simulation, readout noise, mitigation and calibration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .bounds import nh_bound
from .povm import (
    QubitPovm,
    StPovmParams,
    build_estimator,
    build_st_povm,
    estimate_from_frequencies,
)
from .qstate import ATOL, PAULIS, RotationSpec, as_theta, random_bloch_vectors

CHUNK = 1 << 18
MAX_CONDITION = 1e6
CALIBRATION_RADIUS = 0.1


@dataclass(frozen=True)
class ReadoutNoiseSpec:
    """Independent readout flip probabilities per physical qubit.

    ``p01`` is P(read 1 | true 0) and ``p10`` is P(read 0 | true 1). Qubit 0
    is the probe (high bit of the outcome index), qubit 1 the ancilla.
    """

    p01_q0: float = 0.0
    p10_q0: float = 0.0
    p01_q1: float = 0.0
    p10_q1: float = 0.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not 0 <= v < 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5), got {v}")

    @classmethod
    def uniform(cls, p: float) -> "ReadoutNoiseSpec":
        return cls(p, p, p, p)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Column-stochastic readout matrix: columns are true outcomes, rows observed."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("confusion matrix must be 4x4")
        if np.any(m < -ATOL) or np.any(m > 1 + ATOL):
            raise ValueError("confusion matrix entries must lie in [0, 1]")
        if not np.allclose(m.sum(axis=0), 1.0, atol=ATOL, rtol=0):
            raise ValueError("confusion matrix columns must sum to 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def to_json(self) -> str:
        return json.dumps({"matrix": self.matrix.tolist(), "condition_number": self.condition_number})

    @classmethod
    def from_json(cls, text: str) -> "ConfusionMatrix":
        return cls(np.array(json.loads(text)["matrix"], dtype=float))


def _qubit_confusion(p01: float, p10: float) -> np.ndarray:
    return np.array([[1 - p01, p10], [p01, 1 - p10]])


def build_confusion_matrix(noise: ReadoutNoiseSpec) -> ConfusionMatrix:
    """Analytic ``M``: the tensor product of the per-qubit 2x2 confusion matrices."""
    return ConfusionMatrix(
        np.kron(_qubit_confusion(noise.p01_q0, noise.p10_q0), _qubit_confusion(noise.p01_q1, noise.p10_q1))
    )


def apply_readout_noise(outcomes: np.ndarray, noise: ReadoutNoiseSpec, gen: np.random.Generator) -> np.ndarray:
    """Flip each of the two outcome bits independently."""
    outcomes = np.asarray(outcomes)
    hi = outcomes >> 1
    lo = outcomes & 1
    u = gen.random((2, outcomes.size)).reshape((2,) + outcomes.shape)
    flip_hi = u[0] < np.where(hi == 0, noise.p01_q0, noise.p10_q0)
    flip_lo = u[1] < np.where(lo == 0, noise.p01_q1, noise.p10_q1)
    return (((hi ^ flip_hi) << 1) | (lo ^ flip_lo)).astype(np.int8)


def estimate_confusion_matrix(noise: ReadoutNoiseSpec, n_per_state: int, seed: int) -> ConfusionMatrix:
    """Empirical ``M`` from ``n_per_state`` calibration shots on each basis state."""
    gen = rngmod.stream(seed, "confusion")
    m = np.zeros((4, 4))
    for true in range(4):
        observed = apply_readout_noise(np.full(n_per_state, true, dtype=np.int8), noise, gen)
        m[:, true] = np.bincount(observed, minlength=4) / n_per_state
    return ConfusionMatrix(m)


def mitigate(freqs_observed, m: ConfusionMatrix) -> np.ndarray:
    """Quasi-frequencies ``M^-1 F'``; entries may come out negative.

    Works on a single 4-vector or a stack ``(..., 4)``.
    """
    cond = m.condition_number
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise np.linalg.LinAlgError(f"confusion matrix is ill-conditioned (cond = {cond:.3g})")
    f = np.asarray(freqs_observed, dtype=float)
    if np.any(np.abs(f.sum(axis=-1) - 1) > 1e-9):
        raise ValueError("observed frequencies must sum to 1")
    return np.linalg.solve(m.matrix, f.T).T if f.ndim > 1 else np.linalg.solve(m.matrix, f)


@dataclass(frozen=True)
class SystematicModel:
    """Imperfections injected at the preparation/measurement level.

    ``additive_theta_bias`` shifts the prepared state, which biases the
    (otherwise unbiased) estimate by the same vector. ``drift`` shifts it by
    ``rate * shot_index``. ``unitary_perturbation`` rotates the implemented
    POVM by angle ``epsilon`` about a seeded random axis.
    """

    kind: str = "none"
    epsilon: float = 0.0
    seed: int = 0
    bias: tuple = (0.0, 0.0, 0.0)
    rate: tuple = (0.0, 0.0, 0.0)

    KINDS = ("none", "unitary_perturbation", "additive_theta_bias", "drift")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown systematic kind {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        object.__setattr__(self, "bias", tuple(float(v) for v in self.bias))
        object.__setattr__(self, "rate", tuple(float(v) for v in self.rate))

    def perturbation(self) -> RotationSpec:
        if self.kind != "unitary_perturbation" or self.epsilon == 0:
            return RotationSpec.identity()
        axis = rngmod.stream(self.seed, "perturbation").normal(size=3)
        return RotationSpec.from_axis_angle(axis, self.epsilon)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


NO_SYSTEMATIC = SystematicModel()


@dataclass(frozen=True, eq=False)
class ShotRecord:
    outcomes: np.ndarray
    seed: int
    povm_params: StPovmParams | None
    true_theta: np.ndarray
    noise: ReadoutNoiseSpec | None = None
    systematic: SystematicModel = field(default=NO_SYSTEMATIC)

    def __len__(self):
        return len(self.outcomes)

    def counts(self) -> np.ndarray:
        return np.bincount(self.outcomes, minlength=4)

    def metadata(self) -> dict:
        return {
            "seed": int(self.seed),
            "n": len(self),
            "povm_params": self.povm_params.to_dict() if self.povm_params else None,
            "true_theta": [float(v) for v in self.true_theta],
            "noise": asdict(self.noise) if self.noise else None,
            "systematic": self.systematic.to_dict(),
        }

    def save(self, path) -> None:
        """Write as CSV (``.csv``) or compressed numpy (anything else)."""
        path = Path(path)
        meta = json.dumps(self.metadata(), sort_keys=True)
        if path.suffix == ".csv":
            body = "\n".join(map(str, self.outcomes.tolist()))
            path.write_text(f"# {meta}\noutcome\n{body}\n")
        else:
            with open(path, "wb") as fh:
                np.savez_compressed(fh, outcomes=self.outcomes, metadata=np.array(meta))

    @classmethod
    def load(cls, path) -> "ShotRecord":
        path = Path(path)
        if path.suffix == ".csv":
            with open(path) as fh:
                first = fh.readline()
                if not first.startswith("# "):
                    raise ValueError(f"{path}: missing metadata header")
                meta = json.loads(first[2:])
                if fh.readline().strip() != "outcome":
                    raise ValueError(f"{path}: missing column header")
                outcomes = np.loadtxt(fh, dtype=np.int8, ndmin=1)
        else:
            with np.load(path) as data:
                outcomes = data["outcomes"].astype(np.int8)
                meta = json.loads(str(data["metadata"]))
        if len(outcomes) != meta["n"]:
            raise ValueError(f"{path}: header says {meta['n']} shots, found {len(outcomes)}")
        p = meta["povm_params"]
        params = StPovmParams(p["r_p"], p["phi"], tuple(p["orientation"])) if p else None
        noise = ReadoutNoiseSpec(**meta["noise"]) if meta["noise"] else None
        return cls(
            outcomes, meta["seed"], params, np.array(meta["true_theta"]), noise,
            SystematicModel(**meta["systematic"]),
        )


def pure_decomposition(theta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a mixed state into two pure states sharing ``theta_y, theta_z``.

    Returns ``(theta_1, theta_2, p_1)`` with ``theta_1`` on the ``+x`` side;
    works on stacks ``(..., 3)``. A pure input gets ``p_1`` in {0, 1}.
    """
    t = as_theta(theta)
    s = np.sqrt(np.clip(1.0 - t[..., 1] ** 2 - t[..., 2] ** 2, 0.0, None))
    t1 = t.copy()
    t2 = t.copy()
    t1[..., 0] = s
    t2[..., 0] = -s
    with np.errstate(invalid="ignore", divide="ignore"):
        # P1 : P2 = |x - x2| : |x - x1|
        p1 = np.where(s > 1e-15, np.abs(t[..., 0] + s) / (2 * s), 1.0)
    return t1, t2, np.clip(p1, 0.0, 1.0)


def _element_bloch(elements: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    traces = np.real(np.trace(elements, axis1=1, axis2=2))
    vecs = np.real(np.einsum("kab,jba->kj", elements, PAULIS))
    return traces, vecs


def sample_shots(
    povm: QubitPovm,
    theta,
    n: int,
    seed: int,
    noise: ReadoutNoiseSpec | None = None,
    systematic: SystematicModel | None = None,
    jitter_radius: float = 0.0,
) -> ShotRecord:
    """Simulate ``n`` independent probes measured with ``povm``.

    Each probe prepares one of the two pure states of :func:`pure_decomposition`,
    is measured, and then (optionally) has its two readout bits flipped.
    ``jitter_radius`` replaces ``theta`` by a point drawn uniformly in a small
    ball around it, once per record.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    theta = as_theta(theta).astype(float)
    if np.linalg.norm(theta) > 1 + ATOL:
        raise ValueError("theta must lie in the unit ball")
    systematic = systematic or NO_SYSTEMATIC
    prepared = theta.copy()
    if jitter_radius > 0:
        prepared = prepared + random_bloch_vectors(rngmod.stream(seed, "jitter"), 1, jitter_radius)[0]
    if systematic.kind == "additive_theta_bias":
        prepared = prepared + np.asarray(systematic.bias)
    rate = np.asarray(systematic.rate) if systematic.kind == "drift" else None

    elements = povm.elements
    pert = systematic.perturbation()
    if systematic.kind == "unitary_perturbation":
        elements = np.einsum("ab,kbc,cd->kad", pert.unitary.conj().T, elements, pert.unitary)
    traces, vecs = _element_bloch(elements)

    def chunk(i):
        gen = rngmod.stream(seed, "shots", i)
        lo, hi = i * CHUNK, min(n, (i + 1) * CHUNK)
        m = hi - lo
        if rate is None:
            states = np.broadcast_to(prepared, (m, 3))
        else:
            states = prepared + np.arange(lo, hi)[:, None] * rate
        if np.any(np.linalg.norm(states, axis=-1) > 1 + ATOL):
            raise ValueError("systematic shift pushes the prepared state outside the unit ball")
        t1, t2, p1 = pure_decomposition(states)
        pick_first = gen.random(m) < p1
        pure = np.where(pick_first[:, None], t1, t2)
        probs = 0.5 * (traces + pure @ vecs.T)
        cum = np.cumsum(probs, axis=1)
        u = gen.random(m) * cum[:, -1]
        out = (u[:, None] >= cum[:, :-1]).sum(axis=1).astype(np.int8)
        if noise is not None:
            out = apply_readout_noise(out, noise, gen)
        return out

    n_chunks = -(-n // CHUNK)
    outcomes = np.concatenate(rngmod.map_chunks(chunk, n_chunks))
    outcomes.setflags(write=False)
    return ShotRecord(outcomes, seed, povm.params, theta, noise, systematic)


def frequencies(outcomes) -> np.ndarray:
    outcomes = np.asarray(outcomes)
    return np.bincount(outcomes, minlength=4) / outcomes.size


@dataclass(frozen=True)
class CalibrationOffset:
    """Systematic offset ``delta_theta`` of the estimator, with its standard error."""

    delta_theta: tuple
    n_calibration_shots: int
    std_err: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        d = np.asarray(self.delta_theta, dtype=float)
        if not np.all(np.isfinite(d)):
            raise ValueError("calibration offset must be finite")
        object.__setattr__(self, "delta_theta", tuple(float(v) for v in d))
        object.__setattr__(self, "std_err", tuple(float(v) for v in self.std_err))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.delta_theta)

    @staticmethod
    def expected_variance(r: float, n_calibration_shots: int) -> float:
        """Variance scale ``C_NH / n_calib`` of the total offset error."""
        return nh_bound(r) / n_calibration_shots

    @staticmethod
    def expected_std_err(r: float, n_calibration_shots: int) -> float:
        """Square root of :meth:`expected_variance`."""
        return float(np.sqrt(nh_bound(r) / n_calibration_shots))


ZERO_OFFSET = CalibrationOffset((0.0, 0.0, 0.0), 0)


def calibrate_offsets(
    povm_params: StPovmParams,
    center_theta,
    n_states: int,
    shots_per_state: int,
    seed: int,
    noise: ReadoutNoiseSpec | None = None,
    systematic: SystematicModel | None = None,
    confusion: ConfusionMatrix | None = None,
    radius: float = CALIBRATION_RADIUS,
) -> CalibrationOffset:
    """Estimate the estimator's offset from known states near ``center_theta``.

    States are drawn uniformly in a ball of ``radius`` around the centre (and
    inside the Bloch ball), each is measured with the same POVM, and the
    offset is the intercept of a slope-1 regression of estimate on truth,
    i.e. the mean difference. With ``noise`` and no explicit ``confusion`` the
    analytic confusion matrix is used for mitigation.
    """
    if n_states < 1:
        raise ValueError("n_states must be at least 1")
    center = as_theta(center_theta)
    gen = rngmod.stream(seed, "calibration-states")
    states = []
    while len(states) < n_states:
        cand = center + random_bloch_vectors(gen, 1, radius)[0]
        if np.linalg.norm(cand) <= 1:
            states.append(cand)
    povm = build_st_povm(povm_params)
    est = build_estimator(povm_params)
    if noise is not None and confusion is None:
        confusion = build_confusion_matrix(noise)
    diffs = np.empty((n_states, 3))
    for i, state in enumerate(states):
        rec = sample_shots(povm, state, shots_per_state, seed=int(gen.integers(2**62)),
                           noise=noise, systematic=systematic)
        f = frequencies(rec.outcomes)
        if confusion is not None:
            f = mitigate(f, confusion)
        diffs[i] = estimate_from_frequencies(est, f) - state
    delta = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / np.sqrt(n_states) if n_states > 1 else np.full(3, np.inf)
    return CalibrationOffset(tuple(delta), n_states * shots_per_state, tuple(se))


def apply_offset(theta_hat, offset: CalibrationOffset) -> np.ndarray:
    return as_theta(theta_hat) - offset.vector
