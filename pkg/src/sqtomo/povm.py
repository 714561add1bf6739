"""Squashed-tetrahedron (ST) and SIC POVMs with their unbiased linear estimator.

All ST quantities are first built in the *canonical frame*: the probe state
lies on ``+z``, the ``Pi_z`` element points along ``-z`` and the azimuth of
the first leg is zero. A :class:`~sqtomo.qstate.RotationSpec` maps lab-frame
Bloch vectors into that frame, which is how orientation and ``phi`` enter.

The ``st_*`` helpers broadcast over arrays of ``r_p`` so that Monte Carlo and
quadrature code can evaluate many POVMs at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .qstate import (
    ATOL,
    PAULIS,
    IDENTITY,
    RotationSpec,
    as_theta,
    bloch_to_density,
    frame_rotation,
    validate_density,
)

ST_LABELS = ("z", "1", "2", "3")
_LEG_ANGLES = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])


class PureStateDegeneracyError(ValueError):
    """The ST construction diverges as the stretching parameter reaches 1."""


def _check_rp(r_p) -> np.ndarray:
    r_p = np.asarray(r_p, dtype=float)
    if np.any(~(r_p >= 0)):
        raise ValueError("stretching parameter r_p must be non-negative (and not NaN)")
    if np.any(r_p >= 1):
        raise PureStateDegeneracyError(
            "r_p >= 1: pure-state degeneracy, the squashed tetrahedron is undefined"
        )
    return r_p


def st_amplitudes(r_p):
    """Return ``(r_z, r_leg, A0, A1)`` for stretching parameter(s) ``r_p``."""
    r_p = _check_rp(r_p)
    r_z = 1.0 / (1.0 + np.sqrt((1 + r_p) / (1 - r_p)))
    r_leg = (2.0 - r_z) / 3.0
    a0 = 1.0 / np.sqrt(3.0 * r_leg)
    a1 = np.sqrt(1.0 - 1.0 / (3.0 * r_leg))
    return r_z, r_leg, a0, a1


def st_bloch_elements(r_p):
    """Traces ``(..., 4)`` and unit Bloch directions ``(..., 4, 3)`` in the canonical frame."""
    r_z, r_leg, a0, a1 = st_amplitudes(r_p)
    shape = np.shape(r_z)
    traces = np.stack([r_z, r_leg, r_leg, r_leg], axis=-1)
    dirs = np.zeros(shape + (4, 3))
    dirs[..., 0, 2] = -1.0
    sxy = 2.0 * a0 * a1
    dirs[..., 1:, 0] = sxy[..., None] * np.cos(_LEG_ANGLES)
    dirs[..., 1:, 1] = sxy[..., None] * np.sin(_LEG_ANGLES)
    dirs[..., 1:, 2] = (a0**2 - a1**2)[..., None]
    return traces, dirs


def st_estimator_matrix(r_p) -> np.ndarray:
    """The 3x4 estimator matrix(es) in the canonical frame, shape ``(..., 3, 4)``."""
    r_p = _check_rp(r_p)
    a = np.sqrt(1.0 + np.sqrt((1 - r_p) / (1 + r_p)))
    b = -1.0 - 2.0 * np.sqrt((1 + r_p) / (1 - r_p))
    out = np.zeros(np.shape(r_p) + (3, 4))
    out[..., 0, 1] = 2 * a
    out[..., 0, 2] = -a
    out[..., 0, 3] = -a
    out[..., 1, 2] = np.sqrt(3) * a
    out[..., 1, 3] = -np.sqrt(3) * a
    out[..., 2, 0] = b
    out[..., 2, 1:] = 1.0
    return out


def st_probabilities(r_p, theta_canonical) -> np.ndarray:
    """Outcome probabilities ``p_k = r_k (1 + n_k . theta) / 2`` in the canonical frame."""
    traces, dirs = st_bloch_elements(r_p)
    t = np.asarray(theta_canonical, dtype=float)
    return 0.5 * traces * (1.0 + np.einsum("...kj,...j->...k", dirs, t))


def st_expected_mse(r_p, theta_canonical) -> np.ndarray:
    """Single-probe expected squared error ``sum_jk p_k (E_jk - theta_j)^2``."""
    t = np.asarray(theta_canonical, dtype=float)
    p = st_probabilities(r_p, t)
    est = st_estimator_matrix(r_p)
    diff = est - t[..., :, None]
    return np.einsum("...k,...jk->...", p, diff**2)


def st_covariance(r_p, theta_canonical) -> np.ndarray:
    """Single-probe covariance of the estimator, ``(..., 3, 3)``."""
    t = np.asarray(theta_canonical, dtype=float)
    p = st_probabilities(r_p, t)
    est = st_estimator_matrix(r_p)
    second = np.einsum("...k,...ik,...jk->...ij", p, est, est)
    return second - t[..., :, None] * t[..., None, :]


@dataclass(frozen=True)
class StPovmParams:
    """Stretching parameter, leg azimuth and the probe-alignment axis."""

    r_p: float
    phi: float = 0.0
    orientation: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        _check_rp(self.r_p)
        o = np.asarray(self.orientation, dtype=float).reshape(3)
        n = np.linalg.norm(o)
        if n == 0:
            raise ValueError("orientation must be a non-zero vector")
        if abs(n - 1) > 4 * np.finfo(float).eps:  # keep already-unit axes bit-exact
            o = o / n
        object.__setattr__(self, "orientation", tuple(float(v) for v in o))
        object.__setattr__(self, "r_p", float(self.r_p))
        object.__setattr__(self, "phi", float(self.phi))

    def frame(self) -> RotationSpec:
        """Lab frame -> canonical frame (orientation on +z, then undo phi)."""
        return frame_rotation(self.orientation).then(
            RotationSpec.from_axis_angle([0.0, 0.0, 1.0], -self.phi)
        )

    def to_dict(self) -> dict:
        return {"r_p": self.r_p, "phi": self.phi, "orientation": list(self.orientation)}


@dataclass(frozen=True, eq=False)
class QubitPovm:
    """Ordered qubit POVM; validated for positivity and completeness on creation."""

    elements: np.ndarray
    labels: tuple = ST_LABELS
    params: StPovmParams | None = None

    def __post_init__(self):
        el = np.array(self.elements, dtype=complex)
        if el.ndim != 3 or el.shape[1:] != (2, 2):
            raise ValueError(f"POVM elements must have shape (k, 2, 2), got {el.shape}")
        if len(self.labels) != len(el):
            raise ValueError("one label per element required")
        for i, e in enumerate(el):
            if not np.allclose(e, e.conj().T, atol=ATOL, rtol=0):
                raise ValueError(f"element {self.labels[i]} is not Hermitian")
            if np.linalg.eigvalsh(e).min() < -ATOL:
                raise ValueError(f"element {self.labels[i]} is not positive semidefinite")
        if not np.allclose(el.sum(axis=0), IDENTITY, atol=ATOL, rtol=0):
            raise ValueError("POVM elements do not sum to the identity")
        el.setflags(write=False)
        object.__setattr__(self, "elements", el)
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self):
        return len(self.elements)

    @property
    def traces(self) -> np.ndarray:
        return np.real(np.trace(self.elements, axis1=1, axis2=2))

    def bloch_vectors(self) -> np.ndarray:
        """Bloch vector of each element, scaled by its trace (``Pi = (t I + v . sigma)/2``)."""
        return np.real(np.einsum("kab,jba->kj", self.elements, PAULIS))

    def gram(self) -> np.ndarray:
        return np.real(np.einsum("iab,jba->ij", self.elements, self.elements))

    def rank_one_decomposition(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(r_i, psi_i)`` with ``Pi_i = r_i |psi_i><psi_i|``.

        Raises ``ValueError`` if any element has rank above one.
        """
        amps, kets = [], []
        for label, e in zip(self.labels, self.elements):
            w, v = np.linalg.eigh(e)
            if w[0] > ATOL:
                raise ValueError(f"element {label} is not rank-1")
            amps.append(w[1])
            kets.append(v[:, 1])
        return np.array(amps), np.array(kets)


def build_st_povm(params: StPovmParams) -> QubitPovm:
    """Squashed-tetrahedron POVM for the given parameters.

    ``Pi_z`` points opposite the orientation axis; the three legs form an
    equilateral triangle on the other side, with azimuths ``phi + 2 pi k / 3``
    in the orientation-aligned frame.
    """
    traces, dirs = st_bloch_elements(params.r_p)
    canonical = 0.5 * traces[:, None, None] * (
        IDENTITY + np.einsum("kj,jab->kab", dirs, PAULIS)
    )
    # lab element U^dagger Pi U, so that Tr[Pi_lab rho(theta)] = Tr[Pi rho(R theta)]
    u = params.frame().unitary
    elements = np.einsum("ba,kbc,cd->kad", u.conj(), canonical, u)
    # symmetrise away rounding from the conjugation
    elements = 0.5 * (elements + elements.conj().transpose(0, 2, 1))
    return QubitPovm(elements, ST_LABELS, params)


def build_sic_povm(orientation=(0.0, 0.0, 1.0), phi: float = 0.0) -> QubitPovm:
    """The SIC-POVM: the ``r_p = 0`` member of the ST family."""
    return build_st_povm(StPovmParams(0.0, phi, tuple(orientation)))


def outcome_probabilities(povm: QubitPovm, rho) -> np.ndarray:
    """``p_k = Tr[Pi_k rho]``."""
    rho = validate_density(rho)
    return np.real(np.einsum("kab,ba->k", povm.elements, rho))


@dataclass(frozen=True, eq=False)
class LinearEstimator:
    """Linear map from outcome frequencies to a Bloch-vector estimate.

    ``matrix`` acts in the POVM's canonical frame; ``rotation`` maps lab
    vectors into that frame.
    """

    matrix: np.ndarray
    rotation: RotationSpec = field(default_factory=RotationSpec.identity)

    @property
    def lab_matrix(self) -> np.ndarray:
        return self.rotation.matrix.T @ self.matrix

    def estimate(self, freqs) -> np.ndarray:
        return estimate_from_frequencies(self, freqs)


def build_estimator(params: StPovmParams) -> LinearEstimator:
    return LinearEstimator(st_estimator_matrix(params.r_p), params.frame())


def estimate_from_frequencies(
    est: LinearEstimator, freqs, rotation: RotationSpec | None = None, atol: float = 1e-9
) -> np.ndarray:
    """Apply the estimator to frequency 4-vector(s) and map back to the lab frame.

    Negative entries (mitigated quasi-frequencies) are accepted; each vector
    must still sum to one. The result may lie outside the unit ball.
    """
    f = np.asarray(freqs, dtype=float)
    if np.any(np.abs(f.sum(axis=-1) - 1) > atol):
        raise ValueError("frequencies must sum to 1")
    rot = est.rotation if rotation is None else rotation
    canonical = f @ est.matrix.T
    return rot.apply_inverse(canonical)


def expected_mse(params: StPovmParams, theta) -> float:
    """Expected single-probe squared trace-norm error of the ST estimator at ``theta``."""
    t = as_theta(theta)
    if np.linalg.norm(t) > 1 + ATOL:
        raise ValueError("theta must lie in the unit ball")
    return float(st_expected_mse(params.r_p, params.frame().apply(t)))


def is_unphysical(theta_hat) -> np.ndarray:
    return np.linalg.norm(as_theta(theta_hat), axis=-1) > 1 + ATOL


def povm_to_json(povm: QubitPovm) -> str:
    payload = {
        "labels": list(povm.labels),
        "elements": [
            [[[float(z.real), float(z.imag)] for z in row] for row in e] for e in povm.elements
        ],
        "params": povm.params.to_dict() if povm.params is not None else None,
    }
    return json.dumps(payload, indent=2)


def povm_from_json(text: str) -> QubitPovm:
    payload = json.loads(text)
    el = np.array(payload["elements"], dtype=float)
    elements = el[..., 0] + 1j * el[..., 1]
    p = payload.get("params")
    params = None
    if p is not None:
        params = StPovmParams(p["r_p"], p.get("phi", 0.0), tuple(p.get("orientation", (0, 0, 1))))
    labels = payload.get("labels") or [str(i) for i in range(len(elements))]
    return QubitPovm(elements, tuple(labels), params)


def probabilities_for_state(povm: QubitPovm, theta) -> np.ndarray:
    return outcome_probabilities(povm, bloch_to_density(theta))
