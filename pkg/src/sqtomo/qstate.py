"""Bloch-vector and density-matrix algebra for a single qubit.

Bloch vectors are handled as plain length-3 float arrays throughout the
package; :class:`BlochVector` is a thin immutable wrapper used at API
boundaries where the physicality flag matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ATOL = 1e-12

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])


class UnphysicalStateError(ValueError):
    """Raised when a Bloch vector lies outside the unit ball."""


@dataclass(frozen=True)
class BlochVector:
    """Real 3-vector parameterising ``rho = (I + sigma . theta) / 2``.

    Vectors longer than one are allowed so that unbiased estimates can be
    represented without truncation; check :attr:`physical` before treating
    one as a state.
    """

    x: float
    y: float
    z: float

    @classmethod
    def from_array(cls, theta) -> "BlochVector":
        t = np.asarray(theta, dtype=float).reshape(3)
        return cls(float(t[0]), float(t[1]), float(t[2]))

    def __array__(self, dtype=None, copy=None):
        return np.array([self.x, self.y, self.z], dtype=dtype or float)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def r(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    @property
    def physical(self) -> bool:
        return self.r <= 1 + ATOL


def as_theta(theta) -> np.ndarray:
    """Coerce a Bloch vector (array-like or :class:`BlochVector`) to an array."""
    t = np.asarray(theta, dtype=float)
    if t.shape[-1] != 3:
        raise ValueError(f"Bloch vector must have 3 components, got shape {t.shape}")
    return t


def bloch_to_density(theta) -> np.ndarray:
    """Return ``(I + sigma . theta) / 2``.

    Raises
    ------
    UnphysicalStateError
        If ``|theta| > 1 + 1e-12``.
    """
    t = as_theta(theta)
    if np.linalg.norm(t) > 1 + ATOL:
        raise UnphysicalStateError(f"|theta| = {np.linalg.norm(t):.6g} exceeds 1")
    return 0.5 * (IDENTITY + np.einsum("j,jab->ab", t, PAULIS))


def validate_density(rho, atol: float = ATOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=atol, rtol=0):
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > atol:
        raise ValueError("density matrix does not have unit trace")
    if np.linalg.eigvalsh(rho).min() < -atol:
        raise ValueError("density matrix has a negative eigenvalue")
    return rho


def density_to_bloch(rho) -> np.ndarray:
    """Return ``theta_j = Tr[rho sigma_j]``."""
    rho = validate_density(rho)
    return np.real(np.einsum("ab,jba->j", rho, PAULIS))


def trace_norm_distance(a, b) -> float:
    """Trace norm ``Tr|a - b|`` of the difference of two density matrices.

    For qubits this equals the Euclidean distance between Bloch vectors.
    """
    d = validate_density(a) - validate_density(b)
    return float(np.abs(np.linalg.eigvalsh(d)).sum())


def _su2_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    # exp(-i angle/2 n.sigma) implements a right-handed rotation by `angle` about n
    n_sigma = np.einsum("j,jab->ab", axis, PAULIS)
    return np.cos(angle / 2) * IDENTITY - 1j * np.sin(angle / 2) * n_sigma


def _so3_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


@dataclass(frozen=True, eq=False)
class RotationSpec:
    """A frame change, held both as an SO(3) matrix and its SU(2) lift.

    ``matrix @ theta`` expresses a lab-frame Bloch vector in the new frame,
    and ``unitary @ rho(theta) @ unitary^dagger == rho(matrix @ theta)``.
    """

    matrix: np.ndarray
    unitary: np.ndarray

    @classmethod
    def identity(cls) -> "RotationSpec":
        return cls(np.eye(3), IDENTITY.copy())

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "RotationSpec":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return cls(_so3_from_axis_angle(axis, angle), _su2_from_axis_angle(axis, angle))

    def apply(self, theta) -> np.ndarray:
        return as_theta(theta) @ self.matrix.T

    def apply_inverse(self, theta) -> np.ndarray:
        return as_theta(theta) @ self.matrix

    def conjugate(self, op: np.ndarray) -> np.ndarray:
        """Map an operator into the rotated frame: ``U op U^dagger``."""
        return self.unitary @ op @ self.unitary.conj().T

    def inverse(self) -> "RotationSpec":
        return RotationSpec(self.matrix.T.copy(), self.unitary.conj().T.copy())

    def then(self, other: "RotationSpec") -> "RotationSpec":
        """Compose: apply ``self`` first, then ``other``."""
        return RotationSpec(other.matrix @ self.matrix, other.unitary @ self.unitary)


def frame_rotation(target_axis) -> RotationSpec:
    """Rotation taking ``target_axis`` onto ``+z``.

    Uses the axis-angle rotation about ``target_axis x z``; the antipodal
    case is a fixed half turn about ``x``.
    """
    n = as_theta(target_axis)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("target axis must be non-zero")
    n = n / norm
    z = np.array([0.0, 0.0, 1.0])
    cross = np.cross(n, z)
    s = np.linalg.norm(cross)
    c = float(n @ z)
    if s < 1e-15:
        if c > 0:
            return RotationSpec.identity()
        return RotationSpec.from_axis_angle([1.0, 0.0, 0.0], np.pi)
    return RotationSpec.from_axis_angle(cross / s, float(np.arctan2(s, c)))


def rotate_frame(theta, target_axis) -> tuple[np.ndarray, RotationSpec]:
    """Express ``theta`` in a frame whose ``+z`` axis lies along ``target_axis``.

    Returns the rotated vector and the :class:`RotationSpec` that produced it;
    ``spec.apply_inverse`` maps estimates back to the original frame.
    """
    rot = frame_rotation(target_axis)
    return rot.apply(theta), rot


def random_bloch_vectors(rng: np.random.Generator, size: int, radius: float = 1.0) -> np.ndarray:
    """Points drawn uniformly from the ball of the given radius."""
    direction = rng.normal(size=(size, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(size) ** (1 / 3)
    return direction * r[:, None]


def frame_rotation_matrices(axes) -> np.ndarray:
    """Vectorised SO(3) part of :func:`frame_rotation` for a stack of axes ``(m, 3)``.

    Zero axes get the identity.
    """
    n = np.asarray(axes, dtype=float)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = np.divide(n, norm, out=np.tile([0.0, 0.0, 1.0], (len(n), 1)), where=norm > 0)
    cross = np.stack([n[:, 1], -n[:, 0], np.zeros(len(n))], axis=-1)  # n x z
    s = np.linalg.norm(cross, axis=-1)
    c = n[:, 2]
    k = np.divide(cross, s[:, None], out=np.zeros_like(cross), where=s[:, None] >= 1e-15)
    kx = np.zeros((len(n), 3, 3))
    kx[:, 0, 1], kx[:, 0, 2] = -k[:, 2], k[:, 1]
    kx[:, 1, 0], kx[:, 1, 2] = k[:, 2], -k[:, 0]
    kx[:, 2, 0], kx[:, 2, 1] = -k[:, 1], k[:, 0]
    out = np.eye(3) + s[:, None, None] * kx + (1 - c)[:, None, None] * (kx @ kx)
    flip = (s < 1e-15) & (c < 0)
    out[flip] = np.diag([1.0, -1.0, -1.0])
    return out
