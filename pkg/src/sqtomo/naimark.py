"""Naimark dilation of a four-outcome rank-1 qubit POVM to a two-qubit unitary.

Ordering conventions: the probe is the first tensor factor and the ancilla
(initialised in ``|0>``) the second, so ``|v> (x) |0_a>`` occupies basis
indices 0 and 2. POVM element ``k`` is read out as computational basis state
``|e_k>`` with ``z -> |00>, 1 -> |01>, 2 -> |10>, 3 -> |11>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .povm import QubitPovm
from .qstate import ATOL, bloch_to_density, random_bloch_vectors, validate_density

ISOMETRY_COLUMNS = (0, 2)
COMPLETION_COLUMNS = (1, 3)
_KET0 = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)


@dataclass(frozen=True, eq=False)
class DilationUnitary:
    unitary: np.ndarray
    source_povm: QubitPovm

    def isometry(self) -> np.ndarray:
        """The 4x2 block acting on the ancilla-``|0>`` subspace."""
        return self.unitary[:, ISOMETRY_COLUMNS]


def _complete_orthonormal(fixed: np.ndarray) -> np.ndarray:
    """Extend orthonormal columns to a full basis by pivoted modified Gram-Schmidt.

    Candidates are the canonical basis vectors; at each step the one with the
    largest residual norm wins, ties going to the lowest index.
    """
    dim = fixed.shape[0]
    basis = [fixed[:, i] for i in range(fixed.shape[1])]
    added = []
    while len(basis) < dim:
        best, best_norm = None, -1.0
        for idx in range(dim):
            v = np.zeros(dim, dtype=complex)
            v[idx] = 1.0
            for _ in range(2):  # second pass restores orthogonality lost to rounding
                for q in basis:
                    v = v - (q.conj() @ v) * q
            n = np.linalg.norm(v)
            if n > best_norm + 1e-14:
                best, best_norm = v, n
        if best_norm < 1e-8:
            raise ValueError("rank-deficient isometry block; cannot complete the unitary")
        q = best / best_norm
        basis.append(q)
        added.append(q)
    return np.column_stack(added)


def dilate(povm: QubitPovm) -> DilationUnitary:
    """Build ``U2`` with ``<e_i| U2 (|v> (x) |0_a>) = sqrt(r_i) <psi_i|v>``.

    Raises
    ------
    ValueError
        For POVMs that are not four rank-1 elements, or whose isometry block
        is not orthonormal (i.e. the POVM is incomplete).
    """
    if len(povm) != 4:
        raise ValueError("dilation to two qubits needs exactly four POVM elements")
    amps, kets = povm.rank_one_decomposition()
    iso = np.sqrt(amps)[:, None] * kets.conj()
    if not np.allclose(iso.conj().T @ iso, np.eye(2), atol=1e-10, rtol=0):
        raise ValueError("POVM is incomplete: isometry block is not orthonormal")
    u = np.zeros((4, 4), dtype=complex)
    u[:, ISOMETRY_COLUMNS] = iso
    u[:, COMPLETION_COLUMNS] = _complete_orthonormal(iso)
    u.setflags(write=False)
    return DilationUnitary(u, povm)


def apply_dilated_measurement(d: DilationUnitary, rho) -> np.ndarray:
    """Basis-measurement distribution of ``U2 (rho (x) |0><0|) U2^dagger``."""
    rho = validate_density(rho)
    big = np.kron(rho, _KET0)
    out = d.unitary @ big @ d.unitary.conj().T
    return np.real(np.diag(out)).copy()


def verify_dilation(d: DilationUnitary, n_random_states: int, seed: int = 0) -> float:
    """Max absolute deviation between dilated and direct POVM probabilities."""
    if n_random_states < 1:
        raise ValueError("n_random_states must be at least 1")
    rng = np.random.default_rng(seed)
    thetas = random_bloch_vectors(rng, n_random_states)
    els = d.source_povm.elements
    worst = 0.0
    for theta in thetas:
        rho = bloch_to_density(theta)
        direct = np.real(np.einsum("kab,ba->k", els, rho))
        worst = max(worst, float(np.abs(apply_dilated_measurement(d, rho) - direct).max()))
    return worst


def unitarity_error(d: DilationUnitary) -> float:
    u = d.unitary
    return float(np.abs(u.conj().T @ u - np.eye(4)).max())


def is_valid(d: DilationUnitary) -> bool:
    return unitarity_error(d) < ATOL
