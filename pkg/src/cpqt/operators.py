"""Dense complex linear algebra for small open quantum systems.

Conventions
-----------
* States and operators are complex ``(N, N)`` numpy arrays.  Normalized
  density operators have unit trace; unnormalized ("linear") states carry
  likelihood information in their trace.
* The qubit basis ordering is ``(|e>, |g>) = (index 0, index 1)`` and the
  lowering operator is ``sigma_minus = |g><e|``.  File-facing code labels
  populations ``ee``/``gg`` rather than by index to avoid ambiguity.
* Superoperator matrices act on column-stacked vectorizations,
  ``vec(A @ X @ B) = kron(B.T, A) @ vec(X)``.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import (
    DimensionMismatchError,
    NotHermitianError,
    NotPureError,
    WeightUnderflowError,
)

__all__ = [
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "SIGMA_MINUS",
    "SIGMA_PLUS",
    "KET_E",
    "KET_G",
    "TRACE_FLOOR",
    "BlochVector",
    "dag",
    "hermitize",
    "is_hermitian",
    "check_density_operator",
    "pure_state",
    "dissipator",
    "heisenberg_dissipator",
    "superop_g",
    "superop_h",
    "purity",
    "fidelity_to_pure",
    "bloch",
    "normalize",
    "unitary_of_hamiltonian",
    "vec",
    "unvec",
    "liouvillian_matrix",
    "liouvillian_propagate",
]

# Basis ordering (|e>, |g>): excited first.
KET_E = np.array([1.0, 0.0], dtype=complex)
KET_G = np.array([0.0, 1.0], dtype=complex)

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
SIGMA_MINUS = np.outer(KET_G, KET_E.conj())  # |g><e|
SIGMA_PLUS = SIGMA_MINUS.conj().T

#: Traces below this are treated as numerically dead weights rather than
#: being divided through (which would overflow).
TRACE_FLOOR = 1e-280

HERMITIAN_ATOL = 1e-12
EIGENVALUE_ATOL = 1e-10


class BlochVector(NamedTuple):
    """Qubit expectation values ``(x, y, z)`` of the Pauli operators."""

    x: float
    y: float
    z: float


def dag(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return a.conj().T


def hermitize(rho: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian part, ``(rho + rho†)/2``.

    Applied after every map application to keep roundoff from accumulating
    an anti-Hermitian component over long runs.
    """
    return 0.5 * (rho + rho.conj().T)


def is_hermitian(a: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    return bool(np.max(np.abs(a - a.conj().T)) <= atol)


def _check_square(a: np.ndarray, name: str = "operator") -> int:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"{name} must be a square matrix, got shape {a.shape}")
    return a.shape[0]


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"incompatible shapes {a.shape} and {b.shape}")


def check_density_operator(
    rho: np.ndarray,
    *,
    normalized: bool = True,
    herm_atol: float = HERMITIAN_ATOL,
    eig_atol: float = EIGENVALUE_ATOL,
) -> None:
    """Validate the density-operator invariants, raising on violation.

    Checks Hermiticity (entrywise ``herm_atol``), positive real trace
    (equal to one within ``herm_atol`` if ``normalized``), eigenvalues
    ``>= -eig_atol``, and normalized purity ``<= 1 + herm_atol``.
    """
    _check_square(rho, "density operator")
    if not is_hermitian(rho, herm_atol):
        raise NotHermitianError("state is not Hermitian within tolerance")
    tr = np.trace(rho).real
    if tr <= 0.0:
        raise ValueError(f"state trace must be positive, got {tr}")
    if normalized and abs(tr - 1.0) > herm_atol:
        raise ValueError(f"state trace deviates from one by {abs(tr - 1.0):.3e}")
    evals = np.linalg.eigvalsh(hermitize(rho))
    if evals.min() < -eig_atol:
        raise ValueError(f"state has negative eigenvalue {evals.min():.3e}")
    pur = np.trace(rho @ rho).real / tr**2
    if pur > 1.0 + herm_atol:
        raise ValueError(f"normalized purity {pur} exceeds one")


def pure_state(ket: np.ndarray) -> np.ndarray:
    """Projector onto a (normalized) ket."""
    ket = np.asarray(ket, dtype=complex)
    ket = ket / np.linalg.norm(ket)
    return np.outer(ket, ket.conj())


def dissipator(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Lindblad dissipator ``a rho a† - (1/2){a†a, rho}``.

    The result is Hermitian and traceless for Hermitian ``rho``.
    """
    _check_same_dim(np.asarray(a), np.asarray(rho))
    n = a.conj().T @ a
    return a @ rho @ a.conj().T - 0.5 * (n @ rho + rho @ n)


def heisenberg_dissipator(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Adjoint (Heisenberg-picture) dissipator ``a† x a - (1/2){a†a, x}``.

    Satisfies ``Tr[dissipator(a, rho) x] == Tr[rho heisenberg_dissipator(a, x)]``.
    """
    _check_same_dim(np.asarray(a), np.asarray(x))
    n = a.conj().T @ a
    return a.conj().T @ x @ a - 0.5 * (n @ x + x @ n)


def superop_g(c: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Normalized jump superoperator ``c rho c† / Tr[c rho c†] - rho``.

    Raises
    ------
    DarkStateError
        If ``Tr[c rho c†]`` vanishes (the state is dark for ``c``): the
        caller must not have sampled a jump here.
    """
    from .errors import DarkStateError

    _check_same_dim(np.asarray(c), np.asarray(rho))
    w = c @ rho @ c.conj().T
    tr = np.trace(w).real
    if tr <= TRACE_FLOOR:
        raise DarkStateError("jump from a dark state: Tr[c rho c+] vanishes")
    return w / tr - rho


def superop_h(c: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Innovation superoperator ``(c - <c>) rho + h.c.`` for normalized rho."""
    _check_same_dim(np.asarray(c), np.asarray(rho))
    expect = np.trace(c @ rho)
    d = (c - expect * np.eye(c.shape[0])) @ rho
    return d + d.conj().T


def purity(rho: np.ndarray) -> float:
    """``Tr[rho^2]`` for a normalized state."""
    return float(np.trace(rho @ rho).real)


def fidelity_to_pure(rho: np.ndarray, rho_pure: np.ndarray, pure_atol: float = 1e-9) -> float:
    """Overlap fidelity ``Tr[rho rho_pure]`` against a pure reference state.

    Equals the Uhlmann fidelity (squared overlap convention) when one
    argument is pure, which is why purity of ``rho_pure`` is enforced.
    """
    _check_same_dim(np.asarray(rho), np.asarray(rho_pure))
    if abs(purity(rho_pure) - 1.0) > pure_atol:
        raise NotPureError(f"reference state has purity {purity(rho_pure)}, expected 1")
    return float(np.trace(rho @ rho_pure).real)


def bloch(rho: np.ndarray) -> BlochVector:
    """Bloch vector ``(Tr[sx rho], Tr[sy rho], Tr[sz rho])`` of a qubit state."""
    if np.asarray(rho).shape != (2, 2):
        raise DimensionMismatchError("Bloch coordinates are defined for 2x2 states only")
    return BlochVector(
        float(np.trace(SIGMA_X @ rho).real),
        float(np.trace(SIGMA_Y @ rho).real),
        float(np.trace(SIGMA_Z @ rho).real),
    )


def normalize(rho_tilde: np.ndarray) -> tuple[np.ndarray, float]:
    """Return ``(rho_tilde / tr, tr)`` with ``tr = Tr[rho_tilde]``.

    Raises
    ------
    WeightUnderflowError
        If the trace is at or below :data:`TRACE_FLOOR`; dividing through
        would overflow, so the caller should flag the weight as dead instead.
    """
    tr = np.trace(rho_tilde).real
    if tr <= TRACE_FLOOR:
        raise WeightUnderflowError(f"state trace {tr:.3e} below underflow floor")
    return rho_tilde / tr, float(tr)


def unitary_of_hamiltonian(h: np.ndarray, dt: float) -> np.ndarray:
    """Exact one-step evolution operator ``exp(-i h dt)`` for Hermitian ``h``.

    Computed by eigendecomposition, so it is unitary to machine precision
    for any step size (no series truncation).
    """
    _check_square(h, "Hamiltonian")
    if not is_hermitian(h):
        raise NotHermitianError("Hamiltonian must be Hermitian")
    evals, vecs = np.linalg.eigh(h)
    phases = np.exp(-1j * evals * dt)
    return (vecs * phases) @ vecs.conj().T


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec` for square matrices."""
    v = np.asarray(v)
    n = int(round(np.sqrt(v.size)))
    return v.reshape(n, n, order="F")


def liouvillian_matrix(h: np.ndarray, lindblads: Sequence[np.ndarray]) -> np.ndarray:
    """Matrix of the Lindblad generator on column-stacked states.

    ``L = -i(I⊗H - H^T⊗I) + sum_k [conj(a_k)⊗a_k - (I⊗n_k + n_k^T⊗I)/2]``
    with ``n_k = a_k† a_k``.
    """
    n = _check_square(h, "Hamiltonian")
    eye = np.eye(n)
    liou = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for a in lindblads:
        _check_same_dim(np.asarray(a), h)
        nk = a.conj().T @ a
        liou += np.kron(a.conj(), a) - 0.5 * (np.kron(eye, nk) + np.kron(nk.T, eye))
    return liou


def liouvillian_propagate(
    h: np.ndarray,
    lindblads: Sequence[np.ndarray],
    rho0: np.ndarray,
    t: float,
) -> np.ndarray:
    """Exact master-equation solution ``exp(L t)`` applied to ``rho0``.

    Uses the dense ``N^2 x N^2`` superoperator matrix exponential
    (scaling-and-squaring Pade via :func:`scipy.linalg.expm`).
    """
    if t < 0:
        raise ValueError("propagation time must be non-negative")
    if not is_hermitian(np.asarray(h)):
        raise NotHermitianError("Hamiltonian must be Hermitian")
    if t == 0.0:
        return np.array(rho0, dtype=complex)
    liou = liouvillian_matrix(np.asarray(h, dtype=complex), lindblads)
    out = unvec(expm(liou * t) @ vec(np.asarray(rho0, dtype=complex)))
    return hermitize(out)
