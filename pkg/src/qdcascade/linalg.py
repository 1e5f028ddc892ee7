"""Dense complex linear algebra for the three-level cascade.

Conventions used throughout the package: hbar = 1, times in ps, angular
frequencies in rad/ps. The level basis is fixed to (g, x, xx) with indices
0, 1, 2. Density matrices are vectorized row-major, so that
``vec(A @ rho @ B) == kron(A, B.T) @ vec(rho)``.
"""
from __future__ import annotations

import numpy as np

from .errors import DomainError

G, X, XX = 0, 1, 2
LEVELS = {"g": G, "x": X, "xx": XX}
DIM = 3

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-9


def ghz_to_rad_per_ps(f_ghz: float) -> float:
    """Convert a frequency in GHz to an angular frequency in rad/ps."""
    return 2.0 * np.pi * f_ghz * 1e-3


def _level_index(level) -> int:
    if isinstance(level, str):
        try:
            return LEVELS[level.lower()]
        except KeyError:
            raise DomainError(f"unknown level {level!r}; expected one of g, x, xx") from None
    if isinstance(level, (int, np.integer)) and not isinstance(level, bool) and 0 <= level < DIM:
        return int(level)
    raise DomainError(f"invalid level index {level!r}")


def sigma(i, j) -> np.ndarray:
    """Transition operator |i><j| in the (g, x, xx) basis.

    Levels may be given by name ('g', 'x', 'xx') or index (0, 1, 2).
    """
    m = np.zeros((DIM, DIM), dtype=complex)
    m[_level_index(i), _level_index(j)] = 1.0
    return m


def _as_square(m, name="matrix") -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name} has non-finite entries")
    return m


def dissipator(L, rate: float, rho) -> np.ndarray:
    """Lindblad dissipator (rate/2) (2 L rho L^+ - L^+ L rho - rho L^+ L)."""
    L = _as_square(L, "L")
    rho = _as_square(rho, "rho")
    if L.shape != rho.shape:
        raise DomainError(f"dimension mismatch: L is {L.shape}, rho is {rho.shape}")
    Ld = L.conj().T
    LdL = Ld @ L
    return 0.5 * rate * (2.0 * L @ rho @ Ld - LdL @ rho - rho @ LdL)


def hermitian_eigen(m, tol: float = 1e-8):
    """Eigen-decomposition of a Hermitian matrix.

    Returns ``(eigenvalues, eigenvectors)`` with real eigenvalues in ascending
    order and eigenvectors as columns.
    """
    m = _as_square(m)
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.conj().T)) > tol * scale:
        raise DomainError("matrix is not Hermitian")
    herm = 0.5 * (m + m.conj().T)
    return np.linalg.eigh(herm)


def min_eigenvalue(rho) -> float:
    rho = np.asarray(rho)
    herm = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    return np.linalg.eigvalsh(herm)[..., 0]


def check_density_matrix(rho, dim: int | None = None,
                         herm_tol: float = HERMITIAN_TOL,
                         trace_tol: float = TRACE_TOL,
                         pos_tol: float = POSITIVITY_TOL) -> np.ndarray:
    """Validate a density matrix, raising DomainError on any violation."""
    rho = _as_square(rho, "rho")
    if dim is not None and rho.shape != (dim, dim):
        raise DomainError(f"expected a {dim}x{dim} density matrix, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise DomainError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > trace_tol:
        raise DomainError(f"density matrix trace {np.trace(rho).real:.12g} != 1")
    if min_eigenvalue(rho) < -pos_tol:
        raise DomainError("density matrix is not positive semidefinite")
    return rho


def ket_projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def project_psd(m) -> np.ndarray:
    """Closest unit-trace PSD matrix obtained by clipping negative eigenvalues."""
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        raise DomainError("matrix has no positive spectral weight")
    out = (v * w) @ v.conj().T
    return out / np.trace(out).real


def trace_distance(a, b) -> float:
    d = np.asarray(a) - np.asarray(b)
    w = np.linalg.eigvalsh(0.5 * (d + d.conj().T))
    return 0.5 * float(np.sum(np.abs(w)))


# Superoperators on row-major vectorized density matrices.

def commutator_superop(H) -> np.ndarray:
    """Matrix of rho -> -i [H, rho]."""
    H = np.asarray(H, dtype=complex)
    eye = np.eye(H.shape[0])
    return -1j * (np.kron(H, eye) - np.kron(eye, H.T))


def dissipator_superop(L, rate: float) -> np.ndarray:
    """Matrix of rho -> dissipator(L, rate, rho)."""
    L = np.asarray(L, dtype=complex)
    eye = np.eye(L.shape[0])
    LdL = L.conj().T @ L
    return 0.5 * rate * (2.0 * np.kron(L, L.conj()) - np.kron(LdL, eye) - np.kron(eye, LdL.T))
