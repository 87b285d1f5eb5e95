"""Dense complex matrix kernels.

Matrix exponentials, eigendecompositions with a condition estimate, norms,
Bernoulli numbers, the truncated ``dexp`` series and the solver for the
homological equation ``(-ad_{A0} + i*theta) X = f``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .errors import (
    IllConditionedEigenbasisError,
    MatrixOverflowError,
    NonDiagonalizableError,
    ResonanceError,
)

COND_LIMIT = 1e8
# Above this the eigenvector matrix is numerically singular.
DEFECTIVE_COND = 1e13
STRUCTURE_RTOL = 64 * np.finfo(float).eps


def _as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def _check_finite(M, what):
    if not np.all(np.isfinite(M)):
        raise MatrixOverflowError(f"{what} produced non-finite entries")
    return M


def is_skew_hermitian(M, rtol=STRUCTURE_RTOL) -> bool:
    scale = np.linalg.norm(M)
    return np.linalg.norm(M + M.conj().T) <= rtol * max(scale, 1e-300)


def is_hermitian(M, rtol=STRUCTURE_RTOL) -> bool:
    scale = np.linalg.norm(M)
    return np.linalg.norm(M - M.conj().T) <= rtol * max(scale, 1e-300)


def is_normal(M, rtol=1e-13) -> bool:
    MH = M.conj().T
    scale = np.linalg.norm(M) ** 2
    return np.linalg.norm(M @ MH - MH @ M) <= rtol * max(scale, 1e-300)


def skew_part(M) -> np.ndarray:
    """Projection ``(M - M^H)/2`` onto the skew-Hermitian matrices."""
    M = np.asarray(M, dtype=complex)
    return 0.5 * (M - M.conj().T)


def expm(M) -> np.ndarray:
    """Matrix exponential.

    Normal inputs go through a unitary eigendecomposition, which keeps
    ``expm`` of a skew-Hermitian matrix unitary to machine precision. Other
    inputs use scaling and squaring with a diagonal Pade approximant.
    """
    M = _as_matrix(M)
    d = M.shape[0]
    if not np.any(M):
        return np.eye(d, dtype=complex)
    if is_skew_hermitian(M):
        H = 0.5j * (M - M.conj().T)  # H = iM, Hermitian
        w, V = np.linalg.eigh(H)
        return _check_finite((V * np.exp(-1j * w)) @ V.conj().T, "expm")
    if is_hermitian(M):
        w, V = np.linalg.eigh(0.5 * (M + M.conj().T))
        return _check_finite((V * np.exp(w)) @ V.conj().T, "expm")
    if is_normal(M):
        T, Z = sla.schur(M, output="complex")
        return _check_finite((Z * np.exp(np.diag(T))) @ Z.conj().T, "expm")
    with np.errstate(over="ignore", invalid="ignore"):
        return _check_finite(sla.expm(M), "expm")


@dataclass(frozen=True)
class EigDecomposition:
    """Right eigendecomposition ``A V = V diag(eigenvalues)``."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    inverse: np.ndarray
    condition: float
    unitary: bool = False

    @property
    def dim(self):
        return self.eigenvalues.shape[0]

    def residual(self, A) -> float:
        A = _as_matrix(A)
        return np.linalg.norm(A @ self.vectors - self.vectors * self.eigenvalues)

    def require_diagonalizable(self, cond_limit=COND_LIMIT):
        """Raise unless the eigenbasis can be used for conjugations."""
        if not np.isfinite(self.condition) or self.condition > DEFECTIVE_COND:
            raise NonDiagonalizableError(
                f"eigenvector matrix is singular (condition {self.condition:.3e})"
            )
        if self.condition > cond_limit:
            raise IllConditionedEigenbasisError(
                f"eigenbasis condition number {self.condition:.3e} exceeds {cond_limit:.1e}"
            )
        return self


def eig(M) -> EigDecomposition:
    """Eigendecomposition, unitary whenever ``M`` is normal."""
    M = _as_matrix(M)
    d = M.shape[0]
    I = np.eye(d, dtype=complex)
    if not np.any(M - np.diag(np.diag(M))):
        return EigDecomposition(np.diag(M).copy(), I, I, 1.0, True)
    if is_skew_hermitian(M):
        w, V = np.linalg.eigh(0.5j * (M - M.conj().T))
        lam = -1j * w
        return EigDecomposition(lam, V, V.conj().T, 1.0, True)
    if is_hermitian(M):
        w, V = np.linalg.eigh(0.5 * (M + M.conj().T))
        return EigDecomposition(w.astype(complex), V.astype(complex), V.conj().T.astype(complex), 1.0, True)
    if is_normal(M):
        T, Z = sla.schur(M, output="complex")
        return EigDecomposition(np.diag(T).copy(), Z, Z.conj().T, 1.0, True)
    try:
        lam, V = sla.eig(M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NonDiagonalizableError(f"eigenvalue iteration failed: {exc}") from exc
    V = V / np.linalg.norm(V, axis=0)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > DEFECTIVE_COND:
        return EigDecomposition(lam, V, np.full_like(V, np.nan), float("inf"), False)
    return EigDecomposition(lam, V, np.linalg.inv(V), float(cond), False)


def spectral_norm(M) -> float:
    return float(np.linalg.norm(_as_matrix(M), 2))


def frobenius_norm(M) -> float:
    return float(np.linalg.norm(_as_matrix(M)))


@lru_cache(maxsize=None)
def _bernoulli_exact(K):
    B = [Fraction(1)]
    for m in range(1, K + 1):
        s = sum(math.comb(m + 1, k) * B[k] for k in range(m))
        B.append(-s / (m + 1))
    return tuple(B)


def bernoulli_numbers(K) -> np.ndarray:
    """B_0..B_K with the B_1 = -1/2 convention, rounded from exact rationals."""
    return np.array([float(b) for b in _bernoulli_exact(int(K))])


def commutator(X, Y):
    return X @ Y - Y @ X


def dexp_apply(Omega, C, K) -> np.ndarray:
    """Partial sum ``sum_{k=0}^{K} ad_Omega^k(C) / (k+1)!``."""
    if K < 0:
        raise ValueError("K must be non-negative")
    Omega = _as_matrix(Omega)
    term = _as_matrix(C).copy()
    total = term.copy()
    for k in range(1, K + 1):
        term = commutator(Omega, term) / (k + 1)
        total = total + term
    return total


def small_divisor_bound(delta, gamma, knorm) -> float:
    """Diophantine threshold ``delta / |k|^gamma``, with ``|0|^gamma`` read as 1."""
    return delta / max(float(knorm), 1.0) ** gamma


def homological_solve(A0, theta, f, dio=(1e-8, 2.0, 0), decomposition=None) -> np.ndarray:
    """Solve ``(-ad_{A0} + i*theta*I) X = f``.

    The operator is diagonal in the eigenbasis of ``A0``: the entry (l, m)
    of the transformed right-hand side is divided by
    ``lambda_m - lambda_l + i*theta``. Every eigenvalue pair is tested
    against the diophantine bound ``delta/|k|^gamma`` before dividing.
    """
    A0 = _as_matrix(A0)
    f = _as_matrix(f)
    delta, gamma, knorm = dio
    dec = decomposition if decomposition is not None else eig(A0)
    dec.require_diagonalizable()
    lam = dec.eigenvalues
    div = lam[None, :] - lam[:, None] + 1j * theta
    bound = small_divisor_bound(delta, gamma, knorm)
    mag = np.abs(div)
    l, m = np.unravel_index(np.argmin(mag), mag.shape)
    if mag[l, m] <= bound:
        raise ResonanceError(
            f"small divisor |lambda_{m + 1} - lambda_{l + 1} + i*{theta:g}| = {mag[l, m]:.3e}"
            f" <= {bound:.3e}",
            pair=(int(l), int(m)),
            k=knorm,
            divisor=float(mag[l, m]),
            bound=bound,
        )
    Y = dec.inverse @ f @ dec.vectors
    return _check_finite(dec.vectors @ (Y / div) @ dec.inverse, "homological_solve")


def apply_homological_operator(A0, theta, X) -> np.ndarray:
    """``(-ad_{A0} + i*theta*I) X``, used for round-trip checks."""
    A0 = _as_matrix(A0)
    X = _as_matrix(X)
    return -(A0 @ X - X @ A0) + 1j * theta * X
