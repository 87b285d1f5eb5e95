"""Matrices whose entries are exponential polynomials in time.

An :class:`ExpPolyMatrix` stores a finite sum ``sum_j C_j t^{m_j} exp(mu_j t)``
with constant ``d x d`` coefficients ``C_j``. Every exponent is kept as an
integer vector ``k`` over a :class:`SpectralBasis` plus a real part ``rho``,
``mu = rho + i (k, omega)``, so two modes are equal exactly when their
integer data agree. Products, commutators, integrals from 0, limiting means
and conjugation by ``exp(t A0)`` are all closed-form on this representation.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import SecularTermError
from .linalg import EigDecomposition, eig as _eig

PRUNE_TOL = 1e-14
RHO_ATOL = 1e-13
FREQ_RTOL = 1e-10
# Box searched when matching a new frequency to an integer combination.
_COMBO_RANGE = 3
_COMBO_MAX_RANK = 4


@dataclass(frozen=True)
class SpectralBasis:
    """Base frequencies over which all oscillations are indexed.

    ``gamma=None`` means the default diophantine exponent ``max(r, 2)``.
    """

    frequencies: tuple = ()
    delta: float = 1e-8
    gamma: float | None = None

    def __post_init__(self):
        freqs = tuple(float(w) for w in self.frequencies)
        object.__setattr__(self, "frequencies", freqs)
        for i, w in enumerate(freqs):
            if w == 0.0 or not math.isfinite(w):
                raise ValueError(f"base frequency {w} must be finite and nonzero")
            for v in freqs[:i]:
                if _same_frequency(abs(v), abs(w)):
                    raise ValueError(f"base frequencies {v} and {w} are not distinct")
        if self.delta <= 0:
            raise ValueError("diophantine delta must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("diophantine gamma must be positive")

    @property
    def rank(self) -> int:
        return len(self.frequencies)

    @property
    def omega(self) -> np.ndarray:
        return np.asarray(self.frequencies, dtype=float)

    @property
    def effective_gamma(self) -> float:
        return float(self.gamma) if self.gamma is not None else float(max(self.rank, 2))

    def divisor_bound(self, k) -> float:
        """``delta / |k|^gamma`` with ``|k| = sum |k_i|`` and ``|0|^gamma = 1``."""
        knorm = float(np.sum(np.abs(k))) if len(k) else 0.0
        return self.delta / max(knorm, 1.0) ** self.effective_gamma

    def frequency(self, k) -> float:
        return float(np.dot(np.asarray(k, dtype=float), self.omega)) if self.rank else 0.0


def _same_frequency(a, b):
    return abs(a - b) <= FREQ_RTOL * max(1.0, abs(a), abs(b))


def basis_union(b1: SpectralBasis, b2: SpectralBasis):
    """Union of two bases.

    Returns ``(basis, map1, map2)`` where ``map_i`` is an integer matrix of
    shape ``(r, r_i)`` sending mode vectors over ``b_i`` to the union.
    A frequency of ``b2`` equal to (or the negative of) one in ``b1`` is
    merged instead of appended.
    """
    if b1.delta != b2.delta or b1.gamma != b2.gamma:
        raise ValueError(
            f"diophantine parameters differ: ({b1.delta}, {b1.gamma}) vs ({b2.delta}, {b2.gamma})"
        )
    if b1 == b2:
        eye = np.eye(b1.rank, dtype=np.int64)
        return b1, eye, eye.copy()
    freqs = list(b1.frequencies)
    map2 = np.zeros((0, b2.rank), dtype=np.int64)
    columns = []
    for w in b2.frequencies:
        col = None
        for i, v in enumerate(freqs):
            if _same_frequency(v, w):
                col = (i, 1)
                break
            if _same_frequency(v, -w):
                col = (i, -1)
                break
        if col is None:
            freqs.append(w)
            col = (len(freqs) - 1, 1)
        columns.append(col)
    r = len(freqs)
    map1 = np.zeros((r, b1.rank), dtype=np.int64)
    map1[: b1.rank, : b1.rank] = np.eye(b1.rank, dtype=np.int64)
    map2 = np.zeros((r, b2.rank), dtype=np.int64)
    for j, (i, s) in enumerate(columns):
        map2[i, j] = s
    basis = SpectralBasis(tuple(freqs), b1.delta, b1.gamma)
    return basis, map1, map2


def _match_combination(freqs, nu):
    """Integer vector k with (k, freqs) == nu, searched in a small box."""
    r = len(freqs)
    if r == 0:
        return None
    omega = np.asarray(freqs)
    for i, w in enumerate(freqs):
        for s in (1, -1):
            if _same_frequency(s * w, nu):
                k = np.zeros(r, dtype=np.int64)
                k[i] = s
                return k
    if r > _COMBO_MAX_RANK:
        return None
    grid = np.array(
        list(itertools.product(range(-_COMBO_RANGE, _COMBO_RANGE + 1), repeat=r)), dtype=np.int64
    )
    vals = grid @ omega
    hits = np.flatnonzero(np.abs(vals - nu) <= FREQ_RTOL * max(1.0, abs(nu)))
    if hits.size == 0:
        return None
    best = hits[np.argmin(np.abs(grid[hits]).sum(axis=1))]
    return grid[best].copy()


def extend_basis(basis: SpectralBasis, nus):
    """Express each frequency in ``nus`` over ``basis``, appending new ones.

    Returns ``(new_basis, embed, ks)`` with ``embed`` the ``(r_new, r_old)``
    integer embedding and ``ks[i]`` the integer vector of ``nus[i]``.
    """
    freqs = list(basis.frequencies)
    raw = []
    order = sorted(range(len(nus)), key=lambda i: abs(nus[i]))
    found = {}
    for i in order:
        nu = float(nus[i])
        if abs(nu) <= FREQ_RTOL * 10:
            found[i] = np.zeros(0, dtype=np.int64)
            continue
        k = _match_combination(freqs, nu)
        if k is None:
            freqs.append(abs(nu))
            k = np.zeros(len(freqs), dtype=np.int64)
            k[-1] = 1 if nu > 0 else -1
        found[i] = k
    r = len(freqs)
    for i in range(len(nus)):
        k = found[i]
        full = np.zeros(r, dtype=np.int64)
        full[: k.shape[0]] = k
        raw.append(full)
    new_basis = SpectralBasis(tuple(freqs), basis.delta, basis.gamma) if r > basis.rank else basis
    embed = np.zeros((r, basis.rank), dtype=np.int64)
    embed[: basis.rank, : basis.rank] = np.eye(basis.rank, dtype=np.int64)
    return new_basis, embed, raw


def _snap_rho(rho):
    rho = np.asarray(rho, dtype=float).copy()
    rho[np.abs(rho) <= RHO_ATOL] = 0.0
    return rho


class ExpPolyMatrix:
    """Immutable finite sum ``sum_j C_j t^{m_j} exp(mu_j t)`` of ``d x d`` terms.

    Terms are stored in canonical order with duplicates merged and
    negligible coefficients pruned (relative tolerance ``prune``).
    """

    __slots__ = ("basis", "dim", "k", "rho", "power", "coeffs")
    # let ``ndarray @ X`` and ``ndarray + X`` defer to the reflected methods
    __array_ufunc__ = None

    def __init__(self, basis, dim, k=None, rho=None, power=None, coeffs=None, prune=None):
        self.basis = basis
        self.dim = int(dim)
        r = basis.rank
        if coeffs is None or len(coeffs) == 0:
            k = np.zeros((0, r), dtype=np.int64)
            rho = np.zeros(0)
            power = np.zeros(0, dtype=np.int64)
            coeffs = np.zeros((0, self.dim, self.dim), dtype=complex)
        else:
            coeffs = np.asarray(coeffs, dtype=complex).reshape(-1, self.dim, self.dim)
            n = coeffs.shape[0]
            k = np.asarray(k, dtype=np.int64).reshape(n, r)
            rho = np.asarray(rho, dtype=float).reshape(n)
            power = np.asarray(power, dtype=np.int64).reshape(n)
            if np.any(power < 0):
                raise ValueError("powers must be non-negative")
            k, rho, power, coeffs = _canonicalize(k, rho, power, coeffs, PRUNE_TOL if prune is None else prune)
        for a in (k, rho, power, coeffs):
            a.setflags(write=False)
        self.k, self.rho, self.power, self.coeffs = k, rho, power, coeffs

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, dim, basis=None):
        return cls(basis or SpectralBasis(), dim)

    @classmethod
    def constant(cls, C, basis=None):
        C = np.asarray(C, dtype=complex)
        basis = basis or SpectralBasis()
        return cls(basis, C.shape[0], np.zeros((1, basis.rank)), [0.0], [0], C[None])

    @classmethod
    def mode(cls, C, k, basis, rho=0.0, power=0):
        C = np.asarray(C, dtype=complex)
        return cls(basis, C.shape[0], np.asarray(k).reshape(1, basis.rank), [rho], [power], C[None])

    @classmethod
    def from_terms(cls, basis, dim, terms, prune=None):
        """Build from an iterable of ``(k, rho, power, C)`` tuples."""
        terms = list(terms)
        if not terms:
            return cls(basis, dim)
        k = np.array([np.asarray(t[0], dtype=np.int64).reshape(basis.rank) for t in terms]).reshape(
            len(terms), basis.rank
        )
        rho = [t[1] for t in terms]
        power = [t[2] for t in terms]
        coeffs = np.array([t[3] for t in terms], dtype=complex)
        return cls(basis, dim, k, rho, power, coeffs, prune=prune)

    # -- inspection ---------------------------------------------------
    def __len__(self):
        return self.coeffs.shape[0]

    @property
    def n_terms(self):
        return len(self)

    @property
    def is_zero(self):
        return len(self) == 0

    @property
    def frequencies(self) -> np.ndarray:
        return self.k @ self.basis.omega if self.basis.rank else np.zeros(len(self))

    @property
    def exponents(self) -> np.ndarray:
        return self.rho + 1j * self.frequencies

    @property
    def zero_exponent(self) -> np.ndarray:
        """Mask of terms whose exponent is exactly zero."""
        return np.all(self.k == 0, axis=1) & (self.rho == 0.0)

    @property
    def quasi_periodic(self) -> bool:
        return bool(np.all(self.power == 0) and np.all(self.rho == 0.0))

    @property
    def max_power(self) -> int:
        return int(self.power.max()) if len(self) else 0

    def terms(self):
        for j in range(len(self)):
            yield tuple(self.k[j]), float(self.rho[j]), int(self.power[j]), self.coeffs[j]

    def coefficient(self, k=None, rho=0.0, power=0):
        """Coefficient of one ``(k, rho, power)`` term, zero if absent."""
        k = np.zeros(self.basis.rank, dtype=np.int64) if k is None else np.asarray(k)
        hit = np.all(self.k == k, axis=1) & (np.abs(self.rho - rho) <= RHO_ATOL) & (self.power == power)
        if not np.any(hit):
            return np.zeros((self.dim, self.dim), dtype=complex)
        return self.coeffs[np.flatnonzero(hit)[0]].copy()

    def __repr__(self):
        return f"ExpPolyMatrix(dim={self.dim}, terms={len(self)}, basis={self.basis.frequencies})"

    # -- evaluation ---------------------------------------------------
    def weights(self, t):
        """Scalar factors ``t^m exp(mu t)`` for each term; ``t`` may be an array."""
        t = np.asarray(t, dtype=float)
        tt = t[..., None]
        with np.errstate(over="ignore", invalid="ignore"):
            w = np.exp(self.rho * tt) * np.exp(1j * self.frequencies * tt)
            w = w * tt ** self.power
        return w

    def __call__(self, t):
        return ep_eval(self, t)

    def evaluate_many(self, ts) -> np.ndarray:
        """Vectorized evaluation on a grid, shape ``(len(ts), d, d)``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if not len(self):
            return np.zeros((ts.size, self.dim, self.dim), dtype=complex)
        return np.einsum("nj,jab->nab", self.weights(ts), self.coeffs)

    # -- algebra ------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, ExpPolyMatrix):
            other = ExpPolyMatrix.constant(np.asarray(other, dtype=complex) * np.eye(self.dim), self.basis)
        return ep_add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if not isinstance(other, ExpPolyMatrix):
            other = ExpPolyMatrix.constant(np.asarray(other, dtype=complex) * np.eye(self.dim), self.basis)
        return ep_add(self, other, 1.0, -1.0)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, alpha):
        if isinstance(alpha, ExpPolyMatrix):
            return NotImplemented
        return self.scale(alpha)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, ExpPolyMatrix):
            return ep_mul(self, other)
        other = np.asarray(other, dtype=complex)
        return ExpPolyMatrix(self.basis, self.dim, self.k, self.rho, self.power, self.coeffs @ other)

    def __rmatmul__(self, other):
        other = np.asarray(other, dtype=complex)
        return ExpPolyMatrix(self.basis, self.dim, self.k, self.rho, self.power, other @ self.coeffs)

    def scale(self, alpha):
        if alpha == 0:
            return ExpPolyMatrix(self.basis, self.dim)
        return ExpPolyMatrix(self.basis, self.dim, self.k, self.rho, self.power, alpha * self.coeffs)

    def adjoint(self):
        """Pointwise conjugate transpose (valid for real ``t``)."""
        return ExpPolyMatrix(
            self.basis, self.dim, -self.k, self.rho, self.power, np.conj(np.swapaxes(self.coeffs, 1, 2))
        )

    def derivative(self):
        return ep_derivative(self)

    def integrate0(self):
        return ep_integrate0(self)

    def rebase(self, basis, embed):
        """Re-express over a larger basis using the integer embedding matrix."""
        if basis is self.basis:
            return self
        k = self.k @ np.asarray(embed, dtype=np.int64).T if self.basis.rank else np.zeros((len(self), basis.rank), dtype=np.int64)
        return ExpPolyMatrix(basis, self.dim, k, self.rho, self.power, self.coeffs, prune=0.0)

    def split_zero_mode(self):
        """``(constant coefficient, remainder)`` with the ``mu = 0, m = 0`` term removed."""
        mask = self.zero_exponent & (self.power == 0)
        const = self.coeffs[mask].sum(axis=0) if np.any(mask) else np.zeros((self.dim, self.dim), dtype=complex)
        keep = ~mask
        rest = ExpPolyMatrix(self.basis, self.dim, self.k[keep], self.rho[keep], self.power[keep], self.coeffs[keep], prune=0.0)
        return const, rest


def _canonicalize(k, rho, power, coeffs, tol):
    n = coeffs.shape[0]
    rho = _snap_rho(rho)
    if np.any(np.abs(rho) > 1e5):
        raise ValueError("exponent real parts beyond 1e5 are not supported")
    rq = np.round(rho / RHO_ATOL).astype(np.int64)
    key = np.concatenate([k, power[:, None], rq[:, None]], axis=1)
    if n > 1:
        uniq, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
        inv = inv.reshape(-1)
        if uniq.shape[0] < n:
            merged = np.zeros((uniq.shape[0],) + coeffs.shape[1:], dtype=complex)
            np.add.at(merged, inv, coeffs)
            coeffs = merged
        else:
            coeffs = coeffs[first]
        k, power, rho = k[first], power[first], rho[first]
    norms = np.sqrt(np.sum(np.abs(coeffs) ** 2, axis=(1, 2)))
    keep = norms > tol * norms.max() if n else np.zeros(0, dtype=bool)
    keep &= norms > 0
    return (
        np.ascontiguousarray(k[keep]),
        np.ascontiguousarray(rho[keep]),
        np.ascontiguousarray(power[keep]),
        np.ascontiguousarray(coeffs[keep]),
    )


def _align(X: ExpPolyMatrix, Y: ExpPolyMatrix):
    if X.dim != Y.dim:
        raise ValueError(f"dimension mismatch: {X.dim} vs {Y.dim}")
    if X.basis == Y.basis:
        return X, Y
    basis, m1, m2 = basis_union(X.basis, Y.basis)
    return X.rebase(basis, m1), Y.rebase(basis, m2)


def ep_add(X, Y, alpha=1.0, beta=1.0) -> ExpPolyMatrix:
    """``alpha*X + beta*Y``."""
    X, Y = _align(X, Y)
    return ExpPolyMatrix(
        X.basis,
        X.dim,
        np.concatenate([X.k, Y.k]),
        np.concatenate([X.rho, Y.rho]),
        np.concatenate([X.power, Y.power]),
        np.concatenate([alpha * X.coeffs, beta * Y.coeffs]),
    )


def ep_sum(items, dim, basis=None) -> ExpPolyMatrix:
    """Sum of many matrices with a single canonicalization."""
    items = [x for x in items if len(x)]
    if not items:
        return ExpPolyMatrix(basis or SpectralBasis(), dim)
    acc_basis = items[0].basis
    for x in items[1:]:
        if x.basis != acc_basis:
            acc_basis = basis_union(acc_basis, x.basis)[0]
    parts = []
    for x in items:
        if x.basis != acc_basis:
            _, m_acc, m_x = basis_union(acc_basis, x.basis)
            x = x.rebase(acc_basis, m_x)
        parts.append(x)
    return ExpPolyMatrix(
        acc_basis,
        dim,
        np.concatenate([x.k for x in parts]),
        np.concatenate([x.rho for x in parts]),
        np.concatenate([x.power for x in parts]),
        np.concatenate([x.coeffs for x in parts]),
    )


def _pairwise(X, Y, coeffs):
    nx, ny = len(X), len(Y)
    k = (X.k[:, None, :] + Y.k[None, :, :]).reshape(nx * ny, X.basis.rank)
    rho = (X.rho[:, None] + Y.rho[None, :]).reshape(-1)
    power = (X.power[:, None] + Y.power[None, :]).reshape(-1)
    return ExpPolyMatrix(X.basis, X.dim, k, rho, power, coeffs.reshape(nx * ny, X.dim, X.dim))


def ep_mul(X, Y) -> ExpPolyMatrix:
    """Pointwise matrix product; exponents and powers add."""
    X, Y = _align(X, Y)
    if not len(X) or not len(Y):
        return ExpPolyMatrix(X.basis, X.dim)
    return _pairwise(X, Y, np.einsum("aij,bjk->abik", X.coeffs, Y.coeffs))


def ep_commutator(X, Y) -> ExpPolyMatrix:
    """Pointwise commutator ``X Y - Y X``."""
    X, Y = _align(X, Y)
    if not len(X) or not len(Y):
        return ExpPolyMatrix(X.basis, X.dim)
    xy = np.einsum("aij,bjk->abik", X.coeffs, Y.coeffs)
    yx = np.einsum("bij,ajk->abik", Y.coeffs, X.coeffs)
    return _pairwise(X, Y, xy - yx)


def ep_eval(X: ExpPolyMatrix, t) -> np.ndarray:
    """Value at a real time ``t``, summed with Neumaier compensation.

    The constant term (zero exponent, zero power) is added last, so a
    matrix whose constant cancels the rest at ``t = 0`` evaluates to
    exactly zero there.
    """
    d = X.dim
    if not len(X):
        return np.zeros((d, d), dtype=complex)
    const = X.zero_exponent & (X.power == 0)
    rest = ~const
    contrib = X.weights(float(t))[rest][:, None, None] * X.coeffs[rest]
    parts = np.stack([contrib.real, contrib.imag], axis=1)
    s = np.zeros((2, d, d))
    c = np.zeros((2, d, d))
    for x in parts:
        tot = s + x
        big = np.abs(s) >= np.abs(x)
        c += np.where(big, (s - tot) + x, (x - tot) + s)
        s = tot
    s = s + c
    out = s[0] + 1j * s[1]
    if np.any(const):
        out = out + X.coeffs[np.flatnonzero(const)[0]]
    return out


def ep_integrate0(X: ExpPolyMatrix) -> ExpPolyMatrix:
    """``int_0^t X(s) ds`` as an exponential polynomial in ``t``.

    Uses the power rule for zero exponents and repeated integration by
    parts otherwise. The constant of integration is minus the value of the
    remaining terms at ``t = 0``, so the result evaluates to exactly 0 there.
    """
    r = X.basis.rank
    ks, rhos, pows, cs = [], [], [], []
    zero_k = np.zeros(r, dtype=np.int64)
    zmask = X.zero_exponent
    mus = X.exponents
    for j in range(len(X)):
        C, m = X.coeffs[j], int(X.power[j])
        if zmask[j]:
            ks.append(zero_k)
            rhos.append(0.0)
            pows.append(m + 1)
            cs.append(C / (m + 1))
            continue
        mu = mus[j]
        fact = 1.0
        for l in range(m + 1):
            # (-1)^l m!/(m-l)! / mu^(l+1)
            ks.append(X.k[j])
            rhos.append(X.rho[j])
            pows.append(m - l)
            cs.append(((-1) ** l) * fact / mu ** (l + 1) * C)
            fact *= m - l
    if not cs:
        return ExpPolyMatrix(X.basis, X.dim)
    P = ExpPolyMatrix(X.basis, X.dim, np.array(ks, dtype=np.int64).reshape(len(ks), r), rhos, pows, np.array(cs))
    if not len(P):
        return P
    C0 = -ep_eval(P, 0.0)
    return ExpPolyMatrix(
        X.basis,
        X.dim,
        np.concatenate([P.k, zero_k[None]]),
        np.concatenate([P.rho, [0.0]]),
        np.concatenate([P.power, [0]]),
        np.concatenate([P.coeffs, C0[None]]),
    )


def ep_antiderivative(X: ExpPolyMatrix) -> ExpPolyMatrix:
    """Antiderivative with no added constant (the ``mu = 0, m = 0`` term of
    the integration-by-parts formula is omitted)."""
    r = X.basis.rank
    ks, rhos, pows, cs = [], [], [], []
    zmask = X.zero_exponent
    mus = X.exponents
    for j in range(len(X)):
        C, m = X.coeffs[j], int(X.power[j])
        if zmask[j]:
            ks.append(X.k[j])
            rhos.append(0.0)
            pows.append(m + 1)
            cs.append(C / (m + 1))
            continue
        fact = 1.0
        for l in range(m + 1):
            ks.append(X.k[j])
            rhos.append(X.rho[j])
            pows.append(m - l)
            cs.append(((-1) ** l) * fact / mus[j] ** (l + 1) * C)
            fact *= m - l
    if not cs:
        return ExpPolyMatrix(X.basis, X.dim)
    return ExpPolyMatrix(X.basis, X.dim, np.array(ks, dtype=np.int64).reshape(len(ks), r), rhos, pows, np.array(cs))


def ep_derivative(X: ExpPolyMatrix) -> ExpPolyMatrix:
    if not len(X):
        return X
    mus = X.exponents
    pos = X.power > 0
    k = np.concatenate([X.k, X.k[pos]])
    rho = np.concatenate([X.rho, X.rho[pos]])
    power = np.concatenate([X.power, X.power[pos] - 1])
    coeffs = np.concatenate([mus[:, None, None] * X.coeffs, X.power[pos][:, None, None] * X.coeffs[pos]])
    return ExpPolyMatrix(X.basis, X.dim, k, rho, power, coeffs)


def ep_limiting_mean(X: ExpPolyMatrix) -> np.ndarray:
    """Limiting mean value of a quasi-periodic matrix (its zero mode)."""
    if not X.quasi_periodic:
        bad = np.flatnonzero((X.power > 0) | (X.rho != 0.0))[0]
        raise SecularTermError(
            f"limiting mean undefined: term t^{X.power[bad]} exp(({X.rho[bad]:g} + i*{X.frequencies[bad]:g}) t)"
        )
    const, _ = X.split_zero_mode()
    return const


def ep_prune(X: ExpPolyMatrix, tol=PRUNE_TOL) -> ExpPolyMatrix:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return ExpPolyMatrix(X.basis, X.dim, X.k, X.rho, X.power, X.coeffs, prune=tol)


def bohr_structure(dec: EigDecomposition, basis: SpectralBasis, sign=1):
    """Classify eigenvalue differences of ``A0`` as exponents over ``basis``.

    For ``sign=+1`` the entry (i, j) of ``V^{-1} X V`` picks up
    ``exp((lambda_j - lambda_i) t)`` under ``exp(-t A0) X exp(t A0)``; for
    ``sign=-1`` the opposite difference. Returns ``(basis', embed, classes,
    k_cls, rho_cls)`` where ``classes`` labels every (i, j) pair.
    """
    lam = dec.eigenvalues
    diff = lam[None, :] - lam[:, None]
    if sign < 0:
        diff = -diff
    scale = max(1.0, float(np.max(np.abs(lam))) if lam.size else 1.0)
    re = diff.real.copy()
    re[np.abs(re) <= 1e-12 * scale] = 0.0
    im = diff.imag.copy()
    im[np.abs(im) <= 1e-12 * scale] = 0.0
    flat_im = im.reshape(-1)
    new_basis, embed, ks = extend_basis(basis, list(flat_im))
    k_pairs = np.array(ks, dtype=np.int64).reshape(len(ks), new_basis.rank)
    rq = np.round(re.reshape(-1) / RHO_ATOL).astype(np.int64)
    key = np.concatenate([k_pairs, rq[:, None]], axis=1)
    uniq, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(lam.size, lam.size)
    return new_basis, embed, inv, k_pairs[first], re.reshape(-1)[first]


def ep_conjugate_exp(dec, X: ExpPolyMatrix, sign=1) -> ExpPolyMatrix:
    """``exp(-sign t A0) X(t) exp(sign t A0)``.

    ``dec`` is the eigendecomposition of ``A0`` (a raw matrix is accepted and
    decomposed). Eigenvalue differences become new exponents; frequencies not
    expressible over the current basis are appended to it.
    """
    if not isinstance(dec, EigDecomposition):
        dec = _eig(dec)
    dec.require_diagonalizable()
    if dec.dim != X.dim:
        raise ValueError(f"dimension mismatch: {dec.dim} vs {X.dim}")
    new_basis, embed, classes, k_cls, rho_cls = bohr_structure(dec, X.basis, sign)
    Xb = X.rebase(new_basis, embed) if new_basis is not X.basis else X
    if not len(Xb):
        return ExpPolyMatrix(new_basis, X.dim)
    V, Vi = dec.vectors, dec.inverse
    Y = Vi @ Xb.coeffs @ V
    nc = k_cls.shape[0]
    masks = np.stack([(classes == c) for c in range(nc)]).astype(float)
    parts = V @ (Y[:, None] * masks[None]) @ Vi
    n = len(Xb)
    k = (Xb.k[:, None, :] + k_cls[None]).reshape(n * nc, new_basis.rank)
    rho = (Xb.rho[:, None] + rho_cls[None]).reshape(-1)
    power = np.repeat(Xb.power, nc)
    return ExpPolyMatrix(new_basis, X.dim, k, rho, power, parts.reshape(n * nc, X.dim, X.dim))
