"""Independent Magnus oracle and convergence-horizon estimates."""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .algebra import ExpPolyMatrix
from .linalg import spectral_norm

MAGNUS_BOUND = math.pi
FLOQUET_MAGNUS_BOUND = 0.20925


def descents(perm) -> int:
    return sum(1 for a, b in zip(perm, perm[1:]) if a > b)


def _batch(A):
    if isinstance(A, ExpPolyMatrix):
        return A.evaluate_many
    return lambda ts: np.array([np.asarray(A(t), dtype=complex) for t in np.ravel(ts)])


def _nested_commutator(mats):
    """``[M_1, [M_2, ... [M_{n-1}, M_n]]]`` for stacked matrices."""
    out = mats[-1]
    for M in reversed(mats[:-1]):
        out = M @ out - out @ M
    return out


def _descent_sum(evalA, n, t, q):
    """Tensor Gauss-Legendre rule on the simplex t >= t_1 >= ... >= t_n >= 0."""
    x, w = np.polynomial.legendre.leggauss(q)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    perms = [p for p in itertools.permutations(range(n - 1))]
    coef = [(-1) ** descents(p) / math.comb(n - 1, descents(p)) / n for p in perms]
    total = None
    for i1 in range(q):
        # t_1 = t*u_{i1}; inner levels form a grid of q^(n-1) points
        t1 = t * u[i1]
        grids = [np.array([t1])]
        weights = np.array([wu[i1] * t])
        for level in range(2, n + 1):
            prev = grids[-1]
            grids.append((prev[:, None] * u[None, :]).reshape(-1))
            weights = (weights[:, None] * (wu[None, :] * prev[:, None])).reshape(-1)
        npts = grids[-1].size
        mats = []
        for level, g in enumerate(grids):
            vals = evalA(g)
            reps = npts // g.size
            mats.append(np.repeat(vals, reps, axis=0))
        acc = 0.0
        for p, c in zip(perms, coef):
            ordered = [mats[p[i]] for i in range(n - 1)] + [mats[n - 1]]
            acc = acc + c * _nested_commutator(ordered)
        part = np.tensordot(weights, acc, axes=1)
        total = part if total is None else total + part
    return total


def magnus_direct_term(A, n, t, rtol=1e-13, q0=12, q_max=80) -> np.ndarray:
    """``Omega_n(t)`` from the descent-weighted sum of nested commutator integrals.

    Uses Gauss-Legendre rules of increasing order on the ordered simplex
    until two successive estimates agree to ``rtol``.
    """
    if not 1 <= n <= 4:
        raise ValueError("the direct formula is only evaluated for 1 <= n <= 4")
    evalA = _batch(A)
    q = q0
    prev = _descent_sum(evalA, n, t, q)
    while True:
        q = q + max(4, q // 2)
        cur = _descent_sum(evalA, n, t, q)
        scale = max(np.max(np.abs(cur)), 1e-300)
        if np.max(np.abs(cur - prev)) <= rtol * max(scale, 1.0):
            return cur
        if q >= q_max:
            raise RuntimeError(f"nested quadrature for n={n} did not converge (q={q})")
        prev = cur


def _resolve_bound(bound):
    if isinstance(bound, str):
        key = bound.lower()
        if key == "magnus":
            return MAGNUS_BOUND
        if key in ("fm", "floquet_magnus", "floquetmagnus"):
            return FLOQUET_MAGNUS_BOUND
        raise ValueError(f"unknown bound {bound!r}")
    return float(bound)


def convergence_horizon(A, bound="magnus", t_cap=1e4, chunk=None) -> float:
    """Smallest ``t_f`` with ``int_0^{t_f} ||A(s)||_2 ds = bound``.

    The integral is accumulated chunk by chunk with adaptive quadrature and
    the crossing is refined by bracketing root finding. Returns ``inf`` when
    the integral stays below the bound up to ``t_cap``.
    """
    target = _resolve_bound(bound)
    fmax = 0.0
    if isinstance(A, ExpPolyMatrix) and len(A):
        fmax = float(np.max(np.abs(A.frequencies)))

    def norm(s):
        return spectral_norm(A(s))
    if chunk is not None:
        h = float(chunk)
    else:
        h = min(1.0, np.pi / fmax) if fmax > 0 else 1.0

    def integral(a, b):
        return quad(norm, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]

    acc, a = 0.0, 0.0
    while a < t_cap:
        b = min(a + h, t_cap)
        piece = integral(a, b)
        if acc + piece >= target:
            base = acc
            return float(brentq(lambda s: base + integral(a, s) - target, a, b, xtol=1e-12, rtol=1e-14))
        acc += piece
        a = b
    return float("inf")
