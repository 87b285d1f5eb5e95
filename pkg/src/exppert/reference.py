"""Adaptive high-order reference integrator for ``dU/dt = A(t) U``.

Kept independent of the expansion machinery: it only needs pointwise values
of ``A(t)`` and integrates with an embedded 8(5,3) Runge-Kutta pair.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .algebra import ExpPolyMatrix
from .engine import SystemSpec
from .propagator import PropagationResult


MIN_RTOL = 100 * np.finfo(float).eps * 1.01


class StepSizeUnderflowError(RuntimeError):
    pass


def _generator(source, epsilon):
    if isinstance(source, SystemSpec):
        return source.generator(epsilon)
    return source


def _pointwise(A):
    if isinstance(A, ExpPolyMatrix):
        # plain (non-compensated) sum; accuracy is controlled by the integrator
        k_freq = A.frequencies
        rho, power, C = A.rho, A.power, A.coeffs

        def f(t):
            w = np.exp((rho + 1j * k_freq) * t) * t ** power
            return np.tensordot(w, C, axes=1)

        return f, A.dim
    return A, None


def reference_propagate(source, times, tol=1e-12, epsilon=None, observable=(1, 2), dim=None) -> PropagationResult:
    """Fundamental matrix on ``times`` (which must start at or after 0).

    ``source`` is a :class:`SystemSpec`, an :class:`ExpPolyMatrix` or a
    callable ``t -> A(t)`` (then ``dim`` is required). No renormalization is
    applied; unitarity drift is left visible.
    """
    if not (1e-14 <= tol <= 1e-6):
        raise ValueError("tol must lie in [1e-14, 1e-6]")
    times = np.asarray(times, dtype=float)
    A, d = _pointwise(_generator(source, epsilon))
    d = d or dim
    if d is None:
        raise ValueError("dim is required for callable generators")

    def rhs(t, y):
        return (A(t) @ y.reshape(d, d)).reshape(-1)

    y0 = np.eye(d, dtype=complex).reshape(-1)
    t0 = 0.0
    # DOP853 cannot honour rtol below 100 * machine epsilon
    rtol = max(tol, MIN_RTOL)
    sol = solve_ivp(rhs, (t0, float(times[-1])), y0, method="DOP853", t_eval=times, rtol=rtol, atol=tol)
    if sol.status != 0:
        raise StepSizeUnderflowError(sol.message)
    U = sol.y.T.reshape(-1, d, d)
    return PropagationResult(times, U, tuple(observable), {"method": "reference", "tol": tol})


def error_curve(approx: PropagationResult, ref: PropagationResult, observable=None) -> np.ndarray:
    """Rows ``(t, |P_approx - P_ref|)`` for the observable ``(i, j)``."""
    if approx.times.shape != ref.times.shape or np.any(approx.times != ref.times):
        raise ValueError("approximation and reference use different time grids")
    obs = tuple(observable) if observable is not None else approx.observable
    i, j = obs
    pa = np.abs(approx.U[:, i - 1, j - 1]) ** 2
    pr = np.abs(ref.U[:, i - 1, j - 1]) ** 2
    return np.column_stack([approx.times, np.abs(pa - pr)])
