"""Numerical propagators and observables assembled from an expansion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import ExpansionSeries, Method
from .linalg import expm, skew_part

MODES = ("full", "effective_only", "generator_only")


@dataclass
class PropagationResult:
    """Sampled propagator ``U(t)`` with the transition probability ``P_ij``.

    State ``|i>`` is row/column ``i`` (1-based), so ``P_ij = |U[i-1, j-1]|^2``.
    """

    times: np.ndarray
    U: np.ndarray
    observable: tuple = (1, 2)
    picture: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def probabilities(self) -> np.ndarray:
        i, j = self.observable
        return np.array([transition_probability(U, i, j) for U in self.U])

    @property
    def defects(self) -> np.ndarray:
        return np.array([unitarity_defect(U) for U in self.U])


def transition_probability(U, i, j) -> float:
    U = np.asarray(U)
    d = U.shape[0]
    if not (1 <= i <= d and 1 <= j <= d):
        raise IndexError(f"state indices ({i}, {j}) outside 1..{d}")
    return float(abs(U[i - 1, j - 1]) ** 2)


def unitarity_defect(U) -> float:
    U = np.asarray(U, dtype=complex)
    return float(np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0]), 2))


class _Assembler:
    """Caches the eps-summed pieces of a series for repeated evaluation."""

    def __init__(self, series: ExpansionSeries, epsilon):
        self.series = series
        self.eps = float(epsilon)
        self.d = series.dim
        self.skew = series.skew_hermitian
        self.Omega = series.generator(self.eps)
        m = series.method
        self.F = None
        if m in (Method.FLOQUET_MAGNUS, Method.LIE_DEPRIT):
            self.F = self._fix(series.F_total(self.eps))
        elif m is Method.QUANTUM_AVERAGING:
            self.F = self._fix(series.F_total(self.eps) - series.A0)
        if m is Method.STANDARD_PERTURBATION:
            from .algebra import ep_sum

            self.g = ep_sum([g.scale(self.eps ** (n + 1)) for n, g in enumerate(series.dyson)], self.d)

    def _fix(self, M):
        return skew_part(M) if self.skew else M

    def lift(self, t):
        return expm(t * self.series.A0)

    def generator_part(self, Om):
        if not np.any(Om):
            return np.eye(self.d, dtype=complex)
        return expm(self._fix(Om))

    def core(self, t, g=None):
        s, m = self.series, self.series.method
        if m is Method.MAGNUS:
            return np.eye(self.d, dtype=complex)
        if m is Method.FLOQUET_MAGNUS or m is Method.LIE_DEPRIT:
            return expm(t * self.F)
        if m is Method.REMOVE_PERTURBATION:
            return self.lift(t)
        if m is Method.QUANTUM_AVERAGING:
            return self.lift(t) @ expm(t * self.F)
        return self.lift(t) @ (np.eye(self.d) + g)

    def many(self, ts, mode="full"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        s = self.series
        Oms = self.Omega.evaluate_many(ts)
        gs = self.g.evaluate_many(ts) if s.method is Method.STANDARD_PERTURBATION else [None] * ts.size
        out = np.empty((ts.size, self.d, self.d), dtype=complex)
        for n, t in enumerate(ts):
            if mode == "generator_only":
                out[n] = self.generator_part(Oms[n])
                continue
            if s.method is Method.STANDARD_PERTURBATION:
                out[n] = self.core(t, gs[n])
                continue
            core = self.core(t)
            U = core if mode == "effective_only" else self.generator_part(Oms[n]) @ core
            if s.lifted:
                U = self.lift(t) @ U
            out[n] = U
        return out


def assemble(series: ExpansionSeries, t, epsilon, mode="full") -> np.ndarray:
    """Propagator ``U(t)`` at perturbation strength ``epsilon``.

    ``full`` is ``exp(sum eps^n Omega_n(t))`` times the exactly solvable
    core: ``e^{tF}`` (Floquet-Magnus, Lie-Deprit), ``e^{tA0}`` (remove the
    perturbation), ``e^{tA0} e^{t(F(0)-A0)}`` (quantum averaging), ``I``
    (Magnus) or ``e^{tA0}(I + sum eps^n g_n)`` (standard perturbation).
    Series built in the interaction picture get ``e^{tA0}`` on the left.
    """
    return _Assembler(series, epsilon).many([t], mode)[0]


def propagate(series, times, epsilon, mode="full", observable=(1, 2)) -> PropagationResult:
    times = np.asarray(times, dtype=float)
    U = _Assembler(series, epsilon).many(times, mode)
    picture = {"method": series.method.value, "picture": series.picture, "mode": mode, "epsilon": epsilon}
    return PropagationResult(times, U, tuple(observable), picture)
