"""The order-by-order recursion for exponential perturbative expansions.

Every expansion writes ``x(t) = exp(Omega(t)) X(t)`` with ``dX/dt = F X``
and solves, order by order in ``eps``,

    dOmega_n/dt + [Omega_n, A0] = calF_n - F_n,
    calF_n = A_n + G_n - V_n,

where ``G_n`` collects the Bernoulli-weighted commutator ladder of earlier
orders and ``V_n = sum_k [Omega_k, F_{n-k}]``. The named expansions differ
only in how each step splits ``calF_n`` into ``F_n`` and ``Omega_n``; those
splits are the ``*_step`` functions below.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import (
    ExpPolyMatrix,
    SpectralBasis,
    ep_antiderivative,
    ep_commutator,
    ep_conjugate_exp,
    ep_integrate0,
    ep_limiting_mean,
    ep_sum,
)
from .errors import (
    ExistenceConditionError,
    ExpansionError,
    ResonanceError,
    SecularTermError,
)
from .linalg import EigDecomposition, bernoulli_numbers, eig, homological_solve

# Divisors below this (relative to the spectral scale) count as exact resonances.
EXACT_RESONANCE_RTOL = 1e-11


class Method(str, enum.Enum):
    MAGNUS = "magnus"
    FLOQUET_MAGNUS = "fm"
    REMOVE_PERTURBATION = "rm"
    STANDARD_PERTURBATION = "sp"
    LIE_DEPRIT = "ld"
    QUANTUM_AVERAGING = "qa"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "magnus": cls.MAGNUS,
            "fm": cls.FLOQUET_MAGNUS,
            "floquet_magnus": cls.FLOQUET_MAGNUS,
            "floquetmagnus": cls.FLOQUET_MAGNUS,
            "rm": cls.REMOVE_PERTURBATION,
            "remove_perturbation": cls.REMOVE_PERTURBATION,
            "removeperturbation": cls.REMOVE_PERTURBATION,
            "sp": cls.STANDARD_PERTURBATION,
            "standard": cls.STANDARD_PERTURBATION,
            "standard_perturbation": cls.STANDARD_PERTURBATION,
            "standardperturbation": cls.STANDARD_PERTURBATION,
            "dyson": cls.STANDARD_PERTURBATION,
            "ld": cls.LIE_DEPRIT,
            "lie_deprit": cls.LIE_DEPRIT,
            "liedeprit": cls.LIE_DEPRIT,
            "qa": cls.QUANTUM_AVERAGING,
            "quantum_averaging": cls.QUANTUM_AVERAGING,
            "quantumaveraging": cls.QUANTUM_AVERAGING,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown method {value!r}") from None


@dataclass
class SystemSpec:
    """``A(t) = A0 + sum_n eps^n A_n(t)`` with structural flags.

    ``terms[n-1]`` holds ``A_n``. All terms share ``basis`` after
    construction.
    """

    A0: np.ndarray
    terms: list
    epsilon: float = 1.0
    period: float | None = None
    skew_hermitian: bool = False
    basis: SpectralBasis | None = None
    name: str = "custom"

    def __post_init__(self):
        self.A0 = np.asarray(self.A0, dtype=complex)
        d = self.A0.shape[0]
        if self.A0.shape != (d, d):
            raise ValueError("A0 must be square")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        basis = self.basis or (self.terms[0].basis if self.terms else SpectralBasis())
        for A in self.terms:
            if A.dim != d:
                raise ValueError(f"term dimension {A.dim} does not match A0 ({d})")
            if A.basis != basis:
                raise ValueError("all perturbation terms must share the system basis")
        self.basis = basis
        self.terms = list(self.terms)
        if self.skew_hermitian:
            self._check_skew()
        if self.period is not None:
            self._check_period()

    @property
    def dim(self):
        return self.A0.shape[0]

    def _check_skew(self, samples=5):
        scale = max(1.0, np.linalg.norm(self.A0))
        if np.linalg.norm(self.A0 + self.A0.conj().T) > 1e-12 * scale:
            raise ValueError("A0 is not skew-Hermitian")
        ts = np.random.default_rng(0).uniform(0, 20, samples)
        for A in self.terms:
            for M in A.evaluate_many(ts):
                if np.linalg.norm(M + M.conj().T) > 1e-12 * max(1.0, np.linalg.norm(M)):
                    raise ValueError("perturbation term is not skew-Hermitian")

    def _check_period(self):
        T = float(self.period)
        if T <= 0:
            raise ValueError("period must be positive")
        for A in self.terms:
            if not A.quasi_periodic:
                raise ValueError("periodic systems cannot carry secular or decaying terms")
            cycles = A.frequencies * T / (2 * np.pi)
            if np.any(np.abs(cycles - np.round(cycles)) > 1e-9):
                raise ValueError(f"term frequencies are not multiples of 2*pi/{T}")

    def generator(self, epsilon=None) -> ExpPolyMatrix:
        """The full ``A(t)`` at the given (default: stored) ``eps``."""
        eps = self.epsilon if epsilon is None else epsilon
        parts = [ExpPolyMatrix.constant(self.A0, self.basis)]
        parts += [A.scale(eps ** (n + 1)) for n, A in enumerate(self.terms)]
        return ep_sum(parts, self.dim, self.basis)

    def __call__(self, t, epsilon=None):
        eps = self.epsilon if epsilon is None else epsilon
        out = self.A0.copy()
        for n, A in enumerate(self.terms):
            out = out + eps ** (n + 1) * A(t)
        return out


@dataclass
class ExpansionSeries:
    """Per-order output of :func:`expand`; ``eps`` enters only at assembly.

    ``omegas[n-1]`` is ``Omega_n`` and ``f_terms[n]`` is ``F_n`` (``F_0``
    included). For the standard perturbation method ``omegas`` holds the
    ``P_n`` and ``dyson`` the interaction-picture ``g_n``. ``sources[n-1]``
    is the right-hand side ``calF_n`` the step solved at order ``n``.
    """

    method: Method
    order: int
    omegas: list
    f_terms: list
    A0: np.ndarray
    lifted: bool = False
    skew_hermitian: bool = False
    dyson: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    sources: list = field(default_factory=list)

    @property
    def dim(self):
        return self.A0.shape[0]

    @property
    def picture(self):
        return "interaction" if self.lifted else "original"

    def F_matrix(self, n) -> np.ndarray:
        """Constant value of ``F_n`` (the ``t = 0`` value for quantum averaging)."""
        F = self.f_terms[n]
        return F(0.0)

    def F_total(self, epsilon) -> np.ndarray:
        """``F(eps) = sum_n eps^n F_n`` evaluated at ``t = 0``."""
        out = self.F_matrix(0).copy()
        for n in range(1, self.order + 1):
            out = out + epsilon ** n * self.F_matrix(n)
        return out

    def effective_hamiltonian(self, epsilon=1.0) -> np.ndarray:
        """``H_ef = i F(eps)`` (hbar = 1)."""
        return 1j * self.F_total(epsilon)

    def generator(self, epsilon) -> ExpPolyMatrix:
        """``Omega(t, eps) = sum_n eps^n Omega_n(t)``, truncated at the series order."""
        if self.method is Method.STANDARD_PERTURBATION:
            return ExpPolyMatrix.zero(self.dim)
        return ep_sum([Om.scale(epsilon ** (n + 1)) for n, Om in enumerate(self.omegas)], self.dim)


def _constant(C, basis):
    return ExpPolyMatrix.constant(np.asarray(C, dtype=complex), basis)


def magnus_step(calF):
    """``F_n = 0`` and ``Omega_n = int_0^t calF_n``."""
    return ExpPolyMatrix.zero(calF.dim, calF.basis), ep_integrate0(calF)


def _check_divisors(X, what):
    """Small-divisor test for integrating the oscillating modes of ``X``."""
    margin = np.inf
    freqs = X.frequencies
    for j in range(len(X)):
        bound = X.basis.divisor_bound(X.k[j])
        mag = abs(freqs[j])
        if mag <= bound:
            raise ResonanceError(
                f"{what}: mode k={tuple(int(v) for v in X.k[j])} has frequency {freqs[j]:.3e}"
                f" below the diophantine bound {bound:.3e}",
                k=tuple(int(v) for v in X.k[j]),
                divisor=mag,
                bound=bound,
            )
        margin = min(margin, mag / bound)
    return margin


def fm_step(calF):
    """Floquet-Magnus split: ``F_n`` is the limiting mean of ``calF_n`` and
    ``Omega_n = int_0^t (calF_n - F_n)`` stays quasi-periodic."""
    mean = ep_limiting_mean(calF)
    _, rest = calF.split_zero_mode()
    margin = _check_divisors(rest, "Floquet-Magnus")
    F = _constant(mean, calF.basis)
    Omega = ep_integrate0(rest)
    return F, Omega, margin


def rm_step(calF, dec):
    """Remove-the-perturbation split (``F = A0``):
    ``Omega_n = e^{t ad_A0} int_0^t e^{-s ad_A0} calF_n(s) ds``."""
    inner = ep_integrate0(ep_conjugate_exp(dec, calF, 1))
    return ExpPolyMatrix.zero(calF.dim, calF.basis), ep_conjugate_exp(dec, inner, -1)


def _spectral_scale(dec, X):
    lam = dec.eigenvalues
    s = 1.0 + float(np.max(np.abs(lam))) if lam.size else 1.0
    if len(X):
        s += float(np.max(np.abs(X.exponents)))
    return s


def ld_step(calF, A0, dec=None, resonance="raise"):
    """Lie-Deprit split with a constant ``F_n``.

    Each oscillating mode ``f_k e^{i(k,w)t}`` of ``calF_n - <calF_n>`` is
    mapped to ``g_k`` solving ``(-ad_A0 + i(k,w)) g_k = f_k``. Then
    ``M_n(0) = sum_k g_k``, ``Omega_n = sum_k g_k e^{i(k,w)t} - M_n(0)`` and
    ``F_n = <calF_n> - [A0, M_n(0)]``.

    ``resonance="secular"`` accepts exact resonances (and terms already
    carrying powers of ``t``) by keeping the polynomial particular solution,
    which makes ``Omega_n`` grow in time. Near-resonances still raise.
    """
    A0 = np.asarray(A0, dtype=complex)
    dec = (dec if dec is not None else eig(A0)).require_diagonalizable()
    if resonance not in ("raise", "secular"):
        raise ValueError(f"unknown resonance policy {resonance!r}")
    mean, rest = calF.split_zero_mode()
    if resonance == "raise":
        if not calF.quasi_periodic:
            ep_limiting_mean(calF)  # raises SecularTermError
        Y, margin = _ld_modes(rest, A0, dec)
    else:
        Y, margin = _ld_particular(rest, dec)
    M0 = Y(0.0)
    F = _constant(mean - (A0 @ M0 - M0 @ A0), calF.basis)
    Omega = Y - _constant(M0, calF.basis)
    return F, Omega, margin


def _ld_modes(rest, A0, dec):
    basis = rest.basis
    gamma = basis.effective_gamma
    terms = []
    margin = np.inf
    freqs = rest.frequencies
    for j in range(len(rest)):
        k = rest.k[j]
        knorm = int(np.sum(np.abs(k)))
        try:
            g = homological_solve(A0, freqs[j], rest.coeffs[j], (basis.delta, gamma, knorm), dec)
        except ResonanceError as exc:
            exc.k = tuple(int(v) for v in k)
            raise
        lam = dec.eigenvalues
        div = np.abs(lam[None, :] - lam[:, None] + 1j * freqs[j])
        margin = min(margin, float(div.min()) / basis.divisor_bound(k))
        terms.append((k, 0.0, 0, g))
    return ExpPolyMatrix.from_terms(basis, rest.dim, terms), margin


def _ld_particular(rest, dec):
    """Particular solution of ``dY/dt + [Y, A0] = rest`` keeping each exponent.

    In the eigenbasis of ``A0`` every entry solves
    ``p' + D p = f t^m`` with ``D = mu + lambda_j - lambda_i``; ``D = 0``
    gives the secular ``f t^{m+1}/(m+1)``.
    """
    basis = rest.basis
    lam = dec.eigenvalues
    V, Vi = dec.vectors, dec.inverse
    scale = _spectral_scale(dec, rest)
    mus = rest.exponents
    terms = []
    margin = np.inf
    for j in range(len(rest)):
        m = int(rest.power[j])
        D = mus[j] + lam[None, :] - lam[:, None]
        Yc = Vi @ rest.coeffs[j] @ V
        exact = np.abs(D) <= EXACT_RESONANCE_RTOL * scale
        bound = basis.divisor_bound(rest.k[j])
        small = (~exact) & (np.abs(D) <= bound)
        if np.any(small):
            l, mm = np.argwhere(small)[0]
            raise ResonanceError(
                f"Lie-Deprit: near-resonant divisor {abs(D[l, mm]):.3e} <= {bound:.3e}",
                pair=(int(l), int(mm)),
                k=tuple(int(v) for v in rest.k[j]),
                divisor=float(abs(D[l, mm])),
                bound=bound,
            )
        if np.any(~exact):
            margin = min(margin, float(np.abs(D[~exact]).min()) / bound)
        Dsafe = np.where(exact, 1.0, D)
        coeff = np.zeros((m + 2, lam.size, lam.size), dtype=complex)  # indexed by power
        fact = 1.0
        for l in range(m + 1):
            coeff[m - l] += np.where(exact, 0.0, ((-1) ** l) * fact / Dsafe ** (l + 1)) * Yc
            fact *= m - l
        coeff[m + 1] += np.where(exact, Yc / (m + 1), 0.0)
        for p in range(m + 2):
            if np.any(coeff[p]):
                terms.append((rest.k[j], rest.rho[j], p, V @ coeff[p] @ Vi))
    return ExpPolyMatrix.from_terms(basis, rest.dim, terms), margin


def _qa_split(calF, dec):
    G = ep_conjugate_exp(dec, calF, 1)
    if G.max_power > 0:
        raise SecularTermError("quantum averaging needs calF without polynomial growth")
    zero = G.zero_exponent
    mus = G.exponents
    margin = np.inf
    for j in np.flatnonzero(~zero):
        # sigma-exponent of the averaging kernel is -mu
        if -mus[j].real > 0:
            raise ExistenceConditionError(
                f"mode with exponent {mus[j]:.6g} makes the averaging limits diverge"
            )
        bound = G.basis.divisor_bound(G.k[j])
        if abs(mus[j]) <= bound:
            raise ResonanceError(
                f"quantum averaging: small divisor {abs(mus[j]):.3e} <= {bound:.3e}",
                k=tuple(int(v) for v in G.k[j]),
                divisor=float(abs(mus[j])),
                bound=bound,
            )
        margin = min(margin, abs(mus[j]) / bound)
    G0, Gp = G.split_zero_mode()
    return G, G0, Gp, margin


def qa_step(calF, dec):
    """Quantum-averaging split with ``dF_n/dt + [F_n, A0] = 0``.

    In the interaction frame ``e^{-t ad_A0} calF_n`` the zero-frequency part
    ``G0`` is the averaged generator, so ``F_n(t) = e^{t ad_A0} G0``, and
    ``Omega_n(t) = e^{t ad_A0} int_0^t (e^{-s ad_A0} calF_n(s) - G0) ds``.
    """
    G, G0, Gp, margin = _qa_split(calF, dec)
    F = ep_conjugate_exp(dec, _constant(G0, G.basis), -1)
    Omega = ep_conjugate_exp(dec, ep_integrate0(Gp), -1)
    return F, Omega, margin


def qa_average_generator(calF, dec) -> ExpPolyMatrix:
    """Double limiting average of the averaging kernel, mode by mode.

    Each oscillating kernel mode ``e^{i theta sigma}`` contributes
    ``-1/(i theta)``; unlike the ``Omega_n`` used by :func:`qa_step`, this
    generator does not vanish at ``t = 0``. The two differ by the
    homogeneous solution ``e^{t ad_A0} W(0)``.
    """
    _, _, Gp, _ = _qa_split(calF, dec)
    return ep_conjugate_exp(dec, ep_antiderivative(Gp), -1)


def qa_kernel_mean(calF, dec) -> ExpPolyMatrix:
    """``F_n(t)`` as a closed-form exponential polynomial."""
    _, G0, _, _ = _qa_split(calF, dec)
    return ep_conjugate_exp(dec, _constant(G0, calF.basis), -1)


def dyson_terms(system: SystemSpec, order):
    """Standard perturbation theory in the picture of ``A0``.

    Returns ``(P, g)`` with ``g_n = int_0^t A_I(s) g_{n-1}(s) ds``,
    ``A_I = e^{-sA0} A_1 e^{sA0}`` and ``P_n = e^{tA0} g_n e^{-tA0}``.
    Truncations of this series are not unitary.
    """
    if len(system.terms) != 1:
        raise ValueError("standard perturbation theory needs exactly one perturbation term A_1")
    dec = eig(system.A0).require_diagonalizable()
    AI = ep_conjugate_exp(dec, system.terms[0], 1)
    g = _constant(np.eye(system.dim), AI.basis)
    gs, Ps = [], []
    for _ in range(order):
        g = ep_integrate0(AI @ g)
        gs.append(g)
        Ps.append(ep_conjugate_exp(dec, g, -1))
    return Ps, gs


def expand(system: SystemSpec, method, order, resonance="raise") -> ExpansionSeries:
    """Build ``Omega_1..Omega_N`` and ``F_0..F_N`` for the chosen method.

    Magnus and Floquet-Magnus need ``A0 = 0``; otherwise the perturbation is
    first moved to the interaction picture of ``A0`` and the series records
    ``lifted=True`` so that assembly restores ``e^{tA0}``.
    ``resonance`` is only used by Lie-Deprit (see :func:`ld_step`).
    """
    method = Method.parse(method)
    order = int(order)
    if order < 1:
        raise ValueError("order must be >= 1")
    d = system.dim
    if method is Method.STANDARD_PERTURBATION:
        Ps, gs = dyson_terms(system, order)
        return ExpansionSeries(
            method,
            order,
            Ps,
            [_constant(system.A0, system.basis)] + [ExpPolyMatrix.zero(d, system.basis)] * order,
            system.A0.copy(),
            skew_hermitian=system.skew_hermitian,
            dyson=gs,
            diagnostics={"term_counts": [len(g) for g in gs]},
        )

    A0 = system.A0
    terms = list(system.terms)
    lifted = False
    dec = None
    if method in (Method.MAGNUS, Method.FLOQUET_MAGNUS) and np.any(A0):
        dec0 = eig(A0).require_diagonalizable()
        terms = [ep_conjugate_exp(dec0, A, 1) for A in terms]
        lifted = True
        work_A0 = np.zeros_like(A0)
    else:
        work_A0 = A0
    if method in (Method.REMOVE_PERTURBATION, Method.LIE_DEPRIT, Method.QUANTUM_AVERAGING):
        dec = eig(work_A0).require_diagonalizable()
    basis = terms[0].basis if terms else system.basis

    bern = bernoulli_numbers(order)
    zero = ExpPolyMatrix.zero(d, basis)
    omegas, F, sources = [], [_constant(work_A0, basis)], []
    W = {}
    diag = {"term_counts": [], "max_power": [], "resonance_margin": [], "picture": "original"}
    if lifted:
        diag["picture"] = "interaction"
    for n in range(1, order + 1):
        A_n = terms[n - 1] if n <= len(terms) else zero
        for k in range(1, n):
            W[n, k] = ep_sum(
                [ep_commutator(omegas[m - 1], W[n - m, k - 1]) for m in range(1, n - k + 1)], d, basis
            )
        G = ep_sum([W[n, k].scale(bern[k] / math.factorial(k)) for k in range(1, n)], d, basis)
        V = ep_sum([ep_commutator(omegas[k - 1], F[n - k]) for k in range(1, n)], d, basis)
        calF = A_n + G - V
        margin = np.inf
        try:
            if method is Method.MAGNUS:
                F_n, Om_n = magnus_step(calF)
            elif method is Method.FLOQUET_MAGNUS:
                F_n, Om_n, margin = fm_step(calF)
            elif method is Method.REMOVE_PERTURBATION:
                F_n, Om_n = rm_step(calF, dec)
            elif method is Method.LIE_DEPRIT:
                F_n, Om_n, margin = ld_step(calF, work_A0, dec, resonance)
            else:
                F_n, Om_n, margin = qa_step(calF, dec)
        except ExpansionError as exc:
            raise exc.annotate(n)
        omegas.append(Om_n)
        F.append(F_n)
        sources.append(calF)
        W[n, 0] = A_n - F_n
        diag["term_counts"].append(len(Om_n))
        diag["max_power"].append(Om_n.max_power)
        diag["resonance_margin"].append(float(margin))
    return ExpansionSeries(
        method,
        order,
        omegas,
        F,
        A0.copy(),
        lifted=lifted,
        skew_hermitian=system.skew_hermitian,
        diagnostics=diag,
        sources=sources,
    )
