"""Built-in driven quantum systems and the JSON system format.

Hamiltonians are converted with ``A(t) = -i H(t)`` (hbar = 1).

JSON layout::

    {"dim": 2, "frequencies": [1.0],
     "A0": {"re": [[..]], "im": [[..]]},
     "terms": [{"order": 1, "modes": [{"k": [1], "rho": 0.0, "power": 0,
                                        "re": [[..]], "im": [[..]]}]}],
     "skew_hermitian": true, "period": 6.283185307179586, "epsilon": 0.2}
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .algebra import ExpPolyMatrix, SpectralBasis
from .engine import SystemSpec

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)

BUILTIN_NAMES = ("three-lambda-periodic", "three-lambda-qp", "bloch-siegert")
DEFAULT_OMEGA = 10.0 / math.sqrt(1.0 + math.sqrt(2.0) / 2.0)


def three_lambda(beta=1.0, omega=DEFAULT_OMEGA, quasi_periodic=False, omega2=None, scaled_time=False):
    """Driven three-level lambda system, ``H = f(t)|3><1| + f(t)|3><2| + h.c.``

    ``f = beta e^{i w t}`` or, quasi-periodic, ``beta (e^{i w t} + e^{i w2 t})``
    with ``w2 = sqrt(2) w`` by default. With ``scaled_time`` the system is
    written in the dimensionless time ``tau = w t``: the drive becomes
    ``e^{i tau}`` and the Hamiltonian is divided by ``w``.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    P = np.zeros((3, 3), dtype=complex)
    P[2, 0] = P[2, 1] = 1.0
    freqs = [omega]
    if quasi_periodic:
        freqs.append(math.sqrt(2.0) * omega if omega2 is None else float(omega2))
    amp = beta
    if scaled_time:
        freqs = [w / omega for w in freqs]
        amp = beta / omega
    basis = SpectralBasis(tuple(freqs))
    terms = []
    for i in range(len(freqs)):
        k = np.zeros(len(freqs), dtype=int)
        k[i] = 1
        terms.append((k, 0.0, 0, -1j * amp * P))
        terms.append((-k, 0.0, 0, -1j * amp * P.conj().T))
    A1 = ExpPolyMatrix.from_terms(basis, 3, terms)
    period = None if quasi_periodic else 2 * math.pi / freqs[0]
    name = "three-lambda-qp" if quasi_periodic else "three-lambda-periodic"
    return SystemSpec(np.zeros((3, 3), dtype=complex), [A1], 1.0, period, True, basis, name)


def bloch_siegert(omega0=1.0, omega=1.0, epsilon=0.2):
    """``H = (w0/2) sigma_3 + eps cos(w t) sigma_1`` with ``eps = 2b``."""
    basis = SpectralBasis((omega,))
    A0 = -0.5j * omega0 * SIGMA3
    A1 = ExpPolyMatrix.from_terms(
        basis, 2, [((1,), 0.0, 0, -0.5j * SIGMA1), ((-1,), 0.0, 0, -0.5j * SIGMA1)]
    )
    return SystemSpec(A0, [A1], epsilon, 2 * math.pi / omega, True, basis, "bloch-siegert")


def builtin_system(name, **params) -> SystemSpec:
    """Look up a built-in system by name.

    Accepted parameters: ``beta``, ``omega``, ``omega2``, ``scaled_time`` for
    the lambda systems; ``omega0``, ``omega``, ``epsilon`` (or ``b`` with
    ``epsilon = 2b``) for Bloch-Siegert. ``None`` values are ignored.
    """
    params = {k: v for k, v in params.items() if v is not None}
    if name == "three-lambda-periodic":
        allowed = {"beta", "omega", "scaled_time"}
        _reject(params, allowed, name)
        return three_lambda(quasi_periodic=False, **params)
    if name == "three-lambda-qp":
        allowed = {"beta", "omega", "omega2", "scaled_time"}
        _reject(params, allowed, name)
        params.setdefault("omega", 12.0)
        return three_lambda(quasi_periodic=True, **params)
    if name == "bloch-siegert":
        _reject(params, {"omega0", "omega", "epsilon", "b"}, name)
        if "b" in params:
            b = params.pop("b")
            params.setdefault("epsilon", 2.0 * b)
        return bloch_siegert(**params)
    raise ValueError(f"unknown system {name!r}; choose from {', '.join(BUILTIN_NAMES)}")


def _reject(params, allowed, name):
    extra = set(params) - allowed
    if extra:
        raise ValueError(f"parameters {sorted(extra)} do not apply to {name}")


def _pack(M):
    M = np.asarray(M, dtype=complex)
    return {"re": M.real.tolist(), "im": M.imag.tolist()}


def _unpack(obj, dim):
    re = np.asarray(obj["re"], dtype=float)
    im = np.asarray(obj["im"], dtype=float) if "im" in obj else np.zeros_like(re)
    for part in (re, im):
        if part.shape != (dim, dim):
            raise ValueError(f"matrix has shape {part.shape}, expected {(dim, dim)}")
    return re + 1j * im


def system_to_dict(system: SystemSpec) -> dict:
    terms = []
    for n, A in enumerate(system.terms, start=1):
        modes = [
            {"k": [int(v) for v in k], "rho": rho, "power": p, **_pack(C)} for k, rho, p, C in A.terms()
        ]
        terms.append({"order": n, "modes": modes})
    out = {
        "dim": system.dim,
        "frequencies": list(system.basis.frequencies),
        "A0": _pack(system.A0),
        "terms": terms,
        "skew_hermitian": bool(system.skew_hermitian),
        "epsilon": system.epsilon,
    }
    if system.period is not None:
        out["period"] = system.period
    return out


def system_from_dict(data: dict, hamiltonian=False) -> SystemSpec:
    """Ingest the JSON layout; ``hamiltonian=True`` multiplies every matrix by ``-i``."""
    dim = int(data["dim"])
    basis = SpectralBasis(tuple(data.get("frequencies", [])))
    factor = -1j if hamiltonian else 1.0
    A0 = factor * _unpack(data["A0"], dim) if "A0" in data else np.zeros((dim, dim), dtype=complex)
    by_order = {}
    for entry in data.get("terms", []):
        n = int(entry["order"])
        if n < 1:
            raise ValueError("term orders start at 1")
        modes = []
        for mode in entry.get("modes", []):
            k = mode.get("k", [0] * basis.rank)
            if len(k) != basis.rank:
                raise ValueError(f"mode vector {k} does not match {basis.rank} frequencies")
            modes.append((k, float(mode.get("rho", 0.0)), int(mode.get("power", 0)), factor * _unpack(mode, dim)))
        by_order.setdefault(n, []).extend(modes)
    N = max(by_order, default=0)
    terms = [ExpPolyMatrix.from_terms(basis, dim, by_order.get(n, [])) for n in range(1, N + 1)]
    return SystemSpec(
        A0,
        terms,
        float(data.get("epsilon", 1.0)),
        data.get("period"),
        bool(data.get("skew_hermitian", False)),
        basis,
        data.get("name", "custom"),
    )


def load_system(path, hamiltonian=False) -> SystemSpec:
    with open(Path(path), encoding="utf-8") as fh:
        return system_from_dict(json.load(fh), hamiltonian=hamiltonian)


def save_system(system: SystemSpec, path):
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(system_to_dict(system), fh, indent=2)
