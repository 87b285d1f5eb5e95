"""Command-line front end: ``run``, ``effective`` and ``horizon``.

Exit codes: 0 on success, 2 on configuration errors, 3 when the expansion
fails with a resonance, secular-term or existence diagnostic.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import convergence_horizon
from .engine import Method, expand
from .errors import ExpansionError
from .propagator import MODES, propagate
from .reference import error_curve, reference_propagate
from .systems import BUILTIN_NAMES, builtin_system, load_system

CSV_HEADER = ["t", "P", "P_ref", "abs_err", "unitarity_defect"]
SWEEPABLE = {"epsilon": float, "omega": float, "omega0": float, "beta": float, "order": int}


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class RunConfig:
    system: str = "bloch-siegert"
    system_file: str | None = None
    hamiltonian: bool = False
    method: str = "fm"
    order: int = 3
    epsilon: float | None = None
    omega: float | None = None
    omega0: float | None = None
    omega2: float | None = None
    beta: float | None = None
    b: float | None = None
    scaled_time: bool = False
    tmax: float = 10.0
    samples: int = 200
    observable: tuple = (1, 2)
    output: str | None = None
    ref_tol: float = 1e-12
    resonance: str = "raise"
    mode: str = "full"

    def validate(self):
        if self.order < 1:
            raise ConfigError("order must be >= 1")
        if self.samples < 2:
            raise ConfigError("sample count must be >= 2")
        if self.epsilon is not None and self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.tmax <= 0:
            raise ConfigError("tmax must be positive")
        if not (1e-14 <= self.ref_tol <= 1e-6):
            raise ConfigError("reference tolerance must lie in [1e-14, 1e-6]")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.resonance not in ("raise", "secular"):
            raise ConfigError("resonance policy must be 'raise' or 'secular'")
        try:
            Method.parse(self.method)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def build_system(self):
        try:
            if self.system_file:
                sys_ = load_system(self.system_file, hamiltonian=self.hamiltonian)
            elif self.system.startswith("three-lambda"):
                sys_ = builtin_system(
                    self.system, beta=self.beta, omega=self.omega, omega2=self.omega2, scaled_time=self.scaled_time or None
                )
            else:
                sys_ = builtin_system(self.system, omega0=self.omega0, omega=self.omega, epsilon=self.epsilon, b=self.b)
        except (ValueError, KeyError, OSError) as exc:
            raise ConfigError(f"cannot build system: {exc}") from None
        return sys_

    def effective_epsilon(self, system):
        return system.epsilon if self.epsilon is None else self.epsilon


def run_rows(cfg: RunConfig):
    """Rows of the run CSV (without header)."""
    cfg.validate()
    system = cfg.build_system()
    d = system.dim
    i, j = cfg.observable
    if not (1 <= i <= d and 1 <= j <= d):
        raise ConfigError(f"observable ({i}, {j}) outside 1..{d}")
    eps = cfg.effective_epsilon(system)
    times = np.linspace(0.0, cfg.tmax, cfg.samples)
    series = expand(system, cfg.method, cfg.order, resonance=cfg.resonance)
    approx = propagate(series, times, eps, mode=cfg.mode, observable=cfg.observable)
    ref = reference_propagate(system, times, cfg.ref_tol, epsilon=eps, observable=cfg.observable)
    err = error_curve(approx, ref)
    P = approx.probabilities
    Pref = ref.probabilities
    defects = approx.defects
    return [[t, P[n], Pref[n], err[n, 1], defects[n]] for n, t in enumerate(times)]


def _write_csv(header, rows, output):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    text = buf.getvalue()
    if output:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def parse_sweep(spec):
    try:
        name, values = spec.split("=", 1)
    except ValueError:
        raise ConfigError("sweep must look like name=v1,v2,...") from None
    name = name.strip()
    if name not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {name!r}; choose from {sorted(SWEEPABLE)}")
    try:
        vals = [SWEEPABLE[name](v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad sweep values {values!r}") from None
    if not vals:
        raise ConfigError("empty sweep")
    return name, vals


def cmd_run(cfg: RunConfig, sweep=None, workers=None) -> int:
    if sweep is None:
        _write_csv(CSV_HEADER, run_rows(cfg), cfg.output)
        return 0
    name, vals = sweep
    configs = [replace(cfg, **{name: v}) for v in vals]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_rows, configs))
    rows = [[v] + row for v, block in zip(vals, results) for row in block]
    _write_csv([name] + CSV_HEADER, rows, cfg.output)
    return 0


def cmd_effective(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    cfg.validate()
    method = Method.parse(cfg.method)
    if method not in (Method.FLOQUET_MAGNUS, Method.LIE_DEPRIT, Method.QUANTUM_AVERAGING):
        raise ConfigError("effective Hamiltonians are defined for fm, ld and qa")
    system = cfg.build_system()
    eps = cfg.effective_epsilon(system)
    series = expand(system, method, cfg.order, resonance=cfg.resonance)
    H = series.effective_hamiltonian(eps)
    out.write(f"# H_ef = i F (method={method.value}, order={cfg.order}, epsilon={fmt(eps)}, picture={series.picture})\n")
    out.write("i,j,re,im\n")
    for a in range(H.shape[0]):
        for c in range(H.shape[1]):
            out.write(f"{a + 1},{c + 1},{fmt(H[a, c].real)},{fmt(H[a, c].imag)}\n")
    return 0


def cmd_horizon(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    system = cfg.build_system()
    A = system.generator(cfg.effective_epsilon(system))
    out.write(f"magnus,{fmt(convergence_horizon(A, 'magnus'))}\n")
    out.write(f"fm,{fmt(convergence_horizon(A, 'fm'))}\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="exppert", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--system", default="bloch-siegert", choices=BUILTIN_NAMES)
        sp.add_argument("--system-file", help="JSON system description (overrides --system)")
        sp.add_argument("--hamiltonian", action="store_true", help="file matrices are H; multiply by -i")
        sp.add_argument("--method", default="fm")
        sp.add_argument("--order", type=int, default=3)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--b", type=float, help="Bloch-Siegert drive amplitude (epsilon = 2b)")
        sp.add_argument("--omega", type=float)
        sp.add_argument("--omega0", type=float)
        sp.add_argument("--omega2", type=float, help="second drive frequency of three-lambda-qp")
        sp.add_argument("--beta", type=float)
        sp.add_argument("--scaled-time", action="store_true", help="three-lambda in units of omega*t")
        sp.add_argument("--resonance", default="raise", choices=("raise", "secular"))

    run = sub.add_parser("run", help="propagate and write a CSV against the reference solution")
    common(run)
    run.add_argument("--tmax", type=float, default=10.0)
    run.add_argument("--samples", type=int, default=200)
    run.add_argument("--observable", type=int, nargs=2, default=(1, 2), metavar=("I", "J"))
    run.add_argument("--output")
    run.add_argument("--ref-tol", type=float, default=1e-12)
    run.add_argument("--mode", default="full", choices=MODES)
    run.add_argument("--sweep", help="name=v1,v2,... run once per value on worker threads")
    run.add_argument("--workers", type=int)

    eff = sub.add_parser("effective", help="print the effective Hamiltonian i*F")
    common(eff)
    hor = sub.add_parser("horizon", help="print Magnus and Floquet-Magnus convergence horizons")
    common(hor)
    return p


def _config(ns) -> RunConfig:
    fields = {k: v for k, v in vars(ns).items() if k in RunConfig.__dataclass_fields__ and v is not None}
    if "observable" in fields:
        fields["observable"] = tuple(fields["observable"])
    return RunConfig(**fields)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = _config(ns)
        if ns.command == "run":
            sweep = parse_sweep(ns.sweep) if ns.sweep else None
            return cmd_run(cfg, sweep, ns.workers)
        if ns.command == "effective":
            return cmd_effective(cfg)
        return cmd_horizon(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ExpansionError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        k = getattr(exc, "k", None)
        if k is not None:
            print(f"offending mode k={k} divisor={getattr(exc, 'divisor', float('nan')):.3e}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
