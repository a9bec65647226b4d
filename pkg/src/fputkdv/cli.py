"""Command line driver: ``fputkdv <subcommand> [options]``.

Every run writes a schema-versioned JSON report (the source of truth) into
the output directory, optionally with CSV tables or a text summary, and exits
with 0 when every embedded check passes, 1 when one fails and 2 on a bad
configuration.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from . import continuum as cont
from . import lattice as lat
from . import normalform as nf
from .diffpoly import lie_bracket, to_text
from .fields import kdv_field
from .tables import verify_tables

SCHEMA_VERSION = "1.0"
OUT_ENV = "FPUTKDV_OUT"
DEFAULT_OUT = "fputkdv-out"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


# ---------------------------------------------------------------------------
# configuration and report

@dataclass
class ExperimentConfig:
    subcommand: str
    alpha: Optional[Fraction] = None
    beta: Fraction = Fraction(0)
    gamma: Fraction = Fraction(0)
    toda: bool = False
    symbolic: bool = False
    h: List[float] = field(default_factory=list)
    grid: Optional[int] = None
    dt: Optional[float] = None
    tfinal: Optional[float] = None
    lambda4: Fraction = Fraction(0)
    out: Path = Path(DEFAULT_OUT)
    seed: int = 0
    format: str = "json"
    extra: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.toda and self.symbolic:
            raise ConfigError("--toda and --symbolic are mutually exclusive")
        if self.alpha is not None and self.alpha == 0:
            raise ConfigError("alpha must be nonzero")
        if self.grid is not None and (self.grid < 8 or self.grid & (self.grid - 1)):
            raise ConfigError("--grid must be a power of two, at least 8")
        if any(not (0 < h < 1) for h in self.h):
            raise ConfigError("every --h must lie in (0, 1)")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("--dt must be positive")
        if self.tfinal is not None and self.tfinal <= 0:
            raise ConfigError("--tfinal must be positive")
        if self.format not in ("json", "csv", "text"):
            raise ConfigError("--format must be json, csv or text")

    def potential(self) -> lat.Potential:
        alpha = float(self.alpha if self.alpha is not None else 1)
        if self.toda:
            return lat.Potential.toda(alpha)
        return lat.Potential("polynomial", alpha, float(self.beta), float(self.gamma))

    def parameters(self) -> nf.FPUTParameters:
        if self.symbolic:
            return nf.FPUTParameters.symbolic()
        alpha = self.alpha if self.alpha is not None else Fraction(1)
        if self.toda:
            return nf.FPUTParameters.toda(alpha)
        return nf.FPUTParameters(alpha, self.beta, self.gamma)

    def echo(self) -> dict:
        return {
            "alpha": None if self.alpha is None else str(self.alpha),
            "beta": str(self.beta),
            "gamma": str(self.gamma),
            "toda": self.toda,
            "symbolic": self.symbolic,
            "h": [float(h) for h in self.h],
            "grid": self.grid,
            "dt": self.dt,
            "tfinal": self.tfinal,
            "lambda4": str(self.lambda4),
            "seed": self.seed,
            "format": self.format,
            **{k: v for k, v in sorted(self.extra.items())},
        }


@dataclass
class Report:
    experiment: str
    inputs: dict
    results: List[dict] = field(default_factory=list)
    checks: List[dict] = field(default_factory=list)
    slopes: List[dict] = field(default_factory=list)
    tables: Dict[str, dict] = field(default_factory=dict)
    timestamps: dict = field(default_factory=dict)

    def check(self, name: str, passed: bool, detail: str = "", **values) -> bool:
        entry = {"name": name, "passed": bool(passed), "detail": detail}
        if values:
            entry["values"] = values
        self.checks.append(entry)
        return bool(passed)

    def slope(self, name: str, fit: cont.SlopeFit) -> None:
        self.slopes.append({"name": name, **fit.as_dict()})

    def table(self, name: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
        self.tables[name] = {"header": list(header), "rows": [list(r) for r in rows]}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "package_version": __version__,
            "experiment": self.experiment,
            "inputs": self.inputs,
            "results": self.results,
            "checks": self.checks,
            "slopes": self.slopes,
            "tables": self.tables,
            "passed": self.passed,
            "timestamps": self.timestamps,
        }

    def summary(self) -> str:
        lines = [f"{self.experiment}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            mark = "PASS" if c["passed"] else "FAIL"
            lines.append(f"  [{mark}] {c['name']}" + (f"  {c['detail']}" if c["detail"] else ""))
        for s in self.slopes:
            lines.append(f"  slope {s['name']}: {s['slope']:.3f} (R^2 {s['r2']:.4f}, "
                         f"h in [{s['h_range'][0]:g}, {s['h_range'][1]:g}])")
        return "\n".join(lines)


def _fname(cfg: ExperimentConfig, field_name: str, ext: str) -> str:
    h = cfg.h[0] if len(cfg.h) == 1 else ("scan" if cfg.h else "na")
    return f"{cfg.subcommand}_{field_name}_{cfg.grid or 'na'}_{h}.{ext}"


def emit_report(report: Report, cfg: ExperimentConfig, field_name: str = "report") -> List[Path]:
    """Write the JSON report plus CSV tables or a text summary; returns the paths."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    paths = []
    jpath = cfg.out / _fname(cfg, field_name, "json")
    jpath.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    paths.append(jpath)
    if cfg.format == "csv":
        for name, tab in report.tables.items():
            p = cfg.out / _fname(cfg, f"{field_name}-{name}", "csv")
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(tab["header"])
                w.writerows(tab["rows"])
            paths.append(p)
    elif cfg.format == "text":
        p = cfg.out / _fname(cfg, field_name, "txt")
        p.write_text(report.summary() + "\n")
        paths.append(p)
    return paths


def strip_timestamps(doc: dict) -> dict:
    """Copy of a report without the fields excluded from determinism checks."""
    return {k: v for k, v in doc.items() if k != "timestamps"}


# ---------------------------------------------------------------------------
# subcommands

def _profile(N: int) -> np.ndarray:
    x = cont.grid(N)
    return np.sin(2 * np.pi * x) + 0.3 * np.cos(4 * np.pi * x)


def run_verify_tables(cfg: ExperimentConfig, rep: Report) -> str:
    rows = verify_tables()
    for r in rows:
        rep.results.append({"table": r.table, "row": r.row, "X": r.x, "Y": r.y,
                            "expected": r.expected, "computed": r.computed,
                            "passed": r.passed})
    ok = sum(r.passed for r in rows)
    rep.check("bracket tables", ok == len(rows), f"{ok}/{len(rows)} identities hold")
    return "tables"


def run_verify_hierarchy(cfg: ExperimentConfig, rep: Report) -> str:
    orders = (1, 3, 5, 7)
    for i in orders:
        for j in orders:
            if i < j:
                b = lie_bracket(kdv_field(i), kdv_field(j))
                rep.results.append({"pair": [i, j], "bracket": to_text(b)})
                rep.check(f"[K{i},K{j}] = 0", not b, "" if not b else to_text(b))
    return "hierarchy"


def run_solve(cfg: ExperimentConfig, rep: Report) -> str:
    params = cfg.parameters()
    label = "symbolic" if cfg.symbolic else ("toda" if cfg.toda else "fput")
    m = nf.fput_to_model(params)
    try:
        first = nf.solve_first_order(m)
        second = nf.solve_second_order(m, first, cfg.lambda4)
    except nf.VerificationError as exc:
        rep.check("normal form pipeline", False, str(exc))
        return label
    rep.check("normal form pipeline", True, "all internal identities verified")
    out = nf.report(m, first, second, params)
    cc = nf.conserved_coefficients(m, first, second)
    ccp = nf.conserved_coefficients(m, first, second, printed=True)
    out["conserved"] = {k: {str(e): to_text(c) for e, c in s.coeffs.items()}
                        for k, s in cc.as_dict().items()}
    out["conserved_printed"] = {k: {str(e): to_text(c) for e, c in s.coeffs.items()}
                                for k, s in ccp.as_dict().items()}
    rep.results.append(out)
    a, b, g = (nf._p(x) for x in (params.alpha, params.beta, params.gamma))
    closed = nf.simplify(-7560 * (14 * a ** 3 - 27 * a * b + 12 * g) / a ** 3)
    rep.check("r matches -(7560/alpha^3)(14 alpha^3 - 27 alpha beta + 12 gamma)",
              not nf._p(nf.simplify(second.r - closed)), f"r = {nf.scalar_text(second.r)}")
    rep.check("rho = -r/9", not nf._p(nf.simplify(second.rho + second.r / 9)),
              f"rho = {nf.scalar_text(second.rho)}")
    if cfg.toda:
        rep.check("Toda: r = 0 and rho = 0", not nf._p(second.r) and not nf._p(second.rho))
    return label


def run_toda_scan(cfg: ExperimentConfig, rep: Report) -> str:
    alpha = cfg.alpha if cfg.alpha is not None else Fraction(1)
    steps = int(cfg.extra.get("steps", 5))
    b_lo, b_hi = (Fraction(x) for x in cfg.extra.get("beta_range", ("-1", "1")))
    g_lo, g_hi = (Fraction(x) for x in cfg.extra.get("gamma_range", ("-1", "1")))
    if steps < 2:
        raise ConfigError("--steps must be at least 2")
    rows, consistent = [], True
    for i in range(steps):
        beta = b_lo + (b_hi - b_lo) * i / (steps - 1)
        for j in range(steps):
            gamma = g_lo + (g_hi - g_lo) * j / (steps - 1)
            p = nf.FPUTParameters(alpha, beta, gamma)
            r = nf.obstruction(nf.fput_to_model(p))
            d = p.toda_defect
            consistent &= r == -Fraction(7560) * d / alpha ** 3
            rows.append([str(beta), str(gamma), str(r), str(d)])
    rep.table("grid", ["beta", "gamma", "r", "toda_defect"], rows)
    rep.check("r = -(7560/alpha^3) * defect on the whole grid", consistent,
              f"{len(rows)} points")
    curve, zero = [], True
    for i in range(steps):
        beta = b_lo + (b_hi - b_lo) * i / (steps - 1)
        gamma = (27 * alpha * beta - 14 * alpha ** 3) / 12
        r = nf.obstruction(nf.fput_to_model(nf.FPUTParameters(alpha, beta, gamma)))
        zero &= r == 0
        curve.append([str(beta), str(gamma), str(r)])
    rep.table("zero_curve", ["beta", "gamma", "r"], curve)
    toda = nf.FPUTParameters.toda(alpha)
    rep.results.append({"alpha": str(alpha), "zero_curve": "gamma = (27 alpha beta - 14 alpha^3)/12",
                        "toda_point": [str(toda.beta), str(toda.gamma)]})
    rep.check("r = 0 along 14 alpha^3 - 27 alpha beta + 12 gamma = 0", zero)
    rep.check("Toda point lies on the zero curve", toda.toda_defect == 0)
    return "toda"


def run_residual_scan(cfg: ExperimentConfig, rep: Report) -> str:
    hs = cfg.h = cfg.h or [1 / 32, 1 / 64, 1 / 128, 1 / 256]
    if len(hs) < 2:
        raise ConfigError("residual-scan needs at least two --h values")
    W = cfg.potential()
    cfg.grid = cfg.grid or 256
    U = _profile(cfg.grid)
    full = [cont.invariance_residual(U, h, W, 4) for h in hs]
    trunc = [cont.invariance_residual(U, h, W, 2) for h in hs]
    l2 = [cont.invariance_residual(U, h, W, 4, norm="l2") for h in hs]
    rep.table("residuals", ["h", "sup_c4", "sup_c2", "l2_c4"],
              [[repr(h), repr(a), repr(b), repr(c)] for h, a, b, c in zip(hs, full, trunc, l2)])
    f4, f2 = cont.fit_slope(hs, full), cont.fit_slope(hs, trunc)
    rep.slope("with c4", f4)
    rep.slope("without c4", f2)
    rep.check("slope 6 +- 0.5 with c4", abs(f4.slope - 6) <= 0.5, f"{f4.slope:.3f}")
    rep.check("slope 4 +- 0.5 without c4", abs(f2.slope - 4) <= 0.5, f"{f2.slope:.3f}")
    return "residual"


_EVOLVE_FIELDS = {
    "kdv3": dict(field="kdv", which=3),
    "kdv5": dict(field="kdv", which=5),
    "exact": dict(field="exact"),
    "expanded6": dict(field="expanded", order=6),
    "reduced6": dict(field="reduced", order=6),
}


def run_evolve(cfg: ExperimentConfig, rep: Report) -> str:
    name = cfg.extra.get("field", "kdv3")
    if name not in _EVOLVE_FIELDS:
        raise ConfigError(f"unknown field {name!r}; choose from {sorted(_EVOLVE_FIELDS)}")
    h = cfg.h[0] if cfg.h else 0.1
    dt = cfg.dt or 1e-4
    T = cfg.tfinal or 0.1
    spec = cont.FlowSpec(h=h, potential=cfg.potential(), dt=dt, **_EVOLVE_FIELDS[name])
    cfg.grid = cfg.grid or 256
    if cfg.extra.get("initial", "profile") == "random":
        U0 = cont.random_bandlimited(cfg.grid, np.random.default_rng(cfg.seed))
    else:
        U0 = _profile(cfg.grid)
    V0 = None
    if spec.field in ("exact", "expanded"):
        V0 = cont.slaving_c(U0, h, spec.potential, 4)
    res = cont.integrate_flow(U0, T, spec, V0=V0, record_every=max(int(round(T / dt)) // 100, 1))
    I = res.integrals
    rows = [[repr(float(t)), *map(repr, map(float, i)), *map(repr, map(float, mm))]
            for t, i, mm in zip(res.t, I, res.means)]
    rep.table("trajectory", ["t", "I1", "I2", "I3", "mean_U", "mean_V"], rows)
    rep.results.append({"final_U": [float(x) for x in res.U], "meta": res.meta})
    # relative drift; an integral that starts at zero (e.g. <U> = 0) is measured absolutely
    scale = np.where(np.abs(I[0]) > 1e-12, np.abs(I[0]), 1.0)
    drift = np.max(np.abs(I - I[0]), axis=0) / scale
    mdrift = float(np.max(np.abs(res.means - res.means[0])))
    rep.check("means conserved to rounding", mdrift < 1e-12, f"{mdrift:.2e}")
    if spec.field == "kdv":
        rep.check("I1, I2, I3 drift < 1e-8", bool(np.all(drift < 1e-8)),
                  ", ".join(f"{d:.2e}" for d in drift))
    return spec.describe()


def run_compare_lattice(cfg: ExperimentConfig, rep: Report) -> str:
    n = cfg.grid = cfg.grid or 64
    h = 1.0 / n
    T = cfg.tfinal or 0.1
    dt = cfg.dt or 1e-3
    W = cfg.potential()
    x = cont.grid(n)
    u0 = 0.1 * np.sin(2 * np.pi * x) + 0.05 * np.cos(4 * np.pi * x)
    v0 = cont.deriv(u0)
    u, v = cont.integrate_uv(u0, v0, T, h, W, dt=min(dt, 1e-4))
    s0 = lat.sample_from_profile(u0, v0, h)
    steps = int(round(T / h / dt))
    tr = lat.integrate(s0, W, T / h / steps, steps)
    err_q = float(np.max(np.abs(tr.final().q - h * u)))
    err_p = float(np.max(np.abs(tr.final().p - h * h * v)))
    rep.results.append({"n": n, "h": h, "t_continuum": T, "t_lattice": T / h,
                        "max_q_error": err_q, "max_p_error": err_p})
    rep.check("max |q_j - h u(hj)| < 1e-6", err_q < 1e-6, f"{err_q:.2e}")
    long = lat.integrate(s0, W, 1e-3, 10000, stride=100)
    e = long.energy
    drift = float(np.max(np.abs(e - e[0])) / abs(e[0]))
    rep.table("energy", ["t", "energy"], [[repr(float(t)), repr(float(E))]
                                          for t, E in zip(long.t, e)])
    rep.check("Verlet energy drift < 1e-6 over t = 10", drift < 1e-6, f"{drift:.2e}")
    return "lattice"


COMMANDS: Dict[str, Callable[[ExperimentConfig, Report], str]] = {
    "verify-tables": run_verify_tables,
    "verify-hierarchy": run_verify_hierarchy,
    "solve": run_solve,
    "toda-scan": run_toda_scan,
    "residual-scan": run_residual_scan,
    "evolve": run_evolve,
    "compare-lattice": run_compare_lattice,
}


def run_subcommand(cfg: ExperimentConfig) -> Tuple[Report, str]:
    """Validate ``cfg`` and run it; returns the report and a field label for file names."""
    cfg.validate()
    rep = Report(cfg.subcommand, {})
    start = time.perf_counter()
    rep.timestamps["started"] = datetime.now(timezone.utc).isoformat()
    try:
        label = COMMANDS[cfg.subcommand](cfg, rep)
    except (lat.BlowUpError, nf.VerificationError) as exc:
        # numerical or symbolic breakdown is a failed check, not a crash
        rep.check("run completed", False, f"{type(exc).__name__}: {exc}")
        label = "aborted"
    rep.timestamps["finished"] = datetime.now(timezone.utc).isoformat()
    rep.timestamps["elapsed_seconds"] = time.perf_counter() - start
    rep.inputs = cfg.echo()
    return rep, label


# ---------------------------------------------------------------------------
# argument parsing

def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from exc


def _h_value(text: str) -> float:
    return float(_fraction(text))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model")
    g.add_argument("--alpha", type=_fraction, help="cubic coefficient (default 1)")
    g.add_argument("--beta", type=_fraction, default=Fraction(0), help="quartic coefficient")
    g.add_argument("--gamma", type=_fraction, default=Fraction(0), help="quintic coefficient")
    g.add_argument("--toda", action="store_true", help="use the Toda potential")
    g.add_argument("--lambda4", type=_fraction, default=Fraction(0),
                   help="free parameter of the second normalisation step (default 0)")
    n = common.add_argument_group("numerics")
    n.add_argument("--h", type=_h_value, action="append", default=[],
                   help="small parameter, repeatable; rationals like 1/64 accepted")
    n.add_argument("--grid", type=int,
                   help="grid size N, a power of two (default 256; 64 for compare-lattice)")
    n.add_argument("--dt", type=float, help="time step")
    n.add_argument("--tfinal", type=float, help="final time")
    o = common.add_argument_group("output")
    o.add_argument("--out", type=Path,
                   help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    o.add_argument("--seed", type=int, default=0, help="seed for random draws (default 0)")
    o.add_argument("--format", choices=("json", "csv", "text"), default="json",
                   help="extra output next to the JSON report")

    parser = argparse.ArgumentParser(
        prog="fputkdv",
        description="Normal form of quasi-unidirectional FPUT waves: exact and numerical checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("verify-tables", parents=[common], help="check every bracket table row")
    sub.add_parser("verify-hierarchy", parents=[common], help="check [Ki, Kj] = 0")
    p = sub.add_parser("solve", parents=[common], help="run the normal form pipeline")
    p.add_argument("--symbolic", action="store_true", help="keep alpha, beta, gamma formal")
    p = sub.add_parser("toda-scan", parents=[common], help="r over a (beta, gamma) grid")
    p.add_argument("--steps", type=int, default=5, help="grid points per axis (default 5)")
    p.add_argument("--beta-range", nargs=2, default=("-1", "1"), metavar=("LO", "HI"))
    p.add_argument("--gamma-range", nargs=2, default=("-1", "1"), metavar=("LO", "HI"))
    sub.add_parser("residual-scan", parents=[common], help="invariance residual slopes")
    p = sub.add_parser("evolve", parents=[common], help="integrate a continuum flow")
    p.add_argument("--field", default="kdv3", choices=sorted(_EVOLVE_FIELDS))
    p.add_argument("--initial", default="profile", choices=("profile", "random"))
    sub.add_parser("compare-lattice", parents=[common],
                   help="chain against the interpolating continuum system")
    return parser


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    out = ns.out or Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
    extra = {}
    for key in ("steps", "field", "initial"):
        if hasattr(ns, key):
            extra[key] = getattr(ns, key)
    for key in ("beta_range", "gamma_range"):
        if hasattr(ns, key):
            extra[key] = list(getattr(ns, key))
    try:
        for key in ("beta_range", "gamma_range"):
            for v in extra.get(key, ()):
                Fraction(v)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad range value: {exc}") from exc
    return ExperimentConfig(
        subcommand=ns.subcommand, alpha=ns.alpha, beta=ns.beta, gamma=ns.gamma,
        toda=ns.toda, symbolic=getattr(ns, "symbolic", False), h=list(ns.h), grid=ns.grid,
        dt=ns.dt, tfinal=ns.tfinal, lambda4=ns.lambda4, out=out, seed=ns.seed,
        format=ns.format, extra=extra)


_VALUE_FLAGS = ("--alpha", "--beta", "--gamma", "--lambda4", "--h")


def _join_negative_values(argv: Sequence[str]) -> List[str]:
    """Rewrite ``--beta -2/5`` as ``--beta=-2/5``; argparse takes ``-2/5`` for a flag."""
    out: List[str] = []
    i = 0
    while i < len(argv):
        a = argv[i]
        if a in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    try:
        cfg = config_from_args(ns)
        rep, label = run_subcommand(cfg)
    except ConfigError as exc:
        print(f"fputkdv: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    paths = emit_report(rep, cfg, label)
    print(rep.summary())
    print(f"report: {paths[0]}")
    return EXIT_OK if rep.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
