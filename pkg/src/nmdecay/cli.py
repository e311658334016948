"""Command-line driver.

Every subcommand reads an optional flat ``key = value`` config file (or a
previous run manifest) and then applies command-line overrides.  Outputs
go to ``--out``; each run also writes ``manifest_<command>.json`` with the
resolved config, the package version and the wall time.

Exit codes: 0 success, 1 validation error, 2 acceptance failure
(``table1`` only), 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import DEFAULT_DT, DEFAULT_T_MAX, loschmidt_echo, survival_probability
from .lattice import Case, SystemSpec
from .rates import (FitError, Table1Config, TABLE1, rate_sweep, resolve_threads,
                    series_rate, table1_report)
from .spectral import gf_poles, ldos_curve, poles_to_json
from .spinmap import SpinChainSpec, single_particle_correlation, spin_correlation

EXIT_OK, EXIT_VALIDATION, EXIT_ACCEPTANCE, EXIT_NUMERICAL = 0, 1, 2, 3
JWT_TOLERANCE = 1e-10


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; field names double as config-file keys."""

    case: str = "I"
    v_ab: float = 1.0
    v0: float = 0.1
    v: float = 1.0
    e_a: float = 0.0
    e_b: float = 0.0
    e_env: float = 0.0
    n_env: int | None = None
    v_s: float = 1.0
    t_max: float = DEFAULT_T_MAX
    dt: float = DEFAULT_DT
    v0_list: tuple = (0.05, 0.1, 0.15, 0.2)
    directions: tuple = ("forward", "backward")
    kinds: tuple = ("LE", "SP")
    output_dir: str = "."
    threads: str = "auto"
    ldos_kind: str = "surface"
    num: int = 401
    m: int = 10
    j: float = 2.0
    omega: float = 0.0
    i_site: int = 0
    f_site: int = 0
    rows: tuple | None = None
    n_env_min: int = 2000
    tolerance: float = 0.07
    seedless: bool = True

    def spec(self) -> SystemSpec:
        return SystemSpec(self.case, v_ab=self.v_ab, v0=self.v0, v=self.v, e_a=self.e_a,
                          e_b=self.e_b, e_env=self.e_env, n_env=self.n_env, v_s=self.v_s)

    def validate(self) -> "RunConfig":
        """Check the physical spec and the time grid before any compute."""
        if self.dt <= 0 or self.t_max <= 0:
            raise ValueError(f"need dt > 0 and t_max > 0, got dt={self.dt}, t_max={self.t_max}")
        if abs(round(self.t_max / self.dt) * self.dt - self.t_max) > 1e-9 * self.t_max:
            raise ValueError(f"t_max={self.t_max} must be a multiple of dt={self.dt}")
        for d in self.directions:
            if d not in ("forward", "backward"):
                raise ValueError(f"direction must be forward or backward, got {d!r}")
        for k in self.kinds:
            if k not in ("SP", "LE"):
                raise ValueError(f"kind must be SP or LE, got {k!r}")
        resolve_threads(None if self.threads == "auto" else self.threads)
        spec = self.spec().with_horizon(self.t_max)
        return replace(self, case=spec.case_id.value, n_env=spec.n_env)

    def to_record(self) -> dict:
        rec = asdict(self)
        for k, val in rec.items():
            if isinstance(val, tuple):
                rec[k] = list(val)
        return rec


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    if key not in _TYPES:
        raise ValueError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
        return None
    if kind.startswith("tuple"):
        items = value.split(",") if isinstance(value, str) else list(value)
        items = [x.strip() if isinstance(x, str) else x for x in items]
        if key == "v0_list":
            return tuple(float(x) for x in items)
        return tuple(str(x) for x in items if str(x))
    if kind.startswith("int"):
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "bool":
        return str(value).strip().lower() in ("1", "true", "yes")
    return str(value).strip()


def load_config(path) -> dict:
    """Read a ``key = value`` file or the ``config`` block of a manifest."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        data = data.get("config", data)
    else:
        data = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            data[key.strip()] = value.strip()
    return {k: _coerce(k, val) for k, val in data.items()}


_FLAGS = [
    ("--case", "case", str, "topology: I..VI or FiveSite"),
    ("--vab", "v_ab", float, "system hopping V_AB"),
    ("--v0", "v0", float, "system-environment hopping V0"),
    ("--v", "v", float, "environment hopping V"),
    ("--ea", "e_a", float, "site energy of A"),
    ("--eb", "e_b", float, "site energy of B"),
    ("--eenv", "e_env", float, "environment site energy"),
    ("--n-env", "n_env", int, "chain truncation (default: sized from the horizon)"),
    ("--vs", "v_s", float, "intra-system hopping of the five-site chain"),
    ("--tmax", "t_max", float, "simulation horizon"),
    ("--dt", "dt", float, "time step of the output grid"),
    ("--v0-list", "v0_list", str, "comma-separated V0 values for sweeps"),
    ("--directions", "directions", str, "comma-separated: forward,backward"),
    ("--kinds", "kinds", str, "comma-separated measures: SP,LE"),
    ("--out", "output_dir", str, "output directory"),
    ("--threads", "threads", str, "worker processes, or 'auto'"),
    ("--kind", "ldos_kind", str, "LDoS kind: surface, bulk or site_A"),
    ("--num", "num", int, "LDoS grid points"),
    ("--m", "m", int, "number of spins"),
    ("--J", "j", float, "uniform XY coupling"),
    ("--omega", "omega", float, "uniform field"),
    ("--i-site", "i_site", int, "initial spin"),
    ("--f-site", "f_site", int, "observed spin"),
    ("--rows", "rows", str, "comma-separated rate-table row labels"),
    ("--n-env-min", "n_env_min", int, "lower bound on chain truncation for table1"),
    ("--tolerance", "tolerance", float, "absolute rate tolerance for table1"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmdecay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file or a previous manifest")
    for flag, dest, typ, help_ in _FLAGS:
        common.add_argument(flag, dest=dest, type=typ, default=None, help=help_)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("sp", "survival probability of site A"),
        ("le", "local Loschmidt echo"),
        ("ldos", "surface, bulk or site-A local density of states"),
        ("poles", "exact Green's-function poles"),
        ("rates", "fitted SP and LE rates for one configuration"),
        ("sweep", "rates over a list of V0 and their V0^2 slope"),
        ("table1", "reproduce the nine-row rate table"),
        ("jwt-check", "spin chain vs Jordan-Wigner fermion dynamics"),
    ]:
        sub.add_parser(name, parents=[common], help=help_)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for _, dest, _, _ in _FLAGS:
        flag = getattr(args, dest)
        if flag is not None:
            values[dest] = _coerce(dest, flag)
    return RunConfig(**values)


def _threads(cfg: RunConfig):
    return None if cfg.threads == "auto" else int(cfg.threads)


def _write_manifest(out: Path, command: str, cfg: RunConfig, outputs, results, wall):
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.to_record(),
        "outputs": sorted(str(p.name) for p in outputs),
        "results": results,
        "wall_time_s": round(wall, 3),
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _cmd_series(cfg: RunConfig, out: Path, kind: str):
    cfg = cfg.validate()
    spec = cfg.spec()
    run = survival_probability if kind == "SP" else loschmidt_echo
    series = run(spec, cfg.t_max, cfg.dt)
    path = series.to_csv(out / f"{kind.lower()}_{spec.case_id.value}.csv")
    results = {}
    try:
        est = series_rate(series)
        results = {"rate": est.to_record()}
        print(f"{kind} rate = {est.rate:.4f} ± {est.uncertainty:.4f} V0^2/V")
    except FitError as exc:
        results = {"fit_error": str(exc)}
        print(f"{kind}: no exponential fit ({exc})")
    print(path)
    return cfg, [path], results, EXIT_OK


def cmd_sp(cfg, out):
    return _cmd_series(cfg, out, "SP")


def cmd_le(cfg, out):
    return _cmd_series(cfg, out, "LE")


def cmd_ldos(cfg, out):
    spec = cfg.spec() if cfg.ldos_kind == "site_A" else None
    curve = ldos_curve(cfg.ldos_kind, cfg.v, cfg.num, spec)
    path = curve.to_csv(out / f"ldos_{cfg.ldos_kind}.csv")
    print(path)
    return cfg, [path], {"points": int(curve.grid.size)}, EXIT_OK


def cmd_poles(cfg, out):
    cfg = cfg.validate()
    case = Case.parse(cfg.case)
    dirs = cfg.directions if case is Case.VI else ("forward",)
    poles = [gf_poles(case, cfg.v_ab, cfg.v0, cfg.v, d) for d in dirs]
    path = out / f"poles_{case.value}.json"
    poles_to_json(poles, path)
    for p in poles:
        print(f"{case.value} {p.direction}: delta0={p.delta0:.6g} gamma0={p.gamma0:.6g} "
              f"rate={p.normalized_rate:.4f} V0^2/V")
    results = {p.direction: p.normalized_rate for p in poles}
    return cfg, [path], results, EXIT_OK


def cmd_rates(cfg, out):
    cfg = cfg.validate()
    spec = cfg.spec()
    record = {"spec": spec.as_dict()}
    for kind in sorted(cfg.kinds):
        run = survival_probability if kind == "SP" else loschmidt_echo
        est = series_rate(run(spec, cfg.t_max, cfg.dt))
        record[kind] = est.to_record()
        print(f"{kind}: {est.rate:.4f} ± {est.uncertainty:.4f} V0^2/V  window={est.window}")
    path = out / f"rates_{spec.case_id.value}.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return cfg, [path], record, EXIT_OK


def cmd_sweep(cfg, out):
    cfg.validate()
    res = rate_sweep(cfg.case, cfg.v0_list, v=cfg.v, kinds=cfg.kinds, v_ab=cfg.v_ab,
                     dt=cfg.dt, n_env=cfg.n_env, threads=_threads(cfg), v_s=cfg.v_s)
    name = f"sweep_{res.case_id.value}"
    jpath = out / f"{name}.json"
    jpath.write_text(json.dumps(res.to_record(), indent=2, sort_keys=True) + "\n")
    cpath = res.to_plot_csv(out / f"{name}.csv")
    for kind, (slope, err) in sorted(res.slopes.items()):
        print(f"{kind} slope = {slope:.4f} ± {err:.4f}")
    return cfg, [jpath, cpath], {k: s for k, (s, _) in res.slopes.items()}, EXIT_OK


def cmd_table1(cfg, out):
    if cfg.rows is not None:
        known = {r.label for r in TABLE1}
        unknown = [r for r in cfg.rows if r not in known]
        if unknown:
            raise ValueError(f"unknown rate-table rows {unknown}; choose from {sorted(known)}")
    tcfg = Table1Config(v0=cfg.v0, v_ab=cfg.v_ab, t_max=cfg.t_max, dt=cfg.dt,
                        n_env_min=cfg.n_env_min, tolerance=cfg.tolerance,
                        threads=_threads(cfg), rows=cfg.rows)
    report = table1_report(tcfg)
    jpath = out / "table1.json"
    report.to_json(jpath)
    tpath = out / "table1.txt"
    text = report.to_text()
    tpath.write_text(text + "\n")
    print(text)
    code = EXIT_OK if report.passed else EXIT_ACCEPTANCE
    return cfg, [jpath, tpath], {"passed": report.passed}, code


def cmd_jwt_check(cfg, out):
    spec = SpinChainSpec(cfg.m, cfg.omega, cfg.j, cfg.i_site, cfg.f_site)
    t = np.arange(int(round(cfg.t_max / cfg.dt)) + 1) * cfg.dt
    many = spin_correlation(spec, t)
    single = single_particle_correlation(spec, t)
    gap = float(np.max(np.abs(many.p - single.p)))
    path = many.to_csv(out / f"jwt_m{spec.m}.csv")
    ok = gap <= JWT_TOLERANCE
    print(f"sup |P_spin - P_fermion| = {gap:.3e} ({'pass' if ok else 'FAIL'})")
    return cfg, [path], {"sup_gap": gap, "tolerance": JWT_TOLERANCE, "pass": ok}, (
        EXIT_OK if ok else EXIT_NUMERICAL)


COMMANDS = {
    "sp": cmd_sp,
    "le": cmd_le,
    "ldos": cmd_ldos,
    "poles": cmd_poles,
    "rates": cmd_rates,
    "sweep": cmd_sweep,
    "table1": cmd_table1,
    "jwt-check": cmd_jwt_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        cfg = resolve_config(args)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg, outputs, results, code = COMMANDS[args.command](cfg, out)
    except (ArithmeticError, FitError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, OSError) as exc:
        print(f"invalid input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    _write_manifest(out, args.command, cfg, outputs, results, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
