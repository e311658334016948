"""Decay-rate extraction, coupling sweeps and the reference rate-table report."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import (DEFAULT_DT, DEFAULT_T_MAX, TimeSeries, loschmidt_echo,
                       survival_probability)
from .lattice import Case, SystemSpec, min_n_env
from .spectral import gf_poles, le_rate_prediction, scfgr_rate, wba_rate

__all__ = [
    "FitError",
    "RateEstimate",
    "envelope",
    "fit_exponential",
    "series_rate",
    "SweepPoint",
    "SweepResult",
    "rate_sweep",
    "Table1Row",
    "TABLE1",
    "Table1Config",
    "Table1Report",
    "table1_report",
    "resolve_threads",
    "REPORT_SCHEMA_VERSION",
]

REPORT_SCHEMA_VERSION = 1
R2_ACCEPT = 0.99
R2_AUTO = 0.999
P_FLOOR = 1e-3
#: ln p spread below which a trace counts as flat (rate 0 is then a valid fit)
FLAT_TOL = 1e-5


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class RateEstimate:
    """Exponential rate from a log-linear fit.

    ``rate`` and ``stderr`` are in whatever unit the series' time axis
    implies (1/time) until :meth:`scaled` divides them by ``V0**2 / V``.
    """

    rate: float
    stderr: float
    window: tuple
    r_squared: float
    n_points: int
    window_sensitivity: float = 0.0

    @property
    def uncertainty(self) -> float:
        return math.hypot(self.stderr, self.window_sensitivity)

    def scaled(self, unit: float) -> "RateEstimate":
        return replace(self, rate=self.rate / unit, stderr=self.stderr / unit,
                       window_sensitivity=self.window_sensitivity / unit)

    def to_record(self) -> dict:
        return {
            "rate": float(self.rate),
            "stderr": float(self.stderr),
            "window_sensitivity": float(self.window_sensitivity),
            "window": [float(x) for x in self.window],
            "r_squared": float(self.r_squared),
            "n_points": int(self.n_points),
        }


def envelope(series: TimeSeries) -> TimeSeries:
    """Local maxima of an oscillating trace, refined by a 3-point parabola.

    Monotone traces and echo (LE) traces are returned unchanged: the echo
    is fitted directly.
    """
    p = np.asarray(series.p)
    if series.kind == "LE" or np.all(np.diff(p) <= 0):
        return series
    t = np.asarray(series.t)
    left, mid, right = p[:-2], p[1:-1], p[2:]
    idx = np.flatnonzero((mid >= left) & (mid > right)) + 1
    if idx.size < 4:
        raise FitError(f"only {idx.size} envelope peaks found; need at least 4")
    a, b, c = p[idx - 1], p[idx], p[idx + 1]
    curv = a - 2 * b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(curv < 0, 0.5 * (a - c) / curv, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    dt = np.diff(t)[idx - 1]
    tp = t[idx] + shift * dt
    pp = b - 0.25 * (a - c) * shift
    meta = dict(series.meta, envelope=1, dt_source=float(np.median(np.diff(t))))
    return TimeSeries(tp, pp, series.kind, meta)


def _linfit(t, y):
    n = t.size
    tm, ym = t.mean(), y.mean()
    sxx = np.sum((t - tm) ** 2)
    slope = np.sum((t - tm) * (y - ym)) / sxx
    resid = y - ym - slope * (t - tm)
    ssr = float(np.sum(resid ** 2))
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ssr <= 1e-28 * max(n, 1) else (1.0 - ssr / sst if sst > 0 else 0.0)
    stderr = math.sqrt(ssr / (n - 2) / sxx) if n > 2 else math.inf
    return slope, stderr, r2


def _inflation(series: TimeSeries) -> float:
    dt_src = series.meta.get("dt_source")
    if not dt_src or series.t.size < 2:
        return 1.0
    return math.sqrt(float(np.mean(np.diff(series.t))) / dt_src)


def _fit_window(t, logp, lo, hi):
    mask = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if mask.sum() < 3:
        return None
    slope, stderr, r2 = _linfit(t[mask], logp[mask])
    if np.ptp(logp[mask]) <= FLAT_TOL:
        r2 = 1.0
    return -slope, stderr, r2, int(mask.sum())


def fit_exponential(series: TimeSeries, window="auto", t_lo_min: float | None = None,
                    n_grid: int = 8) -> RateEstimate:
    """Least-squares fit of ``ln p`` against ``t``; the rate is minus the slope.

    ``window`` is ``(t_lo, t_hi)`` or ``"auto"``.  Auto mode scans windows
    starting no earlier than ``max(2/V, first sample)`` and ending before
    ``p`` drops below 1e-3, and keeps the longest one with r^2 >= 0.999
    (or, if none reaches that, the longest with r^2 >= 0.99).  Half the
    spread of rates over comparably long admissible windows is reported as
    ``window_sensitivity``.
    """
    t = np.asarray(series.t, dtype=float)
    p = np.asarray(series.p, dtype=float)
    if t_lo_min is None:
        t_lo_min = 2.0 / float(series.meta.get("v", 1.0))
    inflate = _inflation(series)

    if window != "auto":
        lo, hi = window
        mask = (t >= lo) & (t <= hi)
        if np.any(p[mask] <= 0):
            raise FitError("non-positive probability inside the fit window")
        fit = _fit_window(t, np.log(np.where(p > 0, p, np.nan)), lo, hi)
        if fit is None:
            raise FitError(f"fewer than 3 points in window {window}")
        rate, stderr, r2, n = fit
        if r2 < R2_ACCEPT:
            raise FitError(f"r^2={r2:.4f} < {R2_ACCEPT}: decay is not exponential in {window}")
        return RateEstimate(float(rate), float(stderr * inflate), (float(lo), float(hi)),
                            float(r2), n)

    usable = (t >= t_lo_min) & (p >= P_FLOOR)
    if usable.sum() < 3:
        raise FitError("not enough samples after the quadratic regime")
    # last contiguous sample above the floor
    above = np.flatnonzero(p < P_FLOOR)
    t_end = t[above[0] - 1] if above.size and above[0] > 0 else t[-1]
    lo0 = max(t_lo_min, float(t[usable][0]))
    span = t_end - lo0
    if span <= 0:
        raise FitError("empty fit window")
    logp = np.log(np.clip(p, 1e-300, None))
    starts = lo0 + span * 0.5 * np.arange(n_grid) / n_grid
    ends = t_end - span * 0.5 * np.arange(n_grid) / n_grid
    candidates = []
    for lo in starts:
        for hi in ends:
            fit = _fit_window(t, logp, lo, hi)
            if fit is not None:
                candidates.append((hi - lo, -lo, lo, hi, fit))
    if not candidates:
        raise FitError("no admissible fit window")
    candidates.sort(key=lambda c: (c[0], c[1]), reverse=True)
    # longest window at r^2 >= 0.999; failing that, the longest one still acceptable
    good = ([c for c in candidates if c[4][2] >= R2_AUTO]
            or [c for c in candidates if c[4][2] >= R2_ACCEPT])
    if not good:
        top = max(c[4][2] for c in candidates)
        raise FitError(f"best r^2={top:.4f} < {R2_ACCEPT}: no exponential regime")
    best = good[0]
    peers = [c[4][0] for c in good if c[0] >= 0.5 * best[0]]
    rate, stderr, r2, n = best[4]
    sensitivity = 0.5 * (max(peers) - min(peers))
    return RateEstimate(float(rate), float(stderr * inflate), (float(best[2]), float(best[3])),
                        float(r2), n, float(sensitivity))


def series_rate(series: TimeSeries, window="auto") -> RateEstimate:
    """Envelope (when needed) + exponential fit, returned in units of V0^2/V."""
    est = fit_exponential(envelope(series), window)
    unit = float(series.meta["v0"]) ** 2 / float(series.meta["v"])
    return est.scaled(unit)


# ---------------------------------------------------------------------------
# sweeps


def resolve_threads(threads=None) -> int:
    if threads in (None, "auto", 0):
        env = os.environ.get("NMDECAY_THREADS")
        if env:
            return max(1, int(env))
        return max(1, os.cpu_count() or 1)
    return max(1, int(threads))


def _map(func, jobs, threads):
    """Run jobs, returning results in job order regardless of completion order."""
    threads = resolve_threads(threads)
    if threads == 1 or len(jobs) <= 1:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        return list(pool.map(func, jobs))


@dataclass(frozen=True)
class SweepPoint:
    v0: float
    t_max: float
    rates: dict
    errors: dict = field(default_factory=dict)

    @property
    def coupling(self) -> float:
        return self.v0 ** 2


@dataclass
class SweepResult:
    case_id: Case
    v: float
    v_ab: float
    points: list
    slopes: dict

    def slope(self, kind="SP") -> float:
        return self.slopes[kind][0]

    def to_record(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "case": self.case_id.value,
            "v": self.v,
            "v_ab": self.v_ab,
            "points": [
                {"v0": pt.v0, "t_max": pt.t_max,
                 "rates": {k: r.to_record() for k, r in sorted(pt.rates.items())},
                 "errors": dict(sorted(pt.errors.items()))}
                for pt in self.points
            ],
            "slopes": {k: {"slope": s, "stderr": e} for k, (s, e) in sorted(self.slopes.items())},
        }

    def to_plot_csv(self, path) -> Path:
        """Columns: V0^2/V and the raw fitted rate for each measure (1/time)."""
        kinds = sorted(self.slopes)
        lines = ["v0_sq_over_v," + ",".join(f"rate_{k}" for k in kinds)]
        for pt in self.points:
            u = pt.v0 ** 2 / self.v
            vals = [pt.rates[k].rate * u if k in pt.rates else float("nan") for k in kinds]
            lines.append(",".join(f"{x:.15g}" for x in [u, *vals]))
        Path(path).write_text("\n".join(lines) + "\n")
        return Path(path)


def _sweep_job(job):
    spec, kinds, t_max, dt = job
    rates, errors = {}, {}
    for kind in kinds:
        try:
            run = survival_probability if kind == "SP" else loschmidt_echo
            rates[kind] = series_rate(run(spec, t_max, dt))
        except (ArithmeticError, ValueError) as exc:
            errors[kind] = f"{type(exc).__name__}: {exc}"
    return SweepPoint(spec.v0, t_max, rates, errors)


def scaled_horizon(v0: float, dt: float = DEFAULT_DT, reference_v0: float = 0.1,
                   reference_t: float = DEFAULT_T_MAX) -> float:
    """Horizon keeping ``V0**2 * t_max`` at its reference value for weak coupling.

    Never shorter than ``reference_t``, so the quadratic transient stays a
    small part of the fit window at strong coupling.
    """
    t = reference_t * max(1.0, (reference_v0 / v0) ** 2)
    return dt * max(1, round(t / dt))


def rate_sweep(case: Case | str, v0_list, v: float = 1.0, kinds=("SP", "LE"),
               v_ab: float = 1.0, dt: float = DEFAULT_DT, t_max: float | None = None,
               n_env: int | None = None, threads=None, v_s: float = 1.0) -> SweepResult:
    """Fit rates for every ``V0`` and regress them on ``V0**2/V`` through the origin."""
    case = Case.parse(case)
    kinds = tuple(sorted(set(kinds)))
    for kind in kinds:
        if kind not in ("SP", "LE"):
            raise ValueError(f"unknown measure {kind!r}")
    jobs = []
    for v0 in sorted(float(x) for x in v0_list):
        horizon = t_max if t_max is not None else scaled_horizon(v0, dt)
        spec = SystemSpec(case, v_ab=v_ab, v0=v0, v=v, n_env=n_env, v_s=v_s)
        jobs.append((spec.with_horizon(horizon), kinds, horizon, dt))
    points = _map(_sweep_job, jobs, threads)
    slopes = {}
    for kind in kinds:
        pts = [(pt.v0 ** 2 / v, pt.rates[kind].rate * pt.v0 ** 2 / v)
               for pt in points if kind in pt.rates]
        if not pts:
            continue
        x, y = np.array(pts).T
        slope = float(np.dot(x, y) / np.dot(x, x))
        if x.size > 1:
            resid = y - slope * x
            err = math.sqrt(float(np.dot(resid, resid)) / (x.size - 1) / float(np.dot(x, x)))
        else:
            err = float("nan")
        slopes[kind] = (slope, err)
    return SweepResult(case, v, v_ab, points, slopes)


# ---------------------------------------------------------------------------
# reference rate table


@dataclass(frozen=True)
class Table1Row:
    label: str
    case: Case
    v: float
    sp: tuple
    le: tuple
    wba: float
    scfgr: tuple


TABLE1 = (
    Table1Row("I", Case.I, 1.0, (2.04, 0.05), (2.04, 0.05), 2.0, (2.0,)),
    Table1Row("II", Case.II, 1.0, (1.00, 0.02), (1.00, 0.02), 1.0, (1.0,)),
    Table1Row("III (V=V_AB)", Case.III, 1.0, (0.88, 0.05), (0.88, 0.05), 1.0, (0.87,)),
    Table1Row("III (V=5V_AB)", Case.III, 5.0, (1.00, 0.02), (1.00, 0.02), 1.0, (0.995,)),
    Table1Row("IV (V=V_AB)", Case.IV, 1.0, (0.56, 0.02), (0.56, 0.02), 0.5, (0.577,)),
    Table1Row("IV (V=5V_AB)", Case.IV, 5.0, (0.50, 0.02), (0.50, 0.02), 0.5, (0.502,)),
    Table1Row("V", Case.V, 1.0, (1.16, 0.03), (1.16, 0.03), 1.0, (1.15,)),
    Table1Row("VI (V=V_AB)", Case.VI, 1.0, (1.71, 0.04), (1.20, 0.04), 1.0, (1.732, 0.577)),
    Table1Row("VI (V=5V_AB)", Case.VI, 5.0, (1.11, 0.03), (1.02, 0.03), 1.0, (1.106, 0.904)),
)


@dataclass(frozen=True)
class Table1Config:
    """Simulation settings for the rate-table reproduction.

    ``v0`` is in units of V_AB for every row.
    """

    v0: float = 0.1
    v_ab: float = 1.0
    t_max: float = DEFAULT_T_MAX
    dt: float = DEFAULT_DT
    n_env_min: int = 2000
    tolerance: float = 0.07
    threads: int | None = 1
    rows: tuple | None = None


@dataclass
class Table1Report:
    config: Table1Config
    rows: list

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.rows)

    def to_record(self) -> dict:
        cfg = asdict(self.config)
        cfg["rows"] = list(cfg["rows"]) if cfg["rows"] is not None else None
        return {"schema_version": REPORT_SCHEMA_VERSION, "config": cfg,
                "rows": self.rows, "passed": self.passed}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_record(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def to_text(self) -> str:
        head = ("System", "SP fit", "LE fit", "WBA", "SC-FGR", "published SP", "published LE", "ok")
        lines = []
        for r in self.rows:
            sp, le = r.get("sp"), r.get("le")
            scf = r["scfgr"]
            scf_txt = (f"{scf['forward']:.3f}" if scf.get("backward") is None
                       else f"{scf['forward']:.3f}/{scf['backward']:.3f}")
            lines.append((
                r["row"],
                f"{sp['rate']:.3f}±{sp['stderr']:.3f}" if sp else "error",
                f"{le['rate']:.3f}±{le['stderr']:.3f}" if le else "error",
                f"{r['wba']:.3g}",
                scf_txt,
                f"{r['published']['sp']:.2f}±{r['published']['sp_err']:.2f}",
                f"{r['published']['le']:.2f}±{r['published']['le_err']:.2f}",
                "pass" if r["pass"] else "FAIL",
            ))
        widths = [max(len(str(x)) for x in col) for col in zip(head, *lines)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        out = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
        out += [fmt.format(*row) for row in lines]
        return "\n".join(out)


def _table1_job(job):
    row, cfg = job
    spec = SystemSpec(row.case, v_ab=cfg.v_ab, v0=cfg.v0, v=row.v)
    n_env = max(cfg.n_env_min, min_n_env(row.v, cfg.t_max))
    spec = replace(spec, n_env=n_env)
    record = {
        "row": row.label, "case": row.case.value, "v": row.v, "v0": cfg.v0,
        "n_env": n_env,
        "published": {"sp": row.sp[0], "sp_err": row.sp[1], "le": row.le[0],
                  "le_err": row.le[1], "wba": row.wba, "scfgr": list(row.scfgr)},
        "wba": wba_rate(row.case, row.v / cfg.v_ab),
    }
    fwd = scfgr_rate(row.case, cfg.v_ab, row.v, "forward")
    bwd = scfgr_rate(row.case, cfg.v_ab, row.v, "backward") if row.case is Case.VI else None
    record["scfgr"] = {"forward": fwd, "backward": bwd,
                       "le_mean": le_rate_prediction(row.case, cfg.v_ab, row.v)}
    if row.case in (Case.I, Case.II, Case.III, Case.IV, Case.V, Case.VI):
        poles = {d: gf_poles(row.case, cfg.v_ab, cfg.v0, row.v, d).normalized_rate
                 for d in (("forward", "backward") if row.case is Case.VI else ("forward",))}
        record["exact_pole_rate"] = poles
    ok = True
    for kind, ref in (("sp", row.sp), ("le", row.le)):
        try:
            run = survival_probability if kind == "sp" else loschmidt_echo
            est = series_rate(run(spec, cfg.t_max, cfg.dt))
            record[kind] = est.to_record()
            passed = bool(abs(est.rate - ref[0]) <= cfg.tolerance)
        except (ArithmeticError, ValueError) as exc:
            record[kind] = None
            record[f"{kind}_error"] = f"{type(exc).__name__}: {exc}"
            passed = False
        record[f"pass_{kind}"] = passed
        ok = ok and passed
    record["pass"] = ok
    return record


def table1_report(config: Table1Config | None = None) -> Table1Report:
    """Simulate every rate-table row and compare with the published columns."""
    config = config or Table1Config()
    rows = [r for r in TABLE1 if config.rows is None or r.label in config.rows]
    records = _map(_table1_job, [(r, config) for r in rows], config.threads)
    return Table1Report(config, records)
