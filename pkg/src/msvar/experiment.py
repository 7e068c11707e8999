"""Simulation-study runner: simulate, fit, score, and summarize over (T, replication) cells.

Each cell is a pure function of the study spec and ``(T, rep)``: its seeds come
from ``derive_seed(master_seed, purpose, T, rep)``. Cells run in a process pool
and the collector writes rows in ``(T, rep, method)`` order, so the results file
does not depend on the number of workers. Wall-clock times go to a separate
file for the same reason.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .core import InvalidInputError, ModelParams, MsvarError
from .diagnostics import compute_metrics, oracle_fit
from .em import EmConfig, FitError, align_params, fit
from .seeding import derive_seed
from .simulate import DEFAULT_BURN_IN, SettingSpec, SimConfig, setting_two_draw, simulate
from .tuning import TuningPolicy

SCHEMA_VERSION = 1
METHODS = ("em", "emt", "oracle")

RESULT_COLUMNS = [
    "schema_version", "method", "T", "rep", "status",
    "beta_l2_error", "log_beta_error", "sigma2_error",
    "support_precision", "support_recall",
    "p11_hat", "p21_hat", "sigma2_hat", "p11_error", "p21_error",
    "nnz", "converged", "iterations", "hbic", "init_id", "failed_inits", "lambda_final",
    "message",
]
METRIC_COLUMNS = [
    "beta_l2_error", "log_beta_error", "sigma2_error", "support_precision", "support_recall",
    "p11_hat", "p21_hat", "sigma2_hat", "p11_error", "p21_error", "nnz",
]

# thresholds used by the text report
SLOPE_RANGE = (-0.75, -0.25)
MAX_LOG_GAP = 0.7
MAX_TRANS_ERROR = 0.05
MAX_SIGMA2_ERROR = 0.1


class StudyError(MsvarError):
    pass


class ResultsFormatError(MsvarError, ValueError):
    pass


# -- spec ----------------------------------------------------------------------


def _em_to_dict(cfg: EmConfig) -> dict:
    out = asdict(cfg)
    out["tuning"] = asdict(cfg.tuning)
    return out


def _em_from_dict(obj: dict) -> EmConfig:
    obj = dict(obj)
    known = {f.name for f in fields(EmConfig)}
    unknown = set(obj) - known
    if unknown:
        raise InvalidInputError(f"unknown em fields: {sorted(unknown)}")
    if "tuning" in obj:
        obj["tuning"] = TuningPolicy(**obj["tuning"])
    return EmConfig(**obj)


@dataclass(frozen=True)
class ExperimentSpec:
    setting: SettingSpec
    t_values: tuple[int, ...] = (500, 1000, 2000)
    n_reps: int = 10
    em: EmConfig = field(default_factory=EmConfig)
    run_em: bool = True
    run_oracle: bool = True
    run_emt: bool = False
    emt_c: float = 0.5
    out_dir: str = "results"
    master_seed: int = 0
    burn_in: int = DEFAULT_BURN_IN
    redraw_per_rep: bool = False

    def __post_init__(self):
        t = tuple(int(v) for v in self.t_values)
        object.__setattr__(self, "t_values", t)
        if not t or any(b <= a for a, b in zip(t, t[1:])):
            raise InvalidInputError("t_values must be nonempty and strictly increasing")
        if min(t) < 20:
            raise InvalidInputError("every T must be >= 20")
        if self.n_reps < 1:
            raise InvalidInputError("n_reps must be >= 1")
        if not (self.run_em or self.run_oracle or self.run_emt):
            raise InvalidInputError("nothing to run: enable em, emt or oracle")

    @property
    def methods(self) -> list[str]:
        on = {"em": self.run_em, "emt": self.run_emt, "oracle": self.run_oracle}
        return [m for m in METHODS if on[m]]

    def paper_scale(self) -> "ExperimentSpec":
        """Replication counts used for the published figures."""
        return replace(self, n_reps=100 if self.setting.d <= 30 else 20)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["setting"] = asdict(self.setting)
        out["em"] = _em_to_dict(self.em)
        out["t_values"] = list(self.t_values)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentSpec":
        obj = dict(obj)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise InvalidInputError(f"unknown spec fields: {sorted(unknown)}")
        if "setting" not in obj:
            raise InvalidInputError("spec needs a 'setting'")
        obj["setting"] = SettingSpec(**obj["setting"])
        if "em" in obj:
            obj["em"] = _em_from_dict(obj["em"])
        return cls(**obj)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentSpec":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: {exc}") from exc
        return cls.from_dict(obj)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


# -- one cell ------------------------------------------------------------------


def cell_params(spec: ExperimentSpec, rep: int) -> ModelParams:
    if spec.setting.kind == 2 and spec.redraw_per_rep:
        return setting_two_draw(spec.setting.d, derive_seed(spec.master_seed, "setting", rep))[0]
    return spec.setting.params()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _metric_fields(theta: ModelParams, truth: ModelParams) -> dict:
    m = compute_metrics(theta, truth)
    out = {
        "beta_l2_error": m.beta_l2_error,
        "log_beta_error": m.log_beta_error,
        "sigma2_error": m.sigma2_error,
        "support_precision": m.support_precision,
        "support_recall": m.support_recall,
        "p11_hat": m.p11_hat,
        "p21_hat": m.p21_hat,
        "sigma2_hat": m.sigma2_hat,
        "p11_error": m.trans_errors[0][0],
        "p21_error": m.trans_errors[1][0] if theta.k > 1 else None,
        "nnz": int(np.count_nonzero(theta.beta)),
    }
    return out


def _cell_em_config(spec: ExperimentSpec, t_len: int, rep: int, emt: bool) -> EmConfig:
    cfg = spec.em
    tuning = replace(cfg.tuning, seed=derive_seed(spec.master_seed, "cv", t_len, rep))
    cfg = replace(cfg, seed=derive_seed(spec.master_seed, "init", t_len, rep), tuning=tuning)
    if emt:
        cfg = replace(cfg, emt_c=spec.emt_c)
    return cfg


def run_cell(spec: ExperimentSpec, t_len: int, rep: int) -> tuple[list[dict], list[dict]]:
    """Rows (results) and timings for one (T, rep) cell. Never raises for fit failures."""
    truth = cell_params(spec, rep)
    base = {"schema_version": SCHEMA_VERSION, "T": t_len, "rep": rep}
    series = simulate(
        SimConfig(truth, t_len, spec.burn_in, derive_seed(spec.master_seed, "simulate", t_len, rep))
    )
    rows, times = [], []
    for method in spec.methods:
        row = dict(base, method=method, status="ok", message="")
        start = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                if method == "oracle":
                    tuning = replace(spec.em.tuning, seed=derive_seed(spec.master_seed, "cv", t_len, rep))
                    theta = oracle_fit(series, truth.k, tuning)
                else:
                    summary = fit(series, _cell_em_config(spec, t_len, rep, method == "emt"))
                    best = summary.best
                    theta = best.theta_hat
                    row.update(
                        converged=best.converged,
                        iterations=best.n_iter,
                        hbic=best.hbic,
                        init_id=best.init_id,
                        failed_inits=sum(not r.ok for r in summary.all),
                        lambda_final=best.trace[-1].lam if best.trace else None,
                    )
            theta, _ = align_params(theta, truth)
            row.update(_metric_fields(theta, truth))
        except FitError as exc:
            row.update(status="failed", message=str(exc)[:200])
        except Exception as exc:  # a broken cell is recorded, never fatal to the study
            row.update(status="error", message=f"{type(exc).__name__}: {exc}"[:200])
        times.append({"method": method, "T": t_len, "rep": rep, "seconds": time.perf_counter() - start})
        rows.append(row)
    return rows, times


def _worker(args):
    spec_dict, t_len, rep = args
    spec = ExperimentSpec.from_dict(spec_dict)
    with threadpool_limits(1):
        return (t_len, rep), run_cell(spec, t_len, rep)


def default_threads() -> int:
    env = os.environ.get("MSWITCH_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise InvalidInputError(f"MSWITCH_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise InvalidInputError("MSWITCH_THREADS must be >= 1")
        return n
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# -- study ---------------------------------------------------------------------


def write_rows(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def run_experiment(spec: ExperimentSpec, n_threads: int | None = None) -> Path:
    """Run every (T, rep) cell and write results.csv, timings.csv and summary.csv.

    Returns the results path. Raises StudyError (after writing) when more than
    half of the replications of some method fail at some T.
    """
    n_threads = n_threads or default_threads()
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec.to_json(out / "spec.json")
    cells = [(t, r) for t in spec.t_values for r in range(spec.n_reps)]
    done: dict[tuple[int, int], tuple[list[dict], list[dict]]] = {}
    if n_threads == 1:
        with threadpool_limits(1):
            for t, r in cells:
                done[(t, r)] = run_cell(spec, t, r)
    else:
        payload = spec.to_dict()
        with ProcessPoolExecutor(max_workers=n_threads) as pool:
            for key, res in pool.map(_worker, [(payload, t, r) for t, r in cells], chunksize=1):
                done[key] = res
    rows = [row for key in cells for row in done[key][0]]
    times = [tm for key in cells for tm in done[key][1]]
    results = out / "results.csv"
    write_rows(results, RESULT_COLUMNS, rows)
    write_rows(out / "timings.csv", ["method", "T", "rep", "seconds"], times)
    report = summarize(results, out / "summary.csv")
    (out / "report.txt").write_text(report.text())
    _check_failures(rows, spec)
    return results


def _check_failures(rows: list[dict], spec: ExperimentSpec) -> None:
    bad = []
    for method in spec.methods:
        for t in spec.t_values:
            sel = [r for r in rows if r["method"] == method and r["T"] == t]
            n_fail = sum(r["status"] != "ok" for r in sel)
            if n_fail * 2 > len(sel):
                bad.append(f"{method} at T={t}: {n_fail}/{len(sel)} replications failed")
    if bad:
        raise StudyError("; ".join(bad))


# -- summary -------------------------------------------------------------------


def read_results(path: str | Path) -> list[dict]:
    """Parse a results file, checking every row against the schema."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ResultsFormatError(f"{path}: empty results file") from None
        if header != RESULT_COLUMNS:
            raise ResultsFormatError(f"{path}: header does not match schema version {SCHEMA_VERSION}")
        rows, errors = [], []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                errors.append(f"line {lineno}: expected {len(header)} fields, got {len(raw)}")
                continue
            rec = dict(zip(header, raw))
            try:
                if int(rec["schema_version"]) != SCHEMA_VERSION:
                    raise ValueError("schema version")
                rec["T"] = int(rec["T"])
                rec["rep"] = int(rec["rep"])
                if rec["method"] not in METHODS or rec["status"] not in ("ok", "failed", "error"):
                    raise ValueError("method/status")
                for c in METRIC_COLUMNS:
                    rec[c] = float(rec[c]) if rec[c] != "" else math.nan
                if rec["status"] == "ok" and math.isnan(rec["beta_l2_error"]):
                    raise ValueError("missing metrics on an ok row")
            except ValueError as exc:
                errors.append(f"line {lineno}: {exc}")
                continue
            rows.append(rec)
    if errors:
        raise ResultsFormatError("malformed results rows:\n" + "\n".join(errors))
    if not rows:
        raise ResultsFormatError(f"{path}: no result rows")
    return rows


def ols_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        return math.nan
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


@dataclass
class GroupStats:
    method: str
    t_len: int
    n_ok: int
    n_failed: int
    medians: dict[str, float]
    q1: dict[str, float]
    q3: dict[str, float]


@dataclass
class Check:
    name: str
    passed: bool | None  # None: not evaluable
    detail: str


@dataclass
class StudyReport:
    groups: list[GroupStats]
    slopes_median: dict[str, float]
    slopes_rep: dict[str, float]
    checks: list[Check]

    def group(self, method: str, t_len: int) -> GroupStats | None:
        for g in self.groups:
            if g.method == method and g.t_len == t_len:
                return g
        return None

    def text(self) -> str:
        lines = ["method   T      ok  failed  median log err  median p11  median sigma2"]
        for g in self.groups:
            lines.append(
                f"{g.method:<8} {g.t_len:<6} {g.n_ok:<3} {g.n_failed:<7} "
                f"{g.medians['log_beta_error']:<15.4f} {g.medians['p11_hat']:<11.4f} {g.medians['sigma2_hat']:.4f}"
            )
        lines.append("")
        for m, s in self.slopes_median.items():
            flag = " (undefined: fewer than two T values)" if math.isnan(s) else ""
            lines.append(f"slope of median log error vs log T [{m}]: {s:.4f}{flag}")
            lines.append(f"slope over replications [{m}]: {self.slopes_rep[m]:.4f}")
        lines.append("")
        for c in self.checks:
            mark = "n/a " if c.passed is None else ("PASS" if c.passed else "FAIL")
            lines.append(f"[{mark}] {c.name}: {c.detail}")
        return "\n".join(lines) + "\n"


def _quantiles(vals):
    if not vals:
        return math.nan, math.nan, math.nan
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    return float(med), float(q1), float(q3)


def summarize(results_path: str | Path, summary_path: str | Path | None = None) -> StudyReport:
    rows = read_results(results_path)
    methods = [m for m in METHODS if any(r["method"] == m for r in rows)]
    t_values = sorted({r["T"] for r in rows})
    groups = []
    for m in methods:
        for t in t_values:
            sel = [r for r in rows if r["method"] == m and r["T"] == t]
            if not sel:
                continue
            ok = [r for r in sel if r["status"] == "ok"]
            med, lo, hi = {}, {}, {}
            for c in METRIC_COLUMNS:
                vals = [r[c] for r in ok if not math.isnan(r[c])]
                med[c], lo[c], hi[c] = _quantiles(vals)
            groups.append(GroupStats(m, t, len(ok), len(sel) - len(ok), med, lo, hi))
    slopes_median, slopes_rep = {}, {}
    for m in methods:
        gs = [g for g in groups if g.method == m and not math.isnan(g.medians["log_beta_error"])]
        slopes_median[m] = ols_slope([math.log(g.t_len) for g in gs], [g.medians["log_beta_error"] for g in gs])
        ok = [r for r in rows if r["method"] == m and r["status"] == "ok"]
        slopes_rep[m] = ols_slope([math.log(r["T"]) for r in ok], [r["log_beta_error"] for r in ok])
    report = StudyReport(groups, slopes_median, slopes_rep, _checks(groups, slopes_median, t_values))
    if summary_path is not None:
        _write_summary(Path(summary_path), report)
    return report


def _checks(groups, slopes, t_values) -> list[Check]:
    out = []
    lo, hi = SLOPE_RANGE
    for m, s in slopes.items():
        if m == "emt":
            continue
        out.append(Check(f"rate slope {m}", None if math.isnan(s) else lo <= s <= hi, f"{s:.4f} in [{lo}, {hi}]"))
    have = {g.method for g in groups}
    if {"em", "oracle"} <= have:
        for t in t_values:
            e, o = _pick(groups, "em", t), _pick(groups, "oracle", t)
            if e and o:
                gap = e.medians["log_beta_error"] - o.medians["log_beta_error"]
                out.append(Check(f"em-oracle gap T={t}", None if math.isnan(gap) else gap <= MAX_LOG_GAP,
                                 f"{gap:.4f} <= {MAX_LOG_GAP}"))
    t_max = t_values[-1]
    e = _pick(groups, "em", t_max)
    if e:
        for c, tol in (("p11_error", MAX_TRANS_ERROR), ("p21_error", MAX_TRANS_ERROR), ("sigma2_error", MAX_SIGMA2_ERROR)):
            v = e.medians[c]
            out.append(Check(f"em median {c} T={t_max}", None if math.isnan(v) else v <= tol, f"{v:.4f} <= {tol}"))
    x = _pick(groups, "emt", t_max)
    if e and x:
        a, b = x.medians["support_precision"], e.medians["support_precision"]
        out.append(Check(f"emt precision >= em T={t_max}", a >= b, f"{a:.4f} vs {b:.4f}"))
    return out


def _pick(groups, method, t_len):
    for g in groups:
        if g.method == method and g.t_len == t_len:
            return g
    return None


def _write_summary(path: Path, report: StudyReport) -> None:
    rows = []
    for g in report.groups:
        rows.append({"method": g.method, "T": g.t_len, "metric": "n_ok", "median": g.n_ok})
        rows.append({"method": g.method, "T": g.t_len, "metric": "n_failed", "median": g.n_failed})
        for c in METRIC_COLUMNS:
            rows.append({"method": g.method, "T": g.t_len, "metric": c,
                         "median": g.medians[c], "q1": g.q1[c], "q3": g.q3[c]})
    for m, s in report.slopes_median.items():
        rows.append({"method": m, "T": "all", "metric": "slope_median_log_beta_error", "median": s})
        rows.append({"method": m, "T": "all", "metric": "slope_rep_log_beta_error", "median": report.slopes_rep[m]})
    write_rows(path, ["method", "T", "metric", "median", "q1", "q3"], rows)
