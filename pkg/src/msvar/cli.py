"""Command-line entry point: ``msvar {simulate,fit,diagnose,experiment}``.

Exit codes: 0 success, 2 invalid input, 3 study-level or fit failure, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .core import InvalidInputError, ModelParams, MsvarError, SeriesData, validate
from .diagnostics import bound_check, gradient_norm_probe, isnr_probe, probe_beta, random_instance, xi_coefficient
from .em import EmConfig, FitError, fit
from .experiment import ExperimentSpec, ResultsFormatError, StudyError, run_experiment, summarize
from .filtering import approx_estep, window_length
from .seeding import stream
from .simulate import DEFAULT_BURN_IN, SettingSpec, SimConfig, setting_two_draw, simulate
from .tuning import TuningPolicy

EXIT_OK, EXIT_INPUT, EXIT_FAILURE, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("msvar")


def _s_policy(text: str):
    if text in ("logT", "adaptive"):
        return text
    if text.startswith("fixed:"):
        text = text.split(":", 1)[1]
    try:
        s = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be fixed:N, logT or adaptive, got {text!r}") from None
    if s < 1:
        raise argparse.ArgumentTypeError("window length must be >= 1")
    return s


def _float_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma list."""
    if ":" in text:
        a, b, h = (float(v) for v in text.split(":"))
        if h <= 0 or b < a:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}")
        n = int(round((b - a) / h)) + 1
        return [round(a + i * h, 12) for i in range(n)]
    return [float(v) for v in text.split(",")]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


# -- simulate ------------------------------------------------------------------


def cmd_simulate(args) -> int:
    setting = SettingSpec(args.setting, args.d, args.seed)
    if args.setting == 2:
        params, rejected = setting_two_draw(args.d, args.seed)
        if rejected:
            log.info("setting 2: %d non-stationary draws rejected", rejected)
    else:
        params = setting.params()
    series = simulate(SimConfig(params, args.t, args.burn_in, args.seed))
    series.to_csv(args.out)
    if args.params_out:
        params.to_json(args.params_out)
    if "warning" in series.meta:
        print(f"warning: {series.meta['warning']}", file=sys.stderr)
    return EXIT_OK


# -- fit -----------------------------------------------------------------------


def _tuning_from_args(args) -> TuningPolicy:
    return TuningPolicy.parse(
        args.tuning, n_folds=args.folds, grid_size=args.grid, fold_scheme=args.fold_scheme, seed=args.seed
    )


def cmd_fit(args) -> int:
    series = SeriesData.from_csv(args.data)
    cfg = EmConfig(
        k=args.k,
        s_policy=args.s,
        tol_inf=args.tol,
        max_iter=args.max_iter,
        n_inits=args.inits,
        emt_c=args.emt_threshold,
        tuning=_tuning_from_args(args),
        seed=args.seed,
        engine=args.engine,
        keep_iterates=args.keep_iterates,
    )
    summary = fit(series, cfg)
    best = summary.best
    out = best.to_dict()
    out["inits"] = [
        {"init_id": r.init_id, "status": r.status, "hbic": r.hbic, "iterations": r.n_iter,
         "converged": r.converged, "message": r.message}
        for r in summary.all
    ]
    if args.keep_iterates and best.iterates is not None:
        out["iterates"] = [p.to_dict() for p in best.iterates]
    Path(args.out).write_text(json.dumps(out, indent=2, allow_nan=True) + "\n")
    if args.dump_weights:
        s = window_length(cfg.s_policy, series.t_len, best.theta_hat.trans)
        w = approx_estep(series, best.theta_hat, s, cfg.start_state)
        with open(args.dump_weights, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "j", "m"])
            for t in range(w.t_len):
                for j in range(w.k):
                    wr.writerow([t + 1, j + 1, repr(float(w.marg[t, j]))])
    print(f"best init {best.init_id}: hbic={best.hbic:.4f} converged={best.converged} iterations={best.n_iter}")
    return EXIT_OK


# -- diagnose ------------------------------------------------------------------


def cmd_xi(args) -> int:
    params = ModelParams.from_json(args.params)
    rep = validate(params)
    print(f"xi = {xi_coefficient(params.trans)!r}")
    print(f"spectral norms = {[round(float(v), 6) for v in rep.spectral_norms]}")
    print(f"stationarity certified = {rep.stationarity_certified}")
    for v in rep.violations:
        print(f"violation: {v}")
    return EXIT_OK if not rep.violations else EXIT_INPUT


def cmd_bound(args) -> int:
    rng = stream(args.seed, "bound-suite")
    n_viol = 0
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["rep", "s", "xi", "err_marg", "err_pair", "bound_marg", "bound_pair", "violated"])
        for rep in range(args.reps):
            params, series = random_instance(rng, args.k, args.d, args.t, p_floor=args.p_floor)
            xi = xi_coefficient(params.trans)
            for row in bound_check(series, params, range(1, args.s_max + 1)):
                n_viol += row.violated
                wr.writerow([rep, row.s, repr(xi), repr(row.err_marg), repr(row.err_pair),
                             repr(row.bound_marg), repr(row.bound_pair), str(row.violated).lower()])
    print(f"{n_viol} violations over {args.reps} instances")
    return EXIT_OK if n_viol == 0 else EXIT_FAILURE


def cmd_isnr(args) -> int:
    n, burn = (100_000, 50_000) if args.paper_scale else (args.samples, args.burn_in)
    rows = []
    for d in args.dims:
        for mu in args.mu_grid:
            beta = probe_beta(mu, d)
            row = [d, mu, isnr_probe(beta, args.p1, n, burn, args.seed)]
            if args.gradient:
                row.append(gradient_norm_probe(beta, args.p1, n, args.seed, burn))
            rows.append(row)
            print("  ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["d", "mu", "isnr"] + (["grad_norm"] if args.gradient else []))
        for row in rows:
            wr.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return EXIT_OK


# -- experiment ----------------------------------------------------------------


def cmd_experiment_run(args) -> int:
    spec = ExperimentSpec.from_json(args.spec)
    changes = {}
    if args.out_dir:
        changes["out_dir"] = args.out_dir
    if args.master_seed is not None:
        changes["master_seed"] = args.master_seed
    if args.reps is not None:
        changes["n_reps"] = args.reps
    if args.t_values:
        changes["t_values"] = tuple(args.t_values)
    if args.emt_threshold is not None:
        changes.update(run_emt=True, emt_c=args.emt_threshold)
    if args.redraw_per_rep:
        changes["redraw_per_rep"] = True
    spec = replace(spec, **changes)
    if args.paper_scale:
        spec = spec.paper_scale()
    results = run_experiment(spec, args.threads)
    print((Path(spec.out_dir) / "report.txt").read_text(), end="")
    print(f"results written to {results}")
    return EXIT_OK


def cmd_experiment_summarize(args) -> int:
    out = args.summary_out or str(Path(args.results).with_name("summary.csv"))
    report = summarize(args.results, out)
    print(report.text(), end="")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msvar", description="Sparse Markov-switching VAR(1) estimation by approximate EM.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a series from setting 1 or 2")
    s.add_argument("--setting", type=int, choices=(1, 2), required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--t", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--burn-in", type=int, default=DEFAULT_BURN_IN)
    s.add_argument("--out", required=True)
    s.add_argument("--params-out")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="multi-start approximate EM on a series CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--k", type=int, default=2)
    f.add_argument("--s", type=_s_policy, default="logT", help="fixed:N, logT or adaptive")
    f.add_argument("--tol", type=float, default=1e-4)
    f.add_argument("--max-iter", type=int, default=200)
    f.add_argument("--inits", type=int, default=5)
    f.add_argument("--emt-threshold", type=float, default=None, metavar="C",
                   help="truncate at C*sqrt(log(K d^2)/T) after every M-step")
    f.add_argument("--tuning", default="cv", help="cv or fixed:VALUE")
    f.add_argument("--folds", type=int, default=10)
    f.add_argument("--grid", type=int, default=50)
    f.add_argument("--fold-scheme", choices=("random", "blocks"), default="random")
    f.add_argument("--engine", choices=("approx", "exact"), default="approx")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--keep-iterates", action="store_true")
    f.add_argument("--dump-weights", metavar="CSV")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    d = sub.add_parser("diagnose", help="mixing coefficient, window-error bound, signal-strength probes")
    dsub = d.add_subparsers(dest="what", required=True)
    x = dsub.add_parser("xi")
    x.add_argument("--params", required=True)
    x.set_defaults(func=cmd_xi)
    b = dsub.add_parser("bound")
    b.add_argument("--d", type=int, default=2)
    b.add_argument("--k", type=int, default=2)
    b.add_argument("--t", type=int, default=50)
    b.add_argument("--s-max", type=int, default=8)
    b.add_argument("--reps", type=int, default=50)
    b.add_argument("--p-floor", type=float, default=0.05)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bound)
    i = dsub.add_parser("isnr")
    i.add_argument("--mu-grid", type=_float_grid, default=_float_grid("0.3:1.5:0.1"))
    i.add_argument("--dims", type=_int_list, default=[3], help="comma list of multiples of 3")
    i.add_argument("--p1", type=float, default=0.5)
    i.add_argument("--samples", type=int, default=20_000)
    i.add_argument("--burn-in", type=int, default=5_000)
    i.add_argument("--paper-scale", action="store_true", help="100k samples after a 50k burn-in")
    i.add_argument("--gradient", action="store_true", help="also report the gradient-norm probe")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_isnr)

    e = sub.add_parser("experiment", help="simulation studies")
    esub = e.add_subparsers(dest="what", required=True)
    r = esub.add_parser("run")
    r.add_argument("--spec", required=True)
    r.add_argument("--paper-scale", action="store_true")
    r.add_argument("--threads", type=int, default=None, help="default: MSWITCH_THREADS or all cores")
    r.add_argument("--out-dir")
    r.add_argument("--master-seed", type=int)
    r.add_argument("--reps", type=int)
    r.add_argument("--t-values", type=_int_list)
    r.add_argument("--emt-threshold", type=float, metavar="C", help="also run the truncated variant")
    r.add_argument("--redraw-per-rep", action="store_true")
    r.set_defaults(func=cmd_experiment_run)
    m = esub.add_parser("summarize")
    m.add_argument("results")
    m.add_argument("--summary-out")
    m.set_defaults(func=cmd_experiment_summarize)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (StudyError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (InvalidInputError, ResultsFormatError, FileNotFoundError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MsvarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
