"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line, echoed in the terminal summary. The
simulation study behind criteria 4, 5, 6, 9 and 10 is run once per session.
"""

import json
import os
import statistics
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

import msvar.em
import msvar.mstep
import msvar.tuning
from msvar.cli import main as cli_main
from msvar.core import ModelParams, SeriesData
from msvar.diagnostics import bound_check, gradient_norm_probe, isnr_probe, probe_beta, xi_coefficient
from msvar.em import EmConfig, fit
from msvar.experiment import ExperimentSpec, read_results, run_experiment, summarize
from msvar.filtering import approx_estep, exact_filter
from msvar.mstep import GramStats, LassoConfig, solve_lasso
from msvar.simulate import SettingSpec, SimConfig, make_setting_one, simulate
from msvar.tuning import TuningPolicy
from oracles import filter_by_enumeration, random_instance, window_by_enumeration
from verdicts import record

STUDY_SEED = 2024
STUDY_T = (500, 1000, 2000)
# wall-clock budget for the study, stated for an 8-core machine
STUDY_BUDGET_8_CORES = 30 * 60


def _study_spec(out_dir, emt=False, t_values=STUDY_T):
    return ExperimentSpec(
        setting=SettingSpec(kind=1, d=30),
        t_values=t_values,
        n_reps=10,
        em=EmConfig(n_inits=5),
        run_em=not emt,
        run_oracle=not emt,
        run_emt=emt,
        out_dir=str(out_dir),
        master_seed=STUDY_SEED,
    )


def _cores():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


@pytest.fixture(scope="session")
def study(tmp_path_factory):
    root = tmp_path_factory.mktemp("study")
    cores = _cores()
    t0 = time.perf_counter()
    first = run_experiment(_study_spec(root / "threads1"), 1)
    elapsed = time.perf_counter() - t0
    second = run_experiment(_study_spec(root / "threads2"), 2)
    emt = run_experiment(_study_spec(root / "emt", emt=True, t_values=(max(STUDY_T),)), cores)
    return {"first": first, "second": second, "emt": emt, "elapsed": elapsed, "cores": cores,
            "report": summarize(first)}


# -- criterion 1 ----------------------------------------------------------------


def test_c1_window_error_bound():
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    n_viol, n_checked, worst = 0, 0, -np.inf
    for _ in range(50):
        k, d = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        params, series = random_instance(rng, k, d, 50, p_floor=0.05)
        assert params.trans.min() >= 0.05
        for row in bound_check(series, params, range(1, 9), slack=1e-9):
            n_checked += 1
            n_viol += row.violated
            worst = max(worst, row.err_marg - row.bound_marg, row.err_pair - row.bound_pair)
    elapsed = time.perf_counter() - t0
    ok = n_viol == 0 and elapsed < 30
    record("C1 bound suite", ok,
           f"{n_viol} violations in {n_checked} (instance, s) checks, max excess {worst:.3g}, {elapsed:.1f} s")
    assert ok


# -- criterion 2 ----------------------------------------------------------------


def test_c2_filter_matches_enumeration():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(20):
        k, s = int(rng.integers(2, 4)), int(rng.integers(1, 7))
        params, series = random_instance(rng, k, int(rng.integers(1, 4)), 12)
        start = i % k
        w = approx_estep(series, params, s, start_state=start)
        marg, pair = window_by_enumeration(series, params, s, start)
        worst = max(worst, np.abs(w.marg - marg).max(), np.abs(w.pair - pair).max())
    exact_worst = 0.0
    for _ in range(5):
        params, series = random_instance(rng, 2, 2, 6)
        w = exact_filter(series, params)
        marg, pair = filter_by_enumeration(series, params)
        exact_worst = max(exact_worst, np.abs(w.marg - marg).max(), np.abs(w.pair - pair).max())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and exact_worst <= 1e-10 and elapsed < 10
    record("C2 filter oracles", ok,
           f"window max diff {worst:.2e}, exact (T=6) max diff {exact_worst:.2e}, {elapsed:.1f} s")
    assert ok


# -- criterion 3 ----------------------------------------------------------------


def _direct_kkt(x, y, m, b, lam):
    n = x.shape[0]
    grad = -2.0 / n * (x * m[:, None]).T @ (y - x @ b)
    nz = b != 0
    return np.where(nz, np.abs(grad + lam * np.sign(b)), np.maximum(np.abs(grad) - lam, 0.0)).max()


def test_c3_lasso(monkeypatch):
    t0 = time.perf_counter()
    # (a) zero penalty against the normal equations
    ls_worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((300, 6))
        y = x @ rng.standard_normal((6, 4)) + rng.standard_normal((300, 4))
        ols = np.linalg.solve(x.T @ x, x.T @ y)
        got = solve_lasso(GramStats.build(x, y, np.ones((300, 1))), LassoConfig(0.0)).coeffs[0]
        ls_worst = max(ls_worst, np.abs(got - ols).max())

    # (b) certificate on a weighted battery, from the raw data
    kkt_worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        n, d = 150, 8
        x = rng.standard_normal((n, d))
        y = x @ (rng.standard_normal((d, 3)) * (rng.random((d, 3)) < 0.3)) + rng.standard_normal((n, 3))
        m = rng.dirichlet(np.ones(2), size=n)
        stats = GramStats.build(x, y, m)
        for frac in (0.0, 0.01, 0.1, 0.5, 0.9):
            lam = frac * stats.lambda_max()
            f = solve_lasso(stats, LassoConfig(lam))
            kkt_worst = max(kkt_worst, f.kkt)
            for j in range(2):
                for i in range(3):
                    kkt_worst = max(kkt_worst, _direct_kkt(x, y[:, i], m[:, j], f.coeffs[j][:, i], lam))
    # ... and on every M-step fit produced inside an estimation run
    seen = []
    real = msvar.mstep.solve_lasso

    def spy(stats, cfg, check_kkt=True):
        out = real(stats, cfg, check_kkt=True)
        seen.append(out.kkt)
        return out

    for mod in (msvar.mstep, msvar.em, msvar.tuning):
        if hasattr(mod, "solve_lasso"):
            monkeypatch.setattr(mod, "solve_lasso", spy)
    series = simulate(SimConfig(make_setting_one(6), 400, seed=5))
    fit(series, EmConfig(n_inits=2, seed=1, tuning=TuningPolicy(n_folds=5, grid_size=20)))
    monkeypatch.undo()
    em_worst = max(seen)

    # (c) at and above lambda_max the stack is exactly zero
    rng = np.random.default_rng(9)
    x, y = rng.standard_normal((120, 5)), rng.standard_normal((120, 5))
    stats = GramStats.build(x, y, rng.dirichlet(np.ones(3), size=120))
    zero = all(not solve_lasso(stats, LassoConfig(c * stats.lambda_max())).coeffs.any() for c in (1.0, 1.5, 10.0))
    elapsed = time.perf_counter() - t0
    ok = ls_worst <= 1e-6 and kkt_worst <= 1e-6 and em_worst <= 1e-6 and zero
    record("C3 lasso", ok,
           f"(a) max |b - ols| {ls_worst:.2e}; (b) battery KKT {kkt_worst:.2e}, "
           f"{len(seen)} EM fits KKT {em_worst:.2e}; (c) zero stack {zero}; {elapsed:.1f} s")
    assert ok


# -- criteria 4, 5, 6, 9, 10 ------------------------------------------------------


def test_c4_rate_slopes(study):
    rep = study["report"]
    lo, hi = -0.75, -0.25
    em, orc = rep.slopes_median["em"], rep.slopes_median["oracle"]
    # the budget is stated for 8 cores, scale to what is available
    scaled = study["elapsed"] * study["cores"] / 8
    ok = lo <= em <= hi and lo <= orc <= hi and scaled <= STUDY_BUDGET_8_CORES
    record("C4 rate slopes", ok,
           f"em {em:.3f}, oracle {orc:.3f} (range [{lo}, {hi}]); study {study['elapsed']:.0f} s on "
           f"{study['cores']} core(s), {scaled:.0f} s at 8 cores")
    assert ok


def test_c5_em_oracle_gap(study):
    rep = study["report"]
    gaps = {t: rep.group("em", t).medians["log_beta_error"] - rep.group("oracle", t).medians["log_beta_error"]
            for t in STUDY_T}
    ok = all(g <= 0.7 for g in gaps.values())
    record("C5 em-oracle gap", ok, ", ".join(f"T={t}: {g:.3f}" for t, g in gaps.items()) + " (max 0.7)")
    assert ok


def test_c6_parameter_recovery(study):
    g = study["report"].group("em", max(STUDY_T))
    p11, p21, s2 = g.medians["p11_error"], g.medians["p21_error"], g.medians["sigma2_error"]
    ok = p11 <= 0.05 and p21 <= 0.05 and s2 <= 0.1
    record("C6 recovery at T=2000", ok,
           f"median |p11-0.7| {p11:.4f}, |p21-0.3| {p21:.4f}, |s2-1| {s2:.4f}; {g.n_ok} ok, {g.n_failed} failed")
    assert ok


def test_c9_determinism(study):
    a, b = study["first"].read_bytes(), study["second"].read_bytes()
    ok = a == b
    record("C9 determinism", ok, f"1 vs 2 workers, {len(a)} bytes, identical={ok}")
    assert ok


def test_c10_truncation(study, tmp_path):
    # invariant through the command line
    truth = make_setting_one(30)
    data = tmp_path / "series.csv"
    simulate(SimConfig(truth, max(STUDY_T), seed=31)).to_csv(data)
    out = tmp_path / "fit.json"
    code = cli_main(["fit", "--data", str(data), "--inits", "2", "--seed", "3", "--emt-threshold", "0.5",
                     "--keep-iterates", "--out", str(out)])
    obj = json.loads(out.read_text())
    n_checked, n_bad = 0, 0
    for it, rec in zip(obj["iterates"][1:], obj["trace"]):
        b = np.asarray(it["coeffs"])
        nz = np.abs(b[b != 0])
        n_checked += nz.size
        n_bad += int((nz < rec["threshold"]).sum())
    final = np.asarray(obj["coeffs"])
    n_bad += int((np.abs(final[final != 0]) < obj["trace"][-1]["threshold"]).sum())

    t = max(STUDY_T)
    em = [r["support_precision"] for r in read_results(study["first"]) if r["method"] == "em" and r["T"] == t
          and r["status"] == "ok"]
    emt = [r["support_precision"] for r in read_results(study["emt"]) if r["method"] == "emt" and r["status"] == "ok"]
    med_em, med_emt = statistics.median(em), statistics.median(emt)
    ok = code == 0 and n_bad == 0 and n_checked > 0 and med_emt >= med_em
    record("C10 truncation", ok,
           f"{n_bad} sub-threshold nonzeros over {len(obj['iterates']) - 1} iterates; "
           f"median precision emt {med_emt:.3f} vs em {med_em:.3f} at T={t}")
    assert ok


# -- criterion 7 ----------------------------------------------------------------


def _xi_k2(p):
    a, b = p[0, 0] * p[1, 1], p[0, 1] * p[1, 0]
    return abs(a - b) / (a + b)


def test_c7_xi():
    sym = xi_coefficient([[0.7, 0.3], [0.3, 0.7]])
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(100):
        p = rng.dirichlet(np.ones(2), size=2)
        worst = max(worst, abs(xi_coefficient(p) - _xi_k2(p)))
    ok = abs(sym - 0.40 / 0.58) <= 1e-12 and worst <= 1e-12
    record("C7 xi arithmetic", ok, f"symmetric case off by {abs(sym - 0.4 / 0.58):.1e}, random max diff {worst:.1e}")
    assert ok


# -- criterion 8 ----------------------------------------------------------------


def test_c8a_isnr_trend():
    t0 = time.perf_counter()
    mus = np.round(np.arange(0.3, 1.5001, 0.1), 10)
    vals = [isnr_probe(probe_beta(mu, 3), 0.5, n_samples=20_000, seed=123) for mu in mus]
    rho = spearmanr(mus, vals)[0]
    elapsed = time.perf_counter() - t0
    ok = rho < -0.8 and elapsed < 300
    record("C8a ISNR trend", ok, f"Spearman rho {rho:.3f} over {len(mus)} scales "
           f"({vals[0]:.3f} -> {vals[-1]:.3f}), {elapsed:.1f} s")
    assert ok


def test_c8b_gradient_probe_at_zero():
    t0 = time.perf_counter()
    val = gradient_norm_probe(np.zeros(1), 0.5, n_samples=400_000, seed=123)
    elapsed = time.perf_counter() - t0
    target = 9.0
    ok = abs(val - target) <= 0.05 * target and elapsed < 300
    record("C8b gradient probe", ok, f"{val:.4f} vs {target} (5%), {elapsed:.1f} s")
    assert ok
