"""Approximate regularized EM for Markov-switching VAR(1), with optional truncation (EMT)."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import xlogy

from .core import LOG_2PI, InvalidInputError, ModelParams, MsvarError, SeriesData
from .filtering import FilterError, WindowWeights, approx_estep, exact_filter, window_length
from .mstep import (
    DegenerateRegimeError,
    GramStats,
    LassoConfig,
    NonConvergenceError,
    design_stats,
    solve_lasso,
    update_sigma2,
    update_transition,
)
from .seeding import stream
from .tuning import TuningError, TuningPolicy, cv_select, hbic_score

log = logging.getLogger(__name__)


class FitError(MsvarError):
    pass


@dataclass(frozen=True)
class EmConfig:
    k: int = 2
    s_policy: int | str = "logT"  # int, "logT" or "adaptive"
    tol_inf: float = 1e-4
    max_iter: int = 200
    n_inits: int = 5
    init_sd: float = 0.5
    emt_c: float | None = None  # truncation constant; None runs plain EM
    tuning: TuningPolicy = field(default_factory=TuningPolicy)
    seed: int = 0
    start_state: int = 0
    engine: str = "approx"  # or "exact"
    lasso_tol: float = 1e-7
    keep_iterates: bool = False
    # an initialization fails once a regime's mean posterior share falls below this
    min_regime_share: float = 0.01

    def __post_init__(self):
        if not self.tol_inf > 0:
            raise InvalidInputError("tol_inf must be positive")
        if self.n_inits < 1 or self.max_iter < 1 or self.k < 1:
            raise InvalidInputError("k, n_inits and max_iter must be >= 1")
        if self.engine not in ("approx", "exact"):
            raise InvalidInputError(f"unknown engine {self.engine!r}")
        if self.emt_c is not None and self.emt_c < 0:
            raise InvalidInputError("truncation constant must be >= 0")


def truncation_level(c: float, t_len: int, d: int, k: int) -> float:
    """xi(T, d) = c * sqrt(log(K d^2) / T)."""
    return c * math.sqrt(math.log(max(k * d * d, 2)) / t_len)


@dataclass
class IterRecord:
    lam: float
    objective: float
    delta: float
    nnz: int
    s: int
    threshold: float | None = None


@dataclass
class FitResult:
    theta_hat: ModelParams
    trace: list[IterRecord]
    converged: bool
    n_iter: int
    hbic: float
    init_id: int
    status: str = "ok"
    message: str = ""
    iterates: list[ModelParams] | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        out = self.theta_hat.to_dict()
        out.update(
            hbic=self.hbic,
            converged=self.converged,
            iterations=self.n_iter,
            init_id=self.init_id,
            status=self.status,
            trace=[vars(r) for r in self.trace],
        )
        return out


@dataclass
class FitSummary:
    best: FitResult
    all: list[FitResult]


def random_init(d: int, k: int, cfg: EmConfig, rng: np.random.Generator) -> ModelParams:
    """beta entries i.i.d. N(0, init_sd^2), uniform transition rows, sigma2 = 1."""
    coeffs = rng.normal(0.0, cfg.init_sd, size=(k, d, d))
    return ModelParams(coeffs=coeffs, trans=np.full((k, k), 1.0 / k), sigma2=1.0)


def penalized_objective(
    stats: GramStats, weights: WindowWeights, theta: ModelParams, lam: float
) -> float:
    """Negative of the penalized surrogate log-likelihood at ``theta`` (lower is better)."""
    t_len = weights.t_len
    d = theta.d
    trans_term = float(xlogy(weights.pair.sum(axis=0), theta.trans).sum()) / t_len
    sq = float(stats.loss(theta.coeffs).sum()) / t_len
    q = trans_term - 0.5 * d * (LOG_2PI + math.log(theta.sigma2)) - sq / (2.0 * theta.sigma2)
    return -q + lam * float(np.abs(theta.coeffs).sum())


def em_iteration(series: SeriesData, theta: ModelParams, cfg: EmConfig):
    """One E-step + M-step (+ truncation). Returns the new parameters and its record."""
    t_len, d, k = series.t_len, series.d, cfg.k
    s = window_length(cfg.s_policy, t_len, theta.trans)
    if cfg.engine == "exact":
        weights = exact_filter(series, theta)
    else:
        weights = approx_estep(series, theta, s, cfg.start_state)
    share = weights.marg.mean(axis=0)
    if share.min() < cfg.min_regime_share:
        raise DegenerateRegimeError(int(np.argmin(share)))
    stats = design_stats(series, weights)
    if cfg.tuning.mode == "fixed":
        lam = float(cfg.tuning.value)
    else:
        lam = cv_select(
            series.x, series.resp, weights.marg, cfg.tuning, LassoConfig(0.0, cfg.lasso_tol)
        ).lam
    coeffs = solve_lasso(stats, LassoConfig(lam, cfg.lasso_tol)).coeffs
    trans = update_transition(weights)
    sigma2 = update_sigma2(series, weights, coeffs)
    threshold = None
    if cfg.emt_c is not None:
        threshold = truncation_level(cfg.emt_c, t_len, d, k)
        coeffs = np.where(np.abs(coeffs) >= threshold, coeffs, 0.0)
    new = ModelParams(coeffs=coeffs, trans=trans, sigma2=sigma2)
    delta = float(np.abs(new.theta() - theta.theta()).max())
    rec = IterRecord(
        lam=lam,
        objective=penalized_objective(stats, weights, new, lam),
        delta=delta,
        nnz=int(np.count_nonzero(coeffs)),
        s=s,
        threshold=threshold,
    )
    return new, rec


def run_em(series: SeriesData, theta0: ModelParams, cfg: EmConfig, init_id: int = 0) -> FitResult:
    """Iterate from ``theta0`` until the sup-norm change drops below ``tol_inf``."""
    theta = theta0
    trace: list[IterRecord] = []
    iterates = [theta0] if cfg.keep_iterates else None
    converged = False
    try:
        for _ in range(cfg.max_iter):
            theta, rec = em_iteration(series, theta, cfg)
            trace.append(rec)
            if iterates is not None:
                iterates.append(theta)
            if rec.delta < cfg.tol_inf:
                converged = True
                break
    except (DegenerateRegimeError, FilterError, TuningError, NonConvergenceError) as exc:
        log.info("initialization %d failed: %s", init_id, exc)
        return FitResult(theta, trace, False, len(trace), math.inf, init_id, "failed", str(exc), iterates)
    res = FitResult(theta, trace, converged, len(trace), math.nan, init_id, iterates=iterates)
    res.hbic = hbic_score(series, res)
    return res


def _rank_key(r: FitResult):
    obj = r.trace[-1].objective if r.trace else math.inf
    return (r.hbic, obj, r.init_id)


def fit(series: SeriesData, cfg: EmConfig) -> FitSummary:
    """Multi-start EM; the best initialization by HBIC is returned as ``best``."""
    if series.t_len < 20:
        raise InvalidInputError("need T >= 20 observations")
    results = []
    for i in range(cfg.n_inits):
        theta0 = random_init(series.d, cfg.k, cfg, stream(cfg.seed, "init", i))
        results.append(run_em(series, theta0, cfg, i))
    good = [r for r in results if r.ok]
    if not good:
        raise FitError("every initialization failed: " + "; ".join(r.message for r in results))
    return FitSummary(min(good, key=_rank_key), results)


def permute_params(theta: ModelParams, perm) -> ModelParams:
    """Relabel regimes: new regime ``j`` is old regime ``perm[j]``."""
    perm = np.asarray(perm)
    return theta.with_(coeffs=theta.coeffs[perm], trans=theta.trans[np.ix_(perm, perm)])


def align_params(theta: ModelParams, truth: ModelParams) -> tuple[ModelParams, tuple[int, ...]]:
    if theta.k != truth.k or theta.d != truth.d:
        raise InvalidInputError("cannot align parameters of different shapes")
    if theta.k > 8:
        raise InvalidInputError("permutation search limited to K <= 8")
    best, best_err = None, math.inf
    for perm in itertools.permutations(range(theta.k)):
        err = float(np.linalg.norm(theta.coeffs[list(perm)] - truth.coeffs))
        if err < best_err:
            best, best_err = perm, err
    return permute_params(theta, best), tuple(best)


def align_permutation(fit: FitResult, truth: ModelParams) -> tuple[FitResult, tuple[int, ...]]:
    theta, perm = align_params(fit.theta_hat, truth)
    return replace(fit, theta_hat=theta), perm
