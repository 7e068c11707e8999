"""M-step updates: transition matrix, per-regime weighted lasso, noise variance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, MsvarError, SeriesData
from .filtering import WindowWeights
from .lasso import cd_gram, kkt_residual, objective

TRANS_EPS = 1e-10
SIGMA2_MIN = 1e-8


class DegenerateRegimeError(MsvarError):
    def __init__(self, regime: int):
        super().__init__(f"regime {regime} received no posterior mass")
        self.regime = regime


class NonConvergenceError(MsvarError):
    def __init__(self, msg: str, partial):
        super().__init__(msg)
        self.partial = partial


class SigmaFloorWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LassoConfig:
    lam: float
    tol: float = 1e-7
    max_sweeps: int = 10_000
    warm_start: np.ndarray | None = None
    debug: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise InvalidInputError("lambda must be >= 0")
        if not self.tol > 0:
            raise InvalidInputError("tol must be > 0")


@dataclass(frozen=True)
class GramStats:
    """Weighted second moments of one design, one slice per regime.

    h[j] = (1/n) sum_t m_tj x_t x_t',  c[j] = (1/n) sum_t m_tj x_t y_t',
    yy[j, i] = (1/n) sum_t m_tj y_ti^2, mass[j] = sum_t m_tj.
    """

    h: np.ndarray
    c: np.ndarray
    yy: np.ndarray
    mass: np.ndarray
    n: int

    @classmethod
    def build(cls, x: np.ndarray, y: np.ndarray, m: np.ndarray, n: int | None = None):
        n = x.shape[0] if n is None else n
        k = m.shape[1]
        d = x.shape[1]
        h = np.empty((k, d, d))
        c = np.empty((k, d, y.shape[1]))
        yy = np.empty((k, y.shape[1]))
        for j in range(k):
            xm = x * m[:, j : j + 1]
            h[j] = x.T @ xm / n
            c[j] = xm.T @ y / n
            yy[j] = m[:, j] @ (y * y) / n
        return cls(h, c, yy, m.sum(axis=0), n)

    def lambda_max(self) -> float:
        return float(2.0 * np.abs(self.c).max(initial=0.0))

    def loss(self, coeffs: np.ndarray) -> np.ndarray:
        """Per-regime weighted squared error sum_t m_tj |y_t - B_j' x_t|^2 (unnormalized)."""
        out = np.empty(coeffs.shape[0])
        for j, b in enumerate(coeffs):
            q = np.sum(b * (self.h[j] @ b - 2.0 * self.c[j]))
            out[j] = (q + self.yy[j].sum()) * self.n
        return out


@dataclass
class LassoFit:
    coeffs: np.ndarray
    pinned: np.ndarray
    sweeps: int
    kkt: float


def solve_lasso(stats: GramStats, cfg: LassoConfig, check_kkt: bool = True) -> LassoFit:
    """Weighted lasso for every regime and output coordinate at one penalty.

    ``kkt`` on the result is the largest optimality-condition violation
    (left at nan when ``check_kkt`` is off).
    """
    k, d, _ = stats.h.shape
    n_out = stats.c.shape[2]
    if cfg.warm_start is not None:
        coeffs = np.array(cfg.warm_start, dtype=float).reshape(k, d, n_out).copy()
    else:
        coeffs = np.zeros((k, d, n_out))
    pinned = np.zeros((k, d, n_out), dtype=bool)
    worst, ok, kkt = 0, True, 0.0 if check_kkt else float("nan")
    for j in range(k):
        b = np.ascontiguousarray(coeffs[j])
        if cfg.debug:
            sweeps, ok_j = _debug_descent(stats, j, b, cfg, pinned[j])
        else:
            sweeps, ok_j = cd_gram(stats.h[j], stats.c[j], cfg.lam, b, cfg.tol, cfg.max_sweeps, pinned[j])
        coeffs[j] = b
        worst = max(worst, sweeps)
        ok = ok and ok_j
        if check_kkt:
            kkt = max(kkt, _kkt_unpinned(stats, j, b, cfg.lam, pinned[j]))
    fit = LassoFit(coeffs, pinned, worst, kkt)
    if not ok:
        raise NonConvergenceError(f"lasso did not converge in {cfg.max_sweeps} sweeps", fit)
    return fit


def _kkt_unpinned(stats, j, b, lam, pinned) -> float:
    keep = ~pinned.any(axis=1)
    if not keep.any():
        return 0.0
    h = stats.h[j][np.ix_(keep, keep)]
    return kkt_residual(h, stats.c[j][keep], b[keep], lam)


def _debug_descent(stats, j, b, cfg, pinned):
    """One sweep at a time, asserting the objective never increases."""
    h, c, yy = stats.h[j], stats.c[j], stats.yy[j]
    prev = objective(h, c, b, cfg.lam, yy)
    for sweep in range(1, cfg.max_sweeps + 1):
        before = b.copy()
        cd_gram(h, c, cfg.lam, b, cfg.tol, 1, pinned)
        cur = objective(h, c, b, cfg.lam, yy)
        assert cur <= prev + 1e-12 * max(1.0, abs(prev)), (sweep, prev, cur)
        prev = cur
        if np.abs(b - before).max(initial=0.0) <= cfg.tol:
            return sweep, True
    return cfg.max_sweeps, False


def design_stats(series: SeriesData, weights: WindowWeights) -> GramStats:
    return GramStats.build(series.x, series.resp, weights.marg)


def update_transition(weights: WindowWeights) -> np.ndarray:
    counts = weights.pair.sum(axis=0)
    denom = counts.sum(axis=1)
    for i, v in enumerate(denom):
        if v < TRANS_EPS:
            raise DegenerateRegimeError(i)
    p = counts / denom[:, None]
    return p / p.sum(axis=1, keepdims=True)


def update_beta(series: SeriesData, weights: WindowWeights, cfg: LassoConfig) -> LassoFit:
    if weights.t_len != series.t_len:
        raise InvalidInputError("weights and series disagree on T")
    return solve_lasso(design_stats(series, weights), cfg)


def update_sigma2(series: SeriesData, weights: WindowWeights, coeffs: np.ndarray) -> float:
    x, y = series.x, series.resp
    total = 0.0
    for j, b in enumerate(coeffs):
        r = y - x @ b
        total += float(weights.marg[:, j] @ np.einsum("ij,ij->i", r, r))
    s2 = total / (series.t_len * series.d)
    if s2 < SIGMA2_MIN:
        warnings.warn(f"sigma2 estimate {s2:.3g} floored at {SIGMA2_MIN}", SigmaFloorWarning)
        return SIGMA2_MIN
    return s2
