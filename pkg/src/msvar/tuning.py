"""Penalty selection: lambda grids, K-fold cross-validation, HBIC."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, MsvarError, SeriesData
from .filtering import WindowWeights
from .lasso import path_heldout_loss
from .mstep import GramStats, LassoConfig
from .seeding import stream


class TuningError(MsvarError):
    pass


class SkippedFoldWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TuningPolicy:
    """``mode`` is ``"cv"`` (select per EM iteration) or ``"fixed"`` (use ``value``)."""

    mode: str = "cv"
    value: float | None = None
    n_folds: int = 10
    grid_size: int = 50
    grid_ratio: float = 1e-3
    fold_scheme: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("cv", "fixed"):
            raise InvalidInputError(f"tuning mode must be 'cv' or 'fixed', got {self.mode!r}")
        if self.mode == "fixed" and (self.value is None or self.value < 0):
            raise InvalidInputError("fixed tuning needs a non-negative value")
        if self.fold_scheme not in ("random", "blocks"):
            raise InvalidInputError(f"fold scheme must be 'random' or 'blocks', got {self.fold_scheme!r}")
        if self.grid_size < 1 or not 0 < self.grid_ratio < 1:
            raise InvalidInputError("grid_size >= 1 and 0 < grid_ratio < 1 required")

    @classmethod
    def fixed(cls, value: float, **kw) -> "TuningPolicy":
        return cls(mode="fixed", value=value, **kw)

    @classmethod
    def parse(cls, text: str, **kw) -> "TuningPolicy":
        """``"cv"`` or ``"fixed:VALUE"``."""
        if text == "cv":
            return cls(mode="cv", **kw)
        if text.startswith("fixed:"):
            return cls.fixed(float(text.split(":", 1)[1]), **kw)
        raise InvalidInputError(f"bad tuning spec {text!r}")


def make_folds(n: int, n_folds: int, scheme: str, seed: int) -> list[np.ndarray]:
    """Disjoint sorted index sets covering ``range(n)``."""
    if n_folds < 2:
        raise InvalidInputError("need at least 2 folds")
    if n < n_folds:
        raise InvalidInputError(f"T={n} is smaller than the number of folds {n_folds}")
    if scheme == "blocks":
        order = np.arange(n)
    else:
        order = stream(seed, "cv-folds", n).permutation(n)
    return [np.sort(f) for f in np.array_split(order, n_folds)]


def _train_stats(x, y, m, folds):
    out = []
    for f in folds:
        keep = np.ones(x.shape[0], dtype=bool)
        keep[f] = False
        out.append(GramStats.build(x[keep], y[keep], m[keep]))
    return out


def grid_from_max(lam_max: float, policy: TuningPolicy) -> np.ndarray:
    if not lam_max > 0:
        raise TuningError("lambda_max is zero: data or weights are identically zero")
    if policy.grid_size == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * policy.grid_ratio, policy.grid_size)


def lambda_grid(
    series: SeriesData,
    weights: WindowWeights,
    policy: TuningPolicy,
    folds: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Log-spaced decreasing grid from lambda_max down to ``grid_ratio * lambda_max``.

    lambda_max = max |(2/T) sum_t m_tj Y_ti Y_{t-1,k}|. With ``folds`` it is the
    largest such value over the full data and every training split, so every
    fit at the top of the grid is exactly zero.
    """
    return _grid(series.x, series.resp, weights.marg, policy, folds)


def _grid(x, y, m, policy, folds=None, train=None):
    lam_max = GramStats.build(x, y, m).lambda_max()
    if folds is not None:
        train = train if train is not None else _train_stats(x, y, m, folds)
        lam_max = max([lam_max] + [s.lambda_max() for s in train])
    return grid_from_max(lam_max, policy)


@dataclass
class CvResult:
    lam: float
    grid: np.ndarray
    curve: np.ndarray  # mean held-out error per grid point (nan if not computed)
    index: int
    n_folds_used: int


def cv_select(
    x: np.ndarray,
    y: np.ndarray,
    m: np.ndarray,
    policy: TuningPolicy,
    lasso_cfg: LassoConfig | None = None,
) -> CvResult:
    """Cross-validated penalty for the weighted lasso on a design ``(x, y, m)``.

    Weights ``m`` are held fixed; held-out error is the weighted squared error
    summed over the held-out rows, averaged over folds.
    """
    lasso_cfg = lasso_cfg or LassoConfig(0.0)
    n = x.shape[0]
    folds = make_folds(n, policy.n_folds, policy.fold_scheme, policy.seed)
    train = _train_stats(x, y, m, folds)
    grid = _grid(x, y, m, policy, folds, train)
    if grid.size == 1:
        return CvResult(float(grid[0]), grid, np.full(1, np.nan), 0, 0)
    errs = []
    for f, tr in zip(folds, train):
        if m[f].sum() <= 0.0:
            warnings.warn("skipping a fold with zero total weight", SkippedFoldWarning)
            continue
        held = GramStats.build(x[f], y[f], m[f])
        e, ok = path_heldout_loss(
            tr.h, tr.c, held.h, held.c, held.yy, float(held.n), grid,
            lasso_cfg.tol, lasso_cfg.max_sweeps,
        )
        if not ok:
            raise TuningError(f"lasso path did not converge in {lasso_cfg.max_sweeps} sweeps")
        errs.append(e)
    if not errs:
        raise TuningError("every cross-validation fold had zero weight")
    curve = np.mean(errs, axis=0)
    idx = int(np.argmin(curve))
    return CvResult(float(grid[idx]), grid, curve, idx, len(errs))


def cv_select_lambda(
    series: SeriesData,
    weights: WindowWeights,
    policy: TuningPolicy,
    lasso_cfg: LassoConfig | None = None,
) -> CvResult:
    return cv_select(series.x, series.resp, weights.marg, policy, lasso_cfg)


def hbic(t_len: int, d: int, k: int, sigma2: float, n_nonzero: int) -> float:
    return t_len * d * math.log(sigma2) + n_nonzero * math.log(math.log(t_len)) * math.log(k * d * d)


def hbic_score(series: SeriesData, fit) -> float:
    """Lower is better. ``fit`` needs a ``theta_hat`` attribute."""
    theta = fit.theta_hat
    return hbic(series.t_len, series.d, theta.k, theta.sigma2, int(np.count_nonzero(theta.beta)))
