"""E-step quantities: windowed approximate posteriors and the exact forward filter.

``approx_estep`` conditions on the regime ``s`` steps back and uses only the
observations inside the window; ``exact_filter`` uses the whole history with
the regime before the first observation drawn from the stationary law.
Both return a :class:`WindowWeights`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .core import (
    InvalidInputError,
    ModelParams,
    MsvarError,
    SeriesData,
    regime_logliks,
    stationary_distribution,
)

S_MIN, S_MAX = 1, 30


class FilterError(MsvarError):
    pass


@dataclass(frozen=True, eq=False)
class WindowWeights:
    """Per-time regime posteriors for t = 1..T (row ``t-1`` holds time ``t``).

    marg[t, j]    ~ P(Z_t = j | ...)
    pair[t, i, j] ~ P(Z_{t-1} = i, Z_t = j | ...)
    """

    marg: np.ndarray
    pair: np.ndarray
    s_used: np.ndarray

    @property
    def t_len(self) -> int:
        return self.marg.shape[0]

    @property
    def k(self) -> int:
        return self.marg.shape[1]

    def check(self, tol: float = 1e-10) -> None:
        if np.any(self.marg < -tol) or np.any(self.marg > 1 + tol):
            raise FilterError("marg entries outside [0, 1]")
        if np.max(np.abs(self.marg.sum(axis=1) - 1.0), initial=0.0) > tol:
            raise FilterError("marg rows do not sum to 1")
        if np.max(np.abs(self.pair.sum(axis=(1, 2)) - 1.0), initial=0.0) > tol:
            raise FilterError("pair slices do not sum to 1")
        if np.max(np.abs(self.pair.sum(axis=1) - self.marg), initial=0.0) > 1e-8:
            raise FilterError("pair does not collapse to marg")

    @classmethod
    def from_labels(cls, z: np.ndarray, k: int) -> "WindowWeights":
        """Degenerate weights putting all mass on an observed path (0-based labels)."""
        t_len = z.shape[0]
        marg = np.zeros((t_len, k))
        marg[np.arange(t_len), z] = 1.0
        pair = np.zeros((t_len, k, k))
        prev = np.concatenate([[z[0]], z[:-1]])
        pair[np.arange(t_len), prev, z] = 1.0
        return cls(marg, pair, np.zeros(t_len, dtype=np.int64))


def _log_trans(params: ModelParams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(params.trans)


def _checked_logliks(series: SeriesData, params: ModelParams) -> np.ndarray:
    ld = regime_logliks(series, params)
    bad = ~np.all(np.isfinite(ld), axis=1)
    if bad.any():
        t = int(np.flatnonzero(bad)[0]) + 1
        raise FilterError(f"non-finite log density at t={t} (sigma2={params.sigma2!r})")
    return ld


def _normalize_log(a: np.ndarray, axes) -> np.ndarray:
    norm = logsumexp(a, axis=axes, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise FilterError("all paths have zero probability inside a window")
    return a - norm


def approx_estep(
    series: SeriesData, params: ModelParams, s: int, start_state: int = 0
) -> WindowWeights:
    """Windowed approximate posteriors.

    For each t the window starts at time ``t - s_used[t]`` with the regime
    there fixed to ``start_state``; ``s_used[t] = min(s, t)``. The in-window
    path sum is evaluated by a forward recursion in log space, grouped over
    all t sharing the same window length.
    """
    if s < 1:
        raise InvalidInputError("window length s must be >= 1")
    params.require_valid()
    k = params.k
    if not 0 <= start_state < k:
        raise InvalidInputError(f"start_state must be in [0, {k})")
    t_len = series.t_len
    ld = _checked_logliks(series, params)  # ld[u-1] is the density of Y_u
    logp = _log_trans(params)
    times = np.arange(1, t_len + 1)
    s_used = np.minimum(s, times)
    log_pair = np.empty((t_len, k, k))
    for length in np.unique(s_used):
        ts = times[s_used == length]
        alpha = np.full((ts.size, k), -np.inf)
        alpha[:, start_state] = 0.0
        # advance from the window start to time t-1
        for step in range(1, length):
            u = ts - length + step
            alpha = logsumexp(alpha[:, :, None] + logp[None], axis=1) + ld[u - 1]
            alpha = _normalize_log(alpha, 1)
        joint = alpha[:, :, None] + logp[None] + ld[ts - 1][:, None, :]
        log_pair[ts - 1] = _normalize_log(joint, (1, 2))
    pair = np.exp(log_pair)
    return WindowWeights(pair.sum(axis=1), pair, s_used)


def exact_filter(series: SeriesData, params: ModelParams) -> WindowWeights:
    """Full-history filtered probabilities w_j(Y_0^t), w_ij(Y_0^t)."""
    params.require_valid()
    k = params.k
    t_len = series.t_len
    ld = _checked_logliks(series, params)
    logp = _log_trans(params)
    with np.errstate(divide="ignore"):
        alpha = np.log(stationary_distribution(params.trans))
    pair = np.empty((t_len, k, k))
    for t in range(t_len):
        joint = _normalize_log(alpha[:, None] + logp + ld[t][None, :], (0, 1))
        pair[t] = np.exp(joint)
        alpha = logsumexp(joint, axis=0)
    return WindowWeights(pair.sum(axis=1), pair, np.arange(1, t_len + 1))


def window_length(policy, t_len: int, trans: np.ndarray | None = None) -> int:
    """Resolve a window policy: an int, ``"logT"`` or ``"adaptive"``.

    ``"adaptive"`` uses ceil(log T / (-2 log xi)) for the mixing coefficient of
    ``trans``, clamped to [1, 30].
    """
    if isinstance(policy, (int, np.integer)):
        return int(policy)
    log_t = math.log(max(t_len, 2))
    if policy == "logT":
        return max(S_MIN, math.ceil(log_t))
    if policy == "adaptive":
        from .diagnostics import xi_coefficient

        xi = xi_coefficient(trans)
        if xi <= 0.0:
            return S_MIN
        if xi >= 1.0:
            return S_MAX
        return int(min(S_MAX, max(S_MIN, math.ceil(log_t / (-2.0 * math.log(xi))))))
    raise InvalidInputError(f"unknown window policy {policy!r}")


def symmetric_filter_closed_form(y_prev, y_t, beta, p1: float) -> np.ndarray | float:
    """Filtered probability of regime 1 in the symmetric model B_2 = -B_1, sigma2 = 1.

    ``beta`` is vec(B_1) (column stacking). ``y_prev``/``y_t`` may be single
    d-vectors or ``(n, d)`` arrays of consecutive pairs.
    """
    y_prev = np.asarray(y_prev, dtype=float)
    y_t = np.asarray(y_t, dtype=float)
    d = y_t.shape[-1]
    b = np.asarray(beta, dtype=float).reshape(d, d, order="F")
    mean = y_prev @ b
    # log kernel difference: -|y - m|^2/2 + |y + m|^2/2 = 2 y.m
    diff = 2.0 * np.sum(y_t * mean, axis=-1)
    w = expit(math.log(p1) - math.log1p(-p1) + diff)
    return float(w) if np.ndim(w) == 0 else w
