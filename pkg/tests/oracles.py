"""Slow reference implementations used only by the tests."""

import itertools

import numpy as np

from msvar.core import gaussian_loglik, stationary_distribution
from msvar.diagnostics import random_instance  # noqa: F401  re-exported for tests


def _dens(series, params, u, j):
    return np.exp(gaussian_loglik(series.y[u], series.y[u - 1], params.coeffs[j], params.sigma2))


def window_by_enumeration(series, params, s, start_state=0):
    """Sum over all K^L in-window paths for every t (L = min(s, t))."""
    k, t_len = params.k, series.t_len
    p = params.trans
    marg = np.zeros((t_len, k))
    pair = np.zeros((t_len, k, k))
    for t in range(1, t_len + 1):
        length = min(s, t)
        lo = t - length
        tot = 0.0
        acc = np.zeros((k, k))
        for path in itertools.product(range(k), repeat=length):
            full = (start_state,) + path
            w = 1.0
            for step in range(length):
                u = lo + step + 1
                w *= p[full[step], full[step + 1]] * _dens(series, params, u, full[step + 1])
            acc[full[-2], full[-1]] += w
            tot += w
        pair[t - 1] = acc / tot
        marg[t - 1] = pair[t - 1].sum(axis=0)
    return marg, pair


def filter_by_enumeration(series, params):
    """Filtered probabilities from all K^(t+1) paths Z_0..Z_t, Z_0 stationary."""
    k, t_len = params.k, series.t_len
    pi = stationary_distribution(params.trans)
    p = params.trans
    marg = np.zeros((t_len, k))
    pair = np.zeros((t_len, k, k))
    for t in range(1, t_len + 1):
        acc = np.zeros((k, k))
        for path in itertools.product(range(k), repeat=t + 1):
            w = pi[path[0]]
            for u in range(1, t + 1):
                w *= p[path[u - 1], path[u]] * _dens(series, params, u, path[u])
            acc[path[-2], path[-1]] += w
        pair[t - 1] = acc / acc.sum()
        marg[t - 1] = pair[t - 1].sum(axis=0)
    return marg, pair
