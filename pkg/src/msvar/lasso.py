"""Coordinate-descent lasso on precomputed weighted Gram matrices.

Each column ``i`` of ``c`` defines one problem

    min_b  b' h b - 2 c_i' b + lam * |b|_1,

which is the weighted least-squares objective
``(1/n) sum_t m_t (y_ti - b'x_t)^2 + lam |b|_1`` up to a constant when
``h = (1/n) sum m x x'`` and ``c = (1/n) sum m x y'``.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def cd_gram(h, c, lam, b, tol, max_sweeps, pinned):
    """Cyclic coordinate descent with an active-set inner loop; updates ``b`` in place.

    Returns (largest sweep count over columns, all columns converged).
    Coordinates with ``h[k, k] <= 0`` are pinned to zero and flagged in ``pinned``.
    """
    d = h.shape[0]
    n_out = c.shape[1]
    half = 0.5 * lam
    g = np.empty(d)
    worst = 0
    ok = True
    for i in range(n_out):
        for k in range(d):
            acc = c[k, i]
            for l in range(d):
                acc -= h[k, l] * b[l, i]
            g[k] = acc
        sweeps = 0
        full = True
        while True:
            if sweeps >= max_sweeps:
                ok = False
                break
            sweeps += 1
            maxd = 0.0
            for k in range(d):
                bk = b[k, i]
                if not full and bk == 0.0:
                    continue
                hkk = h[k, k]
                if hkk <= 0.0:
                    pinned[k, i] = True
                    new = 0.0
                else:
                    new = _soft(g[k] + hkk * bk, half) / hkk
                delta = new - bk
                if delta != 0.0:
                    for l in range(d):
                        g[l] -= h[l, k] * delta
                    b[k, i] = new
                    ad = abs(delta)
                    if ad > maxd:
                        maxd = ad
            if maxd <= tol:
                if full:
                    break
                full = True
            else:
                full = False
        if sweeps > worst:
            worst = sweeps
    return worst, ok


def objective(h: np.ndarray, c: np.ndarray, b: np.ndarray, lam: float, yy: np.ndarray) -> float:
    """Sum over columns of the weighted loss plus penalty; ``yy[i] = (1/n) sum m y_i^2``."""
    quad = np.einsum("ki,kl,li->", b, h, b) - 2.0 * np.sum(b * c) + np.sum(yy)
    return float(quad + lam * np.abs(b).sum())


def kkt_residual(h: np.ndarray, c: np.ndarray, b: np.ndarray, lam: float) -> float:
    """Largest violation of the lasso optimality conditions over all coordinates."""
    grad = 2.0 * (h @ b - c)
    nz = b != 0
    viol = np.where(nz, np.abs(grad + lam * np.sign(b)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(viol.max(initial=0.0))


@njit(cache=True)
def path_heldout_loss(h_tr, c_tr, h_te, c_te, yy_te, n_te, grid, tol, max_sweeps):
    """Held-out weighted squared error along a decreasing penalty path.

    ``h_tr``/``c_tr`` are per-regime training moments ``(K, d, d)``; the
    ``_te`` arrays are held-out moments normalized by ``n_te``. Fits are
    warm-started down the grid. Returns (losses per grid point, converged).
    """
    k, d, n_out = c_tr.shape
    losses = np.zeros(grid.shape[0])
    pinned = np.zeros((d, n_out), dtype=np.bool_)
    ok = True
    for j in range(k):
        b = np.zeros((d, n_out))
        base = 0.0
        for i in range(n_out):
            base += yy_te[j, i]
        for g in range(grid.shape[0]):
            _, ok_g = cd_gram(h_tr[j], c_tr[j], grid[g], b, tol, max_sweeps, pinned)
            ok = ok and ok_g
            hb = h_te[j] @ b
            q = 0.0
            for r in range(d):
                for i in range(n_out):
                    q += b[r, i] * (hb[r, i] - 2.0 * c_te[j, r, i])
            losses[g] += (q + base) * n_te
    return losses, ok
