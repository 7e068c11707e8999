"""Oracle estimator, error metrics, the mixing coefficient and Monte-Carlo probes."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .core import InvalidInputError, ModelParams, MsvarError, SeriesData, SupportSet
from .filtering import approx_estep, exact_filter, symmetric_filter_closed_form
from .mstep import GramStats, LassoConfig, SIGMA2_MIN, solve_lasso
from .seeding import stream
from .tuning import TuningPolicy, cv_select

# 3x3 block used for the signal-strength probes (differs from the simulation block)
PROBE_BLOCK = np.array([[0.5, 0.0, 0.0], [0.1, 0.1, 0.3], [0.0, 0.2, 0.3]])
MAX_PROBE_DIM_SQ = 400


class OracleWarning(UserWarning):
    pass


class ProbeError(MsvarError):
    pass


# -- mixing coefficient --------------------------------------------------------


def xi_coefficient(p) -> float:
    """Contraction coefficient of the regime chain given observations.

    Half of  max_{i,k} sum_j max_{l != j} |p_ij p_kl - p_il p_kj| / (p_ij p_kl + p_il p_kj),
    capped at 1; 0/0 terms count as 0. For K = 2 this is exactly
    |p11 p22 - p12 p21| / (p11 p22 + p12 p21).
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    k = p.shape[0]
    if k == 1:
        return 0.0
    # axes: i, k, j, l
    a = p[:, None, :, None] * p[None, :, None, :]  # p_ij p_kl
    b = p[:, None, None, :] * p[None, :, :, None]  # p_il p_kj
    num = np.abs(a - b)
    den = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    ratio[:, :, np.arange(k), np.arange(k)] = -np.inf
    total = ratio.max(axis=3).sum(axis=2).max()
    return float(min(1.0, 0.5 * total))


def xi_two_state(p) -> float:
    p = np.asarray(p, dtype=float)
    a, b = p[0, 0] * p[1, 1], p[0, 1] * p[1, 0]
    return 0.0 if a + b == 0 else abs(a - b) / (a + b)


# -- approximation-error check -------------------------------------------------


def random_instance(
    rng: np.random.Generator,
    k: int,
    d: int,
    t_len: int,
    p_floor: float = 0.05,
    coef_scale: float = 0.4,
    sigma2: float | None = None,
    burn_in: int = 50,
) -> tuple[ModelParams, SeriesData]:
    """Random small model (transition entries >= p_floor) and a series drawn from it."""
    from .simulate import SimConfig, simulate

    if k * p_floor >= 1.0:
        raise InvalidInputError("p_floor too large for K states")
    raw = rng.dirichlet(np.ones(k), size=k)
    trans = p_floor + (1.0 - k * p_floor) * raw
    trans /= trans.sum(axis=1, keepdims=True)
    coeffs = rng.uniform(-coef_scale, coef_scale, size=(k, d, d)) / max(1, d)
    sigma2 = float(rng.uniform(0.3, 2.0)) if sigma2 is None else sigma2
    params = ModelParams(coeffs=coeffs, trans=trans, sigma2=sigma2)
    series = simulate(SimConfig(params, t_len, burn_in=burn_in, seed=int(rng.integers(2**32))))
    return params, series


@dataclass
class BoundRow:
    s: int
    err_marg: float
    err_pair: float
    bound_marg: float
    bound_pair: float
    violated: bool


def bound_check(series: SeriesData, params: ModelParams, s_range, slack: float = 1e-9) -> list[BoundRow]:
    """Compare windowed weights against the exact filter for each window length.

    Only times with a complete window (t >= s) are compared: earlier windows
    start at the first observation and are not covered by the bound.
    """
    phi = xi_coefficient(params.trans)
    exact = exact_filter(series, params)
    rows = []
    for s in s_range:
        approx = approx_estep(series, params, s)
        sel = slice(s - 1, None)
        em = float(np.abs(approx.marg[sel] - exact.marg[sel]).max(initial=0.0))
        ep = float(np.abs(approx.pair[sel] - exact.pair[sel]).max(initial=0.0))
        bm, bp = phi**s, phi ** (s - 1)
        rows.append(BoundRow(s, em, ep, bm, bp, em > bm + slack or ep > bp + slack))
    return rows


# -- oracle estimator ----------------------------------------------------------


def oracle_fit(
    series: SeriesData,
    k: int,
    tuning: TuningPolicy | None = None,
    lasso_cfg: LassoConfig | None = None,
) -> ModelParams:
    """Per-regime lasso on the rows where the true regime is observed.

    The penalty for each regime is chosen by the same cross-validation used in
    EM (or fixed by ``tuning``). Transition rows come from empirical transition
    counts; a regime that is never left gets a uniform row and a warning.
    """
    if series.z is None:
        raise InvalidInputError("oracle_fit needs the latent path z")
    series.check_labels(k)
    tuning = tuning or TuningPolicy()
    lasso_cfg = lasso_cfg or LassoConfig(0.0)
    x, y, z = series.x, series.resp, series.z
    d = series.d
    coeffs = np.zeros((k, d, d))
    for j in range(k):
        rows = z == j
        n_j = int(rows.sum())
        if n_j < d / 2:
            warnings.warn(f"regime {j} has only {n_j} observations (d={d})", OracleWarning)
        if n_j == 0:
            continue
        xj, yj, mj = x[rows], y[rows], np.ones((n_j, 1))
        if tuning.mode == "fixed":
            lam = float(tuning.value)
        elif n_j < tuning.n_folds:
            warnings.warn(f"regime {j}: too few rows for {tuning.n_folds}-fold CV; estimate set to 0", OracleWarning)
            continue
        else:
            lam = cv_select(xj, yj, mj, tuning, lasso_cfg).lam
        stats = GramStats.build(xj, yj, mj)
        coeffs[j] = solve_lasso(stats, LassoConfig(lam, lasso_cfg.tol, lasso_cfg.max_sweeps)).coeffs[0]
    counts = np.zeros((k, k))
    np.add.at(counts, (z[:-1], z[1:]), 1.0)
    trans = np.full((k, k), 1.0 / k)
    for i in range(k):
        tot = counts[i].sum()
        if tot > 0:
            trans[i] = counts[i] / tot
        else:
            warnings.warn(f"regime {i} is never left; its transition row is undefined", OracleWarning)
    resid = y - np.einsum("td,tde->te", x, coeffs[z])
    sigma2 = max(float(np.sum(resid * resid)) / (series.t_len * d), SIGMA2_MIN)
    return ModelParams(coeffs=coeffs, trans=trans, sigma2=sigma2)


# -- metrics -------------------------------------------------------------------


@dataclass
class MetricsReport:
    beta_l2_error: float
    log_beta_error: float
    trans_errors: list[list[float]]
    sigma2_error: float
    support_precision: float
    support_recall: float
    p11_hat: float
    p21_hat: float
    sigma2_hat: float

    def as_dict(self) -> dict:
        return asdict(self)


def compute_metrics(theta: ModelParams, truth: ModelParams) -> MetricsReport:
    """Errors of already-aligned estimates. Selection counts exact nonzeros."""
    err = float(np.linalg.norm(theta.beta - truth.beta))
    est = set(SupportSet.of(theta).indices)
    true = set(SupportSet.of(truth).indices)
    hit = len(est & true)
    precision = hit / len(est) if est else 1.0
    recall = hit / len(true) if true else 1.0
    k = theta.k
    return MetricsReport(
        beta_l2_error=err,
        log_beta_error=math.log(err) if err > 0 else -math.inf,
        trans_errors=np.abs(theta.trans - truth.trans).tolist(),
        sigma2_error=abs(theta.sigma2 - truth.sigma2),
        support_precision=precision,
        support_recall=recall,
        p11_hat=float(theta.trans[0, 0]),
        p21_hat=float(theta.trans[1, 0]) if k > 1 else math.nan,
        sigma2_hat=theta.sigma2,
    )


# -- signal-strength probes ----------------------------------------------------


def _symmetric_path(beta_star, p1, n_samples, burn_in, seed):
    beta = np.asarray(beta_star, dtype=float)
    d = math.isqrt(beta.size)
    if d * d != beta.size:
        raise InvalidInputError("beta_star must have d^2 entries")
    if d * d > MAX_PROBE_DIM_SQ:
        raise ProbeError(f"d^2 = {d * d} exceeds {MAX_PROBE_DIM_SQ}; the d^2 x d^2 moment is too large")
    if not 0.0 < p1 < 1.0:
        raise InvalidInputError("p1 must be in (0, 1)")
    b = beta.reshape(d, d, order="F")
    n = burn_in + n_samples + 1
    sign = np.where(stream(seed, "probe", "regime").random(n) < p1, 1.0, -1.0)
    eps = stream(seed, "probe", "noise").standard_normal((n, d))
    bt = b.T.copy()
    y = np.zeros((n + 1, d))
    for t in range(n):
        y[t + 1] = sign[t] * (bt @ y[t]) + eps[t]
    y = y[burn_in + 1 :]
    return beta, y[:-1], y[1:]


def isnr_probe(
    beta_star,
    p1: float = 0.5,
    n_samples: int = 20_000,
    burn_in: int = 5_000,
    seed: int = 0,
    chunk: int = 4096,
) -> float:
    """Monte-Carlo inverse signal-to-noise ratio of the symmetric two-regime model.

    ||E[4 w (1-w) (Y_t kron Y_{t-1})(Y_t kron Y_{t-1})']||_2 / lambda_min(E[Y Y']),
    with w the closed-form filtered probability at ``beta_star``.
    """
    beta, y_prev, y_t = _symmetric_path(beta_star, p1, n_samples, burn_in, seed)
    d = y_t.shape[1]
    cov = y_prev.T @ y_prev / n_samples
    acc = np.zeros((d * d, d * d))
    for lo in range(0, n_samples, chunk):
        yp, yt = y_prev[lo : lo + chunk], y_t[lo : lo + chunk]
        w = symmetric_filter_closed_form(yp, yt, beta, p1)
        kr = (yt[:, :, None] * yp[:, None, :]).reshape(len(yt), d * d)
        acc += (kr * (4.0 * w * (1.0 - w))[:, None]).T @ kr
    acc /= n_samples
    lam_min = float(np.linalg.eigvalsh(cov)[0])
    if lam_min < 1e-8:
        raise ProbeError(f"E[YY'] is near singular (lambda_min={lam_min:.3g})")
    return float(np.linalg.eigvalsh(acc)[-1]) / lam_min


def gradient_norm_probe(
    beta_star, p1: float = 0.5, n_samples: int = 20_000, seed: int = 0, burn_in: int = 5_000
) -> float:
    """Monte-Carlo mean of [2 w (1-w)]^4 |Y_t|^4 |Y_{t-1}|^4 at ``beta_star``."""
    beta, y_prev, y_t = _symmetric_path(beta_star, p1, n_samples, burn_in, seed)
    w = symmetric_filter_closed_form(y_prev, y_t, beta, p1)
    a = np.sum(y_t * y_t, axis=1)
    b = np.sum(y_prev * y_prev, axis=1)
    return float(np.mean((2.0 * w * (1.0 - w)) ** 4 * a * a * b * b))


def probe_beta(mu: float = 1.0, d: int = 3) -> np.ndarray:
    """vec(mu * (I_{d/3} kron PROBE_BLOCK))."""
    if d % 3:
        raise InvalidInputError("probe dimension must be a multiple of 3")
    return (mu * np.kron(np.eye(d // 3), PROBE_BLOCK)).ravel(order="F")
