"""Parameter and data containers for the Markov-switching VAR(1) model.

The model is

    Y_t = B_{Z_t}^T Y_{t-1} + eps_t,    eps_t ~ N(0, sigma2 * I_d),

with a latent chain ``Z_t`` on ``K`` states and row-stochastic transition
matrix ``trans``. Coefficient matrices are stored in the orientation of the
model equation, so column ``i`` of ``coeffs[j]`` is the regression vector for
output coordinate ``i`` in regime ``j``. Flattening uses column stacking.

Regime labels are 0-based in memory. File formats (CSV ``z`` column) are
1-based.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
ROW_SUM_TOL = 1e-12
RENORMALIZE_TOL = 1e-8
STATIONARITY_MARGIN = 1e-6


class MsvarError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(MsvarError, ValueError):
    pass


class DomainError(MsvarError, ValueError):
    pass


class ReducibleChainError(MsvarError):
    """The transition matrix has no unique stationary distribution."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Full parameter vector: K coefficient matrices, transition matrix, noise variance.

    Rows of ``trans`` within ``1e-8`` of summing to one are renormalized (with a
    warning). Larger violations are kept so that :func:`validate` can report them;
    estimation and simulation entry points call :meth:`require_valid`.
    """

    coeffs: np.ndarray
    trans: np.ndarray
    sigma2: float

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim == 2:
            coeffs = coeffs[None]
        trans = np.atleast_2d(np.asarray(self.trans, dtype=float))
        if coeffs.ndim != 3 or coeffs.shape[1] != coeffs.shape[2]:
            raise InvalidInputError(
                f"coeffs must be K square d x d matrices, got shape {coeffs.shape}"
            )
        k = coeffs.shape[0]
        if trans.shape != (k, k):
            raise InvalidInputError(
                f"trans must be {k}x{k} to match {k} coefficient matrices, got {trans.shape}"
            )
        if not (np.all(np.isfinite(coeffs)) and np.all(np.isfinite(trans))):
            raise InvalidInputError("coeffs and trans must be finite")
        if not math.isfinite(float(self.sigma2)):
            raise InvalidInputError("sigma2 must be finite")
        dev = np.abs(trans.sum(axis=1) - 1.0)
        if np.any(dev > ROW_SUM_TOL) and np.all(dev <= RENORMALIZE_TOL) and np.all(trans >= 0):
            warnings.warn("renormalizing transition rows that deviate from 1 by <= 1e-8")
            trans = trans / trans.sum(axis=1, keepdims=True)
        object.__setattr__(self, "coeffs", _frozen(coeffs))
        object.__setattr__(self, "trans", _frozen(trans))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def k(self) -> int:
        return self.coeffs.shape[0]

    @property
    def d(self) -> int:
        return self.coeffs.shape[1]

    @property
    def beta(self) -> np.ndarray:
        """Stacked coefficient vector (vec(B_1), ..., vec(B_K)), column-major vec."""
        return np.concatenate([b.ravel(order="F") for b in self.coeffs])

    def theta(self) -> np.ndarray:
        """(beta, vec(trans), sigma2) as one flat vector."""
        return np.concatenate([self.beta, self.trans.ravel(order="F"), [self.sigma2]])

    def spectral_norms(self) -> np.ndarray:
        return np.array([spectral_norm(b) for b in self.coeffs])

    def is_stationary_certified(self) -> bool:
        return bool(self.spectral_norms().max() <= 1.0 - STATIONARITY_MARGIN)

    def trans_violations(self) -> list[str]:
        out = []
        if np.any(self.trans < 0) or np.any(self.trans > 1):
            out.append("trans entries outside [0, 1]")
        for i, s in enumerate(self.trans.sum(axis=1)):
            if abs(s - 1.0) > ROW_SUM_TOL:
                out.append(f"trans row {i} sums to {s!r}")
        return out

    def require_valid(self, allow_zero_sigma2: bool = False) -> None:
        problems = self.trans_violations()
        if self.sigma2 < 0 or (self.sigma2 == 0 and not allow_zero_sigma2):
            problems.append(f"sigma2 must be positive, got {self.sigma2!r}")
        if problems:
            raise InvalidInputError("; ".join(problems))

    def with_(self, **changes) -> "ModelParams":
        kw = dict(coeffs=self.coeffs, trans=self.trans, sigma2=self.sigma2)
        kw.update(changes)
        return ModelParams(**kw)

    # -- JSON interchange -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "K": self.k,
            "d": self.d,
            "coeffs": [b.tolist() for b in self.coeffs],
            "trans": self.trans.tolist(),
            "sigma2": self.sigma2,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelParams":
        try:
            coeffs = np.array(obj["coeffs"], dtype=float)
            trans = np.array(obj["trans"], dtype=float)
            sigma2 = float(obj["sigma2"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed parameter document: {exc}") from exc
        params = cls(coeffs=coeffs, trans=trans, sigma2=sigma2)
        if "K" in obj and int(obj["K"]) != params.k:
            raise InvalidInputError(f"K={obj['K']} disagrees with {params.k} coefficient matrices")
        if "d" in obj and int(obj["d"]) != params.d:
            raise InvalidInputError(f"d={obj['d']} disagrees with coefficient shape")
        return params

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_json(cls, path: str | Path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class SeriesData:
    """Observations Y_0..Y_T (``(T+1) x d``) and optionally the latent path Z_1..Z_T."""

    y: np.ndarray
    z: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 2:
            raise InvalidInputError(f"y must be (T+1) x d with T >= 1, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise InvalidInputError("y contains NaN or Inf")
        object.__setattr__(self, "y", _frozen(y))
        if self.z is not None:
            z = np.asarray(self.z)
            if z.shape != (y.shape[0] - 1,):
                raise InvalidInputError(f"z must have length T={y.shape[0] - 1}, got {z.shape}")
            if z.size and (np.any(z < 0) or np.any(z != np.round(z))):
                raise InvalidInputError("z labels must be non-negative integers")
            z = z.astype(np.int64)
            z.setflags(write=False)
            object.__setattr__(self, "z", z)

    @property
    def t_len(self) -> int:
        return self.y.shape[0] - 1

    @property
    def d(self) -> int:
        return self.y.shape[1]

    @property
    def x(self) -> np.ndarray:
        """Lagged regressors Y_0..Y_{T-1}."""
        return self.y[:-1]

    @property
    def resp(self) -> np.ndarray:
        """Responses Y_1..Y_T."""
        return self.y[1:]

    def check_labels(self, k: int) -> None:
        if self.z is not None and self.z.size and self.z.max() >= k:
            raise InvalidInputError(f"z has label {self.z.max() + 1} > K={k}")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["t"] + [f"y{i + 1}" for i in range(self.d)]
            if self.z is not None:
                header.append("z")
            w.writerow(header)
            for t, row in enumerate(self.y):
                rec = [str(t)] + [repr(float(v)) for v in row]
                if self.z is not None:
                    rec.append("" if t == 0 else str(int(self.z[t - 1]) + 1))
                w.writerow(rec)

    @classmethod
    def from_csv(cls, path: str | Path) -> "SeriesData":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InvalidInputError(f"{path}: empty file")
        header = rows[0]
        has_z = header[-1] == "z"
        ycols = [i for i, h in enumerate(header) if h.startswith("y")]
        if header[0] != "t" or not ycols:
            raise InvalidInputError(f"{path}: header must be t,y1..yd[,z]")
        try:
            y = np.array([[float(r[i]) for i in ycols] for r in rows[1:]])
            z = None
            if has_z:
                z = np.array([int(r[-1]) - 1 for r in rows[2:]], dtype=np.int64)
        except (ValueError, IndexError) as exc:
            raise InvalidInputError(f"{path}: {exc}") from exc
        return cls(y=y, z=z)


@dataclass(frozen=True)
class SupportSet:
    """Sorted positions of the nonzeros in the stacked coefficient vector."""

    indices: tuple[int, ...]
    size: int

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        if idx and (idx[0] < 0 or idx[-1] >= self.size):
            raise InvalidInputError("support index out of range")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, params: ModelParams) -> "SupportSet":
        beta = params.beta
        return cls(tuple(np.flatnonzero(beta)), beta.size)

    def __len__(self):
        return len(self.indices)


def spectral_norm(m, rtol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest singular value by power iteration on ``m^T m``.

    Starts from the normalized all-ones vector. A second run from a fixed
    pseudo-random start guards against the all-ones start being (nearly)
    orthogonal to the top singular direction; the larger value wins.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        raise InvalidInputError("spectral_norm of an empty matrix")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("spectral_norm needs finite entries")
    scale = np.abs(m).max()
    if scale == 0.0:
        return 0.0
    g = (m / scale).T @ (m / scale)
    n = g.shape[0]
    starts = [np.full(n, 1.0 / math.sqrt(n))]
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    starts.append(v / np.linalg.norm(v))
    best = 0.0
    for v in starts:
        lam = 0.0
        for _ in range(max_iter):
            w = g @ v
            nrm = np.linalg.norm(w)
            if nrm == 0.0:
                # start vector in the null space: stagnation
                break
            lam_new = float(v @ w)
            v = w / nrm
            if abs(lam_new - lam) <= rtol * abs(lam_new):
                lam = lam_new
                break
            lam = lam_new
        best = max(best, lam)
    return scale * math.sqrt(best)


def gaussian_loglik(y_t, y_prev, b, sigma2: float) -> float:
    """Log density of Y_t given Y_{t-1} under one regime with coefficients ``b``."""
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2!r}")
    y_t = np.atleast_1d(np.asarray(y_t, dtype=float))
    y_prev = np.atleast_1d(np.asarray(y_prev, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d = y_t.shape[0]
    if y_prev.shape != (d,) or b.shape != (d, d):
        raise InvalidInputError("dimension mismatch in gaussian_loglik")
    r = y_t - b.T @ y_prev
    return -0.5 * d * (LOG_2PI + math.log(sigma2)) - float(r @ r) / (2.0 * sigma2)


def regime_logliks(series: SeriesData, params: ModelParams) -> np.ndarray:
    """``(T, K)`` array of per-time, per-regime Gaussian log densities for t = 1..T."""
    if not params.sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {params.sigma2!r}")
    if series.d != params.d:
        raise InvalidInputError(f"series has d={series.d}, params have d={params.d}")
    x, y = series.x, series.resp
    d = series.d
    out = np.empty((series.t_len, params.k))
    const = -0.5 * d * (LOG_2PI + math.log(params.sigma2))
    for j, b in enumerate(params.coeffs):
        r = y - x @ b
        out[:, j] = const - np.einsum("ij,ij->i", r, r) / (2.0 * params.sigma2)
    return out


def stationary_distribution(trans) -> np.ndarray:
    """Solve pi P = pi, sum(pi) = 1. Raises if the solution is not unique."""
    p = np.atleast_2d(np.asarray(trans, dtype=float))
    k = p.shape[0]
    a = np.eye(k) - p.T
    if np.linalg.matrix_rank(a, tol=1e-10) != k - 1:
        raise ReducibleChainError("transition matrix has no unique stationary distribution")
    lhs = np.vstack([a, np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass
class ValidationReport:
    violations: list[str]
    stationarity_certified: bool
    spectral_norms: list[float]
    xi: float | None

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(params: ModelParams) -> ValidationReport:
    """Report (never raise) on invariant violations of ``params``."""
    from .diagnostics import xi_coefficient

    violations = params.trans_violations()
    if not params.sigma2 > 0:
        violations.append(f"sigma2 must be positive, got {params.sigma2!r}")
    norms = params.spectral_norms()
    certified = bool(norms.max() <= 1.0 - STATIONARITY_MARGIN)
    if not certified:
        violations.append(
            f"stationarity not certified: max spectral norm {norms.max():.6g} > 1 - 1e-6"
        )
    try:
        xi = xi_coefficient(params.trans)
    except MsvarError:
        xi = None
    return ValidationReport(violations, certified, norms.tolist(), xi)
