"""Simulation of Markov-switching VAR(1) series and the two coefficient designs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    InvalidInputError,
    ModelParams,
    SeriesData,
    spectral_norm,
    stationary_distribution,
    STATIONARITY_MARGIN,
)
from .seeding import stream

log = logging.getLogger(__name__)

DEFAULT_BURN_IN = 5000

BLOCK_A = np.array([[0.5, 0.1, 0.0], [0.0, 0.1, 0.2], [0.0, 0.3, 0.3]])
BLOCK_A_ALT = np.array([[0.3, 0.0, 0.2], [0.2, 0.0, 0.0], [0.0, -0.5, -0.3]])
SWITCHED_BLOCKS = {
    30: (1, 2, 5, 10),
    90: (1, 2, 5, 10, 11, 12, 15, 20, 21, 22, 25, 30),
}
SETTING_TRANS = np.array([[0.7, 0.3], [0.3, 0.7]])


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    t_len: int
    burn_in: int = DEFAULT_BURN_IN
    seed: int = 0

    def __post_init__(self):
        if self.t_len < 1:
            raise InvalidInputError("t_len must be >= 1")
        if self.burn_in < 0:
            raise InvalidInputError("burn_in must be >= 0")


@dataclass(frozen=True)
class SettingSpec:
    kind: int  # 1 or 2
    d: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (1, 2):
            raise InvalidInputError(f"setting must be 1 or 2, got {self.kind}")
        if self.d < 1:
            raise InvalidInputError("d must be positive")
        if self.kind == 1 and self.d % 3:
            raise InvalidInputError("setting 1 requires d divisible by 3")

    def params(self) -> ModelParams:
        if self.kind == 1:
            return make_setting_one(self.d)
        return make_setting_two(self.d, self.seed)


def simulate_chain(trans: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Stationary-initialized chain of length ``n`` (0-based labels)."""
    pi = stationary_distribution(trans)
    k = trans.shape[0]
    cum = np.cumsum(trans, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(n)
    z = np.empty(n, dtype=np.int64)
    z[0] = min(int(np.searchsorted(np.cumsum(pi), u[0], side="right")), k - 1)
    for t in range(1, n):
        z[t] = int(np.searchsorted(cum[z[t - 1]], u[t], side="right"))
    return z


def simulate(config: SimConfig) -> SeriesData:
    """Draw Y_0..Y_T and Z_1..Z_T. The pre-sample value is zero before burn-in."""
    params = config.params
    params.require_valid(allow_zero_sigma2=True)
    n = config.burn_in + config.t_len
    z = simulate_chain(params.trans, n, stream(config.seed, "simulate", "chain"))
    noise = stream(config.seed, "simulate", "noise").standard_normal((n, params.d))
    noise *= np.sqrt(params.sigma2)
    bt = np.ascontiguousarray(np.transpose(params.coeffs, (0, 2, 1)))
    y = np.zeros((n + 1, params.d))
    for t in range(n):
        y[t + 1] = bt[z[t]] @ y[t] + noise[t]
    meta = {}
    if not params.is_stationary_certified():
        meta["warning"] = "parameters are not certified stationary (max ||B_i||_2 >= 1)"
        log.warning(meta["warning"])
    return SeriesData(y=y[config.burn_in:], z=z[config.burn_in:], meta=meta)


def make_setting_one(d: int) -> ModelParams:
    """Block-diagonal design: B_1 = I (x) A; B_2 swaps selected blocks for the alternate block."""
    if d % 3:
        raise InvalidInputError("setting 1 requires d divisible by 3")
    nb = d // 3
    b1 = np.kron(np.eye(nb), BLOCK_A)
    b2 = b1.copy()
    # d=3 has a single block, which is switched
    blocks = SWITCHED_BLOCKS.get(d, tuple(k for k in SWITCHED_BLOCKS[90] if k <= nb) or (1,))
    for k in blocks:
        sl = slice(3 * (k - 1), 3 * k)
        b2[sl, sl] = BLOCK_A_ALT
    return ModelParams(coeffs=np.stack([b1, b2]), trans=SETTING_TRANS, sigma2=1.0)


def _setting_two_once(d: int, rng: np.random.Generator) -> ModelParams:
    values = np.array([0.2, -0.2, 0.4, -0.4]) if d <= 30 else np.array([0.12, -0.12, 0.24, -0.24])
    adj = rng.random((d, d)) < 0.1
    b1 = np.zeros((d, d))
    n_active = int(adj.sum())
    b1[adj] = rng.choice(values, size=n_active, p=[0.45, 0.45, 0.05, 0.05])
    active = np.flatnonzero(adj.ravel())
    flip = rng.choice(active, size=n_active // 2, replace=False)
    b2 = b1.copy().ravel()
    b2[flip] *= -1.0
    return ModelParams(coeffs=np.stack([b1, b2.reshape(d, d)]), trans=SETTING_TRANS, sigma2=1.0)


def setting_two_draw(d: int, seed: int, max_tries: int = 1000) -> tuple[ModelParams, int]:
    """Random sparse design, redrawn until both matrices are certified stationary.

    Returns the parameters and the number of rejected draws.
    """
    for attempt in range(max_tries):
        params = _setting_two_once(d, stream(seed, "setting2", attempt))
        if all(spectral_norm(b) <= 1.0 - STATIONARITY_MARGIN for b in params.coeffs):
            if attempt:
                log.info("setting 2 (d=%d, seed=%d): %d draws rejected", d, seed, attempt)
            return params, attempt
    raise InvalidInputError(f"no stationary setting-2 draw for d={d} in {max_tries} tries")


def make_setting_two(d: int, seed: int) -> ModelParams:
    return setting_two_draw(d, seed)[0]
