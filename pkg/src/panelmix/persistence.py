"""Stage 1: pooled AR(1) with actor fixed effects, and its block-specific variant.

The pooled fit removes each actor's training mean and regresses the stacked
demeaned panel on its own lag, producing a single persistence coefficient
shared by all actors.  The block variant fits the same model independently
inside each partition block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panel import BlockPartition, Panel

RHO_CLIP = 0.995


@dataclass(frozen=True)
class PooledAR1Fit:
    """Pooled persistence coefficient plus per-actor fixed effects."""

    rho: float
    actor_means: np.ndarray
    fit_support: tuple[str, str]
    degenerate: bool = False

    def forecast(self, last_obs: np.ndarray) -> np.ndarray:
        return forecast_pooled(self, last_obs)

    def residuals(self, train_values: np.ndarray) -> np.ndarray:
        """In-sample one-step residuals, one column per quarter after the first."""
        mu = self.actor_means[:, None]
        pred = mu + self.rho * (train_values[:, :-1] - mu)
        return train_values[:, 1:] - pred


@dataclass(frozen=True)
class BlockAR1Fit:
    """One PooledAR1Fit per block, estimated within-block only."""

    per_block: dict[str, PooledAR1Fit]
    block_rows: dict[str, np.ndarray]  # panel row indices per block
    n_actors: int
    fit_support: tuple[str, str]

    def rho_vector(self) -> np.ndarray:
        """Per-actor persistence, expanded to panel row order."""
        rho = np.empty(self.n_actors)
        for b, rows in self.block_rows.items():
            rho[rows] = self.per_block[b].rho
        return rho

    def means_vector(self) -> np.ndarray:
        mu = np.empty(self.n_actors)
        for b, rows in self.block_rows.items():
            mu[rows] = self.per_block[b].actor_means
        return mu

    def forecast(self, last_obs: np.ndarray) -> np.ndarray:
        if last_obs.shape[0] != self.n_actors:
            raise ValueError("alignment error: last_obs length mismatch")
        mu = self.means_vector()
        return mu + self.rho_vector() * (last_obs - mu)

    def residuals(self, train_values: np.ndarray) -> np.ndarray:
        mu = self.means_vector()[:, None]
        rho = self.rho_vector()[:, None]
        pred = mu + rho * (train_values[:, :-1] - mu)
        return train_values[:, 1:] - pred


def _pooled_rho(values: np.ndarray) -> float:
    """Within-transformation OLS slope of the stacked demeaned AR(1)."""
    demeaned = values - values.mean(axis=1, keepdims=True)
    x = demeaned[:, :-1].ravel()
    y = demeaned[:, 1:].ravel()
    denom = float(x @ x)
    if denom <= 0.0:
        raise ValueError("degenerate regression: zero demeaned variance")
    rho = float(x @ y) / denom
    return float(np.clip(rho, -RHO_CLIP, RHO_CLIP))


def fit_pooled_ar1_fe(train: Panel, on_degenerate: str = "raise") -> PooledAR1Fit:
    """Fit the pooled AR(1)+FE model on training quarters only.

    on_degenerate: 'raise' surfaces an all-constant panel as an error;
    'zero' falls back to rho=0 (forecasts equal the fixed effects) and
    flags the fit, which is what the block estimator wants.
    """
    if train.n_quarters < 3:
        raise ValueError("calendar error: need at least 3 training quarters")
    means = train.values.mean(axis=1)
    support = (train.quarters[0], train.quarters[-1])
    try:
        rho = _pooled_rho(train.values)
    except ValueError:
        if on_degenerate == "zero":
            return PooledAR1Fit(0.0, means, support, degenerate=True)
        raise
    return PooledAR1Fit(rho, means, support)


def forecast_pooled(fit: PooledAR1Fit, last_obs: np.ndarray) -> np.ndarray:
    """One-step forecast: mean + rho * (last deviation from mean)."""
    last_obs = np.asarray(last_obs, dtype=float)
    if last_obs.shape != fit.actor_means.shape:
        raise ValueError("alignment error: last_obs length mismatch")
    return fit.actor_means + fit.rho * (last_obs - fit.actor_means)


def fit_block_ar1_fe(train: Panel, partition: BlockPartition) -> BlockAR1Fit:
    """Fit one pooled AR(1)+FE per partition block on its own actor subset.

    A block whose demeaned variance vanishes is flagged and falls back to
    rho_b = 0, so its forecasts equal the block's actor means.
    """
    partition.validate_against(train)
    if train.n_quarters < 3:
        raise ValueError("calendar error: need at least 3 training quarters")
    row_of = {a: i for i, a in enumerate(train.actor_ids)}
    per_block: dict[str, PooledAR1Fit] = {}
    block_rows: dict[str, np.ndarray] = {}
    support = (train.quarters[0], train.quarters[-1])
    for block in partition.block_ids():
        members = partition.members(block, train)
        if not members:
            continue
        rows = np.array([row_of[a] for a in members], dtype=int)
        if len(rows) < 2 and train.n_quarters < 6:
            raise ValueError(f"degenerate regression: block {block!r} too small")
        sub = train.values[rows]
        means = sub.mean(axis=1)
        try:
            rho = _pooled_rho(sub)
            per_block[block] = PooledAR1Fit(rho, means, support)
        except ValueError:
            per_block[block] = PooledAR1Fit(0.0, means, support, degenerate=True)
        block_rows[block] = rows
    return BlockAR1Fit(per_block, block_rows, train.n_actors, support)
