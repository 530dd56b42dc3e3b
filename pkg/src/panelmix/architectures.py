"""The eight named forecaster configurations and their residual routing.

Every architecture shares the same skeleton: a Stage-1 persistence forecast
plus a routed Stage-2 term.  An actor in a local block gets its block's
engine applied to the block residual vector; a globally routed actor gets
the global engine applied to the full residual vector; an unaugmented
actor gets exactly zero.  Every engine's routed term vanishes when its
operators are zeroed, so zeroing all of Stage 2 recovers the pooled-only
forecast bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import engines as eng
from .panel import BlockPartition, Panel
from .persistence import (BlockAR1Fit, PooledAR1Fit, fit_block_ar1_fe,
                          fit_pooled_ar1_fe)

ARCH_KINDS = ("G0", "G1", "S1", "BA", "BA_M2", "M1", "M2", "ENS")

DEFAULT_GLOBAL_ENGINE = "pca_ridge_var"
DEFAULT_LOCAL_ENGINE = "pca_ridge_var"


def local_rank_rule(n_b: int) -> int:
    """Default local rank: min(4, max(2, floor(N_b / 5)))."""
    return min(4, max(2, n_b // 5))


@dataclass(frozen=True)
class ArchitectureSpec:
    """One named forecaster configuration plus its hyperparameters.

    `local_K=None` applies the size rule per block; a fixed integer
    overrides it (used by the training-window sweep).  `ridge_lambda`
    penalizes the local VAR; the global VAR penalty defaults to global_K
    (a K x K transition on ~20 quarters needs shrinkage that grows with
    its dimension) and can be pinned explicitly.  Engine overrides accept
    {'global': kind, 'local': kind} or {'local': {block_id: kind}}.
    """

    kind: str
    partition: BlockPartition | None = None
    global_K: int = 8
    local_K: int | None = None
    half_life: float = 12.0
    ridge_lambda: float = 1.0
    global_ridge_lambda: float | None = None  # None: use global_K
    alpha_multipliers: tuple[float, ...] = (0.1, 1.0, 10.0)
    engine_overrides: dict | None = None

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.kind in ("S1", "BA", "BA_M2", "M1", "M2") and self.partition is None:
            raise ValueError(f"{self.kind} requires a block partition")

    def local_rank(self, n_b: int) -> int:
        return self.local_K if self.local_K is not None else local_rank_rule(n_b)

    def _engine_kind(self, scope: str, block_id: str | None = None) -> str:
        overrides = self.engine_overrides or {}
        if scope == "global":
            return overrides.get("global", DEFAULT_GLOBAL_ENGINE)
        default = "ridge_full" if self.kind == "M1" else DEFAULT_LOCAL_ENGINE
        local = overrides.get("local", default)
        if isinstance(local, dict):
            return local.get(block_id, default)
        return local


@dataclass
class MixtureFit:
    """Fitted architecture: Stage-1 fit plus routed Stage-2 engines."""

    spec: ArchitectureSpec
    actor_ids: tuple[str, ...]
    train_support: tuple[str, str]
    stage1: PooledAR1Fit | BlockAR1Fit
    global_engine: object | None = None
    local_engines: dict[str, object] = field(default_factory=dict)
    local_rows: dict[str, np.ndarray] = field(default_factory=dict)
    global_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    sub_fits: tuple["MixtureFit", "MixtureFit"] | None = None  # ENS only


def _clamped_rank(requested: int, n: int, t_resid: int, scope: str,
                  local: bool) -> int:
    """Feasible rank; local blocks also get the transitions-count reduction."""
    k = min(requested, n, t_resid - 1)
    if k < requested:
        warnings.warn(f"{scope}: rank reduced from {requested} to {k} "
                      f"(only {t_resid} residual quarters)")
    transitions = t_resid - 1
    if local and transitions < 2 * k + 1:
        k_new = max(1, (transitions - 1) // 2)
        warnings.warn(f"underdetermined local block ({scope}): rank reduced "
                      f"from {k} to {k_new}")
        k = k_new
    return k


def _fit_scope_engine(spec: ArchitectureSpec, residuals: np.ndarray,
                      scope: str, block_id: str | None = None):
    kind = spec._engine_kind(scope, block_id)
    n, t_resid = residuals.shape
    k = None
    if kind != "ridge_full":
        requested = spec.global_K if scope == "global" else spec.local_rank(n)
        label = "global" if scope == "global" else f"block {block_id}"
        k = _clamped_rank(requested, n, t_resid, label, local=(scope == "local"))
    lam = spec.ridge_lambda
    if scope == "global":
        lam = (float(spec.global_K) if spec.global_ridge_lambda is None
               else spec.global_ridge_lambda)
    return eng.fit_engine(kind, residuals, k,
                          half_life=spec.half_life,
                          ridge_lambda=lam,
                          alpha_multipliers=spec.alpha_multipliers)


def _local_block_rows(partition: BlockPartition, train: Panel) -> dict[str, np.ndarray]:
    row_of = {a: i for i, a in enumerate(train.actor_ids)}
    return {
        b: np.array([row_of[a] for a in partition.members(b, train)], dtype=int)
        for b in sorted(partition.local_blocks)
    }


def fit_architecture(spec: ArchitectureSpec, train: Panel) -> MixtureFit:
    """Fit Stage 1 and every routed Stage-2 engine on the training panel."""
    support = (train.quarters[0], train.quarters[-1])
    ids = tuple(train.actor_ids)

    if spec.kind == "ENS":
        g1 = fit_architecture(replace(spec, kind="G1"), train)
        ba = fit_architecture(replace(spec, kind="BA"), train)
        return MixtureFit(spec, ids, support, g1.stage1, sub_fits=(g1, ba))

    if spec.kind in ("BA", "BA_M2"):
        stage1 = fit_block_ar1_fe(train, spec.partition)
    else:
        stage1 = fit_pooled_ar1_fe(train)
    fit = MixtureFit(spec, ids, support, stage1)
    if spec.kind in ("G0", "BA"):
        return fit

    residuals = stage1.residuals(train.values)
    n = train.n_actors
    if spec.kind == "G1":
        fit.global_engine = _fit_scope_engine(spec, residuals, "global")
        fit.global_rows = np.arange(n, dtype=int)
        return fit

    spec.partition.validate_against(train)
    local_rows = _local_block_rows(spec.partition, train)
    in_local = np.zeros(n, dtype=bool)
    for rows in local_rows.values():
        in_local[rows] = True
    fit.global_rows = np.flatnonzero(~in_local)

    # S1 leaves local actors unaugmented; the mixtures give them local engines.
    if spec.kind in ("M1", "M2", "BA_M2"):
        fit.local_rows = local_rows
        for block, rows in local_rows.items():
            fit.local_engines[block] = _fit_scope_engine(
                spec, residuals[rows], "local", block)

    fit.global_engine = _fit_scope_engine(spec, residuals, "global")
    return fit


def _stage2_contribution(fit: MixtureFit, r_last: np.ndarray) -> np.ndarray:
    contrib = np.zeros(len(fit.actor_ids))
    if fit.global_engine is not None and fit.global_rows.size:
        contrib[fit.global_rows] = fit.global_engine.deviation_forecast(r_last)[fit.global_rows]
    for block, rows in fit.local_rows.items():
        contrib[rows] = fit.local_engines[block].deviation_forecast(r_last[rows])
    return contrib


def forecast_architecture(fit: MixtureFit, panel_upto_origin: Panel) -> np.ndarray:
    """One-step-ahead forecast from the last quarter of the given panel.

    The panel must end at the fit's training boundary (models are refit
    every quarter under the rolling protocol, so forecasting from a later
    origin would silently mix stale operators with newer data).
    """
    if tuple(panel_upto_origin.actor_ids) != fit.actor_ids:
        raise ValueError("alignment error: actor set mismatch with fit")
    if panel_upto_origin.quarters[-1] != fit.train_support[1]:
        raise ValueError("alignment error: origin differs from fit support")

    if fit.spec.kind == "ENS":
        g1, ba = fit.sub_fits
        return 0.5 * (forecast_architecture(g1, panel_upto_origin)
                      + forecast_architecture(ba, panel_upto_origin))

    last = panel_upto_origin.values[:, -1]
    base = fit.stage1.forecast(last)
    if fit.spec.kind in ("G0", "BA"):
        return base
    prev = panel_upto_origin.values[:, -2]
    r_last = last - fit.stage1.forecast(prev)
    return base + _stage2_contribution(fit, r_last)


def zero_stage2(fit: MixtureFit) -> MixtureFit:
    """Copy of the fit with every Stage-2 operator forced to zero."""
    out = MixtureFit(fit.spec, fit.actor_ids, fit.train_support, fit.stage1,
                     global_engine=(fit.global_engine.zeroed()
                                    if fit.global_engine is not None else None),
                     local_engines={b: e.zeroed() for b, e in fit.local_engines.items()},
                     local_rows=dict(fit.local_rows),
                     global_rows=fit.global_rows.copy())
    if fit.sub_fits is not None:
        out.sub_fits = tuple(zero_stage2(f) for f in fit.sub_fits)
    return out


# ---------------------------------------------------------------------------
# Single-stage block-dummy ridge baseline
# ---------------------------------------------------------------------------


class BlockDummyRidge:
    """Pooled one-stage ridge of y_{t+1} on block-interacted y_t features.

    Features per observation: the lagged value, its interaction with every
    block dummy except the first (reference coding, so a one-block
    partition collapses to plain ridge on [y, 1]), and the block dummies
    themselves (which span the intercept).
    """

    def __init__(self, coef: np.ndarray, blocks: list[str], block_index: np.ndarray,
                 alpha: float):
        self.coef = coef
        self.blocks = blocks
        self.block_index = block_index
        self.alpha = alpha

    @property
    def n_features(self) -> int:
        return 2 * len(self.blocks)

    def features(self, values: np.ndarray) -> np.ndarray:
        """Design rows for one panel column (N x n_features)."""
        n = values.shape[0]
        b = len(self.blocks)
        X = np.zeros((n, 2 * b))
        X[:, 0] = values
        for j in range(1, b):
            sel = self.block_index == j
            X[sel, j] = values[sel]
        X[np.arange(n), b + self.block_index] = 1.0
        return X

    def forecast(self, last_obs: np.ndarray) -> np.ndarray:
        return self.features(np.asarray(last_obs, dtype=float)) @ self.coef


def single_stage_block_dummy_ridge(train: Panel, partition: BlockPartition,
                                   alpha_multipliers=(0.1, 1.0, 10.0)) -> BlockDummyRidge:
    """Fit the one-stage comparison baseline with hold-last-2 penalty CV."""
    partition.validate_against(train)
    blocks = [b for b in partition.block_ids() if partition.members(b)]
    block_of = {b: j for j, b in enumerate(blocks)}
    block_index = np.array([block_of[partition.assignment[a]] for a in train.actor_ids])

    proto = BlockDummyRidge(None, blocks, block_index, 0.0)
    t = train.n_quarters
    X_cols = [proto.features(train.values[:, s]) for s in range(t - 1)]
    y_cols = [train.values[:, s + 1] for s in range(t - 1)]

    def solve(cols, targets, alpha):
        X = np.vstack(cols)
        y = np.concatenate(targets)
        p = X.shape[1]
        return np.linalg.solve(X.T @ X + alpha * np.eye(p), X.T @ y)

    alphas = sorted(m * train.n_actors for m in alpha_multipliers)
    if t - 1 > 2:
        best_alpha, best_err = None, np.inf
        for alpha in alphas:
            coef = solve(X_cols[:-2], y_cols[:-2], alpha)
            err = sum(float(np.sum((yt - Xt @ coef) ** 2))
                      for Xt, yt in zip(X_cols[-2:], y_cols[-2:]))
            if err <= best_err:
                best_alpha, best_err = alpha, err
    else:
        best_alpha = alphas[-1]
    coef = solve(X_cols, y_cols, best_alpha)
    return BlockDummyRidge(coef, blocks, block_index, best_alpha)
