"""Placebo permutation tests, block-selection procedures, and perturbations.

All of these drivers answer the same question many times over: how does the
mixture (M2) gain over the global model (G1) change when the block
partition changes?  Stage 1 and the global Stage-2 engine do not depend on
the partition, so a per-origin cache precomputes them once and each
candidate partition only refits its local engines.  The cached path is a
pure optimization: it reproduces the plain rolling evaluation exactly, and
the test suite asserts as much.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .architectures import ArchitectureSpec, _fit_scope_engine
from .evaluation import (WindowResult, oos_r2, rolling_oos_evaluate,
                         window_r2, year_origins)
from .panel import BlockPartition, Panel, RollingWindowSpec
from .persistence import fit_pooled_ar1_fe


def default_mixture_template(**kwargs) -> ArchitectureSpec:
    """Hyperparameter carrier for cached partition sweeps.

    Only ranks, penalties, and engine kinds are read from the template;
    its own partition (if any) is ignored, so the partition-free G1 kind
    works for the default M2-style local engines.
    """
    return ArchitectureSpec("G1", **kwargs)


class MixtureDeltaCache:
    """Per-origin state shared by every partition evaluated on one panel.

    Caches, for each forecast origin of the calendar: the pooled Stage-1
    fit and forecast, the residual matrix, the last residual, the global
    engine's deviation forecast, and the realized target.  Evaluating a
    partition then costs only its local-block fits.
    """

    def __init__(self, panel: Panel, cal: RollingWindowSpec,
                 template: ArchitectureSpec | None = None):
        cal.validate_against(panel)
        self.panel = panel
        self.cal = cal
        self.template = template or default_mixture_template()
        self._row_of = {a: i for i, a in enumerate(panel.actor_ids)}
        self._origins: list[list[dict]] = []
        self._actuals: list[np.ndarray] = []
        self._train_means: list[np.ndarray] = []
        for year in cal.test_years:
            per_year = []
            actuals = np.empty((panel.n_actors, 4))
            for q, (start, last_train, target) in enumerate(year_origins(cal, year)):
                train = panel.window(start, last_train)
                if q == 0:
                    self._train_means.append(train.values.mean(axis=1))
                stage1 = fit_pooled_ar1_fe(train)
                residuals = stage1.residuals(train.values)
                r_last = residuals[:, -1]
                engine = _fit_scope_engine(self.template, residuals, "global")
                per_year.append({
                    "base": stage1.forecast(train.values[:, -1]),
                    "residuals": residuals,
                    "r_last": r_last,
                    "global_dev": engine.deviation_forecast(r_last),
                })
                actuals[:, q] = panel.values[:, panel.column_of(target)]
            self._origins.append(per_year)
            self._actuals.append(actuals)
        self.g1_window_r2 = self._window_r2(lambda origin: origin["global_dev"])

    # -- internals ----------------------------------------------------------

    def _window_r2(self, contribution) -> np.ndarray:
        out = np.empty(len(self._origins))
        for w, (per_year, actuals) in enumerate(zip(self._origins, self._actuals)):
            forecasts = np.empty_like(actuals)
            for q, origin in enumerate(per_year):
                forecasts[:, q] = origin["base"] + contribution(origin)
            result = WindowResult(self.cal.test_years[w], forecasts, actuals,
                                  actuals.mean(axis=1), self._train_means[w])
            out[w] = oos_r2(result, "test_mean")
        return out

    def _local_rows(self, partition: BlockPartition) -> dict[str, np.ndarray]:
        return {
            b: np.array([self._row_of[a] for a in partition.members(b, self.panel)],
                        dtype=int)
            for b in sorted(partition.local_blocks)
        }

    def m2_window_r2(self, partition: BlockPartition) -> np.ndarray:
        """Per-window R2 of the mixture under the given partition."""
        partition.validate_against(self.panel)
        local_rows = self._local_rows(partition)
        in_local = np.zeros(self.panel.n_actors, dtype=bool)
        for rows in local_rows.values():
            in_local[rows] = True
        global_rows = np.flatnonzero(~in_local)

        def contribution(origin):
            contrib = np.zeros(self.panel.n_actors)
            if global_rows.size:
                contrib[global_rows] = origin["global_dev"][global_rows]
            for block, rows in local_rows.items():
                engine = _fit_scope_engine(self.template,
                                           origin["residuals"][rows], "local", block)
                contrib[rows] = engine.deviation_forecast(origin["r_last"][rows])
            return contrib

        return self._window_r2(contribution)

    def delta(self, partition: BlockPartition) -> tuple[float, np.ndarray]:
        """(mean delta, per-window deltas) of M2-vs-G1 for one partition."""
        deltas = self.m2_window_r2(partition) - self.g1_window_r2
        return float(deltas.mean()), deltas


# ---------------------------------------------------------------------------
# Placebo permutation test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlaceboResult:
    real_delta: float
    perm_deltas: np.ndarray
    z: float
    p: float
    seed: int
    template_sizes: tuple[tuple[str, int], ...]
    per_window_real: np.ndarray
    stratified: bool


def _permutation_partition(base: BlockPartition, order: list[str],
                           sizes: dict[str, int], fixed: set[str],
                           shuffled: np.ndarray) -> BlockPartition:
    assignment = {a: base.assignment[a] for a in fixed}
    cursor = 0
    for block in order:
        need = sizes[block] - sum(1 for a in fixed if base.assignment[a] == block)
        for a in shuffled[cursor : cursor + need]:
            assignment[str(a)] = block
        cursor += need
    return BlockPartition(assignment, base.local_blocks, base.remainder_block)


def placebo_test(panel: Panel, base_partition: BlockPartition,
                 cal: RollingWindowSpec, n_perms: int = 1000,
                 stratify=None, seed: int = 0,
                 template: ArchitectureSpec | None = None,
                 cache: MixtureDeltaCache | None = None) -> PlaceboResult:
    """Benchmark the real partition against size-matched random partitions.

    Each permutation reshuffles actors across the template's blocks while
    preserving every block's size and its local/remainder role.  Stratified
    mode takes a set of actor ids that must form a union of whole blocks;
    those actors stay in place and only the rest permute.  Permutation i
    draws from a child seed of (seed, i), so results do not depend on
    evaluation order.  The Monte Carlo p uses the add-one convention.
    """
    if n_perms < 1:
        raise ValueError("empty permutation set")
    base_partition.validate_against(panel)
    if cache is None:
        cache = MixtureDeltaCache(panel, cal, template)

    fixed: set[str] = set()
    if stratify:
        fixed = set(stratify)
        covered_blocks = {base_partition.assignment[a] for a in fixed}
        whole = {a for a, b in base_partition.assignment.items() if b in covered_blocks}
        if whole != fixed:
            raise ValueError("stratification error: fixed set must be a union of whole blocks")

    sizes = base_partition.block_sizes()
    order = [b for b in base_partition.block_ids() if sizes.get(b, 0) > 0]
    permutable = np.array([a for a in panel.actor_ids if a not in fixed])

    real_delta, per_window_real = cache.delta(base_partition)
    children = np.random.SeedSequence(seed).spawn(n_perms)
    perm_deltas = np.empty(n_perms)
    for i in range(n_perms):
        rng = np.random.default_rng(children[i])
        shuffled = rng.permutation(permutable)
        part = _permutation_partition(base_partition, order, sizes, fixed, shuffled)
        perm_deltas[i] = cache.delta(part)[0]

    spread = float(perm_deltas.std(ddof=1)) if n_perms > 1 else float("nan")
    z = (real_delta - float(perm_deltas.mean())) / spread if spread else float("inf")
    p = (int(np.sum(perm_deltas >= real_delta)) + 1) / (n_perms + 1)
    return PlaceboResult(real_delta, perm_deltas, float(z), float(p), seed,
                         tuple((b, sizes[b]) for b in order), per_window_real,
                         stratified=bool(stratify))


# ---------------------------------------------------------------------------
# Candidate blocks: scan, LOWO, held-out freeze
# ---------------------------------------------------------------------------


def single_block_partition(block_id: str, actor_ids, panel: Panel,
                           remainder: str = "remainder") -> BlockPartition:
    members = set(actor_ids)
    assignment = {a: (block_id if a in members else remainder)
                  for a in panel.actor_ids}
    return BlockPartition(assignment, frozenset({block_id}), remainder)


def multi_block_partition(blocks: dict, panel: Panel,
                          remainder: str = "remainder") -> BlockPartition:
    """Partition with several disjoint local blocks; the rest is remainder."""
    assignment = {a: remainder for a in panel.actor_ids}
    for block_id, actor_ids in blocks.items():
        for a in actor_ids:
            if assignment.get(a) not in (remainder, None):
                raise ValueError(f"overlapping candidates at actor {a!r}")
            assignment[a] = block_id
    return BlockPartition(assignment, frozenset(blocks), remainder)


@dataclass(frozen=True)
class CandidateReport:
    block_id: str
    n_actors: int
    delta: float
    wins: int
    n_windows: int
    per_window: np.ndarray


def candidate_scan(panel: Panel, candidates: dict, cal: RollingWindowSpec,
                   template: ArchitectureSpec | None = None,
                   cache: MixtureDeltaCache | None = None) -> list[CandidateReport]:
    """Single-block mixture delta versus G1 for every candidate block."""
    if cache is None:
        cache = MixtureDeltaCache(panel, cal, template)
    reports = []
    for block_id, actor_ids in candidates.items():
        part = single_block_partition(block_id, actor_ids, panel)
        mean_delta, per_window = cache.delta(part)
        reports.append(CandidateReport(block_id, len(set(actor_ids)), mean_delta,
                                       int(np.sum(per_window > 0)),
                                       per_window.size, per_window))
    return reports


@dataclass(frozen=True)
class LowoResult:
    selections: dict[int, tuple[str, ...]]
    lowo_window_deltas: np.ndarray
    lowo_delta: float
    contaminated_delta: float
    candidate_deltas: dict[str, np.ndarray]


def lowo_block_selection(panel: Panel, candidates: dict, cal: RollingWindowSpec,
                         template: ArchitectureSpec | None = None) -> LowoResult:
    """Leave-one-window-out selection of local blocks.

    For each window w, a candidate is selected when its mean single-block
    delta over the other windows is positive; window w is then scored
    under that selection.  Candidates must be pairwise disjoint so that
    selected blocks can coexist in one partition.
    """
    cache = MixtureDeltaCache(panel, cal, template)
    seen: set[str] = set()
    for actor_ids in candidates.values():
        ids = set(actor_ids)
        if seen & ids:
            raise ValueError("overlapping candidates: LOWO needs disjoint blocks")
        seen |= ids
    cand_deltas = {
        b: cache.delta(single_block_partition(b, ids, panel))[1]
        for b, ids in candidates.items()
    }
    n_windows = len(cal.test_years)
    selections: dict[int, tuple[str, ...]] = {}
    lowo_deltas = np.empty(n_windows)
    partition_cache: dict[tuple[str, ...], np.ndarray] = {}
    for w, year in enumerate(cal.test_years):
        held_out = np.arange(n_windows) != w
        selected = tuple(sorted(
            b for b, d in cand_deltas.items() if float(d[held_out].mean()) > 0.0))
        selections[year] = selected
        if selected not in partition_cache:
            if selected:
                part = multi_block_partition(
                    {b: candidates[b] for b in selected}, panel)
                partition_cache[selected] = cache.delta(part)[1]
            else:
                partition_cache[selected] = np.zeros(n_windows)
        lowo_deltas[w] = partition_cache[selected][w]

    contaminated = tuple(sorted(
        b for b, d in cand_deltas.items() if float(d.mean()) > 0.0))
    if contaminated:
        contaminated_delta = float(cache.delta(
            multi_block_partition({b: candidates[b] for b in contaminated}, panel))[0])
    else:
        contaminated_delta = 0.0
    return LowoResult(selections, lowo_deltas, float(lowo_deltas.mean()),
                      contaminated_delta, cand_deltas)


@dataclass(frozen=True)
class FreezeResult:
    selected: tuple[str, ...]
    phase_a_reports: list[CandidateReport]
    frozen_partition: BlockPartition | None
    phase_b_delta: float
    phase_b_wins: int
    phase_b_windows: int
    phase_b_per_window: np.ndarray


def held_out_freeze(panel: Panel, candidates: dict, phase_a_years, phase_b_years,
                    train_years: int = 5,
                    template: ArchitectureSpec | None = None,
                    win_fraction: float = 0.8) -> FreezeResult:
    """Freeze the partition on phase A, evaluate it untouched on phase B.

    Selection rule per candidate: mean delta > 0 AND wins >= ceil(0.8 * nA)
    on the phase-A windows (the conjunction is strict).  Phases must be
    disjoint with A entirely before B.
    """
    phase_a = sorted(int(y) for y in phase_a_years)
    phase_b = sorted(int(y) for y in phase_b_years)
    if set(phase_a) & set(phase_b) or (phase_a and phase_b and phase_a[-1] >= phase_b[0]):
        raise ValueError("overlapping phases: phase A must precede phase B")
    cal_a = RollingWindowSpec(tuple(phase_a), train_years)
    cal_b = RollingWindowSpec(tuple(phase_b), train_years)
    reports = candidate_scan(panel, candidates, cal_a, template)
    threshold = math.ceil(win_fraction * len(phase_a))
    selected = tuple(sorted(r.block_id for r in reports
                            if r.delta > 0.0 and r.wins >= threshold))
    cache_b = MixtureDeltaCache(panel, cal_b, template)
    if selected:
        frozen = multi_block_partition({b: candidates[b] for b in selected}, panel)
        _, per_window = cache_b.delta(frozen)
    else:
        frozen = None
        per_window = np.zeros(len(phase_b))
    return FreezeResult(selected, reports, frozen, float(per_window.mean()),
                        int(np.sum(per_window > 0)), len(phase_b), per_window)


# ---------------------------------------------------------------------------
# Partition perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionVariant:
    """One perturbation: boundary moves, local-role changes, actor drops."""

    name: str
    moves: tuple[tuple[str, str], ...] = ()
    demote_local: tuple[str, ...] = ()
    promote_local: tuple[str, ...] = ()
    drop_actors: tuple[str, ...] = ()


@dataclass(frozen=True)
class VariantReport:
    name: str
    delta: float
    wins: int
    n_windows: int
    per_window: np.ndarray


def apply_variant(panel: Panel, partition: BlockPartition,
                  variant: PartitionVariant) -> tuple[Panel, BlockPartition]:
    """Panel and partition after one perturbation; validates the result."""
    assignment = dict(partition.assignment)
    for actor, target in variant.moves:
        if actor not in assignment:
            raise ValueError(f"invalid reassignment: unknown actor {actor!r}")
        assignment[actor] = target
    local = set(partition.local_blocks) - set(variant.demote_local)
    for b in variant.promote_local:
        if b == partition.remainder_block:
            raise ValueError("invalid reassignment: remainder cannot become local")
        local.add(b)
    new_panel = panel
    if variant.drop_actors:
        keep = [a for a in panel.actor_ids if a not in set(variant.drop_actors)]
        new_panel = panel.select_actors(keep)
        assignment = {a: b for a, b in assignment.items() if a in set(keep)}
        counts: dict[str, int] = {}
        for b in assignment.values():
            counts[b] = counts.get(b, 0) + 1
        local = {b for b in local if counts.get(b, 0) >= BlockPartition.MIN_LOCAL_SIZE}
    new_partition = BlockPartition(assignment, frozenset(local),
                                   partition.remainder_block)
    new_partition.validate_against(new_panel)
    return new_panel, new_partition


def perturbation_suite(panel: Panel, partition: BlockPartition, variants,
                       cal: RollingWindowSpec,
                       template: ArchitectureSpec | None = None) -> list[VariantReport]:
    """Mixture-vs-global delta for the baseline and each perturbed partition."""
    reports = []
    caches: dict[tuple, MixtureDeltaCache] = {}

    def cache_for(p: Panel) -> MixtureDeltaCache:
        key = tuple(p.actor_ids)
        if key not in caches:
            caches[key] = MixtureDeltaCache(p, cal, template)
        return caches[key]

    baseline = PartitionVariant("baseline")
    for variant in [baseline, *variants]:
        v_panel, v_partition = apply_variant(panel, partition, variant)
        _, per_window = cache_for(v_panel).delta(v_partition)
        reports.append(VariantReport(variant.name, float(per_window.mean()),
                                     int(np.sum(per_window > 0)),
                                     per_window.size, per_window))
    return reports
