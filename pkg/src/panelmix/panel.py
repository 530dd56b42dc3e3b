"""Panel data model, CSV ingestion, normalization transforms, and calendar math.

A panel is a balanced N-actor by T-quarter matrix of intensities in which
every actor carries a layer label (macro / institutional / firm) and a
sector label.  All transforms are pure: they return new Panel objects and
never mutate their input, so panels can be shared freely across threads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

LAYERS = ("macro", "institutional", "firm")

_QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")


def quarter_index(label: str) -> int:
    """Map a 'YYYYQn' label to an absolute quarter count (year*4 + n - 1)."""
    m = _QUARTER_RE.match(label)
    if m is None:
        raise ValueError(f"calendar error: bad quarter label {label!r}")
    return int(m.group(1)) * 4 + int(m.group(2)) - 1


def quarter_label(index: int) -> str:
    """Inverse of :func:`quarter_index`."""
    return f"{index // 4}Q{index % 4 + 1}"


def quarter_range(start: str, n: int) -> list[str]:
    """n consecutive quarter labels beginning at `start`."""
    i0 = quarter_index(start)
    return [quarter_label(i0 + k) for k in range(n)]


@dataclass(frozen=True)
class ActorMeta:
    """Identity and static economic metadata for one panel row."""

    actor_id: str
    layer: str
    sector: str

    def __post_init__(self):
        if not self.actor_id:
            raise ValueError("registry conflict: empty actor_id")
        if self.layer not in LAYERS:
            raise ValueError(f"registry conflict: unknown layer {self.layer!r}")
        if not self.sector:
            raise ValueError("registry conflict: empty sector")


class Panel:
    """Balanced N x T matrix of actor intensities with aligned metadata.

    values : float array, rows are actors, columns are quarters
    quarters : strictly increasing 'YYYYQn' labels, one per column
    registry : ActorMeta per row, order matching `values`
    provenance : optional dict recording how the panel was produced
    """

    __slots__ = ("values", "quarters", "registry", "provenance")

    def __init__(self, values, quarters, registry, provenance=None):
        values = np.array(values, dtype=float)
        if values.ndim != 2:
            raise ValueError("unbalanced panel: values must be a 2-D matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("unbalanced panel: missing or non-finite cells")
        quarters = list(quarters)
        registry = list(registry)
        if values.shape != (len(registry), len(quarters)):
            raise ValueError("unbalanced panel: shape does not match metadata")
        idx = [quarter_index(q) for q in quarters]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("calendar error: quarters not strictly increasing")
        ids = [m.actor_id for m in registry]
        if len(set(ids)) != len(ids):
            raise ValueError("registry conflict: duplicate actor_id")
        self.values = values
        self.values.setflags(write=False)
        self.quarters = quarters
        self.registry = registry
        self.provenance = provenance

    # -- basic introspection ------------------------------------------------

    @property
    def n_actors(self) -> int:
        return self.values.shape[0]

    @property
    def n_quarters(self) -> int:
        return self.values.shape[1]

    @property
    def actor_ids(self) -> list[str]:
        return [m.actor_id for m in self.registry]

    def row_of(self, actor_id: str) -> int:
        for i, m in enumerate(self.registry):
            if m.actor_id == actor_id:
                return i
        raise KeyError(actor_id)

    def column_of(self, quarter: str) -> int:
        try:
            return self.quarters.index(quarter)
        except ValueError:
            raise KeyError(quarter) from None

    # -- slicing ------------------------------------------------------------

    def window(self, first: str, last: str) -> "Panel":
        """Sub-panel covering quarters `first`..`last` inclusive."""
        a, b = self.column_of(first), self.column_of(last)
        if b < a:
            raise ValueError("calendar error: empty window")
        return Panel(self.values[:, a : b + 1].copy(), self.quarters[a : b + 1],
                     self.registry, self.provenance)

    def upto(self, last: str) -> "Panel":
        return self.window(self.quarters[0], last)

    def select_actors(self, actor_ids) -> "Panel":
        """Sub-panel restricted to the given actors, panel row order preserved."""
        wanted = set(actor_ids)
        rows = [i for i, m in enumerate(self.registry) if m.actor_id in wanted]
        missing = wanted - {self.registry[i].actor_id for i in rows}
        if missing:
            raise KeyError(sorted(missing)[0])
        return Panel(self.values[rows].copy(), self.quarters,
                     [self.registry[i] for i in rows], self.provenance)

    def __eq__(self, other):
        return (isinstance(other, Panel)
                and self.quarters == other.quarters
                and self.registry == other.registry
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"Panel(N={self.n_actors}, T={self.n_quarters}, {self.quarters[0]}..{self.quarters[-1]})"


@dataclass(frozen=True)
class RollingWindowSpec:
    """Calendar for the rolling out-of-sample protocol.

    Each test year gets four forecasts; the training set starts train_years
    before the test year and expands quarter by quarter within the year.
    """

    test_years: tuple[int, ...]
    train_years: int
    refit: str = "quarterly_expanding"

    def __post_init__(self):
        object.__setattr__(self, "test_years", tuple(int(y) for y in self.test_years))
        if self.train_years < 1:
            raise ValueError("calendar error: train_years must be positive")
        if list(self.test_years) != sorted(set(self.test_years)):
            raise ValueError("calendar error: test_years must be strictly increasing")
        if self.refit != "quarterly_expanding":
            raise ValueError(f"calendar error: unsupported refit {self.refit!r}")

    def validate_against(self, panel: Panel) -> None:
        """Every test year needs train_years*4 preceding quarters in the panel."""
        have = {quarter_index(q) for q in panel.quarters}
        for year in self.test_years:
            start = year * 4 - self.train_years * 4
            needed = set(range(start, year * 4 + 4))
            if not needed <= have:
                raise ValueError(f"calendar error: infeasible test year {year}")


@dataclass(frozen=True)
class BlockPartition:
    """Assignment of every actor to exactly one block.

    Blocks named in `local_blocks` receive their own Stage-2 model; the
    remainder block keeps the global one.  The remainder may legitimately
    be empty (an all-local mixture).
    """

    assignment: dict[str, str]
    local_blocks: frozenset[str]
    remainder_block: str
    MIN_LOCAL_SIZE = 5

    def __post_init__(self):
        object.__setattr__(self, "assignment", dict(self.assignment))
        object.__setattr__(self, "local_blocks", frozenset(self.local_blocks))
        if self.remainder_block in self.local_blocks:
            raise ValueError("partition error: remainder block cannot be local")
        sizes = self.block_sizes()
        for b in self.local_blocks:
            if sizes.get(b, 0) < self.MIN_LOCAL_SIZE:
                raise ValueError(
                    f"partition error: local block {b!r} has fewer than "
                    f"{self.MIN_LOCAL_SIZE} actors")

    def block_sizes(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for b in self.assignment.values():
            out[b] = out.get(b, 0) + 1
        return out

    def block_ids(self) -> list[str]:
        """All block ids: locals sorted first, then remainder, then any others.

        The remainder is always listed, even when no actor maps to it.
        """
        others = sorted(set(self.assignment.values())
                        - self.local_blocks - {self.remainder_block})
        return sorted(self.local_blocks) + [self.remainder_block] + others

    def members(self, block_id: str, panel: Panel | None = None) -> list[str]:
        ids = [a for a, b in self.assignment.items() if b == block_id]
        if panel is not None:
            order = {a: i for i, a in enumerate(panel.actor_ids)}
            ids.sort(key=order.__getitem__)
        else:
            ids.sort()
        return ids

    def validate_against(self, panel: Panel) -> None:
        """Every panel actor assigned exactly once, no strangers."""
        ids = set(panel.actor_ids)
        assigned = set(self.assignment)
        if assigned != ids:
            missing = sorted(ids - assigned) + sorted(assigned - ids)
            raise ValueError(f"partition error: actor coverage mismatch ({missing[:3]}...)")

    @classmethod
    def from_sectors(cls, panel: Panel, local_sectors, remainder_block="remainder"):
        """Partition by registry sector; listed sectors become local blocks."""
        local = set(local_sectors)
        assignment = {
            m.actor_id: (m.sector if m.sector in local else remainder_block)
            for m in panel.registry
        }
        return cls(assignment, frozenset(local), remainder_block)


# ---------------------------------------------------------------------------
# CSV ingestion / emission
# ---------------------------------------------------------------------------

_PROVENANCE_PREFIX = "# provenance: "


def load_panel(path) -> Panel:
    """Read a wide-format panel CSV (see docs/formats.md).

    Header: actor_id,layer,sector,<Q1>,<Q2>,...  One row per actor.  A
    leading '# provenance: {...}' comment line is honoured if present.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    provenance = None
    if lines and lines[0].startswith(_PROVENANCE_PREFIX):
        provenance = json.loads(lines[0][len(_PROVENANCE_PREFIX):])
        lines = lines[1:]
    if not lines:
        raise ValueError("unbalanced panel: empty file")
    header = lines[0].split(",")
    if header[:3] != ["actor_id", "layer", "sector"]:
        raise ValueError("unbalanced panel: bad header")
    quarters = header[3:]
    registry, rows = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ValueError(f"unbalanced panel: row {parts[0]} has "
                             f"{len(parts) - 3} cells, expected {len(quarters)}")
        if any(p.strip() == "" for p in parts[3:]):
            raise ValueError(f"unbalanced panel: empty cell in row {parts[0]}")
        registry.append(ActorMeta(parts[0], parts[1], parts[2]))
        rows.append([float(p) for p in parts[3:]])
    return Panel(np.array(rows, dtype=float), quarters, registry, provenance)


def save_panel(panel: Panel, path) -> None:
    """Write the wide CSV format; floats use repr so reloads are bit-exact."""
    with open(path, "w", encoding="utf-8") as fh:
        if panel.provenance is not None:
            fh.write(_PROVENANCE_PREFIX + json.dumps(panel.provenance, sort_keys=True) + "\n")
        fh.write(",".join(["actor_id", "layer", "sector"] + panel.quarters) + "\n")
        for m, row in zip(panel.registry, panel.values):
            cells = [repr(float(v)) for v in row]
            fh.write(",".join([m.actor_id, m.layer, m.sector] + cells) + "\n")


def load_partition(path) -> BlockPartition:
    """Read an actor_id,block_id,is_local partition CSV.

    The remainder block is the non-local block named 'remainder' when
    present, otherwise the largest non-local block (ties: lexicographic).
    """
    assignment: dict[str, str] = {}
    local: set[str] = set()
    nonlocal_sizes: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].split(",")[:3] != ["actor_id", "block_id", "is_local"]:
        raise ValueError("partition error: bad header")
    for ln in lines[1:]:
        actor, block, is_local = [p.strip() for p in ln.split(",")]
        if actor in assignment:
            raise ValueError(f"partition error: duplicate actor {actor}")
        assignment[actor] = block
        if is_local.lower() in ("1", "true", "yes"):
            local.add(block)
        else:
            nonlocal_sizes[block] = nonlocal_sizes.get(block, 0) + 1
    if "remainder" in nonlocal_sizes:
        remainder = "remainder"
    elif nonlocal_sizes:
        remainder = sorted(nonlocal_sizes, key=lambda b: (-nonlocal_sizes[b], b))[0]
    else:
        remainder = "remainder"
    return BlockPartition(assignment, frozenset(local), remainder)


def save_partition(partition: BlockPartition, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("actor_id,block_id,is_local\n")
        for actor in sorted(partition.assignment):
            block = partition.assignment[actor]
            fh.write(f"{actor},{block},{int(block in partition.local_blocks)}\n")


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def percentile_rank_transform(raw: Panel) -> Panel:
    """Within-quarter cross-sectional percentile ranks in [0, 1].

    Each column is ranked independently (midranks for ties) and mapped via
    (rank - 1) / (N - 1), so column t depends on column t alone and sorted
    output of a tie-free column is the fixed grid 0, 1/(N-1), ..., 1.
    """
    if raw.n_actors < 2:
        raise ValueError("unbalanced panel: need at least 2 actors to rank")
    from scipy.stats import rankdata

    ranks = rankdata(raw.values, method="average", axis=0)
    out = (ranks - 1.0) / (raw.n_actors - 1.0)
    return Panel(out, raw.quarters, raw.registry, raw.provenance)


def minmax_normalize(series: Panel, mode: str = "full_sample") -> Panel:
    """Per-actor min-max scaling over time.

    full_sample uses the whole-series bounds; recursive uses only quarters
    <= t, emitting the 0.5 convention whenever the running range is zero
    (always the case at t=0).
    """
    x = series.values
    if mode == "full_sample":
        lo = x.min(axis=1, keepdims=True)
        hi = x.max(axis=1, keepdims=True)
        rng = hi - lo
        if np.any(rng == 0):
            i = int(np.argmax((rng == 0).ravel()))
            raise ValueError(f"zero range: constant series {series.registry[i].actor_id}")
        out = (x - lo) / rng
    elif mode == "recursive":
        lo = np.minimum.accumulate(x, axis=1)
        hi = np.maximum.accumulate(x, axis=1)
        rng = hi - lo
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(rng > 0, (x - lo) / np.where(rng > 0, rng, 1.0), 0.5)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return Panel(out, series.quarters, series.registry, series.provenance)


def lag_actors(panel: Panel, actor_ids, lag: int) -> Panel:
    """Shift selected actors back by `lag` quarters, truncating to common support.

    The lagged rows report their value from `lag` quarters earlier; all
    other rows are truncated to the same T - lag trailing quarters.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    if lag >= panel.n_quarters:
        raise ValueError("empty support: lag >= panel length")
    wanted = set(actor_ids)
    unknown = wanted - set(panel.actor_ids)
    if unknown:
        raise KeyError(sorted(unknown)[0])
    out = panel.values[:, lag:].copy()
    for i, m in enumerate(panel.registry):
        if m.actor_id in wanted:
            out[i] = panel.values[i, : panel.n_quarters - lag]
    return Panel(out, panel.quarters[lag:], panel.registry, panel.provenance)


def first_difference(panel: Panel) -> Panel:
    """Quarter-over-quarter changes; the first quarter is dropped."""
    if panel.n_quarters < 2:
        raise ValueError("empty support: need T >= 2 to difference")
    out = np.diff(panel.values, axis=1)
    return Panel(out, panel.quarters[1:], panel.registry, panel.provenance)
