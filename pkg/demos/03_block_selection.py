"""Choosing which blocks deserve local treatment, without peeking.

Three selection protocols of increasing strictness: a candidate scan
(every block alone versus the global baseline), leave-one-window-out
selection (each test year scored under blocks chosen from the other
years), and a held-out freeze (blocks frozen on an early phase, evaluated
untouched on a later decade).
"""

import panelmix as pm
from panelmix.synth import demo_heterogeneous_config

panel = pm.generate_heterogeneous_panel(seed=14, **demo_heterogeneous_config())
partition = pm.planted_partition(panel)
cal = pm.RollingWindowSpec(tuple(range(2015, 2025)), train_years=5)

candidates = {b: partition.members(b, panel) for b in sorted(partition.local_blocks)}
# an arbitrary slice of remainder actors, included as a lure
candidates["arbitrary"] = partition.members("remainder", panel)[:23]

print("single-block candidate scan")
for rep in sorted(pm.candidate_scan(panel, candidates, cal),
                  key=lambda r: r.delta, reverse=True):
    print(f"  {rep.block_id:>10s}  N={rep.n_actors:<3d} delta={rep.delta:+.4f} "
          f"W={rep.wins}/{rep.n_windows}")
print()

candidates.pop("arbitrary")
lowo = pm.lowo_block_selection(panel, candidates, cal)
print("leave-one-window-out selection")
for year, selected in lowo.selections.items():
    print(f"  {year}: {', '.join(selected) if selected else '(none)'}")
print(f"  LOWO delta {lowo.lowo_delta:+.4f} vs "
      f"contaminated {lowo.contaminated_delta:+.4f}")
print()

freeze = pm.held_out_freeze(panel, candidates,
                            phase_a_years=range(2010, 2015),
                            phase_b_years=range(2015, 2025))
print("held-out freeze (selection on 2010-2014, evaluation on 2015-2024)")
for rep in freeze.phase_a_reports:
    mark = "*" if rep.block_id in freeze.selected else " "
    print(f" {mark} {rep.block_id:>10s} phase-A delta={rep.delta:+.4f} "
          f"W={rep.wins}/{rep.n_windows}")
print(f"  frozen blocks: {freeze.selected}")
print(f"  phase-B delta {freeze.phase_b_delta:+.4f} "
      f"({freeze.phase_b_wins}/{freeze.phase_b_windows} windows)")
print()

variants = [
    pm.PartitionVariant("move_two", moves=(
        (partition.members("div", panel)[0], "remainder"),
        (partition.members("tech", panel)[0], "div"))),
    pm.PartitionVariant("no_tech_local", demote_local=("tech",)),
    pm.PartitionVariant("drop_div_actors",
                        drop_actors=tuple(partition.members("div", panel))),
]
print("partition perturbations")
for rep in pm.perturbation_suite(panel, partition, variants, cal):
    print(f"  {rep.name:>16s} delta={rep.delta:+.4f} W={rep.wins}/{rep.n_windows}")
