"""Batch front-end: evaluations, comparisons, validation drivers, geometry.

Every run writes its artifacts plus a manifest (config hash, seed, library
versions) into the output directory; wall-clock timestamps live in a
separate .stamp file so repeated runs with the same config and seed produce
byte-identical result files.

Exit codes: 0 ok, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .architectures import ARCH_KINDS, ArchitectureSpec
from .config import RunConfig, load_config, parse_years
from .evaluation import (compare_windows, mae, mean_oos_r2,
                         moving_block_bootstrap_ci, oos_r2,
                         rolling_oos_evaluate, spearman_ic)
from .geometry import (matched_subpanel_control, random_baseline,
                       residual_bases_per_quarter, rotation_series)
from .panel import (RollingWindowSpec, load_panel, load_partition, save_panel,
                    save_partition)
from .persistence import fit_pooled_ar1_fe
from .synth import (demo_heterogeneous_config, demo_short_window_config,
                    generate_heterogeneous_panel, generate_homogeneous_panel,
                    planted_partition)
from .validation import (MixtureDeltaCache, PartitionVariant, candidate_scan,
                         held_out_freeze, lowo_block_selection, placebo_test,
                         perturbation_suite)


def _arch_spec(kind: str, cfg: RunConfig, partition=None) -> ArchitectureSpec:
    kind = kind.upper()
    if kind not in ARCH_KINDS:
        raise ValueError(f"unknown architecture {kind!r}")
    return ArchitectureSpec(kind, partition=partition, global_K=cfg.global_k,
                            local_K=cfg.local_k, half_life=cfg.ewm_half_life,
                            ridge_lambda=cfg.ridge_lambda,
                            global_ridge_lambda=cfg.global_ridge_lambda,
                            alpha_multipliers=cfg.ridge_alpha_multipliers)


def _calendar(cfg: RunConfig) -> RollingWindowSpec:
    return RollingWindowSpec(cfg.test_years, cfg.train_years)


def _write_manifest(out_dir: str, command: str, cfg: RunConfig, extra=None):
    manifest = {
        "command": command,
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "versions": {
            "panelmix": __version__,
            "numpy": np.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, f"{command}_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, f"{command}_manifest.stamp"), "w") as fh:
        fh.write(f"{time.time()}\n")


def _load_candidates(path) -> dict[str, list[str]]:
    """candidate_id,actor_id rows (header required)."""
    out: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].split(",")[:2] != ["candidate_id", "actor_id"]:
        raise ValueError("candidates file needs a candidate_id,actor_id header")
    for ln in lines[1:]:
        cand, actor = [p.strip() for p in ln.split(",")[:2]]
        out.setdefault(cand, []).append(actor)
    return out


def _load_variants(path) -> list[PartitionVariant]:
    """variant,action,subject,target rows; actions: move|demote|promote|drop."""
    rows: dict[str, dict] = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0].split(",")[:4] != ["variant", "action", "subject", "target"]:
        raise ValueError("variants file needs a variant,action,subject,target header")
    for ln in lines[1:]:
        name, action, subject, target = [p.strip() for p in ln.split(",")[:4]]
        spec = rows.setdefault(name, {"moves": [], "demote": [], "promote": [],
                                      "drop": []})
        if action == "move":
            spec["moves"].append((subject, target))
        elif action == "demote":
            spec["demote"].append(subject)
        elif action == "promote":
            spec["promote"].append(subject)
        elif action == "drop":
            spec["drop"].append(subject)
        else:
            raise ValueError(f"unknown perturbation action {action!r}")
    return [PartitionVariant(name, tuple(s["moves"]), tuple(s["demote"]),
                             tuple(s["promote"]), tuple(s["drop"]))
            for name, s in rows.items()]


def _comparison_markdown(rep, cfg: RunConfig, extra_lines=()) -> str:
    lo, hi = rep.bootstrap_ci
    lines = [
        f"# {rep.label_a} vs {rep.label_b}",
        "",
        "| architecture | R2 | delta | t | p | CI | W |",
        "|---|---|---|---|---|---|---|",
        f"| {rep.label_b} | {rep.r2_b:.4f} | — | — | — | — | — |",
        (f"| {rep.label_a} | {rep.r2_a:.4f} | {rep.delta_mean:+.4f} | {rep.dm_t:.2f} "
         f"| {rep.dm_p:.4g} | [{lo:+.4f}, {hi:+.4f}] "
         f"| {rep.sign_wins}/{rep.sign_total} |"),
        "",
        f"- sign test p = {rep.sign_p:.4g}",
        f"- effective sample size = {rep.n_eff:.1f}",
        f"- HAC t by bandwidth: "
        + ", ".join(f"{bw}: {t:.2f}" for bw, t in sorted(rep.hac_t.items())),
        f"- R2 convention: {rep.convention}; bootstrap seed = {rep.seed}",
    ]
    lines.extend(extra_lines)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_eval(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    partition = load_partition(args.partition) if args.partition else None
    spec = _arch_spec(args.arch, cfg, partition)
    cal = _calendar(cfg)
    results = rolling_oos_evaluate(panel, spec, cal)
    rows = ["test_year,r2_test_mean,r2_train_mean,mae"]
    for r in results:
        rows.append(f"{r.test_year},{oos_r2(r, 'test_mean')!r},"
                    f"{oos_r2(r, 'train_mean')!r},{mae(r)!r}")
    out = os.path.join(args.out, f"eval_{args.arch.lower()}.csv")
    with open(out, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    mean_r2 = mean_oos_r2(results)
    ics = [v for v in spearman_ic(results) if not np.isnan(v)]
    print(f"{args.arch.upper()}: mean R2 {mean_r2:+.4f}, MAE {mae(results):.4f}, "
          f"mean IC {np.mean(ics):+.3f} over {len(results)} windows -> {out}")
    if args.dump_basis:
        _dump_basis(args, cfg, panel, spec, cal)
    _write_manifest(args.out, "eval", cfg, {"arch": args.arch})
    return 0


def _dump_basis(args, cfg: RunConfig, panel, spec, cal) -> None:
    """Global basis and reduced-operator eigenvalues at the final origin."""
    from .architectures import fit_architecture
    from .evaluation import year_origins

    start, last_train, _ = year_origins(cal, cal.test_years[-1])[-1]
    fit = fit_architecture(spec, panel.window(start, last_train))
    engine = fit.global_engine
    basis = getattr(engine, "basis", None)
    if basis is None:
        print("no reduced global basis for this architecture; nothing dumped")
        return
    out = os.path.join(args.out, f"basis_{args.arch.lower()}.csv")
    with open(out, "w") as fh:
        fh.write("mode,eig_real,eig_imag,eig_abs,"
                 + ",".join(f"load_{a}" for a in panel.actor_ids) + "\n")
        for k in range(basis.K):
            ev = basis.eigvals[k]
            loads = ",".join(repr(float(v)) for v in basis.U[:, k])
            fh.write(f"{k},{ev.real!r},{ev.imag!r},{abs(ev)!r},{loads}\n")
    print(f"basis at origin {last_train} (K={basis.K}) -> {out}")


def cmd_compare(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    partition = load_partition(args.partition) if args.partition else None
    cal = _calendar(cfg)
    spec_a = _arch_spec(args.a, cfg, partition)
    spec_b = _arch_spec(args.b, cfg, partition)
    res_a = rolling_oos_evaluate(panel, spec_a, cal)
    res_b = rolling_oos_evaluate(panel, spec_b, cal)
    rep = compare_windows(res_a, res_b, label_a=args.a.upper(), label_b=args.b.upper(),
                          convention=args.convention, loss=args.loss,
                          resamples=cfg.bootstrap_resamples, level=cfg.level,
                          seed=cfg.seed, hac_bandwidths=cfg.hac_bandwidths)
    extra = []
    for bl in cfg.mbb_block_lengths:
        if bl <= rep.sign_total:
            lo, hi = moving_block_bootstrap_ci(rep.per_window_deltas, bl,
                                               cfg.bootstrap_resamples,
                                               cfg.level, cfg.seed)
            extra.append(f"- moving-block bootstrap CI (block {bl}): "
                         f"[{lo:+.4f}, {hi:+.4f}]")
    md = _comparison_markdown(rep, cfg, extra)
    out = os.path.join(args.out, f"compare_{args.a.lower()}_vs_{args.b.lower()}.md")
    with open(out, "w") as fh:
        fh.write(md)
    csv = os.path.join(args.out, f"compare_{args.a.lower()}_vs_{args.b.lower()}.csv")
    with open(csv, "w") as fh:
        fh.write("test_year,delta\n")
        for year, d in zip(cal.test_years, rep.per_window_deltas):
            fh.write(f"{year},{d!r}\n")
    print(rep.summary_line())
    print(f"-> {out}")
    _write_manifest(args.out, "compare", cfg, {"a": args.a, "b": args.b})
    return 0


def cmd_placebo(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    partition = load_partition(args.partition)
    cal = _calendar(cfg)
    template = _arch_spec("G1", cfg)
    stratify = None
    if args.stratify_blocks:
        blocks = {b.strip() for b in args.stratify_blocks.split(",")}
        stratify = {a for a, b in partition.assignment.items() if b in blocks}
    res = placebo_test(panel, partition, cal, n_perms=cfg.placebo_permutations,
                       stratify=stratify, seed=cfg.seed, template=template)
    payload = {
        "real_delta": res.real_delta,
        "per_window_real": res.per_window_real.tolist(),
        "perm_deltas": res.perm_deltas.tolist(),
        "z": res.z,
        "p": res.p,
        "seed": res.seed,
        "stratified": res.stratified,
        "template_sizes": list(map(list, res.template_sizes)),
    }
    out = os.path.join(args.out, "placebo.json")
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"placebo: real {res.real_delta:+.4f}, mean {res.perm_deltas.mean():+.4f}, "
          f"z {res.z:.2f}, p {res.p:.4g} ({len(res.perm_deltas)} permutations) -> {out}")
    _write_manifest(args.out, "placebo", cfg)
    return 0


def cmd_scan(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    candidates = _load_candidates(args.candidates)
    cal = _calendar(cfg)
    reports = candidate_scan(panel, candidates, cal, _arch_spec("G1", cfg))
    out = os.path.join(args.out, "scan.csv")
    with open(out, "w") as fh:
        fh.write("candidate,n_actors,delta,wins,n_windows\n")
        for r in sorted(reports, key=lambda r: r.delta, reverse=True):
            fh.write(f"{r.block_id},{r.n_actors},{r.delta!r},{r.wins},{r.n_windows}\n")
    for r in sorted(reports, key=lambda r: r.delta, reverse=True):
        print(f"{r.block_id:>16s}  N={r.n_actors:<4d} delta={r.delta:+.4f} "
              f"W={r.wins}/{r.n_windows}")
    _write_manifest(args.out, "scan", cfg)
    return 0


def cmd_lowo(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    candidates = _load_candidates(args.candidates)
    cal = _calendar(cfg)
    res = lowo_block_selection(panel, candidates, cal, _arch_spec("G1", cfg))
    payload = {
        "selections": {str(y): list(s) for y, s in res.selections.items()},
        "lowo_window_deltas": res.lowo_window_deltas.tolist(),
        "lowo_delta": res.lowo_delta,
        "contaminated_delta": res.contaminated_delta,
    }
    out = os.path.join(args.out, "lowo.json")
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"LOWO delta {res.lowo_delta:+.4f} vs contaminated "
          f"{res.contaminated_delta:+.4f} -> {out}")
    _write_manifest(args.out, "lowo", cfg)
    return 0


def cmd_freeze(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    candidates = _load_candidates(args.candidates)
    res = held_out_freeze(panel, candidates, parse_years(args.phase_a),
                          parse_years(args.phase_b), cfg.train_years,
                          _arch_spec("G1", cfg))
    payload = {
        "selected": list(res.selected),
        "phase_a": [
            {"candidate": r.block_id, "delta": r.delta, "wins": r.wins,
             "n_windows": r.n_windows}
            for r in res.phase_a_reports
        ],
        "phase_b_delta": res.phase_b_delta,
        "phase_b_wins": res.phase_b_wins,
        "phase_b_windows": res.phase_b_windows,
        "phase_b_per_window": res.phase_b_per_window.tolist(),
    }
    out = os.path.join(args.out, "freeze.json")
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    if res.frozen_partition is not None:
        save_partition(res.frozen_partition,
                       os.path.join(args.out, "frozen_partition.csv"))
    print(f"frozen blocks {res.selected}; phase-B delta {res.phase_b_delta:+.4f} "
          f"({res.phase_b_wins}/{res.phase_b_windows}) -> {out}")
    _write_manifest(args.out, "freeze", cfg)
    return 0


def cmd_perturb(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    partition = load_partition(args.partition)
    variants = _load_variants(args.variants) if args.variants else []
    cal = _calendar(cfg)
    reports = perturbation_suite(panel, partition, variants, cal,
                                 _arch_spec("G1", cfg))
    out = os.path.join(args.out, "perturb.csv")
    with open(out, "w") as fh:
        fh.write("variant,delta,wins,n_windows\n")
        for r in reports:
            fh.write(f"{r.name},{r.delta!r},{r.wins},{r.n_windows}\n")
    for r in reports:
        print(f"{r.name:>16s}  delta={r.delta:+.4f} W={r.wins}/{r.n_windows}")
    _write_manifest(args.out, "perturb", cfg)
    return 0


def cmd_geodesic(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    stage1 = fit_pooled_ar1_fe(panel)
    residuals = stage1.residuals(panel.values)
    bases = residual_bases_per_quarter(residuals, args.k, args.window,
                                       cfg.ewm_half_life)
    diag = rotation_series(bases)
    first_step_quarter = panel.quarters[args.window + 1]
    out = os.path.join(args.out, "geodesic.csv")
    with open(out, "w") as fh:
        fh.write("quarter,step_degrees\n")
        start = panel.column_of(first_step_quarter)
        for i, step in enumerate(diag.steps):
            fh.write(f"{panel.quarters[start + i]},{step!r}\n")
    base = random_baseline(panel.n_actors, args.k, draws=args.draws, seed=cfg.seed)
    print(f"mean rotation {diag.steps.mean():.1f} deg/quarter over "
          f"{diag.steps.size} steps (K={args.k}, window={args.window})")
    print(f"ACF(1) {diag.acf1:+.3f}, Ljung-Box p {diag.ljung_box_p:.3f}"
          if not diag.degenerate else "step series degenerate")
    print(f"random-subspace baseline {base.mean:.1f} deg "
          f"(5-95%: {base.quantiles[0.05]:.1f}..{base.quantiles[0.95]:.1f}) -> {out}")
    if args.block:
        partition = load_partition(args.block)
        for block in sorted(partition.local_blocks):
            members = partition.members(block, panel)
            ctrl = matched_subpanel_control(panel, members, draws=args.draws,
                                            K=args.k, window=args.window,
                                            seed=cfg.seed)
            print(f"block {block}: within-rotation {ctrl.block_mean_rotation:.1f} deg, "
                  f"matched-size control p = {ctrl.p:.3f}")
    _write_manifest(args.out, "geodesic", cfg)
    return 0


def _load_generator_config(path) -> dict:
    """[[layers]] / [[blocks]] arrays plus T, mapped onto the generator."""
    from .synth import BlockFactorSpec, LayerSpec

    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    layers = [LayerSpec(**body) for body in raw.get("layers", [])]
    blocks = [BlockFactorSpec(**body) for body in raw.get("blocks", [])]
    if not layers:
        raise ValueError("generator config needs at least one [[layers]] entry")
    return {"layers": layers, "blocks": blocks, "T": int(raw.get("T", 84))}


def cmd_synth(args, cfg: RunConfig) -> int:
    if args.gen_config:
        panel = generate_heterogeneous_panel(seed=cfg.seed,
                                             **_load_generator_config(args.gen_config))
    elif args.kind == "heterogeneous":
        panel = generate_heterogeneous_panel(seed=cfg.seed,
                                             **demo_heterogeneous_config())
    elif args.kind == "short-window":
        panel = generate_heterogeneous_panel(seed=cfg.seed,
                                             **demo_short_window_config())
    else:
        panel = generate_homogeneous_panel(cfg.seed, args.n, args.rho, args.t)
    panel_path = os.path.join(args.out, "panel.csv")
    save_panel(panel, panel_path)
    print(f"{panel!r} -> {panel_path}")
    if panel.provenance.get("generator") == "heterogeneous":
        try:
            part = planted_partition(panel)
        except ValueError as exc:
            print(f"planted blocks not emitted as a partition: {exc}")
        else:
            if part.local_blocks:
                part_path = os.path.join(args.out, "partition.csv")
                save_partition(part, part_path)
                print(f"planted partition {sorted(part.local_blocks)} -> {part_path}")
    _write_manifest(args.out, "synth", cfg, {"kind": args.kind})
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    partition = load_partition(args.partition) if args.partition else None
    cal = _calendar(cfg)
    baseline = args.baseline.upper()
    kinds = [k.strip().upper() for k in args.archs.split(",")]
    results = {}
    for kind in dict.fromkeys([baseline] + kinds):
        results[kind] = rolling_oos_evaluate(panel, _arch_spec(kind, cfg, partition), cal)
    base_res = results[baseline]
    lines = [
        f"# Architecture comparison vs {baseline}",
        "",
        "| architecture | R2 | delta | t | p | CI | W |",
        "|---|---|---|---|---|---|---|",
        f"| {baseline} | {mean_oos_r2(base_res):.4f} | — | — | — | — | — |",
    ]
    for kind in kinds:
        if kind == baseline:
            continue
        rep = compare_windows(results[kind], base_res, label_a=kind,
                              label_b=baseline,
                              resamples=cfg.bootstrap_resamples,
                              level=cfg.level, seed=cfg.seed,
                              hac_bandwidths=cfg.hac_bandwidths)
        lo, hi = rep.bootstrap_ci
        lines.append(
            f"| {kind} | {rep.r2_a:.4f} | {rep.delta_mean:+.4f} | {rep.dm_t:.2f} "
            f"| {rep.dm_p:.4g} | [{lo:+.4f}, {hi:+.4f}] "
            f"| {rep.sign_wins}/{rep.sign_total} |")
    out = os.path.join(args.out, "report.md")
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"-> {out}")
    _write_manifest(args.out, "report", cfg)
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    panel = load_panel(args.panel)
    partition = load_partition(args.partition)
    train_grid = [int(v) for v in args.t_grid.split(",")]
    rank_grid = [int(v) for v in args.k_grid.split(",")]
    rows = []
    for ty in train_grid:
        cal = RollingWindowSpec(cfg.test_years, ty)
        try:
            cal.validate_against(panel)
        except ValueError:
            rows.append((ty, {k: None for k in rank_grid}))
            continue
        cells = {}
        for k in rank_grid:
            template = ArchitectureSpec(
                "G1", global_K=cfg.global_k, local_K=k,
                half_life=cfg.ewm_half_life, ridge_lambda=cfg.ridge_lambda,
                global_ridge_lambda=cfg.global_ridge_lambda,
                alpha_multipliers=cfg.ridge_alpha_multipliers)
            cache = MixtureDeltaCache(panel, cal, template)
            delta, per_window = cache.delta(partition)
            cells[k] = (delta, int(np.sum(per_window > 0)), per_window.size)
        rows.append((ty, cells))
    out = os.path.join(args.out, "sweep.csv")
    with open(out, "w") as fh:
        fh.write("train_years,local_k,delta,wins,n_windows\n")
        for ty, cells in rows:
            for k, cell in cells.items():
                if cell is None:
                    fh.write(f"{ty},{k},,,\n")
                else:
                    fh.write(f"{ty},{k},{cell[0]!r},{cell[1]},{cell[2]}\n")
    header = "| T (yr) | " + " | ".join(f"K_b={k}" for k in rank_grid) + " |"
    print(header)
    print("|" + "---|" * (len(rank_grid) + 1))
    for ty, cells in rows:
        vals = []
        for k in rank_grid:
            cell = cells.get(k)
            vals.append("infeasible" if cell is None
                        else f"{cell[0]:+.4f} ({cell[1]}/{cell[2]})")
        print(f"| {ty} | " + " | ".join(vals) + " |")
    print(f"-> {out}")
    _write_manifest(args.out, "sweep", cfg)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common_options(parser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="TOML run configuration")
    parser.add_argument("--out", default=(argparse.SUPPRESS if suppress else "."),
                        help="output directory")
    parser.add_argument("--seed", type=int, default=d, help="master seed override")
    parser.add_argument("--train-years", type=int, dest="train_years_opt",
                        default=d, help="training window length override")
    parser.add_argument("--test-years", dest="test_years_opt", default=d,
                        help="test years, e.g. 2015..2024")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelmix",
        description="Two-stage heterogeneous panel forecasting toolkit")
    _common_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _common_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, **arguments):
        p = sub.add_parser(name, parents=[common])
        for flag, kw in arguments.items():
            p.add_argument(flag, **kw)
        p.set_defaults(fn=fn)
        return p

    add("eval", cmd_eval,
        **{"--arch": dict(required=True), "--panel": dict(required=True),
           "--partition": dict(default=None),
           "--dump-basis": dict(action="store_true",
                                help="write the final global basis and its "
                                     "eigenvalues to CSV")})
    add("compare", cmd_compare,
        **{"--a": dict(required=True), "--b": dict(required=True),
           "--panel": dict(required=True), "--partition": dict(default=None),
           "--convention": dict(default="test_mean",
                                choices=["test_mean", "train_mean"]),
           "--loss": dict(default="window_r2",
                          choices=["window_r2", "squared_error"])})
    add("placebo", cmd_placebo,
        **{"--panel": dict(required=True), "--partition": dict(required=True),
           "--stratify-blocks": dict(default=None)})
    add("scan", cmd_scan,
        **{"--panel": dict(required=True), "--candidates": dict(required=True)})
    add("lowo", cmd_lowo,
        **{"--panel": dict(required=True), "--candidates": dict(required=True)})
    add("freeze", cmd_freeze,
        **{"--panel": dict(required=True), "--candidates": dict(required=True),
           "--phase-a": dict(required=True), "--phase-b": dict(required=True)})
    add("perturb", cmd_perturb,
        **{"--panel": dict(required=True), "--partition": dict(required=True),
           "--variants": dict(default=None)})
    add("geodesic", cmd_geodesic,
        **{"--panel": dict(required=True), "--k": dict(type=int, default=4),
           "--window": dict(type=int, default=20),
           "--draws": dict(type=int, default=200),
           "--block": dict(default=None, help="partition for per-block controls")})
    add("synth", cmd_synth,
        **{"--kind": dict(default="heterogeneous",
                          choices=["heterogeneous", "homogeneous", "short-window"]),
           "--n": dict(type=int, default=93), "--rho": dict(type=float, default=0.6),
           "--t": dict(type=int, default=84),
           "--gen-config": dict(default=None,
                                help="TOML generator spec with [[layers]] and "
                                     "[[blocks]] tables (overrides --kind)")})
    add("report", cmd_report,
        **{"--panel": dict(required=True), "--partition": dict(default=None),
           "--archs": dict(default="g0,ba,g1,ens,s1,ba_m2,m1,m2"),
           "--baseline": dict(default="g1")})
    add("sweep", cmd_sweep,
        **{"--panel": dict(required=True), "--partition": dict(required=True),
           "--t-grid": dict(default="2,3,5"),
           "--k-grid": dict(default="2,3,4,6")})
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.train_years_opt is not None:
            cfg.train_years = args.train_years_opt
        if args.test_years_opt is not None:
            cfg.test_years = parse_years(args.test_years_opt)
        os.makedirs(args.out, exist_ok=True)
        return args.fn(args, cfg)
    except (ValueError, OSError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
