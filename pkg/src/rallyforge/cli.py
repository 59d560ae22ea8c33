"""rallyforge command line interface.

Subcommands:
  gen-data        generate a synthetic clip database
  stats           per-player shot statistics of a database
  fit-trajectory  fit ball flights between contact pairs (JSONL in/out)
  build-model     fit and save a player behavior model
  inspect-model   dump model supports and density grids (TSV + PNG)
  simulate        batch point simulation with logs, summary, heatmaps
  serve           interactive session service (TCP, optional browser bridge)

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .behavior import (
    DescriptorConfig,
    InsufficientData,
    fit_models,
    load_model,
    save_model,
)
from .clipdb import ClipDBError, load_db, save_db
from .config import ConfigError, EngineConfig, default_config_dict, load_config
from .engine import NoServeClips, run_batch, settings_from_config
from .physics import NoFeasibleTrajectory, fit_trajectory
from .reports import (
    heatmap_grid,
    player_heatmaps,
    rally_length_rows,
    render_heatmap_png,
    summarize_logs,
    write_heatmap_tsv,
    write_stats_tsv,
    write_summary_tsv,
)
from .shots import ShotType
from .synth import ArchetypeSpec, GenerationError, generate_synthetic_db

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rallyforge", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"rallyforge {__version__}")
    p.add_argument("--config", help="engine config JSON "
                   "(falls back to $RALLYFORGE_CONFIG, then defaults)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic clip database")
    g.add_argument("--out", required=True, help="output database path (.jsonl)")
    g.add_argument("--points", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--players", default="ana,bo",
                   help="comma-separated player ids (default archetypes)")
    g.add_argument("--archetypes", help="JSON file: {player: ArchetypeSpec fields}")

    s = sub.add_parser("stats", help="database statistics table")
    s.add_argument("--db", required=True)
    s.add_argument("--out", help="write TSV here instead of stdout")

    f = sub.add_parser("fit-trajectory",
                       help="fit flights for contact pairs; one JSON record "
                            "per line: {t_a, pos_a, t_b, pos_b, volley?}")
    f.add_argument("--db", help="database supplying court/flight parameters")
    f.add_argument("--in", dest="infile", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--sample-dt", type=float, default=0.02,
                   help="output trajectory sample step (s)")

    b = sub.add_parser("build-model", help="fit and save a behavior model")
    b.add_argument("--db", required=True)
    b.add_argument("--player", required=True)
    b.add_argument("--opponent", help="restrict training to one matchup")
    b.add_argument("--opponent-handedness", choices=("right", "left"),
                   help="pool all opponents of one handedness")
    b.add_argument("--out", required=True)

    i = sub.add_parser("inspect-model",
                       help="dump supports and per-cell density grids")
    i.add_argument("--model", required=True)
    i.add_argument("--out", required=True, help="output directory")
    i.add_argument("--top", type=int, default=4,
                   help="density grids for the N most populated cells")
    i.add_argument("--no-figures", action="store_true")

    m = sub.add_parser("simulate", help="batch point simulation")
    m.add_argument("--db", required=True)
    m.add_argument("--players", required=True, help="server,returner ids")
    m.add_argument("--model", action="append", default=[],
                   help="model file (repeatable); fit on load when omitted")
    m.add_argument("--general", action="store_true",
                   help="fit-on-load pools all opponents instead of the matchup")
    m.add_argument("--points", type=int, default=20)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--no-figures", action="store_true")

    v = sub.add_parser("serve", help="run the interactive session service")
    v.add_argument("--db", required=True)
    v.add_argument("--model", action="append", default=[])
    v.add_argument("--bind", default="127.0.0.1:7361", help="host:port (TCP)")
    v.add_argument("--ws-bind", help="optional host:port WebSocket bridge "
                                     "for browser clients")

    d = sub.add_parser("print-config", help="print the full default config")
    return p


def _parse_players(arg: str) -> tuple[str, str]:
    parts = [s.strip() for s in arg.split(",") if s.strip()]
    if len(parts) != 2:
        raise ConfigError("--players must name exactly two ids: a,b")
    return parts[0], parts[1]


def _load_archetypes(path: str | None, players: tuple[str, ...]) -> dict:
    if path is None:
        return {p: ArchetypeSpec() for p in players}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not doc:
        raise ConfigError("archetypes file must map player ids to objects")
    valid = {f.name for f in dataclasses.fields(ArchetypeSpec)}
    out = {}
    for pid, fields in doc.items():
        unknown = set(fields) - valid
        if unknown:
            raise ConfigError(f"unknown archetype key(s) for {pid!r}: "
                              f"{', '.join(sorted(unknown))}")
        for key in ("shot_speed_mean", "shot_speed_std"):
            if key in fields:
                fields[key] = {ShotType(k): float(v)
                               for k, v in fields[key].items()}
        try:
            out[pid] = ArchetypeSpec(**fields)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid archetype for {pid!r}: {e}") from e
    return out


def _models_for(db, players, model_paths, general, cfg: EngineConfig):
    desc_cfg = DescriptorConfig(velocity_bins=cfg.bins.n_bins, v_max=cfg.bins.v_max)
    models = {}
    for path in model_paths:
        model = load_model(path)
        models[model.player_id] = model
    for a in players:
        if a in models:
            continue
        others = [p for p in players if p != a]
        opponent = None if general or len(others) != 1 else others[0]
        models[a] = fit_models(db, a, opponent=opponent, config=desc_cfg,
                               velocity_bw_grid=cfg.kde.velocity_bandwidths,
                               position_bw_grid=cfg.kde.position_bandwidths)
    return models


# Subcommand bodies ------------------------------------------------------------

def cmd_gen_data(args, cfg: EngineConfig) -> int:
    players = tuple(s.strip() for s in args.players.split(",") if s.strip())
    if len(players) < 2:
        raise ConfigError("gen-data needs at least two player ids")
    archetypes = _load_archetypes(args.archetypes, players)
    missing = set(players) - set(archetypes)
    if missing:
        raise ConfigError(f"archetypes file lacks: {', '.join(sorted(missing))}")
    db = generate_synthetic_db({p: archetypes[p] for p in players},
                               args.points, args.seed,
                               court=cfg.court, flight=cfg.flight)
    save_db(db, args.out)
    print(f"wrote {len(db)} clips for {len(players)} players to {args.out}")
    return EXIT_OK


def cmd_stats(args, cfg: EngineConfig) -> int:
    db = load_db(args.db)
    text = write_stats_tsv(db.stats_rows(), args.out)
    if args.out:
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_fit_trajectory(args, cfg: EngineConfig) -> int:
    if args.db:
        db = load_db(args.db)
        court, flight = db.court, db.flight
    else:
        court, flight = cfg.court, cfg.flight
    n_ok = n_fail = 0
    with open(args.infile, "r", encoding="utf-8") as fin, \
            open(args.out, "w", encoding="utf-8") as fout:
        for lineno, line in enumerate(fin, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                traj = fit_trajectory(float(rec["t_a"]), rec["pos_a"],
                                      float(rec["t_b"]), rec["pos_b"],
                                      flight, court, cfg.grid,
                                      volley=bool(rec.get("volley", False)))
            except NoFeasibleTrajectory as e:
                n_fail += 1
                fout.write(json.dumps({
                    "line": lineno, "error": "no_feasible_trajectory",
                    "best_residual": e.best_residual}) + "\n")
                continue
            ts = np.arange(traj.times[0], traj.end_time, args.sample_dt)
            samples = np.column_stack([ts, traj.positions_at(ts)])
            out = {
                "line": lineno,
                "launch": {
                    "origin": list(traj.launch.origin),
                    "direction": list(traj.launch.direction),
                    "v_h": traj.launch.v_h, "v_z": traj.launch.v_z,
                    "v_spin": traj.launch.v_spin,
                    "spin": traj.launch.spin_kind.value,
                },
                "residual": traj.fit_residual,
                "bounce_time": traj.bounce_time,
                "bounce": list(traj.bounce_pos) if traj.bounce_pos else None,
                "bounce_is_virtual": traj.bounce_is_virtual,
                "net_clearance": traj.net_clearance,
                "end_time": traj.end_time,
                "end": traj.end_pos.tolist(),
                "samples": [[round(v, 5) for v in row] for row in samples],
            }
            fout.write(json.dumps(out) + "\n")
            n_ok += 1
    print(f"fitted {n_ok} trajectories ({n_fail} infeasible) -> {args.out}")
    return EXIT_OK


def cmd_build_model(args, cfg: EngineConfig) -> int:
    db = load_db(args.db)
    desc_cfg = DescriptorConfig(velocity_bins=cfg.bins.n_bins, v_max=cfg.bins.v_max)
    model = fit_models(db, args.player, opponent=args.opponent,
                       opponent_handedness=args.opponent_handedness,
                       config=desc_cfg,
                       velocity_bw_grid=cfg.kde.velocity_bandwidths,
                       position_bw_grid=cfg.kde.position_bandwidths)
    save_model(model, args.out)
    print(f"model for {args.player!r}: {len(model)} clips, "
          f"bandwidths v={model.velocity_bw} place={model.placement_bw} "
          f"recover={model.recovery_bw} -> {args.out}")
    return EXIT_OK


def cmd_inspect_model(args, cfg: EngineConfig) -> int:
    model = load_model(args.model)
    os.makedirs(args.out, exist_ok=True)

    cells_path = os.path.join(args.out, "cells.tsv")
    cell_rows: dict[tuple, list[int]] = {}
    for i, row in enumerate(model.cells):
        cell_rows.setdefault(tuple(int(v) for v in row), []).append(i)
    with open(cells_path, "w", encoding="utf-8") as f:
        f.write("player\topponent\tball_start\tball_bounce\tvelocity\tclips\t"
                + "\t".join(st.value for st in ShotType) + "\n")
        for key, rows in sorted(cell_rows.items(),
                                key=lambda kv: (-len(kv[1]), kv[0])):
            counts = {st: 0 for st in ShotType}
            for r in rows:
                counts[list(ShotType)[model.shot[r]]] += 1
            f.write("\t".join(str(v) for v in key) + f"\t{len(rows)}\t"
                    + "\t".join(str(counts[st]) for st in ShotType) + "\n")

    supports_path = os.path.join(args.out, "supports.tsv")
    with open(supports_path, "w", encoding="utf-8") as f:
        f.write("clip_id\tcell\tshot\tv_b\tplacement_x\tplacement_y\t"
                "recovery_x\trecovery_y\tapproach\n")
        for i in range(len(model)):
            cell = ",".join(str(int(v)) for v in model.cells[i])
            f.write(f"{int(model.clip_ids[i])}\t{cell}\t"
                    f"{list(ShotType)[model.shot[i]].value}\t"
                    f"{model.v_b[i]:.4f}\t"
                    f"{model.placement[i][0]:.4f}\t{model.placement[i][1]:.4f}\t"
                    f"{model.recovery[i][0]:.4f}\t{model.recovery[i][1]:.4f}\t"
                    f"{int(model.approach[i])}\n")

    from .court import CourtSpec
    court = cfg.court if isinstance(cfg.court, CourtSpec) else CourtSpec()
    top = sorted(cell_rows.items(), key=lambda kv: (-len(kv[1]), kv[0]))[:args.top]
    for key, rows in top:
        tag = "-".join(str(v) for v in key)
        for kind, pts, bw in (("placement", model.placement[rows], model.placement_bw),
                              ("recovery", model.recovery[rows], model.recovery_bw)):
            grid = heatmap_grid(pts, court, bandwidth=bw,
                                meta={"cell": tag, "kind": kind,
                                      "player": model.player_id})
            base = os.path.join(args.out, f"{kind}_cell_{tag}")
            write_heatmap_tsv(grid, base + ".tsv")
            if not args.no_figures:
                render_heatmap_png(grid, court, base + ".png",
                                   title=f"{model.player_id} {kind} cell {tag}",
                                   points=pts,
                                   cmap="Reds" if kind == "placement" else "Blues")
    print(f"wrote {cells_path}, {supports_path}, and {len(top)} cell grids")
    return EXIT_OK


def cmd_simulate(args, cfg: EngineConfig) -> int:
    db = load_db(args.db)
    players = _parse_players(args.players)
    for p in players:
        if p not in db.players:
            raise ClipDBError(f"player {p!r} not present in the database")
    models = _models_for(db, players, args.model, args.general, cfg)
    settings = settings_from_config(cfg)
    logs = run_batch(db, models, players, args.points, args.seed, settings)

    os.makedirs(args.out, exist_ok=True)
    rallies_path = os.path.join(args.out, "rallies.jsonl")
    with open(rallies_path, "w", encoding="utf-8") as f:
        for i, log in enumerate(logs):
            for ev in log.events:
                f.write(json.dumps({"point": i, **ev}, sort_keys=True) + "\n")

    summary = summarize_logs(logs, db.court)
    write_summary_tsv(summary, rally_length_rows(logs),
                      os.path.join(args.out, "summary.tsv"))
    artifacts = player_heatmaps(logs, db.court, args.out, list(players),
                                render=not args.no_figures)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"wrote {rallies_path}, summary.tsv, and {len(artifacts)} heatmaps "
          f"in {args.out}")
    return EXIT_OK


def cmd_serve(args, cfg: EngineConfig) -> int:
    from .service import serve_forever

    db = load_db(args.db)
    models = {}
    for path in args.model:
        model = load_model(path)
        models[model.player_id] = model
    host, _, port = args.bind.rpartition(":")
    ws = None
    if args.ws_bind:
        wh, _, wp = args.ws_bind.rpartition(":")
        ws = (wh or "127.0.0.1", int(wp))
    serve_forever(db, models, host or "127.0.0.1", int(port), cfg, ws_bind=ws)
    return EXIT_OK


def cmd_print_config(args, cfg: EngineConfig) -> int:
    print(json.dumps(default_config_dict(), indent=2, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "stats": cmd_stats,
    "fit-trajectory": cmd_fit_trajectory,
    "build-model": cmd_build_model,
    "inspect-model": cmd_inspect_model,
    "simulate": cmd_simulate,
    "serve": cmd_serve,
    "print-config": cmd_print_config,
}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ClipDBError, InsufficientData, NoServeClips, GenerationError,
            FileNotFoundError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
