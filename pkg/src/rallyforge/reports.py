"""Report generation: rally summaries, heatmap grids, and figures.

Heatmaps are KDE-smoothed placement / recovery densities over the court,
written both as tab-delimited grids (with ``#``-prefixed header metadata)
and as rendered PNG figures.  All positions are normalized to the
hitting player's near-side frame, so one map reads like a broadcast
half-court diagram regardless of which end the player actually played.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .behavior import kde_pdf, loo_bandwidth  # noqa: E402
from .court import CourtSpec  # noqa: E402
from .engine import RallyLog  # noqa: E402
from .shots import ShotType  # noqa: E402


def is_cross_court(contact_x: float, placement_x: float) -> bool:
    """Diagonal shot: the lateral sign flips between contact and bounce.

    Frame-independent (a 180-degree rotation flips both signs).
    """
    return contact_x * placement_x < 0


@dataclass
class ShotRecord:
    player: str
    shot_type: ShotType
    ruling: str
    contact: np.ndarray        # hitter-near frame
    placement: np.ndarray      # hitter-near frame (opponent side is y < 0)
    recovery: np.ndarray
    velocity: float
    approach_net: bool


def extract_shots(logs: list[RallyLog]) -> list[ShotRecord]:
    records = []
    for log in logs:
        for ev in log.shot_cycles():
            if "decision" not in ev or "contact" not in ev:
                continue
            contact = np.asarray(ev["contact"][:2], dtype=float)
            side = 1.0 if contact[1] >= 0 else -1.0
            d = ev["decision"]
            records.append(ShotRecord(
                player=ev["player"],
                shot_type=ShotType(d["shot_type"]),
                ruling=ev["ruling"],
                contact=contact * side,
                placement=np.asarray(d["placement"], dtype=float) * side,
                recovery=np.asarray(d["recovery"], dtype=float) * side,
                velocity=float(d["velocity"]),
                approach_net=bool(d["approach_net"]),
            ))
    return records


def summarize_logs(logs: list[RallyLog], court: CourtSpec) -> dict:
    """Batch summary: rally lengths, endings, tendencies."""
    lengths = []
    reasons: dict[str, int] = {}
    for log in logs:
        end = log.ending
        if end is None:
            continue
        lengths.append(len(log.shot_cycles()) + 1)   # + serve
        reasons[end["reason"]] = reasons.get(end["reason"], 0) + 1

    shots = extract_shots(logs)
    gs = [s for s in shots if s.shot_type.is_groundstroke and s.ruling == "continue"]
    cross = sum(is_cross_court(s.contact[0], s.placement[0]) for s in gs)
    recoveries = [s for s in shots if not s.approach_net]
    depth = [abs(s.recovery[1]) - court.half_length for s in recoveries]

    return {
        "points": len(lengths),
        "mean_rally_shots": round(float(np.mean(lengths)), 3) if lengths else 0.0,
        "max_rally_shots": int(max(lengths)) if lengths else 0,
        "endings": dict(sorted(reasons.items())),
        "groundstrokes_in_court": len(gs),
        "cross_court_fraction": round(cross / len(gs), 4) if gs else None,
        "mean_recovery_depth_behind_baseline":
            round(float(np.mean(depth)), 3) if depth else None,
    }


def rally_length_rows(logs: list[RallyLog]) -> list[tuple[int, int]]:
    """(length, count) distribution of rally lengths, serve included."""
    counts: dict[int, int] = {}
    for log in logs:
        n = len(log.shot_cycles()) + 1
        counts[n] = counts.get(n, 0) + 1
    return sorted(counts.items())


# Heatmaps ----------------------------------------------------------------------

@dataclass
class HeatmapGrid:
    values: np.ndarray          # (ny, nx) density
    x_edges: np.ndarray
    y_edges: np.ndarray
    n_points: int
    bandwidth: float
    meta: dict

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (float(self.x_edges[0]), float(self.x_edges[-1]),
                float(self.y_edges[0]), float(self.y_edges[-1]))


def heatmap_grid(points: np.ndarray, court: CourtSpec, cell: float = 0.25,
                 margin: float = 2.0, bandwidth: float | None = None,
                 meta: dict | None = None) -> HeatmapGrid:
    """KDE-smoothed density of 2D points over the court area."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if bandwidth is None:
        bandwidth = loo_bandwidth(points, (0.25, 0.5, 0.75, 1.0, 1.5)) \
            if len(points) > 1 else 0.5
    half_w = court.doubles_width / 2 + margin
    half_l = court.half_length + margin
    x_edges = np.arange(-half_w, half_w + cell, cell)
    y_edges = np.arange(-half_l, half_l + cell, cell)
    xc = 0.5 * (x_edges[:-1] + x_edges[1:])
    yc = 0.5 * (y_edges[:-1] + y_edges[1:])
    xx, yy = np.meshgrid(xc, yc)
    if len(points) == 0:
        values = np.zeros(xx.shape)
    else:
        values = kde_pdf(np.stack([xx.ravel(), yy.ravel()], axis=1),
                         points, bandwidth).reshape(xx.shape)
    return HeatmapGrid(values=values, x_edges=x_edges, y_edges=y_edges,
                       n_points=len(points), bandwidth=float(bandwidth),
                       meta=meta or {})


def write_heatmap_tsv(grid: HeatmapGrid, path) -> None:
    """Grid as TSV: '#' metadata lines, then one row per y cell."""
    with open(path, "w", encoding="utf-8") as f:
        for k, v in sorted(grid.meta.items()):
            f.write(f"# {k}={v}\n")
        f.write(f"# n_points={grid.n_points}\n")
        f.write(f"# bandwidth={grid.bandwidth}\n")
        f.write("# x_edges=" + ",".join(f"{x:.3f}" for x in grid.x_edges) + "\n")
        f.write("# y_edges=" + ",".join(f"{y:.3f}" for y in grid.y_edges) + "\n")
        for row in grid.values:
            f.write("\t".join(f"{v:.6g}" for v in row) + "\n")


def draw_court(ax, court: CourtSpec, color: str = "0.25") -> None:
    half_w = court.singles_width / 2
    half_dw = court.doubles_width / 2
    half_l = court.half_length
    svc = court.service_line_dist
    lw = 1.2

    def line(x0, y0, x1, y1):
        ax.plot([x0, x1], [y0, y1], color=color, linewidth=lw, zorder=3)

    for sx in (-1, 1):
        line(sx * half_dw, -half_l, sx * half_dw, half_l)    # doubles sidelines
        line(sx * half_w, -half_l, sx * half_w, half_l)      # singles sidelines
        line(-half_dw, sx * half_l, half_dw, sx * half_l)    # baselines
        line(-half_w, sx * svc, half_w, sx * svc)            # service lines
    line(0.0, -svc, 0.0, svc)                                # center service line
    ax.plot([-half_dw, half_dw], [0, 0], color="k", linewidth=2.0, zorder=3)
    ax.set_aspect("equal")


def render_heatmap_png(grid: HeatmapGrid, court: CourtSpec, path,
                       title: str = "", points: np.ndarray | None = None,
                       cmap: str = "Reds") -> None:
    fig, ax = plt.subplots(figsize=(4.2, 7.2))
    ax.imshow(grid.values, origin="lower", extent=grid.extent, cmap=cmap,
              interpolation="bilinear")
    draw_court(ax, court)
    if points is not None and len(points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ax.plot(pts[:, 0], pts[:, 1], ".", color="gold", markersize=2.5,
                alpha=0.6, zorder=4)
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def player_heatmaps(logs: list[RallyLog], court: CourtSpec, out_dir,
                    players: list[str] | None = None,
                    render: bool = True) -> list[dict]:
    """Per-player placement and recovery heatmaps (TSV + PNG).

    Returns one manifest entry per written artifact.
    """
    import os

    shots = extract_shots(logs)
    if players is None:
        players = sorted({s.player for s in shots})
    written = []
    for player in players:
        mine = [s for s in shots if s.player == player]
        for kind, pts in (("placement", [s.placement for s in mine]),
                          ("recovery", [s.recovery for s in mine])):
            pts = np.asarray(pts, dtype=float).reshape(-1, 2)
            meta = {"player": player, "kind": kind}
            grid = heatmap_grid(pts, court, meta=meta)
            base = os.path.join(str(out_dir), f"{kind}_{player}")
            write_heatmap_tsv(grid, base + ".tsv")
            entry = {"player": player, "kind": kind, "n": int(len(pts)),
                     "tsv": base + ".tsv"}
            if render:
                cmap = "Reds" if kind == "placement" else "Blues"
                render_heatmap_png(grid, court, base + ".png",
                                   title=f"{player}: {kind}", points=pts,
                                   cmap=cmap)
                entry["png"] = base + ".png"
            written.append(entry)
    return written


def write_summary_tsv(summary: dict, length_rows, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("metric\tvalue\n")
        for k, v in summary.items():
            if k == "endings":
                for reason, count in v.items():
                    f.write(f"ending_{reason}\t{count}\n")
            else:
                f.write(f"{k}\t{v}\n")
        for length, count in length_rows:
            f.write(f"rally_length_{length}\t{count}\n")


def write_stats_tsv(rows: list[dict], path=None) -> str:
    """Database statistics table (one row per player) as TSV text."""
    cols = ["player"] + [st.value for st in ShotType] + ["total", "duration_min"]
    lines = ["\t".join(cols)]
    for row in rows:
        lines.append("\t".join(str(row[c]) for c in cols))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    return text
