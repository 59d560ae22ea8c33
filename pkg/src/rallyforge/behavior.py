"""Player behavior models.

The point state at a shot-cycle start is discretized into five features:
the hitter's and opponent's court regions at the (estimated) contact, the
incoming ball's start and bounce regions, and the binned speed the hitter
needs to reach the contact.  Conditioned on that cell, shot selection is
sampled from a categorical over shot types plus kernel density estimates
over shot speed (1D) and placement (2D); the recovery target is the mode
of a 2D KDE conditioned additionally on the placement region and on the
approach-the-net decision (a Bernoulli fit from matching clips).

Samples with probability density below one tenth of the cell's peak
density are rejected to emphasize prominent behaviors.  When a cell has
no data, the lookup pools clips over cells that differ in progressively
more features, relaxing the least decision-relevant features first:
reach speed, then incoming bounce region, then incoming start region,
then the opponent's region.  The hitter's own region is never relaxed
inside the ladder; an extended fallback (documented on the sampling
functions) guarantees totality whenever the player has any clip at all.

All KDEs share one bandwidth per distribution kind, selected by maximizing
the leave-one-out log-likelihood over a fixed candidate grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .clipdb import ClipDatabase, ShotCycleClip
from .court import BinConfig, CourtSpec, Depth, region_cell, region_of, velocity_bin
from .physics import BallTrajectory, NoIntersection, intercept
from .shots import SHOT_CODE, SHOT_TYPE_ORDER, ShotType


class BehaviorError(Exception):
    pass


class InsufficientData(BehaviorError):
    pass


class NoData(BehaviorError):
    """No clips match even after full ladder relaxation."""


FEATURES = ("player", "opponent", "ball_start", "ball_bounce", "velocity")
# Relaxation priority, least important first (the player's own region is
# not relaxable).
RELAX_ORDER = ("velocity", "ball_bounce", "ball_start", "opponent")
_FEATURE_COL = {name: i for i, name in enumerate(FEATURES)}

VELOCITY_BW_GRID = (0.5, 1.0, 2.0, 4.0)
POSITION_BW_GRID = (0.25, 0.5, 0.75, 1.0, 1.5)


@dataclass(frozen=True)
class DescriptorConfig:
    velocity_bins: int = 5
    v_max: float = 8.0

    @property
    def bin_config(self) -> BinConfig:
        return BinConfig(v_max=self.v_max, n_bins=self.velocity_bins)


@dataclass(frozen=True)
class PointStateDescriptor:
    """Discretized point state; region cells are side-free 0..5 indexes."""

    player: int
    opponent: int
    ball_start: int
    ball_bounce: int
    velocity: int

    @property
    def key(self) -> tuple[int, int, int, int, int]:
        return (self.player, self.opponent, self.ball_start,
                self.ball_bounce, self.velocity)


@dataclass(frozen=True)
class RecoveryDescriptor:
    base: PointStateDescriptor
    placement_cell: int

    @property
    def key(self) -> tuple[int, ...]:
        return self.base.key + (self.placement_cell,)


@dataclass
class ContactEstimate:
    time: float
    position: np.ndarray       # (3,)
    reach_speed: float


def build_descriptor(traj: BallTrajectory, player_pos, opponent_recovery,
                     now: float, court: CourtSpec,
                     config: DescriptorConfig | None = None
                     ) -> tuple[PointStateDescriptor, ContactEstimate]:
    """Descriptor for the player about to respond to the incoming flight.

    Everything is expected in the responder-on-near-side frame.  The
    contact is estimated where the flight crosses the net-parallel plane
    through the player; the opponent's position at that moment is taken
    to be their current recovery target.

    Raises NoIntersection when the flight never reaches the player's
    plane (the caller treats that as an unreachable ball).
    """
    config = config or DescriptorConfig()
    player_pos = np.asarray(player_pos, dtype=float)
    opponent_recovery = np.asarray(opponent_recovery, dtype=float)
    t_c, contact = intercept(traj, float(player_pos[1]))
    dt = t_c - now
    if dt <= 0:
        reach = math.inf
    else:
        reach = math.hypot(contact[0] - player_pos[0], contact[1] - player_pos[1]) / dt
    if traj.bounce_pos is None:
        raise NoIntersection("incoming flight has no bounce annotation")
    desc = PointStateDescriptor(
        player=region_cell(contact[0], player_pos[1], court),
        opponent=region_cell(opponent_recovery[0], opponent_recovery[1], court),
        ball_start=region_cell(traj.launch.origin[0], traj.launch.origin[1], court),
        ball_bounce=region_cell(traj.bounce_pos[0], traj.bounce_pos[1], court),
        velocity=velocity_bin(reach, config.bin_config),
    )
    return desc, ContactEstimate(time=t_c, position=contact, reach_speed=reach)


def descriptor_for_clip(clip: ShotCycleClip, court: CourtSpec,
                        config: DescriptorConfig) -> PointStateDescriptor | None:
    """Training-time descriptor: uses the known positions at ball contact."""
    if (clip.t_c is None or clip.incoming_contact is None
            or clip.incoming_bounce is None):
        return None
    contact_xy = clip.trace_at(clip.t_c)
    reach = float(np.hypot(*(contact_xy - clip.start_pos))) / clip.t_c
    opp = clip.opponent_at(clip.t_c)
    return PointStateDescriptor(
        player=region_cell(contact_xy[0], contact_xy[1], court),
        opponent=region_cell(opp[0], opp[1], court),
        ball_start=region_cell(clip.incoming_contact[0], clip.incoming_contact[1], court),
        ball_bounce=region_cell(clip.incoming_bounce[0], clip.incoming_bounce[1], court),
        velocity=velocity_bin(reach, config.bin_config),
    )


# Kernel density estimation ---------------------------------------------------

def kde_pdf(points, support, bandwidth: float) -> np.ndarray:
    """Gaussian KDE density of `points` given `support` rows."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    support = np.atleast_2d(np.asarray(support, dtype=float))
    if support.shape[0] == 0:
        raise ValueError("empty KDE support")
    d = support.shape[1]
    diff = points[:, None, :] - support[None, :, :]
    sq = np.sum(diff * diff, axis=2) / (bandwidth * bandwidth)
    norm = (2.0 * math.pi) ** (d / 2) * bandwidth ** d
    return np.exp(-0.5 * sq).sum(axis=1) / (support.shape[0] * norm)


def loo_bandwidth(support, candidates) -> float:
    """Bandwidth maximizing the leave-one-out log-likelihood.

    Degenerate supports (fewer than two points) take the largest
    candidate: with no evidence, smooth the most.
    """
    support = np.atleast_2d(np.asarray(support, dtype=float))
    n, d = support.shape
    if n < 2:
        return float(max(candidates))
    diff = support[:, None, :] - support[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    np.fill_diagonal(sq, np.inf)   # leave one out
    best_bw = float(candidates[0])
    best_ll = -math.inf
    for bw in candidates:
        norm = (2.0 * math.pi) ** (d / 2) * bw ** d
        dens = np.exp(-0.5 * sq / (bw * bw)).sum(axis=1) / ((n - 1) * norm)
        ll = float(np.sum(np.log(np.maximum(dens, 1e-300))))
        if ll > best_ll + 1e-12:
            best_ll = ll
            best_bw = float(bw)
    return best_bw


def kde_peak(support, bandwidth: float) -> float:
    """Peak density estimated as the max density over the support points."""
    return float(np.max(kde_pdf(support, support, bandwidth)))


def kde_mode(support, bandwidth: float) -> np.ndarray:
    """Support point of maximum density (lowest index wins ties)."""
    support = np.atleast_2d(np.asarray(support, dtype=float))
    dens = kde_pdf(support, support, bandwidth)
    return support[int(np.argmax(dens))].copy()


def kde_sample(support, bandwidth: float, rng: np.random.Generator,
               peak_fraction: float = 0.1, max_attempts: int = 64) -> np.ndarray:
    """Draw from the KDE, rejecting low-density samples.

    Samples whose density falls below peak_fraction of the peak density
    are rejected; after max_attempts rejections the mode is returned.
    """
    support = np.atleast_2d(np.asarray(support, dtype=float))
    n, d = support.shape
    threshold = peak_fraction * kde_peak(support, bandwidth)
    for _ in range(max_attempts):
        idx = int(rng.integers(n))
        x = support[idx] + rng.normal(size=d) * bandwidth
        if kde_pdf(x[None, :], support, bandwidth)[0] >= threshold:
            return x
    return kde_mode(support, bandwidth)


# Conditional model -----------------------------------------------------------

@dataclass
class ConditionalModel:
    """Per-player nonparametric behavior model (supports + bandwidths)."""

    player_id: str
    opponent_filter: str | None
    handedness_filter: str | None
    config: DescriptorConfig
    cells: np.ndarray           # (n, 5) int descriptor features per clip
    shot: np.ndarray            # (n,) shot type codes
    v_b: np.ndarray             # (n,)
    placement: np.ndarray       # (n, 2)
    recovery: np.ndarray        # (n, 2)
    approach: np.ndarray        # (n,) bool: recovered to a front region
    placement_cell: np.ndarray  # (n,) region cell of the clip's placement
    clip_ids: np.ndarray        # (n,)
    velocity_bw: float
    placement_bw: float
    recovery_bw: float
    _exact: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._exact = {}
        for i, row in enumerate(self.cells):
            self._exact.setdefault(tuple(int(v) for v in row), []).append(i)
        self._exact = {k: np.asarray(v) for k, v in self._exact.items()}

    def __len__(self) -> int:
        return len(self.shot)

    # Lookup ------------------------------------------------------------------

    def lookup(self, desc: PointStateDescriptor,
               placement_cell: int | None = None
               ) -> tuple[np.ndarray, int, tuple[str, ...]]:
        """Rows for a cell, relaxing features per the ladder when empty.

        With placement_cell given, the lookup runs on the recovery
        descriptor (placement region must also match; it is not part of
        the relaxation ladder).  Returns (rows, k, relaxed_features).
        Raises NoData when even k=4 finds nothing.
        """
        key = np.asarray(desc.key)
        base_mask = np.ones(len(self), dtype=bool)
        if placement_cell is not None:
            base_mask = self.placement_cell == placement_cell
        exact = self._exact.get(desc.key)
        if placement_cell is None:
            if exact is not None:
                return exact, 0, ()
        else:
            mask0 = base_mask & np.all(self.cells == key, axis=1)
            rows = np.nonzero(mask0)[0]
            if len(rows):
                return rows, 0, ()
        for k in range(1, len(RELAX_ORDER) + 1):
            for subset in combinations(RELAX_ORDER, k):
                mask = base_mask.copy()
                for name in FEATURES:
                    if name in subset:
                        continue
                    col = _FEATURE_COL[name]
                    mask &= self.cells[:, col] == key[col]
                rows = np.nonzero(mask)[0]
                if len(rows):
                    return rows, k, subset
        raise NoData(f"no clips match {desc.key} at any relaxation level")

    def _lookup_total(self, desc: PointStateDescriptor,
                      placement_cell: int | None
                      ) -> tuple[np.ndarray, int, tuple[str, ...]]:
        """The ladder plus the extended fallback that guarantees rows.

        Extended levels: k=5 drops the placement-region condition (for
        recovery lookups), k=6 drops the player's own region and pools
        every clip of the player.
        """
        try:
            return self.lookup(desc, placement_cell)
        except NoData:
            pass
        if placement_cell is not None:
            try:
                rows, k, relaxed = self.lookup(desc, None)
                return rows, 5, relaxed + ("placement",)
            except NoData:
                pass
        if len(self) == 0:
            raise InsufficientData(f"model for {self.player_id} has no clips")
        return np.arange(len(self)), 6, RELAX_ORDER + ("placement", "player")

    # Distributions -------------------------------------------------------------

    def shot_type_probs(self, rows: np.ndarray) -> dict[ShotType, float]:
        codes, counts = np.unique(self.shot[rows], return_counts=True)
        total = counts.sum()
        return {SHOT_TYPE_ORDER[int(c)]: float(cnt) / float(total)
                for c, cnt in zip(codes, counts)}

    def approach_probability(self, rows: np.ndarray) -> float:
        return float(np.mean(self.approach[rows]))


@dataclass
class ShotSelection:
    shot_type: ShotType
    velocity: float
    placement: np.ndarray
    relaxation: int
    relaxed: tuple[str, ...]


@dataclass
class BehaviorDecision:
    """The full decision tuple for one shot cycle."""

    shot_type: ShotType
    shot_velocity: float            # ground speed, contact to bounce
    placement: np.ndarray           # (2,) may be outside the court: error shot
    recovery: np.ndarray            # (2,)
    approach_net: bool

    def mirrored(self) -> "BehaviorDecision":
        return BehaviorDecision(
            shot_type=self.shot_type,
            shot_velocity=self.shot_velocity,
            placement=-np.asarray(self.placement),
            recovery=-np.asarray(self.recovery),
            approach_net=self.approach_net,
        )


@dataclass
class RecoveryChoice:
    approach: bool
    position: np.ndarray
    relaxation: int
    relaxed: tuple[str, ...]


def fit_models(db: ClipDatabase, player_id: str,
               opponent: str | None = None,
               opponent_handedness: str | None = None,
               config: DescriptorConfig | None = None,
               velocity_bw_grid=VELOCITY_BW_GRID,
               position_bw_grid=POSITION_BW_GRID) -> ConditionalModel:
    """Fit the conditional behavior model for one player.

    ``opponent`` restricts the training clips to one matchup;
    ``opponent_handedness`` instead pools all opponents of one
    handedness (for matchups never seen in the data).  With neither,
    every clip of the player is used.

    Raises InsufficientData when no usable clips remain.
    """
    config = config or DescriptorConfig()
    rows = []
    for clip in db.for_player(player_id):
        if not clip.outcome.has_contact or clip.placement is None:
            continue
        if clip.t_b is None or clip.v_b is None:
            continue
        if opponent is not None and clip.opponent_id != opponent:
            continue
        if opponent_handedness is not None \
                and db.handedness(clip.opponent_id) != opponent_handedness:
            continue
        desc = descriptor_for_clip(clip, db.court, config)
        if desc is None:
            continue
        recovery = clip.recovery_pos
        approach = region_of(recovery[0], recovery[1], db.court).depth is Depth.FRONT
        rows.append((desc.key, SHOT_CODE[clip.shot_type], clip.v_b,
                     clip.placement, recovery, approach,
                     region_cell(clip.placement[0], clip.placement[1], db.court),
                     clip.clip_id))
    if not rows:
        raise InsufficientData(
            f"no trainable clips for {player_id!r} under the given filter")

    cells = np.array([r[0] for r in rows], dtype=int)
    v_b = np.array([r[2] for r in rows], dtype=float)
    placement = np.array([r[3] for r in rows], dtype=float)
    recovery = np.array([np.asarray(r[4], dtype=float) for r in rows])
    return ConditionalModel(
        player_id=player_id,
        opponent_filter=opponent,
        handedness_filter=opponent_handedness,
        config=config,
        cells=cells,
        shot=np.array([r[1] for r in rows], dtype=int),
        v_b=v_b,
        placement=placement,
        recovery=recovery,
        approach=np.array([r[5] for r in rows], dtype=bool),
        placement_cell=np.array([r[6] for r in rows], dtype=int),
        clip_ids=np.array([r[7] for r in rows], dtype=int),
        velocity_bw=loo_bandwidth(v_b[:, None], velocity_bw_grid),
        placement_bw=loo_bandwidth(placement, position_bw_grid),
        recovery_bw=loo_bandwidth(recovery, position_bw_grid),
    )


def sample_shot_selection(model: ConditionalModel, desc: PointStateDescriptor,
                          rng: np.random.Generator) -> ShotSelection:
    """Sample (shot type, shot speed, placement) for a point state.

    Falls back through the marginalization ladder for empty cells; as an
    extended last resort (never needed when the player's region has data)
    pools all of the player's clips.
    """
    rows, k, relaxed = model._lookup_total(desc, None)
    probs = model.shot_type_probs(rows)
    types = sorted(probs, key=lambda t: SHOT_CODE[t])
    p = np.array([probs[t] for t in types])
    shot = types[int(rng.choice(len(types), p=p / p.sum()))]
    rows_c = rows[model.shot[rows] == SHOT_CODE[shot]]
    v = float(kde_sample(model.v_b[rows_c][:, None], model.velocity_bw, rng)[0])
    v = max(v, 1.0)  # speeds are positive; KDE tails may dip below
    x_b = kde_sample(model.placement[rows_c], model.placement_bw, rng)
    return ShotSelection(shot_type=shot, velocity=v, placement=x_b,
                         relaxation=k, relaxed=relaxed)


def recovery_target(model: ConditionalModel, rdesc: RecoveryDescriptor,
                    rng: np.random.Generator) -> RecoveryChoice:
    """Approach decision plus the most likely recovery position.

    The approach decision is Bernoulli with probability equal to the
    fraction of matching clips that recovered to front regions; the
    position is the density mode over the matching stratum's support.
    """
    rows, k, relaxed = model._lookup_total(rdesc.base, rdesc.placement_cell)
    p = model.approach_probability(rows)
    approach = bool(rng.random() < p)
    stratum = rows[model.approach[rows] == approach]
    if len(stratum) == 0:   # numerically impossible given p's definition
        stratum = rows
    pos = kde_mode(model.recovery[stratum], model.recovery_bw)
    return RecoveryChoice(approach=approach, position=pos,
                          relaxation=k, relaxed=relaxed)


# Persistence -----------------------------------------------------------------

MODEL_FORMAT = "rallyforge-model"
MODEL_VERSION = 1


def save_model(model: ConditionalModel, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "player": model.player_id,
        "opponent_filter": model.opponent_filter,
        "handedness_filter": model.handedness_filter,
        "config": {"velocity_bins": model.config.velocity_bins,
                   "v_max": model.config.v_max},
        "bandwidths": {"velocity": model.velocity_bw,
                       "placement": model.placement_bw,
                       "recovery": model.recovery_bw},
        "samples": {
            "cells": model.cells.tolist(),
            "shot": model.shot.tolist(),
            "v_b": model.v_b.tolist(),
            "placement": model.placement.tolist(),
            "recovery": model.recovery.tolist(),
            "approach": model.approach.astype(int).tolist(),
            "placement_cell": model.placement_cell.tolist(),
            "clip_ids": model.clip_ids.tolist(),
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_model(path) -> ConditionalModel:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise BehaviorError("not a recognizable model file")
    s = doc["samples"]
    return ConditionalModel(
        player_id=doc["player"],
        opponent_filter=doc.get("opponent_filter"),
        handedness_filter=doc.get("handedness_filter"),
        config=DescriptorConfig(**doc["config"]),
        cells=np.asarray(s["cells"], dtype=int).reshape(-1, 5),
        shot=np.asarray(s["shot"], dtype=int),
        v_b=np.asarray(s["v_b"], dtype=float),
        placement=np.asarray(s["placement"], dtype=float).reshape(-1, 2),
        recovery=np.asarray(s["recovery"], dtype=float).reshape(-1, 2),
        approach=np.asarray(s["approach"], dtype=bool),
        placement_cell=np.asarray(s["placement_cell"], dtype=int),
        clip_ids=np.asarray(s["clip_ids"], dtype=int),
        velocity_bw=float(doc["bandwidths"]["velocity"]),
        placement_bw=float(doc["bandwidths"]["placement"]),
        recovery_bw=float(doc["bandwidths"]["recovery"]),
    )
