"""Cost-based clip search with translational corrections.

Given behavior goals, the incoming ball flight, and the player's state at
the shot-cycle start, every candidate clip is scored by a weighted sum of
continuity terms (pose, root velocity), correction terms (reaction and
recovery translation magnitude ratios and direction changes, contact
height mismatch), and shot-match terms (type, speed, placement).  Shot
type mismatches are infinitely costly, so candidates are pre-filtered by
type.  A clip is reaction-feasible only if its 2D contact correction stays
under a magnitude bound and its raw reaction-correction cost stays under a
limit; when no candidate is feasible the player cannot reach the ball.

All query times are cycle-local: the incoming trajectory must be based at
t = 0 (the opponent's contact, which starts this cycle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .behavior import BehaviorDecision
from .clipdb import ClipDatabase, ShotCycleClip
from .physics import BallTrajectory
from .shots import OUTCOME_CODE, SHOT_CODE, ShotOutcome, ShotType


class SearchError(Exception):
    pass


class EmptyCandidateSet(SearchError):
    pass


class BallEndedEarly(SearchError):
    """The incoming flight is over before the clip's contact time."""


class OutcomeFilter(str, Enum):
    MUST_CONTINUE = "must_continue"
    MUST_END_NO_CONTACT = "must_end_no_contact"
    CONTACT_ANY = "contact_any"


@dataclass(frozen=True)
class CostWeights:
    pose: float = 1.0
    velo: float = 1.0
    contact: float = 0.5
    react_velo: float = 5.0
    react_dir: float = 5.0
    recover_velo: float = 3.0
    recover_dir: float = 10.0
    shot_velo: float = 1.0
    shot_place: float = 0.5


@dataclass(frozen=True)
class SearchThresholds:
    max_react_correction: float = 2.0     # |e_c2d| bound, meters
    max_recover_correction: float = 1.5   # clamp on the applied e_r, meters
    react_cost_limit: float = 10.0        # on raw C_react_velo + C_react_dir


DEGENERATE_STEP = 0.01  # below this displacement, ratio/cosine are undefined


@dataclass
class SearchQuery:
    behavior: BehaviorDecision
    incoming: BallTrajectory        # cycle-local timeline (launch at t=0)
    start_pos: np.ndarray           # (2,)
    start_pose: np.ndarray          # (14, 2), player-local frame
    start_velocity: np.ndarray      # (2,)
    outcome_filter: OutcomeFilter = OutcomeFilter.MUST_CONTINUE


@dataclass
class ClipCostBreakdown:
    c_pose: float = 0.0
    c_velo: float = 0.0
    c_contact: float = 0.0
    c_react_velo: float = 0.0
    c_react_dir: float = 0.0
    c_recover_velo: float = 0.0
    c_recover_dir: float = 0.0
    c_shot_type: float = 0.0
    c_shot_velo: float = 0.0
    c_shot_place: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "c_pose", "c_velo", "c_contact", "c_react_velo", "c_react_dir",
            "c_recover_velo", "c_recover_dir", "c_shot_type", "c_shot_velo",
            "c_shot_place", "total")}


@dataclass
class CorrectionPlan:
    e_c2d: np.ndarray               # (2,) reaction correction
    z_error: float                  # uncorrectable contact height error
    e_r_raw: np.ndarray             # (2,) recovery residual before clamping
    e_r: np.ndarray                 # (2,) applied (clamped) recovery correction
    times: np.ndarray               # clip frame times
    trace: np.ndarray               # (n, 2) corrected player positions


@dataclass
class SearchOutcome:
    status: str                     # "found" | "unreachable"
    clip: ShotCycleClip | None = None
    breakdown: ClipCostBreakdown | None = None
    plan: CorrectionPlan | None = None
    n_candidates: int = 0


# Per-player vectorized clip arrays ------------------------------------------

class PlayerClipIndex:
    """SoA arrays over one player's clips, sorted by clip id."""

    def __init__(self, db: ClipDatabase, player_id: str):
        clips = sorted(db.for_player(player_id), key=lambda c: c.clip_id)
        if not clips:
            raise EmptyCandidateSet(f"no clips for player {player_id!r}")
        self.clips = clips
        n = len(clips)
        self.ids = np.array([c.clip_id for c in clips])
        self.outcome = np.array([OUTCOME_CODE[c.outcome] for c in clips])
        self.shot = np.array([SHOT_CODE[c.shot_type] for c in clips])
        self.has_contact = np.array([c.outcome.has_contact for c in clips])
        self.t_c = np.array([c.t_c if c.t_c is not None else np.nan for c in clips])
        self.t_r = np.array([c.t_r for c in clips])
        self.contact = np.array([c.contact_pos if c.contact_pos is not None
                                 else (np.nan,) * 3 for c in clips])
        self.start = np.array([c.start_pos for c in clips])
        self.at_contact = np.array([c.trace_at(c.t_c) if c.t_c is not None
                                    else c.start_pos for c in clips])
        self.at_end = np.array([c.recovery_pos for c in clips])
        self.v0 = np.array([c.start_velocity for c in clips])
        self.pose0 = np.array([c.start_pose for c in clips])    # (n, 14, 2)
        self.v_b = np.array([c.v_b if c.v_b is not None else np.nan for c in clips])
        self.placement = np.array([c.placement if c.placement is not None
                                   else (np.nan, np.nan) for c in clips])
        self.mean_start_pose = self.pose0.mean(axis=0)


def get_index(db: ClipDatabase, player_id: str) -> PlayerClipIndex:
    cache = db._search_indexes
    if player_id not in cache:
        cache[player_id] = PlayerClipIndex(db, player_id)
    return cache[player_id]


# Cost computation -------------------------------------------------------------

def _ball_at(incoming: BallTrajectory, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ball positions at clip contact times; alive = flight still going."""
    alive = ts <= incoming.times[-1] + 1e-9
    pos = incoming.positions_at(np.clip(ts, incoming.times[0], incoming.times[-1]))
    return pos, alive


def _ratio_and_dir(delta_db: np.ndarray, delta_cor: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Correction penalties: (max displacement ratio - 1, 1 - cos angle).

    The ratio term is shifted so an uncorrected clip costs exactly zero.
    Displacements under 1 cm make both quantities ill-defined; such moves
    need no visible correction, so both penalties are zero there.
    """
    n_db = np.linalg.norm(delta_db, axis=1)
    n_cor = np.linalg.norm(delta_cor, axis=1)
    degenerate = (n_db < DEGENERATE_STEP) | (n_cor < DEGENERATE_STEP)
    safe_db = np.where(degenerate, 1.0, n_db)
    safe_cor = np.where(degenerate, 1.0, n_cor)
    ratio = np.maximum(safe_cor / safe_db, safe_db / safe_cor) - 1.0
    cosang = np.sum(delta_db * delta_cor, axis=1) / (safe_db * safe_cor)
    dir_cost = 1.0 - np.clip(cosang, -1.0, 1.0)
    return np.where(degenerate, 0.0, ratio), np.where(degenerate, 0.0, dir_cost)


def _contact_costs(index: PlayerClipIndex, query: SearchQuery,
                   rows: np.ndarray, weights: CostWeights):
    """All cost terms for contact candidates, vectorized over rows."""
    start = np.asarray(query.start_pos, dtype=float)
    ball, alive = _ball_at(query.incoming, index.t_c[rows])

    contact_abs = index.contact[rows, :2] - index.start[rows] + start
    e_c2d = ball[:, :2] - contact_abs
    z_err = np.abs(ball[:, 2] - index.contact[rows, 2])

    pose_d = np.linalg.norm(index.pose0[rows] - query.start_pose[None], axis=2)
    c_pose = pose_d.mean(axis=1)
    c_velo = np.linalg.norm(index.v0[rows] - np.asarray(query.start_velocity)[None],
                            axis=1)

    delta_db = index.at_contact[rows] - index.start[rows]
    delta_cor = delta_db + e_c2d
    c_react_velo, c_react_dir = _ratio_and_dir(delta_db, delta_cor)

    delta_r_db = index.at_end[rows] - index.at_contact[rows]
    x_p_tc = start + delta_db + e_c2d
    x_r = x_p_tc + delta_r_db
    e_r_raw = np.asarray(query.behavior.recovery, dtype=float)[None] - x_r
    delta_r_cor = delta_r_db + e_r_raw
    c_recover_velo, c_recover_dir = _ratio_and_dir(delta_r_db, delta_r_cor)

    c_shot_velo = np.abs(index.v_b[rows] - query.behavior.shot_velocity)
    translation = (start - index.start[rows]) + e_c2d
    placement_translated = index.placement[rows] + translation
    c_shot_place = np.linalg.norm(
        np.asarray(query.behavior.placement, dtype=float)[None]
        - placement_translated, axis=1)

    total = (weights.pose * c_pose + weights.velo * c_velo
             + weights.contact * z_err
             + weights.react_velo * c_react_velo
             + weights.react_dir * c_react_dir
             + weights.recover_velo * c_recover_velo
             + weights.recover_dir * c_recover_dir
             + weights.shot_velo * c_shot_velo
             + weights.shot_place * c_shot_place)
    total = np.where(alive, total, np.inf)
    return {
        "alive": alive, "e_c2d": e_c2d, "z_err": z_err,
        "c_pose": c_pose, "c_velo": c_velo,
        "c_react_velo": c_react_velo, "c_react_dir": c_react_dir,
        "c_recover_velo": c_recover_velo, "c_recover_dir": c_recover_dir,
        "c_shot_velo": c_shot_velo, "c_shot_place": c_shot_place,
        "e_r_raw": e_r_raw, "total": total,
    }


def clip_cost(clip: ShotCycleClip, query: SearchQuery, db: ClipDatabase,
              weights: CostWeights | None = None) -> ClipCostBreakdown:
    """Readable single-clip cost (the search scores all clips the same way).

    A clip whose contact time falls after the incoming flight is over can
    never make contact: that infeasibility shows up as an infinite total.
    """
    weights = weights or CostWeights()
    if clip.shot_type is not query.behavior.shot_type:
        return ClipCostBreakdown(c_shot_type=math.inf, total=math.inf)
    if not clip.outcome.has_contact:
        raise SearchError("clip_cost requires a contact clip")
    index = get_index(db, clip.player_id)
    row = int(np.nonzero(index.ids == clip.clip_id)[0][0])
    parts = _contact_costs(index, query, np.array([row]), weights)
    if not parts["alive"][0]:
        return ClipCostBreakdown(total=math.inf)
    return ClipCostBreakdown(
        c_pose=float(parts["c_pose"][0]),
        c_velo=float(parts["c_velo"][0]),
        c_contact=float(parts["z_err"][0]),
        c_react_velo=float(parts["c_react_velo"][0]),
        c_react_dir=float(parts["c_react_dir"][0]),
        c_recover_velo=float(parts["c_recover_velo"][0]),
        c_recover_dir=float(parts["c_recover_dir"][0]),
        c_shot_type=0.0,
        c_shot_velo=float(parts["c_shot_velo"][0]),
        c_shot_place=float(parts["c_shot_place"][0]),
        total=float(parts["total"][0]),
    )


# Corrections ------------------------------------------------------------------

def contact_correction(clip: ShotCycleClip, start_pos, incoming: BallTrajectory
                       ) -> tuple[np.ndarray, float, np.ndarray]:
    """(e_c2d, z_error, absolute contact position) for one clip.

    Raises BallEndedEarly if the flight is over before the clip contact.
    """
    if not clip.outcome.has_contact:
        raise SearchError("no contact to correct for a no_contact clip")
    if clip.t_c > incoming.times[-1] - incoming.times[0] + 1e-9:
        raise BallEndedEarly(
            f"incoming flight ends before clip contact time {clip.t_c:.3f}")
    start_pos = np.asarray(start_pos, dtype=float)
    ball = incoming.position_at(incoming.times[0] + clip.t_c)
    contact_abs = np.asarray(clip.contact_pos) - np.array([*clip.start_pos, 0.0]) \
        + np.array([*start_pos, 0.0])
    e_c = ball - contact_abs
    return e_c[:2].copy(), float(abs(e_c[2])), contact_abs


def recovery_correction(clip: ShotCycleClip, start_pos, e_c2d, target,
                        recovery_end_time: float | None = None) -> np.ndarray:
    """Residual from the corrected end-of-recovery position to the target.

    During search the recovery is assumed to take as long as it does in
    the clip; once the opponent's actual contact time is known the caller
    passes it as recovery_end_time to finalize.
    """
    t_end = clip.t_r if recovery_end_time is None else min(recovery_end_time, clip.t_r)
    if not clip.t_c < t_end <= clip.t_r + 1e-9:
        raise ValueError("recovery_end_time must lie in (t_c, t_r]")
    start_pos = np.asarray(start_pos, dtype=float)
    x_p_tc = start_pos + (clip.trace_at(clip.t_c) - clip.start_pos) + np.asarray(e_c2d)
    x_r = x_p_tc + (clip.trace_at(t_end) - clip.trace_at(clip.t_c))
    return np.asarray(target, dtype=float) - x_r


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def apply_corrections(clip: ShotCycleClip, start_pos, e_c2d, e_r,
                      recovery_end_time: float | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Corrected root trace over [0, t_r] at the clip frame step.

    The reaction correction blends in over [0, t_c] with an ease-in/out
    weight (exactly complete at contact); the recovery correction blends
    over (t_c, recovery_end_time] and holds afterwards.  e_r is the
    already-clamped applied correction.
    """
    start_pos = np.asarray(start_pos, dtype=float)
    e_c2d = np.asarray(e_c2d, dtype=float)
    e_r = np.asarray(e_r, dtype=float)
    times = np.arange(clip.n_frames) * clip.trace_dt
    base = start_pos[None] + (clip.player_trace - clip.player_trace[0])
    if clip.t_c is None:
        return times, base
    t_end = clip.t_r if recovery_end_time is None else min(recovery_end_time, clip.t_r)
    w_react = _smoothstep(times / clip.t_c)
    span = max(t_end - clip.t_c, clip.trace_dt * 0.5)
    w_rec = _smoothstep((times - clip.t_c) / span)
    w_rec[times <= clip.t_c] = 0.0
    return times, base + w_react[:, None] * e_c2d[None] + w_rec[:, None] * e_r[None]


def clamp_recovery(e_r_raw, thresholds: SearchThresholds) -> np.ndarray:
    e_r = np.asarray(e_r_raw, dtype=float)
    norm = float(np.linalg.norm(e_r))
    if norm <= thresholds.max_recover_correction or norm == 0.0:
        return e_r.copy()
    return e_r * (thresholds.max_recover_correction / norm)


# Search -----------------------------------------------------------------------

_FILTER_OUTCOMES = {
    OutcomeFilter.MUST_CONTINUE: (ShotOutcome.IN_PLAY,),
    OutcomeFilter.MUST_END_NO_CONTACT: (ShotOutcome.NO_CONTACT,),
    OutcomeFilter.CONTACT_ANY: (ShotOutcome.IN_PLAY, ShotOutcome.WINNER,
                                ShotOutcome.ERROR),
}


def reaction_feasible(db: ClipDatabase, player_id: str,
                      incoming: BallTrajectory, start_pos,
                      thresholds: SearchThresholds | None = None) -> bool:
    """Can any contact clip reach this flight from start_pos?

    This is the point-ending reachability probe: it applies the same
    feasibility rule as the search but ignores behavior goals.
    """
    thresholds = thresholds or SearchThresholds()
    index = get_index(db, player_id)
    rows = np.nonzero(index.has_contact)[0]
    if len(rows) == 0:
        return False
    ball, alive = _ball_at(incoming, index.t_c[rows])
    start = np.asarray(start_pos, dtype=float)
    contact_abs = index.contact[rows, :2] - index.start[rows] + start
    e_c2d = ball[:, :2] - contact_abs
    delta_db = index.at_contact[rows] - index.start[rows]
    c_rv, c_rd = _ratio_and_dir(delta_db, delta_db + e_c2d)
    ok = (alive
          & (np.linalg.norm(e_c2d, axis=1) <= thresholds.max_react_correction)
          & (c_rv + c_rd <= thresholds.react_cost_limit))
    return bool(ok.any())


def search(db: ClipDatabase, player_id: str, query: SearchQuery,
           weights: CostWeights | None = None,
           thresholds: SearchThresholds | None = None) -> SearchOutcome:
    """Best clip for the query, or the unreachable verdict.

    Candidates are restricted by the outcome filter; for contact filters
    they are further restricted to the desired shot type (a mismatch is
    infinitely costly, so skipping is exact).  Ties break to the lowest
    clip id.  Raises EmptyCandidateSet when the filter leaves nothing to
    search (callers may retry with a laxer filter).
    """
    weights = weights or CostWeights()
    thresholds = thresholds or SearchThresholds()
    index = get_index(db, player_id)

    outcomes = _FILTER_OUTCOMES[query.outcome_filter]
    mask = np.isin(index.outcome, [OUTCOME_CODE[o] for o in outcomes])
    if query.outcome_filter is OutcomeFilter.MUST_END_NO_CONTACT:
        rows = np.nonzero(mask)[0]
        if len(rows) == 0:
            raise EmptyCandidateSet("no no_contact clips for this player")
        # Only continuity terms are defined without a swing.
        pose_d = np.linalg.norm(index.pose0[rows] - query.start_pose[None], axis=2)
        total = (weights.pose * pose_d.mean(axis=1)
                 + weights.velo * np.linalg.norm(
                     index.v0[rows] - np.asarray(query.start_velocity)[None], axis=1))
        best = int(np.argmin(total))
        clip = index.clips[rows[best]]
        times, trace = apply_corrections(clip, query.start_pos,
                                         np.zeros(2), np.zeros(2))
        plan = CorrectionPlan(e_c2d=np.zeros(2), z_error=0.0,
                              e_r_raw=np.zeros(2), e_r=np.zeros(2),
                              times=times, trace=trace)
        breakdown = ClipCostBreakdown(
            c_pose=float(pose_d.mean(axis=1)[best]),
            c_velo=float(total[best] - weights.pose * pose_d.mean(axis=1)[best]),
            total=float(total[best]))
        return SearchOutcome(status="found", clip=clip, breakdown=breakdown,
                             plan=plan, n_candidates=len(rows))

    mask &= index.shot == SHOT_CODE[query.behavior.shot_type]
    rows = np.nonzero(mask)[0]
    if len(rows) == 0:
        raise EmptyCandidateSet(
            f"no {query.outcome_filter.value} clips of type "
            f"{query.behavior.shot_type.value}")

    parts = _contact_costs(index, query, rows, weights)
    feasible = (parts["alive"]
                & (np.linalg.norm(parts["e_c2d"], axis=1)
                   <= thresholds.max_react_correction)
                & (parts["c_react_velo"] + parts["c_react_dir"]
                   <= thresholds.react_cost_limit))
    if not feasible.any():
        return SearchOutcome(status="unreachable", n_candidates=len(rows))

    total = np.where(feasible, parts["total"], np.inf)
    best = int(np.argmin(total))   # rows sorted by clip id: lowest id wins ties
    clip = index.clips[rows[best]]

    e_c2d = parts["e_c2d"][best]
    e_r_raw = parts["e_r_raw"][best]
    e_r = clamp_recovery(e_r_raw, thresholds)
    times, trace = apply_corrections(clip, query.start_pos, e_c2d, e_r)
    plan = CorrectionPlan(e_c2d=e_c2d.copy(), z_error=float(parts["z_err"][best]),
                          e_r_raw=e_r_raw.copy(), e_r=e_r,
                          times=times, trace=trace)
    breakdown = ClipCostBreakdown(
        c_pose=float(parts["c_pose"][best]),
        c_velo=float(parts["c_velo"][best]),
        c_contact=float(parts["z_err"][best]),
        c_react_velo=float(parts["c_react_velo"][best]),
        c_react_dir=float(parts["c_react_dir"][best]),
        c_recover_velo=float(parts["c_recover_velo"][best]),
        c_recover_dir=float(parts["c_recover_dir"][best]),
        c_shot_type=0.0,
        c_shot_velo=float(parts["c_shot_velo"][best]),
        c_shot_place=float(parts["c_shot_place"][best]),
        total=float(total[best]),
    )
    return SearchOutcome(status="found", clip=clip, breakdown=breakdown,
                         plan=plan, n_candidates=len(rows))
