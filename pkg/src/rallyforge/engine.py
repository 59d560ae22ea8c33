"""Rally engine: the shot-cycle state machine and point synthesis loop.

A point starts with a serve clip; then each loop iteration begins one
shot cycle for the player answering the ball in flight.  Per iteration:
build the responder's discretized point state, rule on the point ending
before clip search (unreachable ball, or the responder's own sampled /
overridden shot being an error), sample the behavior decision, run the
outcome-filtered clip search, fit the outgoing ball flight to the decided
placement and speed, and finalize the previous hitter's recovery
correction now that their recovery phase's true end (the new contact
time) is known.

Sides never share a frame: each player's decision-making runs in their
own near-side frame (the whole state is rotated 180 degrees for the far
player), which is what lets one model и one clip set serve both ends.
Positions in the log are absolute court coordinates.

Everything is deterministic for a fixed (database, models, seed,
overrides): per-player RNG streams are spawned from the point seed in a
fixed order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .behavior import (
    BehaviorDecision,
    ConditionalModel,
    NoIntersection,
    RecoveryDescriptor,
    build_descriptor,
    recovery_target,
    sample_shot_selection,
)
from .clipdb import ClipDatabase, ShotCycleClip
from .court import CourtSpec, Lateral, Side, in_service_box, in_singles_court
from .physics import (
    BallTrajectory,
    FlightParams,
    NoFeasibleTrajectory,
    SpinKind,
    fit_launch_to_bounce,
    fit_meets_tolerance,
)
from .search import (
    CostWeights,
    EmptyCandidateSet,
    OutcomeFilter,
    SearchQuery,
    SearchThresholds,
    apply_corrections,
    clamp_recovery,
    reaction_feasible,
    recovery_correction,
    search,
)
from .shots import DEFAULT_SHOT_SPIN, ShotType


class EngineError(Exception):
    pass


class NoServeClips(EngineError):
    pass


@dataclass
class ControlOverride:
    """Per-cycle user goals, applied at the next shot-cycle boundary."""

    player_id: str
    placement: tuple[float, float] | None = None   # absolute court coords
    recovery: tuple[float, float] | None = None
    shot_type: ShotType | None = None


@dataclass
class PlayerState:
    """One player's live state; positional fields are in the player's own
    near-side frame (side < 0 means the absolute frame is rotated)."""

    player_id: str
    side: float                      # +1 near, -1 far
    pos: np.ndarray                  # (2,) local frame
    vel: np.ndarray                  # (2,) local frame
    pose: np.ndarray                 # (14, 2)
    recovery: np.ndarray             # (2,) local frame recovery goal
    clip: ShotCycleClip | None = None
    cycle_start: float = 0.0         # absolute clock of the active cycle start
    start_pos: np.ndarray | None = None   # local, at cycle start
    e_c2d: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def abs_pos(self) -> np.ndarray:
        return self.pos * self.side

    def abs_recovery(self) -> np.ndarray:
        return self.recovery * self.side


@dataclass
class RallyLog:
    events: list[dict] = field(default_factory=list)

    def add(self, event: dict) -> None:
        self.events.append(event)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    @property
    def ending(self) -> dict | None:
        for e in reversed(self.events):
            if e["event"] == "end":
                return e
        return None

    def shot_cycles(self) -> list[dict]:
        return [e for e in self.events if e["event"] == "shot_cycle"]


@dataclass
class RallyState:
    phase: str                        # serving | in_rally | ended
    current_player: str               # whose shot produced the ball in flight
    shot_index: int
    players: dict[str, PlayerState]
    ball: BallTrajectory              # absolute timeline
    clock: float
    court: CourtSpec
    flight: FlightParams
    log: RallyLog
    rngs: dict[str, np.random.Generator]
    outcome: dict | None = None
    point_index: int = 0

    def other(self, player_id: str) -> str:
        ids = list(self.players)
        return ids[1] if ids[0] == player_id else ids[0]

    @property
    def responder(self) -> str:
        return self.other(self.current_player)


@dataclass(frozen=True)
class EngineSettings:
    weights: CostWeights = CostWeights()
    thresholds: SearchThresholds = SearchThresholds()
    max_shots: int = 100
    returner_lateral: float = 1.8     # local-frame stance offset at the start
    returner_depth: float = 0.9       # behind the baseline


def settings_from_config(cfg) -> EngineSettings:
    """EngineSettings view of a loaded EngineConfig."""
    return EngineSettings(weights=cfg.weights, thresholds=cfg.thresholds,
                          max_shots=cfg.engine.max_shots,
                          returner_lateral=cfg.engine.returner_lateral,
                          returner_depth=cfg.engine.returner_depth)


def _round(x, nd=4):
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_round(v, nd) for v in np.asarray(x).tolist()]
    if isinstance(x, (float, np.floating)):
        return round(float(x), nd)
    return x


def _mirror_override_to_local(ov: ControlOverride, side: float) -> ControlOverride:
    def m(p):
        return None if p is None else (p[0] * side, p[1] * side)

    return ControlOverride(player_id=ov.player_id, placement=m(ov.placement),
                           recovery=m(ov.recovery), shot_type=ov.shot_type)


def decide_point_end(court: CourtSpec, reachable: bool, placement_local,
                     outgoing_fit_ok: bool) -> str:
    """Point-ending ruling for the cycle, made before clip search is used
    to commit the shot: continue | error | unreachable.

    The responder's reachability against the incoming ball is judged
    first; only then is their own shot considered.
    """
    if not reachable:
        return "unreachable"
    if placement_local is None:
        return "continue"
    if not in_singles_court(placement_local[0], placement_local[1], court):
        return "error"
    if not outgoing_fit_ok:
        return "error"   # no net-clearing flight to that placement exists
    return "continue"


def start_point(db: ClipDatabase, models: dict[str, ConditionalModel],
                server: str, returner: str, seed: int,
                point_index: int = 0,
                settings: EngineSettings | None = None) -> RallyState:
    """Start a point: sample a serve clip for the service court, place the
    players, and fit the serve flight from the clip's annotations.

    The server plays the near side for the whole point; models and clips
    are side-free, so this is pure convention.
    """
    settings = settings or EngineSettings()
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(3)
    rng_serve = np.random.default_rng(children[0])
    rngs = {pid: np.random.default_rng(child)
            for pid, child in zip(sorted((server, returner)), children[1:])}

    court_lat = Lateral.DEUCE if point_index % 2 == 0 else Lateral.AD
    serves = db.serve_clips(server)
    if not serves:
        raise NoServeClips(f"player {server!r} has no serve clips")
    in_box = [c for c in serves
              if c.placement is not None
              and in_service_box(c.placement[0], c.placement[1],
                                 Side.FAR, court_lat, db.court)]
    pool = in_box or serves   # degenerate databases may cover one court only
    clip = pool[int(rng_serve.integers(len(pool)))]

    kind_name, spin = DEFAULT_SHOT_SPIN[ShotType.SERVE]
    traj = fit_launch_to_bounce(clip.contact_pos, clip.placement, clip.v_b,
                                SpinKind(kind_name), spin, db.flight, db.court,
                                t0=clip.t_c)

    log = RallyLog()
    log.add({"event": "serve", "point_index": point_index, "server": server,
             "returner": returner, "seed": seed,
             "service_court": court_lat.value, "clip_id": clip.clip_id,
             "contact_time": _round(clip.t_c),
             "contact": _round(clip.contact_pos),
             "bounce": _round(clip.placement),
             "ground_speed": _round(clip.v_b),
             "pool_size": len(pool), "in_box_pool": len(in_box)})

    server_state = PlayerState(
        player_id=server, side=1.0,
        pos=clip.start_pos.copy(), vel=np.zeros(2),
        pose=clip.start_pose.copy(),
        recovery=clip.recovery_pos.copy(),
        clip=clip, cycle_start=0.0, start_pos=clip.start_pos.copy(),
        e_c2d=np.zeros(2),
    )
    lat = -settings.returner_lateral if court_lat is Lateral.DEUCE \
        else settings.returner_lateral
    ret_pos = np.array([lat, db.court.half_length + settings.returner_depth])
    try:
        from .search import get_index
        ret_pose = get_index(db, returner).mean_start_pose.copy()
    except EmptyCandidateSet:
        ret_pose = clip.start_pose.copy()
    returner_state = PlayerState(
        player_id=returner, side=-1.0,
        pos=ret_pos, vel=np.zeros(2), pose=ret_pose,
        recovery=ret_pos.copy(),
    )

    return RallyState(
        phase="serving", current_player=server, shot_index=0,
        players={server: server_state, returner: returner_state},
        ball=traj, clock=0.0, court=db.court, flight=db.flight,
        log=log, rngs=rngs, point_index=point_index,
    )


def _finalize_recovery(state: RallyState, player: PlayerState,
                       next_contact_abs: float,
                       settings: EngineSettings) -> None:
    """Close out the player's active cycle at the newly known contact time."""
    clip = player.clip
    if clip is None or clip.t_c is None:
        return
    t_end = min(next_contact_abs - player.cycle_start, clip.t_r)
    t_end = max(t_end, clip.t_c + clip.trace_dt * 0.5)
    e_r_raw = recovery_correction(clip, player.start_pos, player.e_c2d,
                                  player.recovery, recovery_end_time=t_end)
    e_r = clamp_recovery(e_r_raw, settings.thresholds)

    def corrected_at(t):
        base = player.start_pos + (clip.trace_at(t) - clip.start_pos)
        u = min(max(t / clip.t_c, 0.0), 1.0)
        w_react = u * u * (3 - 2 * u)
        span = max(t_end - clip.t_c, clip.trace_dt * 0.5)
        v = min(max((t - clip.t_c) / span, 0.0), 1.0)
        w_rec = v * v * (3 - 2 * v) if t > clip.t_c else 0.0
        return base + w_react * player.e_c2d + w_rec * e_r

    pos = corrected_at(t_end)
    dt = clip.trace_dt
    vel = (pos - corrected_at(t_end - dt)) / dt
    player.pos = pos
    player.vel = vel
    player.pose = clip.pose_at(t_end)
    state.log.add({
        "event": "recovery_finalized", "player": player.player_id,
        "clip_id": clip.clip_id,
        "recovery_end_time": _round(t_end),
        "e_r": _round(e_r), "e_r_raw": _round(e_r_raw),
        "position": _round(pos * player.side),
    })


def _end_point(state: RallyState, winner: str, reason: str,
               extra: dict | None = None) -> None:
    state.phase = "ended"
    loser = state.other(winner) if winner else None
    state.outcome = {"winner": winner, "loser": loser, "reason": reason}
    ev = {"event": "end", "winner": winner, "loser": loser, "reason": reason,
          "shots": state.shot_index + 1}
    if extra:
        ev.update(extra)
    state.log.add(ev)


def _no_contact_ending(state: RallyState, db: ClipDatabase, responder_id: str,
                       traj_local: BallTrajectory, resp: PlayerState,
                       settings: EngineSettings, reason: str) -> None:
    """The responder cannot reach the ball: pick a conceding clip if the
    database depicts one, then end the point."""
    clip_id = None
    try:
        decision = BehaviorDecision(shot_type=ShotType.FOREHAND_TOPSPIN,
                                    shot_velocity=1.0, placement=np.zeros(2),
                                    recovery=resp.pos.copy(), approach_net=False)
        query = SearchQuery(behavior=decision, incoming=traj_local,
                            start_pos=resp.pos, start_pose=resp.pose,
                            start_velocity=resp.vel,
                            outcome_filter=OutcomeFilter.MUST_END_NO_CONTACT)
        out = search(db, responder_id, query, settings.weights,
                     settings.thresholds)
        clip_id = out.clip.clip_id
        resp.clip = out.clip
        resp.cycle_start = state.ball.t0
        resp.start_pos = resp.pos.copy()
        resp.e_c2d = np.zeros(2)
    except EmptyCandidateSet:
        pass
    _end_point(state, winner=state.current_player, reason=reason,
               extra={"final_clip_id": clip_id, "conceding": responder_id})


def step_shot_cycle(state: RallyState, db: ClipDatabase,
                    models: dict[str, ConditionalModel],
                    override: ControlOverride | None = None,
                    settings: EngineSettings | None = None) -> RallyState:
    """Advance the rally by one shot cycle (the responder answers the ball).

    Raises EngineError when called on an ended point.  The override, if
    given for the responder, replaces the matching behavior fields; an
    override placement outside the court is honored and becomes an error
    shot.
    """
    settings = settings or EngineSettings()
    if state.phase == "ended":
        raise EngineError("point already ended")

    responder_id = state.responder
    resp = state.players[responder_id]
    hitter = state.players[state.current_player]
    cycle_start_abs = state.ball.t0

    # Everything below runs in the responder's near-side frame.
    traj_abs_local = state.ball.shifted(0.0)
    traj_local = traj_abs_local.mirrored() if resp.side < 0 else traj_abs_local

    if override is not None and override.player_id != responder_id:
        raise EngineError(
            f"override targets {override.player_id!r}; "
            f"the responding player is {responder_id!r}")
    ov = _mirror_override_to_local(override, resp.side) if override else None

    # (1) Reachability of the incoming ball rules first.
    reachable = reaction_feasible(db, responder_id, traj_local, resp.pos,
                                  settings.thresholds)
    if reachable:
        try:
            desc, est = build_descriptor(
                traj_local, resp.pos,
                hitter.abs_recovery() * resp.side, now=0.0,
                court=state.court)
        except NoIntersection:
            reachable = False
    if not reachable:
        state.log.add({"event": "shot_cycle", "index": state.shot_index + 1,
                       "player": responder_id, "ruling": "unreachable"})
        _no_contact_ending(state, db, responder_id, traj_local, resp,
                           settings, reason="unreachable")
        return state

    # (2) Behavior decision, then override fields.
    rng = state.rngs[responder_id]
    model = models[responder_id]
    sel = sample_shot_selection(model, desc, rng)
    from .court import region_cell
    rdesc = RecoveryDescriptor(desc, region_cell(sel.placement[0],
                                                 sel.placement[1], state.court))
    rec = recovery_target(model, rdesc, rng)
    decision = BehaviorDecision(shot_type=sel.shot_type,
                                shot_velocity=sel.velocity,
                                placement=sel.placement.copy(),
                                recovery=rec.position.copy(),
                                approach_net=rec.approach)
    overridden: list[str] = []
    if ov is not None:
        if ov.shot_type is not None:
            decision.shot_type = ov.shot_type
            overridden.append("shot_type")
        if ov.placement is not None:
            decision.placement = np.asarray(ov.placement, dtype=float)
            overridden.append("placement")
        if ov.recovery is not None:
            decision.recovery = np.asarray(ov.recovery, dtype=float)
            overridden.append("recovery")

    # (3) Point-ending ruling before clip search commits the shot.
    kind_name, spin = DEFAULT_SHOT_SPIN[decision.shot_type]
    spin_kind = SpinKind(kind_name)
    provisional_ok = True
    if in_singles_court(decision.placement[0], decision.placement[1], state.court):
        try:
            origin_est = (est.position[0], est.position[1],
                          max(float(est.position[2]), 0.2))
            fit_launch_to_bounce(origin_est, decision.placement,
                                 decision.shot_velocity, spin_kind, spin,
                                 state.flight, state.court)
        except NoFeasibleTrajectory:
            provisional_ok = False
    ruling = decide_point_end(state.court, True, decision.placement,
                              provisional_ok)

    # (4) Outcome-filtered clip search.
    outcome_filter = (OutcomeFilter.MUST_CONTINUE if ruling == "continue"
                      else OutcomeFilter.CONTACT_ANY)
    query = SearchQuery(behavior=decision, incoming=traj_local,
                        start_pos=resp.pos, start_pose=resp.pose,
                        start_velocity=resp.vel, outcome_filter=outcome_filter)
    filter_relaxed = False
    try:
        out = search(db, responder_id, query, settings.weights, settings.thresholds)
    except EmptyCandidateSet:
        filter_relaxed = True
        query.outcome_filter = OutcomeFilter.CONTACT_ANY
        try:
            out = search(db, responder_id, query, settings.weights,
                         settings.thresholds)
        except EmptyCandidateSet:
            out = None
    if out is None or out.status == "unreachable":
        state.log.add({"event": "shot_cycle", "index": state.shot_index + 1,
                       "player": responder_id, "ruling": "unreachable",
                       "descriptor": list(desc.key),
                       "note": "no reachable clip under behavior constraints"})
        _no_contact_ending(state, db, responder_id, traj_local, resp,
                           settings, reason="unreachable")
        return state

    clip = out.clip
    plan = out.plan
    contact_abs_time = cycle_start_abs + clip.t_c

    # (5) Outgoing flight from the corrected contact position.
    ball_at_contact = traj_local.position_at(clip.t_c)
    launch_origin = (float(ball_at_contact[0]), float(ball_at_contact[1]),
                     float(clip.contact_pos[2]))
    outgoing_local = None
    fit_ok = False
    try:
        outgoing_local = fit_launch_to_bounce(
            launch_origin, decision.placement, decision.shot_velocity,
            spin_kind, spin, state.flight, state.court)
        fit_ok = fit_meets_tolerance(outgoing_local, decision.placement,
                                     decision.shot_velocity)
    except NoFeasibleTrajectory:
        outgoing_local = None
    if outgoing_local is None:
        # Nothing clears the net toward that placement: the shot is an
        # error into the net; the point ends without a new flight.
        ruling = "error"

    # (6) Finalize the previous hitter's recovery at the known contact time.
    _finalize_recovery(state, hitter, contact_abs_time, settings)

    # (7) Commit the responder's cycle.
    resp.clip = clip
    resp.cycle_start = cycle_start_abs
    resp.start_pos = resp.pos.copy()
    resp.e_c2d = plan.e_c2d.copy()
    resp.recovery = decision.recovery.copy()

    event = {
        "event": "shot_cycle", "index": state.shot_index + 1,
        "player": responder_id,
        "ruling": ruling,
        "descriptor": list(desc.key),
        "relaxation": sel.relaxation,
        "relaxed": list(sel.relaxed),
        "recovery_relaxation": rec.relaxation,
        "decision": {
            "shot_type": decision.shot_type.value,
            "velocity": _round(decision.shot_velocity),
            "placement": _round(decision.placement * resp.side),
            "recovery": _round(decision.recovery * resp.side),
            "approach_net": decision.approach_net,
        },
        "overridden": overridden,
        "clip_id": clip.clip_id,
        "outcome_filter": query.outcome_filter.value,
        "filter_relaxed": filter_relaxed,
        "cost": {k: _round(v, 6) for k, v in out.breakdown.as_dict().items()},
        "e_c2d": _round(plan.e_c2d),
        "z_error": _round(plan.z_error),
        "contact_time": _round(contact_abs_time),
        "contact": _round(np.asarray(launch_origin) * np.array(
            [resp.side, resp.side, 1.0])),
        "reach_speed": _round(est.reach_speed),
    }
    if outgoing_local is not None:
        event["outgoing"] = {
            "launch_v_h": _round(outgoing_local.launch.v_h),
            "launch_v_z": _round(outgoing_local.launch.v_z),
            "v_spin": _round(outgoing_local.launch.v_spin),
            "spin": outgoing_local.launch.spin_kind.value,
            "bounce": _round(np.asarray(outgoing_local.bounce_pos) * resp.side),
            "bounce_time": _round(contact_abs_time
                                  + (outgoing_local.bounce_time or 0.0)),
            "fit_ok": fit_ok,
            "net_clearance": _round(outgoing_local.net_clearance),
        }
    state.log.add(event)

    state.shot_index += 1
    state.clock = contact_abs_time
    state.current_player = responder_id
    state.phase = "in_rally"

    if outgoing_local is not None:
        out_abs = outgoing_local.mirrored() if resp.side < 0 else outgoing_local
        state.ball = out_abs.shifted(contact_abs_time)

    if ruling == "error":
        _end_point(state, winner=state.other(responder_id), reason="error",
                   extra={"erring_player": responder_id})
    return state


def run_rally(db: ClipDatabase, models: dict[str, ConditionalModel],
              server: str, returner: str, seed: int,
              point_index: int = 0,
              settings: EngineSettings | None = None,
              overrides: dict[int, ControlOverride] | None = None) -> RallyLog:
    """Run one full point; returns the replayable log.

    ``overrides`` maps shot-cycle indices (1-based, as logged) to control
    inputs.  Rallies that reach max_shots are ruled a draw and logged as
    truncated.
    """
    settings = settings or EngineSettings()
    overrides = overrides or {}
    state = start_point(db, models, server, returner, seed, point_index, settings)
    while state.phase != "ended":
        if state.shot_index + 1 > settings.max_shots:
            _end_point(state, winner=None, reason="truncated")
            break
        ov = overrides.get(state.shot_index + 1)
        step_shot_cycle(state, db, models, ov, settings)
    return state.log


def run_batch(db: ClipDatabase, models: dict[str, ConditionalModel],
              players: tuple[str, str], n_points: int, seed: int,
              settings: EngineSettings | None = None) -> list[RallyLog]:
    """Simulate n independent points, alternating server each point.

    Each point gets its own RNG stream derived from (seed, point index),
    so results do not depend on execution order.
    """
    a, b = players
    logs = []
    for i in range(n_points):
        server, returner = (a, b) if i % 2 == 0 else (b, a)
        child = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        # point_index drives the service-court parity; dividing by two
        # lets each server cover both courts across the batch.
        logs.append(run_rally(db, models, server, returner, child,
                              point_index=i // 2, settings=settings))
    return logs
