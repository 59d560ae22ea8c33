"""Synthetic clip database generator.

Scripted rallies (not the behavior model, to avoid testing a model on its
own output) produce physically consistent shot-cycle clips: every stored
bounce is the bounce of a ball flight fitted by the physics layer, player
movement is piecewise ease-in/ease-out between contact and recovery
waypoints, and poses come from a small bank of per-shot keyframes.
Generation is fully deterministic for a fixed seed.

Contact events snap to the trace frame grid so clip traces cover [0, t_r]
exactly; all stored floats are rounded to the database precision so a
save / load round-trip is field-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clipdb import TRACE_DT, ClipDatabase, ShotCycleClip
from .court import CourtSpec, Lateral
from .physics import (
    FlightParams,
    NoFeasibleTrajectory,
    NoIntersection,
    SpinKind,
    estimate_contact_point,
    fit_launch_to_bounce,
    intercept,
)
from .shots import DEFAULT_SHOT_SPIN, ShotOutcome, ShotType


class GenerationError(Exception):
    pass


DEFAULT_SPEED_MEAN = {
    ShotType.SERVE: 34.0,
    ShotType.FOREHAND_TOPSPIN: 22.0,
    ShotType.FOREHAND_UNDERSPIN: 17.0,
    ShotType.BACKHAND_TOPSPIN: 21.0,
    ShotType.BACKHAND_UNDERSPIN: 16.0,
    ShotType.FOREHAND_VOLLEY: 13.0,
    ShotType.BACKHAND_VOLLEY: 13.0,
}
DEFAULT_SPEED_STD = {st: (3.0 if st is ShotType.SERVE else 2.0) for st in ShotType}

MAX_SHOTS_PER_POINT = 16
REACH_SPEED_LIMIT = 5.0   # lateral m/s beyond which the scripted player gives up


@dataclass
class ArchetypeSpec:
    """Per-player generation parameters for the scripted policy."""

    handedness: str = "right"
    cross_court_bias: float = 0.65
    down_line_bias: float = 0.30
    net_approach_rate: float = 0.05
    baseline_depth_mean: float = 1.2
    baseline_depth_std: float = 0.45
    shot_speed_mean: dict[ShotType, float] = field(
        default_factory=lambda: dict(DEFAULT_SPEED_MEAN))
    shot_speed_std: dict[ShotType, float] = field(
        default_factory=lambda: dict(DEFAULT_SPEED_STD))
    error_rate: float = 0.12
    underspin_rate: float = 0.12

    def __post_init__(self) -> None:
        probs = (self.cross_court_bias, self.down_line_bias,
                 self.net_approach_rate, self.error_rate, self.underspin_rate)
        if any(not 0 <= p <= 1 for p in probs):
            raise ValueError("archetype probabilities must lie in [0, 1]")
        if self.cross_court_bias + self.down_line_bias > 1 + 1e-9:
            raise ValueError("cross_court_bias + down_line_bias must be <= 1")
        if self.baseline_depth_std < 0:
            raise ValueError("baseline_depth_std must be non-negative")


# Pose bank ------------------------------------------------------------------
# 14 keypoints in a player-local frame normalized to unit torso length:
# head, neck, r/l shoulder, r/l elbow, r/l wrist, r/l hip, r/l knee,
# r/l ankle.  x is the player's right, y is up.

def _pose(overrides: dict[int, tuple[float, float]]) -> np.ndarray:
    base = np.array([
        (0.00, 1.35),   # head
        (0.00, 1.00),   # neck
        (0.18, 0.95), (-0.18, 0.95),    # shoulders
        (0.30, 0.55), (-0.30, 0.55),    # elbows
        (0.33, 0.18), (-0.33, 0.18),    # wrists
        (0.14, 0.00), (-0.14, 0.00),    # hips
        (0.16, -0.85), (-0.16, -0.85),  # knees
        (0.17, -1.70), (-0.17, -1.70),  # ankles
    ])
    for i, xy in overrides.items():
        base[i] = xy
    return base


POSE_BANK = {
    "ready": _pose({4: (0.34, 0.50), 5: (-0.34, 0.50),
                    6: (0.26, 0.30), 7: (-0.26, 0.30),
                    10: (0.22, -0.80), 11: (-0.22, -0.80)}),
    "backswing_fh": _pose({2: (0.22, 0.93), 4: (0.55, 0.65), 6: (0.85, 0.75),
                           0: (0.06, 1.33)}),
    "contact_fh": _pose({4: (0.48, 0.80), 6: (0.80, 1.05), 0: (-0.04, 1.34)}),
    "follow_fh": _pose({4: (-0.25, 0.85), 6: (-0.60, 1.10)}),
    "backswing_bh": _pose({3: (-0.22, 0.93), 4: (-0.35, 0.60), 6: (-0.70, 0.70),
                           0: (-0.06, 1.33)}),
    "contact_bh": _pose({4: (-0.40, 0.80), 6: (-0.75, 1.00), 0: (0.04, 1.34)}),
    "follow_bh": _pose({4: (0.30, 0.90), 6: (0.55, 1.20)}),
    "serve_toss": _pose({5: (-0.25, 1.05), 7: (-0.20, 1.60),
                         4: (0.45, 0.70), 6: (0.60, 0.35)}),
    "serve_contact": _pose({4: (0.28, 1.30), 6: (0.35, 1.90),
                            5: (-0.30, 0.60), 7: (-0.25, 0.20), 0: (0.02, 1.38)}),
    "serve_follow": _pose({4: (0.10, 0.50), 6: (-0.25, 0.05)}),
    "volley_fh": _pose({4: (0.45, 0.90), 6: (0.72, 1.15)}),
    "volley_bh": _pose({4: (-0.40, 0.90), 6: (-0.68, 1.10)}),
    "lunge": _pose({0: (0.10, 1.25), 1: (0.08, 0.92),
                    4: (0.55, 0.75), 6: (0.95, 0.85),
                    10: (0.45, -0.80), 12: (0.75, -1.60)}),
}


def _pose_keys_for(shot_type: ShotType) -> tuple[str, str, str]:
    if shot_type is ShotType.SERVE:
        return ("serve_toss", "serve_contact", "serve_follow")
    if shot_type is ShotType.FOREHAND_VOLLEY:
        return ("ready", "volley_fh", "follow_fh")
    if shot_type is ShotType.BACKHAND_VOLLEY:
        return ("ready", "volley_bh", "follow_bh")
    if shot_type.is_backhand:
        return ("backswing_bh", "contact_bh", "follow_bh")
    return ("backswing_fh", "contact_fh", "follow_fh")


def _clip_pose_keyframes(shot_type: ShotType | None, t_c: float | None,
                         t_r: float) -> list[tuple[float, str]]:
    if shot_type is None or t_c is None:
        mid = min(0.45 * t_r, 0.5)
        keys = [(0.0, "ready"), (mid, "lunge"),
                (max(0.7 * t_r, mid + 0.02), "lunge"), (t_r, "ready")]
    else:
        prep, hit, follow = _pose_keys_for(shot_type)
        keys = [(0.0, "ready"),
                (max(0.05, t_c - 0.30), prep),
                (t_c, hit),
                (min(t_c + 0.30, t_c + 0.6 * max(t_r - t_c, 0.01)), follow),
                (min(t_c + 0.90, t_r), "ready"),
                (t_r + 1e-9, "ready")]
    out = [keys[0]]
    for kt, name in keys[1:]:
        if kt > out[-1][0] + 1e-9:
            out.append((kt, name))
    return out


def _pose_track(keyframes: list[tuple[float, str]], times: np.ndarray,
                handedness: str) -> np.ndarray:
    """Sample the keyframe sequence at the given times (linear blend)."""
    kts = np.array([kt for kt, _ in keyframes])
    poses = np.stack([POSE_BANK[name] for _, name in keyframes])
    out = np.empty((len(times), 14, 2))
    for j, t in enumerate(times):
        i = int(np.searchsorted(kts, t, side="right")) - 1
        if i < 0:
            out[j] = poses[0]
        elif i >= len(kts) - 1:
            out[j] = poses[-1]
        else:
            span = kts[i + 1] - kts[i]
            u = 0.0 if span <= 0 else (t - kts[i]) / span
            out[j] = (1 - u) * poses[i] + u * poses[i + 1]
    if handedness == "left":
        out = out.copy()
        out[:, :, 0] *= -1.0
    return out


# Movement -------------------------------------------------------------------

def _smoothstep(u: float) -> float:
    u = min(max(u, 0.0), 1.0)
    return u * u * (3.0 - 2.0 * u)


def _trace_from_waypoints(waypoints: list[tuple[float, np.ndarray]],
                          times: np.ndarray) -> np.ndarray:
    """Ease-in/ease-out interpolation through (time, position) waypoints."""
    wts = np.array([t for t, _ in waypoints])
    wps = np.stack([p for _, p in waypoints])
    out = np.empty((len(times), 2))
    idx = np.clip(np.searchsorted(wts, times, side="right") - 1, 0, len(wts) - 2)
    for j, (t, i) in enumerate(zip(times, idx)):
        t0, t1 = wts[i], wts[i + 1]
        if t <= t0:
            out[j] = wps[i]
        elif t >= t1:
            out[j] = wps[i + 1]
        else:
            u = _smoothstep((t - t0) / (t1 - t0))
            out[j] = (1 - u) * wps[i] + u * wps[i + 1]
    return out


def _snap(t: float, dt: float = TRACE_DT) -> float:
    return round(round(t / dt) * dt, 6)


# Rally scripting -------------------------------------------------------------

@dataclass
class _ShotEvent:
    player: str
    time: float                      # absolute, frame-snapped
    contact: tuple[float, float, float]
    shot_type: ShotType
    outcome: ShotOutcome
    traj: object                     # BallTrajectory
    placement: tuple[float, float]
    recovery: np.ndarray | None = None


class _PointScript:
    """Scripted generation of a single point between two players."""

    def __init__(self, archetypes, court: CourtSpec, flight: FlightParams,
                 rng: np.random.Generator, server: str, receiver: str,
                 deuce: bool):
        self.archetypes = archetypes
        self.court = court
        self.flight = flight
        self.rng = rng
        self.server = server
        self.receiver = receiver
        self.deuce = deuce
        self.shots: list[_ShotEvent] = []
        self.no_contact_player: str | None = None
        self.end_time = 0.0
        self.fit_failures = 0

    def other(self, player: str) -> str:
        return self.receiver if player == self.server else self.server

    def run(self) -> bool:
        rng = self.rng
        court = self.court
        deuce = self.deuce
        # The point is generated with the server on the near side; the
        # database normalizes clip frames on its own terms afterwards.
        sx = -0.35 if deuce else 0.35
        server_pos = np.array([sx, court.half_length + 0.25])
        rx = 1.6 if deuce else -1.6
        receiver_pos = np.array([rx, -(court.half_length + 0.9)])
        self.start_pos = {self.server: server_pos, self.receiver: receiver_pos}

        t_c0 = 0.76
        contact = estimate_contact_point(server_pos[0], server_pos[1],
                                         ShotType.SERVE,
                                         self.archetypes[self.server].handedness)
        box = Lateral.DEUCE if deuce else Lateral.AD
        target, speed = self._serve_target(box)
        traj = self._fit(contact, target, speed, ShotType.SERVE, t_c0)
        if traj is None:
            return False
        serve = _ShotEvent(self.server, t_c0, contact, ShotType.SERVE,
                           ShotOutcome.IN_PLAY, traj, target)
        serve.recovery = self._recovery_target(self.server, server_pos)
        self.shots.append(serve)

        # Where each player will respond from next (plane y and rough x).
        respond_from = {self.receiver: receiver_pos,
                        self.server: serve.recovery}

        for shot_idx in range(1, MAX_SHOTS_PER_POINT + 1):
            prev = self.shots[-1]
            hitter = self.other(prev.player)
            stand = respond_from[hitter]
            try:
                t_hit, _ = intercept(prev.traj, float(stand[1]))
            except NoIntersection:
                self._mark_winner(prev, prev.traj.end_time)
                return True
            t_hit = _snap(t_hit)
            if t_hit <= prev.time + 0.2:
                t_hit = _snap(prev.time + 0.24)
            ball = prev.traj.position_at(t_hit)
            if ball[2] <= 0.05:
                self._mark_winner(prev, t_hit)
                return True
            speed_needed = abs(ball[0] - stand[0]) / max(t_hit - prev.time, 1e-6)
            if speed_needed > REACH_SPEED_LIMIT:
                self._mark_winner(prev, t_hit)
                return True

            arch = self.archetypes[hitter]
            shot_type = self._choose_shot_type(hitter, stand, ball)
            err = (rng.random() < arch.error_rate
                   or shot_idx >= MAX_SHOTS_PER_POINT)
            target, speed = self._rally_target(hitter, ball, err, shot_type)
            contact = (float(ball[0]), float(ball[1]), float(ball[2]))
            traj = self._fit(contact, target, speed, shot_type, t_hit)
            if traj is None:
                return False
            ev = _ShotEvent(hitter, t_hit, contact, shot_type,
                            ShotOutcome.ERROR if err else ShotOutcome.IN_PLAY,
                            traj, target)
            ev.recovery = self._recovery_target(hitter, np.array(contact[:2]))
            self.shots.append(ev)
            if err:
                self.end_time = _snap(t_hit + 1.0)
                return True
            respond_from[hitter] = ev.recovery
        return False

    # Helpers ---------------------------------------------------------------

    def _fit(self, contact, target, speed, shot_type, t0):
        kind_name, magnitude = DEFAULT_SHOT_SPIN[shot_type]
        try:
            return fit_launch_to_bounce(contact, target, speed,
                                        SpinKind(kind_name), magnitude,
                                        self.flight, self.court, t0=t0)
        except NoFeasibleTrajectory:
            self.fit_failures += 1
            return None

    def _serve_target(self, box: Lateral) -> tuple[tuple[float, float], float]:
        rng = self.rng
        arch = self.archetypes[self.server]
        half_w = self.court.singles_width / 2
        x = rng.uniform(0.8, half_w - 0.5)
        if box is Lateral.AD:
            x = -x
        y = -rng.uniform(2.4, self.court.service_line_dist - 0.5)
        speed = float(np.clip(rng.normal(arch.shot_speed_mean[ShotType.SERVE],
                                         arch.shot_speed_std[ShotType.SERVE]),
                              24.0, 46.0))
        return (float(x), float(y)), speed

    def _choose_shot_type(self, hitter: str, stand: np.ndarray,
                          ball: np.ndarray) -> ShotType:
        arch = self.archetypes[hitter]
        at_net = abs(stand[1]) < 6.0
        right_dir = -1.0 if stand[1] >= 0 else 1.0
        racket_dir = right_dir if arch.handedness == "right" else -right_dir
        forehand = (ball[0] - stand[0]) * racket_dir >= 0
        if at_net:
            return ShotType.FOREHAND_VOLLEY if forehand else ShotType.BACKHAND_VOLLEY
        underspin = self.rng.random() < arch.underspin_rate
        if forehand:
            return ShotType.FOREHAND_UNDERSPIN if underspin else ShotType.FOREHAND_TOPSPIN
        return ShotType.BACKHAND_UNDERSPIN if underspin else ShotType.BACKHAND_TOPSPIN

    def _rally_target(self, hitter: str, ball: np.ndarray,
                      err: bool, shot_type: ShotType) -> tuple[tuple[float, float], float]:
        rng = self.rng
        arch = self.archetypes[hitter]
        court = self.court
        half_w = court.singles_width / 2
        opp_sign = -1.0 if ball[1] >= 0 else 1.0
        sign_c = 1.0 if ball[0] > 0 else -1.0
        r = rng.random()
        if r < arch.cross_court_bias:
            x = -sign_c * rng.uniform(1.2, half_w - 0.5)
        elif r < arch.cross_court_bias + arch.down_line_bias:
            x = sign_c * rng.uniform(1.2, half_w - 0.5)
        else:
            x = rng.uniform(-1.0, 1.0)
        depth = rng.uniform(6.8, court.half_length - 0.7)
        if err:
            if rng.random() < 0.5:
                depth = court.half_length + rng.uniform(0.4, 2.0)
            else:
                x = math.copysign(half_w + rng.uniform(0.4, 1.8), x)
                depth = rng.uniform(5.0, court.half_length - 0.5)
        speed = float(np.clip(rng.normal(arch.shot_speed_mean[shot_type],
                                         arch.shot_speed_std[shot_type]),
                              9.0, 50.0))
        return (float(x), float(opp_sign * depth)), speed

    def _recovery_target(self, player: str, from_pos: np.ndarray) -> np.ndarray:
        rng = self.rng
        arch = self.archetypes[player]
        side_sign = 1.0 if from_pos[1] >= 0 else -1.0
        ad_dir = side_sign if arch.handedness == "right" else -side_sign
        # Recovery only partially re-centers: a player pulled wide stays
        # somewhat wide, which is what opens the court for winners.
        x = float(np.clip(0.45 * from_pos[0] + ad_dir * 0.55
                          + rng.normal(0.0, 0.25), -3.5, 3.5))
        if rng.random() < arch.net_approach_rate:
            y = side_sign * rng.uniform(2.4, 4.4)
        else:
            depth = max(0.15, rng.normal(arch.baseline_depth_mean,
                                         arch.baseline_depth_std))
            y = side_sign * (self.court.half_length + min(depth, 3.5))
        return np.array([x, y])

    def _mark_winner(self, prev: _ShotEvent, t_ball_end: float) -> None:
        prev.outcome = ShotOutcome.WINNER
        self.no_contact_player = self.other(prev.player)
        self.end_time = _snap(t_ball_end + 0.6)


# Clip slicing ----------------------------------------------------------------

def _frame_slice(start: float, end: float) -> slice:
    i0 = int(round(start / TRACE_DT))
    i1 = int(round(end / TRACE_DT))
    return slice(i0, i1 + 1)


def _clips_from_script(script: _PointScript, archetypes,
                       next_id: int) -> list[ShotCycleClip]:
    """Slice the scripted timeline into one clip per shot cycle."""
    court = script.court
    shots = script.shots
    end_time = script.end_time

    players = sorted(script.start_pos)
    waypoints = {p: [(0.0, np.asarray(script.start_pos[p], dtype=float))]
                 for p in players}
    # The receiver holds the ready position until the serve is struck.
    waypoints[script.receiver].append(
        (shots[0].time, np.asarray(script.start_pos[script.receiver], dtype=float)))

    for i, ev in enumerate(shots):
        waypoints[ev.player].append((ev.time, np.array(ev.contact[:2])))
        nxt = next((e for e in shots[i + 1:] if e.player != ev.player), None)
        arrive = nxt.time if nxt is not None else end_time
        rec = ev.recovery
        if rec is None:
            side = 1.0 if ev.contact[1] >= 0 else -1.0
            rec = np.array([0.3 * ev.contact[0], side * (court.half_length + 1.0)])
        waypoints[ev.player].append((max(arrive, ev.time + 0.05), rec))

    if script.no_contact_player is not None:
        p = script.no_contact_player
        last = shots[-1]
        pos = waypoints[p][-1][1]
        lunge_x = pos[0] + float(np.clip(last.placement[0] - pos[0], -1.4, 1.4))
        waypoints[p].append((min(_snap(last.time + 0.6), end_time),
                             np.array([lunge_x, pos[1]])))

    for p in players:
        wps = sorted(waypoints[p], key=lambda w: w[0])
        dedup = [wps[0]]
        for t, xy in wps[1:]:
            if t > dedup[-1][0] + 1e-9:
                dedup.append((t, xy))
        if dedup[-1][0] < end_time:
            dedup.append((end_time, dedup[-1][1]))
        waypoints[p] = dedup

    n_frames_total = round(end_time / TRACE_DT) + 1
    frame_times = np.round(np.arange(n_frames_total) * TRACE_DT, 6)
    traces = {p: _trace_from_waypoints(waypoints[p], frame_times) for p in players}

    clips: list[ShotCycleClip] = []
    for i, ev in enumerate(shots):
        cycle_start = shots[i - 1].time if i > 0 else 0.0
        nxt = next((e for e in shots[i + 1:] if e.player != ev.player), None)
        cycle_end = nxt.time if nxt is not None else end_time
        clips.append(_make_clip(script, archetypes, ev,
                                shots[i - 1] if i > 0 else None,
                                cycle_start, cycle_end, frame_times, traces,
                                next_id + len(clips)))

    if script.no_contact_player is not None:
        clips.append(_make_no_contact_clip(script, archetypes, frame_times,
                                           traces, next_id + len(clips)))
    return clips


def _make_clip(script: _PointScript, archetypes, ev: _ShotEvent,
               prev: _ShotEvent | None, cycle_start: float, cycle_end: float,
               frame_times: np.ndarray, traces: dict,
               clip_id: int) -> ShotCycleClip:
    t_c = round(ev.time - cycle_start, 6)
    t_r = round(cycle_end - cycle_start, 6)
    sl = _frame_slice(cycle_start, cycle_end)
    opponent = script.other(ev.player)

    traj = ev.traj
    t_b = None if traj.bounce_time is None else round(traj.bounce_time - cycle_start, 6)
    placement = None if traj.bounce_pos is None else (
        round(traj.bounce_pos[0], 6), round(traj.bounce_pos[1], 6))

    incoming_contact = None if prev is None else tuple(round(v, 6) for v in prev.contact)
    incoming_bounce = None
    if prev is not None and prev.traj.bounce_pos is not None:
        incoming_bounce = (round(prev.traj.bounce_pos[0], 6),
                           round(prev.traj.bounce_pos[1], 6))

    keyframes = _clip_pose_keyframes(ev.shot_type, t_c, t_r)
    local_times = np.round(frame_times[sl] - cycle_start, 6)
    pose = _pose_track(keyframes, local_times, archetypes[ev.player].handedness)

    clip = ShotCycleClip(
        clip_id=clip_id,
        player_id=ev.player,
        opponent_id=opponent,
        shot_type=ev.shot_type,
        outcome=ev.outcome,
        t_c=t_c,
        t_r=t_r,
        contact_pos=tuple(round(v, 6) for v in ev.contact),
        t_b=t_b,
        placement=placement,
        player_trace=np.round(traces[ev.player][sl], 6),
        opponent_trace=np.round(traces[opponent][sl], 6),
        pose_trace=np.round(pose, 6),
        incoming_contact=incoming_contact,
        incoming_bounce=incoming_bounce,
        trace_dt=TRACE_DT,
    )
    # Store everything near-side normalized, like the loader does.
    return clip.mirrored() if clip.is_far_side else clip


def _make_no_contact_clip(script: _PointScript, archetypes,
                          frame_times: np.ndarray, traces: dict,
                          clip_id: int) -> ShotCycleClip:
    player = script.no_contact_player
    last = script.shots[-1]
    cycle_start = last.time
    cycle_end = script.end_time
    t_r = round(cycle_end - cycle_start, 6)
    sl = _frame_slice(cycle_start, cycle_end)
    keyframes = _clip_pose_keyframes(None, None, t_r)
    local_times = np.round(frame_times[sl] - cycle_start, 6)
    pose = _pose_track(keyframes, local_times, archetypes[player].handedness)
    incoming_bounce = None
    if last.traj.bounce_pos is not None:
        incoming_bounce = (round(last.traj.bounce_pos[0], 6),
                           round(last.traj.bounce_pos[1], 6))
    clip = ShotCycleClip(
        clip_id=clip_id,
        player_id=player,
        opponent_id=last.player,
        shot_type=last.shot_type,   # the unreached incoming shot's type
        outcome=ShotOutcome.NO_CONTACT,
        t_c=None,
        t_r=t_r,
        contact_pos=None,
        t_b=None,
        placement=None,
        player_trace=np.round(traces[player][sl], 6),
        opponent_trace=np.round(traces[last.player][sl], 6),
        pose_trace=np.round(pose, 6),
        incoming_contact=tuple(round(v, 6) for v in last.contact),
        incoming_bounce=incoming_bounce,
        trace_dt=TRACE_DT,
    )
    return clip.mirrored() if clip.is_far_side else clip


# Entry point ------------------------------------------------------------------

def generate_synthetic_db(archetypes: dict[str, ArchetypeSpec], n_points: int,
                          seed: int, court: CourtSpec | None = None,
                          flight: FlightParams | None = None) -> ClipDatabase:
    """Generate a clip database from scripted rallies.

    Server/receiver pairings rotate through all ordered player pairs.
    Deterministic for a fixed seed (byte-identical serialized output).
    Raises GenerationError if trajectory fitting fails persistently.
    """
    if len(archetypes) < 2:
        raise ValueError("need at least two player archetypes")
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    court = court or CourtSpec()
    flight = flight or FlightParams()
    rng = np.random.default_rng(seed)

    players = sorted(archetypes)
    pairs = [(a, b) for a in players for b in players if a != b]

    clips: list[ShotCycleClip] = []
    clip_id = 0
    produced = 0
    attempts = 0
    failures = 0
    while produced < n_points:
        attempts += 1
        if attempts > 20 * n_points + 50:
            raise GenerationError(
                f"persistent generation failures ({failures} failed fits)")
        server, receiver = pairs[produced % len(pairs)]
        # Service court alternates per full pair rotation so that every
        # server covers both the deuce and the ad court.
        deuce = (produced // len(pairs)) % 2 == 0
        script = _PointScript(archetypes, court, flight, rng, server, receiver,
                              deuce)
        if not script.run():
            failures += script.fit_failures
            continue
        if not script.end_time:
            script.end_time = _snap(script.shots[-1].time + 1.0)
        new_clips = _clips_from_script(script, archetypes, clip_id)
        clips.extend(new_clips)
        clip_id += len(new_clips)
        produced += 1

    return ClipDatabase(court=court, flight=flight,
                        players={p: archetypes[p].handedness for p in players},
                        clips=clips, trace_dt=TRACE_DT)
