"""Shot-cycle clip database: schema, validation, file format, statistics.

One clip spans a full shot cycle of one player: the reaction phase up to
their ball contact (t_c), then recovery until the cycle ends (t_r).
Traces sample both players' court positions and the hitter's pose at a
uniform frame step (1/25 s by default, the broadcast frame rate).  Poses
live in a player-local frame normalized to unit torso length.

Clips are stored normalized to the near side: far-side clips are rotated
180 degrees about the net center on load (rotation, not reflection, so
handedness is preserved).  The serialized form is line-delimited JSON:
one header line with the format version, court, flight parameters and
player handedness, then one clip per line.  Floats are rounded to 1e-6
on write, so save -> load round-trips are exact for databases that came
from this module (generator or loader).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .court import CourtSpec
from .physics import FlightParams
from .shots import ShotOutcome, ShotType

FORMAT_NAME = "rallyforge-clipdb"
FORMAT_VERSION = 1
TRACE_DT = 0.04          # broadcast frame step
POSE_KEYPOINTS = 14


class ClipDBError(Exception):
    pass


class ParseError(ClipDBError):
    pass


class ValidationError(ClipDBError):
    def __init__(self, failures: list[str]):
        self.failures = failures
        preview = "; ".join(failures[:5])
        more = "" if len(failures) <= 5 else f" (+{len(failures) - 5} more)"
        super().__init__(f"{len(failures)} invalid clip(s): {preview}{more}")


@dataclass(eq=False)
class ShotCycleClip:
    """One annotated shot cycle (times are relative to the cycle start)."""

    clip_id: int
    player_id: str
    opponent_id: str
    shot_type: ShotType
    outcome: ShotOutcome
    t_c: float | None              # contact time; None iff no_contact
    t_r: float                     # clip length / end of recovery
    contact_pos: tuple[float, float, float] | None
    t_b: float | None              # ball bounce time of the hit shot
    placement: tuple[float, float] | None
    player_trace: np.ndarray       # (n, 2)
    opponent_trace: np.ndarray     # (n, 2)
    pose_trace: np.ndarray         # (n, 14, 2), local normalized frame
    incoming_contact: tuple[float, float, float] | None = None
    incoming_bounce: tuple[float, float] | None = None
    trace_dt: float = TRACE_DT

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ShotCycleClip):
            return NotImplemented
        scalar = ("clip_id", "player_id", "opponent_id", "shot_type", "outcome",
                  "t_c", "t_r", "contact_pos", "t_b", "placement",
                  "incoming_contact", "incoming_bounce", "trace_dt")
        if any(getattr(self, f) != getattr(other, f) for f in scalar):
            return False
        return (np.array_equal(self.player_trace, other.player_trace)
                and np.array_equal(self.opponent_trace, other.opponent_trace)
                and np.array_equal(self.pose_trace, other.pose_trace))

    # Derived quantities ---------------------------------------------------

    @property
    def n_frames(self) -> int:
        return len(self.player_trace)

    @property
    def start_pos(self) -> np.ndarray:
        return self.player_trace[0]

    @property
    def recovery_pos(self) -> np.ndarray:
        return self.player_trace[-1]

    @property
    def start_velocity(self) -> np.ndarray:
        if self.n_frames < 2:
            return np.zeros(2)
        return (self.player_trace[1] - self.player_trace[0]) / self.trace_dt

    @property
    def start_pose(self) -> np.ndarray:
        return self.pose_trace[0]

    @property
    def v_b(self) -> float | None:
        """Average ground speed of the hit shot from contact to bounce."""
        if self.contact_pos is None or self.placement is None or self.t_b is None:
            return None
        dt = self.t_b - self.t_c
        if dt <= 0:
            return None
        d = math.hypot(self.placement[0] - self.contact_pos[0],
                       self.placement[1] - self.contact_pos[1])
        return d / dt

    def trace_at(self, t: float) -> np.ndarray:
        """Player position at clip time t (clamped linear interpolation)."""
        return self._interp(self.player_trace, t)

    def opponent_at(self, t: float) -> np.ndarray:
        return self._interp(self.opponent_trace, t)

    def pose_at(self, t: float) -> np.ndarray:
        i = t / self.trace_dt
        lo = int(np.clip(math.floor(i), 0, self.n_frames - 1))
        hi = int(np.clip(lo + 1, 0, self.n_frames - 1))
        frac = np.clip(i - lo, 0.0, 1.0)
        return (1 - frac) * self.pose_trace[lo] + frac * self.pose_trace[hi]

    def _interp(self, trace: np.ndarray, t: float) -> np.ndarray:
        i = t / self.trace_dt
        lo = int(np.clip(math.floor(i), 0, len(trace) - 1))
        hi = int(np.clip(lo + 1, 0, len(trace) - 1))
        frac = np.clip(i - lo, 0.0, 1.0)
        return (1 - frac) * trace[lo] + frac * trace[hi]

    def mirrored(self) -> "ShotCycleClip":
        """The clip rotated 180 degrees about the net center."""
        def flip3(p):
            return None if p is None else (-p[0], -p[1], p[2])

        def flip2(p):
            return None if p is None else (-p[0], -p[1])

        return ShotCycleClip(
            clip_id=self.clip_id,
            player_id=self.player_id,
            opponent_id=self.opponent_id,
            shot_type=self.shot_type,
            outcome=self.outcome,
            t_c=self.t_c,
            t_r=self.t_r,
            contact_pos=flip3(self.contact_pos),
            t_b=self.t_b,
            placement=flip2(self.placement),
            player_trace=-self.player_trace,
            opponent_trace=-self.opponent_trace,
            pose_trace=self.pose_trace.copy(),
            incoming_contact=flip3(self.incoming_contact),
            incoming_bounce=flip2(self.incoming_bounce),
            trace_dt=self.trace_dt,
        )

    @property
    def is_far_side(self) -> bool:
        ref_y = self.contact_pos[1] if self.contact_pos is not None \
            else float(np.mean(self.player_trace[:, 1]))
        return ref_y < 0


def validate_clip(clip: ShotCycleClip) -> list[str]:
    """Invariant violations for one clip (empty when valid)."""
    errs: list[str] = []

    def err(msg: str) -> None:
        errs.append(f"clip {clip.clip_id}: {msg}")

    if clip.outcome is ShotOutcome.NO_CONTACT:
        if clip.t_c is not None or clip.contact_pos is not None:
            err("no_contact clip must not carry contact annotations")
    else:
        if clip.t_c is None or clip.contact_pos is None:
            err("contact clip missing t_c or contact position")
        elif not 0 < clip.t_c < clip.t_r:
            err(f"t_c={clip.t_c} outside (0, t_r={clip.t_r})")
        if clip.t_b is not None and clip.t_c is not None and clip.t_c >= clip.t_b:
            err(f"ball bounce t_b={clip.t_b} not after contact t_c={clip.t_c}")
        if clip.outcome in (ShotOutcome.IN_PLAY, ShotOutcome.WINNER):
            if clip.placement is None:
                err("in-court shot missing placement")
            elif clip.contact_pos is not None \
                    and clip.placement[1] * clip.contact_pos[1] >= 0:
                err("placement must lie on the opponent's side")

    if clip.t_r <= 0:
        err(f"t_r={clip.t_r} must be positive")
    n = clip.n_frames
    if n < 2:
        err("trace must have at least two frames")
    else:
        expected = round(clip.t_r / clip.trace_dt) + 1
        if n != expected or abs((n - 1) * clip.trace_dt - clip.t_r) > clip.trace_dt / 2:
            err(f"trace has {n} frames; [0, {clip.t_r}] at dt={clip.trace_dt} "
                f"needs {expected}")
    if clip.opponent_trace.shape != clip.player_trace.shape:
        err("player and opponent traces differ in length")
    if clip.pose_trace.shape != (n, POSE_KEYPOINTS, 2):
        err(f"pose trace shape {clip.pose_trace.shape} != ({n}, {POSE_KEYPOINTS}, 2)")
    for name, arr in (("player_trace", clip.player_trace),
                      ("opponent_trace", clip.opponent_trace),
                      ("pose_trace", clip.pose_trace)):
        if not np.all(np.isfinite(arr)):
            err(f"{name} contains non-finite values")
    return errs


@dataclass
class ClipDatabase:
    court: CourtSpec
    flight: FlightParams
    players: dict[str, str]        # player id -> "right" | "left"
    clips: list[ShotCycleClip] = field(default_factory=list)
    trace_dt: float = TRACE_DT

    def __post_init__(self) -> None:
        self._by_player: dict[str, list[int]] = {}
        self._by_shot: dict[ShotType, list[int]] = {}
        self._by_outcome: dict[ShotOutcome, list[int]] = {}
        self._by_id: dict[int, int] = {}
        self._search_indexes: dict = {}
        for i, c in enumerate(self.clips):
            self._index_one(i, c)

    def _index_one(self, i: int, c: ShotCycleClip) -> None:
        self._by_player.setdefault(c.player_id, []).append(i)
        self._by_shot.setdefault(c.shot_type, []).append(i)
        self._by_outcome.setdefault(c.outcome, []).append(i)
        if c.clip_id in self._by_id:
            raise ValidationError([f"clip {c.clip_id}: duplicate id"])
        self._by_id[c.clip_id] = i

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClipDatabase):
            return NotImplemented
        return (self.court == other.court and self.flight == other.flight
                and self.players == other.players
                and self.trace_dt == other.trace_dt
                and self.clips == other.clips)

    def __len__(self) -> int:
        return len(self.clips)

    def clip(self, clip_id: int) -> ShotCycleClip:
        return self.clips[self._by_id[clip_id]]

    def for_player(self, player_id: str,
                   opponent_id: str | None = None) -> list[ShotCycleClip]:
        out = [self.clips[i] for i in self._by_player.get(player_id, [])]
        if opponent_id is not None:
            out = [c for c in out if c.opponent_id == opponent_id]
        return out

    def serve_clips(self, player_id: str) -> list[ShotCycleClip]:
        return [c for c in self.for_player(player_id)
                if c.shot_type is ShotType.SERVE and c.outcome.has_contact]

    def handedness(self, player_id: str) -> str:
        return self.players.get(player_id, "right")

    def validate(self) -> None:
        failures: list[str] = []
        for c in self.clips:
            failures.extend(validate_clip(c))
        if failures:
            raise ValidationError(failures)

    def stats_rows(self) -> list[dict]:
        """Per-player shot-type counts plus total count and duration (min)."""
        rows = []
        for pid in sorted(self._by_player):
            clips = self.for_player(pid)
            row: dict = {"player": pid}
            for st in ShotType:
                row[st.value] = sum(1 for c in clips if c.shot_type is st)
            row["total"] = len(clips)
            row["duration_min"] = round(sum(c.t_r for c in clips) / 60.0, 1)
            rows.append(row)
        return rows

    def fit_consistency_report(self, tolerance: float = 0.5) -> dict:
        """How many in-play clips admit a feasible contact->bounce refit.

        Asserted for synthetic databases by tests; for ingested data this
        is informational only.
        """
        from .physics import NoFeasibleTrajectory, fit_launch_to_bounce, fit_meets_tolerance

        checked = feasible = 0
        for c in self.clips:
            if not c.outcome.has_contact or c.placement is None or c.t_b is None:
                continue
            checked += 1
            speed = c.v_b
            if speed is None or speed <= 0:
                continue
            try:
                traj = fit_launch_to_bounce(c.contact_pos, c.placement, speed,
                                            _spin_for(c.shot_type)[0],
                                            _spin_for(c.shot_type)[1],
                                            self.flight, self.court)
            except NoFeasibleTrajectory:
                continue
            if fit_meets_tolerance(traj, c.placement, speed):
                feasible += 1
        return {"checked": checked, "feasible": feasible}


def _spin_for(shot_type: ShotType):
    from .physics import SpinKind
    from .shots import DEFAULT_SHOT_SPIN

    kind_name, magnitude = DEFAULT_SHOT_SPIN[shot_type]
    return SpinKind(kind_name), magnitude


# Serialization -------------------------------------------------------------

def _round(x: float | None, nd: int = 6):
    return None if x is None else round(float(x), nd)


def _round_tuple(t, nd: int = 6):
    return None if t is None else [round(float(v), nd) for v in t]


def _round_array(a: np.ndarray, nd: int = 6) -> list:
    return np.round(a, nd).tolist()


def clip_to_record(clip: ShotCycleClip) -> dict:
    return {
        "id": clip.clip_id,
        "player": clip.player_id,
        "opponent": clip.opponent_id,
        "shot": clip.shot_type.value,
        "outcome": clip.outcome.value,
        "t_c": _round(clip.t_c),
        "t_r": _round(clip.t_r),
        "contact": _round_tuple(clip.contact_pos),
        "t_b": _round(clip.t_b),
        "placement": _round_tuple(clip.placement),
        "in_contact": _round_tuple(clip.incoming_contact),
        "in_bounce": _round_tuple(clip.incoming_bounce),
        "ptrace": _round_array(clip.player_trace),
        "otrace": _round_array(clip.opponent_trace),
        "pose": _round_array(clip.pose_trace),
    }


def clip_from_record(rec: dict, trace_dt: float) -> ShotCycleClip:
    def tup(v):
        return None if v is None else tuple(v)

    try:
        return ShotCycleClip(
            clip_id=int(rec["id"]),
            player_id=str(rec["player"]),
            opponent_id=str(rec["opponent"]),
            shot_type=ShotType(rec["shot"]),
            outcome=ShotOutcome(rec["outcome"]),
            t_c=rec.get("t_c"),
            t_r=float(rec["t_r"]),
            contact_pos=tup(rec.get("contact")),
            t_b=rec.get("t_b"),
            placement=tup(rec.get("placement")),
            player_trace=np.asarray(rec["ptrace"], dtype=float),
            opponent_trace=np.asarray(rec["otrace"], dtype=float),
            pose_trace=np.asarray(rec["pose"], dtype=float),
            incoming_contact=tup(rec.get("in_contact")),
            incoming_bounce=tup(rec.get("in_bounce")),
            trace_dt=trace_dt,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed clip record (id={rec.get('id')}): {e}") from e


def save_db(db: ClipDatabase, path) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "trace_dt": db.trace_dt,
        "court": vars(db.court),
        "flight": vars(db.flight),
        "players": db.players,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for clip in db.clips:
            f.write(json.dumps(clip_to_record(clip), sort_keys=True) + "\n")


def dumps_db(db: ClipDatabase) -> bytes:
    """Serialized database bytes (same content save_db writes)."""
    import io

    buf = io.StringIO()
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "trace_dt": db.trace_dt,
        "court": vars(db.court),
        "flight": vars(db.flight),
        "players": db.players,
    }
    buf.write(json.dumps(header, sort_keys=True) + "\n")
    for clip in db.clips:
        buf.write(json.dumps(clip_to_record(clip), sort_keys=True) + "\n")
    return buf.getvalue().encode("utf-8")


def load_db(path) -> ClipDatabase:
    """Load, normalize (far-side clips rotated to the near side), validate.

    Raises ParseError for malformed records and ValidationError (with all
    failing clip ids) when any clip breaks an invariant.
    """
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty database file: missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed header: {e}") from e
    if header.get("format") != FORMAT_NAME:
        raise ParseError(f"not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {header.get('version')}")

    trace_dt = float(header.get("trace_dt", TRACE_DT))
    court = CourtSpec(**header.get("court", {}))
    flight = FlightParams(**header.get("flight", {}))
    players = {str(k): str(v) for k, v in header.get("players", {}).items()}

    clips: list[ShotCycleClip] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"line {lineno}: invalid JSON: {e}") from e
        clip = clip_from_record(rec, trace_dt)
        if clip.is_far_side:
            clip = clip.mirrored()
        clips.append(clip)

    db = ClipDatabase(court=court, flight=flight, players=players,
                      clips=clips, trace_dt=trace_dt)
    db.validate()
    return db
