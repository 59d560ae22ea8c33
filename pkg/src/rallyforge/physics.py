"""Ball flight: drag + spin-lift ODE, bounce model, trajectory fitting.

The planar flight model is

    dv_h/dt = -k v (C_d v_h + C_L v_z)
    dv_z/dt =  k v (C_L v_h - C_d v_z) - g

with v the speed, C_L = 1 / (2 + v / v_spin) for underspin, the sign of
C_L flipped for topspin, and C_L = 0 when v_spin = 0.  The bounce scales
the vertical speed by the restitution coefficient, the horizontal speed
by a retention factor, and always leaves the ball with topspin.

Fitting between two contacts is a grid search over launch velocity
components and spin: a candidate is valid if it clears the net and, for
non-volley shots, bounces in the receiver's court; among valid candidates
the one minimizing a weighted position/time residual at the receiving
contact wins (lowest grid index on ties).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import _kernels
from .court import CourtSpec


class SpinKind(str, Enum):
    TOPSPIN = "topspin"
    UNDERSPIN = "underspin"

    @property
    def lift_sign(self) -> float:
        # Positive lift (float) for underspin, flipped for topspin.
        return -1.0 if self is SpinKind.TOPSPIN else 1.0


class PhysicsError(Exception):
    pass


class NeverLands(PhysicsError):
    """The ball neither landed nor reached a stop plane within max_time."""


class NoFeasibleTrajectory(PhysicsError):
    def __init__(self, message: str, best_residual: float = math.inf):
        super().__init__(message)
        self.best_residual = best_residual


class NoIntersection(PhysicsError):
    """The trajectory never crosses the requested plane."""


@dataclass(frozen=True)
class FlightParams:
    """Physical constants of flight and bounce.

    k is rho*pi*R^2/(2m); the default uses a standard 57 g, 33 mm ball at
    sea-level air density.  The bounce leaves the ball with topspin of
    magnitude spin_retention * |v_spin_in| + spin_kick * |v_h_in|.
    """

    k: float = 0.0361
    drag: float = 0.55
    gravity: float = 9.81
    restitution: float = 0.75
    horizontal_retention: float = 0.8
    spin_retention: float = 0.6
    spin_kick: float = 0.2

    def __post_init__(self) -> None:
        if self.k <= 0 or self.drag < 0 or self.gravity <= 0:
            raise ValueError("k and gravity must be positive, drag non-negative")
        if not 0 < self.restitution <= 1:
            raise ValueError("restitution must be in (0, 1]")
        if not 0 < self.horizontal_retention <= 1:
            raise ValueError("horizontal_retention must be in (0, 1]")
        if self.spin_retention < 0 or self.spin_kick < 0:
            raise ValueError("bounce spin factors must be non-negative")


@dataclass(frozen=True)
class LaunchState:
    """Launch of a planar flight: origin with height, horizontal unit
    direction in court XY, speeds along/vertical to the plane, and spin."""

    origin: tuple[float, float, float]
    direction: tuple[float, float]
    v_h: float
    v_z: float
    v_spin: float = 0.0
    spin_kind: SpinKind = SpinKind.TOPSPIN

    def __post_init__(self) -> None:
        if self.v_spin < 0:
            raise ValueError("v_spin must be non-negative")


@dataclass(frozen=True)
class FlightState:
    """Instantaneous 3D ball state for single-step integration."""

    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    v_spin: float = 0.0
    spin_kind: SpinKind = SpinKind.TOPSPIN


@dataclass
class BallTrajectory:
    """A simulated flight: fixed-dt samples plus bounce / net metadata.

    Times are absolute (t0 is the launch instant).  For volley fits the
    bounce fields describe where the ball would have landed had it not
    been contacted; bounce_is_virtual marks that case and the samples end
    at the receiving contact instead.
    """

    launch: LaunchState
    t0: float
    times: np.ndarray
    positions: np.ndarray          # (n, 3)
    end_time: float
    end_pos: np.ndarray            # (3,)
    bounce_time: float | None = None
    bounce_pos: tuple[float, float] | None = None
    bounce_is_virtual: bool = False
    bounce_in: tuple[float, float, float] | None = None   # (v_h, v_z, v_spin)
    bounce_out: tuple[float, float, float] | None = None
    net_clearance: float | None = None
    fit_residual: float | None = None

    def position_at(self, t: float) -> np.ndarray:
        """Linearly interpolated position at absolute time t (clamped)."""
        x = np.interp(t, self.times, self.positions[:, 0])
        y = np.interp(t, self.times, self.positions[:, 1])
        z = np.interp(t, self.times, self.positions[:, 2])
        return np.array([x, y, z])

    def positions_at(self, ts: np.ndarray) -> np.ndarray:
        out = np.empty((len(ts), 3))
        for i in range(3):
            out[:, i] = np.interp(ts, self.times, self.positions[:, i])
        return out

    def shifted(self, t0: float) -> "BallTrajectory":
        """Same flight re-based so that launch happens at absolute t0."""
        dt = t0 - self.t0
        return replace(
            self,
            t0=t0,
            times=self.times + dt,
            end_time=self.end_time + dt,
            bounce_time=None if self.bounce_time is None else self.bounce_time + dt,
        )

    def mirrored(self) -> "BallTrajectory":
        """The flight rotated 180 degrees about the net center."""
        o = self.launch.origin
        d = self.launch.direction
        launch = replace(self.launch, origin=(-o[0], -o[1], o[2]),
                         direction=(-d[0], -d[1]))
        positions = self.positions * np.array([-1.0, -1.0, 1.0])
        end_pos = self.end_pos * np.array([-1.0, -1.0, 1.0])
        bpos = None if self.bounce_pos is None else (-self.bounce_pos[0], -self.bounce_pos[1])
        return replace(self, launch=launch, positions=positions,
                       end_pos=end_pos, bounce_pos=bpos)


@dataclass(frozen=True)
class GridSpec:
    """Launch-parameter grid and residual settings for trajectory fitting.

    The scan integrates candidates with a cheap fixed-step scheme at
    scan_dt (capped at 5 ms); the winning candidate is re-simulated at the
    fine step for the returned trajectory.  Candidate order (and therefore
    tie-breaking) is v_h-major, then v_z, then spin value, then spin kind
    (topspin first).
    """

    v_h_min: float = 5.0
    v_h_max: float = 60.0
    v_h_steps: int = 56
    v_z_min: float = -10.0
    v_z_max: float = 15.0
    v_z_steps: int = 26
    v_spins: tuple[float, ...] = (0.0, 2.0, 5.0, 10.0, 20.0)
    w_pos: float = 1.0
    w_time: float = 10.0
    tolerance: float = 0.5
    scan_dt: float = 4e-3
    time_slack: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.scan_dt <= 5e-3:
            raise ValueError("scan_dt must be in (0, 5 ms]")

    def candidates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """SoA candidate arrays (v_h, v_z, v_spin, lift_sign) in tie-break order."""
        vh = np.linspace(self.v_h_min, self.v_h_max, self.v_h_steps)
        vz = np.linspace(self.v_z_min, self.v_z_max, self.v_z_steps)
        vs = np.asarray(self.v_spins, dtype=float)
        kinds = np.array([SpinKind.TOPSPIN.lift_sign, SpinKind.UNDERSPIN.lift_sign])
        g = np.meshgrid(vh, vz, vs, kinds, indexing="ij")
        return tuple(a.ravel() for a in g)


FINE_DT = 1e-3


def _norm2(x: float, y: float) -> float:
    return math.hypot(x, y)


def step_flight(state: FlightState, dt: float, params: FlightParams) -> FlightState:
    """Advance a 3D ball state by one RK4 step of the planar flight ODE.

    The horizontal direction is taken from the current horizontal
    velocity; with no horizontal motion the spin lift has no defined
    horizontal direction and only gravity/drag act vertically.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, z = state.position
    vx, vy, vz = state.velocity
    vh = _norm2(vx, vy)
    if vh > 0:
        ux, uy = vx / vh, vy / vh
    else:
        ux, uy = 0.0, 0.0
    ls = state.spin_kind.lift_sign if state.v_spin > 0 else 0.0
    s1, z1, vh1, vz1 = _kernels._rk4(0.0, z, vh, vz, state.v_spin, ls,
                                     params.k, params.drag, params.gravity, dt)
    return FlightState(
        position=(x + ux * s1, y + uy * s1, z1),
        velocity=(ux * vh1, uy * vh1, vz1),
        v_spin=state.v_spin,
        spin_kind=state.spin_kind,
    )


def _line_geometry(origin_xy: np.ndarray, direction: np.ndarray,
                   court: CourtSpec) -> tuple[float, float]:
    """(s_net, net_height) along the flight line; s_net = inf if the line
    never crosses the net plane in the direction of travel."""
    ux, uy = direction
    if abs(uy) < 1e-12:
        return math.inf, court.net_height_center
    s_net = (0.0 - origin_xy[1]) / uy
    if s_net <= 0:
        return math.inf, court.net_height_center
    x_cross = origin_xy[0] + ux * s_net
    return s_net, court.net_height_at(x_cross)


def simulate_trajectory(launch: LaunchState, params: FlightParams,
                        court: CourtSpec | None = None, *,
                        stop_plane_y: float | None = None,
                        max_time: float = 3.0,
                        dt: float = FINE_DT,
                        t0: float = 0.0) -> BallTrajectory:
    """Simulate a flight until it crosses the stop plane (a vertical plane
    parallel to the net at court y = stop_plane_y), lands a second time,
    or reaches max_time.

    Raises NeverLands if the ball neither touches the ground nor reaches
    the stop plane within max_time.
    """
    court = court or CourtSpec()
    if launch.origin[2] <= 0:
        raise ValueError("launch origin must be above the ground")
    if dt <= 0 or dt > 5e-3:
        raise ValueError("dt must be in (0, 5 ms]")
    origin_xy = np.array(launch.origin[:2])
    u = np.array(launch.direction, dtype=float)
    nu = _norm2(u[0], u[1])
    u = u / nu if nu > 0 else np.array([0.0, 0.0])
    s_net, net_h = _line_geometry(origin_xy, u, court)

    has_plane = stop_plane_y is not None
    if has_plane:
        uy = u[1]
        if abs(uy) < 1e-12:
            raise ValueError("stop plane unreachable: flight parallel to the net")
        s_plane = (stop_plane_y - origin_xy[1]) / uy
        if s_plane <= 0:
            raise ValueError("stop plane lies behind the launch")
    else:
        s_plane = math.inf

    ls = launch.spin_kind.lift_sign if launch.v_spin > 0 else 0.0
    (n, ts, ss, zs, status, bounced, bounce_t, bounce_s, b_in, b_out,
     clearance, end) = _kernels.simulate_flight(
        launch.origin[2], launch.v_h, launch.v_z, launch.v_spin, ls,
        params.k, params.drag, params.gravity,
        params.restitution, params.horizontal_retention,
        params.spin_retention, params.spin_kick,
        dt, max_time, s_net, net_h, s_plane, has_plane)

    if status == _kernels.END_MAX_TIME and not bounced and not has_plane:
        raise NeverLands(f"ball stayed above ground for {max_time} s")
    if status == _kernels.END_MAX_TIME and not bounced and has_plane:
        raise NeverLands(
            f"ball neither landed nor reached the plane within {max_time} s")

    ts = ts[:n].copy()
    ss = ss[:n]
    zs = zs[:n]
    positions = np.empty((n, 3))
    positions[:, 0] = origin_xy[0] + u[0] * ss
    positions[:, 1] = origin_xy[1] + u[1] * ss
    positions[:, 2] = zs[:n]

    end_t, end_s, end_z, _, _, _, _ = end
    end_pos = np.array([origin_xy[0] + u[0] * end_s,
                        origin_xy[1] + u[1] * end_s,
                        max(end_z, 0.0)])

    traj = BallTrajectory(
        launch=launch,
        t0=t0,
        times=ts + t0,
        positions=positions,
        end_time=end_t + t0,
        end_pos=end_pos,
        net_clearance=None if math.isnan(clearance) else float(clearance),
    )
    if bounced:
        traj.bounce_time = float(bounce_t) + t0
        traj.bounce_pos = (float(origin_xy[0] + u[0] * bounce_s),
                           float(origin_xy[1] + u[1] * bounce_s))
        traj.bounce_in = tuple(float(v) for v in b_in)
        traj.bounce_out = tuple(float(v) for v in b_out)
    return traj


def _in_court_window(origin_xy: np.ndarray, u: np.ndarray, receiver_sign: float,
                     court: CourtSpec) -> tuple[float, float]:
    """[s_lo, s_hi] along the flight line where a bounce lands inside the
    singles court on the receiver's side (empty window -> (inf, -inf))."""
    lo, hi = 0.0, math.inf
    half_w = court.singles_width / 2
    half_l = court.half_length
    for axis, bound_lo, bound_hi in ((0, -half_w, half_w),
                                     (1, -half_l if receiver_sign < 0 else 0.0,
                                      0.0 if receiver_sign < 0 else half_l)):
        p0 = origin_xy[axis]
        du = u[axis]
        if abs(du) < 1e-12:
            if not bound_lo <= p0 <= bound_hi:
                return math.inf, -math.inf
            continue
        a = (bound_lo - p0) / du
        b = (bound_hi - p0) / du
        if a > b:
            a, b = b, a
        lo = max(lo, a)
        hi = min(hi, b)
    if lo > hi:
        return math.inf, -math.inf
    return lo, hi


def evaluate_fit_grid(t_a: float, pos_a, t_b: float, pos_b,
                      params: FlightParams, court: CourtSpec,
                      grid: GridSpec, volley: bool) -> np.ndarray:
    """Residual per grid candidate (inf for invalid), in grid order."""
    pos_a = np.asarray(pos_a, dtype=float)
    pos_b = np.asarray(pos_b, dtype=float)
    if not t_a < t_b:
        raise ValueError("contact_a must precede contact_b")
    if not pos_a[1] * pos_b[1] < 0:
        raise ValueError("contacts must lie on opposite sides of the net")
    origin_xy = pos_a[:2]
    delta = pos_b[:2] - origin_xy
    d = _norm2(delta[0], delta[1])
    if d < 1e-9:
        raise ValueError("contacts are horizontally coincident")
    u = delta / d
    s_net, net_h = _line_geometry(origin_xy, u, court)
    receiver_sign = 1.0 if pos_b[1] > 0 else -1.0
    s_lo, s_hi = _in_court_window(origin_xy, u, receiver_sign, court)

    vhs, vzs, vspins, lss = grid.candidates()
    t_target = t_b - t_a
    return _kernels.scan_fit_grid(
        vhs, vzs, vspins, lss, pos_a[2],
        params.k, params.drag, params.gravity,
        params.restitution, params.horizontal_retention,
        params.spin_retention, params.spin_kick,
        grid.scan_dt, s_net, net_h, d, s_lo, s_hi, pos_b[2],
        t_target, t_target + grid.time_slack,
        grid.w_pos, grid.w_time, volley)


def fit_trajectory(t_a: float, pos_a, t_b: float, pos_b,
                   params: FlightParams, court: CourtSpec | None = None,
                   grid: GridSpec | None = None,
                   volley: bool = False) -> BallTrajectory:
    """Fit a flight between two contacts by grid search over the launch.

    Returns the trajectory of the best valid candidate, re-simulated at
    the fine step, ending at the receiving contact's net-parallel plane;
    its times start at t_a.  For volley fits the virtual bounce (where
    the ball would have landed) is computed past the contact plane.

    Raises NoFeasibleTrajectory when no candidate is valid or the best
    residual exceeds the grid tolerance.
    """
    court = court or CourtSpec()
    grid = grid or GridSpec()
    pos_a = np.asarray(pos_a, dtype=float)
    pos_b = np.asarray(pos_b, dtype=float)
    residuals = evaluate_fit_grid(t_a, pos_a, t_b, pos_b, params, court, grid, volley)
    best = int(np.argmin(residuals))  # first occurrence wins ties
    best_res = float(residuals[best])
    if not math.isfinite(best_res):
        raise NoFeasibleTrajectory("no grid candidate clears the net and lands "
                                   "in the receiving court", best_res)
    if best_res > grid.tolerance:
        raise NoFeasibleTrajectory(
            f"best fit residual {best_res:.3f} exceeds tolerance {grid.tolerance}",
            best_res)

    vhs, vzs, vspins, lss = grid.candidates()
    delta = pos_b[:2] - pos_a[:2]
    d = _norm2(delta[0], delta[1])
    u = delta / d
    kind = SpinKind.TOPSPIN if lss[best] < 0 else SpinKind.UNDERSPIN
    launch = LaunchState(origin=tuple(pos_a), direction=(u[0], u[1]),
                         v_h=float(vhs[best]), v_z=float(vzs[best]),
                         v_spin=float(vspins[best]), spin_kind=kind)
    traj = simulate_trajectory(launch, params, court,
                               stop_plane_y=float(pos_b[1]),
                               max_time=(t_b - t_a) + grid.time_slack + 0.5,
                               t0=t_a)
    if volley and traj.bounce_time is None:
        _attach_virtual_bounce(traj, params, court)
    traj.fit_residual = best_res
    return traj


def _attach_virtual_bounce(traj: BallTrajectory, params: FlightParams,
                           court: CourtSpec) -> None:
    """Continue a volley flight past its end to find where it would land."""
    t, s0 = traj.end_time, traj.end_pos
    launch = traj.launch
    # Re-launch from the end sample using the (unchanged in flight) spin;
    # the end velocity is recovered from the last two samples.
    if len(traj.times) < 2:
        return
    dtl = traj.times[-1] - traj.times[-2]
    if dtl <= 0:
        return
    vel = (traj.positions[-1] - traj.positions[-2]) / dtl
    vh = _norm2(vel[0], vel[1])
    cont = LaunchState(origin=tuple(s0), direction=launch.direction,
                       v_h=vh, v_z=float(vel[2]),
                       v_spin=launch.v_spin, spin_kind=launch.spin_kind)
    if cont.origin[2] <= 0:
        return
    try:
        ghost = simulate_trajectory(cont, params, court, max_time=3.0, t0=t)
    except NeverLands:
        return
    if ghost.bounce_time is not None:
        traj.bounce_time = ghost.bounce_time
        traj.bounce_pos = ghost.bounce_pos
        traj.bounce_is_virtual = True


def fit_launch_to_bounce(origin, target_xy, ground_speed: float,
                         spin_kind: SpinKind, v_spin: float,
                         params: FlightParams, court: CourtSpec | None = None, *,
                         w_pos: float = 1.0, w_time: float = 10.0,
                         t0: float = 0.0) -> BallTrajectory:
    """Find a launch whose first bounce lands at target_xy with the given
    average contact-to-bounce ground speed.

    The target may lie outside the court (an error shot still has a real
    flight); the only validity constraint is clearing the net when the
    path spans it.  The returned trajectory continues past the bounce
    until it next touches down or times out.  fit_residual records the
    achieved (position + time) residual; callers wanting a hard guarantee
    should check fit_meets_tolerance on the result.

    Raises NoFeasibleTrajectory when no candidate produces a net-clearing
    bounce at all.
    """
    court = court or CourtSpec()
    origin = np.asarray(origin, dtype=float)
    target_xy = np.asarray(target_xy, dtype=float)
    if origin[2] <= 0:
        raise ValueError("launch origin must be above the ground")
    if ground_speed <= 0:
        raise ValueError("ground_speed must be positive")
    delta = target_xy - origin[:2]
    d = _norm2(delta[0], delta[1])
    if d < 0.05:
        raise NoFeasibleTrajectory("bounce target is on top of the contact")
    u = delta / d
    t_target = d / ground_speed
    s_net, net_h = _line_geometry(origin[:2], u, court)
    if not (0 < s_net < d + 5.0):
        s_net = math.inf
    ls = spin_kind.lift_sign if v_spin > 0 else 0.0
    t_cap = min(t_target * 1.6 + 0.4, 4.0)

    def scan(vh_lo, vh_hi, nvh, vz_lo, vz_hi, nvz):
        vhs = np.linspace(vh_lo, vh_hi, nvh)
        vzs = np.linspace(vz_lo, vz_hi, nvz)
        VH, VZ = np.meshgrid(vhs, vzs, indexing="ij")
        res = _kernels.scan_bounce_grid(
            VH.ravel(), VZ.ravel(), origin[2], v_spin, ls,
            params.k, params.drag, params.gravity, 4e-3,
            s_net, net_h, d, t_target, t_cap, w_pos, w_time)
        i = int(np.argmin(res))
        return float(VH.ravel()[i]), float(VZ.ravel()[i]), float(res[i]), \
            (vhs[1] - vhs[0] if nvh > 1 else 1.0), (vzs[1] - vzs[0] if nvz > 1 else 1.0)

    vh_lo = max(2.0, 0.7 * ground_speed)
    vh_hi = min(75.0, max(2.8 * ground_speed, vh_lo + 5.0))
    vh, vz, res, dvh, dvz = scan(vh_lo, vh_hi, 30, -8.0, 12.0, 21)
    for _ in range(2):  # refine around the incumbent, one cell wide
        if not math.isfinite(res):
            break
        vh, vz, res, dvh, dvz = scan(max(0.5, vh - dvh), vh + dvh, 11,
                                     vz - dvz, vz + dvz, 11)
    if not math.isfinite(res):
        raise NoFeasibleTrajectory("no launch clears the net and lands", res)

    launch = LaunchState(origin=tuple(origin), direction=(u[0], u[1]),
                         v_h=vh, v_z=vz, v_spin=v_spin, spin_kind=spin_kind)
    traj = simulate_trajectory(launch, params, court, max_time=4.0, t0=t0)
    traj.fit_residual = res
    return traj


def fit_meets_tolerance(traj: BallTrajectory, target_xy, ground_speed: float,
                        pos_tol: float = 0.2,
                        speed_tol_frac: float = 0.05) -> bool:
    """Check a bounce fit against its placement/speed tolerances."""
    if traj.bounce_time is None or traj.bounce_pos is None:
        return False
    target_xy = np.asarray(target_xy, dtype=float)
    err = _norm2(traj.bounce_pos[0] - target_xy[0], traj.bounce_pos[1] - target_xy[1])
    if err > pos_tol:
        return False
    o = traj.launch.origin
    d = _norm2(traj.bounce_pos[0] - o[0], traj.bounce_pos[1] - o[1])
    dt = traj.bounce_time - traj.t0
    if dt <= 0:
        return False
    v = d / dt
    return abs(v - ground_speed) <= speed_tol_frac * ground_speed


def estimate_contact_point(player_x: float, player_y: float, shot_type,
                           handedness: str, reach: float = 0.8) -> tuple[float, float, float]:
    """Reach heuristic: offset the player laterally toward the racket side
    (forehand: racket-hand side; backhand: the opposite), at a per-shot
    contact height.  Serves contact on the racket side.
    """
    from .shots import CONTACT_HEIGHT  # local import to avoid cycle at module load

    if handedness not in ("right", "left"):
        raise ValueError(f"unknown handedness: {handedness!r}")
    # The x direction of the player's right hand: -x on the near side.
    right_dir = -1.0 if player_y >= 0 else 1.0
    racket_dir = right_dir if handedness == "right" else -right_dir
    offset = racket_dir if not shot_type.is_backhand else -racket_dir
    z = CONTACT_HEIGHT[shot_type]
    return (player_x + offset * reach, player_y, z)


def intercept(traj: BallTrajectory, plane_y: float) -> tuple[float, np.ndarray]:
    """First crossing of the net-parallel plane at court y = plane_y,
    excluding a crossing exactly at the trajectory start.

    Returns (time, position); raises NoIntersection if the flight ends
    before reaching the plane.
    """
    d = traj.positions[:, 1] - plane_y
    start = 0
    if d[0] == 0.0:
        nz = np.nonzero(d != 0.0)[0]
        if len(nz) == 0:
            raise NoIntersection("flight never leaves the plane")
        start = int(nz[0])
    sign = np.sign(d[start:])
    # Crossing between consecutive samples: sign change or exact hit.
    change = np.nonzero(sign[:-1] * sign[1:] <= 0)[0]
    if len(change) == 0:
        raise NoIntersection(f"flight ends before reaching plane y={plane_y}")
    i = start + int(change[0])
    d0, d1 = d[i], d[i + 1]
    frac = 0.0 if d1 == d0 else d0 / (d0 - d1)
    t = traj.times[i] + frac * (traj.times[i + 1] - traj.times[i])
    pos = traj.positions[i] + frac * (traj.positions[i + 1] - traj.positions[i])
    return float(t), pos
