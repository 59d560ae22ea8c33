"""Court coordinate system, dimensions, and feature discretization.

Coordinate frame used everywhere in this package: the origin sits at the
center of the net on the ground plane.  x runs laterally (positive toward
the near player's ad side), y runs along the court (positive on the near
side, negative on the far side), z is height in meters.

Lateral region labels (deuce/center/ad) are side-relative: a player's
deuce band is the band on their own right when facing the net, so the
same label refers to mirrored x ranges on the two sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class Side(str, Enum):
    NEAR = "near"
    FAR = "far"


class Lateral(str, Enum):
    DEUCE = "deuce"
    CENTER = "center"
    AD = "ad"


class Depth(str, Enum):
    FRONT = "front"
    BACK = "back"


_LATERAL_ORDER = (Lateral.DEUCE, Lateral.CENTER, Lateral.AD)
_DEPTH_ORDER = (Depth.FRONT, Depth.BACK)


@dataclass(frozen=True)
class CourtSpec:
    """Court dimensions in meters (defaults are the ITF standard)."""

    length: float = 23.77            # baseline to baseline
    singles_width: float = 8.23
    doubles_width: float = 10.97
    service_line_dist: float = 6.40  # from net
    net_height_center: float = 0.914
    net_height_post: float = 1.07

    def __post_init__(self) -> None:
        dims = (self.length, self.singles_width, self.doubles_width,
                self.service_line_dist, self.net_height_center, self.net_height_post)
        if any(not (d > 0 and math.isfinite(d)) for d in dims):
            raise ValueError("all court dimensions must be strictly positive")
        if not self.singles_width < self.doubles_width:
            raise ValueError("singles_width must be smaller than doubles_width")
        if not self.service_line_dist < self.length / 2:
            raise ValueError("service line must lie between net and baseline")

    @property
    def half_length(self) -> float:
        return self.length / 2

    @property
    def lateral_band_width(self) -> float:
        return self.singles_width / 3

    @property
    def depth_boundary(self) -> float:
        """Distance from the net of the front/back split: midway between
        the service line and the baseline."""
        return (self.service_line_dist + self.half_length) / 2

    def net_height_at(self, x: float) -> float:
        """Net height at lateral offset x, linear between center and posts."""
        frac = min(abs(x) / (self.doubles_width / 2), 1.0)
        return self.net_height_center + frac * (self.net_height_post - self.net_height_center)


@dataclass(frozen=True)
class CourtPosition:
    """A point in court space; z defaults to the ground plane."""

    x: float
    y: float
    z: float = 0.0

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class CourtRegion:
    side: Side
    lateral: Lateral
    depth: Depth

    @property
    def cell(self) -> int:
        """Side-free index 0..5 used by the state descriptor."""
        return _LATERAL_ORDER.index(self.lateral) * 2 + _DEPTH_ORDER.index(self.depth)


@dataclass(frozen=True)
class BinConfig:
    """Uniform speed bins over [0, v_max); the top bin is open-ended."""

    v_max: float = 8.0
    n_bins: int = 5

    def __post_init__(self) -> None:
        if self.v_max <= 0 or self.n_bins < 1:
            raise ValueError("v_max must be positive and n_bins >= 1")


def region_of(x: float, y: float, spec: CourtSpec | None = None) -> CourtRegion:
    """Map a court position to its region (total via clamping).

    Lateral bands are three equal widths between the singles sidelines;
    positions wider than the sidelines clamp to the nearest band.  The
    front/back boundary lies midway between the service line and the
    baseline.  y = 0 counts as the near side.
    """
    spec = spec or CourtSpec()
    side = Side.NEAR if y >= 0 else Side.FAR
    # A player's right when facing the net is -x on the near side, +x far.
    x_rel = x if side is Side.NEAR else -x
    band = spec.lateral_band_width
    if x_rel < -band / 2:
        lateral = Lateral.DEUCE
    elif x_rel < band / 2:
        lateral = Lateral.CENTER
    else:
        lateral = Lateral.AD
    depth = Depth.FRONT if abs(y) < spec.depth_boundary else Depth.BACK
    return CourtRegion(side, lateral, depth)


def region_cell(x: float, y: float, spec: CourtSpec | None = None) -> int:
    """Side-free 0..5 region index of a position (see CourtRegion.cell)."""
    return region_of(x, y, spec).cell


def velocity_bin(speed: float, cfg: BinConfig | None = None) -> int:
    """Bin a speed magnitude; negatives clamp to bin 0, the top bin is open."""
    cfg = cfg or BinConfig()
    if not math.isfinite(speed) or speed >= cfg.v_max:
        return cfg.n_bins - 1
    if speed <= 0:
        return 0
    return int(speed / (cfg.v_max / cfg.n_bins))


def mirror_xy(x: float, y: float) -> tuple[float, float]:
    """Rotate a position 180 degrees about the net center.

    This maps the far side onto the near side while preserving handedness
    (a reflection would not), which is what lets one per-player model and
    clip set serve both sides of the court.
    """
    return (-x, -y)


def in_singles_court(x: float, y: float, spec: CourtSpec | None = None,
                     tol: float = 1e-9) -> bool:
    spec = spec or CourtSpec()
    return abs(x) <= spec.singles_width / 2 + tol and abs(y) <= spec.half_length + tol


def service_box_bounds(receiving_side: Side, court: Lateral,
                       spec: CourtSpec | None = None) -> tuple[float, float, float, float]:
    """(x_lo, x_hi, y_lo, y_hi) of a service box on the receiving side.

    ``court`` names the box from the receiver's perspective (deuce = the
    receiver's right half); only DEUCE and AD are valid.
    """
    spec = spec or CourtSpec()
    if court is Lateral.CENTER:
        raise ValueError("service boxes are deuce or ad only")
    half_w = spec.singles_width / 2
    # Receiver's right: -x when receiving on the near side, +x when far.
    right_is_negative_x = receiving_side is Side.NEAR
    deuce_box = (-half_w, 0.0) if right_is_negative_x else (0.0, half_w)
    ad_box = (0.0, half_w) if right_is_negative_x else (-half_w, 0.0)
    x_lo, x_hi = deuce_box if court is Lateral.DEUCE else ad_box
    if receiving_side is Side.NEAR:
        y_lo, y_hi = 0.0, spec.service_line_dist
    else:
        y_lo, y_hi = -spec.service_line_dist, 0.0
    return (x_lo, x_hi, y_lo, y_hi)


def in_service_box(x: float, y: float, receiving_side: Side, court: Lateral,
                   spec: CourtSpec | None = None, tol: float = 1e-9) -> bool:
    x_lo, x_hi, y_lo, y_hi = service_box_bounds(receiving_side, court, spec)
    return x_lo - tol <= x <= x_hi + tol and y_lo - tol <= y <= y_hi + tol


def all_regions() -> list[CourtRegion]:
    return [CourtRegion(s, l, d) for s in Side for l in _LATERAL_ORDER for d in _DEPTH_ORDER]
