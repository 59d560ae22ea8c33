"""rallyforge: data-driven tennis rally simulation.

Library layers, bottom up: court geometry and discretization, ball-flight
physics and trajectory fitting, the annotated shot-cycle clip database (a
synthetic generator stands in for ingested footage), per-player behavior
models, cost-based clip search, and the rally engine that runs the
shot-cycle loop.  A CLI (``rallyforge``) covers batch work and a stepwise
session service drives the browser court client.
"""

__version__ = "0.1.0"

from .court import BinConfig, CourtPosition, CourtRegion, CourtSpec, region_of, velocity_bin
from .physics import (
    BallTrajectory,
    FlightParams,
    GridSpec,
    LaunchState,
    SpinKind,
    fit_launch_to_bounce,
    fit_trajectory,
    intercept,
    simulate_trajectory,
    step_flight,
)
from .shots import ShotOutcome, ShotType

__all__ = [
    "BinConfig",
    "CourtPosition",
    "CourtRegion",
    "CourtSpec",
    "region_of",
    "velocity_bin",
    "BallTrajectory",
    "FlightParams",
    "GridSpec",
    "LaunchState",
    "SpinKind",
    "fit_launch_to_bounce",
    "fit_trajectory",
    "intercept",
    "simulate_trajectory",
    "step_flight",
    "ShotOutcome",
    "ShotType",
    "__version__",
]
