"""Shot vocabulary shared by the physics, clip database, and behavior layers."""

from __future__ import annotations

from enum import Enum


class ShotType(str, Enum):
    SERVE = "serve"
    FOREHAND_TOPSPIN = "forehand_topspin"
    FOREHAND_UNDERSPIN = "forehand_underspin"
    BACKHAND_TOPSPIN = "backhand_topspin"
    BACKHAND_UNDERSPIN = "backhand_underspin"
    FOREHAND_VOLLEY = "forehand_volley"
    BACKHAND_VOLLEY = "backhand_volley"

    @property
    def is_serve(self) -> bool:
        return self is ShotType.SERVE

    @property
    def is_volley(self) -> bool:
        return self in (ShotType.FOREHAND_VOLLEY, ShotType.BACKHAND_VOLLEY)

    @property
    def is_groundstroke(self) -> bool:
        return not (self.is_serve or self.is_volley)

    @property
    def is_backhand(self) -> bool:
        return self in (ShotType.BACKHAND_TOPSPIN, ShotType.BACKHAND_UNDERSPIN,
                        ShotType.BACKHAND_VOLLEY)


class ShotOutcome(str, Enum):
    IN_PLAY = "in_play"
    WINNER = "winner"
    ERROR = "error"
    NO_CONTACT = "no_contact"

    @property
    def has_contact(self) -> bool:
        return self is not ShotOutcome.NO_CONTACT


SHOT_TYPE_ORDER = tuple(ShotType)
SHOT_CODE = {s: i for i, s in enumerate(SHOT_TYPE_ORDER)}
OUTCOME_ORDER = tuple(ShotOutcome)
OUTCOME_CODE = {o: i for i, o in enumerate(OUTCOME_ORDER)}

# Contact heights (m) for the reach heuristic.
CONTACT_HEIGHT = {
    ShotType.SERVE: 2.8,
    ShotType.FOREHAND_TOPSPIN: 1.0,
    ShotType.FOREHAND_UNDERSPIN: 1.0,
    ShotType.BACKHAND_TOPSPIN: 1.0,
    ShotType.BACKHAND_UNDERSPIN: 1.0,
    ShotType.FOREHAND_VOLLEY: 1.3,
    ShotType.BACKHAND_VOLLEY: 1.3,
}

# Launch spin used when synthesizing a ball flight for a shot of each type:
# (spin kind name, surface spin speed in m/s).
DEFAULT_SHOT_SPIN = {
    ShotType.SERVE: ("topspin", 5.0),
    ShotType.FOREHAND_TOPSPIN: ("topspin", 10.0),
    ShotType.FOREHAND_UNDERSPIN: ("underspin", 5.0),
    ShotType.BACKHAND_TOPSPIN: ("topspin", 10.0),
    ShotType.BACKHAND_UNDERSPIN: ("underspin", 5.0),
    ShotType.FOREHAND_VOLLEY: ("underspin", 2.0),
    ShotType.BACKHAND_VOLLEY: ("underspin", 2.0),
}
