"""Shared fixtures: synthetic databases are expensive, build them once."""

import pytest

from rallyforge.synth import ArchetypeSpec, generate_synthetic_db


def two_player_archetypes(cross=0.7, line=0.3, **kwargs):
    return {
        "ana": ArchetypeSpec(cross_court_bias=cross, down_line_bias=line, **kwargs),
        "bo": ArchetypeSpec(cross_court_bias=cross, down_line_bias=line, **kwargs),
    }


@pytest.fixture(scope="session")
def small_db():
    """~30 points between two right-handed baseliners."""
    return generate_synthetic_db(two_player_archetypes(), 30, seed=101)


@pytest.fixture(scope="session")
def medium_db():
    """A denser database for behavior-model and engine tests."""
    return generate_synthetic_db(two_player_archetypes(), 120, seed=202)


@pytest.fixture(scope="session")
def medium_models(medium_db):
    from rallyforge.behavior import fit_models

    return {p: fit_models(medium_db, p) for p in medium_db.players}
