"""Shared fixtures: deterministic patients and a stochastic cohort slice."""

import pytest

from autobasal import POPULATION, PopulationConfig, VirtualPatient, generate_cohort


@pytest.fixture
def table_patient() -> VirtualPatient:
    """The population-parameter patient with all noise switched off."""
    return VirtualPatient(
        id=0, truth=POPULATION, body_weight=90.0, sigma=0.0, r_cgm=0.0, seed=7,
    )


@pytest.fixture
def noisy_patient() -> VirtualPatient:
    """The population-parameter patient at the default noise levels."""
    return VirtualPatient(
        id=0, truth=POPULATION, body_weight=90.0, sigma=0.05, r_cgm=0.16, seed=7,
    )


@pytest.fixture(scope="session")
def small_cohort():
    """Five screened stochastic patients from the default population."""
    return generate_cohort(5, PopulationConfig(seed=1234))
