import numpy as np
import pytest

from tariffkit.synthgen import (ArchetypeSpec, default_archetypes,
                                generate_dynamic_tariff, generate_population,
                                generate_readings)


@pytest.fixture(scope="session")
def archetypes():
    return default_archetypes()


@pytest.fixture(scope="session")
def noiseless_archetypes(archetypes):
    return [ArchetypeSpec(name=s.name, base_profile=s.base_profile,
                          self_scale=s.self_scale, cross_scale=s.cross_scale,
                          noise_sd=0.0)
            for s in archetypes]


@pytest.fixture(scope="session")
def small_population(archetypes):
    """60 households (20 per archetype) with 2% noise, 30 days of readings."""
    truth, customers = generate_population(archetypes, n_per_type=20, seed=42)
    tariffs = {name: generate_dynamic_tariff(name, days=30, seed=7)
               for name in truth.models}
    readings = generate_readings(truth, tariffs, seed=42)
    return truth, customers, tariffs, readings


def two_separated_clouds(n_per=10, dim=3, distance=100.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per, dim))
    b = rng.normal(size=(n_per, dim))
    b[:, 0] += distance
    x = np.vstack([a, b])
    labels = np.array([0] * n_per + [1] * n_per)
    return x, labels
