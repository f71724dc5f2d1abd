import datetime as dt

import numpy as np
import pytest

from tariffkit.demand import check_market_consistency
from tariffkit.ingest import TariffSeries
from tariffkit.synthgen import (ArchetypeSpec, default_archetypes,
                                default_cost_shape, generate_costs,
                                generate_dynamic_tariff, generate_population,
                                generate_readings, household_model)


def flat_tariff(name, days, price=10.0, h=24):
    day_list = [dt.date(2024, 1, 1) + dt.timedelta(days=i) for i in range(days)]
    return TariffSeries(name, day_list, h, np.full((days, h), price))


class TestPopulation:
    def test_counts(self, archetypes):
        truth, customers = generate_population(archetypes, n_per_type=1000, seed=0)
        assert len(customers) == 3000
        sizes = {name: sum(1 for c in customers if truth.labels[c] == name)
                 for name in truth.models}
        assert sizes == {"IS": 1000, "SC": 1000, "SCS": 1000}

    def test_zero_self_scale_gives_zero_beta(self):
        spec = ArchetypeSpec(name="IS0", base_profile=np.full(24, 0.5),
                             self_scale=0.0, cross_scale=0.0)
        model = household_model(spec)
        np.testing.assert_array_equal(model.beta, 0.0)

    def test_scs_has_more_cross_mass_than_sc(self, archetypes):
        by_name = {s.name: s for s in archetypes}
        assert by_name["SCS"].cross_scale > by_name["SC"].cross_scale
        off = ~np.eye(24, dtype=bool)
        sc = household_model(by_name["SC"])
        scs = household_model(by_name["SCS"])
        assert np.abs(scs.beta[off]).sum() > np.abs(sc.beta[off]).sum()

    def test_group_model_scales_household_model(self, archetypes):
        truth, _ = generate_population(archetypes, n_per_type=7, seed=0)
        for name, group in truth.models.items():
            house = truth.household_models[name]
            np.testing.assert_allclose(group.alpha, 7 * house.alpha)
            np.testing.assert_allclose(group.beta, 7 * house.beta)

    def test_truth_models_pass_consistency(self, archetypes):
        truth, _ = generate_population(archetypes, n_per_type=3, seed=0)
        for model in truth.models.values():
            assert check_market_consistency(model).consistent

    def test_empty_spec_list_rejected(self):
        with pytest.raises(ValueError):
            generate_population([], n_per_type=5)


class TestReadings:
    def test_zero_noise_constant_prices_repeat_daily(self, noiseless_archetypes):
        truth, _ = generate_population(noiseless_archetypes, n_per_type=2, seed=0)
        tariffs = {name: flat_tariff(name, days=4) for name in truth.models}
        rs = generate_readings(truth, tariffs)
        for i in range(rs.n_customers):
            for d in range(1, rs.n_days):
                np.testing.assert_array_equal(rs.values[i, d], rs.values[i, 0])

    def test_demand_at_reference_price_is_base_profile(self, noiseless_archetypes):
        truth, customers = generate_population(noiseless_archetypes, n_per_type=1, seed=0)
        tariffs = {name: flat_tariff(name, days=1) for name in truth.models}
        rs = generate_readings(truth, tariffs)
        for i, cust in enumerate(customers):
            spec = truth.specs[truth.labels[cust]]
            np.testing.assert_allclose(rs.values[i, 0], spec.base_profile, atol=1e-12)

    def test_price_spike_shifts_load_to_adjacent_hours(self, noiseless_archetypes):
        truth, customers = generate_population(noiseless_archetypes, n_per_type=1, seed=0)
        base = flat_tariff("SCS", days=1)
        spiked = flat_tariff("SCS", days=1)
        spiked.prices[0, 12] *= 2
        tariffs_base = {n: flat_tariff(n, days=1) for n in truth.models}
        tariffs_spiked = dict(tariffs_base, SCS=spiked)
        rs0 = generate_readings(truth, tariffs_base)
        rs1 = generate_readings(truth, tariffs_spiked)
        idx = customers.index("SCS-0000")
        assert rs1.values[idx, 0, 11] > rs0.values[idx, 0, 11]
        assert rs1.values[idx, 0, 13] > rs0.values[idx, 0, 13]
        assert rs1.values[idx, 0, 12] < rs0.values[idx, 0, 12]

    def test_deterministic_and_nonnegative(self, archetypes):
        truth, _ = generate_population(archetypes, n_per_type=3, seed=4)
        tariffs = {n: generate_dynamic_tariff(n, days=5, seed=1) for n in truth.models}
        a = generate_readings(truth, tariffs, seed=11)
        b = generate_readings(truth, tariffs, seed=11)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.values.min() >= 0

    def test_missing_tariff_group_rejected(self, archetypes):
        truth, _ = generate_population(archetypes, n_per_type=1, seed=0)
        tariffs = {"IS": flat_tariff("IS", days=2)}
        with pytest.raises(KeyError, match="no tariff"):
            generate_readings(truth, tariffs)

    def test_tariff_assignment_routes_prices(self, noiseless_archetypes):
        spec = [s for s in noiseless_archetypes if s.name == "IS"]
        truth, customers = generate_population(spec, n_per_type=2, seed=0)
        cheap = flat_tariff("low", days=1, price=8.0)
        dear = flat_tariff("high", days=1, price=14.0)
        rs = generate_readings(truth, {"low": cheap, "high": dear},
                               tariff_assignment={customers[0]: "low",
                                                  customers[1]: "high"})
        # IS demand falls with its own price, so the high-tariff twin uses less
        assert rs.values[1].sum() < rs.values[0].sum()


class TestCosts:
    def test_zero_noise_returns_base(self):
        base = default_cost_shape()
        costs = generate_costs(5, base, noise_sd=0.0, seed=0)
        np.testing.assert_array_equal(costs, np.tile(base, (5, 1)))

    def test_lognormal_moment(self):
        base = default_cost_shape()
        sd = 0.2
        costs = generate_costs(10_000, base, noise_sd=sd, seed=1)
        expected = base * np.exp(sd ** 2 / 2)
        assert np.abs(costs.mean(axis=0) / expected - 1).max() < 0.01

    def test_deterministic(self):
        base = default_cost_shape()
        a = generate_costs(10, base, noise_sd=0.3, seed=7)
        b = generate_costs(10, base, noise_sd=0.3, seed=7)
        np.testing.assert_array_equal(a, b)

    def test_nonpositive_base_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            generate_costs(3, np.array([1.0, 0.0]), noise_sd=0.1)


class TestDynamicTariff:
    def test_bounds_and_determinism(self):
        a = generate_dynamic_tariff("TA", days=30, seed=3)
        b = generate_dynamic_tariff("TA", days=30, seed=3)
        np.testing.assert_array_equal(a.prices, b.prices)
        assert a.prices.min() >= 6.0
        assert a.prices.max() <= 18.0
        assert len(a.days) == 30

    def test_default_archetypes_stay_positive_under_it(self, archetypes):
        ts = generate_dynamic_tariff("x", days=60, seed=12)
        for spec in archetypes:
            clean = household_model(spec).predict(ts.prices)
            assert clean.min() > 0
