import datetime as dt

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import adjusted_rand_score

from tariffkit.errors import DegenerateDataError
from tariffkit.ingest import FeatureMatrix, ReadingSet, normalize_readings, build_attributes
from tariffkit.segmentation import (SegmentationConfig, SegmentationResult,
                                    SubClusterProfile, fit_group_models,
                                    merge_by_centroid, merge_by_model, run_cycle,
                                    sub_cluster)
from tariffkit.synthgen import (ArchetypeSpec, generate_dynamic_tariff,
                                generate_population, generate_readings)


def blob_group(rng, n_blobs, size_per_blob, dim=4, sep=60.0):
    """A feature matrix with n_blobs well-separated blobs."""
    rows = []
    for b in range(n_blobs):
        center = np.zeros(dim)
        center[b % dim] = sep * (1 + b // dim)
        rows.append(rng.normal(0, 1, size=(size_per_blob, dim)) + center)
    return np.vstack(rows)


def group_fixture(rng, sizes_blobs, days=5, h=4):
    """(features, readings) dicts for engineered groups.

    ``sizes_blobs``: {group: (n_blobs, size_per_blob)}.
    """
    features = {}
    readings = {}
    day_list = [dt.date(2024, 1, 1) + dt.timedelta(days=i) for i in range(days)]
    for group, (n_blobs, per) in sizes_blobs.items():
        x = blob_group(rng, n_blobs, per)
        n = x.shape[0]
        customers = [f"{group}-{i}" for i in range(n)]
        features[group] = FeatureMatrix(customers, x)
        readings[group] = ReadingSet(customers, day_list, h,
                                     rng.uniform(0.1, 1.0, size=(n, days, h)))
    return features, readings


class TestSubCluster:
    def test_thirteen_subclusters_from_3334(self):
        rng = np.random.default_rng(0)
        features, readings = group_fixture(rng, {
            "TA": (3, 12), "TB": (3, 5), "TC": (3, 11), "TD": (4, 5)})
        profiles, models = sub_cluster(features, readings, k_range=(2, 6),
                                       algorithms=("kmeans",), seed=1)
        assert len(profiles) == 13
        assert {g: m.k for g, m in models.items()} == {
            "TA": 3, "TB": 3, "TC": 3, "TD": 4}

    def test_lineage_sizes_preserved(self):
        rng = np.random.default_rng(1)
        sizes = {"TA": (2, 20), "TB": (2, 8), "TC": (2, 18), "TD": (2, 7)}
        features, readings = group_fixture(rng, sizes)
        profiles, _ = sub_cluster(features, readings, k_range=(2, 4),
                                  algorithms=("kmeans",), seed=2)
        per_group = {}
        for p in profiles:
            per_group[p.parent_group] = per_group.get(p.parent_group, 0) + p.size
        assert per_group == {g: nb * per for g, (nb, per) in sizes.items()}

    def test_aggregate_series_sums_members(self):
        rng = np.random.default_rng(2)
        features, readings = group_fixture(rng, {"TA": (2, 6)})
        profiles, _ = sub_cluster(features, readings, k_range=(2, 2),
                                  algorithms=("kmeans",), seed=3)
        rs = readings["TA"]
        index = {c: i for i, c in enumerate(rs.customers)}
        for p in profiles:
            expected = rs.values[[index[c] for c in p.members]].sum(axis=0)
            np.testing.assert_allclose(p.aggregate_series, expected)

    def test_identical_customers_cannot_split(self):
        rng = np.random.default_rng(3)
        days = [dt.date(2024, 1, 1)]
        customers = [f"c{i}" for i in range(6)]
        features = {"TA": FeatureMatrix(customers, np.ones((6, 4)))}
        readings = {"TA": ReadingSet(customers, days, 4, np.ones((6, 1, 4)))}
        with pytest.raises(DegenerateDataError):
            sub_cluster(features, readings, k_range=(2, 2), algorithms=("kmeans",))


def synthetic_profiles(rng, centroids, sizes, days=30, h=6, series=None):
    day_count = days
    profiles = []
    for i, (c, n) in enumerate(zip(centroids, sizes)):
        agg = series[i] if series is not None else rng.uniform(1, 5, (day_count, h))
        profiles.append(SubClusterProfile(
            parent_group="TA", index=i, centroid=np.asarray(c, dtype=float),
            members=[f"p{i}-m{j}" for j in range(n)], aggregate_series=agg))
    return profiles


class TestMergeByCentroid:
    def test_thirteen_to_four(self):
        rng = np.random.default_rng(4)
        anchor = np.array([[0, 0], [50, 0], [0, 50], [50, 50]], dtype=float)
        centroids = [anchor[i % 4] + rng.normal(0, 0.5, 2) for i in range(13)]
        profiles = synthetic_profiles(rng, centroids, sizes=[3] * 13)
        result = merge_by_centroid(profiles, 4, seed=0)
        assert result.n_groups == 4
        assert sum(len(v) for v in result.lineage.values()) == 13
        # groups follow the anchor geometry
        for i in range(13):
            for j in range(13):
                same_anchor = (i % 4) == (j % 4)
                same_group = (result.membership[f"p{i}-m0"]
                              == result.membership[f"p{j}-m0"])
                assert same_anchor == same_group

    def test_identity_merge(self):
        rng = np.random.default_rng(5)
        centroids = rng.normal(0, 10, size=(5, 3))
        profiles = synthetic_profiles(rng, centroids, sizes=[2, 3, 4, 5, 6])
        result = merge_by_centroid(profiles, 5, seed=1)
        assert result.n_groups == 5
        groups = {result.membership[p.members[0]] for p in profiles}
        assert len(groups) == 5
        for p in profiles:
            assert len({result.membership[m] for m in p.members}) == 1

    def test_identical_centroids_merge_together(self):
        rng = np.random.default_rng(6)
        centroids = [[0.0, 0.0], [0.0, 0.0], [30.0, 0.0]]
        profiles = synthetic_profiles(rng, centroids, sizes=[2, 2, 2])
        result = merge_by_centroid(profiles, 2, seed=2)
        assert result.membership["p0-m0"] == result.membership["p1-m0"]
        assert result.membership["p0-m0"] != result.membership["p2-m0"]

    def test_too_few_profiles_rejected(self):
        rng = np.random.default_rng(7)
        profiles = synthetic_profiles(rng, [[0.0], [1.0]], sizes=[1, 1])
        with pytest.raises(ValueError, match="merge"):
            merge_by_centroid(profiles, 3)


class TestMergeByModel:
    def make_tariffs(self, days=40, h=6, seed=8):
        base = np.full(h, 10.0)
        return {"TA": generate_dynamic_tariff("TA", days=days, seed=seed,
                                              base_shape=base)}

    def elastic_series(self, ts, alpha, beta, size):
        clean = alpha + ts.prices @ beta.T
        return np.maximum(clean * size, 0.0)

    def test_same_truth_subclusters_merge_together(self):
        rng = np.random.default_rng(9)
        h = 6
        tariffs = self.make_tariffs(h=h)
        ts = tariffs["TA"]
        beta_flat = np.zeros((h, h))
        beta_elastic = -0.6 * np.eye(h)
        alpha = np.full(h, 12.0)
        series = [
            self.elastic_series(ts, alpha, beta_flat, 5),
            self.elastic_series(ts, alpha, beta_flat, 9),
            self.elastic_series(ts, alpha, beta_elastic, 6),
            self.elastic_series(ts, alpha, beta_elastic, 11),
        ]
        profiles = synthetic_profiles(rng, np.zeros((4, 2)), sizes=[5, 9, 6, 11],
                                      days=len(ts.days), h=h, series=series)
        result = merge_by_model(profiles, tariffs, 2, forgetting=1.0, seed=3)
        m = result.membership
        assert m["p0-m0"] == m["p1-m0"]
        assert m["p2-m0"] == m["p3-m0"]
        assert m["p0-m0"] != m["p2-m0"]

    def test_identity_merge(self):
        rng = np.random.default_rng(10)
        h = 6
        tariffs = self.make_tariffs(h=h)
        ts = tariffs["TA"]
        series = [self.elastic_series(ts, np.full(h, 10.0 + i),
                                      -0.1 * (i + 1) * np.eye(h), 3)
                  for i in range(3)]
        profiles = synthetic_profiles(rng, np.zeros((3, 2)), sizes=[3, 3, 3],
                                      days=len(ts.days), h=h, series=series)
        result = merge_by_model(profiles, tariffs, 3, forgetting=1.0, seed=4)
        assert result.n_groups == 3

    def test_missing_tariff_rejected(self):
        rng = np.random.default_rng(11)
        profiles = synthetic_profiles(rng, [[0.0], [1.0]], sizes=[2, 2])
        with pytest.raises(KeyError, match="no tariff"):
            merge_by_model(profiles, {}, 2)


def four_archetype_population(n_per_type=40, days=40, seed=13):
    flat = np.full(24, 0.5)
    evening = np.array([0.25, 0.22, 0.2, 0.2, 0.2, 0.22, 0.35, 0.6, 0.7, 0.55,
                        0.45, 0.45, 0.5, 0.45, 0.45, 0.5, 0.65, 0.95, 1.2, 1.15,
                        0.95, 0.7, 0.45, 0.3])
    morning = evening[::-1].copy()
    night = np.roll(evening, 12)
    specs = [
        ArchetypeSpec(name="A", base_profile=flat, self_scale=1.0, cross_scale=0.0,
                      noise_sd=0.02),
        ArchetypeSpec(name="B", base_profile=evening, self_scale=3.0, cross_scale=1.0,
                      noise_sd=0.02),
        ArchetypeSpec(name="C", base_profile=morning, self_scale=2.0, cross_scale=2.0,
                      noise_sd=0.02),
        ArchetypeSpec(name="D", base_profile=night, self_scale=3.0, cross_scale=4.0,
                      noise_sd=0.02),
    ]
    truth, customers = generate_population(specs, n_per_type=n_per_type, seed=seed)
    assignment = {c: ("TA" if i % 2 == 0 else "TB") for i, c in enumerate(customers)}
    tariffs = {"TA": generate_dynamic_tariff("TA", days=days, seed=seed),
               "TB": generate_dynamic_tariff("TB", days=days, seed=seed)}
    readings = generate_readings(truth, tariffs, seed=seed,
                                 tariff_assignment=assignment)
    return truth, customers, assignment, tariffs, readings


class TestRunCycle:
    def test_four_archetypes_recovered(self):
        truth, customers, assignment, tariffs, readings = four_archetype_population()
        cfg = SegmentationConfig(k_range=(2, 6), g_final=4, merge_strategy="centroid",
                                 attribute_mode="monthly-average", seed=21)
        result = run_cycle(readings, tariffs, cfg, initial_groups=assignment)
        ari = adjusted_rand_score([truth.labels[c] for c in customers],
                                  [result.membership[c] for c in customers])
        assert ari >= 0.9
        assert result.n_groups == 4

    def test_membership_conserved(self):
        truth, customers, assignment, tariffs, readings = four_archetype_population(
            n_per_type=15)
        cfg = SegmentationConfig(k_range=(2, 5), g_final=3, merge_strategy="centroid",
                                 attribute_mode="monthly-average", seed=22)
        result = run_cycle(readings, tariffs, cfg, initial_groups=assignment)
        assert sorted(result.membership) == sorted(customers)
        sizes = [len(result.members_of(g)) for g in result.groups()]
        assert sum(sizes) == len(customers)
        assert all(s > 0 for s in sizes)
        for g in result.groups():
            assert sum(t[2] for t in result.lineage[g]) == len(result.members_of(g))

    def test_bootstrap_single_tariff_group(self):
        truth, customers, _, tariffs, readings = four_archetype_population(
            n_per_type=15)
        cfg = SegmentationConfig(k_range=(2, 5), g_final=2, merge_strategy="centroid",
                                 attribute_mode="monthly-average", seed=23)
        result = run_cycle(readings, {"TA": tariffs["TA"]}, cfg)
        assert sorted(result.membership) == sorted(customers)
        assert {t[0] for ts in result.lineage.values() for t in ts} == {"TA"}

    def test_no_grouping_with_multiple_tariffs_rejected(self):
        _, _, _, tariffs, readings = four_archetype_population(n_per_type=10)
        cfg = SegmentationConfig(k_range=(2, 4), g_final=2, seed=0)
        with pytest.raises(ValueError, match="initial grouping"):
            run_cycle(readings, tariffs, cfg)

    def test_deterministic(self):
        _, _, assignment, tariffs, readings = four_archetype_population(n_per_type=12)
        cfg = SegmentationConfig(k_range=(2, 4), g_final=3, merge_strategy="centroid",
                                 attribute_mode="monthly-average", seed=24)
        a = run_cycle(readings, tariffs, cfg, initial_groups=assignment)
        b = run_cycle(readings, tariffs, cfg, initial_groups=assignment)
        assert a.to_dict() == b.to_dict()

    def test_two_cycles_stationary_churn_below_5pct(self):
        truth, customers, assignment, tariffs, readings = four_archetype_population(
            n_per_type=30, days=60)
        cfg = SegmentationConfig(k_range=(2, 6), g_final=4, merge_strategy="centroid",
                                 attribute_mode="monthly-average", seed=25,
                                 period="p1")
        first = run_cycle(readings, tariffs, cfg, initial_groups=assignment)
        # next period: same stationary behavior, tariffs now keyed by the new groups
        tariffs2 = {g: generate_dynamic_tariff(g, days=60, seed=77)
                    for g in first.groups()}
        assignment2 = {c: first.membership[c] for c in customers}
        readings2 = generate_readings(truth, tariffs2, seed=31,
                                      tariff_assignment=assignment2)
        cfg2 = SegmentationConfig(k_range=(2, 6), g_final=4,
                                  merge_strategy="centroid",
                                  attribute_mode="monthly-average", seed=26,
                                  period="p2")
        second = run_cycle(readings2, tariffs2, cfg2, prior=first)
        # align second-cycle group labels to the first by maximum overlap
        groups1 = first.groups()
        groups2 = second.groups()
        overlap = np.zeros((len(groups1), len(groups2)))
        for i, g1 in enumerate(groups1):
            set1 = set(first.members_of(g1))
            for j, g2 in enumerate(groups2):
                overlap[i, j] = len(set1 & set(second.members_of(g2)))
        rows, cols = linear_sum_assignment(-overlap)
        matched = overlap[rows, cols].sum()
        churn = 1.0 - matched / len(customers)
        assert churn < 0.05

    def test_serialization_roundtrip(self):
        _, _, assignment, tariffs, readings = four_archetype_population(n_per_type=10)
        cfg = SegmentationConfig(k_range=(2, 4), g_final=2, merge_strategy="centroid",
                                 attribute_mode="monthly-average", seed=27)
        result = run_cycle(readings, tariffs, cfg, initial_groups=assignment)
        back = SegmentationResult.from_dict(result.to_dict())
        assert back.to_dict() == result.to_dict()


class TestFitGroupModels:
    def test_groups_spanning_tariffs_fit_via_aggregation(self):
        truth, customers, assignment, tariffs, readings = four_archetype_population(
            n_per_type=25, days=50)
        cfg = SegmentationConfig(k_range=(2, 6), g_final=4, merge_strategy="centroid",
                                 attribute_mode="monthly-average", seed=28)
        seg = run_cycle(readings, tariffs, cfg, initial_groups=assignment)
        models = fit_group_models(readings, tariffs, seg, forgetting=1.0)
        assert [m.group for m in models] == seg.groups()
        # each group model should approximate the summed truth of its members
        for model in models:
            members = seg.members_of(model.group)
            expected_alpha = np.sum([truth.household_models[truth.labels[c]].alpha
                                     for c in members], axis=0)
            scale = np.abs(expected_alpha).mean()
            assert np.abs(model.alpha - expected_alpha).mean() < 0.15 * scale
