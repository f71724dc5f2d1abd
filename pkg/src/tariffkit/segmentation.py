"""Adaptive customer segmentation: per-tariff-group sub-clustering followed
by a merge of sub-clusters into the desired number of final groups.

The cycle is pure: it consumes a ReadingSet plus per-group tariffs and a
prior grouping (or bootstraps from the tariff groups) and emits a new
:class:`SegmentationResult`. Final groups are named "0", "1", ... so the
next period's tariffs can be keyed by them directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import ALGORITHMS, ClusterModel, kmeans, select_model
from .demand import (DemandModel, FitHistory, aggregate_models, fit_demand_model,
                     history_from_readings)
from .ingest import ReadingSet, TariffSeries, build_attributes, normalize_readings

FORMAT_VERSION = 1

MERGE_CENTROID = "centroid"
MERGE_MODEL = "model"


@dataclass
class SubClusterProfile:
    """One sub-cluster of an initial tariff group.

    ``aggregate_series`` is the summed raw (not normalized) member demand,
    D x H, which is what the per-sub-cluster demand models are fitted on.
    """

    parent_group: str
    index: int
    centroid: np.ndarray
    members: list[str]
    aggregate_series: np.ndarray

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class SegmentationConfig:
    k_range: tuple[int, int] = (2, 8)
    algorithms: tuple[str, ...] = ALGORITHMS
    g_final: int = 4
    merge_strategy: str = MERGE_CENTROID
    attribute_mode: str = "monthly-average"
    attribute_params: dict = field(default_factory=dict)
    forgetting: float = 0.98
    seed: int = 0
    restarts: int = 10
    period: str = "period-1"

    def __post_init__(self):
        if self.merge_strategy not in (MERGE_CENTROID, MERGE_MODEL):
            raise ValueError(f"unknown merge strategy {self.merge_strategy!r}")
        if self.g_final < 1:
            raise ValueError("g_final must be >= 1")


@dataclass
class SegmentationResult:
    """Outcome of one segmentation cycle.

    ``membership`` maps customers to final group names; ``lineage`` records,
    per final group, the (initial group, sub-cluster index, size) triples it
    was merged from; ``sub_membership`` keeps the customer-level sub-cluster
    assignment needed to rebuild per-group demand models later.
    """

    period: str
    n_groups: int
    membership: dict[str, str]
    lineage: dict[str, list[tuple[str, int, int]]]
    sub_models: dict[str, ClusterModel]
    merge_strategy: str
    sub_membership: dict[str, tuple[str, int]]
    merge_model: ClusterModel | None = None

    def groups(self) -> list[str]:
        return sorted(self.lineage, key=int)

    def members_of(self, group: str) -> list[str]:
        return [c for c, g in self.membership.items() if g == group]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "period": self.period,
            "n_groups": self.n_groups,
            "membership": dict(self.membership),
            "lineage": {g: [list(t) for t in ts] for g, ts in self.lineage.items()},
            "sub_models": {g: m.to_dict() for g, m in self.sub_models.items()},
            "merge_strategy": self.merge_strategy,
            "sub_membership": {c: list(t) for c, t in self.sub_membership.items()},
            "merge_model": self.merge_model.to_dict() if self.merge_model else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SegmentationResult":
        return cls(
            period=data["period"],
            n_groups=int(data["n_groups"]),
            membership=dict(data["membership"]),
            lineage={g: [tuple(t) for t in ts] for g, ts in data["lineage"].items()},
            sub_models={g: ClusterModel.from_dict(m)
                        for g, m in data["sub_models"].items()},
            merge_strategy=data["merge_strategy"],
            sub_membership={c: (t[0], int(t[1]))
                            for c, t in data["sub_membership"].items()},
            merge_model=(ClusterModel.from_dict(data["merge_model"])
                         if data.get("merge_model") else None),
        )


# ---------------------------------------------------------------------------
# Stage 2: per-group sub-clustering
# ---------------------------------------------------------------------------


def sub_cluster(features_by_group: dict, readings_by_group: dict[str, ReadingSet],
                k_range: tuple[int, int] = (2, 8), algorithms=ALGORITHMS,
                seed: int = 0, restarts: int = 10,
                ) -> tuple[list[SubClusterProfile], dict[str, ClusterModel]]:
    """Run model selection independently per tariff group.

    Returns the flat list of sub-cluster profiles (carrying centroids, member
    lists, and summed raw consumption) plus the winning ClusterModel per
    group. Groups are processed in sorted order with derived sub-seeds, so
    the result does not depend on dict ordering.
    """
    if set(features_by_group) != set(readings_by_group):
        raise ValueError("features and readings must cover the same groups")
    profiles: list[SubClusterProfile] = []
    models: dict[str, ClusterModel] = {}
    for gi, group in enumerate(sorted(features_by_group)):
        fm = features_by_group[group]
        rs = readings_by_group[group]
        if list(fm.customers) != list(rs.customers):
            raise ValueError(f"group {group}: feature/reading customers differ")
        child_seed = int(np.random.SeedSequence([seed, gi]).generate_state(1)[0])
        model = select_model(fm, k_range, algorithms, seed=child_seed, restarts=restarts)
        models[group] = model
        for j in range(model.k):
            idx = np.flatnonzero(model.assignments == j)
            members = [fm.customers[i] for i in idx]
            profiles.append(SubClusterProfile(
                parent_group=group,
                index=j,
                centroid=model.centroids[j].copy(),
                members=members,
                aggregate_series=rs.values[idx].sum(axis=0),
            ))
    return profiles, models


# ---------------------------------------------------------------------------
# Stage 3: merging
# ---------------------------------------------------------------------------


def _assemble(period: str, profiles: list[SubClusterProfile], merge_labels,
              sub_models: dict[str, ClusterModel], strategy: str,
              merge_model: ClusterModel | None) -> SegmentationResult:
    membership: dict[str, str] = {}
    lineage: dict[str, list[tuple[str, int, int]]] = {}
    sub_membership: dict[str, tuple[str, int]] = {}
    n_groups = int(np.max(merge_labels)) + 1
    for profile, label in zip(profiles, merge_labels):
        group = str(int(label))
        lineage.setdefault(group, []).append(
            (profile.parent_group, profile.index, profile.size))
        for cust in profile.members:
            membership[cust] = group
            sub_membership[cust] = (profile.parent_group, profile.index)
    for g in range(n_groups):
        if str(g) not in lineage:
            raise ValueError(f"merge produced an empty final group {g}")
    return SegmentationResult(
        period=period, n_groups=n_groups, membership=membership, lineage=lineage,
        sub_models=sub_models, merge_strategy=strategy,
        sub_membership=sub_membership, merge_model=merge_model)


def merge_by_centroid(profiles: list[SubClusterProfile], g_final: int,
                      seed: int = 0, sub_models: dict | None = None,
                      period: str = "period-1", restarts: int = 10,
                      weighted: bool = False) -> SegmentationResult:
    """Merge sub-clusters by k-means over their centroid vectors.

    Each sub-cluster counts as one unweighted observation (set ``weighted``
    to repeat centroids by sub-cluster size). Identity merge when
    ``g_final`` equals the number of profiles.
    """
    if g_final > len(profiles):
        raise ValueError(f"cannot merge {len(profiles)} sub-clusters into {g_final} groups")
    x = np.vstack([p.centroid for p in profiles])
    if weighted:
        reps = np.repeat(np.arange(len(profiles)), [p.size for p in profiles])
        model = kmeans(x[reps], g_final, seed=seed, restarts=restarts)
        labels = np.array([model.assignments[np.flatnonzero(reps == i)[0]]
                           for i in range(len(profiles))])
    else:
        model = kmeans(x, g_final, seed=seed, restarts=restarts)
        labels = model.assignments
    return _assemble(period, profiles, labels, sub_models or {}, MERGE_CENTROID, model)


def merge_by_model(profiles: list[SubClusterProfile],
                   tariffs: dict[str, TariffSeries], g_final: int,
                   forgetting: float = 0.98, seed: int = 0,
                   sub_models: dict | None = None, period: str = "period-1",
                   restarts: int = 10) -> SegmentationResult:
    """Merge sub-clusters by clustering their fitted demand-model coefficients.

    A demand model is fitted to each sub-cluster's aggregate series under its
    parent group's tariff. Coefficient vectors are scaled to per-member units
    (so sub-cluster size does not dominate the distance) and standardized per
    dimension before the k-means merge.
    """
    if g_final > len(profiles):
        raise ValueError(f"cannot merge {len(profiles)} sub-clusters into {g_final} groups")
    coef_rows = []
    for p in profiles:
        ts = tariffs.get(p.parent_group)
        if ts is None:
            raise KeyError(f"no tariff series for group {p.parent_group!r}")
        if p.aggregate_series.shape != ts.prices.shape:
            raise ValueError(
                f"sub-cluster series shape {p.aggregate_series.shape} does not "
                f"match tariff shape {ts.prices.shape}")
        fit = fit_demand_model(FitHistory(ts.prices, p.aggregate_series),
                               forgetting=forgetting,
                               group=f"{p.parent_group}/{p.index}")
        coef_rows.append(np.concatenate([fit.alpha, fit.beta.ravel()]) / p.size)
    coefs = np.vstack(coef_rows)
    mean = coefs.mean(axis=0)
    std = coefs.std(axis=0)
    std[std < 1e-12] = 1.0
    model = kmeans((coefs - mean) / std, g_final, seed=seed, restarts=restarts)
    return _assemble(period, profiles, model.assignments, sub_models or {},
                     MERGE_MODEL, model)


# ---------------------------------------------------------------------------
# The full cycle
# ---------------------------------------------------------------------------


def run_cycle(readings: ReadingSet, tariffs: dict[str, TariffSeries],
              config: SegmentationConfig,
              prior: SegmentationResult | None = None,
              initial_groups: dict[str, str] | None = None) -> SegmentationResult:
    """One segmentation cycle: group, sub-cluster, merge.

    The initial grouping comes from ``prior`` (the previous cycle's result),
    else from ``initial_groups`` (customer -> tariff group), else every
    customer joins the single tariff group when only one exists. Each initial
    group must have a tariff series. Deterministic given config and inputs.
    """
    if prior is not None:
        grouping = dict(prior.membership)
    elif initial_groups is not None:
        grouping = dict(initial_groups)
    elif len(tariffs) == 1:
        only = next(iter(tariffs))
        grouping = {c: only for c in readings.customers}
    else:
        raise ValueError(
            "no prior segmentation or initial grouping given and the tariff "
            "map is not a single group")
    missing = [c for c in readings.customers if c not in grouping]
    if missing:
        raise ValueError(f"customers without an initial group: {missing[:5]}")

    groups = sorted(set(grouping[c] for c in readings.customers))
    features_by_group = {}
    readings_by_group = {}
    for group in groups:
        if group not in tariffs:
            raise KeyError(f"no tariff series for initial group {group!r}")
        members = [c for c in readings.customers if grouping[c] == group]
        sub_rs = readings.select(members)
        norm = normalize_readings(sub_rs)
        features_by_group[group] = build_attributes(
            norm, config.attribute_mode, config.attribute_params)
        readings_by_group[group] = sub_rs

    profiles, sub_models = sub_cluster(
        features_by_group, readings_by_group, config.k_range,
        config.algorithms, seed=config.seed, restarts=config.restarts)

    merge_seed = int(np.random.SeedSequence([config.seed, 10_007]).generate_state(1)[0])
    if config.merge_strategy == MERGE_CENTROID:
        return merge_by_centroid(profiles, config.g_final, seed=merge_seed,
                                 sub_models=sub_models, period=config.period,
                                 restarts=config.restarts)
    return merge_by_model(profiles, tariffs, config.g_final,
                          forgetting=config.forgetting, seed=merge_seed,
                          sub_models=sub_models, period=config.period,
                          restarts=config.restarts)


def fit_group_models(readings: ReadingSet, tariffs: dict[str, TariffSeries],
                     segmentation: SegmentationResult,
                     forgetting: float = 0.98) -> list[DemandModel]:
    """Fit one demand model per final group.

    Each sub-cluster is fitted on its aggregate series under its parent
    group's tariff, then the sub-cluster models of a final group are summed.
    This works even when a final group mixes customers from different tariff
    groups (they never shared a price series, so a direct pooled fit would
    be ill-posed).
    """
    by_sub: dict[tuple[str, int], list[str]] = {}
    for cust, key in segmentation.sub_membership.items():
        by_sub.setdefault((key[0], int(key[1])), []).append(cust)

    out = []
    for group in segmentation.groups():
        parts = []
        for parent, sub_idx, _size in segmentation.lineage[group]:
            members = by_sub.get((parent, int(sub_idx)))
            if not members:
                raise ValueError(f"empty sub-cluster {parent}/{sub_idx}")
            ts = tariffs.get(parent)
            if ts is None:
                raise KeyError(f"no tariff series for group {parent!r}")
            hist = history_from_readings(readings, ts, members)
            parts.append(fit_demand_model(hist, forgetting=forgetting,
                                          group=f"{parent}/{sub_idx}"))
        merged = aggregate_models(parts) if len(parts) > 1 else parts[0]
        merged.group = group
        out.append(merged)
    return out
