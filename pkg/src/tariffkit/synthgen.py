"""Synthetic populations, readings, tariffs, and wholesale-cost series.

Three shipped household archetypes mirror a classic demand-response mix:
``IS`` (price-insensitive), ``SC`` (curtails at expensive hours), and ``SCS``
(curtails and shifts usage to adjacent cheaper hours). Ground-truth demand
models are built from a per-household base profile and elasticity scale
factors, so every downstream stage can be tested against known coefficients
without any proprietary data.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ._validation import as_float_array
from .demand import DemandModel
from .ingest import ReadingSet, TariffSeries

REFERENCE_PRICE = 10.0  # cents/kWh; demand at this flat price equals the base profile
UNIT_SELF_ELASTICITY = 0.35  # fraction of base demand shed per reference price
CROSS_KERNEL = (0.45, 0.25, 0.12)  # relative weight of load shifted 1, 2, 3 hours away
COLUMN_MARGIN = 0.05  # keep column sums at most -margin * |diagonal|


@dataclass
class ArchetypeSpec:
    """Recipe for one customer archetype.

    ``base_profile`` is the per-household kWh consumption at the reference
    flat price. ``self_scale``/``cross_scale`` multiply the unit self and
    cross elasticity magnitudes; cross entries are scaled down per column
    until every column sum of beta is non-positive.
    """

    name: str
    base_profile: np.ndarray
    self_scale: float
    cross_scale: float
    noise_sd: float = 0.02

    def __post_init__(self):
        self.base_profile = as_float_array(self.base_profile, "base_profile", ndim=1)
        if np.any(self.base_profile <= 0):
            raise ValueError("base_profile must be positive")
        if self.self_scale < 0 or self.cross_scale < 0:
            raise ValueError("elasticity scales must be >= 0")


@dataclass
class SyntheticTruth:
    """Ground-truth carrier: per-archetype group models and customer labels."""

    models: dict[str, DemandModel]
    household_models: dict[str, DemandModel]
    labels: dict[str, str]
    specs: dict[str, ArchetypeSpec]
    seed: int
    customers: list[str] = field(default_factory=list)


def household_model(spec: ArchetypeSpec, reference_price: float = REFERENCE_PRICE) -> DemandModel:
    """Ground-truth per-household demand model implied by an archetype spec.

    The diagonal is ``-self_scale * unit * base[h] / p_ref``; off-diagonal
    entries move load toward hours 1-3 slots away with geometrically decaying
    weights, scaled per column so the column-sum constraint holds with a
    margin. The intercept is set so demand at the flat reference price equals
    the base profile exactly.
    """
    h = len(spec.base_profile)
    unit = UNIT_SELF_ELASTICITY / reference_price
    diag = -spec.self_scale * unit * spec.base_profile
    beta = np.zeros((h, h))
    for col in range(h):
        for off, weight in enumerate(CROSS_KERNEL, start=1):
            for row in (col - off, col + off):
                if 0 <= row < h:
                    beta[row, col] = spec.cross_scale * unit * weight * spec.base_profile[col]
    np.fill_diagonal(beta, diag)
    # shrink cross entries column-wise until colsum <= -margin * |diag|
    for col in range(h):
        off_sum = beta[:, col].sum() - beta[col, col]
        limit = (1.0 - COLUMN_MARGIN) * (-beta[col, col])
        if off_sum > limit > 0:
            scale = limit / off_sum
            beta[:, col] *= scale
            beta[col, col] = diag[col]
        elif off_sum > 0 and limit <= 0:
            beta[:, col] = 0.0
            beta[col, col] = diag[col]
    p_ref = np.full(h, reference_price)
    alpha = spec.base_profile - beta @ p_ref
    return DemandModel(group=spec.name, horizon=h, alpha=alpha, beta=beta,
                       forgetting=1.0, diagnostics={"ground_truth": True})


def generate_population(specs: list[ArchetypeSpec], n_per_type: int,
                        seed: int = 0) -> tuple[SyntheticTruth, list[str]]:
    """Deterministic population of ``n_per_type`` households per archetype."""
    if not specs:
        raise ValueError("at least one archetype spec is required")
    if n_per_type < 1:
        raise ValueError("n_per_type must be >= 1")
    models: dict[str, DemandModel] = {}
    house: dict[str, DemandModel] = {}
    labels: dict[str, str] = {}
    customers: list[str] = []
    for spec in specs:
        hm = household_model(spec)
        house[spec.name] = hm
        models[spec.name] = DemandModel(
            group=spec.name, horizon=hm.horizon,
            alpha=hm.alpha * n_per_type, beta=hm.beta * n_per_type,
            forgetting=1.0, diagnostics={"ground_truth": True, "n": n_per_type})
        for i in range(n_per_type):
            cust = f"{spec.name}-{i:04d}"
            customers.append(cust)
            labels[cust] = spec.name
    truth = SyntheticTruth(models=models, household_models=house, labels=labels,
                           specs={s.name: s for s in specs}, seed=seed,
                           customers=customers)
    return truth, customers


def generate_readings(truth: SyntheticTruth, tariffs: dict[str, TariffSeries],
                      days: int | None = None, seed: int | None = None,
                      tariff_assignment: dict[str, str] | None = None) -> ReadingSet:
    """Simulate meter readings for the population under the given tariffs.

    Each customer's demand is their archetype household model evaluated at
    their tariff group's daily prices, with mean-one lognormal noise applied
    and negative values floored at 0. Per-customer sub-seeds make the output
    independent of generation order. By default customers are assigned the
    tariff named after their archetype.
    """
    if seed is None:
        seed = truth.seed
    first = next(iter(tariffs.values()))
    for ts in tariffs.values():
        if list(ts.days) != list(first.days) or ts.slots_per_day != first.slots_per_day:
            raise ValueError("all tariffs must share the same days and slots")
    n_days = len(first.days) if days is None else int(days)
    if n_days > len(first.days):
        raise ValueError(f"requested {n_days} days but tariffs cover {len(first.days)}")
    day_list = list(first.days)[:n_days]
    h = first.slots_per_day

    values = np.empty((len(truth.customers), n_days, h))
    for idx, cust in enumerate(truth.customers):
        archetype = truth.labels[cust]
        group = archetype if tariff_assignment is None else tariff_assignment[cust]
        if group not in tariffs:
            raise KeyError(f"no tariff for group {group!r} (customer {cust})")
        prices = tariffs[group].prices[:n_days]
        model = truth.household_models[archetype]
        if model.horizon != h:
            raise ValueError("tariff slot count differs from the model horizon")
        clean = model.predict(prices)
        sd = truth.specs[archetype].noise_sd
        if sd > 0:
            rng = np.random.default_rng([seed, idx])
            noise = np.exp(rng.normal(-0.5 * sd * sd, sd, size=clean.shape))
            clean = clean * noise
        values[idx] = np.maximum(clean, 0.0)
    return ReadingSet(list(truth.customers), day_list, h, values)


def generate_costs(days: int, base_shape, noise_sd: float, seed: int = 0) -> np.ndarray:
    """Per-day multiplicative lognormal perturbation of a base cost shape.

    Returns a days x H array; the expected value of each entry is
    ``base_shape * exp(noise_sd**2 / 2)``.
    """
    base = as_float_array(base_shape, "base_shape", ndim=1)
    if np.any(base <= 0):
        raise ValueError("base_shape must be positive")
    if days < 1:
        raise ValueError("days must be >= 1")
    rng = np.random.default_rng(seed)
    noise = np.exp(rng.normal(0.0, noise_sd, size=(days, len(base)))) if noise_sd > 0 \
        else np.ones((days, len(base)))
    return base[None, :] * noise


def generate_dynamic_tariff(group: str, days: int, seed: int = 0,
                            base_shape=None, spread: float = 0.12,
                            start: dt.date = dt.date(2024, 1, 1),
                            lo: float = 6.0, hi: float = 18.0) -> TariffSeries:
    """A day-varying tariff around a base shape (identification-friendly).

    Every (day, slot) price gets an independent lognormal perturbation, which
    keeps the regression design of the demand fit full-rank. The default
    spread and clip range keep the shipped archetypes' demand strictly
    positive, so simulated readings stay exactly linear in prices.
    """
    if base_shape is None:
        base_shape = np.full(24, REFERENCE_PRICE)
    base = as_float_array(base_shape, "base_shape", ndim=1)
    rng = np.random.default_rng(seed)
    prices = base[None, :] * np.exp(rng.normal(0.0, spread, size=(days, len(base))))
    prices = np.clip(prices, lo, hi)
    day_list = [start + dt.timedelta(days=i) for i in range(days)]
    return TariffSeries(group, day_list, len(base), prices)


# ---------------------------------------------------------------------------
# Shipped fixtures
# ---------------------------------------------------------------------------


def _load_fixture() -> dict:
    text = resources.files("tariffkit.fixtures").joinpath("archetypes.json").read_text()
    return json.loads(text)


def default_archetypes() -> list[ArchetypeSpec]:
    """The three standard archetypes (IS / SC / SCS) from the fixture file."""
    data = _load_fixture()
    return [
        ArchetypeSpec(name=a["name"],
                      base_profile=np.asarray(a["base_profile"], dtype=float),
                      self_scale=float(a["self_scale"]),
                      cross_scale=float(a["cross_scale"]),
                      noise_sd=float(a.get("noise_sd", 0.02)))
        for a in data["archetypes"]
    ]


def default_cost_shape() -> np.ndarray:
    """Double-peak wholesale cost base shape, cents/kWh."""
    return np.asarray(_load_fixture()["cost_base_shape"], dtype=float)
