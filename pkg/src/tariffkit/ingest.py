"""Load, validate, resample, and normalize smart-meter and tariff data.

All consumption is in kWh, all prices in currency-cents per kWh. Loaders
accept the documented CSV schemas only; unknown columns are rejected unless
``lax=True``.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import as_float_array
from .errors import SchemaError

logger = logging.getLogger(__name__)

READING_COLUMNS = ["customer_id", "date", "slot", "kwh"]
TARIFF_COLUMNS = ["group", "date", "slot", "price_cents"]

# Customers missing more than this fraction of slots in the window are dropped.
MAX_MISSING_FRACTION = 0.20


@dataclass
class ReadingSet:
    """Dense per-customer, per-day, per-slot energy consumption.

    Attributes:
        customers: customer identifiers, one per row of ``values``.
        days: strictly increasing calendar dates.
        slots_per_day: number of metering slots per day.
        values: N x D x H array of kWh, all finite and >= 0.
    """

    customers: list[str]
    days: list[dt.date]
    slots_per_day: int
    values: np.ndarray

    def __post_init__(self):
        self.values = as_float_array(self.values, "values", ndim=3)
        n, d, h = self.values.shape
        if n != len(self.customers) or d != len(self.days) or h != self.slots_per_day:
            raise ValueError(
                f"values shape {self.values.shape} inconsistent with "
                f"{len(self.customers)} customers, {len(self.days)} days, "
                f"{self.slots_per_day} slots"
            )
        if np.any(self.values < 0):
            raise ValueError("consumption values must be >= 0")
        if any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise ValueError("days must be strictly increasing")

    @property
    def n_customers(self) -> int:
        return len(self.customers)

    @property
    def n_days(self) -> int:
        return len(self.days)

    def select(self, customer_ids) -> "ReadingSet":
        """Return the sub-set restricted to the given customers (order preserved)."""
        index = {c: i for i, c in enumerate(self.customers)}
        missing = [c for c in customer_ids if c not in index]
        if missing:
            raise KeyError(f"unknown customers: {missing[:5]}")
        rows = [index[c] for c in customer_ids]
        return ReadingSet(list(customer_ids), list(self.days), self.slots_per_day,
                          self.values[rows].copy())


@dataclass
class TariffSeries:
    """Per-group, per-day, per-slot prices in cents per kWh."""

    group: str
    days: list[dt.date]
    slots_per_day: int
    prices: np.ndarray

    def __post_init__(self):
        self.prices = as_float_array(self.prices, "prices", ndim=2)
        d, h = self.prices.shape
        if d != len(self.days) or h != self.slots_per_day:
            raise ValueError(
                f"prices shape {self.prices.shape} inconsistent with "
                f"{len(self.days)} days, {self.slots_per_day} slots"
            )
        if np.any(self.prices <= 0):
            raise ValueError("prices must be strictly positive")


@dataclass
class FeatureMatrix:
    """Per-customer clustering attributes.

    ``attribute_labels`` records the provenance of each column (date/slot,
    month/hour, or segment/date), so r == len(attribute_labels).
    """

    customers: list[str]
    values: np.ndarray
    attribute_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = as_float_array(self.values, "values", ndim=2)
        if self.values.shape[0] != len(self.customers):
            raise ValueError("one row per customer required")
        if self.attribute_labels and len(self.attribute_labels) != self.values.shape[1]:
            raise ValueError("one label per column required")

    @property
    def attribute_length(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------


def _check_header(header: list[str], expected: list[str], lax: bool, path) -> list[int]:
    missing = [c for c in expected if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing required columns {missing}")
    unknown = [c for c in header if c not in expected]
    if unknown and not lax:
        raise SchemaError(
            f"{path}: unknown columns {unknown} (pass lax=True / --lax to ignore)"
        )
    return [header.index(c) for c in expected]


def _parse_rows(path, expected: list[str], lax: bool):
    """Yield (line_number, parsed_fields) for each data row of a CSV file."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        cols = _check_header([c.strip() for c in header], expected, lax, path)
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if max(cols) >= len(row):
                raise SchemaError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                yield line_no, [row[i].strip() for i in cols]
            except IndexError:  # pragma: no cover - guarded above
                raise SchemaError(f"{path}:{line_no}: truncated row")
            n_rows += 1
        if n_rows == 0:
            raise SchemaError(f"{path}: no data rows")


def _parse_date(text: str, path, line_no: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise SchemaError(f"{path}:{line_no}: bad date {text!r} (ISO-8601 required)") from None


def _parse_float(text: str, what: str, path, line_no: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"{path}:{line_no}: bad {what} {text!r}") from None
    if not np.isfinite(value):
        raise SchemaError(f"{path}:{line_no}: non-finite {what}")
    return value


def _parse_slot(text: str, path, line_no: int) -> int:
    try:
        slot = int(text)
    except ValueError:
        raise SchemaError(f"{path}:{line_no}: bad slot {text!r}") from None
    if slot < 0:
        raise SchemaError(f"{path}:{line_no}: slot must be >= 0")
    return slot


def load_readings(path, lax: bool = False) -> ReadingSet:
    """Load a readings CSV (``customer_id,date,slot,kwh``) into a dense ReadingSet.

    Customers missing more than 20% of the window's slots are dropped; the
    remaining gaps are filled with the customer's same-slot median.
    """
    cells: dict[tuple[str, dt.date, int], float] = {}
    customers: list[str] = []
    seen_customers: set[str] = set()
    dates: set[dt.date] = set()
    max_slot = -1
    for line_no, (cust, date_s, slot_s, kwh_s) in _parse_rows(path, READING_COLUMNS, lax):
        date = _parse_date(date_s, path, line_no)
        slot = _parse_slot(slot_s, path, line_no)
        kwh = _parse_float(kwh_s, "kwh", path, line_no)
        if kwh < 0:
            raise SchemaError(f"{path}:{line_no}: negative kwh")
        key = (cust, date, slot)
        if key in cells:
            raise SchemaError(
                f"{path}:{line_no}: duplicate reading for ({cust}, {date}, slot {slot})"
            )
        cells[key] = kwh
        if cust not in seen_customers:
            seen_customers.add(cust)
            customers.append(cust)
        dates.add(date)
        max_slot = max(max_slot, slot)

    days = sorted(dates)
    h = max_slot + 1
    d = len(days)
    day_index = {day: i for i, day in enumerate(days)}
    values = np.full((len(customers), d, h), np.nan)
    cust_index = {c: i for i, c in enumerate(customers)}
    for (cust, date, slot), kwh in cells.items():
        values[cust_index[cust], day_index[date], slot] = kwh

    missing = np.isnan(values)
    missing_frac = missing.reshape(len(customers), -1).mean(axis=1)
    keep = missing_frac <= MAX_MISSING_FRACTION
    dropped = [c for c, k in zip(customers, keep) if not k]
    if dropped:
        logger.info("dropping %d customers with > %.0f%% missing slots: %s%s",
                    len(dropped), 100 * MAX_MISSING_FRACTION, dropped[:5],
                    "..." if len(dropped) > 5 else "")
    customers = [c for c, k in zip(customers, keep) if k]
    if not customers:
        raise SchemaError(f"{path}: every customer exceeds the missing-data limit")
    values = values[keep]

    values = _impute_same_slot_median(values)
    return ReadingSet(customers, days, h, values)


def _impute_same_slot_median(values: np.ndarray) -> np.ndarray:
    """Fill NaN gaps with the per-customer same-slot median over days."""
    out = values.copy()
    for i in range(out.shape[0]):
        mat = out[i]
        if not np.isnan(mat).any():
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            slot_median = np.nanmedian(mat, axis=0)
            overall = np.nanmedian(mat)
        slot_median = np.where(np.isnan(slot_median), overall, slot_median)
        gaps = np.isnan(mat)
        mat[gaps] = np.broadcast_to(slot_median, mat.shape)[gaps]
    return out


def load_tariffs(path, lax: bool = False) -> dict[str, TariffSeries]:
    """Load a tariff CSV (``group,date,slot,price_cents``) into per-group series."""
    cells: dict[tuple[str, dt.date, int], float] = {}
    groups: list[str] = []
    dates: set[dt.date] = set()
    max_slot = -1
    for line_no, (group, date_s, slot_s, price_s) in _parse_rows(path, TARIFF_COLUMNS, lax):
        date = _parse_date(date_s, path, line_no)
        slot = _parse_slot(slot_s, path, line_no)
        price = _parse_float(price_s, "price_cents", path, line_no)
        if price <= 0:
            raise SchemaError(f"{path}:{line_no}: price must be > 0")
        key = (group, date, slot)
        if key in cells:
            raise SchemaError(f"{path}:{line_no}: duplicate price for ({group}, {date}, slot {slot})")
        cells[key] = price
        if group not in groups:
            groups.append(group)
        dates.add(date)
        max_slot = max(max_slot, slot)

    days = sorted(dates)
    h = max_slot + 1
    day_index = {day: i for i, day in enumerate(days)}
    out: dict[str, TariffSeries] = {}
    for group in groups:
        prices = np.full((len(days), h), np.nan)
        for (g, date, slot), price in cells.items():
            if g == group:
                prices[day_index[date], slot] = price
        if np.isnan(prices).any():
            d_bad, s_bad = np.argwhere(np.isnan(prices))[0]
            raise SchemaError(
                f"{path}: tariff {group} missing price for {days[d_bad]} slot {s_bad}"
            )
        out[group] = TariffSeries(group, list(days), h, prices)
    return out


def write_readings_csv(rs: ReadingSet, path) -> None:
    """Export a ReadingSet in the loader's CSV schema."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(READING_COLUMNS)
        for i, cust in enumerate(rs.customers):
            for d, day in enumerate(rs.days):
                for h in range(rs.slots_per_day):
                    writer.writerow([cust, day.isoformat(), h,
                                     repr(float(rs.values[i, d, h]))])


def write_tariffs_csv(tariffs: dict[str, TariffSeries], path) -> None:
    """Export tariff series in the loader's CSV schema."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TARIFF_COLUMNS)
        for group in tariffs:
            ts = tariffs[group]
            for d, day in enumerate(ts.days):
                for h in range(ts.slots_per_day):
                    writer.writerow([group, day.isoformat(), h,
                                     repr(float(ts.prices[d, h]))])


# ---------------------------------------------------------------------------
# Resampling and normalization
# ---------------------------------------------------------------------------


def _resample_axis(values: np.ndarray, h_raw: int, target: int) -> np.ndarray:
    """Resample the last axis, conserving sums (sum down, split up)."""
    if h_raw == target:
        return values.copy()
    if h_raw % target == 0:
        factor = h_raw // target
        return values.reshape(*values.shape[:-1], target, factor).sum(axis=-1)
    if target % h_raw == 0:
        factor = target // h_raw
        return np.repeat(values / factor, factor, axis=-1)
    raise ValueError(f"cannot resample {h_raw} slots to {target}: counts are incompatible")


def resample(rs: ReadingSet, target_slots: int) -> ReadingSet:
    """Change the slot resolution, conserving per-customer per-day energy."""
    values = _resample_axis(rs.values, rs.slots_per_day, target_slots)
    return ReadingSet(list(rs.customers), list(rs.days), target_slots, values)


def resample_tariffs(ts: TariffSeries, target_slots: int) -> TariffSeries:
    """Change tariff resolution; prices average down and repeat up (per kWh)."""
    h_raw = ts.slots_per_day
    if h_raw % target_slots == 0:
        prices = ts.prices.reshape(len(ts.days), target_slots, -1).mean(axis=-1)
    elif target_slots % h_raw == 0:
        prices = np.repeat(ts.prices, target_slots // h_raw, axis=-1)
    else:
        raise ValueError(f"cannot resample {h_raw} slots to {target_slots}")
    return TariffSeries(ts.group, list(ts.days), target_slots, prices)


def normalize_readings(rs: ReadingSet) -> ReadingSet:
    """Scale each customer by their mean per-slot consumption over the window.

    Customers with zero total consumption are dropped with a warning. The
    operation is idempotent: the row profile of the result has mean 1.
    """
    means = rs.values.reshape(rs.n_customers, -1).mean(axis=1)
    keep = means > 0
    if not np.all(keep):
        dropped = [c for c, k in zip(rs.customers, keep) if not k]
        warnings.warn(f"dropping {len(dropped)} customers with zero consumption: {dropped[:5]}")
    customers = [c for c, k in zip(rs.customers, keep) if k]
    if not customers:
        raise ValueError("no customers with positive consumption")
    values = rs.values[keep] / means[keep, None, None]
    return ReadingSet(customers, list(rs.days), rs.slots_per_day, values)


def normalize_profiles(rs: ReadingSet) -> FeatureMatrix:
    """Normalize and flatten to one date/slot attribute column per (day, slot)."""
    norm = normalize_readings(rs)
    labels = [f"{day.isoformat()}:{h}" for day in norm.days for h in range(norm.slots_per_day)]
    return FeatureMatrix(norm.customers, norm.values.reshape(norm.n_customers, -1), labels)


def build_attributes(rs: ReadingSet, mode: str, params: dict | None = None) -> FeatureMatrix:
    """Build clustering attributes from an already-normalized ReadingSet.

    Modes:
        ``hourly-window``: one column per (day, slot) over the last
            ``window_days`` days (default: all); r = H x window.
        ``monthly-average``: per-slot average within each calendar month;
            r = H x number of months.
        ``tou-segment-average``: per-day average within each slot segment
            given by ``params["segments"]`` (list of slot-index lists);
            r = segments x D.
    """
    params = dict(params or {})
    n, d, h = rs.values.shape
    if mode == "hourly-window":
        window = params.pop("window_days", None)
        if window is None:
            window = d
        if window > d:
            raise ValueError(f"window of {window} days exceeds the {d} available")
        days = rs.days[d - window:]
        values = rs.values[:, d - window:, :].reshape(n, -1)
        labels = [f"{day.isoformat()}:{hh}" for day in days for hh in range(h)]
    elif mode == "monthly-average":
        months: list[tuple[int, int]] = []
        for day in rs.days:
            key = (day.year, day.month)
            if key not in months:
                months.append(key)
        cols = []
        labels = []
        for year, month in months:
            mask = np.array([d0.year == year and d0.month == month for d0 in rs.days])
            cols.append(rs.values[:, mask, :].mean(axis=1))
            labels.extend(f"{year:04d}-{month:02d}:{hh}" for hh in range(h))
        values = np.concatenate(cols, axis=1)
    elif mode == "tou-segment-average":
        segments = params.pop("segments", None)
        if not segments:
            raise ValueError("tou-segment-average requires params['segments']")
        cols = []
        labels = []
        for s, slots in enumerate(segments):
            slots = list(slots)
            if any(sl < 0 or sl >= h for sl in slots):
                raise ValueError(f"segment {s} references slots outside 0..{h - 1}")
            cols.append(rs.values[:, :, slots].mean(axis=2))
            labels.extend(f"seg{s}:{day.isoformat()}" for day in rs.days)
        values = np.concatenate(cols, axis=1)
    else:
        raise ValueError(f"unknown attribute mode {mode!r}")
    if params:
        raise ValueError(f"unknown parameters for mode {mode!r}: {sorted(params)}")
    return FeatureMatrix(list(rs.customers), values, labels)
