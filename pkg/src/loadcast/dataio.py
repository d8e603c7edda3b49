"""Hourly building-load ingestion, feature engineering, and windowing.

The CSV schema follows the ASHRAE meter-data layout (header names are
case-sensitive): timestamp, meter_reading, air_temperature, cloud_coverage,
dew_temperature, precip_depth_1_hr, sea_level_pressure, wind_direction,
wind_speed. Sea-level pressure and wind direction are accepted but never
used (the first is nearly constant, the second carries no signal for load);
unknown columns are ignored with a warning.

Also houses a seeded synthetic-building generator so the full pipeline can
be exercised without proprietary meter data.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import DataError
from .numcore import Rng

log = logging.getLogger(__name__)

# canonical record field -> CSV header
CSV_SCHEMA: dict[str, str] = {
    "timestamp": "timestamp",
    "load": "meter_reading",
    "air_temp": "air_temperature",
    "cloud_coverage": "cloud_coverage",
    "dew_temp": "dew_temperature",
    "precip_depth": "precip_depth_1_hr",
    "wind_speed": "wind_speed",
}
DROPPED_COLUMNS = ("sea_level_pressure", "wind_direction")

WEATHER_FIELDS = ("air_temp", "cloud_coverage", "dew_temp", "precip_depth", "wind_speed")
IMPUTABLE_FIELDS = ("load",) + WEATHER_FIELDS

FEATURE_NAMES = (
    "load_lag",
    "air_temp",
    "cloud_coverage",
    "dew_temp",
    "precip_depth",
    "wind_speed",
    "hour",
    "day_of_week",
    "day_of_month",
    "month",
    "season",
    "is_weekend",
)
_LOAD_COLUMN = FEATURE_NAMES.index("load_lag")

HOUR = timedelta(hours=1)


@dataclass
class LoadRecord:
    """One hourly observation. Weather fields (and the load itself) may be
    missing until imputation."""

    timestamp: datetime
    load: float | None
    air_temp: float | None = None
    cloud_coverage: float | None = None
    dew_temp: float | None = None
    precip_depth: float | None = None
    wind_speed: float | None = None


@dataclass
class FeatureTable:
    """Row-per-hour feature matrix with its timestamps; column order is
    FEATURE_NAMES and never changes."""

    timestamps: list[datetime]
    values: np.ndarray  # n_rows x len(FEATURE_NAMES), float64

    @property
    def feature_names(self) -> tuple[str, ...]:
        return FEATURE_NAMES

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass
class NormalizerStats:
    """Per-feature min/max plus the target (load) range, fitted on the
    training rows only."""

    feature_names: tuple[str, ...]
    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: float
    target_max: float

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "feature_min": self.feature_min.tolist(),
            "feature_max": self.feature_max.tolist(),
            "target_min": self.target_min,
            "target_max": self.target_max,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NormalizerStats":
        return cls(
            feature_names=tuple(doc["feature_names"]),
            feature_min=np.asarray(doc["feature_min"], dtype=np.float64),
            feature_max=np.asarray(doc["feature_max"], dtype=np.float64),
            target_min=float(doc["target_min"]),
            target_max=float(doc["target_max"]),
        )


@dataclass
class WindowSample:
    """A consecutive feature window plus the next hour's normalized load."""

    inputs: np.ndarray  # window x n_features
    target: float


# ---------------------------------------------------------------------------
# parsing and serialization


def _parse_timestamp(text: str, line: int) -> datetime:
    try:
        ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"line {line}: unparseable timestamp {text!r}: {exc}") from exc
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    if ts.minute or ts.second or ts.microsecond:
        raise DataError(f"line {line}: timestamp {text!r} is not aligned to the hour")
    return ts


def _parse_float(text: str | None, column: str, line: int) -> float | None:
    if text is None or text.strip() == "":
        return None
    try:
        return float(text)
    except ValueError as exc:
        raise DataError(f"line {line}: column {column!r} has non-numeric value {text!r}") from exc


def parse_dataset(source, schema: dict[str, str] | None = None) -> list[LoadRecord]:
    """Read hourly load records from a CSV path or stream.

    Records come back sorted by timestamp, strictly increasing; duplicate
    hours and negative loads are rejected.
    """
    schema = dict(schema or CSV_SCHEMA)
    if hasattr(source, "read"):
        first = source.read(0)
        stream = io.TextIOWrapper(source, encoding="utf-8") if isinstance(first, bytes) else source
        records = _parse_stream(stream, schema)
    else:
        with open(source, newline="", encoding="utf-8") as fh:
            records = _parse_stream(fh, schema)
    records.sort(key=lambda r: r.timestamp)
    for prev, cur in zip(records, records[1:]):
        if prev.timestamp == cur.timestamp:
            raise DataError(f"duplicate hour {prev.timestamp.isoformat()} in dataset")
    return records


def _parse_stream(stream, schema: dict[str, str]) -> list[LoadRecord]:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        raise DataError("CSV has no header row")
    known = set(schema.values()) | set(DROPPED_COLUMNS)
    for column in reader.fieldnames:
        if column not in known:
            log.warning("ignoring unknown CSV column %r", column)
    ts_col = schema["timestamp"]
    if ts_col not in reader.fieldnames:
        raise DataError(f"CSV is missing the required {ts_col!r} column")
    records = []
    for row in reader:
        line = reader.line_num
        ts = _parse_timestamp(row.get(ts_col) or "", line)
        load = _parse_float(row.get(schema["load"]), schema["load"], line)
        if load is not None and load < 0:
            raise DataError(f"line {line}: negative load {load}")
        weather = {
            field: _parse_float(row.get(schema[field]), schema[field], line)
            for field in WEATHER_FIELDS
        }
        records.append(LoadRecord(timestamp=ts, load=load, **weather))
    return records


def write_dataset(records, path) -> None:
    """Write records in the documented CSV schema. Floats are serialized at
    full round-trip precision; missing values and the two unused columns
    become empty cells."""
    headers = [
        "timestamp",
        "meter_reading",
        "air_temperature",
        "cloud_coverage",
        "dew_temperature",
        "precip_depth_1_hr",
        "sea_level_pressure",
        "wind_direction",
        "wind_speed",
    ]

    def cell(value):
        return "" if value is None else repr(float(value))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        for r in records:
            writer.writerow(
                [
                    r.timestamp.isoformat(),
                    cell(r.load),
                    cell(r.air_temp),
                    cell(r.cloud_coverage),
                    cell(r.dew_temp),
                    cell(r.precip_depth),
                    "",
                    "",
                    cell(r.wind_speed),
                ]
            )


# ---------------------------------------------------------------------------
# imputation and feature engineering


def impute_missing(records) -> list[LoadRecord]:
    """Fill gaps per column: forward fill from the most recent prior value,
    and fill leading gaps with the column mean over present values.

    The load column is treated like the weather columns so every row can
    serve as both feature and target.
    """
    if not records:
        return []
    out = [replace(r) for r in records]
    for field_name in IMPUTABLE_FIELDS:
        present = [getattr(r, field_name) for r in out if getattr(r, field_name) is not None]
        if not present:
            raise DataError(f"column {field_name!r} has no values to impute from")
        mean = sum(present) / len(present)
        last = None
        for r in out:
            value = getattr(r, field_name)
            if value is None:
                setattr(r, field_name, mean if last is None else last)
            else:
                last = value
    return out


def _season(month: int) -> int:
    if month in (12, 1, 2):
        return 0
    if month in (3, 4, 5):
        return 1
    if month in (6, 7, 8):
        return 2
    return 3


def engineer_features(records) -> FeatureTable:
    """Assemble the model input table: the load itself (autoregressive
    input), five weather columns, and six calendar columns."""
    if not records:
        raise DataError("no records to build features from")
    n = len(records)
    values = np.empty((n, len(FEATURE_NAMES)), dtype=np.float64)
    timestamps = []
    for i, r in enumerate(records):
        for field_name in IMPUTABLE_FIELDS:
            if getattr(r, field_name) is None:
                raise DataError(
                    f"record at {r.timestamp.isoformat()} still has missing "
                    f"{field_name!r}; run impute_missing first"
                )
        ts = r.timestamp
        dow = ts.weekday()
        values[i] = (
            r.load,
            r.air_temp,
            r.cloud_coverage,
            r.dew_temp,
            r.precip_depth,
            r.wind_speed,
            ts.hour,
            dow,
            ts.day,
            ts.month,
            _season(ts.month),
            1.0 if dow >= 5 else 0.0,
        )
        timestamps.append(ts)
    return FeatureTable(timestamps=timestamps, values=values)


# ---------------------------------------------------------------------------
# normalization


def fit_normalizer(table: FeatureTable, train_rows: int) -> NormalizerStats:
    """Min/max per feature over the first ``train_rows`` rows."""
    if train_rows < 1:
        raise DataError("cannot fit a normalizer on an empty train range")
    train_rows = min(train_rows, len(table))
    block = table.values[:train_rows]
    return NormalizerStats(
        feature_names=table.feature_names,
        feature_min=block.min(axis=0),
        feature_max=block.max(axis=0),
        target_min=float(block[:, _LOAD_COLUMN].min()),
        target_max=float(block[:, _LOAD_COLUMN].max()),
    )


def apply_normalizer(stats: NormalizerStats, table: FeatureTable) -> FeatureTable:
    """Min-max scale every feature; a constant feature maps to 0.0
    everywhere so it stays inert instead of dividing by zero."""
    if tuple(stats.feature_names) != tuple(table.feature_names):
        raise DataError("normalizer was fitted on a different feature set")
    span = stats.feature_max - stats.feature_min
    scaled = np.where(span > 0, (table.values - stats.feature_min) / np.where(span > 0, span, 1.0), 0.0)
    return FeatureTable(timestamps=list(table.timestamps), values=scaled)


def invert_target(stats: NormalizerStats, y_norm) -> np.ndarray:
    """Map normalized load back to original units (inverse of the target
    scaling; constant targets invert to their single value)."""
    y_norm = np.asarray(y_norm, dtype=np.float64)
    return y_norm * (stats.target_max - stats.target_min) + stats.target_min


# ---------------------------------------------------------------------------
# windowing and splits


def _window_spans(table: FeatureTable, window: int, horizon: int) -> list[tuple[int, int]]:
    """(first_row, target_row) for every window whose hours, including the
    target hour, are consecutive."""
    n = len(table)
    if n < window + horizon:
        return []
    ts = table.timestamps
    # gap_count[i] = gaps among consecutive pairs in rows [0, i]
    gap_count = np.zeros(n, dtype=np.int64)
    for i in range(1, n):
        gap_count[i] = gap_count[i - 1] + (0 if ts[i] - ts[i - 1] == HOUR else 1)
    spans = []
    for start in range(0, n - window - horizon + 1):
        target = start + window + horizon - 1
        if gap_count[target] - gap_count[start] == 0:
            spans.append((start, target))
    return spans


def make_windows(table: FeatureTable, window: int = 6, horizon: int = 1) -> list[WindowSample]:
    """One sample per position where ``window`` input hours plus the target
    hour are gap-free. Too little data yields an empty list, not an error."""
    if window < 1 or horizon < 1:
        raise ValueError(f"window and horizon must be >= 1, got {window}, {horizon}")
    samples = []
    for start, target in _window_spans(table, window, horizon):
        samples.append(
            WindowSample(
                inputs=table.values[start : start + window].copy(),
                target=float(table.values[target, _LOAD_COLUMN]),
            )
        )
    return samples


def split_budget(samples, budget: int = 336):
    """Chronological split: the first ``budget`` samples train, the rest
    evaluate."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if budget >= len(samples):
        raise DataError(
            f"budget {budget} consumes all {len(samples)} samples, leaving nothing to evaluate"
        )
    return list(samples[:budget]), list(samples[budget:])


def prepare_budgeted(records, budget: int, window: int = 6, horizon: int = 1):
    """Full pipeline for a data-scarce building: impute, engineer,
    fit the normalizer on exactly the rows the budgeted training windows
    touch, scale, window, split.

    Returns (train_samples, eval_samples, stats).
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    raw = engineer_features(impute_missing(records))
    spans = _window_spans(raw, window, horizon)
    if budget >= len(spans):
        raise DataError(
            f"budget {budget} consumes all {len(spans)} samples, leaving nothing to evaluate"
        )
    fit_rows = spans[budget - 1][1] + 1  # last row any training window touches
    stats = fit_normalizer(raw, fit_rows)
    samples = make_windows(apply_normalizer(stats, raw), window, horizon)
    train, evaluation = split_budget(samples, budget)
    return train, evaluation, stats


def prepare_full(records, window: int = 6, horizon: int = 1):
    """Pipeline for a data-rich building: normalize over the whole series
    and window everything for training.

    Returns (samples, stats).
    """
    raw = engineer_features(impute_missing(records))
    stats = fit_normalizer(raw, len(raw))
    samples = make_windows(apply_normalizer(stats, raw), window, horizon)
    if not samples:
        raise DataError(
            f"series of {len(raw)} hours is too short for window {window} + horizon {horizon}"
        )
    return samples, stats


# ---------------------------------------------------------------------------
# synthetic buildings


@dataclass(frozen=True)
class BuildingProfile:
    """Shape parameters for a synthetic building's load curve."""

    base_kw: float = 100.0
    daily_amp: float = 60.0
    weekend_factor: float = 0.45
    noise_sd: float = 2.0
    temp_coupling: float = 1.5

    def __post_init__(self):
        if self.base_kw <= 0:
            raise ValueError(f"base_kw must be positive, got {self.base_kw}")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be non-negative, got {self.noise_sd}")


# the default transfer pair: same daily/weekly structure, different scale
SOURCE_PROFILE = BuildingProfile(base_kw=120.0, daily_amp=85.0, weekend_factor=0.45,
                                 noise_sd=3.0, temp_coupling=1.8)
TARGET_PROFILE = BuildingProfile(base_kw=62.0, daily_amp=40.0, weekend_factor=0.45,
                                 noise_sd=1.8, temp_coupling=1.0)

_DEFAULT_START = datetime(2016, 1, 1, 0)


def generate_synthetic_building(
    seed: int,
    days: int,
    profile: BuildingProfile = BuildingProfile(),
    start: datetime = _DEFAULT_START,
) -> list[LoadRecord]:
    """Deterministic hourly records: a mid-day load bump on a weekday base,
    weekends scaled down by ``weekend_factor``, a temperature-coupled term,
    and Gaussian noise. With ``noise_sd`` zero the series is exactly
    week-periodic."""
    if days < 1:
        raise ValueError(f"days must be >= 1, got {days}")
    rng = Rng(seed)
    records = []
    for h in range(days * 24):
        ts = start + h * HOUR
        hour = ts.hour
        g_load = rng.normal()
        g_temp = rng.normal()
        g_cloud = rng.normal()
        g_wind = rng.normal()
        temp = 12.0 + 9.0 * math.cos(2.0 * math.pi * (hour - 14) / 24.0)
        temp += 0.15 * profile.noise_sd * g_temp
        bump = 0.5 * (1.0 + math.cos(2.0 * math.pi * (hour - 13) / 24.0))
        level = profile.base_kw + profile.daily_amp * bump + profile.temp_coupling * (temp - 12.0)
        if ts.weekday() >= 5:
            level *= profile.weekend_factor
        records.append(
            LoadRecord(
                timestamp=ts,
                load=max(0.0, level + profile.noise_sd * g_load),
                air_temp=temp,
                cloud_coverage=min(9.0, max(0.0, 4.0 + 3.0 * math.cos(2.0 * math.pi * (hour - 2) / 24.0) + 0.4 * profile.noise_sd * g_cloud)),
                dew_temp=temp - 4.5,
                precip_depth=max(0.0, 1.5 * math.sin(2.0 * math.pi * h / 63.0)),
                wind_speed=max(0.0, 3.5 + 1.2 * math.cos(2.0 * math.pi * (hour - 3) / 24.0) + 0.3 * profile.noise_sd * g_wind),
            )
        )
    return records
