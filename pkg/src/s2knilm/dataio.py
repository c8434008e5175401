"""Meter CSV ingestion, day windowing, dictionary construction, train/test
splits, and the on-disk layout for dictionaries and split plans.

A ``ChannelTable`` holds samples on a uniform grid; its complete local days
are the analysis windows that ``day_matrix`` hands back as m x d blocks.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .model import (
    ConfigError,
    DeviceGroup,
    GroupedDictionary,
    Normalization,
    SignalMatrix,
    StructureError,
    Unit,
    groups_from_sizes,
)

__all__ = [
    "SECONDS_PER_DAY",
    "MAX_MISSING_FRACTION",
    "IngestionError",
    "IngestionWarning",
    "CsvSchema",
    "DeviceSpec",
    "DatasetSchema",
    "IngestionLog",
    "ChannelTable",
    "load_channel_csv",
    "write_channel_csv",
    "build_dictionary",
    "SplitPlan",
    "make_splits",
    "save_dictionary",
    "load_dictionary",
    "save_matrix",
    "load_matrix",
]

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
MAX_MISSING_FRACTION = 0.05


class IngestionError(ValueError):
    """The input file cannot be turned into a valid channel table."""


class IngestionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CsvSchema:
    """How to read one meter export.

    ``timestamp_column`` defaults to the first column. Timestamps are epoch
    seconds or ISO-8601 strings; ``utc_offset_minutes`` shifts them to local
    time before days are cut at midnight.
    """

    timestamp_column: str | None = None
    utc_offset_minutes: int = 0
    channels: tuple[str, ...] | None = None


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    channels: Mapping[str, str]

    def channel(self, measurement: str) -> str:
        try:
            return self.channels[measurement]
        except KeyError:
            raise ConfigError(
                f"device {self.device_id!r} has no {measurement!r} channel (has {sorted(self.channels)})"
            ) from None


_UNITS = {"current": Unit.AMPERE, "power": Unit.WATT}


@dataclass(frozen=True)
class DatasetSchema:
    """The schema config file: which CSV columns are devices, which is the
    aggregate, which measurement to use, and (for two-stage runs) which
    device is the HVAC unit."""

    csv: CsvSchema = field(default_factory=CsvSchema)
    measurement: str = "current"
    devices: tuple[DeviceSpec, ...] = ()
    aggregate: Mapping[str, str] | None = None
    hvac_group: str | None = None

    def __post_init__(self) -> None:
        if self.measurement not in _UNITS:
            raise ConfigError(f"measurement must be one of {sorted(_UNITS)}, got {self.measurement!r}")
        ids = [d.device_id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate device ids in schema: {ids}")
        if self.hvac_group is not None and self.hvac_group not in ids:
            raise ConfigError(f"hvac_group {self.hvac_group!r} is not one of the schema devices")

    @property
    def unit(self) -> Unit:
        return _UNITS[self.measurement]

    @property
    def device_ids(self) -> tuple[str, ...]:
        return tuple(d.device_id for d in self.devices)

    @property
    def device_channels(self) -> tuple[str, ...]:
        return tuple(d.channel(self.measurement) for d in self.devices)

    @property
    def aggregate_channel(self) -> str | None:
        if not self.aggregate:
            return None
        try:
            return self.aggregate[self.measurement]
        except KeyError:
            raise ConfigError(f"aggregate has no {self.measurement!r} channel") from None

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DatasetSchema":
        def channel_map(value, what):
            if isinstance(value, str):
                return {raw.get("measurement", "current"): value}
            if isinstance(value, Mapping):
                return {str(k): str(v) for k, v in value.items()}
            raise ConfigError(f"{what}: expected a channel name or a measurement->channel mapping")

        known = {"timestamp_column", "utc_offset_minutes", "measurement", "devices", "aggregate", "hvac_group"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown schema keys: {sorted(unknown)}")
        devices = []
        for entry in raw.get("devices", []):
            if isinstance(entry, str):
                devices.append(DeviceSpec(entry, channel_map(entry, entry)))
                continue
            if "id" not in entry:
                raise ConfigError(f"device entry without 'id': {entry}")
            chan = entry.get("channels", entry.get("channel", entry["id"]))
            devices.append(DeviceSpec(str(entry["id"]), MappingProxyType(channel_map(chan, entry["id"]))))
        agg = raw.get("aggregate")
        return cls(
            csv=CsvSchema(
                timestamp_column=raw.get("timestamp_column"),
                utc_offset_minutes=int(raw.get("utc_offset_minutes", 0)),
            ),
            measurement=raw.get("measurement", "current"),
            devices=tuple(devices),
            aggregate=None if agg is None else MappingProxyType(channel_map(agg, "aggregate")),
            hvac_group=raw.get("hvac_group"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DatasetSchema":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"schema file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"schema file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)


@dataclass(frozen=True)
class IngestionLog:
    clamped_negative: int = 0
    filled_missing: int = 0
    dropped_days: tuple[str, ...] = ()
    snapped_duplicates: int = 0


@dataclass(frozen=True)
class ChannelTable:
    """Gap-repaired samples on a uniform grid.

    Days dropped for excessive missing data leave holes in ``timestamps``;
    everything else sits on ``first_timestamp + n * sample_period``. Complete
    local days (midnight to midnight, all m samples present) are the analysis
    windows; partial days at either end stay in the table but never become
    windows.
    """

    timestamps: NDArray[np.int64]
    channels: Mapping[str, NDArray[np.float64]]
    sample_period: int
    utc_offset_minutes: int = 0
    log: IngestionLog = field(default_factory=IngestionLog)

    def __post_init__(self) -> None:
        ts = np.array(self.timestamps, dtype=np.int64).reshape(-1)
        if ts.size and np.any(np.diff(ts) <= 0):
            raise IngestionError("timestamps must be strictly increasing")
        if self.sample_period <= 0 or SECONDS_PER_DAY % self.sample_period:
            raise IngestionError(f"sample period {self.sample_period}s does not divide a day")
        if ts.size and np.any((ts - ts[0]) % self.sample_period):
            raise IngestionError("timestamps are not on a uniform grid")
        chans = {}
        for name, values in self.channels.items():
            arr = np.array(values, dtype=np.float64).reshape(-1)
            if arr.shape != ts.shape:
                raise IngestionError(f"channel {name!r} has {arr.size} samples for {ts.size} timestamps")
            if np.any(~np.isfinite(arr)) or np.any(arr < 0):
                raise IngestionError(f"channel {name!r} has NaN or negative samples")
            arr.setflags(write=False)
            chans[str(name)] = arr
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "channels", MappingProxyType(chans))

    @property
    def samples_per_day(self) -> int:
        return SECONDS_PER_DAY // self.sample_period

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(self.channels)

    @cached_property
    def _days(self) -> tuple[tuple[str, ...], NDArray[np.int64]]:
        local = self.timestamps + self.utc_offset_minutes * 60
        day_id = local // SECONDS_PER_DAY
        ids, starts, counts = np.unique(day_id, return_index=True, return_counts=True)
        m = self.samples_per_day
        full = counts == m
        labels = tuple(
            pd.Timestamp(int(d) * SECONDS_PER_DAY, unit="s").strftime("%Y-%m-%d") for d in ids[full]
        )
        return labels, starts[full]

    @property
    def day_labels(self) -> tuple[str, ...]:
        return self._days[0]

    @property
    def day_count(self) -> int:
        return len(self._days[0])

    def day_matrix(
        self, channel: str, days: Sequence[int] | None = None, unit: Unit = Unit.AMPERE
    ) -> SignalMatrix:
        """Samples of ``channel`` as an m x d block, one column per complete day."""
        if channel not in self.channels:
            raise KeyError(f"no channel {channel!r}; have {list(self.channels)}")
        labels, starts = self._days
        if not labels:
            raise IngestionError("table holds no complete day")
        idx = list(range(len(labels))) if days is None else [int(j) for j in days]
        if any(not 0 <= j < len(labels) for j in idx):
            raise IndexError(f"day index out of range for {len(labels)} days")
        m = self.samples_per_day
        series = self.channels[channel]
        mat = np.stack([series[starts[j] : starts[j] + m] for j in idx], axis=1)
        return SignalMatrix(mat, float(self.sample_period), unit, tuple(labels[j] for j in idx))

    def sum_of(self, channels: Iterable[str], days: Sequence[int] | None = None, unit: Unit = Unit.AMPERE) -> SignalMatrix:
        mats = [self.day_matrix(c, days, unit) for c in channels]
        return mats[0].with_values(np.sum([m.values for m in mats], axis=0))


def _line_list(lines: Sequence[int], limit: int = 20) -> str:
    lines = sorted(lines)
    shown = str(lines[:limit])
    return shown if len(lines) <= limit else f"{shown} and {len(lines) - limit} more"


def _parse_timestamps(raw: pd.Series) -> NDArray[np.int64]:
    numeric = pd.to_numeric(raw, errors="coerce")
    if numeric.notna().all():
        return np.round(numeric.to_numpy(dtype=np.float64)).astype(np.int64)
    parsed = pd.to_datetime(raw, utc=True, errors="coerce", format="ISO8601")
    if parsed.isna().any():
        bad = (np.flatnonzero(parsed.isna().to_numpy()) + 2).tolist()
        raise IngestionError(f"unparseable timestamps on lines {_line_list(bad)}")
    return (parsed.astype("int64") // 10**9).to_numpy(dtype=np.int64)


def load_channel_csv(path: str | Path, schema: CsvSchema | DatasetSchema | None = None) -> ChannelTable:
    """Read a meter CSV into a gap-repaired channel table.

    Negative samples are clamped to zero. Missing samples (empty cells or
    absent grid slots) are filled with the last observation of the same local
    day; a gap at the start of a day takes the day's first observation. Days
    where any channel misses more than 5% of its slots are dropped.
    """
    if isinstance(schema, DatasetSchema):
        wanted = list(schema.device_channels)
        if schema.aggregate_channel:
            wanted.append(schema.aggregate_channel)
        csv = CsvSchema(schema.csv.timestamp_column, schema.csv.utc_offset_minutes, None)
    else:
        csv = schema or CsvSchema()
        wanted = list(csv.channels) if csv.channels else None

    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise IngestionError(f"data file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise IngestionError(f"{path} is empty") from None
    except pd.errors.ParserError as exc:
        raise IngestionError(f"{path}: malformed CSV: {exc}") from None
    if frame.shape[1] < 2:
        raise IngestionError(f"{path}: need a timestamp column and at least one channel")
    ts_col = csv.timestamp_column or frame.columns[0]
    if ts_col not in frame.columns:
        raise IngestionError(f"{path}: no timestamp column {ts_col!r}")
    names = [c for c in frame.columns if c != ts_col]
    if wanted is not None:
        absent = [c for c in wanted if c not in names]
        if absent:
            # device columns may legitimately be absent at test time; callers
            # decide whether that is fatal
            log.info("%s: channels not present: %s", path, absent)
        names = [c for c in names if c in set(wanted)]
        if not names:
            raise IngestionError(f"{path}: none of the requested channels {wanted} are present")
    if frame.shape[0] < 1:
        raise IngestionError(f"{path}: no data rows")

    ts = _parse_timestamps(frame[ts_col].str.strip())
    if np.any(np.diff(ts) <= 0):
        lines = (np.flatnonzero(np.diff(ts) <= 0) + 3).tolist()
        raise IngestionError(f"{path}: timestamps are not strictly increasing (lines {_line_list(lines)})")

    values = np.empty((ts.size, len(names)))
    bad_lines: set[int] = set()
    for c, name in enumerate(names):
        text = frame[name].str.strip()
        blank = ((text == "") | text.str.lower().isin({"nan", "na", "null"})).to_numpy()
        cells = np.where(blank, "nan", text.to_numpy(dtype=str))
        try:
            # numpy's conversion is correctly rounded, so written values round-trip
            values[:, c] = cells.astype(np.float64)
        except ValueError:
            for r, cell in enumerate(cells):
                try:
                    values[r, c] = float(cell)
                except ValueError:
                    values[r, c] = np.nan
                    bad_lines.add(r + 2)
        bad_lines.update((np.flatnonzero(np.isinf(values[:, c]) & ~blank) + 2).tolist())
    if bad_lines:
        raise IngestionError(f"{path}: unparseable values on lines {_line_list(bad_lines)}")

    if ts.size > 1:
        period = int(round(float(np.median(np.diff(ts)))))
    else:
        period = 60
    if period <= 0 or SECONDS_PER_DAY % period:
        raise IngestionError(f"{path}: inferred sample period {period}s does not divide a day")

    negatives = int(np.sum(values < 0))
    if negatives:
        warnings.warn(f"{path}: clamped {negatives} negative samples to 0", IngestionWarning, stacklevel=2)
        values = np.where(values < 0, 0.0, values)

    # snap onto the grid anchored at the first timestamp
    slots = np.round((ts - ts[0]) / period).astype(np.int64)
    first = np.ones(slots.size, dtype=bool)
    first[1:] = slots[1:] != slots[:-1]
    duplicates = int(np.sum(~first))
    grid = np.full((int(slots[-1]) + 1, len(names)), np.nan)
    grid[slots[first]] = values[first]
    grid_ts = ts[0] + np.arange(grid.shape[0], dtype=np.int64) * period

    offset = csv.utc_offset_minutes * 60
    day_id = (grid_ts + offset) // SECONDS_PER_DAY
    keep = np.zeros(grid.shape[0], dtype=bool)
    dropped, filled = [], 0
    for d in np.unique(day_id):
        rows = np.flatnonzero(day_id == d)
        block = grid[rows]
        missing = np.isnan(block)
        if np.any(missing.mean(axis=0) > MAX_MISSING_FRACTION) or np.all(missing):
            dropped.append(pd.Timestamp(int(d) * SECONDS_PER_DAY, unit="s").strftime("%Y-%m-%d"))
            continue
        filled += int(missing.sum())
        grid[rows] = pd.DataFrame(block).ffill().bfill().to_numpy()
        keep[rows] = True
    if dropped:
        warnings.warn(
            f"{path}: dropped {len(dropped)} days with more than 5% missing samples", IngestionWarning, stacklevel=2
        )

    return ChannelTable(
        timestamps=grid_ts[keep],
        channels={n: grid[keep, c] for c, n in enumerate(names)},
        sample_period=period,
        utc_offset_minutes=csv.utc_offset_minutes,
        log=IngestionLog(negatives, filled, tuple(dropped), duplicates),
    )


def write_channel_csv(path: str | Path, table: ChannelTable, timestamp_column: str = "timestamp") -> Path:
    """Write ``table`` as epoch-second timestamps plus one column per channel."""
    path = Path(path)
    cols = {timestamp_column: table.timestamps}
    cols.update(table.channels)
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")
    return path


def build_dictionary(
    table: ChannelTable,
    device_channels: Sequence[str],
    train_days: Sequence[int],
    normalization: Normalization | str = Normalization.NONE,
    device_ids: Sequence[str] | None = None,
) -> GroupedDictionary:
    """One column per (device, training day), grouped by device in order.

    Days on which a device never draws anything are skipped for that device:
    an all-zero basis cannot take part in a sum-to-one combination.
    """
    device_ids = list(device_channels) if device_ids is None else list(device_ids)
    if len(device_ids) != len(device_channels):
        raise ConfigError("device_ids and device_channels differ in length")
    norm = Normalization.parse(normalization)
    days = [int(j) for j in train_days]
    if not days:
        raise ConfigError("no training days")
    blocks, sizes, labels = [], [], []
    for dev, chan in zip(device_ids, device_channels):
        if chan not in table.channels:
            raise ConfigError(f"device {dev!r}: channel {chan!r} not in data")
        mat = table.day_matrix(chan, days)
        alive = np.any(mat.values > 0, axis=0)
        if not alive.all():
            skipped = [mat.window_labels[j] for j in np.flatnonzero(~alive)]
            warnings.warn(f"device {dev!r}: skipped {len(skipped)} all-zero training days", IngestionWarning, stacklevel=2)
        if not alive.any():
            raise ConfigError(f"device {dev!r} has no usable training days")
        blocks.append(mat.values[:, alive])
        sizes.append(int(alive.sum()))
        labels.extend(f"{dev}@{mat.window_labels[j]}" for j in np.flatnonzero(alive))
    bases = np.hstack(blocks)
    scales = None
    if norm is Normalization.UNIT_L2:
        scales = np.linalg.norm(bases, axis=0)
        bases = bases / scales
    return GroupedDictionary(bases, groups_from_sizes(device_ids, sizes), norm, scales, tuple(labels))


@dataclass(frozen=True)
class SplitPlan:
    fold_count: int
    train_days: tuple[tuple[int, ...], ...]
    test_days: tuple[tuple[int, ...], ...]
    seed: int
    train_fraction: float | None = None
    mode: str = "random"

    def __post_init__(self) -> None:
        if len(self.train_days) != self.fold_count or len(self.test_days) != self.fold_count:
            raise StructureError("split plan fold count does not match its index lists")
        for tr, te in zip(self.train_days, self.test_days):
            if set(tr) & set(te):
                raise StructureError("train and test days overlap within a fold")

    def to_dict(self) -> dict:
        return {
            "fold_count": self.fold_count,
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "mode": self.mode,
            "folds": [{"train": list(tr), "test": list(te)} for tr, te in zip(self.train_days, self.test_days)],
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "SplitPlan":
        folds = raw["folds"]
        return cls(
            fold_count=int(raw["fold_count"]),
            train_days=tuple(tuple(int(x) for x in f["train"]) for f in folds),
            test_days=tuple(tuple(int(x) for x in f["test"]) for f in folds),
            seed=int(raw["seed"]),
            train_fraction=raw.get("train_fraction"),
            mode=raw.get("mode", "random"),
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_splits(
    day_count: int, train_fraction: float, fold_count: int, seed: int, mode: str = "random"
) -> SplitPlan:
    """Train/test day indices per fold.

    ``mode="random"`` draws ``round(train_fraction * day_count)`` training
    days without replacement independently for each fold (repeated random
    subsampling). ``mode="kfold"`` partitions the shuffled days into
    ``fold_count`` disjoint test sets and ignores ``train_fraction``.
    """
    if fold_count < 1:
        raise ValueError("fold_count must be at least 1")
    rng = np.random.default_rng(seed)
    if mode == "random":
        if not 0 < train_fraction < 1:
            raise ValueError("train_fraction must be strictly between 0 and 1")
        n_train = _round_half_up(train_fraction * day_count)
        if n_train < 1 or n_train >= day_count:
            raise ValueError(f"{day_count} days at fraction {train_fraction} leave an empty train or test set")
        train, test = [], []
        for _ in range(fold_count):
            perm = rng.permutation(day_count)
            train.append(tuple(sorted(int(x) for x in perm[:n_train])))
            test.append(tuple(sorted(int(x) for x in perm[n_train:])))
    elif mode == "kfold":
        if fold_count < 2 or fold_count > day_count:
            raise ValueError(f"kfold needs 2 <= folds <= days, got {fold_count} folds for {day_count} days")
        perm = rng.permutation(day_count)
        chunks = np.array_split(perm, fold_count)
        test = [tuple(sorted(int(x) for x in c)) for c in chunks]
        train = [tuple(sorted(set(range(day_count)) - set(t))) for t in test]
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return SplitPlan(fold_count, tuple(train), tuple(test), int(seed), train_fraction, mode)


def save_matrix(path: str | Path, matrix: NDArray[np.float64], header: Sequence[str] | None = None) -> None:
    """CSV with full round-trip precision (``%.17g``)."""
    with open(path, "w", newline="") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        np.savetxt(fh, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")


def load_matrix(path: str | Path, header: bool = False) -> NDArray[np.float64]:
    return np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1 if header else 0)


def save_dictionary(directory: str | Path, dictionary: GroupedDictionary, extra: Mapping | None = None) -> Path:
    """Write ``bases.csv`` (m x T) and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_matrix(directory / "bases.csv", dictionary.bases)
    manifest = {
        "m": dictionary.m,
        "T": dictionary.T,
        "k": dictionary.k,
        "normalization": dictionary.normalization.value,
        "groups": [
            {"device_id": g.device_id, "column_start": g.column_start, "column_count": g.column_count}
            for g in dictionary.groups
        ],
        "column_scales": [float(s) for s in dictionary.column_scales],
        "column_labels": list(dictionary.column_labels),
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_dictionary(directory: str | Path) -> tuple[GroupedDictionary, dict]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        bases = load_matrix(directory / "bases.csv")
    except FileNotFoundError as exc:
        raise ConfigError(f"dictionary artifact incomplete: {exc.filename}") from None
    if bases.shape != (manifest["m"], manifest["T"]):
        bases = bases.reshape(manifest["m"], manifest["T"])
    groups = tuple(DeviceGroup(g["device_id"], g["column_start"], g["column_count"]) for g in manifest["groups"])
    dictionary = GroupedDictionary(
        bases,
        groups,
        Normalization.parse(manifest["normalization"]),
        np.asarray(manifest["column_scales"]),
        tuple(manifest.get("column_labels", ())),
    )
    return dictionary, manifest
