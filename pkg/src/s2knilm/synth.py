"""Synthetic multi-device meter data with known ground truth.

Each device-day is

    amplitude_i * (rho * household(t) + (1 - rho) * usage_ij(t)) * (1 + noise)

where ``household`` is a smooth occupancy curve shared by every device and
``usage_ij`` is one of the device's habitual routines ("modes", each a
piecewise-constant schedule over the device's power states), picked at
random per day; with ``mode_concentration`` set, the day instead mixes all
routines with Dirichlet weights. ``rho`` is the
correlation knob: as it grows the dictionary columns become nearly collinear
across devices. ``noise`` (multiplicative, per sample) and ``jitter`` (time
shift of the routine, in samples) push test days off the span of the
training days. The aggregate is the exact elementwise sum of the device
channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .dataio import SECONDS_PER_DAY, ChannelTable

__all__ = [
    "SynthSpec",
    "SynthDataset",
    "synth_generate",
    "TwoLevelSpec",
    "TwoLevelDataset",
    "synth_two_level",
    "device_name",
    "AGGREGATE",
    "HVAC",
    "BUILDING",
]

AGGREGATE = "aggregate"
HVAC = "hvac"
BUILDING = "building"


def device_name(i: int) -> str:
    return f"dev{i}"


@dataclass(frozen=True)
class SynthSpec:
    device_count: int = 3
    states_per_device: int | Sequence[int] = 3
    day_count: int = 10
    correlation: float = 0.5
    off_days: Mapping[int, Sequence[int]] = field(default_factory=dict)
    seed: int = 0
    samples_per_day: int = 96
    amplitude_range: tuple[float, float] = (0.5, 5.0)
    modes_per_device: int = 3
    mode_concentration: float | None = None
    noise: float = 0.0
    jitter: int = 0
    start_date: str = "2012-04-01"

    def __post_init__(self) -> None:
        if self.device_count < 1 or self.day_count < 1:
            raise ValueError("need at least one device and one day")
        if not 0 <= self.correlation < 1:
            raise ValueError("correlation knob must be in [0, 1)")
        if SECONDS_PER_DAY % self.samples_per_day:
            raise ValueError("samples_per_day must divide 86400")
        if self.modes_per_device < 1 or (self.mode_concentration is not None and self.mode_concentration <= 0):
            raise ValueError("need at least one mode and a positive concentration")
        if self.noise < 0 or self.jitter < 0:
            raise ValueError("noise and jitter must be non-negative")
        for dev, days in self.off_days.items():
            if not 0 <= dev < self.device_count:
                raise ValueError(f"off_days names device {dev}, only {self.device_count} exist")
            if any(not 0 <= d < self.day_count for d in days):
                raise ValueError(f"off_days for device {dev} out of range")

    def states(self, i: int) -> int:
        s = self.states_per_device
        n = s if isinstance(s, int) else s[i]
        if n < 2:
            raise ValueError("a device needs at least an OFF and one ON state")
        return n


@dataclass(frozen=True)
class SynthDataset:
    table: ChannelTable
    device_channels: tuple[str, ...]
    aggregate_channel: str = AGGREGATE

    def truth(self, days: Sequence[int] | None = None):
        return [self.table.day_matrix(c, days) for c in self.device_channels]

    def aggregate(self, days: Sequence[int] | None = None):
        return self.table.day_matrix(self.aggregate_channel, days)


def _household_curve(rng, m):
    t = np.arange(m) / m
    curve = np.full(m, 0.3)
    # morning and evening peaks plus one random bump
    for centre, width, height in ((0.3, 0.05, 1.0), (0.8, 0.07, 1.5), (rng.uniform(0.4, 0.7), 0.1, 0.6)):
        c = centre + rng.normal(0, 0.02)
        curve += height * np.exp(-0.5 * ((t - c) / width) ** 2)
    return curve / curve.mean()


def _usage_template(rng, m, levels):
    """The device's habitual day: a few (start, length, level) intervals."""
    lo = int(rng.integers(0, m // 2))
    hi = min(m, lo + m // 2)
    template = []
    for _ in range(int(rng.integers(2, 6))):
        start = int(rng.integers(lo, hi))
        length = int(rng.integers(max(1, m // 48), max(2, m // 8)))
        template.append((start, length, float(levels[rng.integers(1, len(levels))])))
    return template


def _mode_profile(m, template, standby):
    u = np.full(m, standby)
    for start, length, level in template:
        u[start : start + length] += level
    return u / u.mean()


def _device_modes(rng, m, n_states, n_modes, amplitude_range):
    """Amplitude and n_modes x m usage routines (mean 1) of one device."""
    levels = np.concatenate([[0.0], np.sort(rng.uniform(0.2, 1.0, n_states - 1))])
    amplitude = rng.uniform(*amplitude_range)
    standby = 0.05 * levels[1]
    usage = np.stack([_mode_profile(m, _usage_template(rng, m, levels), standby) for _ in range(n_modes)])
    return amplitude, usage


def _day(amplitude, rho, household, usage):
    return amplitude * (rho * household + (1 - rho) * usage)


def _table(channels, m, start_date):
    n = len(next(iter(channels.values())))
    period = SECONDS_PER_DAY // m
    t0 = int(pd.Timestamp(start_date, tz="UTC").timestamp())
    return ChannelTable(t0 + np.arange(n, dtype=np.int64) * period, channels, period)


def synth_generate(spec: SynthSpec) -> SynthDataset:
    rng = np.random.default_rng(spec.seed)
    m, n_days, k = spec.samples_per_day, spec.day_count, spec.device_count
    rho = spec.correlation
    household = _household_curve(rng, m)

    channels = {}
    for i in range(k):
        amplitude, usage_modes = _device_modes(rng, m, spec.states(i), spec.modes_per_device, spec.amplitude_range)
        off = set(spec.off_days.get(i, ()))
        days = []
        for j in range(n_days):
            if spec.mode_concentration is None:
                usage = usage_modes[rng.integers(spec.modes_per_device)]
            else:
                usage = rng.dirichlet(np.full(spec.modes_per_device, spec.mode_concentration)) @ usage_modes
            if spec.jitter:
                usage = np.roll(usage, int(rng.integers(-spec.jitter, spec.jitter + 1)))
            day = _day(amplitude, rho, household, usage)
            if spec.noise:
                day = np.maximum(day * (1 + spec.noise * rng.standard_normal(m)), 0.0)
            days.append(np.zeros(m) if j in off else day)
        channels[device_name(i)] = np.concatenate(days)

    names = tuple(device_name(i) for i in range(k))
    aggregate = np.zeros(m * n_days)
    for name in names:
        aggregate = aggregate + channels[name]
    channels[AGGREGATE] = aggregate
    return SynthDataset(_table(channels, m, spec.start_date), names)


@dataclass(frozen=True)
class TwoLevelSpec:
    """A building whose HVAC unit is itself a sum of components.

    Every day the HVAC unit runs in one of ``regime_count`` regimes; a regime
    fixes the routine of each component, and ``off_components`` lists the
    components idle in a given regime. The other building devices follow
    their own routines independently.
    """

    component_count: int = 5
    device_count: int = 3
    regime_count: int = 3
    day_count: int = 12
    correlation: float = 0.5
    off_components: Mapping[int, Sequence[int]] = field(default_factory=dict)
    seed: int = 0
    samples_per_day: int = 96
    amplitude_range: tuple[float, float] = (0.5, 5.0)
    modes_per_device: int = 2
    start_date: str = "2012-04-01"

    def __post_init__(self) -> None:
        if min(self.component_count, self.device_count, self.regime_count, self.day_count) < 1:
            raise ValueError("counts must be positive")
        if not 0 <= self.correlation < 1:
            raise ValueError("correlation knob must be in [0, 1)")
        for regime, comps in self.off_components.items():
            if not 0 <= regime < self.regime_count or any(not 0 <= c < self.component_count for c in comps):
                raise ValueError(f"off_components entry {regime}: {list(comps)} out of range")


@dataclass(frozen=True)
class TwoLevelDataset:
    table: ChannelTable
    device_channels: tuple[str, ...]
    component_channels: tuple[str, ...]
    regimes: tuple[int, ...]
    hvac_channel: str = HVAC
    building_channel: str = BUILDING

    def schemas(self) -> tuple[dict, dict]:
        """Stage-1 and stage-2 schema dicts in the config-file format."""
        stage1 = {
            "timestamp_column": "timestamp",
            "devices": list(self.device_channels),
            "aggregate": self.building_channel,
            "hvac_group": self.hvac_channel,
        }
        stage2 = {
            "timestamp_column": "timestamp",
            "devices": list(self.component_channels),
            "aggregate": self.hvac_channel,
        }
        return stage1, stage2


def synth_two_level(spec: TwoLevelSpec) -> TwoLevelDataset:
    rng = np.random.default_rng(spec.seed)
    m, n_days = spec.samples_per_day, spec.day_count
    household = _household_curve(rng, m)
    regimes = rng.integers(spec.regime_count, size=n_days)

    channels = {}
    hvac = np.zeros(m * n_days)
    components = tuple(f"comp{c}" for c in range(spec.component_count))
    for c, name in enumerate(components):
        amplitude, usage = _device_modes(rng, m, 3, spec.regime_count, spec.amplitude_range)
        profiles = _day(amplitude, spec.correlation, household, usage)
        days = [
            np.zeros(m) if c in spec.off_components.get(int(r), ()) else profiles[r] for r in regimes
        ]
        channels[name] = np.concatenate(days)
        hvac = hvac + channels[name]
    channels[HVAC] = hvac

    building = hvac.copy()
    others = tuple(device_name(i) for i in range(spec.device_count))
    for name in others:
        amplitude, usage = _device_modes(rng, m, 3, spec.modes_per_device, spec.amplitude_range)
        profiles = _day(amplitude, spec.correlation, household, usage)
        channels[name] = np.concatenate([profiles[rng.integers(spec.modes_per_device)] for _ in range(n_days)])
        building = building + channels[name]
    channels[BUILDING] = building
    return TwoLevelDataset(
        _table(channels, m, spec.start_date), (HVAC,) + others, components, tuple(int(r) for r in regimes)
    )
