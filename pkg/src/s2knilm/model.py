"""Core domain types: signal matrices, grouped dictionaries, selector and
activation matrices, and the reconstruction operations shared by every
solver.

All arrays are stored as read-only float64 copies so instances can be shared
between worker threads without defensive copying.
"""

from __future__ import annotations

import enum
from functools import cached_property
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "StructureError",
    "ConfigError",
    "Unit",
    "Normalization",
    "SignalMatrix",
    "DeviceGroup",
    "GroupedDictionary",
    "SelectorMatrix",
    "ActivationMatrix",
    "SolverDiagnostics",
    "DisaggregationResult",
    "build_selector",
    "reconstruct",
    "total_reconstruction",
]


class StructureError(ValueError):
    """Raised when matrices or groupings violate a structural invariant."""


class ConfigError(ValueError):
    """Raised for inconsistent run or pipeline configuration."""


class Unit(str, enum.Enum):
    AMPERE = "ampere"
    WATT = "watt"


class Normalization(str, enum.Enum):
    NONE = "none"
    UNIT_L2 = "unit_l2"

    @classmethod
    def parse(cls, value: "str | Normalization") -> "Normalization":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown normalization {value!r}; expected none or unit-l2") from None


def _frozen(values: ArrayLike, ndim: int = 2) -> NDArray[np.float64]:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise StructureError(f"expected a {ndim}-D array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SignalMatrix:
    """An m x d block of non-negative samples, one column per analysis window.

    Windows are days by default (m = 1440 for minute data), but nothing here
    depends on that.
    """

    values: NDArray[np.float64]
    sample_period: float = 60.0
    unit: Unit = Unit.AMPERE
    window_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        values = _frozen(values)
        m, d = values.shape
        if m < 1 or d < 1:
            raise StructureError(f"signal must be at least 1x1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise StructureError("signal contains NaN or infinite samples")
        if np.any(values < 0):
            raise StructureError("signal contains negative samples")
        labels = tuple(str(x) for x in self.window_labels) or tuple(str(j) for j in range(d))
        if len(labels) != d:
            raise StructureError(f"{len(labels)} window labels for {d} columns")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "window_labels", labels)
        object.__setattr__(self, "unit", Unit(self.unit))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: ArrayLike) -> "SignalMatrix":
        """Same metadata, new samples (shape must keep the column count)."""
        return SignalMatrix(values, self.sample_period, self.unit, self.window_labels)

    def columns(self, index: Sequence[int]) -> "SignalMatrix":
        idx = list(index)
        return SignalMatrix(
            self.values[:, idx],
            self.sample_period,
            self.unit,
            tuple(self.window_labels[j] for j in idx),
        )


@dataclass(frozen=True)
class DeviceGroup:
    device_id: str
    column_start: int
    column_count: int

    def __post_init__(self) -> None:
        if self.column_count < 1:
            raise StructureError(f"group {self.device_id!r} has no columns")
        if self.column_start < 0:
            raise StructureError(f"group {self.device_id!r} starts at a negative column")

    @property
    def columns(self) -> slice:
        return slice(self.column_start, self.column_start + self.column_count)


def _check_groups(groups: Sequence[DeviceGroup], total: int | None = None) -> int:
    if not groups:
        raise StructureError("at least one device group is required")
    ids = [g.device_id for g in groups]
    if len(set(ids)) != len(ids):
        raise StructureError(f"duplicate device ids in {ids}")
    expected = 0
    for g in groups:
        if g.column_start != expected:
            raise StructureError(
                f"group {g.device_id!r} starts at column {g.column_start}, expected {expected} "
                "(groups must be contiguous, disjoint and in order)"
            )
        expected += g.column_count
    if total is not None and expected != total:
        raise StructureError(f"groups cover {expected} columns but the dictionary has {total}")
    return expected


def groups_from_sizes(device_ids: Sequence[str], sizes: Sequence[int]) -> tuple[DeviceGroup, ...]:
    """Lay out contiguous groups of the given sizes, in order."""
    if len(device_ids) != len(sizes):
        raise StructureError("device_ids and sizes differ in length")
    out, start = [], 0
    for dev, n in zip(device_ids, sizes):
        out.append(DeviceGroup(str(dev), start, int(n)))
        start += int(n)
    return tuple(out)


@dataclass(frozen=True)
class GroupedDictionary:
    """Signature matrix ``D = [D_1, ..., D_k]`` with one contiguous column
    block per device instance."""

    bases: NDArray[np.float64]
    groups: tuple[DeviceGroup, ...]
    normalization: Normalization = Normalization.NONE
    column_scales: NDArray[np.float64] | None = None
    column_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        bases = _frozen(self.bases)
        groups = tuple(self.groups)
        _check_groups(groups, bases.shape[1])
        if not np.all(np.isfinite(bases)) or np.any(bases < 0):
            raise StructureError("dictionary bases must be finite and non-negative")
        dead = np.flatnonzero(~np.any(bases > 0, axis=0))
        if dead.size:
            raise StructureError(f"dictionary columns {dead.tolist()} are all zero")
        norm = Normalization.parse(self.normalization)
        T = bases.shape[1]
        if self.column_scales is None:
            scales = np.ones(T)
        else:
            scales = np.asarray(self.column_scales, dtype=np.float64).reshape(-1)
        if scales.shape != (T,) or np.any(scales <= 0):
            raise StructureError("column_scales must hold T positive values")
        if norm is Normalization.UNIT_L2:
            norms = np.linalg.norm(bases, axis=0)
            if np.max(np.abs(norms - 1.0)) > 1e-12:
                raise StructureError("unit_l2 dictionary has columns whose norm is not 1")
        labels = tuple(str(x) for x in self.column_labels)
        if labels and len(labels) != T:
            raise StructureError(f"{len(labels)} column labels for {T} columns")
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "normalization", norm)
        object.__setattr__(self, "column_scales", _frozen(scales, ndim=1))
        object.__setattr__(self, "column_labels", labels)

    @classmethod
    def from_blocks(
        cls,
        blocks: Sequence[ArrayLike],
        device_ids: Sequence[str] | None = None,
        normalization: Normalization | str = Normalization.NONE,
    ) -> "GroupedDictionary":
        """Stack per-device m x n_i blocks, optionally scaling columns to unit L2 norm."""
        mats = []
        for b in blocks:
            b = np.asarray(b, dtype=np.float64)
            mats.append(b[:, None] if b.ndim == 1 else b)
        if device_ids is None:
            device_ids = [f"device{i}" for i in range(len(mats))]
        bases = np.hstack(mats)
        norm = Normalization.parse(normalization)
        scales = None
        if norm is Normalization.UNIT_L2:
            scales = np.linalg.norm(bases, axis=0)
            if np.any(scales == 0):
                raise StructureError("cannot normalize an all-zero column")
            bases = bases / scales
        return cls(bases, groups_from_sizes(device_ids, [b.shape[1] for b in mats]), norm, scales)

    @property
    def m(self) -> int:
        return self.bases.shape[0]

    @property
    def T(self) -> int:
        return self.bases.shape[1]

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def device_ids(self) -> tuple[str, ...]:
        return tuple(g.device_id for g in self.groups)

    @cached_property
    def gram(self) -> NDArray[np.float64]:
        """``D'D``, computed once and shared by every solve on this dictionary."""
        G = self.bases.T @ self.bases
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        return G

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return tuple(g.column_count for g in self.groups)

    def block(self, i: int) -> NDArray[np.float64]:
        return self.bases[:, self.groups[_group_index(self, i)].columns]

    def group_index(self, device_id: str) -> int:
        for i, g in enumerate(self.groups):
            if g.device_id == device_id:
                return i
        raise KeyError(device_id)


def _group_index(dictionary: GroupedDictionary, i: int) -> int:
    if not 0 <= i < dictionary.k:
        raise IndexError(f"group index {i} out of range for k={dictionary.k}")
    return i


@dataclass(frozen=True)
class SelectorMatrix:
    """k x T binary matrix; row g marks the columns of group g."""

    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if not np.all((values == 0) | (values == 1)):
            raise StructureError("selector entries must be 0 or 1")
        if not np.all(values.sum(axis=0) == 1):
            raise StructureError("every selector column must belong to exactly one group")
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]


def build_selector(groups: Sequence[DeviceGroup] | GroupedDictionary) -> SelectorMatrix:
    """Selector ``Q`` for contiguous groups: ones on each group's own columns.

    >>> build_selector(groups_from_sizes(["tv", "dw"], [3, 2])).values.astype(int).tolist()
    [[1, 1, 1, 0, 0], [0, 0, 0, 1, 1]]
    """
    if isinstance(groups, GroupedDictionary):
        groups = groups.groups
    groups = tuple(groups)
    T = _check_groups(groups)
    Q = np.zeros((len(groups), T))
    for row, g in enumerate(groups):
        Q[row, g.columns] = 1.0
    return SelectorMatrix(Q)


@dataclass(frozen=True)
class ActivationMatrix:
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        values = _frozen(values)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise StructureError("activations must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def group(self, dictionary: GroupedDictionary, i: int) -> NDArray[np.float64]:
        """Rows ``A_i`` belonging to group ``i``."""
        _conforms(dictionary, self)
        return self.values[dictionary.groups[_group_index(dictionary, i)].columns]


def _conforms(dictionary: GroupedDictionary, A: ActivationMatrix) -> None:
    if A.T != dictionary.T:
        raise StructureError(f"activations have {A.T} rows but the dictionary has T={dictionary.T}")


def reconstruct(
    dictionary: GroupedDictionary,
    A: ActivationMatrix,
    i: int,
    template: SignalMatrix | None = None,
) -> SignalMatrix:
    """Estimated signal of device ``i``: ``D_i @ A_i``."""
    est = dictionary.block(i) @ A.group(dictionary, i)
    return _as_signal(est, template)


def total_reconstruction(
    dictionary: GroupedDictionary, A: ActivationMatrix, template: SignalMatrix | None = None
) -> SignalMatrix:
    _conforms(dictionary, A)
    return _as_signal(dictionary.bases @ A.values, template)


def _as_signal(values: NDArray[np.float64], template: SignalMatrix | None) -> SignalMatrix:
    # Products of non-negative factors can only go negative through signed
    # zeros; clip those so the invariant holds exactly.
    values = np.maximum(values, 0.0)
    if template is None:
        return SignalMatrix(values)
    return template.with_values(values)


@dataclass(frozen=True)
class SolverDiagnostics:
    """Per-column solver bookkeeping."""

    iterations: NDArray[np.int64]
    passive_set_size: NDArray[np.int64]
    converged: NDArray[np.bool_]
    wall_time: NDArray[np.float64]

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


@dataclass(frozen=True)
class DisaggregationResult:
    device_ids: tuple[str, ...]
    per_device: tuple[SignalMatrix, ...]
    activations: ActivationMatrix
    residual_fro_sq: float
    group_sums: NDArray[np.float64]
    diagnostics: SolverDiagnostics
    method: str = "s2k"
    params: dict = field(default_factory=dict)
    aggregate: SignalMatrix | None = None

    @property
    def k(self) -> int:
        return len(self.per_device)

    @property
    def converged(self) -> bool:
        return self.diagnostics.all_converged

    def estimate(self, device_id: str) -> SignalMatrix:
        return self.per_device[self.device_ids.index(device_id)]

    def total(self) -> NDArray[np.float64]:
        return np.sum([x.values for x in self.per_device], axis=0)
