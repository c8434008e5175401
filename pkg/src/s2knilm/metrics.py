"""Evaluation metrics: RMSE, disaggregation error, PCEC and OFF-detection
scoring, plus the per-run report that bundles them."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import SignalMatrix, StructureError

__all__ = [
    "ZeroEnergyWarning",
    "MetricScaling",
    "rmse",
    "disaggregation_error",
    "device_energy",
    "pcec",
    "pcec_table",
    "OffConfusion",
    "score_off_detection",
    "EvaluationReport",
    "evaluate",
]


class ZeroEnergyWarning(RuntimeWarning):
    """A column has no energy at all, so percentages are undefined."""


class MetricScaling(str, enum.Enum):
    RAW = "raw"
    AGGREGATE_MEAN = "aggregate_mean"


def _values(x) -> NDArray[np.float64]:
    if isinstance(x, SignalMatrix):
        return x.values
    arr = np.asarray(x, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


def _stack(signals: Sequence) -> NDArray[np.float64]:
    mats = [_values(s) for s in signals]
    if not mats:
        raise StructureError("need at least one device signal")
    if any(m.shape != mats[0].shape for m in mats):
        raise StructureError("device signals have different shapes")
    return np.stack(mats)


def rmse(X, X_hat) -> float:
    """Root mean square error over all m x d samples."""
    a, b = _values(X), _values(X_hat)
    if a.shape != b.shape:
        raise StructureError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2) / a.size))


def disaggregation_error(ground: Sequence, estimated: Sequence) -> float:
    """Sum over devices of half the squared Frobenius error."""
    if len(ground) != len(estimated):
        raise StructureError(f"{len(ground)} ground-truth signals vs {len(estimated)} estimates")
    total = 0.0
    for g, e in zip(ground, estimated):
        a, b = _values(g), _values(e)
        if a.shape != b.shape:
            raise StructureError(f"shape mismatch {a.shape} vs {b.shape}")
        total += 0.5 * float(np.sum((a - b) ** 2))
    return total


def device_energy(signals: Sequence, sample_period: float = 1.0) -> NDArray[np.float64]:
    """k x d energies: plain sum of samples times the sample period."""
    return _stack(signals).sum(axis=1) * sample_period


def pcec_table(signals: Sequence) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Percent contribution of each device to each column's total energy.

    Returns the k x d percentages and a length-d mask of columns where the
    total energy is positive. Undefined columns are reported as all zeros.
    """
    energy = device_energy(signals)
    total = energy.sum(axis=0)
    defined = total > 0
    pct = np.zeros_like(energy)
    pct[:, defined] = 100.0 * energy[:, defined] / total[defined]
    return pct, defined


def pcec(signals: Sequence, column: int = 0) -> NDArray[np.float64]:
    pct, defined = pcec_table(signals)
    if not -pct.shape[1] <= column < pct.shape[1]:
        raise IndexError(f"column {column} out of range")
    if not defined[column]:
        warnings.warn(f"column {column} has zero total energy; PCEC undefined", ZeroEnergyWarning, stacklevel=2)
    return pct[:, column]


@dataclass(frozen=True)
class OffConfusion:
    """Counts where 'positive' means the device is OFF for the whole column."""

    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int

    @property
    def true_positive_rate(self) -> float:
        pos = self.true_positive + self.false_negative
        return self.true_positive / pos if pos else 1.0

    @property
    def false_positive_rate(self) -> float:
        neg = self.false_positive + self.true_negative
        return self.false_positive / neg if neg else 0.0

    def __add__(self, other: "OffConfusion") -> "OffConfusion":
        return OffConfusion(
            self.true_positive + other.true_positive,
            self.false_positive + other.false_positive,
            self.false_negative + other.false_negative,
            self.true_negative + other.true_negative,
        )

    def to_dict(self) -> dict:
        return {
            "true_positive": self.true_positive,
            "false_positive": self.false_positive,
            "false_negative": self.false_negative,
            "true_negative": self.true_negative,
        }


def truly_off(ground: Sequence) -> NDArray[np.bool_]:
    """k x d mask of device-columns whose ground truth is identically zero."""
    return ~np.any(_stack(ground) != 0, axis=1)


def score_off_detection(ground: Sequence, flagged: ArrayLike) -> OffConfusion:
    truth = truly_off(ground)
    flags = np.asarray(flagged, dtype=bool)
    if flags.shape != truth.shape:
        raise StructureError(f"flags have shape {flags.shape}, ground truth implies {truth.shape}")
    return OffConfusion(
        true_positive=int(np.sum(flags & truth)),
        false_positive=int(np.sum(flags & ~truth)),
        false_negative=int(np.sum(~flags & truth)),
        true_negative=int(np.sum(~flags & ~truth)),
    )


@dataclass(frozen=True)
class EvaluationReport:
    device_ids: tuple[str, ...]
    per_device_rmse: NDArray[np.float64]
    disaggregation_error: float
    pcec_estimated: NDArray[np.float64]
    pcec_ground_truth: NDArray[np.float64]
    off_detection: OffConfusion
    scaling: MetricScaling = MetricScaling.RAW
    window_labels: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        labels = list(self.window_labels)
        return {
            "scaling": self.scaling.value,
            "disaggregation_error": float(self.disaggregation_error),
            "devices": [
                {
                    "device_id": dev,
                    "rmse": float(self.per_device_rmse[i]),
                    "pcec_estimated": [float(v) for v in self.pcec_estimated[i]],
                    "pcec_ground_truth": [float(v) for v in self.pcec_ground_truth[i]],
                }
                for i, dev in enumerate(self.device_ids)
            ],
            "windows": labels,
            "off_detection": self.off_detection.to_dict(),
        }


def evaluate(
    ground: Sequence,
    estimated: Sequence,
    device_ids: Sequence[str],
    off_flags: ArrayLike | None = None,
    scaling: MetricScaling | str = MetricScaling.RAW,
    aggregate=None,
) -> EvaluationReport:
    """Score k estimated signals against ground truth.

    With ``scaling="aggregate_mean"`` every signal is divided by the mean of
    ``aggregate`` before RMSE and DE are computed, so numbers are comparable
    across datasets with different units. PCEC is scale-free either way.
    """
    scaling = MetricScaling(scaling)
    g = _stack(ground)
    e = _stack(estimated)
    if g.shape != e.shape or len(device_ids) != g.shape[0]:
        raise StructureError("ground truth, estimates and device ids do not conform")
    if scaling is MetricScaling.AGGREGATE_MEAN:
        agg = g.sum(axis=0) if aggregate is None else _values(aggregate)
        mean = float(np.mean(agg))
        if mean <= 0:
            raise ValueError("aggregate mean is zero; cannot normalize metrics")
        g, e = g / mean, e / mean
    if off_flags is None:
        off_flags = np.zeros(g.shape[0:1] + g.shape[2:], dtype=bool)
    pce, _ = pcec_table(list(e))
    pcg, _ = pcec_table(list(g))
    labels = ()
    if estimated and isinstance(estimated[0], SignalMatrix):
        labels = estimated[0].window_labels
    return EvaluationReport(
        device_ids=tuple(device_ids),
        per_device_rmse=np.array([rmse(a, b) for a, b in zip(g, e)]),
        disaggregation_error=disaggregation_error(list(g), list(e)),
        pcec_estimated=pce,
        pcec_ground_truth=pcg,
        off_detection=score_off_detection(list(g), off_flags),
        scaling=scaling,
        window_labels=labels,
    )
