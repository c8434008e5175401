"""Disaggregators built on the shared FNNLS kernel.

* ``s2k_solve``: non-negative factorization with a sum-to-one penalty per
  device group (the Sum-to-k model), solved through matrix augmentation.
* ``lasso_solve``: non-negative sparse coding, the sparse-coding baseline
  without discriminative pre-training.
* ``elastic_net_solve``: non-negative elastic net.

Each reduces exactly to one NNLS problem per test column. Because the
activations are non-negative, ``||a||_1 = 1'a`` is linear and only shifts the
linear term of the Gram system; the ridge term adds ``beta2 * I`` to ``G``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .metrics import device_energy, pcec_table
from .model import (
    ActivationMatrix,
    ConfigError,
    DisaggregationResult,
    GroupedDictionary,
    SelectorMatrix,
    SignalMatrix,
    SolverDiagnostics,
    StructureError,
    build_selector,
    reconstruct,
)
from .nnls import DEFAULT_TOL, solve_columns

__all__ = [
    "DEFAULT_BETA",
    "DEFAULT_OFF_THRESHOLD_PCEC",
    "S2kConfig",
    "LassoConfig",
    "ElasticNetConfig",
    "NnlsConfig",
    "AugmentedDesign",
    "s2k_augment",
    "s2k_solve",
    "lasso_solve",
    "elastic_net_solve",
    "nnls_solve",
    "disaggregate",
    "Stage",
    "hierarchical_disaggregate",
    "OffDetection",
    "detect_off_devices",
]

DEFAULT_BETA = 0.1
DEFAULT_OFF_THRESHOLD_PCEC = 0.01


@dataclass(frozen=True, kw_only=True)
class _SolverSettings:
    tol: float = DEFAULT_TOL
    max_iter: int | None = None
    workers: int = 1

    def _check_solver(self) -> None:
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True, kw_only=True)
class S2kConfig(_SolverSettings):
    """Sum-to-k settings.

    ``beta`` multiplies the selector rows stacked under the dictionary, so
    the effective penalty weight on ``||1 - Qa||^2`` is ``beta**2``.
    """

    beta: float = DEFAULT_BETA
    off_threshold_pcec: float = DEFAULT_OFF_THRESHOLD_PCEC

    def __post_init__(self) -> None:
        self._check_solver()
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.off_threshold_pcec < 0:
            raise ValueError("off_threshold_pcec must be non-negative")

    method = "s2k"

    def params(self) -> dict:
        return {"beta": self.beta}


@dataclass(frozen=True, kw_only=True)
class LassoConfig(_SolverSettings):
    beta1: float = 0.01

    def __post_init__(self) -> None:
        self._check_solver()
        if self.beta1 < 0:
            raise ValueError(f"beta1 must be non-negative, got {self.beta1}")

    method = "lasso"

    def params(self) -> dict:
        return {"beta1": self.beta1}


@dataclass(frozen=True, kw_only=True)
class ElasticNetConfig(_SolverSettings):
    beta1: float = 0.01
    beta2: float = 0.001

    def __post_init__(self) -> None:
        self._check_solver()
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError(f"beta1 and beta2 must be non-negative, got {self.beta1}, {self.beta2}")

    method = "elastic_net"

    def params(self) -> dict:
        return {"beta1": self.beta1, "beta2": self.beta2}


@dataclass(frozen=True, kw_only=True)
class NnlsConfig(_SolverSettings):
    """Plain non-negative least squares, no penalty."""

    def __post_init__(self) -> None:
        self._check_solver()

    method = "nnls"

    def params(self) -> dict:
        return {}


MethodConfig = Union[S2kConfig, LassoConfig, ElasticNetConfig, NnlsConfig]


def _signal(X) -> SignalMatrix:
    return X if isinstance(X, SignalMatrix) else SignalMatrix(np.asarray(X, dtype=np.float64))


def _check_inputs(dictionary: GroupedDictionary, X: SignalMatrix) -> None:
    if X.m != dictionary.m:
        raise StructureError(f"signal has m={X.m} samples per window but the dictionary has m={dictionary.m}")


def _selector(dictionary: GroupedDictionary, Q: SelectorMatrix | None) -> SelectorMatrix:
    if Q is None:
        return build_selector(dictionary)
    if Q.values.shape != (dictionary.k, dictionary.T):
        raise StructureError(f"selector is {Q.values.shape}, dictionary needs ({dictionary.k}, {dictionary.T})")
    return Q


@dataclass(frozen=True)
class AugmentedDesign:
    """``[D; beta*Q]`` together with the matching target map ``x -> [x; beta*1]``."""

    design: NDArray[np.float64]
    beta: float
    m: int
    k: int

    def target(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.m:
            raise StructureError(f"target has {x.shape[0]} rows, expected {self.m}")
        tail_shape = (self.k,) + x.shape[1:]
        return np.concatenate([x, np.full(tail_shape, self.beta)], axis=0)


def s2k_augment(dictionary: GroupedDictionary, Q: SelectorMatrix | None, beta: float) -> AugmentedDesign:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    Q = _selector(dictionary, Q)
    design = np.vstack([dictionary.bases, beta * Q.values])
    design.setflags(write=False)
    return AugmentedDesign(design, float(beta), dictionary.m, dictionary.k)


def _project(bases: NDArray[np.float64], X: SignalMatrix) -> NDArray[np.float64]:
    """``D'X`` one column at a time, so a column's right-hand side does not
    depend on which other columns share the batch."""
    out = np.empty((bases.shape[1], X.d))
    for j in range(X.d):
        out[:, j] = bases.T @ np.ascontiguousarray(X.values[:, j])
    return out


def _assemble(dictionary, Q, X, solves, method, params) -> DisaggregationResult:
    A = ActivationMatrix(solves.A)
    per_device = tuple(reconstruct(dictionary, A, i, template=X) for i in range(dictionary.k))
    residual = X.values - dictionary.bases @ A.values
    return DisaggregationResult(
        device_ids=dictionary.device_ids,
        per_device=per_device,
        activations=A,
        residual_fro_sq=float(np.sum(residual**2)),
        group_sums=Q.values @ A.values,
        diagnostics=SolverDiagnostics(
            iterations=solves.iterations,
            passive_set_size=solves.passive_set_size,
            converged=solves.converged,
            wall_time=solves.wall_time,
        ),
        method=method,
        params=params,
        aggregate=X,
    )


def s2k_solve(
    dictionary: GroupedDictionary,
    Q: SelectorMatrix | None,
    X,
    cfg: S2kConfig = S2kConfig(),
) -> DisaggregationResult:
    """Sum-to-k disaggregation of every column of ``X``.

    The augmented normal equations are formed without materializing the
    stacked design: ``G = D'D + beta^2 Q'Q`` and ``h = D'x + beta^2 Q'1``.
    """
    X = _signal(X)
    _check_inputs(dictionary, X)
    Q = _selector(dictionary, Q)
    b2 = cfg.beta**2
    G = dictionary.gram + b2 * (Q.values.T @ Q.values)
    H = _project(dictionary.bases, X) + b2 * Q.values.sum(axis=0)[:, None]
    solves = solve_columns(G, H, cfg.tol, cfg.max_iter, cfg.workers)
    return _assemble(dictionary, Q, X, solves, "s2k", cfg.params())


def _penalized(dictionary, X, beta1, beta2, cfg, method, params):
    X = _signal(X)
    _check_inputs(dictionary, X)
    G = dictionary.gram
    if beta2:
        G = G + beta2 * np.eye(dictionary.T)
    H = _project(dictionary.bases, X)
    if beta1:
        H = H - 0.5 * beta1
    solves = solve_columns(G, H, cfg.tol, cfg.max_iter, cfg.workers)
    return _assemble(dictionary, build_selector(dictionary), X, solves, method, params)


def lasso_solve(dictionary: GroupedDictionary, X, cfg: LassoConfig = LassoConfig()) -> DisaggregationResult:
    """Minimize ``||x - Da||^2 + beta1 * 1'a`` over ``a >= 0`` per column."""
    return _penalized(dictionary, X, cfg.beta1, 0.0, cfg, "lasso", cfg.params())


def elastic_net_solve(
    dictionary: GroupedDictionary, X, cfg: ElasticNetConfig = ElasticNetConfig()
) -> DisaggregationResult:
    """Minimize ``||x - Da||^2 + beta1 * 1'a + beta2 * ||a||^2`` over ``a >= 0``."""
    return _penalized(dictionary, X, cfg.beta1, cfg.beta2, cfg, "elastic_net", cfg.params())


def nnls_solve(dictionary: GroupedDictionary, X, cfg: NnlsConfig = NnlsConfig()) -> DisaggregationResult:
    return _penalized(dictionary, X, 0.0, 0.0, cfg, "nnls", cfg.params())


def disaggregate(dictionary: GroupedDictionary, X, cfg: MethodConfig) -> DisaggregationResult:
    """Dispatch on the config type."""
    if isinstance(cfg, S2kConfig):
        return s2k_solve(dictionary, None, X, cfg)
    if isinstance(cfg, LassoConfig):
        return lasso_solve(dictionary, X, cfg)
    if isinstance(cfg, ElasticNetConfig):
        return elastic_net_solve(dictionary, X, cfg)
    if isinstance(cfg, NnlsConfig):
        return nnls_solve(dictionary, X, cfg)
    raise ConfigError(f"unsupported method config {type(cfg).__name__}")


@dataclass(frozen=True)
class Stage:
    dictionary: GroupedDictionary
    config: MethodConfig = field(default_factory=S2kConfig)


def hierarchical_disaggregate(
    stage1: Stage, stage2: Stage, X_building, hvac_device: str
) -> tuple[DisaggregationResult, DisaggregationResult]:
    """Building -> devices, then the estimated HVAC signal -> its components.

    Stage 2 only ever sees the stage-1 estimate of ``hvac_device``.
    """
    if hvac_device not in stage1.dictionary.device_ids:
        raise ConfigError(
            f"stage-1 dictionary has no group {hvac_device!r}; groups are {list(stage1.dictionary.device_ids)}"
        )
    if stage1.dictionary.m != stage2.dictionary.m:
        raise ConfigError(f"stage dictionaries disagree on m: {stage1.dictionary.m} vs {stage2.dictionary.m}")
    first = disaggregate(stage1.dictionary, X_building, stage1.config)
    second = disaggregate(stage2.dictionary, first.estimate(hvac_device), stage2.config)
    return first, second


@dataclass(frozen=True)
class OffDetection:
    device_ids: tuple[str, ...]
    flags: NDArray[np.bool_]
    threshold_pcec: float
    notes: tuple[str, ...] = ()

    def off_devices(self, column: int) -> frozenset[str]:
        return frozenset(d for d, f in zip(self.device_ids, self.flags[:, column]) if f)

    def per_column(self) -> list[frozenset[str]]:
        return [self.off_devices(j) for j in range(self.flags.shape[1])]


def detect_off_devices(
    result: DisaggregationResult, threshold_pcec: float = DEFAULT_OFF_THRESHOLD_PCEC
) -> OffDetection:
    """Flag device i OFF in column j when its estimated PCEC is below
    ``threshold_pcec`` percent (or its estimate is exactly zero)."""
    if threshold_pcec < 0:
        raise ValueError("threshold_pcec must be non-negative")
    energy = device_energy(result.per_device)
    pct, defined = pcec_table(result.per_device)
    flags = (energy == 0) | (pct < threshold_pcec)
    dead = ~defined
    if result.aggregate is not None:
        dead |= ~np.any(result.aggregate.values != 0, axis=0)
    notes = []
    for j in np.flatnonzero(dead):
        flags[:, j] = True
        notes.append(f"column {j}: aggregate has zero energy; every device reported OFF")
    flags.setflags(write=False)
    return OffDetection(result.device_ids, flags, float(threshold_pcec), tuple(notes))
