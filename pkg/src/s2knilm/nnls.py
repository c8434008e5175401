"""Active-set non-negative least squares on normal equations.

Solves ``min 1/2 a'Ga - h'a  s.t. a >= 0`` where ``G = D'D`` and ``h = D'x``.
Working in Gram space means ``G`` is formed once per dictionary and reused for
every test column, which is what makes the Bro & de Jong variant of the
Lawson-Hanson algorithm fast for tall designs.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .model import StructureError

__all__ = [
    "DEFAULT_TOL",
    "GramSystem",
    "NnlsSolution",
    "KktReport",
    "fnnls",
    "nnls_direct",
    "kkt_report",
    "solve_columns",
]

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class GramSystem:
    G: NDArray[np.float64]
    h: NDArray[np.float64]

    def __post_init__(self) -> None:
        G = np.array(self.G, dtype=np.float64)
        h = np.array(self.h, dtype=np.float64).reshape(-1)
        _check_gram(G)
        if h.shape != (G.shape[0],):
            raise StructureError(f"h has length {h.size} but G is {G.shape}")
        if not np.all(np.isfinite(h)):
            raise StructureError("h contains non-finite values")
        G.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_design(cls, D: ArrayLike, x: ArrayLike) -> "GramSystem":
        D = np.asarray(D, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if D.ndim != 2 or D.shape[0] != x.size:
            raise StructureError(f"design {D.shape} does not conform to target of length {x.size}")
        return cls(D.T @ D, D.T @ x)

    @property
    def T(self) -> int:
        return self.h.size

    @property
    def scale(self) -> float:
        return _scale(self.h)

    def objective(self, a: ArrayLike) -> float:
        a = np.asarray(a, dtype=np.float64)
        return float(0.5 * a @ self.G @ a - self.h @ a)


def _check_gram(G: NDArray[np.float64]) -> None:
    if G.ndim != 2 or G.shape[0] != G.shape[1] or G.shape[0] < 1:
        raise StructureError(f"Gram matrix must be square and non-empty, got {G.shape}")
    if not np.all(np.isfinite(G)):
        raise StructureError("Gram matrix contains non-finite values")
    ref = max(1.0, float(np.max(np.abs(G))))
    if np.max(np.abs(G - G.T)) > 1e-10 * ref:
        raise StructureError("Gram matrix is not symmetric")
    if np.any(np.diag(G) < 0):
        raise StructureError("Gram matrix has a negative diagonal entry")


def _scale(h: NDArray[np.float64]) -> float:
    return max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0


@dataclass(frozen=True)
class NnlsSolution:
    a: NDArray[np.float64]
    passive_set: NDArray[np.int64]
    iterations: int
    converged: bool
    objective_trace: tuple[float, ...] = field(default=(), repr=False)


def _subsolve(G, h, passive):
    idx = np.flatnonzero(passive)
    sub = G[np.ix_(idx, idx)]
    rhs = h[idx]
    try:
        c = scipy.linalg.cho_factor(sub, lower=False, check_finite=False)
        z = scipy.linalg.cho_solve(c, rhs, check_finite=False)
        # Cholesky can "succeed" on numerically singular blocks and return garbage.
        if not np.all(np.isfinite(z)):
            raise np.linalg.LinAlgError
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        # least-norm solution for rank-deficient passive blocks
        z = scipy.linalg.lstsq(sub, rhs, check_finite=False, lapack_driver="gelsd")[0]
    s = np.zeros_like(h)
    s[idx] = z
    return s


def _fnnls(G, h, tol, max_iter, trace):
    T = h.size
    zero_tol = tol
    thresh = tol * _scale(h)
    x = np.zeros(T)
    passive = np.zeros(T, dtype=bool)
    blocked = np.zeros(T, dtype=bool)
    w = h.copy()
    iterations = 0
    converged = True
    history = [0.0] if trace else None

    while True:
        candidates = ~passive & ~blocked & (w > thresh)
        if not candidates.any():
            if np.any(~passive & blocked & (w > thresh)):
                converged = False
            break
        if iterations >= max_iter:
            converged = False
            break
        iterations += 1
        # np.argmax returns the first maximum: lowest index wins ties
        j = int(np.argmax(np.where(candidates, w, -np.inf)))
        before = passive.copy()
        passive[j] = True
        s = _subsolve(G, h, passive)

        stalled = False
        while True:
            infeasible = passive & (s <= 0)
            if not infeasible.any():
                break
            if iterations >= max_iter:
                stalled = True
                break
            iterations += 1
            q = np.flatnonzero(infeasible)
            denom = x[q] - s[q]
            ratios = np.divide(x[q], denom, out=np.zeros_like(denom), where=denom > 0)
            pick = int(np.argmin(ratios))
            alpha = ratios[pick]
            x = x + alpha * (s - x)
            x[q[pick]] = 0.0
            drop = passive & (x <= zero_tol)
            passive[drop] = False
            x[~passive] = 0.0
            s = _subsolve(G, h, passive)

        if stalled:
            converged = False
            break

        x = np.where(passive, s, 0.0)
        w = h - G @ x
        if np.array_equal(passive, before):
            # j could not enter the passive set numerically; skip it until the
            # passive set changes
            blocked[j] = True
        else:
            blocked[:] = False
        if trace:
            history.append(float(0.5 * x @ G @ x - h @ x))

    x = np.where(x > 0, x, 0.0)
    return NnlsSolution(
        a=x,
        passive_set=np.flatnonzero(x > 0),
        iterations=iterations,
        converged=converged,
        objective_trace=tuple(history) if trace else (),
    )


def fnnls(
    system: GramSystem,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    trace: bool = False,
) -> NnlsSolution:
    """Fast active-set NNLS on a Gram system.

    Parameters
    ----------
    system : GramSystem
        ``G = D'D`` and ``h = D'x``.
    tol : float
        Relative tolerance. The dual feasibility threshold is
        ``tol * max(1, |h|_inf)``.
    max_iter : int, optional
        Cap on passive-set changes, default ``3 * T``. When hit, the current
        (feasible) iterate is returned with ``converged=False``.
    trace : bool
        Record the objective after every outer iteration.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 3 * system.T
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    return _fnnls(system.G, system.h, tol, max_iter, trace)


def nnls_direct(
    D: ArrayLike, x: ArrayLike, tol: float = DEFAULT_TOL, max_iter: int | None = None
) -> NnlsSolution:
    """``min ||D a - x||^2, a >= 0`` by forming the Gram system first."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim == 2 and np.any(~np.any(D != 0, axis=0)):
        raise StructureError("design matrix has an all-zero column")
    return fnnls(GramSystem.from_design(D, x), tol, max_iter)


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    complementarity: float
    feasible: bool
    threshold: float

    @property
    def ok(self) -> bool:
        return self.feasible and self.stationarity <= self.threshold and self.complementarity <= self.threshold


def kkt_report(system: GramSystem, a: ArrayLike, tol: float = 1e-8) -> KktReport:
    """Optimality certificate for a candidate NNLS solution.

    ``stationarity`` is the largest ``|(Ga - h)_j|`` over positive coordinates,
    ``complementarity`` the largest ``-(Ga - h)_j`` over zero coordinates.
    Both are compared against ``tol * max(1, |h|_inf)``.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.size != system.T:
        raise StructureError(f"candidate has length {a.size}, system has T={system.T}")
    grad = system.G @ a - system.h
    pos = a > 0
    stat = float(np.max(np.abs(grad[pos]))) if pos.any() else 0.0
    comp = float(np.max(np.maximum(-grad[~pos], 0.0))) if (~pos).any() else 0.0
    return KktReport(
        stationarity=stat,
        complementarity=comp,
        feasible=bool(np.all(a >= 0) and np.all(np.isfinite(a))),
        threshold=tol * system.scale,
    )


@dataclass(frozen=True)
class ColumnSolves:
    A: NDArray[np.float64]
    iterations: NDArray[np.int64]
    passive_set_size: NDArray[np.int64]
    converged: NDArray[np.bool_]
    wall_time: NDArray[np.float64]


def solve_columns(
    G: ArrayLike,
    H: ArrayLike,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    workers: int = 1,
) -> ColumnSolves:
    """Solve one NNLS problem per column of ``H`` against a shared ``G``.

    Columns are independent, so they are farmed out to a thread pool; results
    are merged in column order so the output does not depend on ``workers``.
    """
    G = np.asarray(G, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    _check_gram(G)
    if H.shape[0] != G.shape[0]:
        raise StructureError(f"right-hand sides have {H.shape[0]} rows, G is {G.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    T, d = H.shape
    cap = 3 * T if max_iter is None else max_iter
    if cap < 1:
        raise ValueError("max_iter must be at least 1")

    def run(j):
        t0 = time.perf_counter()
        sol = _fnnls(G, np.ascontiguousarray(H[:, j]), tol, cap, False)
        return sol, time.perf_counter() - t0

    if workers > 1 and d > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run, range(d)))
    else:
        out = [run(j) for j in range(d)]

    A = np.zeros((T, d))
    for j, (sol, _) in enumerate(out):
        A[:, j] = sol.a
    return ColumnSolves(
        A=A,
        iterations=np.array([s.iterations for s, _ in out], dtype=np.int64),
        passive_set_size=np.array([s.passive_set.size for s, _ in out], dtype=np.int64),
        converged=np.array([s.converged for s, _ in out], dtype=bool),
        wall_time=np.array([t for _, t in out]),
    )
