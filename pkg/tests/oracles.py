"""Independent reference solvers used only by the tests."""

import itertools

import numpy as np


def exhaustive_nnls(G, h):
    """Minimise 1/2 a'Ga - h'a over a >= 0 by trying every support set.

    For each subset S of coordinates allowed to be non-zero, solve the
    unconstrained problem on S (least-norm via lstsq), keep it if feasible,
    and return the lowest objective found.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    T = h.size
    best_a, best_f = np.zeros(T), 0.0
    for r in range(1, T + 1):
        for support in itertools.combinations(range(T), r):
            S = list(support)
            z = np.linalg.lstsq(G[np.ix_(S, S)], h[S], rcond=None)[0]
            if np.any(z < 0):
                continue
            a = np.zeros(T)
            a[S] = z
            f = 0.5 * a @ G @ a - h @ a
            if f < best_f:
                best_a, best_f = a, f
    return best_a, best_f


def objective(G, h, a):
    return float(0.5 * a @ G @ a - h @ a)
