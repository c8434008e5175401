import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exhaustive_nnls, objective
from s2knilm.model import StructureError
from s2knilm.nnls import GramSystem, fnnls, kkt_report, nnls_direct, solve_columns


def test_identity_gram_separable():
    sol = fnnls(GramSystem(np.eye(2), [3.0, 0.0]))
    np.testing.assert_array_equal(sol.a, [3.0, 0.0])
    assert sol.converged
    assert sol.passive_set.tolist() == [0]


def test_negative_optimum_clamps_to_zero():
    system = GramSystem.from_design([[1.0], [2.0]], [-1.0, -2.0])
    np.testing.assert_array_equal(system.G, [[5.0]])
    np.testing.assert_array_equal(system.h, [-5.0])
    sol = fnnls(system)
    np.testing.assert_array_equal(sol.a, [0.0])
    assert sol.iterations == 0


def test_interior_optimum_matches_oracle():
    G, h = np.array([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0])
    sol = fnnls(GramSystem(G, h))
    a_oracle, _ = exhaustive_nnls(G, h)
    np.testing.assert_allclose(a_oracle, [1.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(sol.a, [1.0, 1.0], atol=1e-14)


def test_direct_identity_and_exact_fit():
    np.testing.assert_allclose(nnls_direct(np.eye(2), [1.0, 2.0]).a, [1.0, 2.0], atol=1e-15)
    np.testing.assert_allclose(nnls_direct([[1.0], [1.0]], [1.0, 1.0]).a, [1.0], atol=1e-15)


def test_direct_random_six_by_four_matches_oracle():
    rng = np.random.default_rng(64)
    for _ in range(20):
        D = rng.uniform(0, 1, (6, 4))
        x = rng.normal(size=6)
        system = GramSystem.from_design(D, x)
        sol = nnls_direct(D, x)
        a_oracle, f_oracle = exhaustive_nnls(system.G, system.h)
        assert objective(system.G, system.h, sol.a) == pytest.approx(f_oracle, abs=1e-10)
        np.testing.assert_allclose(sol.a, a_oracle, atol=1e-6)


def test_direct_rejects_zero_column():
    with pytest.raises(StructureError, match="all-zero"):
        nnls_direct([[1.0, 0.0], [1.0, 0.0]], [1.0, 1.0])


def test_non_symmetric_gram_rejected():
    with pytest.raises(StructureError, match="symmetric"):
        GramSystem([[1.0, 0.5], [0.0, 1.0]], [1.0, 1.0])


def test_negative_diagonal_rejected():
    with pytest.raises(StructureError, match="diagonal"):
        GramSystem([[-1.0]], [1.0])


def test_bad_arguments():
    system = GramSystem(np.eye(2), [1.0, 1.0])
    with pytest.raises(ValueError):
        fnnls(system, tol=0)
    with pytest.raises(ValueError):
        fnnls(system, max_iter=0)
    with pytest.raises(StructureError):
        GramSystem(np.eye(2), [1.0])


def test_iteration_cap_returns_feasible_unconverged():
    rng = np.random.default_rng(3)
    D = rng.uniform(0, 1, (20, 8))
    x = D @ rng.uniform(0.5, 1, 8)
    sol = fnnls(GramSystem.from_design(D, x), max_iter=1)
    assert not sol.converged
    assert np.all(sol.a >= 0)
    assert sol.iterations == 1


def test_default_iteration_cap_is_three_t():
    rng = np.random.default_rng(9)
    D = rng.uniform(0, 1, (30, 10))
    sol = fnnls(GramSystem.from_design(D, D @ rng.uniform(0, 1, 10)))
    assert sol.converged and sol.iterations <= 30


def test_rank_deficient_duplicates():
    # two identical columns: any split of the weight is optimal
    D = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 1.0]])
    x = np.array([2.0, 5.0])
    system = GramSystem.from_design(D, x)
    sol = fnnls(system)
    assert sol.converged
    assert system.objective(sol.a) == pytest.approx(exhaustive_nnls(system.G, system.h)[1], abs=1e-10)
    np.testing.assert_allclose(D @ sol.a, x, atol=1e-10)


def test_objective_trace_is_monotone():
    rng = np.random.default_rng(12)
    for _ in range(30):
        D = rng.uniform(0, 1, (12, 9))
        sol = fnnls(GramSystem.from_design(D, rng.normal(size=12) + 0.5), trace=True)
        steps = np.diff(sol.objective_trace)
        assert np.all(steps <= 1e-12)


def test_deterministic_bitwise():
    rng = np.random.default_rng(1)
    D = rng.uniform(0, 1, (40, 15))
    system = GramSystem.from_design(D, rng.uniform(0, 1, 40))
    assert np.array_equal(fnnls(system).a, fnnls(system).a)


def test_ties_break_to_lowest_index():
    # both coordinates have the same gradient and are interchangeable
    sol = fnnls(GramSystem(np.ones((2, 2)), [1.0, 1.0]))
    np.testing.assert_array_equal(sol.a, [1.0, 0.0])


# --- KKT ---------------------------------------------------------------------


def test_kkt_origin_optimal_when_h_non_positive():
    rep = kkt_report(GramSystem(np.eye(3), [-1.0, 0.0, -2.0]), np.zeros(3))
    assert rep.ok
    assert rep.stationarity == 0 and rep.complementarity == 0


def test_kkt_flags_negative_coordinate():
    rep = kkt_report(GramSystem(np.eye(2), [1.0, 1.0]), [-1.0, 1.0])
    assert not rep.feasible
    assert not rep.ok


def test_kkt_detects_suboptimal_point():
    rep = kkt_report(GramSystem(np.eye(2), [1.0, 1.0]), [0.0, 1.0])
    assert rep.complementarity == pytest.approx(1.0)
    assert not rep.ok


def test_kkt_threshold_scales_with_h():
    rep = kkt_report(GramSystem(np.eye(1), [500.0]), [500.0], tol=1e-8)
    assert rep.threshold == pytest.approx(5e-6)


def test_kkt_length_mismatch():
    with pytest.raises(StructureError):
        kkt_report(GramSystem(np.eye(2), [1.0, 1.0]), [1.0])


@settings(max_examples=150, deadline=None)
@given(m=st.integers(1, 10), T=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_matches_oracle_and_satisfies_kkt(m, T, seed):
    rng = np.random.default_rng(seed)
    D = rng.uniform(0, 1, (m, T)) + 1e-3
    x = rng.normal(size=m)
    system = GramSystem.from_design(D, x)
    sol = fnnls(system)
    assert sol.converged
    assert np.all(sol.a >= 0)
    assert np.all(sol.a[np.setdiff1d(np.arange(T), sol.passive_set)] == 0)
    assert kkt_report(system, sol.a).ok
    _, f = exhaustive_nnls(system.G, system.h)
    assert system.objective(sol.a) == pytest.approx(f, abs=1e-8)


def test_oracle_agreement_up_to_ten_variables():
    rng = np.random.default_rng(10)
    for T in range(6, 11):
        D = rng.uniform(0, 1, (T + 4, T))
        system = GramSystem.from_design(D, rng.normal(size=T + 4) + 0.3)
        a, f = exhaustive_nnls(system.G, system.h)
        sol = fnnls(system)
        assert system.objective(sol.a) == pytest.approx(f, abs=1e-8)
        np.testing.assert_allclose(sol.a, a, atol=1e-6)


# --- batched columns --------------------------------------------------------


def test_solve_columns_matches_single_solves_for_any_worker_count():
    rng = np.random.default_rng(4)
    D = rng.uniform(0, 1, (25, 7))
    X = rng.uniform(0, 1, (25, 6))
    G, H = D.T @ D, D.T @ X
    one = solve_columns(G, H, workers=1)
    many = solve_columns(G, H, workers=3)
    np.testing.assert_array_equal(one.A, many.A)
    for j in range(6):
        np.testing.assert_array_equal(one.A[:, j], fnnls(GramSystem(G, H[:, j])).a)
    assert one.converged.all()
    assert one.wall_time.shape == (6,)


def test_solve_columns_permutation_equivariant():
    rng = np.random.default_rng(8)
    D = rng.uniform(0, 1, (10, 4))
    H = D.T @ rng.uniform(0, 1, (10, 5))
    perm = [3, 0, 4, 1, 2]
    np.testing.assert_array_equal(solve_columns(D.T @ D, H).A[:, perm], solve_columns(D.T @ D, H[:, perm]).A)


def test_solve_columns_shape_checks():
    with pytest.raises(StructureError):
        solve_columns(np.eye(2), np.ones((3, 1)))
    with pytest.raises(StructureError):
        solve_columns(np.ones((2, 3)), np.ones((2, 1)))
