import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exhaustive_nnls
from s2knilm.disaggregators import (
    ElasticNetConfig,
    LassoConfig,
    NnlsConfig,
    S2kConfig,
    Stage,
    detect_off_devices,
    disaggregate,
    elastic_net_solve,
    hierarchical_disaggregate,
    lasso_solve,
    nnls_solve,
    s2k_augment,
    s2k_solve,
)
from s2knilm.metrics import disaggregation_error
from s2knilm.model import ConfigError, GroupedDictionary, SignalMatrix, StructureError, build_selector


def _dict(blocks, ids=None):
    return GroupedDictionary.from_blocks([np.asarray(b, dtype=float) for b in blocks], ids)


def _random_dict(rng, m, sizes):
    return _dict([rng.uniform(0.05, 1.0, (m, n)) for n in sizes])


# --- configs ------------------------------------------------------------------


def test_config_defaults():
    assert S2kConfig().beta == 0.1
    assert S2kConfig().off_threshold_pcec == 0.01
    assert LassoConfig().beta1 == 0.01
    assert (ElasticNetConfig().beta1, ElasticNetConfig().beta2) == (0.01, 0.001)


def test_config_validation():
    with pytest.raises(ValueError, match="beta"):
        S2kConfig(beta=0.0)
    with pytest.raises(ValueError):
        LassoConfig(beta1=-1)
    with pytest.raises(ValueError):
        ElasticNetConfig(beta2=-1e-3)
    with pytest.raises(ValueError):
        S2kConfig(tol=0)
    with pytest.raises(TypeError):
        S2kConfig(0.5)  # keyword-only, so a bare number cannot land in tol


# --- augmentation -------------------------------------------------------------


def test_augment_selector_rows():
    D = _dict([np.ones((4, 3)), np.ones((4, 2))])
    aug = s2k_augment(D, build_selector(D), beta=1.0)
    np.testing.assert_array_equal(aug.design[4:], [[1, 1, 1, 0, 0], [0, 0, 0, 1, 1]])
    np.testing.assert_array_equal(aug.design[:4], D.bases)


def test_augment_rejects_zero_beta():
    D = _dict([np.ones((2, 1))])
    with pytest.raises(ValueError, match="beta"):
        s2k_augment(D, None, 0.0)


def test_augment_hand_assembly():
    aug = s2k_augment(_dict([[[1.0], [1.0]]]), None, beta=0.5)
    np.testing.assert_array_equal(aug.design, [[1.0], [1.0], [0.5]])
    np.testing.assert_array_equal(aug.target([1.0, 1.0]), [1.0, 1.0, 0.5])
    with pytest.raises(StructureError):
        aug.target([1.0, 1.0, 1.0])


def test_gram_form_matches_stacked_design():
    rng = np.random.default_rng(2)
    D = _random_dict(rng, 7, [2, 3])
    x = rng.uniform(0, 2, 7)
    aug = s2k_augment(D, None, beta=0.3)
    stacked_a, _ = exhaustive_nnls(aug.design.T @ aug.design, aug.design.T @ aug.target(x))
    np.testing.assert_allclose(s2k_solve(D, None, x, S2kConfig(beta=0.3)).activations.values[:, 0], stacked_a,
                               atol=1e-9)


# --- S2K --------------------------------------------------------------------------


def test_two_device_exact_mixture():
    D = _dict([[[1.0], [0.0]], [[1.0], [1.0]]])
    res = s2k_solve(D, None, [[2.0], [1.0]], S2kConfig(beta=0.01))
    aug = s2k_augment(D, None, 0.01)
    a_oracle, _ = exhaustive_nnls(aug.design.T @ aug.design, aug.design.T @ aug.target([2.0, 1.0]))
    np.testing.assert_allclose(a_oracle, [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(res.activations.values[:, 0], a_oracle, atol=1e-10)
    np.testing.assert_allclose(res.per_device[0].values[:, 0], [1.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(res.per_device[1].values[:, 0], [1.0, 1.0], atol=1e-10)
    np.testing.assert_allclose(res.group_sums[:, 0], [1.0, 1.0], atol=1e-10)
    truth = [np.array([[1.0], [0.0]]), np.array([[1.0], [1.0]])]
    assert disaggregation_error(truth, res.per_device) <= 1e-6


def test_zero_aggregate_only_penalty_floor():
    beta = 1e-3
    d = np.array([[1.0], [2.0], [0.5]])
    res = s2k_solve(_dict([d]), None, np.zeros((3, 1)), S2kConfig(beta=beta))
    expected = beta**2 / (float(d[:, 0] @ d[:, 0]) + beta**2)
    assert res.activations.values[0, 0] == pytest.approx(expected, rel=1e-9)
    assert res.group_sums.max() <= 0.01
    assert res.residual_fro_sq <= 1e-4


def test_zero_aggregate_several_groups():
    rng = np.random.default_rng(6)
    D = _random_dict(rng, 10, [3, 2, 4])
    res = s2k_solve(D, None, np.zeros((10, 2)), S2kConfig(beta=1e-3))
    assert res.group_sums.max() <= 0.01
    assert res.residual_fro_sq <= 1e-4


def test_training_day_replay_is_exact():
    rng = np.random.default_rng(13)
    D = _random_dict(rng, 24, [3, 2, 4])
    cols = [0, 4, 6]
    x = D.bases[:, cols].sum(axis=1)
    res = s2k_solve(D, None, x)
    truth = [D.bases[:, [c]] for c in cols]
    assert disaggregation_error(truth, res.per_device) <= 1e-8
    np.testing.assert_allclose(res.group_sums[:, 0], 1.0, atol=1e-9)


def test_result_bookkeeping():
    rng = np.random.default_rng(14)
    D = _random_dict(rng, 12, [2, 3])
    X = SignalMatrix(rng.uniform(0, 2, (12, 3)), window_labels=("a", "b", "c"))
    res = s2k_solve(D, None, X)
    np.testing.assert_allclose(res.total(), D.bases @ res.activations.values, rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(res.group_sums, build_selector(D).values @ res.activations.values)
    assert res.residual_fro_sq == pytest.approx(float(np.sum((X.values - D.bases @ res.activations.values) ** 2)))
    assert res.per_device[0].window_labels == ("a", "b", "c")
    assert res.estimate(D.device_ids[1]) is res.per_device[1]
    assert res.diagnostics.iterations.shape == (3,)
    assert res.aggregate is X
    assert res.method == "s2k" and res.params == {"beta": 0.1}


def test_shape_errors():
    D = _dict([np.ones((3, 1))])
    with pytest.raises(StructureError, match="m=2"):
        s2k_solve(D, None, np.ones((2, 1)))
    with pytest.raises(StructureError, match="selector"):
        s2k_solve(D, build_selector(_dict([np.ones((3, 2))])), np.ones((3, 1)))


def test_non_convergence_is_reported_not_raised():
    rng = np.random.default_rng(15)
    D = _random_dict(rng, 30, [4, 4])
    res = s2k_solve(D, None, rng.uniform(0, 3, (30, 2)), S2kConfig(max_iter=1))
    assert not res.converged
    assert np.all(res.activations.values >= 0)


def test_column_independence():
    rng = np.random.default_rng(16)
    D = _random_dict(rng, 15, [3, 3])
    X = SignalMatrix(rng.uniform(0, 2, (15, 4)))
    full = s2k_solve(D, None, X).activations.values
    for j in range(4):
        np.testing.assert_array_equal(s2k_solve(D, None, X.columns([j])).activations.values[:, 0], full[:, j])
    perm = [2, 0, 3, 1]
    np.testing.assert_array_equal(s2k_solve(D, None, X.columns(perm)).activations.values, full[:, perm])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sizes=st.lists(st.integers(1, 3), min_size=1, max_size=3))
def test_exact_convex_mixture_recovered(seed, sizes):
    rng = np.random.default_rng(seed)
    D = _random_dict(rng, 20, sizes)
    truth = []
    for g in D.groups:
        c = rng.dirichlet(np.ones(g.column_count))
        truth.append(D.bases[:, g.columns] @ c)
    x = np.sum(truth, axis=0)
    res = s2k_solve(D, None, x)
    assert disaggregation_error([t[:, None] for t in truth], res.per_device) <= 1e-8 * float(x @ x)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_penalty_weight_monotone(seed):
    rng = np.random.default_rng(seed)
    D = _random_dict(rng, 12, [2, 3, 2])
    X = rng.uniform(0, 3, (12, 2))
    gaps = [float(np.linalg.norm(1 - s2k_solve(D, None, X, S2kConfig(beta=b)).group_sums))
            for b in (1e-3, 1e-2, 1e-1, 1.0)]
    assert all(b <= a + 1e-10 for a, b in zip(gaps, gaps[1:]))


# --- baselines --------------------------------------------------------------


def test_lasso_zero_weight_equals_nnls():
    rng = np.random.default_rng(17)
    D = _random_dict(rng, 10, [2, 2])
    X = rng.uniform(0, 2, (10, 3))
    np.testing.assert_array_equal(lasso_solve(D, X, LassoConfig(beta1=0.0)).activations.values,
                                  nnls_solve(D, X).activations.values)


def test_lasso_large_weight_zeroes_out():
    res = lasso_solve(_dict([[[1.0]]]), [[1.0]], LassoConfig(beta1=2.0))
    np.testing.assert_array_equal(res.activations.values, [[0.0]])


def test_lasso_matches_brute_force():
    rng = np.random.default_rng(18)
    D = _random_dict(rng, 8, [2, 2])
    x = rng.uniform(0, 2, 8)
    beta1 = 0.3
    a, _ = exhaustive_nnls(D.bases.T @ D.bases, D.bases.T @ x - beta1 / 2)
    np.testing.assert_allclose(lasso_solve(D, x, LassoConfig(beta1=beta1)).activations.values[:, 0], a, atol=1e-9)


def test_elastic_net_zero_weights_equal_nnls():
    rng = np.random.default_rng(19)
    D = _random_dict(rng, 10, [3, 1])
    X = rng.uniform(0, 2, (10, 2))
    np.testing.assert_array_equal(elastic_net_solve(D, X, ElasticNetConfig(beta1=0, beta2=0)).activations.values,
                                  nnls_solve(D, X).activations.values)


def test_elastic_net_ridge_halves_identity_solution():
    res = elastic_net_solve(_dict([np.eye(2)]), [[1.0], [1.0]], ElasticNetConfig(beta1=0.0, beta2=1.0))
    np.testing.assert_allclose(res.activations.values[:, 0], [0.5, 0.5], atol=1e-15)


def test_nnls_scales_linearly():
    rng = np.random.default_rng(20)
    D = _random_dict(rng, 10, [2, 2])
    x = rng.uniform(0, 2, (10, 1))
    a = nnls_solve(D, x).activations.values
    np.testing.assert_allclose(nnls_solve(D, 3.5 * x).activations.values, 3.5 * a, rtol=1e-10, atol=1e-12)


def test_dispatch():
    D = _dict([np.eye(2)])
    x = [[1.0], [1.0]]
    assert disaggregate(D, x, S2kConfig()).method == "s2k"
    assert disaggregate(D, x, LassoConfig()).method == "lasso"
    assert disaggregate(D, x, ElasticNetConfig()).method == "elastic_net"
    assert disaggregate(D, x, NnlsConfig()).method == "nnls"
    with pytest.raises(ConfigError):
        disaggregate(D, x, object())


# --- hierarchical -----------------------------------------------------------


def _two_level(rng, m=16):
    comp = [rng.uniform(0.1, 1, (m, 2)), rng.uniform(0.1, 1, (m, 2))]
    hvac = comp[0] + comp[1]
    lights = rng.uniform(0.1, 1, (m, 2))
    stage1 = Stage(_dict([lights, hvac], ["lights", "hvac"]))
    stage2 = Stage(_dict(comp, ["compressor", "fan"]))
    return stage1, stage2, comp, lights


def test_hierarchical_exact_training_mixture():
    rng = np.random.default_rng(21)
    stage1, stage2, comp, lights = _two_level(rng)
    building = lights[:, [1]] + comp[0][:, [1]] + comp[1][:, [1]]
    first, second = hierarchical_disaggregate(stage1, stage2, building, "hvac")
    de1 = disaggregation_error([lights[:, [1]], comp[0][:, [1]] + comp[1][:, [1]]], first.per_device)
    de2 = disaggregation_error([comp[0][:, [1]], comp[1][:, [1]]], second.per_device)
    assert de1 <= 1e-6 and de2 <= 1e-6
    assert second.aggregate is first.estimate("hvac")


def test_hierarchical_zero_building():
    rng = np.random.default_rng(22)
    stage1, stage2, _, _ = _two_level(rng)
    first, second = hierarchical_disaggregate(
        Stage(stage1.dictionary, S2kConfig(beta=1e-3)), Stage(stage2.dictionary, S2kConfig(beta=1e-3)),
        np.zeros((16, 1)), "hvac",
    )
    assert first.group_sums.max() <= 0.01
    assert second.group_sums.max() <= 0.01
    assert max(float(e.values.max()) for e in second.per_device) <= 1e-4


def test_hierarchical_errors():
    rng = np.random.default_rng(23)
    stage1, stage2, _, _ = _two_level(rng)
    with pytest.raises(ConfigError, match="no group"):
        hierarchical_disaggregate(stage1, stage2, np.ones((16, 1)), "boiler")
    short = Stage(_dict([np.ones((8, 1))], ["c"]))
    with pytest.raises(ConfigError, match="m"):
        hierarchical_disaggregate(stage1, short, np.ones((16, 1)), "hvac")


# --- OFF detection ----------------------------------------------------------


def test_zero_estimate_flagged_off():
    D = _dict([[[1.0], [0.0]], [[0.0], [1.0]]], ["a", "b"])
    res = nnls_solve(D, [[2.0], [0.0]])
    det = detect_off_devices(res)
    assert det.off_devices(0) == frozenset({"b"})


def test_threshold_zero_only_exact_zeros():
    D = _dict([[[1.0], [0.0]], [[0.0], [1.0]]], ["a", "b"])
    res = nnls_solve(D, [[2.0], [1e-9]])
    assert detect_off_devices(res, 0.0).off_devices(0) == frozenset()
    res = nnls_solve(D, [[2.0], [0.0]])
    assert detect_off_devices(res, 0.0).off_devices(0) == frozenset({"b"})


def test_absent_group_flagged_at_default_threshold():
    # meter-scale magnitudes: the penalty floor on an absent group shrinks
    # like beta^2 / |d|^2, so unit-scale toy bases would sit above 0.01%
    rng = np.random.default_rng(24)
    D = _dict([rng.uniform(0.5, 5.0, (96, 3)) for _ in range(3)])
    x = D.bases[:, 0] * 0.4 + D.bases[:, 1] * 0.6 + D.bases[:, 7]
    det = detect_off_devices(s2k_solve(D, None, x))
    assert det.off_devices(0) == frozenset({D.device_ids[1]})
    assert det.threshold_pcec == 0.01


def test_all_zero_aggregate_column_flags_everything():
    rng = np.random.default_rng(25)
    D = _random_dict(rng, 6, [1, 1])
    X = np.zeros((6, 2))
    X[:, 0] = D.bases[:, 0] + D.bases[:, 1]
    det = detect_off_devices(nnls_solve(D, X))
    assert det.per_column()[1] == frozenset(D.device_ids)
    assert det.per_column()[0] == frozenset()
    assert len(det.notes) == 1 and "column 1" in det.notes[0]


def test_negative_threshold_rejected():
    D = _dict([np.eye(2)])
    with pytest.raises(ValueError):
        detect_off_devices(nnls_solve(D, [[1.0], [1.0]]), -1)
