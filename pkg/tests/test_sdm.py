import dataclasses
import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdmcl import numerics, sdm
from sdmcl.errors import DimensionMismatch, NotNormalized
from sdmcl.sdm import CosineThreshold, IntersectionQuery, SdmMemory, TopK


def unit_columns(r, n, m):
    return numerics.normalize_columns(r.standard_normal((n, m)))


def brute_write(Xa, Xv, Pa, Pv, rule):
    Xv = Xv.copy()
    for mu in range(Pa.shape[1]):
        sims = [float(np.dot(Pa[:, mu], Xa[:, j])) for j in range(Xa.shape[1])]
        if isinstance(rule, TopK):
            chosen = sorted(range(len(sims)), key=lambda j: (-sims[j], j))[: rule.k]
        else:
            chosen = [j for j, s in enumerate(sims) if s >= rule.c]
        for j in chosen:
            Xv[:, j] += Pv[:, mu]
    return Xv


def brute_read(Xa, Xv, q, rule):
    sims = [float(np.dot(q, Xa[:, j])) for j in range(Xa.shape[1])]
    if isinstance(rule, TopK):
        chosen = sorted(range(len(sims)), key=lambda j: (-sims[j], j))[: rule.k]
    else:
        chosen = [j for j, s in enumerate(sims) if s >= rule.c]
    if not chosen:
        return None
    return sum(Xv[:, j] for j in chosen)


def test_write_identical_address():
    p = numerics.l2_normalize([1.0, 2.0, 2.0])
    mem = SdmMemory(p[:, None], np.zeros((2, 1)), CosineThreshold(0.5))
    out = sdm.sdm_write(mem, p, np.array([3.0, -1.0]))
    np.testing.assert_array_equal(out.Xv[:, 0], [3.0, -1.0])
    # the input memory is left alone
    assert not mem.Xv.any()


def test_write_orthogonal_pattern_is_ignored():
    mem = SdmMemory(np.array([[1.0], [0.0]]), np.zeros((1, 1)), CosineThreshold(0.5))
    out = sdm.sdm_write(mem, np.array([0.0, 1.0]), np.array([5.0]))
    assert not out.Xv.any()


def test_threshold_ties_count_as_active():
    mem = SdmMemory(np.array([[1.0], [0.0]]), np.zeros((1, 1)), CosineThreshold(0.6))
    out = sdm.sdm_write(mem, np.array([0.6, 0.8]), np.array([1.0]))
    assert out.Xv[0, 0] == 1.0


def test_write_matches_brute_force_example(rng):
    Xa = unit_columns(rng, 6, 5)
    Pa = unit_columns(rng, 6, 3)
    Pv = rng.standard_normal((2, 3))
    mem = SdmMemory(Xa, np.zeros((2, 5)), CosineThreshold(0.7))
    np.testing.assert_allclose(sdm.sdm_write(mem, Pa, Pv).Xv, brute_write(Xa, np.zeros((2, 5)), Pa, Pv, mem.rule), atol=1e-12)


def test_read_examples(rng):
    v = np.array([1.0, -2.0, 0.5])
    a = numerics.l2_normalize([1.0, 1.0])
    mem = SdmMemory(a[:, None], v[:, None], CosineThreshold(0.5))
    np.testing.assert_array_equal(sdm.sdm_read(mem, a), v)
    np.testing.assert_allclose(sdm.sdm_read(mem, a, renormalize=True), v / np.linalg.norm(v))
    result = sdm.sdm_read(mem, numerics.l2_normalize([1.0, -1.0]))
    assert result is sdm.NO_ACTIVE and not result
    Xa = unit_columns(rng, 4, 6)
    Xv = rng.standard_normal((3, 6))
    q = numerics.l2_normalize(rng.standard_normal(4))
    mem = SdmMemory(Xa, Xv, TopK(2))
    top = np.argsort(-(q @ Xa))[:2]
    np.testing.assert_allclose(sdm.sdm_read(mem, q), Xv[:, top].sum(axis=1), atol=1e-12)


@given(st.integers(0, 2**31), st.integers(1, 16), st.integers(1, 10), st.integers(1, 8), st.booleans())
def test_write_read_match_brute_force(seed, n, r, m, use_topk):
    rng = np.random.default_rng(seed)
    rule = TopK(int(rng.integers(1, r + 1))) if use_topk else CosineThreshold(float(rng.uniform(-0.3, 0.9)))
    Xa = unit_columns(rng, n, r)
    Xv0 = rng.standard_normal((3, r))
    Pa = unit_columns(rng, n, m)
    Pv = rng.standard_normal((3, m))
    mem = sdm.sdm_write(SdmMemory(Xa, Xv0, rule), Pa, Pv)
    np.testing.assert_allclose(mem.Xv, brute_write(Xa, Xv0, Pa, Pv, rule), atol=1e-12)
    q = numerics.l2_normalize(rng.standard_normal(n))
    got = sdm.sdm_read(mem, q)
    want = brute_read(Xa, mem.Xv, q, rule)
    if want is None:
        assert got is sdm.NO_ACTIVE
    else:
        np.testing.assert_allclose(got, want, atol=1e-12)


@given(st.integers(0, 2**31))
def test_write_is_order_independent(seed):
    rng = np.random.default_rng(seed)
    mem = SdmMemory(unit_columns(rng, 8, 10), np.zeros((4, 10)), CosineThreshold(0.2))
    Pa = unit_columns(rng, 8, 6)
    Pv = rng.standard_normal((4, 6))
    perm = rng.permutation(6)
    a = sdm.sdm_write(mem, Pa, Pv).Xv
    b = sdm.sdm_write(mem, Pa[:, perm], Pv[:, perm]).Xv
    np.testing.assert_allclose(a, b, atol=1e-12)


@given(st.integers(0, 2**31), st.integers(1, 12))
def test_topk_read_activates_min_k_r(seed, k):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 10))
    Xa = unit_columns(rng, 5, r)
    act = sdm.activation(TopK(k), numerics.l2_normalize(rng.standard_normal(5)) @ Xa)
    assert act.sum() == min(k, r)


def test_memory_validation(rng):
    with pytest.raises(NotNormalized):
        SdmMemory(np.ones((3, 2)), np.zeros((1, 2)))
    mem = SdmMemory(unit_columns(rng, 3, 2), np.zeros((1, 2)))
    with pytest.raises(DimensionMismatch):
        sdm.sdm_write(mem, unit_columns(rng, 4, 1), np.ones((1, 1)))
    with pytest.raises(NotNormalized):
        sdm.sdm_write(mem, np.ones((3, 1)), np.ones((1, 1)))
    with pytest.raises(NotNormalized):
        sdm.sdm_read(mem, np.ones(3))
    with pytest.raises(ValueError):
        SdmMemory(unit_columns(rng, 3, 2), np.zeros((1, 2)), TopK(3))


# -- circle intersection ------------------------------------------------------


def test_intersection_small_examples():
    assert sdm.intersection_weighted_sum(IntersectionQuery(4, 1, 0)) == 5
    assert sdm.intersection_weighted_sum(IntersectionQuery(4, 1, 4)) == 0


def test_exp_weight_constant_when_no_shared_disagreement():
    n, d_v, beta = 20, 6, 0.3
    a = n - d_v  # z = 0
    weights = [sdm.intersection_weight("exp", a, c, d_v, n, beta) for c in range(d_v + 1)]
    np.testing.assert_allclose(weights, math.exp(-beta * d_v), rtol=1e-12)


def test_linear_weight_peaks_half_way():
    n, d_v = 30, 8
    a = n - d_v
    # distance to the pattern is x = d_v - c when z = 0
    w = {d_v - c: sdm.intersection_weight("linear", a, c, d_v, n) for c in range(d_v + 1)}
    assert max(w, key=w.get) == d_v // 2
    assert w[d_v // 2 - 1] == pytest.approx(w[d_v // 2 + 1])


@pytest.mark.parametrize("n", range(1, 11))
def test_binary_matches_enumeration(n):
    for d, d_v in itertools.product(range(n + 1), range(n + 1)):
        assert sdm.intersection_weighted_sum(IntersectionQuery(n, d, d_v)) == sdm.enumerate_intersection(n, d, d_v)


def test_binary_curve_normalized_and_nonincreasing():
    for d in (5, 11, 15, 25):
        curve = sdm.intersection_curve(64, d)
        assert curve[0] == (0, 1.0)
        values = [v for _, v in curve]
        assert all(b <= a for a, b in zip(values, values[1:]))


def curve_gap(n, d, weight_type, beta=sdm.DEFAULT_EXP_BETA):
    binary = np.array([v for _, v in sdm.intersection_curve(n, d)])
    other = np.array([v for _, v in sdm.intersection_curve(n, d, weight_type, beta)])
    return float(np.abs(binary - other).max())


def test_weighted_curves_close_to_binary_for_n64():
    for d in (5, 11, 15):
        assert curve_gap(64, d, "exp") < 0.05
        assert curve_gap(64, d, "linear") < 0.05


def test_exp_gap_grows_with_beta():
    gaps = [curve_gap(64, 11, "exp", b) for b in (0.01, 0.05, 0.2)]
    assert gaps[0] < gaps[1] < gaps[2]


def test_intersection_query_validation():
    with pytest.raises(ValueError):
        IntersectionQuery(4, 5, 0)
    with pytest.raises(ValueError):
        IntersectionQuery(4, 1, 0, "cubic")
    with pytest.raises(ValueError):
        IntersectionQuery(4, 1, 0, "exp", beta=0)
    with pytest.raises(ValueError):
        sdm.intersection_curve(600, 10)


# -- E/I dynamics -------------------------------------------------------------


def small_ei(**kw):
    return sdm.make_ei_config(20, r_E=60, r_I=4, seed=0, **kw)


def test_ei_zero_input_is_fixed_point():
    cfg = small_ei()
    res = sdm.simulate_ei_dynamics(cfg, np.zeros(20))
    assert res.converged and res.steps == 1
    assert not res.e.any() and not res.i.any()


def test_ei_converged_state_satisfies_fixed_point(rng):
    cfg = small_ei(b_i=2.0)
    x = numerics.l2_normalize(rng.uniform(0, 1, 20))
    res = sdm.simulate_ei_dynamics(cfg, x)
    assert res.converged
    e0 = cfg.W_inp.T @ x
    drive = e0 + cfg.ie_sign * (cfg.W_IE @ res.i)
    target = np.tanh(np.maximum((drive - cfg.b) / cfg.L, 0))
    # a step changes e by at most tol, so e* is within tol * tau_a / delta of the fixed point
    np.testing.assert_allclose(res.e, target, atol=cfg.tol * cfg.tau_a / cfg.delta)


def test_ei_nonconvergence_is_flagged(rng, caplog):
    cfg = dataclasses.replace(small_ei(), max_steps=3)
    res = sdm.simulate_ei_dynamics(cfg, numerics.l2_normalize(rng.uniform(0, 1, 20)))
    assert not res.converged and res.steps == 3
    assert "did not converge" in caplog.text


def test_ei_dimension_check():
    with pytest.raises(DimensionMismatch):
        sdm.simulate_ei_dynamics(small_ei(), np.zeros(5))
    with pytest.raises(ValueError):
        small_ei(tau_a=0.0)


def test_ei_wiring_sums_to_one_in_expectation():
    cfg = sdm.make_ei_config(10, r_E=2000, r_I=50, seed=1)
    assert cfg.W_IE.sum(axis=1).mean() == pytest.approx(1.0, abs=0.02)
    assert set(np.unique(cfg.W_EI)) == {0.0, 1.0}


def test_inhibitory_feedback_activity_rises_with_threshold(rng):
    # a higher interneuron threshold means less inhibition, so more units stay on
    cfg = sdm.make_ei_config(30, r_E=200, r_I=5, seed=2)
    X = numerics.normalize_rows(rng.uniform(0, 1, (5, 30)) ** 4)
    means = [sdm.active_counts(dataclasses.replace(cfg, b_i=b), X).mean() for b in (0.0, 5.0, 20.0, 60.0)]
    assert all(b >= a for a, b in zip(means, means[1:]))
    assert means[0] < means[-1]


def test_tune_inhibitory_threshold_hits_target(rng):
    cfg = sdm.make_ei_config(30, r_E=200, r_I=5, seed=2)
    X = numerics.normalize_rows(rng.uniform(0, 1, (5, 30)) ** 4)
    b_i = sdm.tune_inhibitory_threshold(cfg, X, 0.3, 0.0, 60.0, iters=12)
    frac = sdm.active_counts(dataclasses.replace(cfg, b_i=b_i), X).mean() / 200
    assert abs(frac - 0.3) < 0.05
