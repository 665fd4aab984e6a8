import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochopt.baselines import (BaselineConfig, baseline_train, coordinate_gains,
                                dual_coordinate_step, dual_objective, dual_pair_step_biased,
                                pegasos_step, perceptron_train, primal_objective, recover_bias,
                                rff_directions, rff_map, rff_train, select_working_index,
                                sgd_norm_step)
from stochopt.data import Dataset, DualState, KernelOracle, KernelSpec, recompute_state
from stochopt.errors import ContractViolation, DegenerateError

from oracles import gram, pair_dual_max


def make(X, y, kind="linear", bw=1.0):
    ds = Dataset.from_dense(np.asarray(X, float), np.asarray(y, float))
    return ds, KernelOracle(ds, KernelSpec(kind, bw))


def random_problem(rng, n, d=3, bw=0.8):
    X = rng.normal(size=(n, d)) * 0.5
    y = rng.choice([-1.0, 1.0], n)
    y[0], y[1] = 1.0, -1.0
    ds, o = make(X, y, "gaussian", bw)
    return X, y, ds, o


class FixedRng:
    """Stands in for a Generator when a test needs a chosen sample."""

    def __init__(self, i):
        self.i = i

    def integers(self, *a, **k):
        return self.i


# ---------------------------------------------------------------- SGD steps

def test_sgd_norm_inactive_hinge():
    ds, o = make([[1.0]], [1])
    s = DualState(np.array([2.0]), np.array([2.0]), 4.0)
    before = o.eval_count
    sgd_norm_step(s, o, 10.0, 1.0, FixedRng(0))
    assert list(s.responses) == [2.0] and o.eval_count == before


def test_sgd_norm_first_step_and_projection():
    ds, o = make([[1.0]], [1])
    s = sgd_norm_step(DualState.zeros(1), o, 10.0, 1.0, FixedRng(0))
    assert list(s.responses) == [1.0]
    s = sgd_norm_step(DualState.zeros(1), o, 2.0, 3.0, FixedRng(0))
    assert s.responses[0] == pytest.approx(2.0) and math.sqrt(s.norm_sq) == pytest.approx(2.0)


def test_pegasos_precondition_and_hand_step():
    ds, o = make([[1.0]], [1])
    with pytest.raises(ContractViolation):
        pegasos_step(DualState.zeros(1), o, 1.0, 1.0, FixedRng(0))
    s = DualState(np.array([1.0]), np.array([1.0]), 1.0)
    pegasos_step(s, o, 1.0, 0.5, FixedRng(0))
    # shrink to 0.5, then c = 0.5 < 1 triggers a step of 0.5
    assert s.alpha[0] == pytest.approx(1.0)
    s = pegasos_step(DualState.zeros(3), make(np.eye(3), [1, 1, -1])[1], 0.1, 0.5,
                     np.random.default_rng(0))
    assert np.count_nonzero(s.alpha) <= 1


def test_pegasos_ball():
    rng = np.random.default_rng(1)
    X, y, ds, o = random_problem(rng, 60)
    lam = 0.05
    res = baseline_train(ds, o, BaselineConfig("pegasos", lam=lam, epochs=5), rng)
    norms = res.log.column("norm")
    its = res.log.column("iteration")
    assert np.all(norms[its >= 60] <= 1.1 / math.sqrt(lam))


# ---------------------------------------------------------------- dual coordinate

def test_coordinate_stationary():
    ds, o = make(np.eye(2), [1, 1])
    s = DualState(np.array([0.3, 0.0]), np.array([1.0, 0.0]), 0.09)
    before = s.alpha.copy()
    dual_coordinate_step(s, o, 0.05, 0)
    assert np.array_equal(s.alpha, before)


def test_coordinate_unclipped_and_clipped():
    ds, o = make(np.eye(2), [1, 1])
    s = DualState(np.array([0.0, 0.0]), np.array([0.5, 0.0]), 0.0)
    dual_coordinate_step(s, o, 0.05, 0)        # C = 1/(0.05 * 2) = 10
    assert s.alpha[0] == pytest.approx(0.5)
    s = DualState(np.array([0.0, 0.0]), np.array([-3.0, 0.0]), 0.0)
    dual_coordinate_step(s, o, 0.5, 0)         # C = 1
    assert s.alpha[0] == 1.0


def test_coordinate_zero_diagonal():
    ds, o = make([[0.0, 0.0], [1.0, 0.0]], [1, -1])
    with pytest.raises(DegenerateError):
        dual_coordinate_step(DualState.zeros(2), o, 0.1, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_dual_steps_monotone_box_conserving(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    X, y, ds, o = random_problem(rng, n)
    lam = float(rng.uniform(0.05, 2.0))
    C = 1.0 / (lam * n)
    s = DualState.zeros(n)
    for _ in range(40):
        before = dual_objective(s)
        dual_coordinate_step(s, o, lam, int(rng.integers(n)))
        assert dual_objective(s) >= before - 1e-10
        assert np.all(s.alpha >= 0) and np.all(s.alpha <= C)
    # pair steps from a feasible point with sum y alpha = 0
    s = DualState.zeros(n)
    for _ in range(40):
        i = int(rng.choice(np.flatnonzero(y > 0)))
        j = int(rng.choice(np.flatnonzero(y < 0)))
        before = dual_objective(s)
        dual_pair_step_biased(s, o, lam, i, j)
        assert dual_objective(s) >= before - 1e-10
        assert np.all(s.alpha >= 0) and np.all(s.alpha <= C)
        assert math.fsum(y * s.alpha) == 0.0


def test_pair_trivial_stationary():
    ds, o = make(np.eye(2), [1, -1])
    s = DualState(np.zeros(2), np.array([1.0, 1.0]), 0.0)
    dual_pair_step_biased(s, o, 0.1, 0, 1)
    assert np.all(s.alpha == 0)


def test_pair_formula_orthogonal_symmetric():
    # with K_ij = 0 the optimal step is (2 - c_i - c_j) / (K_ii + K_jj)
    ds, o = make(np.eye(2) * 0.8, [1, -1])
    s = DualState.zeros(2)
    dual_pair_step_biased(s, o, 0.01, 0, 1)
    assert s.alpha[0] == pytest.approx(2.0 / (0.64 + 0.64), rel=1e-12)
    assert s.alpha[1] == s.alpha[0]


@pytest.mark.parametrize("seed", range(4))
def test_pair_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = 6
    X, y, ds, o = random_problem(rng, n)
    lam = 1.0 if seed % 2 else 0.05           # small box forces clipping
    C = 1.0 / (lam * n)
    G = gram(X, "gaussian", 0.8)
    s = DualState.zeros(n)
    for _ in range(3):
        dual_pair_step_biased(s, o, lam, 0, 1)
        dual_pair_step_biased(s, o, lam, 2, 3) if y[2] != y[3] else None
    i = int(np.flatnonzero(y > 0)[-1])
    j = int(np.flatnonzero(y < 0)[-1])
    d_bf, best = pair_dual_max(s.alpha, y, G, i, j, C, points=100001)
    dual_pair_step_biased(s, o, lam, i, j)
    ref = recompute_state(s.alpha, G, y)
    ours = s.alpha.sum() - 0.5 * ref.norm_sq
    assert ours >= best - 1e-9
    assert np.all(s.alpha >= 0) and np.all(s.alpha <= C)


# ---------------------------------------------------------------- working sets

def test_select_all_stationary_returns_first():
    ds, o = make(np.eye(3), [1, 1, -1])
    s = DualState(np.zeros(3), np.ones(3), 0.0)
    assert select_working_index(s, o, 0.1, "max_gain") == 0
    assert np.all(coordinate_gains(s, o, 0.1) == 0)


def test_select_single_candidate():
    ds, o = make(np.eye(3), [1, 1, -1])
    s = DualState(np.zeros(3), np.array([1.0, 0.2, 1.5]), 0.0)
    assert select_working_index(s, o, 0.1, "max_gain") == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_max_gain_exhaustive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    X, y, ds, o = random_problem(rng, n)
    lam = 0.3
    G = gram(X, "gaussian", 0.8)
    s = DualState.zeros(n)
    for _ in range(3):
        dual_coordinate_step(s, o, lam, int(rng.integers(n)))
    base = s.alpha.sum() - 0.5 * recompute_state(s.alpha, G, y).norm_sq
    C = 1.0 / (lam * n)
    gains = []
    for i in range(n):
        # brute-force 1-D maximization over a fine grid of alpha_i
        best = base
        for v in np.linspace(0, C, 2001):
            a = s.alpha.copy()
            a[i] = v
            best = max(best, a.sum() - 0.5 * recompute_state(a, G, y).norm_sq)
        gains.append(best - base)
    pick = select_working_index(s, o, lam, "max_gain")
    assert gains[pick] >= max(gains) - 1e-6


def test_biased_smo_converges_to_kkt():
    rng = np.random.default_rng(3)
    X, y, ds, o = random_problem(rng, 30)
    lam = 0.1
    res = baseline_train(ds, o, BaselineConfig("smo", lam=lam, epochs=20, with_bias=True), rng)
    G = gram(X, "gaussian", 0.8)
    st_ = recompute_state(res.alpha, G, y)
    assert abs(math.fsum(y * res.alpha)) < 1e-12
    gap = primal_objective(st_, lam, res.bias, y) - dual_objective(st_)
    assert -1e-9 <= gap < 1e-3 * primal_objective(st_, lam, res.bias, y)


def test_recover_bias_interior_average():
    y = np.array([1.0, -1.0])
    s = DualState(np.array([0.5, 0.5]), np.array([0.8, 1.2]), 0.0)
    # lam n = 1 -> C = 1, both interior: b = mean(y - y c)
    b = recover_bias(s, y, 0.5)
    assert b == pytest.approx(np.mean(y - y * s.responses))


# ---------------------------------------------------------------- perceptron

def test_perceptron_mistake_bound():
    rng = np.random.default_rng(0)
    u = np.array([0.6, 0.8])
    X = []
    while len(X) < 300:
        x = rng.uniform(-1, 1, 2)
        if np.linalg.norm(x) <= 1 and abs(x @ u) >= 0.25:
            X.append(x)
    X = np.array(X)
    y = np.sign(X @ u)
    ds, o = make(X, y)
    res = perceptron_train(ds, o, seed=1)
    m = res.log.info["mistakes"]
    # separable with margin 0.25 by a unit vector: at most 1/0.25^2 mistakes
    assert m <= 16
    assert np.count_nonzero(res.alpha) == m


def test_perceptron_same_label_and_empty():
    X = np.abs(np.random.default_rng(2).normal(size=(20, 3))) * 0.3
    ds, o = make(X, np.ones(20), "gaussian")
    res = perceptron_train(ds, o, seed=0)
    assert res.log.info["mistakes"] <= 1
    empty = Dataset.from_examples([], [], 3)
    res = perceptron_train(empty, KernelOracle(empty, KernelSpec("linear")))
    assert res.alpha.size == 0


def test_perceptron_sampled_iterate():
    rng = np.random.default_rng(4)
    X, y, ds, o = random_problem(rng, 25)
    res = perceptron_train(ds, o, seed=3)
    tau = res.log.info["sampled_iterate"]
    assert 1 <= tau <= 25
    assert np.all(res.log.info["sampled_alpha"] <= res.alpha)


# ---------------------------------------------------------------- random features

def test_rff_zero_vector():
    V = rff_directions(8, 3, np.random.default_rng(0))
    z = rff_map(np.zeros(3), V, 1.0)
    np.testing.assert_array_equal(z[0::2], np.full(8, 1 / math.sqrt(8)))
    np.testing.assert_array_equal(z[1::2], np.zeros(8))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.integers(1, 64))
def test_rff_unit_norm(x, D):
    V = rff_directions(D, 3, np.random.default_rng(D))
    assert np.linalg.norm(rff_map(np.array(x), V, 0.7)) == pytest.approx(1.0, abs=1e-12)


def test_rff_deterministic_and_sparse_input():
    V1 = rff_directions(16, 4, np.random.default_rng(9))
    V2 = rff_directions(16, 4, np.random.default_rng(9))
    x = np.array([0.0, 0.5, 0.0, -1.0])
    a = rff_map(x, V1, 2.0)
    assert np.array_equal(a, rff_map(x, V2, 2.0))
    assert np.array_equal(a, rff_map((np.array([2, 4]), np.array([0.5, -1.0])), V1, 2.0))


def test_rff_train_separates():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(80, 2)) * 0.4
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    ds = Dataset.from_dense(X, y)
    model, log = rff_train(ds, KernelSpec("gaussian"), BaselineConfig("rff", lam=1e-3, D=256, epochs=10), rng)
    assert np.mean(np.sign(model.decision_function(ds)) != y) < 0.1


def test_config_validation():
    with pytest.raises(ContractViolation):
        BaselineConfig("pegasos")
    with pytest.raises(ContractViolation):
        BaselineConfig("sgd_norm", R=1.0, with_bias=True)
    with pytest.raises(ContractViolation):
        BaselineConfig("nope")
