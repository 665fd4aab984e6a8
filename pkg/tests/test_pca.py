import math

import numpy as np
import pytest

from stochopt.errors import ContractViolation
from stochopt.pca import (PcaConfig, capped_msg_step, converged_rank_k, evaluate_objective,
                          incremental_step, initial_state, msg_step, pca_train, power_step,
                          relaxed_suboptimality, saa_solve, warmuth_step)
from stochopt.spectral import EigState, orthonormalize
from stochopt.synthetic import SyntheticSpec, sample_batch, sigma_k

from oracles import (dense_incremental_step, dense_msg_step, dense_warmuth_step,
                     principal_angle)


# ---------------------------------------------------------------- power

def test_power_orthogonal_sample():
    U = np.eye(4)[:, :2]
    s = power_step(EigState(U, np.ones(2), 0.0, 4), np.array([0, 0, 1.0, 0]), 0.5)
    np.testing.assert_array_equal(s.basis, U)


def test_power_aligned_sample():
    s = power_step(EigState(np.eye(3)[:, :1], np.ones(1), 0.0, 3), np.eye(3)[0], 1.0,
                   renormalize=False)
    np.testing.assert_array_equal(s.basis[:, 0], [2.0, 0, 0])
    s = power_step(EigState(np.eye(3)[:, :1], np.ones(1), 0.0, 3), np.eye(3)[0], 1.0)
    np.testing.assert_array_equal(s.basis[:, 0], [1.0, 0, 0])


def test_power_deferred_renormalization():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 6)) * np.sqrt(np.arange(6, 0, -1) / 6)
    U0 = orthonormalize(rng.normal(size=(6, 2)))
    a = EigState(U0, np.ones(2), 0.0, 6)
    b = EigState(U0, np.ones(2), 0.0, 6)
    for t, x in enumerate(X, start=1):
        a = power_step(a, x, 0.1 / math.sqrt(t))
        b = power_step(b, x, 0.1 / math.sqrt(t), renormalize=(t % 10 == 0))
    assert principal_angle(a.basis, b.basis) <= 1e-6


# ---------------------------------------------------------------- incremental

def test_incremental_first_sample():
    x = np.array([1.0, 2.0, 0.0])
    s = incremental_step(EigState.empty(3), x, 1)
    np.testing.assert_allclose(s.dense(), np.outer(x, x), atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_incremental_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    d, k = 5, 2
    s = EigState.empty(d)
    C = np.zeros((d, d))
    for _ in range(30):
        x = rng.normal(size=d)
        s = incremental_step(s, x, k)
        C = dense_incremental_step(C, x, k)
        np.testing.assert_allclose(s.dense(), C, atol=1e-8 * max(1, np.abs(C).max()))


# ---------------------------------------------------------------- MSG

def test_msg_first_step_from_zero():
    s = msg_step(EigState.empty(3), np.eye(3)[0], 1.0, 1)
    assert s.rank == 1 and s.eigvals[0] == pytest.approx(1.0)
    np.testing.assert_allclose(s.basis[:, 0], [1, 0, 0])
    assert s.complement_value == 0.0


def test_msg_zero_step():
    rng = np.random.default_rng(1)
    U = orthonormalize(rng.normal(size=(4, 2)))
    s = EigState(U, np.array([0.7, 0.3]), 0.0, 4)
    t = msg_step(s, rng.normal(size=4), 0.0, 1)
    np.testing.assert_allclose(t.dense(), s.dense(), atol=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_msg_dense_oracle_and_feasibility(seed):
    rng = np.random.default_rng(seed)
    d, k = 6, 2
    s = initial_state(PcaConfig("msg", k=k), d, rng)
    M = np.eye(d) * k / d
    for t in range(1, 41):
        x = rng.normal(size=d) * 0.6
        prev_rank, prev_comp = s.rank, s.complement_value
        s = msg_step(s, x, 0.5 / math.sqrt(t), k)
        M = dense_msg_step(M, x, 0.5 / math.sqrt(t), k)
        np.testing.assert_allclose(s.dense(), M, atol=1e-8)
        spec = s.full_spectrum()
        assert abs(spec.sum() - k) <= 1e-9
        assert spec.min() >= -1e-12 and spec.max() <= 1 + 1e-12
        if prev_comp == 0:
            # each update adds at most one explicit direction
            assert s.rank <= prev_rank + 1


def test_capped_full_rank_equals_msg():
    rng = np.random.default_rng(2)
    d, k = 4, 1
    U = orthonormalize(rng.normal(size=(d, d)))
    a = EigState(U, np.full(d, k / d), 0.0, d)
    b = a.copy()
    for t in range(1, 30):
        x = rng.normal(size=d)
        a = msg_step(a, x, 0.3, k)
        b = capped_msg_step(b, x, 0.3, k, d)
        np.testing.assert_allclose(a.dense(), b.dense(), atol=1e-10)


def test_capped_rank_bound_and_k_equals_K():
    rng = np.random.default_rng(3)
    for K in (1, 2):
        s = initial_state(PcaConfig("capped_msg", k=1, K=K), 5, rng)
        for _ in range(50):
            s = capped_msg_step(s, rng.normal(size=5), 0.2, 1, K)
            assert s.rank <= K
            assert abs(s.trace() - 1) <= 1e-9


# ---------------------------------------------------------------- Warmuth

def test_warmuth_zero_sample():
    s = EigState.empty(4, 0.25)
    t = warmuth_step(s, np.zeros(4), 0.5, 1)
    np.testing.assert_allclose(t.dense(), s.dense(), atol=1e-15)


def test_warmuth_hand_example():
    s = EigState.empty(2, 0.5)
    t = warmuth_step(s, np.array([1.0, 0.0]), math.log(2), 1)
    np.testing.assert_allclose(t.dense(), np.diag([1 / 3, 2 / 3]), atol=1e-12)
    W = dense_warmuth_step(np.eye(2) / 2, np.array([1.0, 0.0]), math.log(2), 1)
    np.testing.assert_allclose(W, np.diag([1 / 3, 2 / 3]), atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_warmuth_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    d, k = 5, 2
    s = initial_state(PcaConfig("warmuth", k=k), d, rng)
    W = np.eye(d) / d
    for t in range(1, 31):
        x = rng.normal(size=d) * 0.5
        s = warmuth_step(s, x, 0.4, k)
        W = dense_warmuth_step(W, x, 0.4, k)
        np.testing.assert_allclose(s.dense(), W, atol=1e-6)
        spec = s.full_spectrum()
        assert abs(spec.sum() - 1) <= 1e-9 and spec.max() <= 1 / (d - k) + 1e-12


def test_warmuth_rejects_nonpositive_eta():
    with pytest.raises(ContractViolation):
        warmuth_step(EigState.empty(3, 1 / 3), np.ones(3), 0.0, 1)


# ---------------------------------------------------------------- SAA, evaluation

def test_saa_examples():
    s = saa_solve(np.tile(np.eye(3)[0], (5, 1)), 1)
    np.testing.assert_allclose(s.basis[:, 0], [1, 0, 0])
    assert s.eigvals[0] == pytest.approx(1.0)
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(saa_solve(X, 1).basis[:, 0], [1, 0])


def test_saa_dense_oracle():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 8))
    s = saa_solve(X, 3)
    w, V = np.linalg.eigh(X.T @ X / 100)
    np.testing.assert_allclose(s.eigvals, w[::-1][:3], rtol=1e-12)
    assert principal_angle(s.basis, V[:, ::-1][:, :3]) < 1e-8


def test_objective_known_covariance():
    sig = np.array([0.5, 0.3, 0.15, 0.05])
    S = np.diag(sig)
    top = EigState(np.eye(4)[:, :2], np.ones(2), 0.0, 4)
    assert evaluate_objective(top, 2, covariance=S).suboptimality == pytest.approx(0.0, abs=1e-15)
    bottom = EigState(np.eye(4)[:, 2:], np.ones(2), 0.0, 4)
    assert evaluate_objective(bottom, 2, covariance=S).suboptimality == pytest.approx(0.8 - 0.2)


def test_objective_monte_carlo():
    rng = np.random.default_rng(5)
    spec = SyntheticSpec("gaussian_sigma_k", 8, 2)
    S = spec.covariance()
    U = orthonormalize(rng.normal(size=(8, 2)))
    s = EigState(U, np.ones(2), 0.0, 8)
    X = sample_batch(spec, rng, 100_000)
    mc = evaluate_objective(s, 2, samples=X).captured
    exact = evaluate_objective(s, 2, covariance=S).captured
    proj = np.sum((X @ U) ** 2, axis=1)
    assert abs(mc - exact) <= 3 * proj.std() / math.sqrt(X.shape[0])


def test_relaxed_suboptimality():
    S = np.diag([0.6, 0.3, 0.1])
    assert relaxed_suboptimality(np.diag([1.0, 0, 0]), S, 1) == pytest.approx(0.0)
    assert relaxed_suboptimality(np.eye(3) / 3, S, 1) == pytest.approx(0.6 - 1 / 3)


def test_convergence_detector():
    a = EigState(np.eye(3)[:, :1], np.array([1.0]), 0.0, 3)
    assert converged_rank_k([a, a.copy()], 1)
    b = EigState(np.eye(3)[:, :2], np.array([0.6, 0.4]), 0.0, 3)
    assert not converged_rank_k([a, b], 1)
    assert not converged_rank_k([], 1)


# ---------------------------------------------------------------- training loop

@pytest.mark.parametrize("alg", ["power", "incremental", "msg", "capped_msg", "warmuth"])
def test_pca_train_logs(alg):
    spec = SyntheticSpec("gaussian_sigma_k", 10, 2)
    X = sample_batch(spec, np.random.default_rng(0), 300)
    cfg = PcaConfig(alg, k=2, K=3, T=300, step_scale=0.5)
    res = pca_train(cfg, lambda t: X[t - 1], 10, np.random.default_rng(1), spec.covariance())
    its = res.log.column("iteration")
    assert list(its) == [1, 2, 4, 8, 16, 32, 64, 128, 256, 300]
    assert np.all(np.diff(res.log.column("runtime_proxy")) >= 0)
    assert res.log.last["suboptimality"] >= -1e-12


def test_pca_config_validation():
    with pytest.raises(ContractViolation):
        PcaConfig("msg", k=4).validate(4)
    with pytest.raises(ContractViolation):
        PcaConfig("capped_msg", k=3, K=2).validate(5)
    with pytest.raises(ContractViolation):
        PcaConfig("bogus").validate(5)


# ---------------------------------------------------------------- synthetic streams

def test_sigma_k_normalized():
    s = sigma_k(32, 4)
    assert s.sum() == pytest.approx(1.0)
    assert np.all(np.diff(s) <= 0)


def test_two_point_frequencies():
    X = sample_batch(SyntheticSpec("two_point_failure"), np.random.default_rng(0), 100_000)
    p = np.mean(X[:, 0] > 0)
    assert abs(p - 1 / 3) <= 3 * math.sqrt(1 / 3 * 2 / 3 / 100_000)
    np.testing.assert_allclose(np.unique(np.linalg.norm(X, axis=1)), [math.sqrt(2), math.sqrt(3)])


def test_gaussian_family_covariance():
    spec = SyntheticSpec("gaussian_sigma_k", 6, 2)
    X = sample_batch(spec, np.random.default_rng(1), 100_000)
    emp = X.T @ X / X.shape[0]
    S = spec.covariance()
    # standard error of the (i, j) second moment is sqrt(S_ii S_jj (1 + [i=j]) / n)
    se = np.sqrt(np.outer(np.diag(S), np.diag(S)) * (1 + np.eye(6)) / X.shape[0])
    assert np.all(np.abs(emp - S) <= 4 * se)


def test_orthogonal_family_basis_vectors():
    spec = SyntheticSpec("orthogonal_sigma_k", 8, 2)
    X = sample_batch(spec, np.random.default_rng(2), 1000)
    assert np.all(np.sort(X, axis=1)[:, :-1] == 0) and np.all(X.max(axis=1) == 1)
    assert spec.probabilities.sum() == pytest.approx(1.0)


def test_synthetic_validation():
    with pytest.raises(ContractViolation):
        SyntheticSpec("gaussian_sigma_k", 4, 4)
    with pytest.raises(ContractViolation):
        SyntheticSpec("nope")
