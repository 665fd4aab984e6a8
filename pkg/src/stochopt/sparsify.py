"""Sparsification of a trained kernel SVM.

Given a dense classifier g_w, find w~ with few support vectors such that

    f(w~) = max_{i : y_i g_w(x_i) > 0} (h_i - y_i g_w~(x_i)) <= eps,
    h_i = min(1, y_i g_w(x_i)),

by subgradient descent from w~ = 0.  Each step adds eta y_i Phi(x_i) for
the most violated active index, so the support grows by at most one per
step.  With eta = eps = 1/2 and K(x,x) <= 1 the distance |w~ - w|^2 drops
by more than 1/4 per step, hence fewer than 4|w|^2 steps are taken.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .data import DualState, KernelOracle, rescale_state, response_update
from .errors import ContractViolation, DegenerateError, NonConvergenceError
from .metrics import MetricLog

MODES = ("basic", "aggressive", "bias_learning")


@dataclass
class SparsifyProblem:
    h: np.ndarray                 # targets, length n (only active entries matter)
    active: np.ndarray            # indices with y_i (g_w(x_i) + b) > 0
    reference_norm_sq: float
    labels: np.ndarray
    bias: float = 0.0             # bias of the dense classifier
    h_raw: Optional[np.ndarray] = None   # min(1, y_i (g + b)), for bias learning

    @property
    def n(self):
        return self.h.size


@dataclass
class SparsifyConfig:
    eta: float = 0.5
    epsilon: float = 0.5
    mode: str = "basic"
    max_iters: Optional[int] = None
    project_norm: bool = False

    def __post_init__(self):
        if not (0 < self.epsilon <= 1):
            raise ContractViolation("epsilon must be in (0, 1]")
        if not self.eta > 0:
            raise ContractViolation("eta must be positive")
        if self.mode not in MODES:
            raise ContractViolation(f"unknown mode {self.mode!r}")


class SparsifyResult(NamedTuple):
    alpha: np.ndarray
    bias: Optional[float]
    log: MetricLog


def slant_loss(z):
    """min(1, max(0, 1/2 - z)); the expected 0/1 loss of z + U[-1/2, 1/2]."""
    out = np.minimum(1.0, np.maximum(0.0, 0.5 - np.asarray(z, dtype=np.float64)))
    return float(out) if out.ndim == 0 else out


def build_problem(dense_state: DualState, oracle: KernelOracle, with_bias: bool = False,
                  b: float = 0.0) -> SparsifyProblem:
    y = oracle.labels
    b = float(b) if with_bias else 0.0
    margin = dense_state.responses + y * b         # y_i (g_w(x_i) + b)
    active = np.flatnonzero(margin > 0)
    if active.size == 0:
        raise DegenerateError("dense classifier is wrong on every example; nothing to mimic")
    h_raw = np.minimum(1.0, margin)
    h = h_raw - y * b
    return SparsifyProblem(h, active, float(dense_state.norm_sq), y.copy(), b, h_raw)


def _responses(alpha, oracle):
    """y_j <w~, Phi(x_j)> from scratch, one kernel row per support vector."""
    y = oracle.labels
    c = np.zeros(oracle.n)
    for s in np.flatnonzero(alpha):
        c += alpha[s] * y[s] * y * oracle.row(int(s))
    return c


def evaluate_f(problem: SparsifyProblem, alpha_tilde, oracle: KernelOracle,
               b_tilde: Optional[float] = None) -> float:
    c = _responses(np.asarray(alpha_tilde, dtype=np.float64), oracle)
    a = problem.active
    if b_tilde is None:
        return float(np.max(problem.h[a] - c[a]))
    return float(np.max(problem.h_raw[a] - c[a] - problem.labels[a] * b_tilde))


def _argmax_low(v, idx):
    """Index in idx attaining max(v[idx]); first (lowest) on ties."""
    k = int(np.argmax(v[idx]))
    return int(idx[k]), float(v[idx[k]])


def sparsify(problem: SparsifyProblem, oracle: KernelOracle,
             config: SparsifyConfig = SparsifyConfig()) -> SparsifyResult:
    n = problem.n
    eps = config.epsilon
    eta = config.eta
    max_iters = config.max_iters
    if max_iters is None:
        max_iters = 8 * math.ceil(4.0 * problem.reference_norm_sq)
    y = problem.labels
    act = problem.active
    state = DualState.zeros(n)
    log = MetricLog(["iteration", "kernel_evals", "objective", "support"])
    best = math.inf

    if config.mode == "bias_learning":
        pos = act[y[act] > 0]
        neg = act[y[act] < 0]
        if pos.size == 0 or neg.size == 0:
            raise ContractViolation("bias learning needs both classes in the active set")
        hr = problem.h_raw
        t = 0
        while True:
            c = state.responses
            # with g~ = y c, the positive violation is h - g~ - b~ and the
            # negative one h + g~ + b~.  Writing P, N for their maxima at
            # b~ = 0, f(b~) = max(P - b~, N + b~) is smallest where the two
            # meet: b~ = (P - N)/2, f = (P + N)/2.
            ip, P = _argmax_low(hr - c, pos)
            im, N = _argmax_low(hr - c, neg)
            f = 0.5 * (P + N)
            best = min(best, f)
            _record(log, t, oracle, f, state)
            if f <= eps:
                b_tilde = 0.5 * (P - N)
                break
            if t >= max_iters:
                raise NonConvergenceError(
                    f"no {eps}-approximation after {t} iterations", best, t)
            t += 1
            response_update(state, oracle, ip, eta)
            response_update(state, oracle, im, eta)
            _maybe_project(state, problem, config)
        _finish(log, t, oracle, f, state)
        return SparsifyResult(state.alpha, float(b_tilde), log)

    h = problem.h
    t = 0
    while True:
        viol = h - state.responses
        i, f = _argmax_low(viol, act)
        best = min(best, f)
        _record(log, t, oracle, f, state)
        if f <= eps:
            break
        if config.mode == "aggressive":
            # reuse a current support vector while one is still violated
            sv = act[state.alpha[act] != 0]
            if sv.size:
                j, fj = _argmax_low(viol, sv)
                if fj > eps:
                    i = j
        if t >= max_iters:
            raise NonConvergenceError(
                f"no {eps}-approximation after {t} iterations", best, t)
        t += 1
        response_update(state, oracle, i, eta)
        _maybe_project(state, problem, config)
    _finish(log, t, oracle, f, state)
    return SparsifyResult(state.alpha, None, log)


def _maybe_project(state, problem, config):
    if config.project_norm and state.norm_sq > problem.reference_norm_sq > 0:
        rescale_state(state, math.sqrt(problem.reference_norm_sq / state.norm_sq))


def _record(log, t, oracle, f, state):
    # t counts completed steps; t = 0 is the empty starting point
    if t == 0 or (t & (t - 1)) == 0:
        log.append(iteration=t, kernel_evals=oracle.eval_count, objective=f,
                   support=int(np.count_nonzero(state.alpha)))


def _finish(log, t, oracle, f, state):
    log.info.update(iterations=t, final_f=f)
    if log.records[-1]["iteration"] < t:
        log.append(iteration=t, kernel_evals=oracle.eval_count, objective=f,
                   support=int(np.count_nonzero(state.alpha)))
