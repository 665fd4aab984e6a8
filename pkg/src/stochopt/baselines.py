"""Comparison kernel-SVM solvers: norm-constrained SGD, Pegasos, dual
coordinate ascent (random or max-gain selection, optionally with an
unregularized bias), the one-pass Perceptron and random Fourier features.

All kernel solvers share the response bookkeeping of ``data.DualState``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .data import Dataset, DualState, KernelOracle, KernelSpec, rescale_state, response_update
from .errors import ContractViolation, DegenerateError
from .metrics import MetricLog, is_checkpoint

ALGORITHMS = ("sgd_norm", "pegasos", "sdca", "smo", "perceptron", "rff")


@dataclass
class BaselineConfig:
    algorithm: str = "sdca"
    R: Optional[float] = None
    lam: Optional[float] = None
    epochs: int = 10
    D: Optional[int] = None
    with_bias: bool = False
    seed: int = 0
    passes: int = 1             # perceptron only; >1 gives no guarantee

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractViolation(f"unknown algorithm {self.algorithm!r}")
        need = {"sgd_norm": ["R"], "pegasos": ["lam"], "sdca": ["lam"], "smo": ["lam"],
                "rff": ["lam", "D"], "perceptron": []}[self.algorithm]
        for name in need:
            v = getattr(self, name)
            if v is None or not v > 0:
                raise ContractViolation(f"{self.algorithm} needs a positive {name}")
        if self.with_bias and self.algorithm not in ("sdca", "smo"):
            raise ContractViolation("with_bias is only supported by sdca/smo")
        if int(self.epochs) < 1:
            raise ContractViolation("epochs must be >= 1")


class TrainResult(NamedTuple):
    alpha: np.ndarray
    bias: Optional[float]
    log: MetricLog


def dual_objective(state: DualState) -> float:
    return float(state.alpha.sum() - 0.5 * state.norm_sq)


def hinge(z):
    return np.maximum(0.0, 1.0 - np.asarray(z))


# ---------------------------------------------------------------- primal SGD

def sgd_norm_step(state: DualState, oracle: KernelOracle, R: float, eta: float,
                  rng: np.random.Generator) -> DualState:
    """One projected subgradient step on the norm-constrained hinge objective."""
    if not R > 0:
        raise ContractViolation("R must be positive")
    i = int(rng.integers(state.n))
    if state.responses[i] < 1.0:
        response_update(state, oracle, i, eta)
        if state.norm_sq > R * R:
            rescale_state(state, R / math.sqrt(state.norm_sq))
    return state


def pegasos_step(state: DualState, oracle: KernelOracle, lam: float, eta: float,
                 rng: np.random.Generator) -> DualState:
    """Shrink by (1 - eta lam), then a hinge step on a sampled example."""
    if not lam > 0:
        raise ContractViolation("lambda must be positive")
    if not eta * lam < 1.0:
        raise ContractViolation("eta * lambda must be < 1")
    rescale_state(state, 1.0 - eta * lam)
    i = int(rng.integers(state.n))
    if state.responses[i] < 1.0:
        response_update(state, oracle, i, eta)
    return state


def _sgd_loop(dataset, oracle, config, rng, step, objective, monitor):
    n = dataset.n
    T = n * int(config.epochs)
    state = DualState.zeros(n)
    alpha_sum = np.zeros(n)
    log = MetricLog(["iteration", "kernel_evals", "objective", "support", "norm"])
    for t in range(1, T + 1):
        step(state, t)
        alpha_sum += state.alpha
        if is_checkpoint(t, T):
            a = alpha_sum / t
            rec = dict(iteration=t, kernel_evals=oracle.eval_count,
                       objective=objective(state), support=int(np.count_nonzero(a)),
                       norm=math.sqrt(state.norm_sq))
            if monitor is not None:
                rec.update(monitor(a, None) or {})
            log.append(**rec)
    log.info["last_alpha"] = state.alpha.copy()
    return TrainResult(alpha_sum / T, None, log)


def sgd_norm_train(dataset, oracle, config: BaselineConfig, rng=None, monitor=None):
    """Averaged iterate of projected SGD with eta_t = R sqrt(2/t)."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    R = float(config.R)

    def step(state, t):
        sgd_norm_step(state, oracle, R, R * math.sqrt(2.0 / t), rng)

    return _sgd_loop(dataset, oracle, config, rng, step,
                     lambda s: float(hinge(s.responses).mean()), monitor)


def pegasos_train(dataset, oracle, config: BaselineConfig, rng=None, monitor=None):
    """Averaged Pegasos iterate.  The step at iteration t is 1/(lam (t+1)):
    the textbook 1/(lam t) annihilates w at t=1, where w is zero anyway."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    lam = float(config.lam)

    def step(state, t):
        pegasos_step(state, oracle, lam, 1.0 / (lam * (t + 1)), rng)

    return _sgd_loop(dataset, oracle, config, rng, step,
                     lambda s: float(0.5 * lam * s.norm_sq + hinge(s.responses).mean()),
                     monitor)


# ---------------------------------------------------------------- dual ascent

def _coordinate_delta(alpha_i, c_i, k_ii, C):
    return min(max(alpha_i + (1.0 - c_i) / k_ii, 0.0), C) - alpha_i


def dual_coordinate_step(state: DualState, oracle: KernelOracle, lam: float, i: int) -> DualState:
    """Exact maximization of the dual over alpha_i within [0, 1/(lam n)]."""
    k_ii = oracle.self_kernel(i)
    if not k_ii > 0:
        raise DegenerateError(f"K(x_{i}, x_{i}) = 0")
    C = 1.0 / (lam * state.n)
    delta = _coordinate_delta(state.alpha[i], state.responses[i], k_ii, C)
    if delta != 0.0:
        response_update(state, oracle, i, delta)
        # land exactly on the box
        state.alpha[i] = min(max(state.alpha[i], 0.0), C)
    return state


def coordinate_gains(state: DualState, oracle: KernelOracle, lam: float) -> np.ndarray:
    """Dual increase of the clipped single-coordinate step, for every i."""
    C = 1.0 / (lam * state.n)
    K = oracle.diag()
    c = state.responses
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(K > 0, (1.0 - c) / K, 0.0)
    delta = np.clip(state.alpha + step, 0.0, C) - state.alpha
    return delta * (1.0 - c) - 0.5 * delta * delta * K


def _pair_interval(a_i, y_i, a_j, y_j, C):
    # alpha_i + y_i d in [0, C] and alpha_j - y_j d in [0, C]
    lo_i, hi_i = (-a_i, C - a_i) if y_i > 0 else (a_i - C, a_i)
    lo_j, hi_j = (a_j - C, a_j) if y_j > 0 else (-a_j, C - a_j)
    return max(lo_i, lo_j), min(hi_i, hi_j)


def pair_delta(state: DualState, y, i, j, k_ii, k_jj, k_ij, C):
    """Clipped optimal step for alpha_i += y_i d, alpha_j -= y_j d.

    Along this direction w moves by d (Phi(x_i) - Phi(x_j)), so the dual is
    a (1 - c) terms linear part minus d^2 |Phi_i - Phi_j|^2 / 2, and the
    curvature is K_ii + K_jj - 2 K_ij.
    """
    c = state.responses
    a = y[i] * (1.0 - c[i]) - y[j] * (1.0 - c[j])
    q = k_ii + k_jj - 2.0 * k_ij
    if not q > 0:
        raise DegenerateError(f"pair ({i}, {j}) has zero curvature")
    lo, hi = _pair_interval(state.alpha[i], y[i], state.alpha[j], y[j], C)
    d = a / q
    # snap to the grid of C's ulp: every coefficient then stays an exact
    # multiple of it, the two additions below are exact and sum y_i alpha_i
    # is conserved with no rounding at all
    u = math.ulp(C)
    d = round(d / u) * u
    d = min(max(d, lo), hi)
    return d, a, q


def dual_pair_step_biased(state: DualState, oracle: KernelOracle, lam: float,
                          i: int, j: int) -> DualState:
    """Coordinate ascent on a pair while keeping sum y_i alpha_i fixed."""
    y = oracle.labels
    if i == j:
        raise DegenerateError("pair needs two distinct indices")
    C = 1.0 / (lam * state.n)
    row_i = oracle.row(i)
    d, _, _ = pair_delta(state, y, i, j, row_i[i], oracle.self_kernel(j), row_i[j], C)
    if d == 0.0:
        return state
    new_i = state.alpha[i] + y[i] * d
    new_j = state.alpha[j] - y[j] * d
    response_update(state, oracle, i, new_i - state.alpha[i])
    response_update(state, oracle, j, new_j - state.alpha[j])
    state.alpha[i] = new_i
    state.alpha[j] = new_j
    return state


def select_working_index(state: DualState, oracle: KernelOracle, lam: float,
                         mode: str = "uniform", rng: Optional[np.random.Generator] = None,
                         biased: bool = False):
    """Index (or (i, j) pair when ``biased``) for the next dual step.

    max_gain: argmax of the exact clipped single-coordinate gain, lowest index
    on ties.  For pairs, i is the maximal violator of the first-order
    condition and j the partner with the largest exact clipped pair gain;
    returns None once no pair can improve the dual.
    """
    n = state.n
    if mode not in ("uniform", "max_gain"):
        raise ContractViolation(f"unknown selection mode {mode!r}")
    if not biased:
        if mode == "uniform":
            return int(rng.integers(n))
        return int(np.argmax(coordinate_gains(state, oracle, lam)))

    y = oracle.labels
    if mode == "uniform":
        pos = np.flatnonzero(y > 0)
        neg = np.flatnonzero(y < 0)
        return int(pos[rng.integers(pos.size)]), int(neg[rng.integers(neg.size)])
    C = 1.0 / (lam * n)
    a = state.alpha
    G = y * (1.0 - state.responses)
    up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))      # d > 0 feasible for i
    low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))     # d > 0 feasible for j
    if not up.any() or not low.any():
        return None
    i = int(np.flatnonzero(up)[np.argmax(G[up])])
    cand = np.flatnonzero(low & (G < G[i]))
    cand = cand[cand != i]
    if cand.size == 0:
        return None
    row = oracle.row(i)
    K = oracle.diag()
    gains = np.full(cand.size, -np.inf)
    for m, j in enumerate(cand):
        if not row[i] + K[j] - 2.0 * row[j] > 0:
            continue        # duplicate of x_i, no curvature
        d, av, q = pair_delta(state, y, i, int(j), row[i], K[j], row[j], C)
        gains[m] = av * d - 0.5 * q * d * d
    if gains.max() <= 0.0:
        return None
    return i, int(cand[np.argmax(gains)])


def recover_bias(state: DualState, labels, lam: float, tol: float = 1e-8) -> float:
    """b = y_i - <w, Phi(x_i)> averaged over coefficients strictly inside the
    box; with none inside, the midpoint of the interval allowed by the
    optimality conditions of the bound coefficients."""
    y = np.asarray(labels)
    n = state.n
    C = 1.0 / (lam * n)
    a = state.alpha
    g = y * state.responses                    # <w, Phi(x_i)>
    t = tol * C
    inner = (a > t) & (a < C - t)
    if inner.any():
        return float(np.mean(y[inner] - g[inner]))
    lower = np.concatenate([(1.0 - g)[(a <= t) & (y > 0)], (-1.0 - g)[(a >= C - t) & (y < 0)]])
    upper = np.concatenate([(-1.0 - g)[(a <= t) & (y < 0)], (1.0 - g)[(a >= C - t) & (y > 0)]])
    lo = lower.max() if lower.size else -math.inf
    hi = upper.min() if upper.size else math.inf
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(lo):
        return float(hi)
    if math.isinf(hi):
        return float(lo)
    return float(0.5 * (lo + hi))


def primal_objective(state: DualState, lam: float, bias: Optional[float] = None, labels=None) -> float:
    """1/2 |w|^2 + C sum hinge, the scale on which primal and dual meet."""
    n = state.n
    C = 1.0 / (lam * n)
    c = state.responses
    if bias is not None:
        c = c + np.asarray(labels) * bias
    return float(0.5 * state.norm_sq + C * hinge(c).sum())


def dual_train(dataset, oracle, config: BaselineConfig, rng=None, monitor=None) -> TrainResult:
    """SDCA (uniform selection) or SMO (max-gain selection) for n*epochs steps."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    lam = float(config.lam)
    n = dataset.n
    mode = "uniform" if config.algorithm == "sdca" else "max_gain"
    if config.with_bias and (np.all(dataset.labels > 0) or np.all(dataset.labels < 0)):
        raise ContractViolation("biased dual needs both classes")
    state = DualState.zeros(n)
    T = n * int(config.epochs)
    log = MetricLog(["iteration", "kernel_evals", "objective", "dual", "support", "norm"])
    converged = False
    for t in range(1, T + 1):
        if not converged:
            pick = select_working_index(state, oracle, lam, mode, rng, config.with_bias)
            if pick is None:
                converged = True
            elif config.with_bias:
                try:
                    dual_pair_step_biased(state, oracle, lam, *pick)
                except DegenerateError:
                    pass        # duplicate points: nothing to gain on this pair
            else:
                dual_coordinate_step(state, oracle, lam, pick)
        if is_checkpoint(t, T):
            b = recover_bias(state, dataset.labels, lam) if config.with_bias else None
            rec = dict(iteration=t, kernel_evals=oracle.eval_count,
                       objective=primal_objective(state, lam, b, dataset.labels),
                       dual=dual_objective(state), support=int(np.count_nonzero(state.alpha)),
                       norm=math.sqrt(state.norm_sq))
            if monitor is not None:
                rec.update(monitor(state.alpha.copy(), b) or {})
            log.append(**rec)
    b = recover_bias(state, dataset.labels, lam) if config.with_bias else None
    return TrainResult(state.alpha.copy(), b, log)


# ---------------------------------------------------------------- perceptron

def perceptron_train(dataset: Dataset, oracle: KernelOracle, seed=0, shuffle: bool = True,
                     passes: int = 1, rng=None, monitor=None) -> TrainResult:
    """Kernel Perceptron.  Adds y_i Phi(x_i) on every mistake
    (y_i <w, Phi(x_i)> <= 0).

    ``log.info`` holds the mistake count and, for online-to-batch use, the
    index tau of a uniformly drawn iterate w_tau among w_1..w_N together
    with its coefficients (w_1 = 0).  More than one pass voids the
    single-pass guarantee.
    """
    n = dataset.n
    rng = np.random.default_rng(seed) if rng is None else rng
    log = MetricLog(["iteration", "kernel_evals", "mistakes", "support"])
    state = DualState.zeros(n)
    if n == 0:
        log.info.update(mistakes=0, sampled_iterate=0, sampled_alpha=np.zeros(0))
        return TrainResult(state.alpha, None, log)
    order = np.concatenate([rng.permutation(n) if shuffle else np.arange(n)
                            for _ in range(int(passes))])
    N = order.size
    tau = int(rng.integers(1, N + 1))
    sampled = state.alpha.copy()
    mistakes = 0
    for t, i in enumerate(order, start=1):
        if t == tau:
            sampled = state.alpha.copy()
        if state.responses[i] <= 0.0:
            response_update(state, oracle, int(i), 1.0)
            mistakes += 1
        if is_checkpoint(t, N):
            rec = dict(iteration=t, kernel_evals=oracle.eval_count, mistakes=mistakes,
                       support=int(np.count_nonzero(state.alpha)))
            if monitor is not None:
                rec.update(monitor(state.alpha.copy(), None) or {})
            log.append(**rec)
    log.info.update(mistakes=mistakes, sampled_iterate=tau, sampled_alpha=sampled)
    return TrainResult(state.alpha, None, log)


# ---------------------------------------------------------------- random features

def rff_directions(D: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((int(D), int(d)))


def _as_dense(x, d):
    if isinstance(x, tuple):
        idx, val = x
        v = np.zeros(d)
        v[np.asarray(idx, dtype=np.int64) - 1] = val
        return v
    return np.asarray(x, dtype=np.float64).reshape(-1)


def rff_map(x, directions: np.ndarray, bandwidth: float, convention: str = "sigma2") -> np.ndarray:
    """[cos(<v_1,x>/s), sin(<v_1,x>/s), ...] / sqrt(D) with s the Gaussian
    width, so inner products approximate the Gaussian kernel.

    ``x`` is a dense vector or a (1-based indices, values) pair.
    """
    spec = KernelSpec("gaussian", bandwidth, convention)
    D, d = directions.shape
    z = directions @ _as_dense(x, d) / spec.sigma
    out = np.empty(2 * D)
    out[0::2] = np.cos(z)
    out[1::2] = np.sin(z)
    return out / math.sqrt(D)


def rff_transform(dataset: Dataset, directions: np.ndarray, spec: KernelSpec) -> np.ndarray:
    D, d = directions.shape
    X = dataset.X
    if X.shape[1] > d:
        X = X[:, :d]
    Z = np.asarray(X @ directions[:, : X.shape[1]].T) / spec.sigma
    out = np.empty((dataset.n, 2 * D))
    out[:, 0::2] = np.cos(Z)
    out[:, 1::2] = np.sin(Z)
    return out / math.sqrt(D)


@dataclass
class RffModel:
    directions: np.ndarray
    kernel: KernelSpec
    w: np.ndarray

    def decision_function(self, X: Dataset) -> np.ndarray:
        return rff_transform(X, self.directions, self.kernel) @ self.w


def rff_train(dataset: Dataset, spec: KernelSpec, config: BaselineConfig, rng=None,
              monitor=None):
    """Linear dual coordinate ascent on explicit random features.

    Returns (RffModel, MetricLog); ``kernel_evals`` stays 0 since no kernel
    is ever evaluated, ``feature_evals`` counts feature-map inner products.
    """
    if spec.kind != "gaussian":
        raise ContractViolation("random Fourier features need the gaussian kernel")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    n = dataset.n
    V = rff_directions(config.D, dataset.d, rng)
    F = rff_transform(dataset, V, spec)
    y = dataset.labels
    lam = float(config.lam)
    C = 1.0 / (lam * n)
    alpha = np.zeros(n)
    w = np.zeros(F.shape[1])
    sq = np.einsum("ij,ij->i", F, F)
    T = n * int(config.epochs)
    log = MetricLog(["iteration", "kernel_evals", "feature_evals", "objective", "dual"])
    model = RffModel(V, spec, w)
    for t in range(1, T + 1):
        i = int(rng.integers(n))
        c_i = y[i] * (F[i] @ w)
        d = min(max(alpha[i] + (1.0 - c_i) / sq[i], 0.0), C) - alpha[i]
        if d != 0.0:
            alpha[i] += d
            w += d * y[i] * F[i]
        if is_checkpoint(t, T):
            c = y * (F @ w)
            rec = dict(iteration=t, kernel_evals=0, feature_evals=t,
                       objective=float(0.5 * w @ w + C * hinge(c).sum()),
                       dual=float(alpha.sum() - 0.5 * w @ w))
            if monitor is not None:
                rec.update(monitor(model) or {})
            log.append(**rec)
    return model, log


def baseline_train(dataset, oracle, config: BaselineConfig, rng=None, monitor=None):
    if config.algorithm == "sgd_norm":
        return sgd_norm_train(dataset, oracle, config, rng, monitor)
    if config.algorithm == "pegasos":
        return pegasos_train(dataset, oracle, config, rng, monitor)
    if config.algorithm in ("sdca", "smo"):
        return dual_train(dataset, oracle, config, rng, monitor)
    if config.algorithm == "perceptron":
        return perceptron_train(dataset, oracle, config.seed, passes=config.passes,
                                rng=rng, monitor=monitor)
    raise ContractViolation("use rff_train for random features")
