"""Streaming PCA solvers over ``EigState``: stochastic power method,
incremental, Warmuth-Kuzmin, MSG and capped MSG, plus the batch (SAA)
solution and objective evaluation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import ContractViolation
from .metrics import MetricLog, is_checkpoint
from .spectral import (EigState, bottom_directions, drop_near, fix_signs, orthonormalize,
                       project_capped, project_relative_entropy, project_trace_simplex,
                       rank1_update, top_directions, truncate_top)

ALGORITHMS = ("power", "incremental", "warmuth", "msg", "capped_msg", "saa")
SAA_MAX_D = 4096
LOG_FLOOR = 1e-300


@dataclass
class PcaConfig:
    algorithm: str = "msg"
    k: int = 1
    K: Optional[int] = None
    T: int = 1000
    step_scale: float = 1.0
    fixed_eta: Optional[float] = None     # overrides c / sqrt(t)
    seed: int = 0
    renorm_every: int = 1                 # power method

    def validate(self, d: int):
        if self.algorithm not in ALGORITHMS:
            raise ContractViolation(f"unknown algorithm {self.algorithm!r}")
        if not (1 <= self.k < d):
            raise ContractViolation(f"need 1 <= k < d, got k={self.k}, d={d}")
        if self.algorithm == "capped_msg":
            K = self.k + 1 if self.K is None else self.K
            if not (self.k <= K <= d):
                raise ContractViolation("capped_msg needs k <= K <= d")
        if int(self.T) < 1:
            raise ContractViolation("T must be >= 1")

    def eta(self, t: int) -> float:
        if self.fixed_eta is not None:
            return float(self.fixed_eta)
        return self.step_scale / math.sqrt(t)


# ---------------------------------------------------------------- single steps

def power_step(state: EigState, x, eta: float, renormalize: bool = True) -> EigState:
    """U <- U + eta x (x^T U).  Renormalization only rotates within the span,
    so it may be deferred; ``renormalize=False`` leaves U as is."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    U = state.basis + eta * np.outer(x, x @ state.basis)
    if renormalize:
        U = orthonormalize(U)
    return EigState(U, state.eigvals, 0.0, state.d)


def incremental_step(state: EigState, x, k: int) -> EigState:
    """Rank-k truncation of (unnormalized second moment) + x x^T."""
    return truncate_top(rank1_update(state, 1.0, x), k)


def _split(values, k_explicit):
    return values[:k_explicit], (values[k_explicit] if values.size > k_explicit else None)


def msg_step(state: EigState, x, eta: float, k: int) -> EigState:
    """Gradient step M + eta x x^T, then Frobenius projection onto
    {0 <= M <= I, tr M = k}, the complement counted with its multiplicity."""
    s = rank1_update(state, eta, x)
    mult = s.complement_multiplicity
    vals = s.eigvals if mult == 0 else np.append(s.eigvals, s.complement_value)
    m = np.ones(vals.size)
    if mult:
        m[-1] = mult
    p = project_trace_simplex(vals, k, m)
    sig, comp = _split(p.eigvals, s.rank)
    out = EigState(s.basis, sig, 0.0 if comp is None else comp, s.d)
    return drop_near(out)


def capped_msg_step(state: EigState, x, eta: float, k: int, K: int) -> EigState:
    """MSG step restricted to rank <= K; the (K+1)-th direction created by
    the update is removed by the subset projection."""
    if state.complement_value != 0.0:
        raise ContractViolation("capped MSG states have a zero complement")
    if state.rank > K:
        raise ContractViolation("state rank exceeds K")
    s = rank1_update(state, eta, x)
    p = project_capped(s.eigvals, k, K)
    out = EigState(s.basis[:, p.kept], p.eigvals, 0.0, s.d)
    return drop_near(out)


def warmuth_step(state: EigState, x, eta: float, k: int) -> EigState:
    """W <- RE-projection of exp(ln W - eta x x^T).

    ln W shares W's eigenvectors, so the update is a rank-1 update of the
    log-spectrum (complement log value ln c, step -eta), exponentiated and
    then scaled and capped.  Complement directions untouched by x keep
    value c before the projection and min(cap, c/Z) after it.
    """
    if not eta > 0:
        raise ContractViolation("eta must be positive")
    d = state.d
    logs = EigState(state.basis, np.log(np.maximum(state.eigvals, LOG_FLOOR)),
                    math.log(max(state.complement_value, LOG_FLOOR)), d)
    s = rank1_update(logs, -eta, x)
    vals = np.exp(s.eigvals)
    comp = state.complement_value
    mult = d - s.rank
    if mult:
        p = project_relative_entropy(np.append(vals, comp), d, k,
                                     np.append(np.ones(vals.size), mult))
        sig, newc = p.eigvals[:-1], p.eigvals[-1]
    else:
        p = project_relative_entropy(vals, d, k)
        sig, newc = p.eigvals, min(1.0 / (d - k), comp / p.Z)
    out = EigState(s.basis, sig, newc, d)
    return drop_near(out)


# ---------------------------------------------------------------- initial states

def initial_state(config: PcaConfig, d: int, rng: np.random.Generator) -> EigState:
    alg, k = config.algorithm, config.k
    if alg == "msg":
        return EigState.empty(d, k / d)
    if alg == "warmuth":
        return EigState.empty(d, 1.0 / d)
    if alg == "incremental":
        return EigState.empty(d, 0.0)
    if alg == "power":
        U = orthonormalize(rng.standard_normal((d, k)))
        return EigState(U, np.ones(k), 0.0, d)
    if alg == "capped_msg":
        K = k + 1 if config.K is None else config.K
        U = orthonormalize(rng.standard_normal((d, K)))
        return EigState(U, np.full(K, k / K), 0.0, d)
    raise ContractViolation(f"no streaming state for {alg!r}")


# ---------------------------------------------------------------- SAA and evaluation

def saa_solve(samples, k: int) -> EigState:
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ContractViolation("samples must be an (n, d) array")
    n, d = X.shape
    if d > SAA_MAX_D:
        raise ContractViolation(
            f"d={d} is too large to densify (limit {SAA_MAX_D}); use a streaming solver")
    C = X.T @ X / max(n, 1)
    w, V = np.linalg.eigh(C)
    order = np.argsort(-w, kind="stable")[:k]
    return EigState(fix_signs(V[:, order]), w[order], 0.0, d)


class Objective(NamedTuple):
    captured: float
    suboptimality: Optional[float]


def subspace(state: EigState, k: int, kind: str = "M") -> np.ndarray:
    """Orthonormal d x k basis of the reported rank-k subspace.

    M-states report their top k directions; W-states report the k
    directions left out of their largest d-k eigenvalues.
    """
    if kind == "W":
        return bottom_directions(state, k)
    if kind == "power":
        return orthonormalize(state.basis)
    return top_directions(state, k)


def evaluate_objective(state: EigState, k: int, covariance=None, samples=None,
                       kind: str = "M") -> Objective:
    """Variance captured by the reported subspace, and the gap to the best
    rank-k subspace when the covariance is known."""
    U = subspace(state, k, kind)
    if covariance is not None:
        S = np.asarray(covariance, dtype=np.float64)
        cap = float(np.trace(U.T @ S @ U))
        opt = float(np.sort(np.linalg.eigvalsh(S))[::-1][:k].sum())
        return Objective(cap, opt - cap)
    if samples is None:
        raise ContractViolation("need a covariance or evaluation samples")
    X = np.asarray(samples, dtype=np.float64)
    return Objective(float(np.mean(np.sum((X @ U) ** 2, axis=1))), None)


def relaxed_suboptimality(M: np.ndarray, covariance: np.ndarray, k: int) -> float:
    """tr(Sigma (M* - M)) for a dense feasible M."""
    opt = float(np.sort(np.linalg.eigvalsh(covariance))[::-1][:k].sum())
    return opt - float(np.sum(covariance * M))


def converged_rank_k(history, k: int, tol: float = 1e-3) -> bool:
    """True when the last states in ``history`` (a window of EigStates)
    all have explicit rank k and their spectra drift less than tol."""
    if not history:
        return False
    if any(s.rank != k for s in history):
        return False
    spectra = np.array([np.sort(s.eigvals) for s in history])
    return bool(np.abs(np.diff(spectra, axis=0)).max(initial=0.0) < tol)


# ---------------------------------------------------------------- training loop

class PcaResult(NamedTuple):
    state: EigState
    log: MetricLog
    average: Optional[np.ndarray]


def pca_train(config: PcaConfig, stream: Callable[[int], np.ndarray], d: int,
              rng: Optional[np.random.Generator] = None, covariance=None,
              keep_average: bool = False) -> PcaResult:
    """Run T streaming steps.  ``stream(t)`` returns the t-th sample.

    Checkpoints log the runtime proxy sum_t k'_t^2, the current explicit
    rank and, with a known covariance, the suboptimality of the reported
    subspace.  ``keep_average`` maintains the dense running average of the
    iterates (MSG-type states only).
    """
    config.validate(d)
    if config.algorithm == "saa":
        raise ContractViolation("use saa_solve for the batch solution")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    k = config.k
    K = k + 1 if config.K is None else config.K
    state = initial_state(config, d, rng)
    kind = {"warmuth": "W", "power": "power"}.get(config.algorithm, "M")
    cols = ["iteration", "runtime_proxy", "rank", "objective", "suboptimality"]
    log = MetricLog(cols)
    avg = np.zeros((d, d)) if keep_average else None
    proxy = 0
    T = int(config.T)
    for t in range(1, T + 1):
        x = stream(t)
        eta = config.eta(t)
        alg = config.algorithm
        if alg == "power":
            state = power_step(state, x, eta,
                               renormalize=(t % max(1, config.renorm_every) == 0 or t == T))
        elif alg == "incremental":
            state = incremental_step(state, x, k)
        elif alg == "msg":
            state = msg_step(state, x, eta, k)
        elif alg == "capped_msg":
            state = capped_msg_step(state, x, eta, k, K)
        elif alg == "warmuth":
            state = warmuth_step(state, x, eta, k)
        proxy += state.rank ** 2
        if avg is not None:
            avg += (state.dense() - avg) / t
        if is_checkpoint(t, T):
            rec = dict(iteration=t, runtime_proxy=proxy, rank=state.rank)
            if covariance is not None:
                obj = evaluate_objective(state, k, covariance=covariance, kind=kind)
                rec.update(objective=obj.captured, suboptimality=obj.suboptimality)
            log.append(**rec)
    return PcaResult(state, log, avg)
