"""Stochastic Batch Perceptron.

The slack-constrained objective

    max_{|w| <= 1} max_{xi >= 0, sum xi <= n nu} min_i (c_i + xi_i)

has as inner value the "water level": pour a volume n*nu of water over a
basin whose floor heights are the responses c_i; the surface settles at
gamma.  Every index under water is a valid supergradient direction, so one
SBP iteration samples one of them and takes a step along y_i Phi(x_i).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .data import Dataset, DualState, KernelOracle, rescale_state, response_update
from .errors import ContractViolation, DegenerateError
from .metrics import MetricLog, is_checkpoint


class WaterLevel(NamedTuple):
    gamma: float
    bias: Optional[float] = None


@dataclass
class SbpConfig:
    nu: float = 0.0
    T: int = 1000
    eta0: Optional[float] = None
    with_bias: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.nu >= 0:
            raise ContractViolation("nu must be >= 0")
        if int(self.T) < 1:
            raise ContractViolation("T must be >= 1")
        if self.eta0 is not None and not self.eta0 > 0:
            raise ContractViolation("eta0 must be positive")


class SbpResult(NamedTuple):
    alpha: np.ndarray
    gamma: float
    bias: Optional[float]
    log: MetricLog


def find_gamma(responses, volume: float) -> WaterLevel:
    """Water level gamma with sum_i max(0, gamma - c_i) = volume.

    Sort once, then the first m sorted responses are submerged for the
    largest m whose fill requirement m c_(m) - S_m stays within the volume.
    """
    c = np.asarray(responses, dtype=np.float64).reshape(-1)
    if c.size == 0:
        raise ContractViolation("find_gamma needs at least one response")
    if not volume >= 0:
        raise ContractViolation("volume must be >= 0")
    if not np.all(np.isfinite(c)):
        raise ContractViolation("responses must be finite")
    if volume == 0:
        return WaterLevel(float(c.min()))
    s = np.sort(c)
    csum = np.cumsum(s)
    m_arr = np.arange(1, s.size + 1)
    need = m_arr * s - csum          # volume needed to reach level s_(m)
    m = int(np.searchsorted(need, volume, side="right"))
    m = max(m, 1)
    return WaterLevel(float((volume + csum[m - 1]) / m))


def find_gamma_and_bias(labels, responses, volume: float) -> WaterLevel:
    """Water level and bias for the two-basin problem.

    Heights are c_i + y_i b.  At the optimum both basins have the same
    number m of submerged indices, and then the volume identity reads
    2 m gamma - S+_m - S-_m = V, S_m being the sum of the m lowest
    responses of a class.  The optimal level is the smallest of these
    candidate levels over m; b is the midpoint of the interval of biases
    that keeps exactly m indices of each class below gamma.
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    c = np.asarray(responses, dtype=np.float64).reshape(-1)
    if y.shape != c.shape:
        raise ContractViolation("labels and responses differ in length")
    if not volume >= 0:
        raise ContractViolation("volume must be >= 0")
    cp = np.sort(c[y > 0])
    cn = np.sort(c[y < 0])
    if cp.size == 0 or cn.size == 0:
        raise ContractViolation("both classes must be present")
    M = min(cp.size, cn.size)
    sp_ = np.cumsum(cp)[:M]
    sn_ = np.cumsum(cn)[:M]
    m_arr = np.arange(1, M + 1)
    levels = (volume + sp_ + sn_) / (2.0 * m_arr)
    gamma = float(levels.min())
    tol = 1e-12 * max(1.0, abs(gamma))
    lo, hi = math.inf, -math.inf
    for m in np.flatnonzero(levels <= gamma + tol) + 1:
        cp_next = cp[m] if m < cp.size else math.inf
        cn_next = cn[m] if m < cn.size else math.inf
        a = max(cn[m - 1] - gamma, gamma - cp_next)
        b = min(gamma - cp[m - 1], cn_next - gamma)
        lo = min(lo, a)
        hi = max(hi, b)
    if lo > hi:
        # only reachable through rounding; both ends are then the same point
        lo = hi = 0.5 * (lo + hi)
    return WaterLevel(gamma, float(0.5 * (lo + hi)))


def _covered(h, gamma, idx=None):
    if idx is None:
        idx = np.arange(h.size)
    hs = h[idx]
    below = idx[hs < gamma]
    if below.size:
        return below
    tol = 1e-12 * max(1.0, abs(gamma))
    tied = idx[hs <= gamma + tol]
    if tied.size:
        return tied
    return idx[hs == hs.min()]


def sample_support_index(responses, gamma, rng: np.random.Generator,
                         labels=None, bias=None) -> int:
    """Uniform draw from {j : c_j < gamma}, or from the indices at the level
    when nothing is strictly below.

    With ``labels`` and ``bias`` the heights are c_j + y_j b and a class is
    picked first with probability 1/2, then an index uniformly within it.
    """
    c = np.asarray(responses, dtype=np.float64)
    if labels is None:
        pool = _covered(c, gamma)
        return int(pool[rng.integers(pool.size)])
    y = np.asarray(labels)
    h = c + y * (0.0 if bias is None else bias)
    cls = 1.0 if rng.integers(2) == 0 else -1.0
    pool = _covered(h, gamma, np.flatnonzero(y == cls))
    return int(pool[rng.integers(pool.size)])


def _level(c, y, volume, with_bias):
    if with_bias:
        return find_gamma_and_bias(y, c, volume)
    return find_gamma(c, volume)


def sbp_train(dataset: Dataset, oracle: KernelOracle, config: SbpConfig,
              rng: Optional[np.random.Generator] = None,
              monitor: Optional[Callable] = None) -> SbpResult:
    """Run T SBP iterations and return the averaged, level-normalized
    coefficients.

    ``monitor(alpha, bias)`` is called at checkpoints with the current
    normalized averaged classifier and may return extra metrics to log.
    """
    n = dataset.n
    if n == 0:
        raise ContractViolation("empty dataset")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    y = dataset.labels
    T = int(config.T)
    volume = n * config.nu
    eta0 = config.eta0
    if eta0 is None:
        eta0 = 1.0 / math.sqrt(float(oracle.diag().max()))
    state = DualState.zeros(n)
    alpha_sum = np.zeros(n)
    c_sum = np.zeros(n)
    max_norm = 0.0
    log = MetricLog(["iteration", "kernel_evals", "objective", "support", "norm"])

    for t in range(1, T + 1):
        eta = eta0 / math.sqrt(t)
        level = _level(state.responses, y, volume, config.with_bias)
        i = sample_support_index(state.responses, level.gamma, rng,
                                 y if config.with_bias else None, level.bias)
        response_update(state, oracle, i, eta)
        if state.norm_sq > 1.0:
            rescale_state(state, 1.0 / math.sqrt(state.norm_sq))
        max_norm = max(max_norm, math.sqrt(state.norm_sq))
        alpha_sum += state.alpha
        c_sum += state.responses

        if is_checkpoint(t, T):
            avg = _level(c_sum / t, y, volume, config.with_bias)
            a = alpha_sum / t
            rec = dict(iteration=t, kernel_evals=oracle.eval_count, objective=avg.gamma,
                       support=int(np.count_nonzero(a)), norm=math.sqrt(state.norm_sq))
            if monitor is not None:
                if avg.gamma > 0:
                    extra = monitor(a / avg.gamma, None if avg.bias is None else avg.bias / avg.gamma)
                else:
                    extra = monitor(a, avg.bias)
                rec.update(extra or {})
            log.append(**rec)

    alpha_bar = alpha_sum / T
    final = _level(c_sum / T, y, volume, config.with_bias)
    log.info["max_norm"] = max_norm
    if not final.gamma > 0:
        raise DegenerateError(
            f"final water level {final.gamma:.3g} <= 0; nu may be too large for this data")
    bias = None if final.bias is None else final.bias / final.gamma
    return SbpResult(alpha_bar / final.gamma, final.gamma, bias, log)
