"""Synthetic streams for the PCA experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

FAMILIES = ("gaussian_sigma_k", "orthogonal_sigma_k", "two_point_failure")


def sigma_k(d: int, k: int) -> np.ndarray:
    """Average of a geometric (1.1^-i) spectrum and a flat top-k spectrum,
    each normalized to sum one."""
    i = np.arange(1, d + 1)
    smooth = 1.1 ** (-i)
    smooth /= smooth.sum()
    step = (i <= k) / k
    s = 0.5 * (smooth + step)
    return s / s.sum()


@dataclass(frozen=True)
class SyntheticSpec:
    family: str = "gaussian_sigma_k"
    d: int = 32
    k_param: int = 4

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractViolation(f"unknown synthetic family {self.family!r}")
        if self.family == "two_point_failure":
            if self.d != 2:
                object.__setattr__(self, "d", 2)
            return
        if self.d < 2:
            raise ContractViolation("d must be >= 2")
        if not (1 <= self.k_param < self.d):
            raise ContractViolation("need 1 <= k_param < d")

    @property
    def probabilities(self) -> np.ndarray:
        """Atom probabilities for the discrete families."""
        if self.family == "orthogonal_sigma_k":
            p = np.sqrt(sigma_k(self.d, self.k_param))
            return p / p.sum()
        if self.family == "two_point_failure":
            return np.array([1.0 / 3.0, 2.0 / 3.0])
        raise ContractViolation("gaussian family has no atoms")

    def covariance(self) -> np.ndarray:
        """Second-moment matrix of the stream actually generated."""
        if self.family == "gaussian_sigma_k":
            return np.diag(sigma_k(self.d, self.k_param))
        if self.family == "orthogonal_sigma_k":
            return np.diag(self.probabilities)
        return np.diag([3.0 * (1.0 / 3.0), 2.0 * (2.0 / 3.0)])


def sample_batch(spec: SyntheticSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """n samples as rows of an (n, d) array."""
    if spec.family == "gaussian_sigma_k":
        s = np.sqrt(sigma_k(spec.d, spec.k_param))
        return rng.standard_normal((n, spec.d)) * s
    if spec.family == "orthogonal_sigma_k":
        idx = rng.choice(spec.d, size=n, p=spec.probabilities)
        return np.eye(spec.d)[idx]
    first = rng.random(n) < 1.0 / 3.0
    out = np.zeros((n, 2))
    out[first, 0] = math.sqrt(3.0)
    out[~first, 1] = math.sqrt(2.0)
    return out


def sample_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    return sample_batch(spec, rng, 1)[0]


def separable_svm_data(n: int, d: int, rng: np.random.Generator, margin: float = 0.25):
    """Points in the unit ball labeled by a random hyperplane through the
    origin, keeping only those at distance >= margin from it."""
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    X = []
    while len(X) < n:
        x = rng.standard_normal(d)
        x *= rng.random() ** (1.0 / d) / np.linalg.norm(x)
        if abs(x @ u) >= margin:
            X.append(x)
    X = np.array(X)
    y = np.where(X @ u > 0, 1.0, -1.0)
    return X, y


def noisy_svm_data(n: int, d: int, rng: np.random.Generator, flip: float = 0.1):
    """Two overlapping Gaussian blobs scaled into the unit ball, with a
    fraction of labels flipped."""
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    X = rng.standard_normal((n, d)) * 0.3
    X[:, 0] += 0.4 * y
    X /= np.maximum(1.0, np.linalg.norm(X, axis=1))[:, None]
    flipmask = rng.random(n) < flip
    y[flipmask] *= -1
    return X, y
