"""Sparse kernel classifiers: coefficients on a subset of training points."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, KernelOracle, KernelSpec


@dataclass
class SparseClassifier:
    """g(x) = sum_{s} alpha_s y_s K(x_s, x) + bias over support indices s
    of the training set it was fit on."""
    kernel: KernelSpec
    support: np.ndarray          # int indices into the training set
    alpha: np.ndarray            # coefficients, same length as support
    n_train: int
    bias: Optional[float] = None

    @classmethod
    def from_dense(cls, alpha, kernel: KernelSpec, bias=None) -> "SparseClassifier":
        alpha = np.asarray(alpha, dtype=np.float64)
        s = np.flatnonzero(alpha)
        return cls(kernel, s.astype(np.int64), alpha[s].copy(), int(alpha.size), bias)

    def dense_alpha(self) -> np.ndarray:
        a = np.zeros(self.n_train)
        a[self.support] = self.alpha
        return a

    @property
    def support_size(self) -> int:
        return int(self.support.size)

    def __eq__(self, other):
        if not isinstance(other, SparseClassifier):
            return NotImplemented
        return (self.kernel == other.kernel and self.n_train == other.n_train
                and self.bias == other.bias
                and np.array_equal(self.support, other.support)
                and np.array_equal(self.alpha, other.alpha))


def decision_function(alpha, train: Dataset, spec: KernelSpec, X: Dataset,
                      bias: Optional[float] = None, oracle: Optional[KernelOracle] = None):
    """Scores g(x) for every example of X."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if oracle is None:
        oracle = KernelOracle(train, spec, warn_unbounded=False)
    s = np.flatnonzero(alpha)
    if s.size == 0:
        g = np.zeros(X.n)
    else:
        g = oracle.cross(X, s) @ (alpha[s] * train.labels[s])
    if bias is not None:
        g = g + bias
    return g


def error_rate(scores, labels) -> float:
    """Fraction of examples with y g(x) <= 0."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(labels * np.asarray(scores) <= 0))
