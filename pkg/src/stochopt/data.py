"""Labeled sparse data, counted kernel evaluation and the shared response
bookkeeping used by every kernel solver.

A kernel solver keeps w = sum_i alpha_i y_i Phi(x_i) implicitly.  Alongside
alpha it maintains the responses c_i = y_i <w, Phi(x_i)> and the squared norm
of w, so a change to one coefficient costs one kernel row (n evaluations).
"""
from __future__ import annotations

import io
import math
import threading
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, LabelError, ParseError

__all__ = [
    "Dataset",
    "KernelSpec",
    "KernelOracle",
    "DualState",
    "parse_libsvm",
    "write_libsvm",
    "load_libsvm",
    "kernel_eval",
    "response_update",
    "rescale_state",
]


class Dataset:
    """n labeled sparse examples.

    Feature indices are 1-based in the public interface (``example``) and
    0-based inside the CSR matrix ``X``.
    """

    def __init__(self, X: sp.csr_matrix, labels, d: Optional[int] = None):
        X = sp.csr_matrix(X, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        if X.shape[0] != labels.shape[0]:
            raise ContractViolation(
                f"{X.shape[0]} examples but {labels.shape[0]} labels")
        if labels.size and not np.all(np.abs(labels) == 1.0):
            raise LabelError("labels must be +1 or -1")
        if d is None:
            d = X.shape[1]
        if d < X.shape[1]:
            raise ContractViolation("d smaller than the feature dimension")
        if d > X.shape[1]:
            X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(X.shape[0], d))
        if not X.has_sorted_indices:
            X.sort_indices()
        self.X = X
        self.labels = labels
        self.d = int(d)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def __len__(self):
        return self.n

    @classmethod
    def from_dense(cls, X, labels) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        return cls(sp.csr_matrix(X), labels)

    @classmethod
    def from_examples(cls, examples: Sequence, labels, d: Optional[int] = None) -> "Dataset":
        """``examples`` is a list of (indices, values) with 1-based indices."""
        indptr = [0]
        indices: list = []
        data: list = []
        dmax = 0
        for line, (idx, val) in enumerate(examples, start=1):
            idx = [int(j) for j in idx]
            if len(idx) != len(val):
                raise ContractViolation(f"example {line}: index/value length mismatch")
            for a, b in zip(idx, idx[1:]):
                if b <= a:
                    raise ContractViolation(f"example {line}: indices not strictly increasing")
            if idx and idx[0] < 1:
                raise ContractViolation(f"example {line}: feature indices are 1-based")
            indices.extend(j - 1 for j in idx)
            data.extend(float(v) for v in val)
            indptr.append(len(indices))
            if idx:
                dmax = max(dmax, idx[-1])
        if d is None:
            d = dmax
        X = sp.csr_matrix(
            (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64),
             np.array(indptr, dtype=np.int64)),
            shape=(len(indptr) - 1, d))
        return cls(X, labels, d)

    def example(self, i: int):
        """(1-based indices, values) of example i."""
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        return self.X.indices[lo:hi] + 1, self.X.data[lo:hi].copy()

    @property
    def examples(self):
        return [self.example(i) for i in range(self.n)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.labels[idx], self.d)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.n != other.n or self.d != other.d:
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        a, b = self.X, other.X
        return (np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
                and np.array_equal(a.data, b.data))

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d}, nnz={self.X.nnz})"


# ---------------------------------------------------------------- LIBSVM io

def parse_libsvm(text) -> Dataset:
    """Parse LIBSVM text (bytes, str or a binary/text stream)."""
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    labels = []
    examples = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            lab = float(tokens[0])
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", line=lineno) from None
        if lab not in (1.0, -1.0):
            raise LabelError(f"label {tokens[0]!r} is not +1/-1", line=lineno)
        idx = []
        val = []
        for tok in tokens[1:]:
            key, sep, v = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:val, got {tok!r}", line=lineno)
            try:
                j = int(key)
                x = float(v)
            except ValueError:
                raise ParseError(f"bad feature {tok!r}", line=lineno) from None
            if j < 1:
                raise ParseError(f"feature index {j} < 1", line=lineno)
            if idx and j <= idx[-1]:
                raise ParseError("feature indices not strictly increasing", line=lineno)
            idx.append(j)
            val.append(x)
        labels.append(lab)
        examples.append((idx, val))
    return Dataset.from_examples(examples, labels)


def load_libsvm(path) -> Dataset:
    with open(path, "rb") as fh:
        return parse_libsvm(fh.read())


def write_libsvm(ds: Dataset) -> bytes:
    """Canonical LIBSVM text; floats use repr so parsing round-trips exactly."""
    out = []
    for i in range(ds.n):
        idx, val = ds.example(i)
        parts = ["+1" if ds.labels[i] > 0 else "-1"]
        parts.extend(f"{j}:{float(v)!r}" for j, v in zip(idx, val))
        out.append(" ".join(parts))
    return ("\n".join(out) + ("\n" if out else "")).encode("utf-8")


# ---------------------------------------------------------------- kernels

@dataclass(frozen=True)
class KernelSpec:
    """kind: "linear" or "gaussian".

    For the Gaussian kernel ``convention`` picks how ``bandwidth`` is read:
      "sigma2": K = exp(-|x-x'|^2 / (2 bandwidth))     (default)
      "gamma":  K = exp(-bandwidth |x-x'|^2)
    """
    kind: str = "gaussian"
    bandwidth: float = 1.0
    convention: str = "sigma2"

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise ContractViolation(f"unknown kernel kind {self.kind!r}")
        if self.convention not in ("sigma2", "gamma"):
            raise ContractViolation(f"unknown bandwidth convention {self.convention!r}")
        if self.kind == "gaussian" and not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ContractViolation("gaussian bandwidth must be positive")

    @property
    def scale(self) -> float:
        """Multiplier of the squared distance inside the exponential."""
        if self.convention == "gamma":
            return float(self.bandwidth)
        return 1.0 / (2.0 * float(self.bandwidth))

    @property
    def sigma(self) -> float:
        """Gaussian width sigma with K = exp(-|x-x'|^2 / (2 sigma^2))."""
        return math.sqrt(0.5 / self.scale)


class KernelOracle:
    """Kernel evaluations over one dataset, with a thread-safe counter.

    Squared norms are precomputed once, so the self-similarities K(x_i, x_i)
    (``diag``) are free.  Every other kernel value adds one to ``eval_count``;
    rows served from the optional cache add nothing.
    """

    def __init__(self, dataset: Dataset, spec: KernelSpec, cache_rows: bool = False,
                 warn_unbounded: bool = True):
        self.dataset = dataset
        self.spec = spec
        self.cache_rows = cache_rows
        self._cache: dict = {}
        self._count = 0
        self._lock = threading.Lock()
        X = dataset.X
        self._sqnorm = np.asarray(X.multiply(X).sum(axis=1)).reshape(-1)
        if spec.kind == "linear":
            self._diag = self._sqnorm.copy()
        else:
            self._diag = np.ones(dataset.n)
        if warn_unbounded and dataset.n and self._diag.max() > 1.0 + 1e-12:
            warnings.warn(
                f"max K(x,x) = {self._diag.max():.4g} exceeds 1; "
                "solver guarantees assume K(x,x) <= 1", RuntimeWarning, stacklevel=2)

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def labels(self) -> np.ndarray:
        return self.dataset.labels

    @property
    def eval_count(self) -> int:
        return self._count

    def _add(self, m: int):
        with self._lock:
            self._count += int(m)

    def _check(self, i):
        if not (0 <= i < self.n):
            raise IndexError(f"example index {i} out of range [0, {self.n})")

    def diag(self) -> np.ndarray:
        return self._diag

    def self_kernel(self, i: int) -> float:
        self._check(i)
        return float(self._diag[i])

    def _dense_row_vector(self, i):
        X = self.dataset.X
        v = np.zeros(self.dataset.d)
        lo, hi = X.indptr[i], X.indptr[i + 1]
        v[X.indices[lo:hi]] = X.data[lo:hi]
        return v

    def _values(self, i, rows: sp.csr_matrix, sqn: np.ndarray, same: Optional[np.ndarray]):
        # one CSR mat-vec per call, so a single entry and a full row share the
        # exact same summation order
        dots = rows @ self._dense_row_vector(i)
        if self.spec.kind == "linear":
            return dots
        d2 = self._sqnorm[i] + sqn - 2.0 * dots
        np.maximum(d2, 0.0, out=d2)
        if same is not None:
            d2[same] = 0.0
        return np.exp(-self.spec.scale * d2)

    def row(self, i: int) -> np.ndarray:
        """K(x_i, x_j) for all j.  Costs n evaluations unless cached."""
        self._check(i)
        if self.cache_rows and i in self._cache:
            return self._cache[i]
        X = self.dataset.X
        same = np.array([i])
        r = self._values(i, X, self._sqnorm, same)
        self._add(self.n)
        if self.cache_rows:
            r.setflags(write=False)
            self._cache[i] = r
        return r

    def kernel_eval(self, i: int, j: int) -> float:
        self._check(i)
        self._check(j)
        if self.cache_rows and i in self._cache:
            return float(self._cache[i][j])
        rows = self.dataset.X[[j]]
        same = np.array([0]) if i == j else None
        v = self._values(i, rows, self._sqnorm[[j]], same)
        self._add(1)
        return float(v[0])

    def cross(self, other: Dataset, support: Optional[np.ndarray] = None) -> np.ndarray:
        """Kernel matrix between ``other`` (rows) and training examples
        ``support`` (columns, default all).  Counted."""
        if support is None:
            support = np.arange(self.n)
        support = np.asarray(support, dtype=np.int64)
        A = other.X
        d = self.dataset.d
        if A.shape[1] > d:
            # features unseen in training do not touch the inner products
            A = A[:, :d]
        elif A.shape[1] < d:
            A = sp.csr_matrix((A.data, A.indices, A.indptr), shape=(A.shape[0], d))
        B = self.dataset.X[support]
        dots = np.asarray((A @ B.T).todense()).reshape(A.shape[0], len(support))
        self._add(A.shape[0] * len(support))
        if self.spec.kind == "linear":
            return dots
        sa = np.asarray(other.X.multiply(other.X).sum(axis=1)).reshape(-1)
        d2 = sa[:, None] + self._sqnorm[support][None, :] - 2.0 * dots
        np.maximum(d2, 0.0, out=d2)
        return np.exp(-self.spec.scale * d2)


def kernel_eval(oracle: KernelOracle, i: int, j: int) -> float:
    return oracle.kernel_eval(i, j)


# ---------------------------------------------------------------- dual state

@dataclass
class DualState:
    """alpha, maintained responses c_i = y_i <w, Phi(x_i)> and |w|^2.

    Operations below mutate the state in place and return it.
    """
    alpha: np.ndarray
    responses: np.ndarray
    norm_sq: float = 0.0

    @classmethod
    def zeros(cls, n: int) -> "DualState":
        return cls(np.zeros(n), np.zeros(n), 0.0)

    @property
    def n(self):
        return self.alpha.shape[0]

    def copy(self) -> "DualState":
        return DualState(self.alpha.copy(), self.responses.copy(), float(self.norm_sq))

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.alpha)


def response_update(state: DualState, oracle: KernelOracle, i: int, delta: float) -> DualState:
    """alpha_i += delta, with responses and |w|^2 kept consistent."""
    oracle._check(i)
    y = oracle.labels
    row = oracle.row(i)
    c_old = state.responses[i]
    state.alpha[i] += delta
    if delta != 0.0:
        state.responses += (y[i] * delta) * y * row
    state.norm_sq = max(0.0, state.norm_sq + 2.0 * delta * c_old + delta * delta * row[i])
    return state


def rescale_state(state: DualState, factor: float) -> DualState:
    if not (factor >= 0 and math.isfinite(factor)):
        raise ContractViolation(f"rescale factor must be finite and >= 0, got {factor}")
    state.alpha *= factor
    state.responses *= factor
    state.norm_sq *= factor * factor
    return state


def recompute_state(alpha: np.ndarray, gram: np.ndarray, labels: np.ndarray) -> DualState:
    """Responses and norm from scratch given a dense Gram matrix (for checks)."""
    a = alpha * labels
    g = gram @ a
    return DualState(alpha.copy(), labels * g, float(a @ g))
