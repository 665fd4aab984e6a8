"""Truncated eigendecompositions for streaming PCA.

An ``EigState`` stands for the d x d matrix

    U diag(sigma) U^T + complement_value (I - U U^T)

with U a d x k' column-orthonormal basis.  MSG and incremental iterates
have complement 0; Warmuth-Kuzmin iterates keep every unexplored
direction at the cap 1/(d-k).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from .errors import (ContractViolation, DegenerateError, InfeasibleError, ParseError,
                     UnsupportedVersionError)

ORTHO_TOL = 1e-10
DROP_TOL = 1e-12


@dataclass
class EigState:
    basis: np.ndarray
    eigvals: np.ndarray
    complement_value: float = 0.0
    d: Optional[int] = None

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.eigvals = np.asarray(self.eigvals, dtype=np.float64).reshape(-1)
        if self.d is None:
            self.d = self.basis.shape[0]
        if self.basis.ndim != 2 or self.basis.shape != (self.d, self.eigvals.size):
            raise ContractViolation(
                f"basis shape {self.basis.shape} does not fit d={self.d}, k'={self.eigvals.size}")
        self.complement_value = float(self.complement_value)

    @classmethod
    def empty(cls, d: int, complement_value: float = 0.0) -> "EigState":
        return cls(np.zeros((d, 0)), np.zeros(0), complement_value, d)

    @property
    def rank(self) -> int:
        return self.eigvals.size

    @property
    def complement_multiplicity(self) -> int:
        return self.d - self.rank

    def copy(self) -> "EigState":
        return EigState(self.basis.copy(), self.eigvals.copy(), self.complement_value, self.d)

    def dense(self) -> np.ndarray:
        U = self.basis
        M = (U * self.eigvals) @ U.T
        if self.complement_value != 0.0:
            M += self.complement_value * (np.eye(self.d) - U @ U.T)
        return M

    def full_spectrum(self) -> np.ndarray:
        return np.concatenate([self.eigvals,
                               np.full(self.complement_multiplicity, self.complement_value)])

    def trace(self) -> float:
        return float(self.eigvals.sum() + self.complement_multiplicity * self.complement_value)

    def orthonormality_error(self) -> float:
        U = self.basis
        if U.shape[1] == 0:
            return 0.0
        return float(np.abs(U.T @ U - np.eye(U.shape[1])).max())


# ---------------------------------------------------------------- helpers

def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so that the first entry of non-negligible size is positive."""
    if V.size == 0:
        return V
    big = np.abs(V) > 1e-12 * np.abs(V).max(axis=0, keepdims=True)
    first = np.argmax(big, axis=0)
    s = np.sign(V[first, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def orthonormalize(U: np.ndarray) -> np.ndarray:
    """QR-based orthonormalization keeping column order and orientation."""
    if U.shape[1] == 0:
        return U
    Q, R = np.linalg.qr(U)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def maybe_reorthonormalize(state: EigState, tol: float = ORTHO_TOL) -> EigState:
    if state.orthonormality_error() > tol:
        state.basis = orthonormalize(state.basis)
    return state


def complement_basis(U: np.ndarray, d: Optional[int] = None) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of span(U)."""
    d = U.shape[0] if d is None else d
    k = U.shape[1]
    if k == 0:
        return np.eye(d)
    Q, _ = np.linalg.qr(np.hstack([U, np.eye(d)]))
    return fix_signs(Q[:, k:d])


def _sym_eig_desc(B):
    """Eigenpairs of a small symmetric matrix, descending eigenvalues."""
    w, V = np.linalg.eigh(0.5 * (B + B.T))
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


# ---------------------------------------------------------------- rank-1 update

def rank1_update(state: EigState, eta: float, x) -> EigState:
    """Eigendecomposition of (state matrix) + eta x x^T.

    The new basis is [U, q] times the eigenvectors of the bordered matrix

        [ diag(sigma) + eta p p^T      eta r p       ]
        [ eta r p^T                    c + eta r^2   ]

    with p = U^T x, r q = x - U p and c the complement value.  When x lies
    in span(U) (r = 0) only the k' x k' block is used and the rank stays.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != state.d:
        raise ContractViolation(f"x has dimension {x.size}, expected {state.d}")
    U, s, c = state.basis, state.eigvals, state.complement_value
    p = U.T @ x
    resid = x - U @ p
    # a second Gram-Schmidt pass keeps q orthogonal to U to working precision
    corr = U.T @ resid
    resid -= U @ corr
    p = p + corr
    r = float(np.linalg.norm(resid))
    xnorm = float(np.linalg.norm(x))
    k = s.size
    if r > 1e-13 * max(xnorm, 1e-300) and r > 0.0 and k < state.d:
        q = resid / r
        B = np.empty((k + 1, k + 1))
        B[:k, :k] = np.diag(s) + eta * np.outer(p, p)
        B[:k, k] = eta * r * p
        B[k, :k] = eta * r * p
        B[k, k] = c + eta * r * r
        w, V = _sym_eig_desc(B)
        newU = np.hstack([U, q[:, None]]) @ V
    else:
        B = np.diag(s) + eta * np.outer(p, p)
        w, V = _sym_eig_desc(B)
        newU = U @ V
    out = EigState(fix_signs(newU), w, c, state.d)
    return maybe_reorthonormalize(out)


def drop_near(state: EigState, value: Optional[float] = None, tol: float = DROP_TOL) -> EigState:
    """Remove explicit eigenpairs within tol of ``value`` (default: the
    complement value); those directions then fall in the complement."""
    value = state.complement_value if value is None else value
    keep = np.abs(state.eigvals - value) > tol
    if keep.all():
        return state
    return EigState(state.basis[:, keep], state.eigvals[keep], state.complement_value, state.d)


def truncate_top(state: EigState, k: int) -> EigState:
    """Keep the k largest explicit eigenpairs (lowest index among ties)."""
    if state.rank <= k:
        return state.copy()
    order = np.argsort(-state.eigvals, kind="stable")[:k]
    order = np.sort(order)
    return EigState(state.basis[:, order].copy(), state.eigvals[order].copy(),
                    state.complement_value, state.d)


def bottom_directions(state: EigState, k: int) -> np.ndarray:
    """d x k orthonormal basis for the k smallest eigenvalues of the full
    matrix, complement directions included (used to report W-states)."""
    w = state.full_spectrum()
    B = np.hstack([state.basis, complement_basis(state.basis, state.d)])
    order = np.argsort(w, kind="stable")[:k]
    return B[:, order]


def top_directions(state: EigState, k: int) -> np.ndarray:
    w = state.full_spectrum()
    if state.rank >= k and (state.complement_multiplicity == 0 or
                            np.sort(state.eigvals)[-k] >= state.complement_value):
        return truncate_top(state, k).basis
    B = np.hstack([state.basis, complement_basis(state.basis, state.d)])
    order = np.argsort(-w, kind="stable")[:k]
    return B[:, order]


# ---------------------------------------------------------------- projections

def _expand(values, mult):
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if mult is None:
        mult = np.ones(values.size)
    mult = np.asarray(mult, dtype=np.float64).reshape(-1)
    if mult.shape != values.shape:
        raise ContractViolation("multiplicities must match eigenvalues")
    if np.any(mult < 0):
        raise ContractViolation("negative multiplicity")
    return values, mult


def _trace_of_shift(values, mult, S):
    return float(np.sum(mult * np.clip(values + S, 0.0, 1.0)))


class SimplexProjection(NamedTuple):
    shift: float
    eigvals: np.ndarray


def project_trace_simplex(eigvals, k: float, multiplicities=None) -> SimplexProjection:
    """Frobenius projection of a spectrum onto {0 <= sigma <= 1, sum = k}:
    sigma_i = clip(sigma'_i + S, 0, 1) for the shift S that restores the
    trace.  g(S) = sum m_i clip(sigma'_i + S, 0, 1) is piecewise linear with
    breakpoints -sigma'_i and 1 - sigma'_i; when g is flat at k the S
    closest to zero is returned.
    """
    v, m = _expand(eigvals, multiplicities)
    total = float(m.sum())
    if not np.all(np.isfinite(v)):
        raise ContractViolation("eigenvalues must be finite")
    if k < 0 or k > total + 1e-12:
        raise InfeasibleError(f"trace {k} not reachable with total multiplicity {total:g}")
    if v.size == 0:
        return SimplexProjection(0.0, v.copy())
    bp = np.unique(np.concatenate([-v, 1.0 - v]))
    g = np.clip(v[None, :] + bp[:, None], 0.0, 1.0) @ m
    # S_lo = inf{S : g(S) >= k}
    if k <= 0:
        s_lo = -math.inf
    else:
        j = int(np.argmax(g >= k)) if np.any(g >= k) else bp.size - 1
        if g[j] < k:            # rounding at full saturation
            j = bp.size - 1
        if j == 0:
            s_lo = bp[0]
        else:
            s_lo = bp[j - 1] + (k - g[j - 1]) * (bp[j] - bp[j - 1]) / (g[j] - g[j - 1])
    # S_hi = sup{S : g(S) <= k}
    idx = np.flatnonzero(g <= k)
    if idx.size == 0:
        s_hi = bp[0]
    else:
        j = int(idx[-1])
        if j == bp.size - 1:
            s_hi = math.inf
        else:
            s_hi = bp[j] + (k - g[j]) * (bp[j + 1] - bp[j]) / (g[j + 1] - g[j])
    if s_hi < s_lo:
        s_hi = s_lo = 0.5 * (s_lo + s_hi)
    S = float(min(max(0.0, s_lo), s_hi))
    return SimplexProjection(S, np.clip(v + S, 0.0, 1.0))


class EntropyProjection(NamedTuple):
    Z: float
    eigvals: np.ndarray


def project_relative_entropy(eigvals, d: int, k: int, multiplicities=None) -> EntropyProjection:
    """Relative-entropy projection onto {0 <= sigma <= 1/(d-k), sum = 1}:
    sigma_i = min(cap, sigma'_i / Z).

    With the j largest values capped, the rest scale to fill 1 - cap m_j,
    so Z = (remaining mass) / (1 - cap m_j); the right j is the first one
    for which the next value stays under the cap.
    """
    v, m = _expand(eigvals, multiplicities)
    if d - k < 1:
        raise ContractViolation("need k < d")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ContractViolation("eigenvalues must be finite and non-negative")
    if not np.any((v > 0) & (m > 0)):
        raise DegenerateError("all eigenvalues are zero")
    cap = 1.0 / (d - k)
    pos = (v > 0) & (m > 0)
    if float(m[pos].sum()) * cap < 1.0 - 1e-12:
        raise InfeasibleError("fewer than d-k positive directions; cap cannot be met")
    order = np.argsort(-v, kind="stable")
    vs, ms = v[order], m[order]
    mass = np.cumsum(ms * vs)
    total = mass[-1]
    capped_m = 0.0
    Z = None
    for j in range(vs.size + 1):
        # top j entries capped
        rest = total - (mass[j - 1] if j else 0.0)
        room = 1.0 - cap * capped_m
        if rest <= 0 or room <= 0:
            break
        z = rest / room
        ok_top = j == 0 or vs[j - 1] / z >= cap * (1 - 1e-12)
        ok_next = j == vs.size or vs[j] / z <= cap * (1 + 1e-12)
        if ok_top and ok_next:
            Z = z
            break
        if j < vs.size:
            capped_m += ms[j]
    if Z is None:
        # every positive value sits at the cap: any Z below the smallest
        # positive value / cap works; take the one nearest 1
        zmax = float(v[pos].min()) / cap
        Z = min(1.0, zmax)
    return EntropyProjection(float(Z), np.minimum(cap, v / Z))


class CappedProjection(NamedTuple):
    eigvals: np.ndarray
    kept: np.ndarray


def project_capped(eigvals, k: float, K: int) -> CappedProjection:
    """Projection onto the trace-k capped simplex with at most K nonzero
    eigenvalues.  For K+1 inputs each size-K subset is projected on its own
    and scored by the squared Frobenius distance, the left-out value
    counting in full; on ties the subset holding the larger eigenvalue wins.
    """
    v = np.asarray(eigvals, dtype=np.float64).reshape(-1)
    if k > K:
        raise ContractViolation(f"k={k} exceeds the rank cap K={K}")
    if v.size > K + 1:
        raise ContractViolation(f"input rank {v.size} exceeds K+1={K + 1}")
    if v.size <= K:
        p = project_trace_simplex(v, k)
        return CappedProjection(p.eigvals, np.arange(v.size))
    order = np.argsort(-v, kind="stable")
    best = None
    for pos in range(v.size):          # leave out order[pos]; larger values first
        out = order[pos]
        kept = np.sort(np.delete(np.arange(v.size), out))
        p = project_trace_simplex(v[kept], k)
        dist = float(np.sum((p.eigvals - v[kept]) ** 2) + v[out] ** 2)
        # "<=" lets a later candidate (leaving out a smaller value) win ties
        if best is None or dist <= best[0] + 1e-14 * max(1.0, best[0]):
            best = (dist, p.eigvals, kept)
    return CappedProjection(best[1], best[2])


# ---------------------------------------------------------------- unrelax

class MixtureComponent(NamedTuple):
    weight: float
    basis_index_set: tuple


def unrelax_decompose(eigvals, d: int, k: int, tol: float = 1e-12) -> List[MixtureComponent]:
    """Write a feasible spectrum (sum 1, entries <= 1/(d-k)) as a convex
    combination of uniform spectra on d-k coordinates.

    Greedy: with m = d-k and remaining mass s, take the m largest remaining
    entries, subtract lam = min(smallest chosen, s/m - largest unchosen)
    from them and emit weight m lam.  Each step zeroes an entry or brings
    one up to the bound s/m, where it then stays, so at most d steps.
    """
    v = np.array(eigvals, dtype=np.float64).reshape(-1)
    if v.size != d:
        raise ContractViolation(f"need all {d} eigenvalues, got {v.size}")
    m = d - k
    if m < 1:
        raise ContractViolation("need k < d")
    if np.any(v < -tol) or abs(v.sum() - 1.0) > 1e-9 or np.any(v > 1.0 / m + 1e-9):
        raise ContractViolation("spectrum is not feasible for the relaxed problem")
    v = np.clip(v, 0.0, None)
    s = float(v.sum())
    comps: List[MixtureComponent] = []
    for _ in range(d + 1):
        if s <= tol:
            break
        order = np.argsort(-v, kind="stable")
        chosen, rest = order[:m], order[m:]
        lam = float(v[chosen].min())
        if rest.size:
            lam = min(lam, s / m - float(v[rest].max()))
        if lam <= 0:
            # only reachable through rounding of an already tight entry
            lam = float(v[chosen].min())
        if lam <= tol:
            # a chosen entry is numerically zero; drop it and retry
            v[chosen[v[chosen] <= tol]] = 0.0
            s = float(v.sum())
            continue
        v[chosen] -= lam
        v[np.abs(v) <= tol] = 0.0
        s -= m * lam
        comps.append(MixtureComponent(m * lam, tuple(int(i) for i in np.sort(chosen))))
    if len(comps) > d:
        raise RuntimeError("unrelax did not terminate within d steps")
    return comps


def reconstruct_mixture(components, d: int, k: int) -> np.ndarray:
    m = d - k
    out = np.zeros(d)
    for w, idx in components:
        out[list(idx)] += w / m
    return out


# ---------------------------------------------------------------- serialization

def eigstate_to_text(state: EigState) -> str:
    lines = ["EIGSTATE v1"]
    head = [str(state.d), str(state.rank), repr(float(state.complement_value))]
    head += [repr(float(s)) for s in state.eigvals]
    lines.append(" ".join(head))
    for j in range(state.rank):
        lines.append(" ".join(repr(float(x)) for x in state.basis[:, j]))
    return "\n".join(lines) + "\n"


def eigstate_from_text(text) -> EigState:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    raw = text.encode("utf-8")
    lines = text.splitlines(keepends=True)
    offsets = np.concatenate([[0], np.cumsum([len(l.encode("utf-8")) for l in lines])]).astype(int)
    if not lines:
        raise ParseError("empty EIGSTATE file", offset=0)
    header = lines[0].strip().split()
    if len(header) != 2 or header[0] != "EIGSTATE":
        raise ParseError("missing EIGSTATE header", offset=0)
    if header[1] != "v1":
        raise UnsupportedVersionError(f"unsupported EIGSTATE version {header[1]!r}")
    if len(lines) < 2:
        raise ParseError("truncated EIGSTATE file: missing size line", offset=len(raw))
    try:
        parts = lines[1].split()
        d, kp = int(parts[0]), int(parts[1])
        comp = float(parts[2])
        sig = np.array([float(t) for t in parts[3:]])
    except (ValueError, IndexError):
        raise ParseError("bad EIGSTATE size line", offset=int(offsets[1])) from None
    if sig.size != kp:
        raise ParseError(f"expected {kp} eigenvalues, found {sig.size}", offset=int(offsets[1]))
    if not lines[1].endswith("\n"):
        raise ParseError("truncated EIGSTATE file", offset=len(raw))
    U = np.zeros((d, kp))
    for j in range(kp):
        li = 2 + j
        if li >= len(lines):
            raise ParseError(f"truncated EIGSTATE file: basis row {j} missing", offset=len(raw))
        try:
            row = np.array([float(t) for t in lines[li].split()])
        except ValueError:
            raise ParseError(f"bad basis row {j}", offset=int(offsets[li])) from None
        if not lines[li].endswith("\n"):
            raise ParseError(f"truncated EIGSTATE file in basis row {j}", offset=len(raw))
        if row.size != d:
            raise ParseError(f"basis row {j} has {row.size} entries, expected {d}",
                             offset=int(offsets[li]))
        U[:, j] = row
    return EigState(U, sig, comp, d)
