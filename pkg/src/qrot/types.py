"""Domain types: cost matrices, plans, masks, affinities and solver records.

All array-backed types freeze their buffers after validation so instances
can be shared across threads without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CostMatrix:
    """Dense symmetric nonnegative pairwise-cost matrix with zero diagonal.

    ``half_factor`` records whether entries carry the 1/2 prefactor on the
    squared Euclidean distance; several kernels require the plain convention.
    """

    entries: np.ndarray
    half_factor: bool = False

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"cost matrix must be square, got shape {e.shape}")
        if not np.array_equal(e, e.T):
            raise ValueError("cost matrix must be exactly symmetric")
        if np.any(np.diagonal(e) != 0.0):
            raise ValueError("cost matrix must have a zero diagonal")
        if e.size and e.min() < 0.0:
            raise ValueError("cost matrix entries must be nonnegative")
        if not np.all(np.isfinite(e)):
            raise ValueError("cost matrix entries must be finite")
        object.__setattr__(self, "entries", _frozen(e))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class DualPotential:
    """Vector of Lagrange multipliers for the row-sum constraint."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("potential must be a 1-d vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential entries must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def n(self) -> int:
        return self.values.shape[0]


def potential_values(u) -> np.ndarray:
    """Accept a DualPotential or a plain vector and return the ndarray."""
    if isinstance(u, DualPotential):
        return u.values
    return np.asarray(u, dtype=np.float64)


@dataclass(frozen=True)
class SparsePlan:
    """Sparse symmetric hollow transport plan; each pair stored once (i < j).

    ``feasible`` is only set after the row sums have been checked against the
    solver tolerance; a plan built directly from a potential carries False.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    feasible: bool = False

    def __post_init__(self):
        r = np.ascontiguousarray(self.rows, dtype=np.int64)
        c = np.ascontiguousarray(self.cols, dtype=np.int64)
        v = np.ascontiguousarray(self.vals, dtype=np.float64)
        if not (r.shape == c.shape == v.shape) or r.ndim != 1:
            raise ValueError("rows, cols, vals must be equal-length vectors")
        if r.size:
            if r.min() < 0 or c.max() >= self.n:
                raise ValueError("triplet indices out of range")
            if np.any(r >= c):
                raise ValueError("triplets must satisfy i < j (stored once)")
            if v.min() <= 0.0:
                raise ValueError("stored plan values must be strictly positive")
            order = np.lexsort((c, r))
            r, c, v = r[order], c[order], v[order]
        r.setflags(write=False)
        c.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "cols", c)
        object.__setattr__(self, "vals", v)

    @classmethod
    def from_dense(cls, m: np.ndarray, feasible: bool = False) -> "SparsePlan":
        m = np.asarray(m, dtype=np.float64)
        iu, ju = np.triu_indices(m.shape[0], k=1)
        keep = m[iu, ju] > 0.0
        return cls(m.shape[0], iu[keep], ju[keep], m[iu, ju][keep], feasible)

    @property
    def support_size(self) -> int:
        return int(self.vals.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.rows, self.cols] = self.vals
        out[self.cols, self.rows] = self.vals
        return out

    def row_sums(self) -> np.ndarray:
        s = np.bincount(self.rows, weights=self.vals, minlength=self.n).astype(
            np.float64, copy=False
        )
        s += np.bincount(self.cols, weights=self.vals, minlength=self.n)
        return s

    def max_row_violation(self) -> float:
        if self.n == 0:
            return 0.0
        return float(np.abs(self.row_sums() - 1.0).max())


@dataclass(frozen=True)
class SupportMask:
    """Sparse symmetric hollow 0/1 pattern; each pair stored once (i < j)."""

    n: int
    rows: np.ndarray
    cols: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(self.rows, dtype=np.int64)
        c = np.ascontiguousarray(self.cols, dtype=np.int64)
        if r.shape != c.shape or r.ndim != 1:
            raise ValueError("rows and cols must be equal-length vectors")
        if r.size:
            if r.min() < 0 or c.max() >= self.n:
                raise ValueError("pattern indices out of range")
            if np.any(r >= c):
                raise ValueError("pattern must satisfy i < j (stored once)")
            key = np.unique(r * np.int64(self.n) + c)
            r, c = key // self.n, key % self.n
        r.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "cols", c)

    @classmethod
    def from_dense(cls, pattern: np.ndarray) -> "SupportMask":
        p = np.asarray(pattern)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("pattern must be square")
        if not np.array_equal(p, p.T):
            raise ValueError("pattern must be symmetric")
        iu, ju = np.triu_indices(p.shape[0], k=1)
        keep = p[iu, ju] != 0
        return cls(p.shape[0], iu[keep], ju[keep])

    @property
    def size(self) -> int:
        """Number of stored (unordered) pairs."""
        return int(self.rows.size)

    def union(self, other: "SupportMask") -> "SupportMask":
        if other.n != self.n:
            raise ValueError("mask size mismatch")
        return SupportMask(
            self.n,
            np.concatenate([self.rows, other.rows]),
            np.concatenate([self.cols, other.cols]),
        )

    def row_degrees(self) -> np.ndarray:
        d = np.bincount(self.rows, minlength=self.n)
        d += np.bincount(self.cols, minlength=self.n)
        return d

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.rows, self.cols] = 1.0
        out[self.cols, self.rows] = 1.0
        return out

    def contains(self, other: "SupportMask") -> bool:
        """True when every pair of ``other`` is already stored here."""
        mine = set(zip(self.rows.tolist(), self.cols.tolist()))
        return all((i, j) in mine for i, j in zip(other.rows.tolist(), other.cols.tolist()))


@dataclass(frozen=True)
class SolverConfig:
    """Regularisation and iteration parameters for the Newton solvers.

    ``cg_max_iters`` of None means 10*n, resolved at solve time.
    """

    epsilon: float
    theta: float = 0.1
    kappa: float = 0.5
    delta: float = 1e-5
    newton_tol: float = 1e-8
    max_newton_iters: int = 100
    cg_tol: float = 1e-10
    cg_max_iters: Optional[int] = None

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")
        if not (0 < self.theta < 1 and 0 < self.kappa < 1):
            raise ValueError("Armijo parameters theta, kappa must lie in (0, 1)")
        if not (self.delta > 0 and self.newton_tol > 0 and self.cg_tol > 0):
            raise ValueError("delta, newton_tol and cg_tol must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be at least 1")
        if self.cg_max_iters is not None and self.cg_max_iters < 1:
            raise ValueError("cg_max_iters must be at least 1")

    def resolved_cg_max_iters(self, n: int) -> int:
        return self.cg_max_iters if self.cg_max_iters is not None else 10 * n


@dataclass
class SolveDiagnostics:
    """Run record for a solve; ``outer_iters`` is active-set only."""

    newton_iters: int = 0
    final_row_violation: float = np.inf
    dual_objective: float = np.nan
    line_search_backtracks: list = field(default_factory=list)
    support_size: int = 0
    outer_iters: int = 0
    cg_failures: int = 0

    def to_dict(self) -> dict:
        return {
            "newton_iters": int(self.newton_iters),
            "final_row_violation": float(self.final_row_violation),
            "dual_objective": float(self.dual_objective),
            "line_search_backtracks": [int(b) for b in self.line_search_backtracks],
            "support_size": int(self.support_size),
            "outer_iters": int(self.outer_iters),
            "cg_failures": int(self.cg_failures),
        }


@dataclass(frozen=True)
class DenseAffinity:
    """Dense symmetric nonnegative affinity matrix; hollow when flagged."""

    entries: np.ndarray
    hollow: bool = False

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"affinity must be square, got shape {e.shape}")
        if not np.array_equal(e, e.T):
            raise ValueError("affinity must be exactly symmetric")
        if e.size and e.min() < 0.0:
            raise ValueError("affinity entries must be nonnegative")
        if self.hollow and np.any(np.diagonal(e) != 0.0):
            raise ValueError("hollow affinity must have a zero diagonal")
        object.__setattr__(self, "entries", _frozen(e))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def affinity_dense(w) -> np.ndarray:
    """Dense ndarray view of a DenseAffinity, SparsePlan or raw matrix."""
    if isinstance(w, DenseAffinity):
        return w.entries
    if isinstance(w, SparsePlan):
        return w.to_dense()
    return np.asarray(w, dtype=np.float64)


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues with matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.eigenvalues, dtype=np.float64)
        vecs = np.asarray(self.eigenvectors, dtype=np.float64)
        if vals.ndim != 1 or vecs.ndim != 2 or vecs.shape[1] != vals.size:
            raise ValueError("need one eigenvector column per eigenvalue")
        if vals.size > 1 and np.any(np.diff(vals) < -1e-12):
            raise ValueError("eigenvalues must be ascending")
        gram = vecs.T @ vecs
        if np.abs(gram - np.eye(vals.size)).max() > 1e-8:
            raise ValueError("eigenvector columns must be orthonormal to 1e-8")
        object.__setattr__(self, "eigenvalues", _frozen(vals))
        object.__setattr__(self, "eigenvectors", _frozen(vecs))

    @property
    def k(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class Labels:
    """Cluster assignments in [0, k)."""

    assignments: np.ndarray
    k: int

    def __post_init__(self):
        a = np.ascontiguousarray(self.assignments, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("assignments must be a 1-d vector")
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ValueError("every assignment must lie in [0, k)")
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    @property
    def n(self) -> int:
        return self.assignments.size


def label_values(labels) -> np.ndarray:
    if isinstance(labels, Labels):
        return labels.assignments
    return np.asarray(labels, dtype=np.int64)


@dataclass
class LabeledCloud:
    """Point cloud with optional labels and a generator-parameter record."""

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ValueError("points must be an (n, p) array")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape[0] != self.points.shape[0]:
                raise ValueError("labels length must match point count")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class ExperimentRecord:
    """One experiment outcome: parameters, metrics, seed and artifacts."""

    experiment: str
    params: dict
    metrics: dict
    seed: int
    runtime_ms: float
    artifact_paths: list = field(default_factory=list)

    def __post_init__(self):
        if not self.experiment:
            raise ValueError("experiment name must be nonempty")
        for key, value in self.metrics.items():
            if not np.isfinite(value):
                raise ValueError(f"metric {key!r} must be finite, got {value!r}")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": self.params,
            "metrics": {k: float(v) for k, v in self.metrics.items()},
            "seed": int(self.seed),
            "runtime_ms": float(self.runtime_ms),
            "artifact_paths": [str(p) for p in self.artifact_paths],
        }
