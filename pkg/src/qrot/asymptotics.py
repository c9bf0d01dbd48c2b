"""First-order potential asymptotics and the transport-based Laplacian estimate.

On a uniform sample from a d-dimensional manifold the optimal dual potential
is constant at first order, with the sum over a pair scaling like

    K(eps, N) = C_d * eps^(2/(d+2)) * N^(-4/(d+2)),
    C_d = (vol(M)/|S^{d-1}| * d(d+2)/2)^(2/(d+2)).

Here eps is expressed with plan mass normalised to one (marginals 1/N); the
row-sums-one solvers use eps/N for the same problem. Substituting the
constant potential into the plan recovery gives a compactly supported
first-order plan from which a discrete Laplace-type operator is built.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .types import CostMatrix, SparsePlan


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass(frozen=True)
class ManifoldSpec:
    """Intrinsic dimension, Riemannian volume and |S^{d-1}| of a manifold."""

    d: int
    volume: float
    sphere_area: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("intrinsic dimension must be at least 1")
        if self.volume <= 0:
            raise ValueError("volume must be positive")
        expected = sphere_area(self.d)
        if not math.isclose(self.sphere_area, expected, rel_tol=1e-9):
            raise ValueError(
                f"sphere_area must equal 2 pi^(d/2)/Gamma(d/2) = {expected!r}"
            )

    @classmethod
    def for_dim(cls, d: int, volume: float) -> "ManifoldSpec":
        return cls(d, volume, sphere_area(d))


def c_d(spec: ManifoldSpec) -> float:
    """Leading constant of the potential scaling law."""
    base = spec.volume / spec.sphere_area * spec.d * (spec.d + 2) / 2.0
    return float(base ** (2.0 / (spec.d + 2)))


def k_eps_n(spec: ManifoldSpec, epsilon: float, n: int) -> float:
    """First-order pair-potential value C_d eps^(2/(d+2)) N^(-4/(d+2))."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n < 1:
        raise ValueError("N must be at least 1")
    expo = 2.0 / (spec.d + 2)
    return c_d(spec) * epsilon**expo * float(n) ** (-2.0 * expo)


def approx_plan(c: CostMatrix, k: float, epsilon: float, doubled: bool = False) -> SparsePlan:
    """First-order plan [(2K if doubled else K) - C_ij]_+ / eps, hollow.

    ``doubled`` selects the sum-of-potentials constant 2K; the default keeps
    the single-K convention used by the convergence analysis. Rows are not
    rescaled, so the feasible flag stays unset.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if c.half_factor:
        raise ValueError("approx_plan needs a cost matrix built with half_factor=False")
    level = 2.0 * k if doubled else k
    w = np.maximum(level - c.entries, 0.0) / epsilon
    np.fill_diagonal(w, 0.0)
    return SparsePlan.from_dense(w, feasible=False)


def ot_laplacian_estimate(
    points,
    x0_index: int,
    f,
    spec: ManifoldSpec,
    epsilon: float,
    scaling: str = "appendix",
) -> float:
    """Laplace-type estimate at one point from the first-order plan row.

    Computes sum_j w_j (f(x0) - f(x_j)) over all other points with
    w_j = [K - ||x0 - x_j||^2]_+ / eps, then applies the chosen scaling:
    "theorem" multiplies by -2 (N+1) / K, "appendix" by 1 / K. Returns 0
    with a warning when no point falls inside the support.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be an (n, p) array")
    n_total = pts.shape[0]
    if not (0 <= x0_index < n_total):
        raise ValueError("x0_index out of range")
    n = n_total - 1
    if n < 1:
        raise ValueError("need at least one point besides x0")
    if scaling not in ("theorem", "appendix"):
        raise ValueError(f"scaling must be 'theorem' or 'appendix', got {scaling!r}")
    x0 = pts[x0_index]
    others = np.delete(pts, x0_index, axis=0)
    k = k_eps_n(spec, epsilon, n)
    c0 = ((others - x0) ** 2).sum(axis=1)
    w = np.maximum(k - c0, 0.0) / epsilon
    if not np.any(w > 0):
        warnings.warn(
            "empty neighbourhood: no point falls inside the first-order support",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    f0 = float(f(x0))
    fvals = np.array([float(f(p)) for p in others])
    delta = float((w * (f0 - fvals)).sum())
    if scaling == "theorem":
        return -2.0 * (n + 1) / k * delta
    return delta / k


def fit_loglog_slope(xs, ys, window=None):
    """Least-squares slope of log y against log x on an index window.

    ``window`` is an index range (start, stop) or slice; None uses all
    points. Returns (slope, intercept, r2); a perfectly constant y gives
    r2 = 1 by convention.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape != ys.shape:
        raise ValueError("xs and ys must have the same length")
    if window is None:
        sel = slice(None)
    elif isinstance(window, slice):
        sel = window
    else:
        start, stop = window
        sel = slice(start, stop)
    x = xs[sel]
    y = ys[sel]
    if x.size < 2:
        raise ValueError("window must contain at least 2 points")
    if x.min() <= 0 or y.min() <= 0:
        raise ValueError("log-log fit needs strictly positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    ss_res = float((resid**2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)
