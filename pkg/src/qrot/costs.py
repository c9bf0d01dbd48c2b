"""Cost-matrix construction and transformations."""

from __future__ import annotations

import numpy as np

from .types import CostMatrix


def pairwise_cost(points, half_factor: bool = False) -> CostMatrix:
    """Squared Euclidean cost matrix of a point set.

    Parameters
    ----------
    points : (n, p) array or sequence of equal-length vectors
    half_factor : bool
        If True, entries carry the 1/2 prefactor; experiment pipelines use
        the plain convention since the mean-cost heuristic for the
        regularisation strength is calibrated against it.
    """
    if isinstance(points, np.ndarray) and points.ndim == 2:
        x = np.asarray(points, dtype=np.float64)
    else:
        rows = [np.asarray(p, dtype=np.float64).ravel() for p in points]
        if not rows:
            raise ValueError("need at least one point")
        p = rows[0].size
        for k, row in enumerate(rows):
            if row.size != p:
                raise ValueError(
                    f"point {k} has dimension {row.size}, expected {p}"
                )
        x = np.vstack(rows)
    if x.shape[0] < 1:
        raise ValueError("need at least one point")
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    if half_factor:
        d *= 0.5
    return CostMatrix(d, half_factor=half_factor)


def normalize_mean(c: CostMatrix) -> tuple[CostMatrix, float]:
    """Rescale so the mean over all n^2 entries (zero diagonal included) is 1.

    Returns the rescaled matrix and the divisor applied. Raises on an
    all-zero matrix, where the scale is undefined.
    """
    scale = float(c.entries.sum() / c.n**2)
    if scale == 0.0:
        raise ValueError("cannot normalise an all-zero cost matrix")
    return CostMatrix(c.entries / scale, half_factor=c.half_factor), scale


def mean_offdiag(c: CostMatrix) -> float:
    """Mean cost N^-2 sum_ij C_ij, with the zero diagonal counted."""
    return float(c.entries.sum() / c.n**2)


def rank_one_shift(c: CostMatrix, eta) -> CostMatrix:
    """Add eta_i + eta_j to every off-diagonal entry; diagonal stays zero.

    The hollow constraint makes the diagonal immaterial, so it is forced
    back to zero. Rejects shifts that would make any off-diagonal entry
    negative, since cost matrices are nonnegative by construction.
    """
    eta = np.asarray(eta, dtype=np.float64).ravel()
    if eta.size != c.n:
        raise ValueError(f"eta has length {eta.size}, expected {c.n}")
    shifted = c.entries + eta[:, None] + eta[None, :]
    shifted = 0.5 * (shifted + shifted.T)
    np.fill_diagonal(shifted, 0.0)
    if shifted.size > 1 and shifted.min() < 0.0:
        i, j = np.unravel_index(np.argmin(shifted), shifted.shape)
        raise ValueError(
            f"shift makes entry ({i}, {j}) negative ({shifted[i, j]:.3g}); "
            "cost matrices must stay nonnegative"
        )
    return CostMatrix(shifted, half_factor=c.half_factor)
