"""Comparison affinity constructions: entropic OT, kernels, alternating projections."""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError
from .types import CostMatrix, DenseAffinity, DualPotential

_DAMPING_FALLBACK = 0.5


def sinkhorn_symmetric_hollow(
    c: CostMatrix,
    epsilon: float,
    tol: float = 1e-8,
    max_iters: int = 10000,
):
    """Symmetric hollow entropic OT by a log-domain fixed point.

    Iterates v_i <- v_i - (eps/2) log sum_{j != i} exp((v_i + v_j - C_ij)/eps)
    until every row of W_ij = exp((v_i + v_j - C_ij)/eps), W_ii = 0, sums to
    one within tol. Runs fully in the log domain; if the violation starts
    oscillating the update is damped by half.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n = c.n
    if n < 2:
        raise ValueError("no feasible hollow matrix exists for fewer than 2 points")
    logits_base = -c.entries / epsilon
    v = np.zeros(n)
    damping = 1.0
    prev_viol = np.inf
    rising = 0
    viol = np.inf
    for _ in range(max_iters):
        logits = logits_base + (v[:, None] + v[None, :]) / epsilon
        np.fill_diagonal(logits, -np.inf)
        m = logits.max(axis=1)
        lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
        viol = float(np.abs(np.exp(lse) - 1.0).max())
        if viol <= tol:
            w = np.exp(logits)
            np.fill_diagonal(w, 0.0)
            w = 0.5 * (w + w.T)
            np.fill_diagonal(w, 0.0)
            return DualPotential(v), DenseAffinity(w, hollow=True)
        if viol > prev_viol:
            rising += 1
            if rising >= 2:
                damping = _DAMPING_FALLBACK
        else:
            rising = 0
        prev_viol = viol
        v = v - damping * (epsilon / 2.0) * lse
    raise ConvergenceError(
        f"Sinkhorn did not reach tol {tol:.1e} within {max_iters} iterations "
        f"(last violation {viol:.3e})",
        potential=DualPotential(v),
    )


def gaussian_kernel(c: CostMatrix, epsilon: float, hollow: bool = False) -> DenseAffinity:
    """Gaussian affinity exp(-C_ij/eps); unit diagonal unless hollow."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    w = np.exp(-c.entries / epsilon)
    if hollow:
        np.fill_diagonal(w, 0.0)
    return DenseAffinity(w, hollow=hollow)


def epanechnikov_kernel(c: CostMatrix, h: float) -> DenseAffinity:
    """Compactly supported affinity [1 - C_ij/h^2]_+, hollow.

    Requires the plain squared-distance convention so that C_ij = ||x_i -
    x_j||^2 matches the kernel argument (r/h)^2.
    """
    if h <= 0:
        raise ValueError("bandwidth h must be positive")
    if c.half_factor:
        raise ValueError(
            "epanechnikov_kernel needs a cost matrix built with half_factor=False"
        )
    w = np.maximum(1.0 - c.entries / h**2, 0.0)
    np.fill_diagonal(w, 0.0)
    return DenseAffinity(w, hollow=True)


def knn_affinity(c: CostMatrix, k: int) -> DenseAffinity:
    """Symmetrised (union rule) k-nearest-neighbour adjacency, unit weights."""
    from .solver import knn_support

    mask = knn_support(c, k)
    return DenseAffinity(mask.to_dense(), hollow=True)


def _project_rowsum_affine(a: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto {A symmetric, A 1 = 1} (not hollow)."""
    n = a.shape[0]
    r = 1.0 - a.sum(axis=1)
    out = a + (r[:, None] + r[None, :]) / n - (r.sum() / n**2)
    return 0.5 * (out + out.T)


def alternating_projection_bistochastic(
    m: np.ndarray,
    tol: float = 1e-6,
    max_iters: int = 100000,
):
    """Alternating projections between {symmetric, row sums 1} and {A >= 0}.

    Starts from M and iterates A <- clip(P_aff(A), 0); matches the classic
    benchmark construction, which does not enforce the zero diagonal.
    Returns the final affinity and the history of ||A 1 - 1||_2, including
    the violation of the input at index 0. Never raises: the best iterate
    is returned when the budget runs out.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("input must be a square matrix")
    if not np.array_equal(a, a.T):
        raise ValueError("input must be symmetric")
    history = [float(np.linalg.norm(a.sum(axis=1) - 1.0))]
    current = a
    for _ in range(max_iters):
        if history[-1] <= tol:
            break
        current = np.maximum(_project_rowsum_affine(current), 0.0)
        history.append(float(np.linalg.norm(current.sum(axis=1) - 1.0)))
    return DenseAffinity(np.maximum(current, 0.0), hollow=False), history
