"""Laplacians, eigen-decompositions, embeddings, clustering and metrics."""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .baselines import sinkhorn_symmetric_hollow
from .errors import ConvergenceError
from .types import (
    CostMatrix,
    DenseAffinity,
    EigenSystem,
    Labels,
    SparsePlan,
    affinity_dense,
    label_values,
)

_DENSE_EIG_CUTOFF = 2000


def symmetric_normalize(w):
    """Normalise W_ij / sqrt(d_i d_j) with d = W 1; preserves the input type.

    A zero row (isolated vertex) has no valid normalisation and raises.
    """
    if isinstance(w, SparsePlan):
        d = w.row_sums()
        _check_degrees(d)
        s = 1.0 / np.sqrt(d)
        vals = w.vals * s[w.rows] * s[w.cols]
        return SparsePlan(w.n, w.rows, w.cols, vals, feasible=False)
    entries = affinity_dense(w)
    d = entries.sum(axis=1)
    _check_degrees(d)
    s = 1.0 / np.sqrt(d)
    out = entries * s[:, None] * s[None, :]
    out = 0.5 * (out + out.T)
    hollow = isinstance(w, DenseAffinity) and w.hollow
    return DenseAffinity(out, hollow=hollow)


def _check_degrees(d: np.ndarray):
    bad = np.flatnonzero(d <= 0.0)
    if bad.size:
        raise ValueError(f"row {int(bad[0])} has zero weight; cannot normalise")


def laplacian(wbar):
    """L = I - Wbar; sparse input yields a sparse Laplacian."""
    if isinstance(wbar, SparsePlan):
        n = wbar.n
        coo = sp.coo_matrix(
            (
                np.concatenate([wbar.vals, wbar.vals]),
                (
                    np.concatenate([wbar.rows, wbar.cols]),
                    np.concatenate([wbar.cols, wbar.rows]),
                ),
            ),
            shape=(n, n),
        )
        return (sp.identity(n, format="csr") - coo.tocsr()).tocsr()
    entries = affinity_dense(wbar)
    if not np.array_equal(entries, entries.T):
        raise ValueError("affinity must be symmetric")
    return np.eye(entries.shape[0]) - entries


def eigenpairs_smallest(l, k: int) -> EigenSystem:
    """k algebraically smallest eigenpairs of a symmetric matrix.

    Dense tridiagonalisation at desk scale; Lanczos (ARPACK) on sparse
    input above the cutoff, with a dense fallback if the iterative residuals
    miss the 1e-8 target.
    """
    n = l.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    sparse_input = sp.issparse(l)
    if n <= _DENSE_EIG_CUTOFF or not sparse_input:
        dense = l.toarray() if sparse_input else np.asarray(l, dtype=np.float64)
        vals, vecs = scipy.linalg.eigh(dense, subset_by_index=[0, k - 1])
        return EigenSystem(vals, vecs)
    try:
        vals, vecs = scipy.sparse.linalg.eigsh(l, k=k, which="SA")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        residuals = np.linalg.norm(l @ vecs - vecs * vals[None, :], axis=0)
        if residuals.max() > 1e-8:
            raise ConvergenceError(
                f"Lanczos residuals {residuals.max():.2e} above 1e-8"
            )
        return EigenSystem(vals, vecs)
    except (scipy.sparse.linalg.ArpackNoConvergence, ConvergenceError):
        dense = l.toarray()
        vals, vecs = scipy.linalg.eigh(dense, subset_by_index=[0, k - 1])
        return EigenSystem(vals, vecs)


def eigenmap_embed(es: EigenSystem, ell: int) -> np.ndarray:
    """Columns 2..ell+1 of the eigenvector basis (trivial first dropped)."""
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    if es.k < ell + 1:
        raise ValueError(f"need at least {ell + 1} eigenpairs, have {es.k}")
    return np.array(es.eigenvectors[:, 1 : ell + 1])


def _orthonormalize(v: np.ndarray) -> np.ndarray:
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if v.shape[0] < v.shape[1]:
        raise ValueError("subspace dimension exceeds ambient dimension")
    q, r = np.linalg.qr(v)
    if np.abs(np.diagonal(r)).min() <= 1e-10 * max(1.0, np.abs(r).max()):
        raise ValueError("rank-deficient basis after orthonormalisation")
    return q

def principal_angles(v1, v2) -> np.ndarray:
    """Ascending principal angles (radians) between two subspaces.

    Bases are orthonormalised internally, then the angles are the arccos of
    the singular values of V1^T V2, clamped to [0, 1].
    """
    q1 = _orthonormalize(v1)
    q2 = _orthonormalize(v2)
    if q1.shape[0] != q2.shape[0]:
        raise ValueError("subspaces live in different ambient dimensions")
    svals = np.linalg.svd(q1.T @ q2, compute_uv=False)
    return np.arccos(np.clip(svals, 0.0, 1.0))


def perplexity(p) -> float:
    """exp of the Shannon entropy of a probability vector; 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size and p.min() < 0.0:
        raise ValueError("probabilities must be nonnegative")
    total = p.sum()
    if abs(total - 1.0) > 1e-8:
        raise ValueError(f"probabilities must sum to 1, got {total!r}")
    pos = p[p > 0.0]
    return float(np.exp(-(pos * np.log(pos)).sum()))


def mean_perplexity(plan) -> float:
    """Mean row perplexity of a plan or affinity, rows normalised to sum 1."""
    w = affinity_dense(plan)
    sums = w.sum(axis=1)
    bad = np.flatnonzero(sums <= 0.0)
    if bad.size:
        raise ValueError(f"row {int(bad[0])} has zero mass")
    rows = w / sums[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(rows > 0.0, np.log(rows), 0.0)
    h = -(rows * logs).sum(axis=1)
    return float(np.exp(h).mean())


def tune_epsilon_to_perplexity(
    c: CostMatrix,
    target: float,
    solver: str = "eot",
    tol: float = 0.1,
    bracket: tuple[float, float] = (1e-4, 1e4),
    sinkhorn_tol: float = 1e-8,
    sinkhorn_max_iters: int = 10000,
    max_bisections: int = 80,
) -> float:
    """Bisect log eps until the EOT plan's mean perplexity matches target.

    Mean perplexity is assumed monotone increasing in eps; a bracket whose
    endpoint values do not straddle the target raises with the observed
    values.
    """
    if solver != "eot":
        raise ValueError(f"unsupported solver {solver!r}; only 'eot' is available")
    n = c.n
    if not (1.0 < target < n - 1):
        raise ValueError(f"target perplexity must lie in (1, {n - 1})")
    lo, hi = bracket
    if not (0 < lo < hi):
        raise ValueError("bracket must satisfy 0 < lo < hi")

    def achieved(eps):
        _, w = sinkhorn_symmetric_hollow(c, eps, tol=sinkhorn_tol, max_iters=sinkhorn_max_iters)
        return mean_perplexity(w)

    f_lo, f_hi = achieved(lo), achieved(hi)
    if abs(f_lo - target) <= tol:
        return lo
    if abs(f_hi - target) <= tol:
        return hi
    if not (f_lo < target < f_hi):
        raise ValueError(
            f"bracket does not straddle the target: perplexity({lo:g}) = {f_lo:.3f}, "
            f"perplexity({hi:g}) = {f_hi:.3f}, target = {target:.3f}"
        )
    trace = [(lo, f_lo), (hi, f_hi)]
    for _ in range(max_bisections):
        mid = float(np.sqrt(lo * hi))
        f_mid = achieved(mid)
        trace.append((mid, f_mid))
        if abs(f_mid - target) <= tol:
            return mid
        if f_mid < target:
            if f_mid < f_lo - tol:
                raise ValueError(f"perplexity not monotone in eps; trace: {trace}")
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    raise ConvergenceError(
        f"perplexity bisection did not reach tol {tol:g}; trace: {trace}"
    )


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[c] = x[int(rng.integers(n))]
            continue
        probs = d2 / total
        centers[c] = x[int(rng.choice(n, p=probs))]
        d2 = np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1))
    inertia = np.inf
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(300):
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)
        for c in range(k):
            members = labels == c
            if not members.any():
                # re-seed an empty cluster from the farthest point
                far = int(dists[np.arange(n), labels].argmax())
                centers[c] = x[far]
                labels[far] = c
                members = labels == c
            centers[c] = x[members].mean(axis=0)
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = dists.argmin(axis=1)
        new_inertia = float(dists[np.arange(n), labels].sum())
        if inertia - new_inertia <= 1e-8 * max(inertia, 1e-300):
            inertia = new_inertia
            break
        inertia = new_inertia
    return labels, inertia


def kmeans(x: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> Labels:
    """Best-inertia k-means++ labelling over seeded restarts.

    Lloyd iterations run until the relative inertia change is below 1e-8;
    ties between restarts resolve to the lowest restart index.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k must lie in [1, {n}]")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    best_labels, best_inertia = None, np.inf
    for r in range(restarts):
        rng = np.random.default_rng((seed, r))
        labels, inertia = _kmeans_once(x, k, rng)
        if inertia < best_inertia:
            best_labels, best_inertia = labels, inertia
    return Labels(best_labels, k)


def nmi(a, b) -> float:
    """Normalised mutual information with arithmetic-mean normalisation.

    Conventions: 1 when both labelings have zero entropy, 0 when exactly
    one does.
    """
    av = label_values(a)
    bv = label_values(b)
    if av.size != bv.size:
        raise ValueError("labelings must have the same length")
    n = av.size
    if n == 0:
        raise ValueError("labelings must be nonempty")
    ka = int(av.max()) + 1
    kb = int(bv.max()) + 1
    joint = np.bincount(av * kb + bv, minlength=ka * kb).reshape(ka, kb) / n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)

    def entropy(p):
        pos = p[p > 0]
        return float(-(pos * np.log(pos)).sum())

    ha, hb = entropy(pa), entropy(pb)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    mask = joint > 0
    outer = pa[:, None] * pb[None, :]
    mi = float((joint[mask] * np.log(joint[mask] / outer[mask])).sum())
    return mi / (0.5 * (ha + hb))


def template_subspace(truth, k: int) -> np.ndarray:
    """Orthonormal cluster-indicator basis: column j is 1{y_i = j}/sqrt(n_j)."""
    y = label_values(truth)
    counts = np.bincount(y, minlength=k)
    if counts.size > k and counts[k:].any():
        raise ValueError("labels exceed the requested number of clusters")
    empty = np.flatnonzero(counts[:k] == 0)
    if empty.size:
        raise ValueError(f"cluster {int(empty[0])} is empty")
    u = np.zeros((y.size, k))
    u[np.arange(y.size), y] = 1.0 / np.sqrt(counts[y])
    return u


def cluster_eigenvectors(w, k: int) -> np.ndarray:
    """Spectral-clustering coordinates: eigenvectors of the k smallest
    Laplacian eigenvalues of the symmetric normalisation of w.

    The zero-eigenvalue eigenvectors are kept (for a bistochastic affinity
    the first is exactly constant, so it never influences k-means, and on a
    disconnected graph the component indicators are exactly what separates
    the pieces).
    """
    wbar = symmetric_normalize(w)
    lap = laplacian(wbar)
    es = eigenpairs_smallest(lap, k)
    return np.array(es.eigenvectors)


def spectral_cluster(w, k: int, seed: int = 0, restarts: int = 10) -> Labels:
    """Cluster an affinity by k-means on its leading Laplacian eigenvectors."""
    return kmeans(cluster_eigenvectors(w, k), k, seed=seed, restarts=restarts)
