"""Hollow quadratically regularised OT: dual solvers and support utilities.

The primal problem is the Frobenius projection of -C/eps onto the set of
hollow symmetric bistochastic matrices,

    min_{A} ||A + C/eps||_F^2   s.t.  A = A^T, A >= 0, diag A = 0, A 1 = 1,

solved through its piecewise-smooth dual in a single potential u,

    Phi(u) = -<u, 1> + (1/4 eps) sum_{i != j} ([u_i + u_j - C_ij]_+)^2,

with a semi-smooth Newton method: the active pattern sigma_ij = 1{u_i + u_j
- C_ij >= 0} defines the generalised Hessian (sigma + diag(sigma 1) + delta I)
/ eps, and an Armijo backtracking line search guards each step. The plan is
recovered as pi_ij = [u_i + u_j - C_ij]_+ / eps off the diagonal.

The active-set variant runs the same Newton iteration restricted to a sparse
support S (equivalent to an infinite cost off-support), grows S with the
support of the unrestricted plan, and stops when the unrestricted plan is
bistochastic.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, InfeasibleSupportError
from .types import (
    CostMatrix,
    DualPotential,
    SolveDiagnostics,
    SolverConfig,
    SparsePlan,
    SupportMask,
    potential_values,
)

_MAX_BACKTRACKS = 60
_MAX_OUTER_ITERS = 50
_DIVERGENCE_FACTOR = 1e8
_SPARSE_DENSITY_CUTOFF = 0.25


def _scatter_sum(idx: np.ndarray, weights, n: int) -> np.ndarray:
    # bincount returns int64 for empty weights; force float64 accumulators
    return np.bincount(idx, weights=weights, minlength=n).astype(np.float64, copy=False)


def _cost_array(c) -> np.ndarray:
    if isinstance(c, CostMatrix):
        return c.entries
    a = np.asarray(c, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("cost must be a square matrix")
    return a


def dual_objective(u, c, epsilon: float) -> float:
    """Dual objective Phi(u), diagonal excluded from the positive part."""
    uv = potential_values(u)
    ca = _cost_array(c)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if uv.shape[0] != ca.shape[0]:
        raise ValueError("potential length does not match cost size")
    if not (np.all(np.isfinite(uv)) and np.all(np.isfinite(ca))):
        raise ValueError("non-finite input")
    p = uv[:, None] + uv[None, :] - ca
    np.fill_diagonal(p, -np.inf)
    pos = np.maximum(p, 0.0)
    return float(-uv.sum() + (pos * pos).sum() / (4.0 * epsilon))


def plan_from_potential(u, c, epsilon: float, feasible_tol: float | None = None) -> SparsePlan:
    """Recover the plan pi = [u_i + u_j - C_ij]_+ / eps, zero diagonal.

    Only strictly positive entries are stored. The feasible flag is set
    only when ``feasible_tol`` is given and the max row-sum violation is
    within it.
    """
    uv = potential_values(u)
    ca = _cost_array(c)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    p = uv[:, None] + uv[None, :] - ca
    np.fill_diagonal(p, -np.inf)
    plan = SparsePlan.from_dense(np.maximum(p, 0.0) / epsilon)
    if feasible_tol is not None and plan.max_row_violation() <= feasible_tol:
        plan = dataclasses.replace(plan, feasible=True)
    return plan


def _cg(matvec, b: np.ndarray, tol: float, maxiter: int):
    """Conjugate gradient for SPD systems; returns (x, iters, converged).

    Stops when the residual norm drops below tol * ||b||; on iteration
    exhaustion the best iterate so far is returned with converged=False.
    """
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, 0, True
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    target = tol * bnorm
    for k in range(1, maxiter + 1):
        ap = matvec(p)
        denom = float(p @ ap)
        if denom <= 0.0:
            # numerically lost positive definiteness; stop with best iterate
            return x, k, False
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= target:
            return x, k, True
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, maxiter, False


def newton_system_solve(
    sigma: SupportMask,
    rhs,
    delta: float,
    cg_tol: float = 1e-10,
    cg_max_iters: int | None = None,
):
    """Solve (sigma + diag(sigma 1) + delta I) x = rhs by conjugate gradient.

    The system matrix is diagonally dominant plus delta I, hence symmetric
    positive definite. If the iteration budget runs out before the residual
    target, a warning is issued and the best iterate is returned (degraded
    mode; callers may proceed with it).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    b = np.asarray(rhs, dtype=np.float64)
    n = sigma.n
    if b.shape != (n,):
        raise ValueError(f"rhs must have shape ({n},)")
    deg = sigma.row_degrees().astype(np.float64)
    ia, ja = sigma.rows, sigma.cols

    def matvec(x):
        y = _scatter_sum(ia, x[ja], n)
        y += _scatter_sum(ja, x[ia], n)
        y += (deg + delta) * x
        return y

    maxiter = cg_max_iters if cg_max_iters is not None else 10 * n
    x, iters, ok = _cg(matvec, b, cg_tol, maxiter)
    if not ok:
        warnings.warn(
            f"conjugate gradient stopped at {iters} iterations above the "
            "residual target; returning best iterate",
            RuntimeWarning,
            stacklevel=2,
        )
    return x


def _hessian_matvec(sigma: np.ndarray, deg: np.ndarray, delta: float, n: int):
    """Pick a dense or CSR representation of sigma by density."""
    nnz = float(deg.sum())
    if n <= 256 or nnz >= _SPARSE_DENSITY_CUTOFF * n * n:
        sf = sigma.astype(np.float64)

        def matvec(x):
            return sf @ x + (deg + delta) * x

    else:
        sm = sp.csr_matrix(sigma)

        def matvec(x):
            return sm @ x + (deg + delta) * x

    return matvec


def _solve_dense_array(cost, cfg, u0=None, callback=None):
    n = cost.shape[0]
    if n < 2:
        raise ValueError("no feasible hollow plan exists for fewer than 2 points")
    eps = cfg.epsilon
    u = np.ones(n) if u0 is None else np.array(potential_values(u0), dtype=np.float64)
    if u.shape != (n,):
        raise ValueError("u0 length does not match the cost size")
    cg_max = cfg.resolved_cg_max_iters(n)
    diag = SolveDiagnostics()

    def phi_of(uvec):
        p = uvec[:, None] + uvec[None, :] - cost
        np.fill_diagonal(p, -np.inf)
        pos = np.maximum(p, 0.0)
        return float(-uvec.sum() + (pos * pos).sum() / (4.0 * eps))

    for it in range(cfg.max_newton_iters + 1):
        p = u[:, None] + u[None, :] - cost
        np.fill_diagonal(p, -np.inf)
        pi = np.maximum(p, 0.0) / eps
        row = pi.sum(axis=1)
        viol = float(np.abs(row - 1.0).max())
        phi = float(-u.sum() + eps * (pi * pi).sum() / 4.0)
        if callback is not None:
            callback(u.copy(), phi)
        if viol <= cfg.newton_tol:
            diag.newton_iters = it
            diag.final_row_violation = viol
            diag.dual_objective = phi
            plan = plan_from_potential(u, cost, eps, feasible_tol=cfg.newton_tol)
            diag.support_size = plan.support_size
            return DualPotential(u), plan, diag
        if it >= cfg.max_newton_iters:
            diag.newton_iters = it
            diag.final_row_violation = viol
            diag.dual_objective = phi
            plan = plan_from_potential(u, cost, eps)
            diag.support_size = plan.support_size
            raise ConvergenceError(
                f"Newton stopped after {it} iterations with row-sum violation "
                f"{viol:.3e} above tolerance {cfg.newton_tol:.1e}",
                potential=DualPotential(u),
                plan=plan,
                diagnostics=diag,
            )
        sigma = p >= 0.0
        deg = sigma.sum(axis=1).astype(np.float64)
        matvec = _hessian_matvec(sigma, deg, cfg.delta, n)
        rhs = -eps * (row - 1.0)
        du, _, cg_ok = _cg(matvec, rhs, cfg.cg_tol, cg_max)
        if not cg_ok:
            diag.cg_failures += 1
        d = 2.0 * eps * float((row - 1.0) @ du)
        if d >= 0.0:
            # defensive: fall back to steepest descent on Phi
            du = -(row - 1.0)
            d = -2.0 * eps * float((row - 1.0) @ (row - 1.0))
        # d carries a 2 eps factor on top of the directional derivative of
        # Phi; the acceptance test must use the true slope or it becomes
        # infeasible for eps > 1/(2 theta)
        slope = d / (2.0 * eps)
        t = 1.0
        backtracks = 0
        # slack absorbs rounding of Phi once the true decrease is below
        # double-precision resolution near the optimum
        fp_slack = 1e-12 * (1.0 + abs(phi))
        while phi_of(u + t * du) >= phi + t * cfg.theta * slope + fp_slack:
            t *= cfg.kappa
            backtracks += 1
            if backtracks >= _MAX_BACKTRACKS:
                diag.newton_iters = it
                diag.final_row_violation = viol
                diag.dual_objective = phi
                raise ConvergenceError(
                    "Armijo line search failed to find a decrease",
                    potential=DualPotential(u),
                    plan=plan_from_potential(u, cost, eps),
                    diagnostics=diag,
                )
        diag.line_search_backtracks.append(backtracks)
        u = u + t * du


def solve_dense(c: CostMatrix, cfg: SolverConfig, u0=None, callback=None):
    """Solve the hollow QOT dual on the full cost matrix.

    Parameters
    ----------
    c : CostMatrix
    cfg : SolverConfig
    u0 : optional warm-start potential; all-ones when absent.
    callback : optional ``callback(u, phi)`` invoked at each accepted iterate.

    Returns
    -------
    (DualPotential, SparsePlan, SolveDiagnostics); the plan satisfies
    max_i |sum_j pi_ij - 1| <= cfg.newton_tol. Raises ConvergenceError
    (carrying the best iterate) when the iteration cap is reached.
    """
    return _solve_dense_array(_cost_array(c), cfg, u0=u0, callback=callback)


def frobenius_project(m, cfg: SolverConfig | None = None):
    """Frobenius projection of a symmetric matrix onto hollow bistochastic.

    Equivalent to the QOT solve with cost -M and eps = 1; entries of M may
    have either sign. Tolerances may be overridden through ``cfg`` (its
    epsilon is ignored and forced to 1).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("input must be a square matrix")
    if not np.allclose(m, m.T, rtol=0.0, atol=0.0):
        raise ValueError("input must be symmetric")
    if m.shape[0] < 2:
        raise ValueError("no feasible hollow plan exists for fewer than 2 points")
    if cfg is None:
        cfg = SolverConfig(epsilon=1.0)
    elif cfg.epsilon != 1.0:
        cfg = dataclasses.replace(cfg, epsilon=1.0)
    cost = -m.copy()
    np.fill_diagonal(cost, 0.0)
    return _solve_dense_array(cost, cfg)


def knn_support(c: CostMatrix, k: int) -> SupportMask:
    """Symmetrised k-nearest-neighbour pattern; ties break to smaller index."""
    n = c.n
    if not (1 <= k <= n - 1):
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    d = c.entries.copy()
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    nbrs = order[:, :k]
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = nbrs.ravel().astype(np.int64)
    rows = np.minimum(src, dst)
    cols = np.maximum(src, dst)
    return SupportMask(n, rows, cols)


def add_random_permutations(s: SupportMask, count: int, seed: int) -> SupportMask:
    """Union with the symmetrised supports of random fixed-point-free permutations.

    Permutations with any fixed point are redrawn, so every added matrix is a
    derangement (cycles of length >= 2) and covers every row. Deterministic
    for a fixed seed.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0:
        return s
    n = s.n
    if n < 2:
        raise ValueError("derangements need at least 2 elements")
    rng = np.random.default_rng(seed)
    idx = np.arange(n)
    rows = [s.rows]
    cols = [s.cols]
    for _ in range(count):
        perm = rng.permutation(n)
        while np.any(perm == idx):
            perm = rng.permutation(n)
        rows.append(np.minimum(idx, perm).astype(np.int64))
        cols.append(np.maximum(idx, perm).astype(np.int64))
    return SupportMask(n, np.concatenate(rows), np.concatenate(cols))


def _solve_restricted(cost, cfg, u0, i_idx, j_idx, diag, u_cap):
    """Newton iteration confined to the support pairs (i_idx, j_idx).

    Returns (status, u) with status in {"converged", "max_iters",
    "diverged"}; never raises, so the outer active-set loop can decide
    whether growing the support rescues a stalled restricted problem.
    """
    n = cost.shape[0]
    eps = cfg.epsilon
    cvals = cost[i_idx, j_idx]
    u = u0.copy()
    cg_max = cfg.resolved_cg_max_iters(n)

    def phi_of(uvec):
        pos = np.maximum(uvec[i_idx] + uvec[j_idx] - cvals, 0.0)
        return float(-uvec.sum() + (pos @ pos) / (2.0 * eps))

    for it in range(cfg.max_newton_iters + 1):
        p = u[i_idx] + u[j_idx] - cvals
        pos = np.maximum(p, 0.0)
        pv = pos / eps
        row = _scatter_sum(i_idx, pv, n)
        row += _scatter_sum(j_idx, pv, n)
        viol = float(np.abs(row - 1.0).max())
        if viol <= cfg.newton_tol:
            return "converged", u
        if np.abs(u).max() > u_cap:
            return "diverged", u
        if it >= cfg.max_newton_iters:
            return "max_iters", u
        act = p >= 0.0
        ia, ja = i_idx[act], j_idx[act]
        deg = np.bincount(ia, minlength=n).astype(np.float64)
        deg += np.bincount(ja, minlength=n)

        def matvec(x):
            y = _scatter_sum(ia, x[ja], n)
            y += _scatter_sum(ja, x[ia], n)
            y += (deg + cfg.delta) * x
            return y

        rhs = -eps * (row - 1.0)
        du, _, cg_ok = _cg(matvec, rhs, cfg.cg_tol, cg_max)
        if not cg_ok:
            diag.cg_failures += 1
        d = 2.0 * eps * float((row - 1.0) @ du)
        if d >= 0.0:
            du = -(row - 1.0)
            d = -2.0 * eps * float((row - 1.0) @ (row - 1.0))
        slope = d / (2.0 * eps)
        phi = phi_of(u)
        t = 1.0
        backtracks = 0
        fp_slack = 1e-12 * (1.0 + abs(phi))
        while phi_of(u + t * du) >= phi + t * cfg.theta * slope + fp_slack:
            t *= cfg.kappa
            backtracks += 1
            if backtracks >= _MAX_BACKTRACKS:
                return "max_iters", u
        diag.line_search_backtracks.append(backtracks)
        diag.newton_iters += 1
        u = u + t * du


def solve_active_set(c: CostMatrix, cfg: SolverConfig, s0: SupportMask):
    """Active-set accelerator for the hollow QOT dual.

    Solves the dual restricted to the support S (all sums over S only),
    then re-evaluates [u_i + u_j - C_ij]_+ on all pairs: if the resulting
    plan is bistochastic within tolerance we are done, otherwise S grows by
    the unrestricted support and the restricted solve resumes from the
    current potential. Supports only ever grow.
    """
    cost = _cost_array(c)
    n = cost.shape[0]
    if n < 2:
        raise ValueError("no feasible hollow plan exists for fewer than 2 points")
    if s0.n != n:
        raise ValueError("support size does not match the cost matrix")
    if np.any(s0.row_degrees() == 0):
        empty = int(np.argmin(s0.row_degrees()))
        raise ValueError(f"initial support row {empty} is empty")
    eps = cfg.epsilon
    u_cap = _DIVERGENCE_FACTOR * (1.0 + float(cost.max()))
    keys = s0.rows * np.int64(n) + s0.cols
    keys = np.unique(keys)
    u = np.ones(n)
    diag = SolveDiagnostics()
    iu, ju = np.triu_indices(n, k=1)

    for outer in range(1, _MAX_OUTER_ITERS + 1):
        i_idx, j_idx = keys // n, keys % n
        status, u = _solve_restricted(cost, cfg, u, i_idx, j_idx, diag, u_cap)
        diag.outer_iters = outer
        pfull = u[iu] + u[ju] - cost[iu, ju]
        pos = np.maximum(pfull, 0.0) / eps
        row = _scatter_sum(iu, pos, n)
        row += _scatter_sum(ju, pos, n)
        viol = float(np.abs(row - 1.0).max())
        if viol <= cfg.newton_tol:
            keep = pos > 0.0
            plan = SparsePlan(n, iu[keep], ju[keep], pos[keep], feasible=True)
            diag.final_row_violation = viol
            diag.dual_objective = dual_objective(u, cost, eps)
            diag.support_size = plan.support_size
            return DualPotential(u), plan, diag
        new_keys = np.union1d(keys, (iu * np.int64(n) + ju)[pfull > 0.0])
        if new_keys.size == keys.size:
            diag.final_row_violation = viol
            if status == "diverged":
                raise InfeasibleSupportError(
                    "restricted dual diverged and the support cannot grow; "
                    "provide a larger or denser initial support",
                    potential=DualPotential(np.where(np.isfinite(u), u, 0.0)),
                    diagnostics=diag,
                )
            raise ConvergenceError(
                f"active set stalled with row-sum violation {viol:.3e}",
                potential=DualPotential(u),
                plan=plan_from_potential(u, cost, eps),
                diagnostics=diag,
            )
        keys = new_keys

    diag.final_row_violation = viol
    raise ConvergenceError(
        f"active set reached {_MAX_OUTER_ITERS} outer iterations",
        potential=DualPotential(u),
        plan=plan_from_potential(u, cost, eps),
        diagnostics=diag,
    )
