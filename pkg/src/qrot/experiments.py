"""Desk-scale experiment drivers: spiral, GMM, sphere scaling, torus, benches.

Grid cells are independent and deterministically seeded from the base seed
and cell index; the QROT_WORKERS environment variable sets the process-pool
width (default 1, sequential).

Two regularisation conventions coexist deliberately. The data-driven
pipelines (spiral, gmm, benches) pass eps straight to the row-sums-one
solvers, matching the mean-cost heuristic eps = scale * Cbar. The
asymptotic pipelines (sphere-scaling, torus) express eps with plan mass
normalised to one, the convention of the scaling law K(eps, N); the solver
then runs at eps/N.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as qio
from .asymptotics import fit_loglog_slope, k_eps_n, ot_laplacian_estimate
from .baselines import (
    alternating_projection_bistochastic,
    epanechnikov_kernel,
    gaussian_kernel,
    knn_affinity,
    sinkhorn_symmetric_hollow,
)
from .costs import mean_offdiag, normalize_mean, pairwise_cost
from .datasets import embed_with_noise, gmm_sample, sphere_sample, spiral, torus_sample, torus_spec
from .errors import QrotError
from .solver import add_random_permutations, frobenius_project, knn_support, solve_active_set, solve_dense
from .spectral import (
    eigenpairs_smallest,
    laplacian,
    mean_perplexity,
    nmi,
    principal_angles,
    spectral_cluster,
    symmetric_normalize,
    template_subspace,
    tune_epsilon_to_perplexity,
)
from .types import ExperimentRecord, Labels, SolverConfig

DEFAULT_KNN_GRID = (5, 10, 15, 20, 25, 35, 50, 75, 100, 125)
SPIRAL_METHODS = ("qot", "eot", "knn", "gaussian", "epanechnikov", "gaussian-l2")


def log_grid(lo: float, hi: float, per_decade: int = 20) -> np.ndarray:
    """Log-spaced grid with both endpoints, ~per_decade points per decade."""
    if not (0 < lo < hi):
        raise ValueError("need 0 < lo < hi")
    decades = math.log10(hi / lo)
    count = max(2, int(round(decades * per_decade)) + 1)
    return np.logspace(math.log10(lo), math.log10(hi), count)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("QROT_WORKERS", "1")))
    except ValueError:
        return 1


_POOL_STATE: dict = {}


def _run_cells(fn, cells, state: dict):
    """Map fn over cells, optionally in a process pool (fork-shared state)."""
    workers = worker_count()
    global _POOL_STATE
    _POOL_STATE = state
    if workers == 1 or len(cells) <= 1:
        return [fn(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


def cell_seeds(base_seed: int, count: int) -> list[int]:
    """Deterministic per-cell seeds derived from the base seed."""
    state = np.random.SeedSequence(base_seed).generate_state(count)
    return [int(s) for s in state]


@dataclass
class GridResult:
    experiment: str
    rows: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def _laplacian_eigvecs(w, k: int) -> np.ndarray:
    wbar = symmetric_normalize(w)
    return np.array(eigenpairs_smallest(laplacian(wbar), k).eigenvectors)


# ---------------------------------------------------------------------------
# spiral


def _spiral_cell(cell):
    method, param, cell_seed = cell
    st = _POOL_STATE
    cost = st["cost"]
    ref = st["ref_vecs"]
    n_eigs = ref.shape[1]
    cfg = SolverConfig(epsilon=1.0, newton_tol=st["newton_tol"])
    try:
        if method == "qot":
            _, plan, _ = solve_dense(cost, SolverConfig(epsilon=param, newton_tol=st["newton_tol"]))
            w = plan
        elif method == "eot":
            _, w = sinkhorn_symmetric_hollow(
                cost, param, tol=st["newton_tol"], max_iters=st["sinkhorn_max_iters"]
            )
        elif method == "gaussian":
            w = gaussian_kernel(cost, param, hollow=False)
        elif method == "epanechnikov":
            w = epanechnikov_kernel(cost, param ** (2.0 / 3.0))
        elif method == "gaussian-l2":
            _, w, _ = frobenius_project(gaussian_kernel(cost, param, hollow=False).entries, cfg)
        elif method == "knn":
            w = knn_affinity(cost, int(param))
        else:
            raise ValueError(f"unknown method {method!r}")
        vecs = _laplacian_eigvecs(w, n_eigs)
        angle = float(np.mean(principal_angles(vecs, ref)))
        return {"method": method, "param": float(param), "angle": angle, "note": ""}
    except (QrotError, ValueError) as exc:
        return {"method": method, "param": float(param), "angle": float("nan"), "note": str(exc)}


def run_spiral(
    n: int = 500,
    d_ambient: int = 100,
    seed: int = 0,
    eps_grid=None,
    k_grid=DEFAULT_KNN_GRID,
    methods=SPIRAL_METHODS,
    newton_tol: float = 1e-8,
    sinkhorn_max_iters: int = 2000,
    n_eigs: int = 10,
    reference_k: int = 3,
    out_dir=None,
) -> GridResult:
    """Eigenspace-angle sweep of affinity constructions on the noisy spiral.

    The clean curve's k-NN (k=3) Laplacian provides the reference
    eigenspace; input costs are normalised to mean one so the eps grid is
    scale-free. Cells that fail (no convergence, isolated vertices) record
    a NaN angle and the reason.
    """
    t_start = time.perf_counter()
    if eps_grid is None:
        eps_grid = log_grid(1e-2, 1e2, 20)
    clean = spiral(n)
    ref_vecs = _laplacian_eigvecs(knn_affinity(pairwise_cost(clean.points), reference_k), n_eigs)
    noisy = embed_with_noise(clean, d_ambient, seed)
    cost, _ = normalize_mean(pairwise_cost(noisy.points))

    cells = []
    for method in methods:
        params = [float(k) for k in k_grid if k <= n - 1] if method == "knn" else list(eps_grid)
        cells.extend((method, p) for p in params)
    seeds = cell_seeds(seed, len(cells))
    cells = [(m, p, s) for (m, p), s in zip(cells, seeds)]
    state = {
        "cost": cost,
        "ref_vecs": ref_vecs,
        "newton_tol": newton_tol,
        "sinkhorn_max_iters": sinkhorn_max_iters,
    }
    rows = _run_cells(_spiral_cell, cells, state)
    result = GridResult("spiral", rows=rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = out / "spiral_angles.csv"
        qio.write_table_csv(
            table,
            ["method", "param", "angle", "note"],
            [(r["method"], r["param"], r["angle"], r["note"]) for r in rows],
        )
        finite = [r["angle"] for r in rows if np.isfinite(r["angle"])]
        record = ExperimentRecord(
            experiment="spiral",
            params={
                "n": n,
                "d_ambient": d_ambient,
                "methods": list(methods),
                "eps_grid": [float(e) for e in eps_grid],
                "k_grid": [int(k) for k in k_grid],
            },
            metrics={"best_angle": min(finite)} if finite else {},
            seed=seed,
            runtime_ms=(time.perf_counter() - t_start) * 1e3,
            artifact_paths=[str(table)],
        )
        qio.write_record_json(record, out / "spiral_record.json")
    return result


def best_angle(result: GridResult, method: str) -> float:
    vals = [r["angle"] for r in result.rows if r["method"] == method and np.isfinite(r["angle"])]
    if not vals:
        return float("nan")
    return min(vals)


def stable_span_decades(result: GridResult, method: str, factor: float = 2.0) -> float:
    """Widest contiguous eps span (in decades) with angle <= factor * minimum."""
    rows = sorted(
        (r for r in result.rows if r["method"] == method),
        key=lambda r: r["param"],
    )
    angles = np.array([r["angle"] for r in rows])
    params = np.array([r["param"] for r in rows])
    finite = np.isfinite(angles)
    if not finite.any():
        return 0.0
    bound = factor * angles[finite].min()
    good = finite & (angles <= bound)
    best = 0.0
    start = None
    for idx, flag in enumerate(good):
        if flag and start is None:
            start = idx
        if (not flag or idx == len(good) - 1) and start is not None:
            stop = idx if flag else idx - 1
            best = max(best, math.log10(params[stop] / params[start]))
            start = None
    return best


# ---------------------------------------------------------------------------
# gmm


def run_gmm(
    per_cluster: int = 200,
    d: int = 50,
    seed: int = 0,
    eps_scale: float = 1.0,
    k_grid=DEFAULT_KNN_GRID,
    methods=("qot", "eot", "knn"),
    newton_tol: float = 1e-8,
    perplexity_tol: float = 0.1,
    n_eigs: int = 6,
    out_dir=None,
) -> GridResult:
    """Spectral clustering of a 3-component Gaussian mixture.

    QOT runs at eps = eps_scale * mean cost; EOT is tuned to match QOT's
    mean perplexity; k-NN sweeps its grid. Reports NMI against the true
    labels and the mean principal angle between the leading 2k = 6
    Laplacian eigenvectors and the cluster-template subspace.
    """
    t_start = time.perf_counter()
    cloud = gmm_sample(per_cluster, d, seed)
    cost = pairwise_cost(cloud.points)
    cbar = mean_offdiag(cost)
    truth = Labels(cloud.labels, 3)
    template = template_subspace(truth, 3)
    seeds = cell_seeds(seed, len(k_grid) + 2)

    def metrics(w, cell_seed):
        labels = spectral_cluster(w, 3, seed=cell_seed, restarts=10)
        vecs = _laplacian_eigvecs(w, n_eigs)
        return {
            "nmi": nmi(labels, truth),
            "template_angle": float(np.mean(principal_angles(vecs, template))),
        }

    rows = []
    qot_perplexity = None
    if "qot" in methods:
        eps = eps_scale * cbar
        _, plan, _ = solve_dense(cost, SolverConfig(epsilon=eps, newton_tol=newton_tol))
        qot_perplexity = mean_perplexity(plan)
        rows.append({"method": "qot", "param": eps, "note": "", **metrics(plan, seeds[0])})
    if "eot" in methods:
        target = qot_perplexity
        if target is None:
            eps = eps_scale * cbar
            _, plan, _ = solve_dense(cost, SolverConfig(epsilon=eps, newton_tol=newton_tol))
            target = mean_perplexity(plan)
        try:
            eps_eot = tune_epsilon_to_perplexity(
                cost, target, tol=perplexity_tol, bracket=(1e-4 * cbar, 1e4 * cbar)
            )
            _, w = sinkhorn_symmetric_hollow(cost, eps_eot)
            rows.append({"method": "eot", "param": eps_eot, "note": "", **metrics(w, seeds[1])})
        except QrotError as exc:
            rows.append(
                {
                    "method": "eot",
                    "param": float("nan"),
                    "nmi": float("nan"),
                    "template_angle": float("nan"),
                    "note": str(exc),
                }
            )
    if "knn" in methods:
        for idx, k in enumerate(k for k in k_grid if k <= cloud.n - 1):
            w = knn_affinity(cost, int(k))
            rows.append({"method": "knn", "param": float(k), "note": "", **metrics(w, seeds[2 + idx])})
    result = GridResult("gmm", rows=rows, extras={"cbar": cbar, "qot_perplexity": qot_perplexity})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = out / f"gmm_d{d}_metrics.csv"
        qio.write_table_csv(
            table,
            ["method", "param", "nmi", "template_angle", "note"],
            [(r["method"], r["param"], r["nmi"], r["template_angle"], r["note"]) for r in rows],
        )
        finite = {
            f"nmi_{r['method']}": r["nmi"]
            for r in rows
            if r["method"] in ("qot", "eot") and np.isfinite(r["nmi"])
        }
        record = ExperimentRecord(
            experiment="gmm",
            params={"per_cluster": per_cluster, "d": d, "eps_scale": eps_scale},
            metrics=finite,
            seed=seed,
            runtime_ms=(time.perf_counter() - t_start) * 1e3,
            artifact_paths=[str(table)],
        )
        qio.write_record_json(record, out / f"gmm_d{d}_record.json")
    return result


# ---------------------------------------------------------------------------
# sphere scaling


def run_sphere_scaling(
    dims=(1, 2, 3),
    n: int = 1000,
    seed: int = 0,
    eps_grid=None,
    newton_tol: float = 1e-8,
    out_dir=None,
) -> GridResult:
    """Scaling of the mean optimal potential with eps on unit spheres.

    eps values are in mass-one units (the scaling-law convention), so the
    solver runs at eps/n. The fitted log-log slope over the upper half of
    the grid is expected near 2/(2+d).
    """
    t_start = time.perf_counter()
    if eps_grid is None:
        eps_grid = np.logspace(2, 6, 13)
    eps_grid = np.asarray(eps_grid, dtype=np.float64)
    half = len(eps_grid) // 2
    rows = []
    slopes = {}
    for d in dims:
        cloud = sphere_sample(n, d, seed + d)
        cost = pairwise_cost(cloud.points)
        mean_us = []
        for eps in eps_grid:
            cfg = SolverConfig(epsilon=float(eps) / n, newton_tol=newton_tol)
            u, _, diag = solve_dense(cost, cfg)
            mean_u = float(u.values.mean())
            mean_us.append(mean_u)
            rows.append(
                {
                    "d": d,
                    "eps": float(eps),
                    "mean_u": mean_u,
                    "newton_iters": diag.newton_iters,
                }
            )
        slope, intercept, r2 = fit_loglog_slope(eps_grid, mean_us, window=(half, len(eps_grid)))
        slopes[d] = {"slope": slope, "intercept": intercept, "r2": r2, "expected": 2.0 / (2.0 + d)}
    result = GridResult("sphere-scaling", rows=rows, extras={"slopes": slopes})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = out / "sphere_potentials.csv"
        qio.write_table_csv(
            table,
            ["d", "eps", "mean_u", "newton_iters"],
            [(r["d"], r["eps"], r["mean_u"], r["newton_iters"]) for r in rows],
        )
        slope_table = out / "sphere_slopes.csv"
        qio.write_table_csv(
            slope_table,
            ["d", "slope", "expected", "r2"],
            [(d, s["slope"], s["expected"], s["r2"]) for d, s in sorted(slopes.items())],
        )
        record = ExperimentRecord(
            experiment="sphere-scaling",
            params={"dims": list(dims), "n": n, "eps_grid": [float(e) for e in eps_grid]},
            metrics={f"slope_d{d}": s["slope"] for d, s in slopes.items()},
            seed=seed,
            runtime_ms=(time.perf_counter() - t_start) * 1e3,
            artifact_paths=[str(table), str(slope_table)],
        )
        qio.write_record_json(record, out / "sphere_record.json")
    return result


# ---------------------------------------------------------------------------
# torus


def torus_test_function(p) -> float:
    """Quadratic probe f(x, y, z) = (3x^2 + 5y^2 + 7z^2)/2."""
    return 0.5 * (3.0 * p[0] ** 2 + 5.0 * p[1] ** 2 + 7.0 * p[2] ** 2)


def run_torus(
    n_values=(2500,),
    alphas=(1.25, 1.5, 1.75, 2.0),
    repeats: int = 10,
    seed: int = 0,
    big_radius: float = 1.0,
    small_radius: float = 0.5,
    eps_coeff: float = 1.0,
    scaling: str = "appendix",
    out_dir=None,
) -> GridResult:
    """Laplace-type estimates at a fixed torus point for eps ~ N^alpha.

    The distinguished point sits at poloidal and toroidal angles pi/2; each
    repeat appends it to a fresh uniform sample and evaluates the
    first-order-plan estimate at the quadratic probe function.
    """
    t_start = time.perf_counter()
    spec = torus_spec(big_radius, small_radius)
    x0 = np.array([0.0, big_radius, small_radius])
    cells = [(n, alpha, rep) for n in n_values for alpha in alphas for rep in range(repeats)]
    seeds = cell_seeds(seed, len(cells))
    rows = []
    for (n, alpha, rep), cell_seed in zip(cells, seeds):
        cloud = torus_sample(n, big_radius, small_radius, seed=cell_seed)
        pts = np.vstack([x0[None, :], cloud.points])
        eps = eps_coeff * float(n) ** alpha
        estimate = ot_laplacian_estimate(pts, 0, torus_test_function, spec, eps, scaling=scaling)
        rows.append(
            {
                "N": n,
                "alpha": alpha,
                "epsilon": eps,
                "K": k_eps_n(spec, eps, n),
                "estimate": estimate,
                "seed": cell_seed,
            }
        )
    result = GridResult("torus", rows=rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = out / "torus_estimates.csv"
        qio.write_table_csv(
            table,
            ["N", "alpha", "epsilon", "K", "estimate", "seed"],
            [(r["N"], r["alpha"], r["epsilon"], r["K"], r["estimate"], r["seed"]) for r in rows],
        )
        record = ExperimentRecord(
            experiment="torus",
            params={
                "n_values": list(n_values),
                "alphas": list(alphas),
                "repeats": repeats,
                "eps_coeff": eps_coeff,
                "scaling": scaling,
            },
            metrics={},
            seed=seed,
            runtime_ms=(time.perf_counter() - t_start) * 1e3,
            artifact_paths=[str(table)],
        )
        qio.write_record_json(record, out / "torus_record.json")
    return result


def torus_alpha_means(result: GridResult, n: int):
    """Per-alpha mean and standard error of the estimates at sample size n."""
    stats = {}
    for row in result.rows:
        if row["N"] != n:
            continue
        stats.setdefault(row["alpha"], []).append(row["estimate"])
    out = {}
    for alpha, vals in stats.items():
        arr = np.asarray(vals)
        sem = arr.std(ddof=1) / math.sqrt(arr.size) if arr.size > 1 else float("inf")
        out[alpha] = (float(arr.mean()), float(sem))
    return out


# ---------------------------------------------------------------------------
# benches


def run_bench_newton(
    n: int = 250,
    seed: int = 0,
    newton_tol: float = 1e-8,
    ap_tol: float = 1e-6,
    ap_max_iters: int = 200000,
    out_dir=None,
) -> dict:
    """Newton vs alternating projections on a symmetrised Gaussian matrix.

    Newton solves the hollow Frobenius projection to max row violation
    newton_tol; alternating projections run to L2 violation ap_tol.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, n))
    m = 0.5 * (g + g.T)
    t0 = time.perf_counter()
    _, _, diag = frobenius_project(m, SolverConfig(epsilon=1.0, newton_tol=newton_tol))
    newton_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    _, history = alternating_projection_bistochastic(m, tol=ap_tol, max_iters=ap_max_iters)
    ap_time = time.perf_counter() - t0
    out = {
        "n": n,
        "newton_iters": diag.newton_iters,
        "newton_violation": diag.final_row_violation,
        "newton_seconds": newton_time,
        "ap_iters": len(history) - 1,
        "ap_violation": history[-1],
        "ap_seconds": ap_time,
        "iteration_ratio": (len(history) - 1) / max(1, diag.newton_iters),
    }
    if out_dir is not None:
        outp = Path(out_dir)
        outp.mkdir(parents=True, exist_ok=True)
        table = outp / "bench_newton_history.csv"
        qio.write_table_csv(table, ["iteration", "ap_violation"], list(enumerate(history)))
        record = ExperimentRecord(
            experiment="bench-newton",
            params={"n": n, "newton_tol": newton_tol, "ap_tol": ap_tol},
            metrics={k: v for k, v in out.items() if k != "n"},
            seed=seed,
            runtime_ms=(newton_time + ap_time) * 1e3,
            artifact_paths=[str(table)],
        )
        qio.write_record_json(record, outp / "bench_newton_record.json")
    return out


def run_bench_activeset(
    n: int = 2000,
    d: int = 50,
    seed: int = 0,
    eps_scale: float = 1.0,
    knn_init: int = 50,
    perm_init: int = 2,
    newton_tol: float = 1e-8,
    out_dir=None,
) -> dict:
    """Dense vs active-set solver on a Gaussian cloud at eps = scale * Cbar.

    Support initialisation time (k-NN plus random permutations) is charged
    to the active-set solver.
    """
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, d))
    cost = pairwise_cost(pts)
    eps = eps_scale * mean_offdiag(cost)
    cfg = SolverConfig(epsilon=eps, newton_tol=newton_tol)
    t0 = time.perf_counter()
    _, plan_dense, diag_dense = solve_dense(cost, cfg)
    dense_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    support = add_random_permutations(knn_support(cost, knn_init), perm_init, seed)
    _, plan_active, diag_active = solve_active_set(cost, cfg, support)
    active_time = time.perf_counter() - t0
    frob = float(np.linalg.norm(plan_dense.to_dense() - plan_active.to_dense()))
    out = {
        "n": n,
        "d": d,
        "epsilon": eps,
        "dense_seconds": dense_time,
        "active_seconds": active_time,
        "speedup": dense_time / active_time if active_time > 0 else float("inf"),
        "frobenius_difference": frob,
        "dense_newton_iters": diag_dense.newton_iters,
        "active_newton_iters": diag_active.newton_iters,
        "active_outer_iters": diag_active.outer_iters,
        "support_size": diag_active.support_size,
    }
    if out_dir is not None:
        outp = Path(out_dir)
        outp.mkdir(parents=True, exist_ok=True)
        record = ExperimentRecord(
            experiment="bench-activeset",
            params={"n": n, "d": d, "knn_init": knn_init, "perm_init": perm_init},
            metrics={k: v for k, v in out.items() if k not in ("n", "d")},
            seed=seed,
            runtime_ms=(dense_time + active_time) * 1e3,
            artifact_paths=[],
        )
        qio.write_record_json(record, outp / "bench_activeset_record.json")
    return out
