"""Command-line harness: solvers, embeddings, clustering and experiments.

Exit codes: 0 on success, 2 when a solver misses its tolerance, 64 on
usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as exp
from . import io as qio
from .baselines import sinkhorn_symmetric_hollow
from .costs import mean_offdiag, pairwise_cost
from .errors import ConvergenceError, QrotError
from .solver import add_random_permutations, knn_support, solve_active_set, solve_dense
from .spectral import (
    eigenmap_embed,
    eigenpairs_smallest,
    laplacian,
    nmi,
    spectral_cluster,
    symmetric_normalize,
)
from .types import CostMatrix, DenseAffinity, SolverConfig, SparsePlan

EXIT_OK = 0
EXIT_TOLERANCE = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _usage_error(parser, message):
    parser.error(message)


def _load_cost(args, parser) -> CostMatrix:
    if (args.points is None) == (args.cost is None):
        _usage_error(parser, "provide exactly one of --points or --cost")
    if args.points is not None:
        cloud = qio.read_points_csv(args.points)
        return pairwise_cost(cloud.points, half_factor=False)
    cloud = qio.read_points_csv(args.cost)
    m = cloud.points
    if m.shape[0] != m.shape[1]:
        _usage_error(parser, f"cost matrix must be square, got {m.shape}")
    if not np.allclose(m, m.T, rtol=0, atol=1e-12):
        _usage_error(parser, "cost matrix must be symmetric (tolerance 1e-12)")
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 0.0)
    return CostMatrix(m)


def _resolve_eps(args, cost, parser) -> float:
    if (args.eps is None) == (args.eps_mean_scale is None):
        _usage_error(parser, "provide exactly one of --eps or --eps-mean-scale")
    if args.eps is not None:
        if args.eps <= 0:
            _usage_error(parser, "--eps must be positive")
        return args.eps
    if args.eps_mean_scale <= 0:
        _usage_error(parser, "--eps-mean-scale must be positive")
    return args.eps_mean_scale * mean_offdiag(cost)


def _cmd_solve(args, parser) -> int:
    cost = _load_cost(args, parser)
    eps = _resolve_eps(args, cost, parser)
    cfg = SolverConfig(
        epsilon=eps, newton_tol=args.tol, max_newton_iters=args.max_iters
    )
    diag = None
    try:
        if args.method == "qot-dense":
            u, plan, diag = solve_dense(cost, cfg)
        elif args.method == "qot-active":
            support = add_random_permutations(
                knn_support(cost, min(args.knn_init, cost.n - 1)), args.perm_init, args.seed
            )
            u, plan, diag = solve_active_set(cost, cfg, support)
        else:
            u, aff = sinkhorn_symmetric_hollow(
                cost, eps, tol=args.tol, max_iters=args.sinkhorn_max_iters
            )
            plan = SparsePlan.from_dense(aff.entries, feasible=True)
    except ConvergenceError as exc:
        if args.out_diag and exc.diagnostics is not None:
            qio.write_diagnostics_json(exc.diagnostics, args.out_diag)
        print(f"solve: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    if plan.max_row_violation() > args.tol:
        print("solve: produced plan violates the row-sum tolerance", file=sys.stderr)
        return EXIT_TOLERANCE
    if args.out_plan:
        qio.write_plan_coo(plan, args.out_plan, epsilon=eps)
    if args.out_potential:
        qio.write_potential_csv(u, args.out_potential)
    if args.out_diag and diag is not None:
        qio.write_diagnostics_json(diag, args.out_diag)
    print(
        json.dumps(
            {
                "method": args.method,
                "epsilon": eps,
                "support_size": plan.support_size,
                "row_violation": plan.max_row_violation(),
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def _load_affinity(args, parser):
    if (args.plan is None) == (args.affinity is None):
        _usage_error(parser, "provide exactly one of --plan or --affinity")
    if args.plan is not None:
        return qio.read_plan_coo(args.plan)
    m = qio.read_points_csv(args.affinity).points
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
        _usage_error(parser, "affinity must be a square symmetric matrix")
    m = 0.5 * (m + m.T)
    hollow = bool(np.all(np.diagonal(m) == 0.0))
    return DenseAffinity(m, hollow=hollow)


def _cmd_embed(args, parser) -> int:
    w = _load_affinity(args, parser)
    n = w.n
    if args.dims >= n:
        _usage_error(parser, f"--dims must be smaller than the point count {n}")
    wbar = symmetric_normalize(w)
    es = eigenpairs_smallest(laplacian(wbar), args.dims + 1)
    coords = eigenmap_embed(es, args.dims)
    qio.write_table_csv(
        args.out,
        [f"v{i + 2}" for i in range(args.dims)],
        coords,
    )
    return EXIT_OK


def _read_labels_csv(path) -> np.ndarray:
    values = qio.read_potential_csv(path)
    labels = values.astype(np.int64)
    if np.any(labels != values):
        raise QrotError("label file must contain integers")
    return labels


def _cmd_cluster(args, parser) -> int:
    plan = qio.read_plan_coo(args.plan)
    labels = spectral_cluster(plan, args.k, seed=args.seed, restarts=args.restarts)
    if args.labels_out:
        Path(args.labels_out).write_text(
            "\n".join(str(int(v)) for v in labels.assignments) + "\n",
            encoding="utf-8",
            newline="\n",
        )
    payload = {"k": args.k, "seed": args.seed}
    if args.truth:
        truth = _read_labels_csv(args.truth)
        payload["nmi"] = nmi(labels.assignments, truth)
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def _cmd_experiment(args, parser) -> int:
    out_dir = args.out_dir
    if args.subcommand == "spiral":
        grid = exp.log_grid(args.eps_min, args.eps_max, args.eps_per_decade)
        exp.run_spiral(
            n=args.n,
            d_ambient=args.d,
            seed=args.seed,
            eps_grid=grid,
            k_grid=args.k_grid,
            methods=args.methods,
            out_dir=out_dir,
        )
    elif args.subcommand == "gmm":
        for d in args.d:
            exp.run_gmm(
                per_cluster=args.per_cluster,
                d=d,
                seed=args.seed,
                eps_scale=args.eps_scale,
                k_grid=args.k_grid,
                out_dir=out_dir,
            )
    elif args.subcommand == "sphere-scaling":
        grid = np.logspace(
            np.log10(args.eps_min), np.log10(args.eps_max), args.eps_count
        )
        result = exp.run_sphere_scaling(
            dims=args.d, n=args.n, seed=args.seed, eps_grid=grid, out_dir=out_dir
        )
        print(
            json.dumps(
                {f"slope_d{d}": s["slope"] for d, s in result.extras["slopes"].items()},
                sort_keys=True,
            )
        )
    elif args.subcommand == "torus":
        exp.run_torus(
            n_values=args.n,
            alphas=args.alphas,
            repeats=args.repeats,
            seed=args.seed,
            eps_coeff=args.eps_coeff,
            scaling=args.scaling,
            out_dir=out_dir,
        )
    elif args.subcommand == "bench-newton":
        out = exp.run_bench_newton(n=args.n, seed=args.seed, out_dir=out_dir)
        print(json.dumps(out, sort_keys=True))
    elif args.subcommand == "bench-activeset":
        out = exp.run_bench_activeset(
            n=args.n,
            d=args.d,
            seed=args.seed,
            knn_init=args.knn_init,
            perm_init=args.perm_init,
            out_dir=out_dir,
        )
        print(json.dumps(out, sort_keys=True))
    else:  # pragma: no cover - argparse restricts choices
        _usage_error(parser, f"unknown experiment {args.subcommand!r}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="qrot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a bistochastic projection problem")
    p_solve.add_argument("--points", help="CSV of points, one row per point")
    p_solve.add_argument("--cost", help="CSV of a dense symmetric cost matrix")
    p_solve.add_argument("--eps", type=float, help="regularisation strength")
    p_solve.add_argument(
        "--eps-mean-scale",
        type=float,
        help="set eps = SCALE * mean cost (the recommended default heuristic is 1.0)",
    )
    p_solve.add_argument(
        "--method",
        choices=["qot-dense", "qot-active", "eot"],
        default="qot-dense",
    )
    p_solve.add_argument("--knn-init", type=int, default=10, help="active-set kNN support size")
    p_solve.add_argument("--perm-init", type=int, default=2, help="random permutations added to the support")
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--tol", type=float, default=1e-8, help="max row-sum violation")
    p_solve.add_argument("--max-iters", type=int, default=100)
    p_solve.add_argument("--sinkhorn-max-iters", type=int, default=10000)
    p_solve.add_argument("--out-plan")
    p_solve.add_argument("--out-potential")
    p_solve.add_argument("--out-diag")

    p_embed = sub.add_parser("embed", help="eigenmap embedding of a plan or affinity")
    p_embed.add_argument("--plan", help="COO plan file")
    p_embed.add_argument("--affinity", help="dense affinity CSV")
    p_embed.add_argument("--dims", type=int, required=True)
    p_embed.add_argument("--out", required=True)

    p_cluster = sub.add_parser("cluster", help="spectral clustering of a plan")
    p_cluster.add_argument("--plan", required=True)
    p_cluster.add_argument("--k", type=int, required=True)
    p_cluster.add_argument("--seed", type=int, default=0)
    p_cluster.add_argument("--restarts", type=int, default=10)
    p_cluster.add_argument("--labels-out")
    p_cluster.add_argument("--truth", help="ground-truth labels CSV for NMI")

    p_exp = sub.add_parser("experiment", help="run a desk-scale experiment")
    exp_sub = p_exp.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", required=True)

    p_spiral = exp_sub.add_parser("spiral")
    common(p_spiral)
    p_spiral.add_argument("--n", type=int, default=500)
    p_spiral.add_argument("--d", type=int, default=100)
    p_spiral.add_argument("--eps-min", type=float, default=1e-2)
    p_spiral.add_argument("--eps-max", type=float, default=1e2)
    p_spiral.add_argument("--eps-per-decade", type=int, default=20)
    p_spiral.add_argument("--k-grid", type=_int_list, default=list(exp.DEFAULT_KNN_GRID))
    p_spiral.add_argument(
        "--methods",
        type=lambda t: [tok for tok in t.split(",") if tok],
        default=list(exp.SPIRAL_METHODS),
    )

    p_gmm = exp_sub.add_parser("gmm")
    common(p_gmm)
    p_gmm.add_argument("--per-cluster", type=int, default=200)
    p_gmm.add_argument("--d", type=int, nargs="+", default=[10, 50])
    p_gmm.add_argument("--eps-scale", type=float, default=1.0)
    p_gmm.add_argument("--k-grid", type=_int_list, default=list(exp.DEFAULT_KNN_GRID))

    p_sphere = exp_sub.add_parser("sphere-scaling")
    common(p_sphere)
    p_sphere.add_argument("--d", type=int, nargs="+", default=[1, 2, 3])
    p_sphere.add_argument("--n", type=int, default=1000)
    p_sphere.add_argument("--eps-min", type=float, default=1e2)
    p_sphere.add_argument("--eps-max", type=float, default=1e6)
    p_sphere.add_argument("--eps-count", type=int, default=13)

    p_torus = exp_sub.add_parser("torus")
    common(p_torus)
    p_torus.add_argument("--n", type=int, nargs="+", default=[2500])
    p_torus.add_argument(
        "--alphas", type=float, nargs="+", default=[1.25, 1.5, 1.75, 2.0]
    )
    p_torus.add_argument("--repeats", type=int, default=10, help="25 matches the paper-scale protocol")
    p_torus.add_argument("--eps-coeff", type=float, default=1.0)
    p_torus.add_argument("--scaling", choices=["appendix", "theorem"], default="appendix")

    p_bn = exp_sub.add_parser("bench-newton")
    common(p_bn)
    p_bn.add_argument("--n", type=int, default=250)

    p_ba = exp_sub.add_parser("bench-activeset")
    common(p_ba)
    p_ba.add_argument("--n", type=int, default=2000)
    p_ba.add_argument("--d", type=int, default=50)
    p_ba.add_argument("--knn-init", type=int, default=50)
    p_ba.add_argument("--perm-init", type=int, default=2)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args, parser)
        if args.command == "embed":
            return _cmd_embed(args, parser)
        if args.command == "cluster":
            return _cmd_cluster(args, parser)
        if args.command == "experiment":
            return _cmd_experiment(args, parser)
    except ConvergenceError as exc:
        print(f"qrot: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except (QrotError, ValueError, OSError) as exc:
        print(f"qrot: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
