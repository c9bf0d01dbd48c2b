"""Sparse bistochastic affinities by quadratically regularised optimal transport.

The package builds hollow (zero-diagonal) symmetric bistochastic affinity
matrices as Frobenius projections of -C/eps, solved with a symmetric
semi-smooth Newton method (dense and active-set variants), plus entropic
and kernel baselines and a spectral pipeline for manifold-learning
experiments.
"""

from .asymptotics import (
    ManifoldSpec,
    approx_plan,
    c_d,
    fit_loglog_slope,
    k_eps_n,
    ot_laplacian_estimate,
)
from .baselines import (
    alternating_projection_bistochastic,
    epanechnikov_kernel,
    gaussian_kernel,
    knn_affinity,
    sinkhorn_symmetric_hollow,
)
from .costs import mean_offdiag, normalize_mean, pairwise_cost, rank_one_shift
from .datasets import (
    embed_with_noise,
    gmm_sample,
    sphere_sample,
    sphere_spec,
    spiral,
    torus_sample,
    torus_spec,
)
from .errors import ConvergenceError, CsvFormatError, InfeasibleSupportError, QrotError
from .solver import (
    add_random_permutations,
    dual_objective,
    frobenius_project,
    knn_support,
    newton_system_solve,
    plan_from_potential,
    solve_active_set,
    solve_dense,
)
from .spectral import (
    eigenmap_embed,
    eigenpairs_smallest,
    kmeans,
    laplacian,
    mean_perplexity,
    nmi,
    perplexity,
    principal_angles,
    spectral_cluster,
    symmetric_normalize,
    template_subspace,
    tune_epsilon_to_perplexity,
)
from .types import (
    CostMatrix,
    DenseAffinity,
    DualPotential,
    EigenSystem,
    ExperimentRecord,
    LabeledCloud,
    Labels,
    SolveDiagnostics,
    SolverConfig,
    SparsePlan,
    SupportMask,
)

__version__ = "0.1.0"
