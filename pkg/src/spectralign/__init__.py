"""spectralign: graph semi-supervised learning via aligned spectral embeddings.

Label propagation is recast as a rescaled quadratic program over matrices
with orthonormal columns, initialized by orthogonal Procrustes alignment of
a Laplacian eigenmap, refined by a sequential subspace solver and
Kernighan-Lin cuts, with a grounded-spectral score for active label
selection.
"""

from .graphs import (
    Graph,
    LabelSet,
    build_knn_graph,
    gen_barbell,
    gen_gaussian_ring,
    grounded_blocks,
    laplacian,
    load_features,
    load_graph,
    load_labels,
    save_features,
    save_graph,
    save_labels,
)
from .linalg import (
    EigenPairs,
    LinOp,
    cg_solve,
    project_onto_cone,
    projected_shifted_pinv_apply,
    smallest_eigenpairs,
    stiefel_project,
)
from .problem import (
    PartitionedProblem,
    Prediction,
    StiefelQuadratic,
    assemble,
    decode,
    encode_labels,
    global_certificate,
    laplace_learning,
)
from .align import approx_solve, eigenmap_embed, le_ssl_baseline, procrustes_align
from .ssm import SsmConfig, SolverState, pgd_armijo, ssm_solve
from .refine import kl_refine, kl_pass, cut_cost, pair_gain, vertex_gain
from .active import ActiveState, combined_score, grounded_score, margin, query
from .estimators import (
    EigenmapRegression,
    LaplaceLearning,
    ProcrustesSSL,
    SSMClassifier,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveState",
    "EigenPairs",
    "EigenmapRegression",
    "Graph",
    "LabelSet",
    "LaplaceLearning",
    "LinOp",
    "PartitionedProblem",
    "Prediction",
    "ProcrustesSSL",
    "SSMClassifier",
    "SolverState",
    "SsmConfig",
    "StiefelQuadratic",
    "approx_solve",
    "assemble",
    "build_knn_graph",
    "cg_solve",
    "combined_score",
    "cut_cost",
    "decode",
    "eigenmap_embed",
    "encode_labels",
    "gen_barbell",
    "gen_gaussian_ring",
    "global_certificate",
    "grounded_blocks",
    "grounded_score",
    "kl_pass",
    "kl_refine",
    "laplace_learning",
    "laplacian",
    "le_ssl_baseline",
    "load_features",
    "load_graph",
    "load_labels",
    "margin",
    "pair_gain",
    "pgd_armijo",
    "procrustes_align",
    "project_onto_cone",
    "projected_shifted_pinv_apply",
    "query",
    "save_features",
    "save_graph",
    "save_labels",
    "smallest_eigenpairs",
    "ssm_solve",
    "stiefel_project",
    "vertex_gain",
]
