"""Random walks along and across the equivalence classes of neural networks.

A network's pullback metric ``J^T G J`` vanishes on directions that leave the
output unchanged. Walking along its null eigenvectors traces the set of
inputs with the same output; walking along the non-null ones moves between
such sets.
"""
from .errors import (ContractError, EquivWalkError, ModelFormatError, NoDirectionError,
                     NumericError, OnKinkError, ShapeError, UnsupportedError)
from .linalg import SymmetricEigenDecomposition, fit_affine_subspace, jacobi_eigen, sym_eigen
from .metric import (IDENTITY_METRIC, OutputMetric, PullbackMetric, analyze_point,
                     lipschitz_bound, metric_jump, pullback, step_increments, suggest_tau)
from .model_io import (WalkRecord, load_csv_features, load_idx_images, load_model, read_walk,
                       save_model, write_walk, write_walk_csv)
from .network import (Activation, AvgPool, Conv2D, Dense, Flatten, LSTMCell, NetworkSpec,
                      Residual, activation_signature, forward, forward_batch,
                      full_state_jacobian, layer_jacobian, network_jacobian, unroll_recurrent)
from .oracle import (InvarianceReport, LevelSetGrid, audit_invariance, brute_force_level_set,
                     finite_difference_jacobian)
from .walkers import (Termination, WalkConfig, WalkResult, run_walk, simec_1d_leaky, simec_guarded,
                      simec_nd, simexp_nd)

__version__ = "0.1.0"
