"""Intrinsic sparse mode decomposition of low-rank PSD matrices."""
from .core import (CorrelationMatrix, DecompositionResult, ISMDOptions, LocalBasisSet,
                   apply_threshold, assemble_lambda, assemble_omega, ismd, ismd_lowrank,
                   ismd_threshold, learn_threshold, local_bases, local_rotations,
                   sigma_family, sparse_orthogonal_factorize)
from .diagnostics import (integer_spectrum_test, match_modes, noise_slope, principal_angles,
                          reconstruction_error, support_consistency_report, timing_profile)
from .errors import (AlgorithmError, ConvergenceError, GapNotFoundError, InfeasibleTargetError,
                     InvariantError, ISMDError, NotPSDError, SingularityError, ValidationError)
from .jointdiag import (JointDiagProblem, JointDiagResult, joint_diagonalize, off_diag_energy,
                        pair_rotation)
from .linalg import (EigenResult, PivotedCholesky, pivoted_cholesky, pseudo_inverse_factor,
                     sym_eig, truncated_factor)
from .partition import (ModeSet, Partition, coarsest_partition, finest_partition, is_refinement,
                        is_regular_sparse, local_dimension, patch_sparseness,
                        uniform_grid_partition, unidentifiable_groups)
from .synth import (FeatureConfig, FieldFixture, add_noise, gen_exponential_kernel,
                    gen_global_plus_local, gen_localized_field)

__version__ = "0.1.0"
