"""Global minimization via learned state-dependent Langevin noise.

The pipeline: solve an entropy-regularized value equation on a box with
a physics-informed tanh network, read a sampling amplitude off the
learned laplacian through stable closed forms, then run mirrored,
truncated Euler-Maruyama dynamics whose noise shuts off near the global
minimizer.  A classical upwind finite-difference solver provides the
1-d reference.
"""

from .autodiff import Tape, Var
from .benchmarks import (Benchmark, ManufacturedCosine, double_well_1d, easom_2d,
                         gaussian_mixture_2d, hartmann_6d, manufactured_cosine)
from .domain import Box
from .exceptions import (ConfigError, DynamicsError, EvaluationError, MetricError,
                         NumericalError, OracleRangeError, SolverError, TrainingError)
from .fd_reference import FdGrid, HowardResult, howard_solve
from .langevin import (LangevinConfig, TrajectoryLog, em_step, estimate_kappa,
                       mirror, network_noise_field, run_trajectories, truncated_noise)
from .metrics import (ErrorReport, linf_error, ratio_table, rel_l2_error,
                      residual_linf, trajectory_stats)
from .network import (Jet, MlpParams, backward, forward_jet, forward_jet_batch,
                      forward_laplacian_batch, init_network, load_checkpoint,
                      save_checkpoint)
from .operators import (BRANCH_EPS, ControlSet, Problem, boundary_residual,
                        classical_control, classical_pde_residual, gibbs_exponent,
                        log_partition, noise_coeff, oracle_partition, pde_residual,
                        residual_field)
from .training import (TrainConfig, TrainLog, lion_step, loss, sample_boundary,
                       sample_interior, train)

__version__ = "0.1.0"
