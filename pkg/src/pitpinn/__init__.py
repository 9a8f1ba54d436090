"""Phase-field pitting corrosion: staggered PINN plus a reference solver."""

__version__ = "0.1.0"

from .physics import (NondimParams, PhysicalParams, Scenario, initial_c,
                      initial_phi, interp_h, interp_h_prime,
                      nondimensionalize, residual_ac, residual_ch,
                      signed_interface_distance, well_g, well_g_prime)
from .autodiff import (Jet, Tape, Var, check_gradient, grad_params,
                       input_jet, laplacian)
from .network import (NetworkConfig, NetworkParams, apply_hard_constraints,
                      embed_fourier, init_params, load_checkpoint,
                      net_forward, parameter_count, save_checkpoint)
from .sampling import (CollocationSet, SamplingConfig, build_collocation,
                       sample_boundary, sample_general, sample_initial,
                       should_resample)
from .training import (LossBreakdown, NonFiniteLoss, OptimizerState,
                       TrainConfig, TrainResult, adam_step, compute_losses,
                       cosine_similarity, gradnorm_weights, stage_for_step,
                       train)
from .refsolver import (Diverged, Grid, TimeStepController,
                        TimeStepUnderflow, build_grid, fd_laplacian,
                        integrate_c, solve_reference, step_coupled)
from .metrics import (ErrorReport, FieldSnapshot, GridMismatch,
                      compare_snapshots, evaluate_network_on_grid,
                      export_snapshot, import_snapshot_csv, l2_error,
                      liquid_component_count)
from .scenarios import builtin_scenario, scenario_from_file, scenario_to_file

__all__ = [name for name in dir() if not name.startswith("_")]
