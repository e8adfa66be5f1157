"""Mean-reverting diffusion for multi-temporal cloud removal.

The numerical core (schedule, forward process, preconditioning, sampler,
metrics) works on numpy arrays; the networks and the training loop use torch.
"""

from .diffusion import DiffusionState, kernel_moments, ode_rhs, perturb, score_from_denoiser, simulate_forward_sde
from .errors import CheckpointError, ConfigError, DomainError, EmrdmError, NumericError, ShapeError
from .metrics import MetricReport, evaluate, mae, psnr, sam, ssim
from .networks import GaussianOracle, GaussianOracleParams, NetConfig, build_network
from .precondition import Coefficients, PreconditionParams, Preconditioned, coefficients, denoise, loss_weight
from .sampler import SamplerConfig, sample
from .schedule import Schedule, SigmaGrid, drift_diffusion, k_of_t, make_sigma_grid, s_dot, s_of_t, sigma_of_t
from .trainer import TrainConfig, fit, load_checkpoint, save_checkpoint, train_step

__version__ = "0.1.0"
