"""Sequential Monte Carlo with a No-U-Turn proposal and Gaussian L-kernels."""

from .hamiltonian import MassMatrix, PhasePoint, leapfrog_step, momentum_log_density, sample_momentum
from .lkernel import NearOptimalLKernel, SymmetricLKernel, fit_joint, conditional_log_density, make_lkernel
from .nuts import NutsConfig, NutsOutcome, nuts_propose
from .smc import GaussianInit, RunEstimates, SMCAbort, SMCConfig, run
from .target import FlatTarget, GaussianTarget, PoissonLassoTarget, StudentTTarget, generate_regression_dataset

__version__ = "0.1.0"
