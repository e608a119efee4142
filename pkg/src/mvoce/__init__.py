"""Multivariate OCE risk measures: losses, scenario models, stochastic approximation, oracles, sensitivities."""

from .errors import (
    ConfigError,
    DataError,
    DegenerateStep,
    DimensionError,
    NonPdScatter,
    NotApplicable,
    NotTwiceDifferentiable,
    OCEError,
    SingularJacobian,
    SingularSensitivity,
)
from .losses import Family, LossSpec, loss_gradient, loss_hessian, loss_value
from .mnig_em import EMConfig, EMResult, em_fit, em_fit_multistart, em_step
from .oracle_bench import GaussianExpCase, mc_benchmark, oracle_allocation
from .sa_engine import AllocationEstimate, Box, StepSchedule, solve_full
from .scenarios import EmpiricalModel, GaussianModel, MNIGModel, MNIGParams, RngStream, sample_mnig
from .sensitivity import ShockReport, ShockSpec, alloc_marginal, exp_shock_closed_form, joint_samples, risk_marginal

__version__ = "0.1.0"
