"""sqglab: stochastic streamline SQG on a Fourier-truncated torus.

Spectral Galerkin simulation of the truncated dynamics, Monte-Carlo checks
against the invariant Gaussian measure, generator calculus on cylindrical
polynomials, and the ensemble experiments wired to the ``sqglab`` CLI.
"""
from ._jit import USE_NUMBA
from .coefficients import alpha, beta, gamma, gamma_row_sum, poisson_kernel
from .dynamics import (
    BlowUpError,
    ExponentialEuler,
    TrajectoryRecord,
    accumulate_G,
    accumulate_G_tilde,
    dynkin_martingale,
    quadratic_variation,
    replay,
    simulate,
    twin_simulate,
)
from .estimators import fit_scaling, holder_exponent, lp_sup_norm, stationarity_test
from .experiments import ExperimentConfig, ExperimentReport, load_config, run
from .gaussian_measure import MeasureSampler, ibp_residual, mc_expectation, sample_rho
from .lattice import SpectralField, WaveVector, band, fl_norm, make_field, project
from .malliavin import Polynomial, apply_L0, apply_LN, build_H, energy_form, exp_moment, grad, verify_generator_identity
from .nonlinearity import eval_B, h1_pairing, state_divergence
from .presets import GeneratorPreset

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA",
    "alpha", "beta", "gamma", "gamma_row_sum", "poisson_kernel",
    "BlowUpError", "ExponentialEuler", "TrajectoryRecord", "accumulate_G", "accumulate_G_tilde",
    "dynkin_martingale", "quadratic_variation", "replay", "simulate", "twin_simulate",
    "fit_scaling", "holder_exponent", "lp_sup_norm", "stationarity_test",
    "ExperimentConfig", "ExperimentReport", "load_config", "run",
    "MeasureSampler", "ibp_residual", "mc_expectation", "sample_rho",
    "SpectralField", "WaveVector", "band", "fl_norm", "make_field", "project",
    "Polynomial", "apply_L0", "apply_LN", "build_H", "energy_form", "exp_moment", "grad", "verify_generator_identity",
    "eval_B", "h1_pairing", "state_divergence",
    "GeneratorPreset",
]
