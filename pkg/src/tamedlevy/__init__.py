"""Tamed Euler scheme for Levy-driven SDEs with superlinear coefficients.

Library layout:
    grid        time grids and the left-anchor discretization map
    levy        jump laws, truncation to |z| >= eps, samplers, quadrature
    model       coefficient triples, taming, p*, built-ins, assumption probes
    scheme      noise realizations, coupling views, the stepper
    experiments convergence/stability/heatmap/timeshift studies, slope fits
    cli         command-line front end (CSV + JSON manifest outputs)
"""

from .grid import DiscretizationMap, Grid, GridError, build_map, build_uniform_grid
from .levy import (JumpLaw, JumpEventStream, QuadratureError, TruncatedJumpLaw,
                   gaussian_jump_law, sample_jump_events, sample_truncated_size,
                   small_jump_moment, truncate, truncated_moment)
from .model import (AssumptionReport, SdeModel, TamedCoefficients,
                    estimate_jump_constants, make_model1, make_model2,
                    probe_assumptions, pstar, tame)
from .scheme import (NoiseRealization, PathResult, SchemeConfig, coarsen_noise,
                     mc_compensator, mc_hypothesis_ok, run_arms, simulate_path,
                     step)
from .experiments import (ErrorTable, SlopeFit, fit_loglog_slope, heatmap_joint,
                          initial_time_perturbation, lp_error,
                          stability_initial_value, strong_convergence,
                          write_error_csv, write_slopes_csv)
from .streams import DEFAULT_SEED

__version__ = "0.1.0"

__all__ = [
    "DiscretizationMap", "Grid", "GridError", "build_map", "build_uniform_grid",
    "JumpLaw", "JumpEventStream", "QuadratureError", "TruncatedJumpLaw",
    "gaussian_jump_law", "sample_jump_events", "sample_truncated_size",
    "small_jump_moment", "truncate", "truncated_moment",
    "AssumptionReport", "SdeModel", "TamedCoefficients",
    "estimate_jump_constants", "make_model1", "make_model2",
    "probe_assumptions", "pstar", "tame",
    "NoiseRealization", "PathResult", "SchemeConfig", "coarsen_noise",
    "mc_compensator", "mc_hypothesis_ok", "run_arms", "simulate_path", "step",
    "ErrorTable", "SlopeFit", "fit_loglog_slope", "heatmap_joint",
    "initial_time_perturbation", "lp_error", "stability_initial_value",
    "strong_convergence", "write_error_csv", "write_slopes_csv",
    "DEFAULT_SEED", "__version__",
]
