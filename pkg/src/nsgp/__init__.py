"""Nonstationary Gaussian-process emulation by latent input augmentation and particle learning."""

from ._backend import NAME as BACKEND
from .design import DesignConfig, DesignTrace, PoolSpec, alm_select, pool_make, run_sequential
from .kernels import CorrFactor, FactorizationError, build_factor, extend_factor, sq_exp_corr
from .particles import (
    AggregatedPrediction,
    Particle,
    ParticleSet,
    aggregate_predict,
    init_particles,
    propagate,
    rejuvenate,
    resample_indices,
    update,
)
from .predict import (
    Dataset,
    PriorConfig,
    StudentTPredictive,
    log_marginal_likelihood,
    loo_cv_residuals,
    marginal_predictive,
    student_t_logdensity,
)
from .testbed import (
    FUNCTIONS,
    GriddedTruth,
    eval_grid,
    eval_truth,
    latin_hypercube,
    load_gridded_truth,
    rmse,
)

__all__ = [
    "BACKEND",
    "AggregatedPrediction",
    "CorrFactor",
    "Dataset",
    "DesignConfig",
    "DesignTrace",
    "FUNCTIONS",
    "FactorizationError",
    "GriddedTruth",
    "Particle",
    "ParticleSet",
    "PoolSpec",
    "PriorConfig",
    "StudentTPredictive",
    "aggregate_predict",
    "alm_select",
    "build_factor",
    "eval_grid",
    "eval_truth",
    "extend_factor",
    "init_particles",
    "latin_hypercube",
    "load_gridded_truth",
    "log_marginal_likelihood",
    "loo_cv_residuals",
    "marginal_predictive",
    "pool_make",
    "propagate",
    "rejuvenate",
    "resample_indices",
    "rmse",
    "run_sequential",
    "sq_exp_corr",
    "student_t_logdensity",
    "update",
]
