"""Variational inference and simulation for stochastic kinetic models."""

from .errors import *  # noqa: F401,F403
from .model import ChainSpec, EventSpec, ModelSpec, Reactant, SystemState, apply_event, chain_factor, hazard, total_hazard
from .simulate import EventPath, gillespie, path_log_likelihood
from .discretize import FrameSeries, discrete_log_likelihood, grid_path, step_kernel, suggest_tau
from .observations import ChainObservation, ObservationModelSpec, ObservationSet, sample_observations
from .exact import JointPosterior, exact_em, exact_forward_backward
from .meanfield import MeanFieldPosterior, bethe_evidence, coupling_factors, marginal_kernel, mf_infer, mf_sweep
from .learn import RateEstimate, mf_em, ml_rates_continuous, ml_rates_discrete
from .epidemics import (ContactNetwork, ContactWindow, EpidemicConfig, SISModel, build_sis_model,
                        run_cohort_experiment, small_world_network)

__version__ = "0.1.0"
