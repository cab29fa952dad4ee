"""Particle filtering and log-homotopy transport for pricing a European call
under Stein-Stein stochastic volatility."""

from .experiment_cli import ExperimentConfig, generate_market_path, mc_price, run_experiment
from .homotopy_flow import HomotopySchedule, TransportOptions, homotopy_filter, homotopy_price, transport_cloud
from .model_core import (
    ConfigError,
    LinearGaussianModel,
    SteinSteinModel,
    SteinSteinParams,
    BENCHMARK_PARAMS,
    euler_step,
    likelihood_logdensity,
    loglik_gradient,
    loglik_hessian,
)
from .numeric_utils import RandomStream, effective_sample_size, normalize_weights, systematic_resample
from .particle_filter import FilterConfig, ParticleCloud, pf_filter, pf_price
from .pricing_stats import EstimatorReport, compute_report, discounted_call_payoff
from .reweighted_transport import rw_filter, rw_price

__version__ = "0.1.0"
