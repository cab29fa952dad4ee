"""Bootstrap particle filter with ESS-triggered systematic resampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model_core import LOGLIK_FLOOR, SteinSteinModel, SteinSteinParams, StateSpaceModel
from .numeric_utils import (
    DegenerateWeightsError,
    as_generator,
    effective_sample_size,
    normalize_logweights,
    systematic_resample,
)
from .pricing_stats import weighted_price


@dataclass
class ParticleCloud:
    x: np.ndarray
    y: np.ndarray
    logw: np.ndarray
    t: int = 0
    resampled: bool = False

    def __post_init__(self):
        n = len(self.x)
        if n < 2 or len(self.y) != n or len(self.logw) != n:
            raise ValueError("cloud arrays must share a length >= 2")

    @property
    def n(self) -> int:
        return len(self.x)

    def weights(self) -> np.ndarray:
        return np.exp(self.logw)

    def ess(self) -> float:
        return effective_sample_size(self.weights())

    def copy(self) -> "ParticleCloud":
        return ParticleCloud(self.x.copy(), self.y.copy(), self.logw.copy(), self.t, self.resampled)


@dataclass(frozen=True)
class FilterConfig:
    """``final_weights='pre'`` prices with the last weights before any final
    resample instead of the post-step weights."""

    n_particles: int = 20_000
    ess_threshold: float = 0.5
    resample_scheme: str = "systematic"
    final_weights: str = "post"

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be >= 2")
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must lie in [0, 1]")
        if self.resample_scheme != "systematic":
            raise ValueError(f"unsupported resample scheme {self.resample_scheme!r}")
        if self.final_weights not in ("post", "pre"):
            raise ValueError("final_weights must be 'post' or 'pre'")


@dataclass
class FilterResult:
    cloud: ParticleCloud
    vol_means: np.ndarray  # conditioned-state estimate for t = 0..N-1
    n_resamples: int = 0
    ess_history: np.ndarray | None = None  # ESS right after each weighting


def pf_init(model: StateSpaceModel, n: int, rng=None) -> ParticleCloud:
    if n < 2:
        raise ValueError("need at least two particles")
    x, y = model.initial(n, rng)
    logw = np.full(n, -math.log(n))
    return ParticleCloud(np.asarray(x, float), np.asarray(y, float), logw, 0)


def reweigh(cloud: ParticleCloud, model: StateSpaceModel, y_prev, y_obs):
    """Add log-likelihood increments at the current states and normalise.

    Returns ``(cloud, increments)``.  Raises ``DegenerateWeightsError`` when
    every increment sits at the likelihood floor.
    """
    inc = np.asarray(model.loglik(cloud.x, y_prev, y_obs), dtype=float)
    if np.all(inc <= LOGLIK_FLOOR):
        raise DegenerateWeightsError(f"all likelihoods underflow at t={cloud.t + 1}")
    logw = normalize_logweights(cloud.logw + inc)
    return replace(cloud, logw=logw), inc


def maybe_resample(cloud: ParticleCloud, threshold: float, rng):
    """Systematic resampling when ESS < threshold * n.

    Returns ``(cloud, ancestors)``; ``ancestors`` is None when nothing fired.
    """
    n = cloud.n
    w = cloud.weights()
    if threshold > 0 and effective_sample_size(w) < threshold * n:
        idx = systematic_resample(w, rng.random(), n)
        return ParticleCloud(cloud.x[idx], cloud.y[idx], np.full(n, -math.log(n)), cloud.t, True), idx
    return replace(cloud, resampled=False), None


def pf_step(cloud: ParticleCloud, y_prev, y_obs, model: StateSpaceModel, cfg: FilterConfig,
            rng, resample: bool = True) -> ParticleCloud:
    """Weight by rho(y_obs | x_prev, y_prev), mutate, then resample when
    ESS < ess_threshold * n.

    Bootstrap proposal: the transition kernel is the proposal, so the weight
    increment is the likelihood alone.  Its argument is the pre-mutation
    state, which is what the observation depends on.
    """
    rng = as_generator(rng)
    weighted, _ = reweigh(cloud, model, y_prev, y_obs)
    x, y = model.propagate(weighted.x, weighted.y, rng)
    moved = ParticleCloud(np.asarray(x, float), np.asarray(y, float), weighted.logw, cloud.t + 1)
    if not resample:
        return moved
    return maybe_resample(moved, cfg.ess_threshold, rng)[0]


def pf_filter(model: StateSpaceModel, cfg: FilterConfig, observations, rng) -> FilterResult:
    """Run the filter over ``observations[0..N]`` (``observations[0]`` is the
    time-0 value, only used as ``y_prev`` of the first step)."""
    rng = as_generator(rng)
    obs = np.asarray(observations, dtype=float)
    n_steps = len(obs) - 1
    cloud = pf_init(model, cfg.n_particles, rng)
    vol = np.empty(n_steps)
    ess = np.empty(n_steps)
    resamples = 0
    for t in range(1, n_steps + 1):
        last = t == n_steps
        resample = not (last and cfg.final_weights == "pre")
        weighted, _ = reweigh(cloud, model, obs[t - 1], obs[t])
        vol[t - 1] = float(np.dot(weighted.weights(), weighted.x))
        ess[t - 1] = weighted.ess()
        x, y = model.propagate(weighted.x, weighted.y, rng)
        cloud = ParticleCloud(np.asarray(x, float), np.asarray(y, float), weighted.logw, t)
        if resample:
            cloud, _ = maybe_resample(cloud, cfg.ess_threshold, rng)
            resamples += cloud.resampled
    return FilterResult(cloud, vol, resamples, ess)


def full_observations(params: SteinSteinParams, y_path) -> np.ndarray:
    """Prepend log S0 to an observed path ``Y_1..Y_N``."""
    y_path = np.asarray(y_path, dtype=float)
    if y_path.shape != (params.n_steps,):
        raise ValueError(f"y_path must have length n_steps={params.n_steps}, got {y_path.shape}")
    return np.concatenate([[math.log(params.s0)], y_path])


def pf_price(params: SteinSteinParams, cfg: FilterConfig, y_path, rng, return_result=False):
    """Discounted call price from the weighted terminal particle log-prices."""
    model = SteinSteinModel(params)
    result = pf_filter(model, cfg, full_observations(params, y_path), rng)
    price = weighted_price(params, result.cloud.y, result.cloud.weights())
    return (price, result) if return_result else price
