"""Homotopy transport followed by likelihood reweighing and resampling.

Per step: transport the cloud against the observation, weight the
transported particles by the likelihood at their new location (bootstrap
kernel ratio k / k~ = 1), mutate, then resample systematically when the ESS
falls below the threshold.

The likelihood enters twice, once through the flow and once through the
weights.  No transport-Jacobian correction is applied to the weights; the
Jacobian can be tracked for diagnostics only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .homotopy_flow import HomotopySchedule, TransportDiagnostics, TransportOptions, transport_cloud
from .model_core import SteinSteinModel, SteinSteinParams, StateSpaceModel
from .numeric_utils import as_generator
from .particle_filter import (
    FilterConfig,
    ParticleCloud,
    full_observations,
    maybe_resample,
    pf_init,
    reweigh,
)
from .pricing_stats import weighted_price


@dataclass
class TransportWeightLedger:
    logw: np.ndarray
    ancestor_history: list | None = None
    log_jacobian: np.ndarray | None = None
    lagged_logw: np.ndarray | None = None  # weights of the previous step

    @classmethod
    def uniform(cls, n: int, keep_ancestors: bool = False) -> "TransportWeightLedger":
        return cls(np.full(n, -math.log(n)), [] if keep_ancestors else None)


@dataclass
class RWResult:
    cloud: ParticleCloud
    ledger: TransportWeightLedger
    vol_means: np.ndarray
    diagnostics: TransportDiagnostics = field(default_factory=TransportDiagnostics)
    n_resamples: int = 0


def rw_step(cloud: ParticleCloud, ledger: TransportWeightLedger, y_prev, y_obs,
            model: StateSpaceModel, schedule: HomotopySchedule, cfg: FilterConfig, rng,
            options: TransportOptions | None = None, resample: bool = True,
            track_jacobian: bool = False):
    """One transport / reweigh / mutate / resample step.

    Returns ``(cloud, ledger, diagnostics, transported)`` where
    ``transported`` is the weighted cloud before mutation.
    """
    rng = as_generator(rng)
    cloud = ParticleCloud(cloud.x, cloud.y, ledger.logw, cloud.t)
    moved, diag = transport_cloud(cloud, y_prev, y_obs, model, schedule, options, track_jacobian)
    weighted, _ = reweigh(moved, model, y_prev, y_obs)
    x, y = model.propagate(weighted.x, weighted.y, rng)
    nxt = ParticleCloud(np.asarray(x, float), np.asarray(y, float), weighted.logw, cloud.t + 1)
    log_jac = ledger.log_jacobian
    if track_jacobian:
        log_jac = diag.log_jacobian if log_jac is None else log_jac + diag.log_jacobian
    history = ledger.ancestor_history
    if resample:
        n = nxt.n
        nxt, idx = maybe_resample(nxt, cfg.ess_threshold, rng)
        if idx is not None:
            if history is not None:
                history = history + [idx]
            if log_jac is not None:
                log_jac = log_jac[idx]
        elif history is not None:
            history = history + [np.arange(n)]
    new_ledger = TransportWeightLedger(nxt.logw.copy(), history, log_jac, weighted.logw)
    return nxt, new_ledger, diag, weighted


def rw_filter(model: StateSpaceModel, cfg: FilterConfig, observations, schedule: HomotopySchedule,
              rng, options: TransportOptions | None = None, weight_lag: int = 0,
              track_jacobian: bool = False) -> RWResult:
    """Run reweighted transport over ``observations[0..N]``.

    ``weight_lag=1`` prices with the previous step's normalised weights
    paired with the final particles (resampling is skipped on the last step
    so the pairing stays index-aligned).
    """
    rng = as_generator(rng)
    obs = np.asarray(observations, dtype=float)
    n_steps = len(obs) - 1
    cloud = pf_init(model, cfg.n_particles, rng)
    ledger = TransportWeightLedger.uniform(cloud.n)
    vol = np.empty(n_steps)
    diag = TransportDiagnostics()
    resamples = 0
    prev_logw = ledger.logw
    for t in range(1, n_steps + 1):
        last = t == n_steps
        prev_logw = ledger.logw
        cloud, ledger, d, weighted = rw_step(
            cloud, ledger, obs[t - 1], obs[t], model, schedule, cfg, rng, options,
            resample=not (last and (weight_lag or cfg.final_weights == "pre")),
            track_jacobian=track_jacobian,
        )
        diag.merge(d)
        vol[t - 1] = float(np.dot(weighted.weights(), weighted.x))
        resamples += cloud.resampled
    if weight_lag:
        cloud = ParticleCloud(cloud.x, cloud.y, prev_logw, cloud.t)
    return RWResult(cloud, ledger, vol, diag, resamples)


def rw_price(params: SteinSteinParams, cfg: FilterConfig, y_path, schedule: HomotopySchedule, rng,
             options: TransportOptions | None = None, weight_lag: int = 0, return_result=False):
    """Weighted mean of discounted payoffs over the reweighted transported cloud."""
    model = SteinSteinModel(params)
    res = rw_filter(model, cfg, full_observations(params, y_path), schedule, rng, options, weight_lag)
    price = weighted_price(params, res.cloud.y, res.cloud.weights())
    return (price, res) if return_result else price
