"""Log-homotopy particle transport.

Each particle moves through pseudo-time lambda in [0, 1] along the
deterministic flow

    dx/dlambda = -[d2G/dx2 + lambda d2L/dx2]^{-1} dL/dx

where G is the log prior (its curvature estimated as -1/S from the cloud's
sample variance S) and L the log-likelihood of the current observation.
The flow is integrated with explicit Euler steps on a lambda grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model_core import SteinSteinModel, SteinSteinParams, StateSpaceModel
from .numeric_utils import as_generator, sample_covariance
from .particle_filter import FilterConfig, ParticleCloud, full_observations, pf_init
from .pricing_stats import weighted_price

# Floor on the prior sample variance before inversion.
SPREAD_FLOOR = 1e-8
# |d2Psi/dx2| at or below this is singular.
SINGULAR_TOL = 1e-12
# Regularisation added (with negative sign) to singular curvatures, relative to |prior curvature|.
REG_SCALE = 1e-6


class SingularHessianError(ArithmeticError):
    pass


@dataclass(frozen=True)
class HomotopySchedule:
    """Pseudo-time grid ``0 = lambda_0 < ... < lambda_K = 1``.

    ``geometric`` spacing grows each step by ``ratio``, so the first steps,
    where the curvature is prior-dominated, are the finest.
    """

    n_lambda: int = 20
    spacing: str = "uniform"
    ratio: float = 1.2

    def __post_init__(self):
        if self.n_lambda < 1:
            raise ValueError("n_lambda must be >= 1")
        if self.spacing not in ("uniform", "geometric"):
            raise ValueError("spacing must be 'uniform' or 'geometric'")
        if self.spacing == "geometric" and not self.ratio > 0:
            raise ValueError("geometric ratio must be > 0")

    @property
    def grid(self) -> np.ndarray:
        k = self.n_lambda
        if self.spacing == "uniform" or self.ratio == 1.0:
            g = np.arange(k + 1) / k
        else:
            steps = self.ratio ** np.arange(k)
            g = np.concatenate([[0.0], np.cumsum(steps / steps.sum())])
        g[-1] = 1.0
        return g

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.grid)


@dataclass(frozen=True)
class TransportOptions:
    """``refresh_hessian`` re-estimates the prior curvature from the moving
    cloud at every lambda step instead of once at lambda = 0.
    ``concave_guard`` clips positive likelihood curvature to zero so the
    total curvature stays negative definite."""

    refresh_hessian: bool = False
    concave_guard: bool = True


@dataclass
class TransportDiagnostics:
    frozen: int = 0          # particle-steps skipped for a non-finite velocity or singular state
    regularised: int = 0     # particle-steps whose curvature was singular
    clipped: int = 0         # particle-steps where the concavity guard was active
    capped: int = 0          # particle-steps shortened by the model's displacement cap
    log_jacobian: np.ndarray | None = None  # per-particle log |dT/dx| when tracked
    cov_history: list = field(default_factory=list)

    def merge(self, other: "TransportDiagnostics"):
        self.frozen += other.frozen
        self.regularised += other.regularised
        self.clipped += other.clipped
        self.capped += other.capped


def prior_hessian_estimate(positions, floor: float = SPREAD_FLOOR) -> float:
    """-1/S from the sample variance S of ``positions`` (S floored at ``floor``)."""
    s = sample_covariance(np.asarray(positions, dtype=float))
    return -1.0 / max(s, floor)


def flow_velocity(x, lam: float, prior_hessian, grad_l, hess_l):
    """-(prior_hessian + lam * hess_l)^{-1} grad_l, elementwise for scalars."""
    total = prior_hessian + lam * np.asarray(hess_l, dtype=float)
    if np.any(np.abs(total) <= SINGULAR_TOL):
        raise SingularHessianError("log-homotopy curvature is singular")
    out = -np.asarray(grad_l, dtype=float) / total
    return out if out.ndim else float(out)


def _regular_states(model, x):
    mask_fn = getattr(model, "regular_mask", None)
    return np.ones(x.shape, bool) if mask_fn is None else mask_fn(x)


def transport_cloud(cloud: ParticleCloud, y_prev, y_obs, model: StateSpaceModel,
                    schedule: HomotopySchedule, options: TransportOptions | None = None,
                    track_jacobian: bool = False):
    """Move the cloud's states along the flow from lambda = 0 to 1.

    Weights are left untouched.  Returns ``(cloud, diagnostics)``.
    """
    options = options or TransportOptions()
    diag = TransportDiagnostics()
    x = cloud.x.astype(float, copy=True)
    grid = schedule.grid
    prior_h = prior_hessian_estimate(x)
    log_jac = np.zeros_like(x) if track_jacobian else None
    cap_fn = getattr(model, "max_displacement", None)
    for k in range(len(grid) - 1):
        lam, h = grid[k], grid[k + 1] - grid[k]
        if options.refresh_hessian and k > 0:
            prior_h = prior_hessian_estimate(x)
        ok = _regular_states(model, x) & np.isfinite(x)
        xs = np.where(ok, x, 1.0)
        with np.errstate(all="ignore"):
            grad = np.asarray(model.loglik_grad(xs, y_prev, y_obs), dtype=float)
            hess = np.asarray(model.loglik_hess(xs, y_prev, y_obs), dtype=float)
        if options.concave_guard:
            pos = hess > 0
            diag.clipped += int(np.count_nonzero(pos & ok))
            hess = np.where(pos, 0.0, hess)
        total = prior_h + lam * hess
        singular = np.abs(total) <= SINGULAR_TOL
        if singular.any():
            diag.regularised += int(np.count_nonzero(singular & ok))
            total = np.where(singular, total - REG_SCALE * abs(prior_h), total)
        with np.errstate(all="ignore"):
            vel = -grad / total
        good = ok & np.isfinite(vel)
        diag.frozen += int(np.count_nonzero(~good))
        if track_jacobian:
            # d(x + h g)/dx with dg/dx approximated by -H^{-1} d2L/dx2 (prior curvature held fixed)
            with np.errstate(all="ignore"):
                dv = -hess / total
            log_jac += np.where(good, np.log(np.abs(1.0 + h * dv)), 0.0)
        move = h * np.where(good, vel, 0.0)
        if cap_fn is not None:
            cap = cap_fn(xs)
            over = good & (np.abs(move) > cap)
            diag.capped += int(np.count_nonzero(over))
            move = np.clip(move, -cap, cap)
        x = np.where(good, x + move, x)
        diag.cov_history.append(float(np.var(x, ddof=1)))
    diag.log_jacobian = log_jac
    return replace(cloud, x=x), diag


def homotopy_filter(model: StateSpaceModel, n_particles: int, observations, schedule: HomotopySchedule,
                    rng, options: TransportOptions | None = None):
    """Transport against each observation, then mutate.  Weights stay uniform.

    Returns ``(cloud, vol_means, diagnostics)``; ``vol_means[t-1]`` is the
    transported-cloud mean that conditions on observation ``t``.
    """
    rng = as_generator(rng)
    obs = np.asarray(observations, dtype=float)
    n_steps = len(obs) - 1
    cloud = pf_init(model, n_particles, rng)
    vol = np.empty(n_steps)
    diag = TransportDiagnostics()
    for t in range(1, n_steps + 1):
        cloud, d = transport_cloud(cloud, obs[t - 1], obs[t], model, schedule, options)
        diag.merge(d)
        vol[t - 1] = float(np.mean(cloud.x))
        x, y = model.propagate(cloud.x, cloud.y, rng)
        cloud = ParticleCloud(np.asarray(x, float), np.asarray(y, float), cloud.logw, t)
    return cloud, vol, diag


def homotopy_price(params: SteinSteinParams, cfg: FilterConfig, y_path, schedule: HomotopySchedule,
                   rng, options: TransportOptions | None = None, return_result=False):
    """Unweighted mean of discounted payoffs over the transported cloud."""
    model = SteinSteinModel(params)
    cloud, vol, diag = homotopy_filter(model, cfg.n_particles, full_observations(params, y_path),
                                       schedule, rng, options)
    price = weighted_price(params, cloud.y)
    return (price, (cloud, vol, diag)) if return_result else price

