"""State-space models: the Stein-Stein stochastic volatility model and a
scalar linear-Gaussian model used as a Kalman reference.

Observation convention shared by every model here: the observation ``Y_t``
depends on the state *before* the step-``t`` mutation, i.e. the likelihood is
``rho(Y_t | X_{t-1}, Y_{t-1})``.  Filters therefore weight (or transport) the
cloud against ``Y_t`` before propagating it to ``X_t``.

All functions are vectorised over numpy arrays of particles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

LOG_2PI = math.log(2.0 * math.pi)

# |x| below this is a zero-volatility state: the return variance x^2 dt vanishes.
ZERO_VOL = 1e-10
# Log-likelihood floor used in place of -inf for degenerate states.
LOGLIK_FLOOR = -1e10
# Share of |x| a particle may travel in one transport step.
DISPLACEMENT_FRACTION = 0.5


class ConfigError(ValueError):
    """Invalid or unrecognised configuration content."""


class SingularVarianceError(ArithmeticError):
    """Likelihood derivative requested at a zero-volatility state."""


@dataclass(frozen=True)
class SteinSteinParams:
    """Model and market constants.  Rates are per year, ``maturity`` in years."""

    mu: float = 0.0953
    kappa: float = 4.0
    theta: float = 0.25
    sigma: float = 0.2
    r: float = 0.0953
    s0: float = 100.0
    strike: float = 90.0
    maturity: float = 0.5
    v0: float = 0.25
    dividend: float = 0.0
    n_steps: int = 64

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        if not self.maturity > 0:
            raise ConfigError("maturity must be > 0")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if not self.strike > 0:
            raise ConfigError("strike must be > 0")
        if not self.s0 > 0:
            raise ConfigError("s0 must be > 0")
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ConfigError(f"{f.name} must be finite")

    @property
    def dt(self) -> float:
        return self.maturity / self.n_steps

    @property
    def discount(self) -> float:
        return math.exp(-self.r * self.maturity)

    def replace(self, **changes) -> "SteinSteinParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return SteinSteinParams(**values)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "SteinSteinParams":
        if not isinstance(data, dict):
            raise ConfigError("model parameters must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown parameter keys: {', '.join(unknown)}")
        try:
            return cls(**{k: float(v) if k != "n_steps" else v for k, v in data.items()})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "SteinSteinParams":
        """Load from a YAML (or JSON) file holding exactly the parameter keys."""
        return cls.from_dict(load_mapping(path))


BENCHMARK_PARAMS = SteinSteinParams()


def load_mapping(path) -> dict:
    path = Path(path)
    with path.open() as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


@dataclass(frozen=True)
class StatePoint:
    x: float  # volatility X_t
    y: float  # log-price Y_t

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("state must be finite")


# ---------------------------------------------------------------------------
# Stein-Stein primitives

def euler_step(params: SteinSteinParams, x, y, eps, eta):
    """One Euler-Maruyama step.  The return increment uses the pre-step
    volatility ``x``; ``eps`` drives the price, ``eta`` the volatility."""
    dt = params.dt
    sq = math.sqrt(dt)
    y_next = y + (params.mu - params.dividend - 0.5 * x * x) * dt + x * sq * eps
    x_next = x + params.kappa * (params.theta - x) * dt + params.sigma * sq * eta
    return x_next, y_next


def euler_step_point(params: SteinSteinParams, prev: StatePoint, eps: float, eta: float) -> StatePoint:
    x, y = euler_step(params, prev.x, prev.y, eps, eta)
    return StatePoint(float(x), float(y))


def transition_mean(params: SteinSteinParams, x_prev):
    return x_prev + params.kappa * (params.theta - x_prev) * params.dt


def transition_logdensity(params: SteinSteinParams, x_prev, x_next):
    """log N(x_next; x_prev + kappa (theta - x_prev) dt, sigma^2 dt)."""
    var = params.sigma ** 2 * params.dt
    d = np.asarray(x_next) - transition_mean(params, x_prev)
    return -0.5 * (LOG_2PI + math.log(var)) - d * d / (2.0 * var)


def likelihood_moments(params: SteinSteinParams, x_prev, y_prev):
    """Mean and variance of Y_t given (X_{t-1}, Y_{t-1})."""
    x_prev = np.asarray(x_prev, dtype=float)
    dt = params.dt
    m = y_prev + (params.mu - params.dividend - 0.5 * x_prev * x_prev) * dt
    return m, x_prev * x_prev * dt


def likelihood_logdensity(params: SteinSteinParams, x_prev, y_prev, y_obs):
    """log rho(y_obs | x_prev, y_prev).

    Zero-volatility states (|x| < 1e-10) return the floor -1e10, so that
    downstream log-weight arithmetic stays finite.
    """
    x_prev = np.asarray(x_prev, dtype=float)
    m, v = likelihood_moments(params, x_prev, y_prev)
    degenerate = np.abs(x_prev) < ZERO_VOL
    v_safe = np.where(degenerate, 1.0, v)
    res = y_obs - m
    out = -0.5 * (LOG_2PI + np.log(v_safe)) - res * res / (2.0 * v_safe)
    out = np.where(degenerate, LOGLIK_FLOOR, out)
    return out if out.ndim else float(out)


def _check_nonzero(x_prev):
    if np.any(np.abs(x_prev) < ZERO_VOL):
        raise SingularVarianceError("likelihood variance x^2 dt vanishes at x = 0")


def _residual_terms(params, x_prev, y_prev, y_obs):
    # u, v follow the flow computations of the residual part of -log rho:
    # d/dx [res^2 / (2 v_p)] = -u / (2 v), v_p = x^2 dt.
    dt = params.dt
    m, _ = likelihood_moments(params, x_prev, y_prev)
    res = y_obs - m
    u = res * (-2.0 * x_prev ** 3 * dt * dt + 2.0 * res * x_prev * dt)
    v = x_prev ** 4 * dt * dt
    return res, u, v


def loglik_gradient(params: SteinSteinParams, x_prev, y_prev, y_obs):
    """d/dx log rho(y_obs | x, y_prev) at ``x = x_prev``.

    Uses grad m = -x dt and grad v_p = 2 x dt: the log-variance part
    contributes -1/x and the residual part u / (2 v).
    """
    x_prev = np.asarray(x_prev, dtype=float)
    _check_nonzero(x_prev)
    _, u, v = _residual_terms(params, x_prev, y_prev, y_obs)
    out = -1.0 / x_prev + 0.5 * u / v
    return out if out.ndim else float(out)


def loglik_hessian(params: SteinSteinParams, x_prev, y_prev, y_obs):
    """d^2/dx^2 log rho: quotient rule on the residual term u / (2 v) plus
    the log-variance curvature 1/x^2."""
    x_prev = np.asarray(x_prev, dtype=float)
    _check_nonzero(x_prev)
    dt = params.dt
    res, u, v = _residual_terms(params, x_prev, y_prev, y_obs)
    # d res / dx = x dt because d m / dx = -x dt.
    du = (
        -2.0 * x_prev ** 4 * dt ** 3
        - 2.0 * res * x_prev * x_prev * dt * dt
        + 2.0 * res * res * dt
    )
    dv = 4.0 * x_prev ** 3 * dt * dt
    out = 1.0 / (x_prev * x_prev) + 0.5 * (du * v - dv * u) / (v * v)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Model objects consumed by the filters

class StateSpaceModel:
    """Interface used by the particle filter and the homotopy transport.

    Particles carry a hidden state ``x`` and an observable-type coordinate
    ``y``.  ``loglik(x, y_prev, y_obs)`` is the log-density of the next
    observation given the conditioning state ``x``.
    """

    dim = 1

    def initial(self, n: int, rng=None):
        """Prior cloud ``(x, y)`` of ``n`` particles."""
        raise NotImplementedError

    def propagate(self, x, y, rng):
        """Mutate the cloud one step with fresh noise from ``rng``."""
        raise NotImplementedError

    def transition_logdensity(self, x_prev, x_next):
        raise NotImplementedError

    def loglik(self, x, y_prev, y_obs):
        raise NotImplementedError

    def loglik_grad(self, x, y_prev, y_obs):
        raise NotImplementedError

    def loglik_hess(self, x, y_prev, y_obs):
        raise NotImplementedError


class SteinSteinModel(StateSpaceModel):
    def __init__(self, params: SteinSteinParams):
        self.params = params

    def initial(self, n, rng=None):
        # Degenerate prior: every particle starts at the known V0.
        x = np.full(n, float(self.params.v0))
        y = np.full(n, math.log(self.params.s0))
        return x, y

    def propagate(self, x, y, rng):
        n = len(x)
        eps = rng.standard_normal(n)
        eta = rng.standard_normal(n)
        return euler_step(self.params, x, y, eps, eta)

    def transition_logdensity(self, x_prev, x_next):
        return transition_logdensity(self.params, x_prev, x_next)

    def regular_mask(self, x):
        """States where the likelihood derivatives exist."""
        return np.abs(x) >= ZERO_VOL

    def max_displacement(self, x):
        """Largest transport move per pseudo-time step: a fraction of the
        distance to the singular state x = 0, so no step reaches it."""
        return DISPLACEMENT_FRACTION * np.abs(np.asarray(x, dtype=float))

    def loglik(self, x, y_prev, y_obs):
        return likelihood_logdensity(self.params, x, y_prev, y_obs)

    def loglik_grad(self, x, y_prev, y_obs):
        return loglik_gradient(self.params, x, y_prev, y_obs)

    def loglik_hess(self, x, y_prev, y_obs):
        return loglik_hessian(self.params, x, y_prev, y_obs)


class LinearGaussianModel(StateSpaceModel):
    """X_t = a X_{t-1} + sqrt(q) eta,  Y_t = c X_{t-1} + sqrt(r) eps.

    The observation ignores ``y_prev``.  ``x0_var = 0`` gives a point-mass
    prior at ``x0_mean``.
    """

    def __init__(self, a=1.0, q=1.0, c=1.0, r=1.0, x0_mean=0.0, x0_var=1.0):
        self.a, self.q, self.c, self.r = float(a), float(q), float(c), float(r)
        self.x0_mean, self.x0_var = float(x0_mean), float(x0_var)

    def initial(self, n, rng=None):
        if self.x0_var > 0:
            if rng is None:
                raise ValueError("a random prior needs an rng")
            x = self.x0_mean + math.sqrt(self.x0_var) * rng.standard_normal(n)
        else:
            x = np.full(n, self.x0_mean)
        return x, np.zeros(n)

    def propagate(self, x, y, rng):
        n = len(x)
        y_next = self.c * x + math.sqrt(self.r) * rng.standard_normal(n)
        x_next = self.a * x + math.sqrt(self.q) * rng.standard_normal(n)
        return x_next, y_next

    def simulate(self, n_steps, rng):
        """One (x_path, y_path) trajectory; y_path[0] is a placeholder 0."""
        x = np.empty(n_steps + 1)
        y = np.zeros(n_steps + 1)
        x[0] = self.x0_mean + math.sqrt(self.x0_var) * rng.standard_normal()
        for t in range(1, n_steps + 1):
            y[t] = self.c * x[t - 1] + math.sqrt(self.r) * rng.standard_normal()
            x[t] = self.a * x[t - 1] + math.sqrt(self.q) * rng.standard_normal()
        return x, y

    def transition_logdensity(self, x_prev, x_next):
        d = np.asarray(x_next) - self.a * np.asarray(x_prev)
        return -0.5 * (LOG_2PI + math.log(self.q)) - d * d / (2.0 * self.q)

    def loglik(self, x, y_prev, y_obs):
        d = y_obs - self.c * np.asarray(x, dtype=float)
        return -0.5 * (LOG_2PI + math.log(self.r)) - d * d / (2.0 * self.r)

    def loglik_grad(self, x, y_prev, y_obs):
        return self.c * (y_obs - self.c * np.asarray(x, dtype=float)) / self.r

    def loglik_hess(self, x, y_prev, y_obs):
        return np.full(np.shape(x), -self.c * self.c / self.r)

