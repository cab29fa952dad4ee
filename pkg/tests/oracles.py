"""Reference computations written independently of the library code."""

import math

import numpy as np


def gauss_logpdf(x, mean, var):
    """log N(x; mean, var) from the textbook formula, scalar math only."""
    return -0.5 * math.log(2.0 * math.pi * var) - (x - mean) ** 2 / (2.0 * var)


def kalman_update(mean, var, y, c=1.0, r=1.0):
    """Posterior of x ~ N(mean, var) after observing y = c x + N(0, r)."""
    s = c * c * var + r
    gain = var * c / s
    return mean + gain * (y - c * mean), (1.0 - gain * c) * var


def kalman_filter(y, a, q, c, r, m0, p0):
    """Posterior means/variances of X_{t-1} given Y_1..Y_t for the model
    Y_t = c X_{t-1} + N(0, r), X_t = a X_{t-1} + N(0, q)."""
    m, p = m0, p0
    means, variances = [], []
    for t in range(1, len(y)):
        m, p = kalman_update(m, p, y[t], c, r)
        means.append(m)
        variances.append(p)
        m, p = a * m, a * a * p + q
    return np.array(means), np.array(variances)


def closed_form_grad(params, x, y_prev, y_obs):
    """d/dx log N(y_obs; y_prev + (mu - d - x^2/2) dt, x^2 dt) expanded by hand."""
    dt = params.dt
    a = y_obs - y_prev - (params.mu - params.dividend) * dt
    return -1.0 / x + a * a / (x ** 3 * dt) - x * dt / 4.0


def closed_form_hess(params, x, y_prev, y_obs):
    dt = params.dt
    a = y_obs - y_prev - (params.mu - params.dividend) * dt
    return 1.0 / x ** 2 - 3.0 * a * a / (x ** 4 * dt) - dt / 4.0


def softmax(values):
    top = max(values)
    e = [math.exp(v - top) for v in values]
    s = sum(e)
    return [v / s for v in e]


def call_payoff(s_t, strike, r, maturity):
    return math.exp(-r * maturity) * max(s_t - strike, 0.0)


class FixedNoise:
    """Stand-in generator returning preset normal draws (cycled) and a fixed
    uniform, so tests can pin every random input of a step."""

    def __init__(self, normals=None, uniform=0.5):
        self._normals = list(normals or [])
        self._uniform = uniform

    def standard_normal(self, size=None):
        if size is None:
            return self._normals.pop(0) if self._normals else 0.0
        if self._normals:
            return np.asarray(self._normals.pop(0), dtype=float)
        return np.zeros(size)

    def random(self, size=None):
        return self._uniform if size is None else np.full(size, self._uniform)
