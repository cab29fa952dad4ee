"""Weights, resampling, covariance, finite differences and seeded streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateWeightsError(FloatingPointError):
    """Weights are all zero (or -inf in log space) or contain NaN."""


class InsufficientDataError(ValueError):
    pass


def normalize_weights(w, log=False):
    """Return weights scaled to sum to one.

    With ``log=True`` the input is treated as log-weights and exponentiated
    after subtracting the maximum, so very negative values do not underflow.
    """
    w = np.asarray(w, dtype=float)
    if w.size == 0 or np.isnan(w).any():
        raise DegenerateWeightsError("weights are empty or contain NaN")
    if log:
        top = w.max()
        if not np.isfinite(top):
            raise DegenerateWeightsError("all log-weights are -inf or the maximum is +inf")
        w = np.exp(w - top)
    else:
        if (w < 0).any() or not np.isfinite(w).all():
            raise DegenerateWeightsError("weights must be finite and nonnegative")
    total = w.sum()
    if not total > 0:
        raise DegenerateWeightsError("weights sum to zero")
    return w / total


def normalize_logweights(logw):
    """Log of the normalised weights."""
    logw = np.asarray(logw, dtype=float)
    w = normalize_weights(logw, log=True)
    with np.errstate(divide="ignore"):
        return np.log(w)


def effective_sample_size(w) -> float:
    """1 / sum(w_i^2) for normalised weights."""
    w = np.asarray(w, dtype=float)
    return float(1.0 / np.dot(w, w))


def systematic_resample(w, u: float, n_out: int | None = None):
    """Ancestor indices from one uniform draw ``u`` in [0, 1).

    Points ``(u + k) / n_out`` for k = 0..n_out-1 are located in the
    cumulative weights.
    """
    w = np.asarray(w, dtype=float)
    if n_out is None:
        n_out = w.size
    if not 0.0 <= u < 1.0:
        raise ValueError("u must lie in [0, 1)")
    # cumulate in units of 1/n_out: uniform weights then sum exactly to integers
    cum = np.cumsum(w * n_out)
    cum[-1] = n_out  # absorb rounding so every point lands on an index
    points = u + np.arange(n_out)
    return np.searchsorted(cum, points, side="right")


def sample_covariance(points, weights=None):
    """Unbiased sample covariance.

    Unweighted: divisor n - 1.  Weighted (normalised ``weights``): the
    reliability-weight correction ``1 / (1 - sum w_i^2)``.  Returns a float
    for 1-D input and an (d, d) array for (n, d) input.
    """
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    if scalar:
        pts = pts[:, None]
    n = pts.shape[0]
    if n < 2:
        raise InsufficientDataError("need at least two points")
    if weights is None:
        centred = pts - pts.mean(axis=0)
        cov = centred.T @ centred / (n - 1)
    else:
        w = np.asarray(weights, dtype=float)
        mean = w @ pts
        centred = pts - mean
        denom = 1.0 - np.dot(w, w)
        if denom <= 0:
            raise InsufficientDataError("weights concentrate on a single point")
        cov = (centred * w[:, None]).T @ centred / denom
    cov = 0.5 * (cov + cov.T)
    return float(cov[0, 0]) if scalar else cov


def finite_difference(fn, x: float, order: int = 1, step: float = 1e-5) -> float:
    """Central finite difference of first or second order."""
    if order == 1:
        vals = (fn(x + step), fn(x - step))
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite function value near x={x}")
        return (vals[0] - vals[1]) / (2.0 * step)
    if order == 2:
        vals = (fn(x + step), fn(x), fn(x - step))
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite function value near x={x}")
        return (vals[0] - 2.0 * vals[1] + vals[2]) / (step * step)
    raise ValueError("order must be 1 or 2")


@dataclass(frozen=True)
class RandomStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by numpy's PCG64 seeded through ``SeedSequence(seed,
    spawn_key=(stream_id,))``: distinct stream ids give statistically
    independent generators, and a given pair always replays the same draws.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RandomStream):
        return rng.generator()
    if rng is None:
        raise ValueError("an rng or RandomStream is required")
    return rng
