"""Call payoff, discounting and cross-replication error statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model_core import SteinSteinParams

METHODS = ("mc", "pf", "homotopy", "rw_homotopy")

CSV_COLUMNS = (
    "method", "n_particles", "n_steps", "m_s", "mean", "st_dev", "rmse", "bias",
    "rrmse", "rel_error", "cpu_seconds", "fom", "seed",
)
# Written after the fixed columns; empty unless it differs from rrmse by > 0.1%.
EXTRA_COLUMNS = ("rrmse_ref",)

_INT_FIELDS = {"n_particles", "n_steps", "m_s", "seed"}


class InsufficientReplicationsError(ValueError):
    pass


def discounted_call_payoff(params: SteinSteinParams, y_terminal):
    """e^{-rT} max(exp(y_T) - K, 0), vectorised over terminal log-prices."""
    y = np.asarray(y_terminal, dtype=float)
    out = params.discount * np.maximum(np.exp(y) - params.strike, 0.0)
    return out if out.ndim else float(out)


def weighted_price(params: SteinSteinParams, y_terminal, weights=None) -> float:
    payoff = discounted_call_payoff(params, y_terminal)
    if weights is None:
        return float(np.mean(payoff))
    return float(np.dot(weights, payoff))


@dataclass
class EstimatorReport:
    method: str
    reference_price: float
    mean: float
    st_dev: float
    rmse: float
    bias: float
    rrmse: float
    rel_error: float
    cpu_seconds: float
    fom: float
    m_s: int
    n_particles: int = 0
    n_steps: int = 0
    seed: int = 0
    rrmse_ref: float | None = None
    noisy_bias: bool = False
    estimates: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def fom_infinite(self) -> bool:
        return math.isinf(self.fom)

    def row(self) -> dict:
        out = {c: getattr(self, c) for c in CSV_COLUMNS}
        out["rrmse_ref"] = self.rrmse_ref
        return out

    def to_json(self) -> str:
        return json.dumps(self.row(), allow_nan=True)

    @classmethod
    def from_row(cls, row: dict, reference_price: float) -> "EstimatorReport":
        kw = {}
        for c in CSV_COLUMNS:
            raw = row[c]
            if c == "method":
                kw[c] = raw
            elif c in _INT_FIELDS:
                kw[c] = int(raw)
            else:
                kw[c] = float(raw)
        ref = row.get("rrmse_ref")
        kw["rrmse_ref"] = None if ref in (None, "") else float(ref)
        rep = cls(reference_price=reference_price, **kw)
        rep.noisy_bias = rep.rmse < rep.st_dev
        return rep


def compute_report(estimates, reference: float, cpu_seconds: float, method: str = "",
                   n_particles: int = 0, n_steps: int = 0, seed: int = 0) -> EstimatorReport:
    """Summary statistics of ``M_s`` replicated price estimates.

    St.dev uses divisor M_s - 1 and RMSE divisor M_s, so bias is taken from
    bias^2 = RMSE^2 - (M_s - 1)/M_s St.dev^2 (clamped at zero).  RRMSE and R
    are relative to the mean estimate; FOM = 1 / (R^2 cpu_seconds).
    """
    est = np.asarray(estimates, dtype=float)
    m_s = est.size
    if m_s < 2:
        raise InsufficientReplicationsError("need at least two replications")
    if not cpu_seconds > 0:
        raise ValueError("cpu_seconds must be > 0")
    mean = float(np.mean(est))
    st_dev = float(np.std(est, ddof=1))
    rmse = math.sqrt(float(np.mean((reference - est) ** 2)))
    radicand = rmse * rmse - (m_s - 1) / m_s * st_dev * st_dev
    bias = math.sqrt(max(radicand, 0.0))
    noisy = radicand < 0 or rmse < st_dev
    rrmse = rmse / mean
    rrmse_ref = rmse / reference
    if abs(rrmse_ref - rrmse) <= 1e-3 * abs(rrmse):
        rrmse_ref = None
    rel = st_dev / mean
    denom = rel * rel * cpu_seconds
    fom = 1.0 / denom if denom > 0 else math.inf
    return EstimatorReport(
        method=method, reference_price=float(reference), mean=mean, st_dev=st_dev,
        rmse=rmse, bias=bias, rrmse=rrmse, rel_error=rel, cpu_seconds=float(cpu_seconds),
        fom=fom, m_s=m_s, n_particles=int(n_particles), n_steps=int(n_steps), seed=int(seed),
        rrmse_ref=rrmse_ref, noisy_bias=noisy, estimates=est,
    )


def recompute_fom(report: EstimatorReport) -> float:
    denom = report.rel_error * report.rel_error * report.cpu_seconds
    return 1.0 / denom if denom > 0 else math.inf


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def reports_to_csv(reports, fh=None) -> str | None:
    """Write reports as CSV; floats use ``repr`` so rows parse back exactly."""
    buf = fh if fh is not None else io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS + EXTRA_COLUMNS)
    for rep in reports:
        row = rep.row()
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS + EXTRA_COLUMNS])
    return None if fh is not None else buf.getvalue()


def reports_from_csv(text_or_fh, reference_price: float):
    fh = io.StringIO(text_or_fh) if isinstance(text_or_fh, str) else text_or_fh
    return [EstimatorReport.from_row(row, reference_price) for row in csv.DictReader(fh)]
