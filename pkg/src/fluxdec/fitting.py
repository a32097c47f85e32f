"""Least-squares helpers shared by the fluctuation and scaling modules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InsufficientData, NonpositiveValue


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_stderr: float
    r2: float
    n: int


def fit_line(x, y) -> LineFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 2:
        raise InsufficientData("need at least two points for a line fit")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise InsufficientData("all abscissae coincide")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    stderr = float(np.sqrt(ss_res / (n - 2) / sxx)) if n > 2 else 0.0
    return LineFit(float(slope), float(intercept), stderr, float(r2), n)


@dataclass(frozen=True)
class PowerFit:
    exponent: float
    stderr: float
    r2: float
    prefactor: float

    @property
    def q(self) -> float:
        return self.exponent

    def to_dict(self) -> dict:
        return {"q": self.exponent, "stderr": self.stderr, "r2": self.r2,
                "prefactor": self.prefactor}


def fit_power(rows: Iterable, min_rows: int = 3) -> PowerFit:
    """Fit ``value ~ prefactor * V**q`` by least squares on log-log axes.

    ``rows`` holds ``(V, value)`` pairs (extra trailing fields are ignored).
    """
    rows = [tuple(r)[:2] for r in rows]
    if len(rows) < min_rows:
        raise InsufficientData(f"need at least {min_rows} rows, got {len(rows)}")
    sizes = np.array([r[0] for r in rows], dtype=float)
    vals = np.array([r[1] for r in rows], dtype=float)
    if np.any(sizes <= 0) or np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise NonpositiveValue("power-law fits need positive sizes and values")
    if np.unique(sizes).size < 2:
        raise InsufficientData("need at least two distinct sizes")
    fit = fit_line(np.log(sizes), np.log(vals))
    return PowerFit(fit.slope, fit.slope_stderr, fit.r2, float(np.exp(fit.intercept)))
