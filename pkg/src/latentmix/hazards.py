"""Parametric baseline risk functions for the survival part of joint models.

Three families, each with a positivity transform of the raw (estimated)
parameters controlled by `logscale`:

- weibull: 2 parameters.  logscale False: w = raw^2, hazard
  w1 w2 (w1 t)^(w2-1), cumulative (w1 t)^w2.  logscale True: w = exp(raw),
  hazard w1 w2 t^(w2-1), cumulative w1 t^w2.
- piecewise: constant on the intervals of a knot vector (n_z knots ->
  n_z - 1 parameters).
- msplines: cubic M-spline expansion of the hazard (n_z knots -> n_z + 2
  parameters); the cumulative uses the matching I-splines, so dA/dt = lambda
  holds exactly.

Knot-based families are defined on [knots[0], knots[-1]].  That interval covers
all event/censoring times at fit time by construction; outside it the hazard
continues at its boundary value above (for horizon predictions and simulation)
and is 0 below the first knot (nobody under observation before the entry
floor).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import basis
from .errors import SpecError

_SPLINES_RE = re.compile(r"^(\d+)-(equi|quant|manual)-splines$")
_PIECEWISE_RE = re.compile(r"^(\d+)-(equi|quant|manual)-piecewise$")


@dataclass(frozen=True)
class HazardDescriptor:
    kind: str                 # weibull | piecewise | msplines
    n_knots: int = 5
    placement: str = "quant"


def parse_hazard_descriptor(text: str) -> HazardDescriptor:
    text = text.strip()
    if text.lower() == "weibull":
        return HazardDescriptor(kind="weibull")
    if text == "piecewise":
        return HazardDescriptor(kind="piecewise")
    if text == "splines":
        return HazardDescriptor(kind="msplines")
    m = _PIECEWISE_RE.match(text)
    if m:
        n = int(m.group(1))
        if n < 2:
            raise SpecError("piecewise hazards need at least 2 knots")
        return HazardDescriptor(kind="piecewise", n_knots=n, placement=m.group(2))
    m = _SPLINES_RE.match(text)
    if m:
        n = int(m.group(1))
        if n < 3:
            raise SpecError("spline hazards need at least 3 knots")
        return HazardDescriptor(kind="msplines", n_knots=n, placement=m.group(2))
    raise SpecError(f"unknown hazard descriptor {text!r}")


@dataclass(frozen=True)
class BaselineHazard:
    """A baseline family resolved against data (knots fixed)."""

    kind: str
    logscale: bool = False
    knots: np.ndarray | None = field(default=None)

    @property
    def n_params(self) -> int:
        if self.kind == "weibull":
            return 2
        if self.kind == "piecewise":
            return len(self.knots) - 1
        if self.kind == "msplines":
            return len(self.knots) + 2
        raise SpecError(f"unknown hazard kind {self.kind!r}")

    def transform(self, raw: np.ndarray) -> np.ndarray:
        """Positivity map for the raw parameters (square or exp)."""
        raw = np.asarray(raw, dtype=float)
        return np.exp(raw) if self.logscale else raw ** 2

    def hazard(self, t, w: np.ndarray) -> np.ndarray:
        """lambda_0(t) for transformed parameters w."""
        t = np.asarray(t, dtype=float)
        if self.kind == "weibull":
            if self.logscale:
                return w[0] * w[1] * t ** (w[1] - 1.0)
            return w[0] * w[1] * (w[0] * t) ** (w[1] - 1.0)
        kn = self.knots
        tc = np.clip(t, kn[0], kn[-1])
        if self.kind == "piecewise":
            idx = np.clip(np.searchsorted(kn, tc, side="right") - 1, 0, len(kn) - 2)
            lam = w[idx]
        else:
            lam = w @ basis.mspline_basis(tc, kn, order=4)
        return np.where(t < kn[0], 0.0, lam)

    def cumulative(self, t, w: np.ndarray) -> np.ndarray:
        """A_0(t) = integral of the baseline hazard up to t."""
        t = np.asarray(t, dtype=float)
        if self.kind == "weibull":
            if self.logscale:
                return w[0] * t ** w[1]
            return (w[0] * t) ** w[1]
        kn = self.knots
        tc = np.clip(t, kn[0], kn[-1])
        if self.kind == "piecewise":
            spent = np.clip(tc[..., None] - kn[:-1], 0.0, np.diff(kn))
            acc = spent @ w
        else:
            acc = w @ basis.ispline_basis(tc, kn, order=4)
        # continue with the boundary hazard beyond the last knot
        tail = np.where(t > kn[-1], (t - kn[-1]) * self.hazard(kn[-1], w), 0.0)
        return np.where(t < kn[0], 0.0, acc + tail)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "logscale": self.logscale,
            "knots": None if self.knots is None else list(map(float, self.knots)),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineHazard":
        knots = d.get("knots")
        return cls(kind=d["kind"], logscale=bool(d["logscale"]),
                   knots=None if knots is None else np.asarray(knots, dtype=float))


def resolve_hazard(desc: HazardDescriptor, logscale: bool, time_sample=None,
                   entry_floor: float = 0.0, manual_knots=None) -> BaselineHazard:
    """Fix knots against the observed times.

    First knot at the entry floor (minimum entry time; 0 without delayed
    entry), last at the maximum observed event/censoring time; interior knots
    per the descriptor placement.
    """
    if desc.kind == "weibull":
        return BaselineHazard(kind="weibull", logscale=logscale)
    if time_sample is None or len(time_sample) == 0:
        raise SpecError("knot-based hazards need observed times")
    hi = float(np.max(time_sample))
    knots = basis.place_knots(desc.n_knots, desc.placement, float(entry_floor), hi,
                              sample=time_sample, manual=manual_knots)
    return BaselineHazard(kind=desc.kind, logscale=logscale, knots=knots)
