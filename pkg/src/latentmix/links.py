"""Monotone link families mapping an observed marker to the latent scale.

A link family H maps the latent process to the marker; estimation works with
the inverse transform H^{-1}(y; eta) and its log-Jacobian.  Families:

- identity: raw Gaussian marker (no parameters; residual SD handled separately)
- linear: (y - eta1) / eta2
- beta: rescaled Beta CDF with canonical parameters obtained from (eta1, eta2)
  and affine part (eta3, eta4)
- splines: eta0 + sum_l eta_l^2 I_l(y) on quadratic I-splines (m knots -> m+2
  parameters)
- thresholds: ordinal outcome with M levels; M-1 parameters expand to
  increasing thresholds eta*_1 = eta_1, eta*_l = eta*_{l-1} + eta_l^2

The squared coefficients make monotonicity automatic for splines/thresholds.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sp

from . import basis
from .errors import DataError, EvaluationFailure, SpecError

_SPLINES_RE = re.compile(r"^(\d+)-(equi|quant|manual)-splines$")


@dataclass(frozen=True)
class LinkDescriptor:
    """Parsed, data-independent form of a link request."""

    kind: str                     # identity | linear | beta | splines | thresholds
    n_knots: int = 5
    placement: str = "quant"


def parse_link_descriptor(text: str | None) -> LinkDescriptor:
    if text is None:
        return LinkDescriptor(kind="identity")
    text = text.strip()
    if text in ("identity", "linear", "beta", "thresholds"):
        return LinkDescriptor(kind=text)
    if text == "splines":
        # default spline link: 5 knots at sample quantiles
        return LinkDescriptor(kind="splines", n_knots=5, placement="quant")
    m = _SPLINES_RE.match(text)
    if m:
        n = int(m.group(1))
        if n < 3:
            raise SpecError("spline links need at least 3 knots")
        return LinkDescriptor(kind="splines", n_knots=n, placement=m.group(2))
    raise SpecError(f"unknown link descriptor {text!r}")


@dataclass(frozen=True)
class LinkFamily:
    """A link resolved against data (ranges/knots/levels fixed)."""

    kind: str
    y_min: float | None = None
    y_max: float | None = None
    eps_y: float = 0.5
    knots: np.ndarray | None = field(default=None)
    n_levels: int | None = None     # M (thresholds)
    level_offset: int | None = None  # M0

    @property
    def n_params(self) -> int:
        if self.kind == "identity":
            return 0
        if self.kind == "linear":
            return 2
        if self.kind == "beta":
            return 4
        if self.kind == "splines":
            return len(self.knots) + 2
        if self.kind == "thresholds":
            return self.n_levels - 1
        raise SpecError(f"unknown link kind {self.kind!r}")

    @property
    def ordinal(self) -> bool:
        return self.kind == "thresholds"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "eps_y": self.eps_y,
            "knots": None if self.knots is None else list(map(float, self.knots)),
            "n_levels": self.n_levels,
            "level_offset": self.level_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinkFamily":
        knots = d.get("knots")
        return cls(
            kind=d["kind"],
            y_min=d.get("y_min"),
            y_max=d.get("y_max"),
            eps_y=d.get("eps_y", 0.5),
            knots=None if knots is None else np.asarray(knots, dtype=float),
            n_levels=d.get("n_levels"),
            level_offset=d.get("level_offset"),
        )


def resolve_link(desc: LinkDescriptor, y_sample=None, declared_range=None,
                 manual_knots=None, eps_y: float = 0.5) -> LinkFamily:
    """Fix the data-dependent parts of a link (range, knots, ordinal levels).

    `declared_range` overrides the observed marker range for beta/splines
    links; observations outside it are a data error at validation time.
    """
    if desc.kind == "identity":
        return LinkFamily(kind="identity")
    if desc.kind == "linear":
        return LinkFamily(kind="linear")

    if desc.kind == "thresholds":
        if y_sample is not None and len(y_sample):
            y = np.asarray(y_sample, dtype=float)
            if not np.allclose(y, np.round(y)):
                raise DataError("threshold link requires integer-coded outcome levels")
            m0 = int(np.round(y.min()))
            m_levels = int(np.round(y.max())) - m0 + 1
        elif declared_range is not None:
            m0 = int(round(declared_range[0]))
            m_levels = int(round(declared_range[1])) - m0 + 1
        else:
            raise SpecError("threshold link needs observed outcome levels "
                            "or a declared level range")
        if m_levels < 2:
            raise DataError("threshold link needs at least two outcome levels")
        return LinkFamily(kind="thresholds", n_levels=m_levels, level_offset=m0)

    # beta / splines need a range
    if declared_range is not None:
        lo, hi = float(declared_range[0]), float(declared_range[1])
        if y_sample is not None and len(y_sample):
            y = np.asarray(y_sample, dtype=float)
            if y.min() < lo or y.max() > hi:
                raise DataError("observations outside the declared link range")
    elif y_sample is not None and len(y_sample):
        y = np.asarray(y_sample, dtype=float)
        lo, hi = float(y.min()), float(y.max())
    else:
        raise SpecError(f"{desc.kind} link needs data or a declared range")
    if not hi > lo:
        raise DataError("degenerate marker range for link resolution")

    if desc.kind == "beta":
        return LinkFamily(kind="beta", y_min=lo, y_max=hi, eps_y=eps_y)

    knots = basis.place_knots(
        desc.n_knots, desc.placement, lo, hi,
        sample=y_sample, manual=manual_knots,
    )
    return LinkFamily(kind="splines", y_min=lo, y_max=hi, knots=knots)


def beta_canonical(eta1: float, eta2: float) -> tuple[float, float]:
    """Map the two unconstrained Beta-link parameters to CDF shape parameters."""
    e1, e2 = np.exp(eta1), np.exp(eta2)
    a = e1 / (e2 * (1.0 + e1))
    b = 1.0 / (e1 * (1.0 + e2))
    return float(a), float(b)


def expand_thresholds(eta: np.ndarray) -> np.ndarray:
    """Increasing thresholds: first free, increments squared."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    out[0] = eta[0]
    if eta.size > 1:
        out[1:] = eta[1:] ** 2
        out = np.cumsum(out)
    return out


def _beta_rescale(link: LinkFamily, y: np.ndarray) -> tuple[np.ndarray, float]:
    span = link.y_max - link.y_min + 2.0 * link.eps_y
    return (y - link.y_min + link.eps_y) / span, span


def inverse_transform(link: LinkFamily, y, eta) -> tuple[np.ndarray, np.ndarray]:
    """H^{-1}(y; eta) and per-observation log-Jacobian.

    Continuous links only; thresholds, being interval-valued, are handled by
    the ordinal likelihood directly.

    Raises EvaluationFailure when the Jacobian is not positive at some
    observation (degenerate eta), which the fitting loop maps to a rejected
    step.
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if link.kind == "identity":
        return y, np.zeros_like(y)
    if link.kind == "linear":
        if eta[1] == 0.0:
            raise EvaluationFailure("linear link scale is zero")
        vals = (y - eta[0]) / eta[1]
        logjac = np.full_like(y, -np.log(abs(eta[1])))
        return vals, logjac
    if link.kind == "beta":
        if eta[3] == 0.0:
            raise EvaluationFailure("beta link scale is zero")
        a, b = beta_canonical(eta[0], eta[1])
        if not (np.isfinite(a) and np.isfinite(b) and a > 0.0 and b > 0.0):
            raise EvaluationFailure("beta link shape parameters degenerate")
        ystar, span = _beta_rescale(link, y)
        vals = (sp.betainc(a, b, ystar) - eta[2]) / eta[3]
        logjac = ((a - 1.0) * np.log(ystar) + (b - 1.0) * np.log1p(-ystar)
                  - sp.betaln(a, b) - np.log(abs(eta[3])) - np.log(span))
        if not np.all(np.isfinite(logjac)):
            raise EvaluationFailure("beta link Jacobian not finite")
        return vals, logjac
    if link.kind == "splines":
        coefs = eta[1:] ** 2
        ib = basis.ispline_basis(y, link.knots, order=3)
        mb = basis.mspline_basis(y, link.knots, order=3)
        vals = eta[0] + coefs @ ib
        jac = coefs @ mb
        if np.any(jac <= 0.0) or not np.all(np.isfinite(jac)):
            raise EvaluationFailure("spline link Jacobian not positive")
        return vals, np.log(jac)
    raise SpecError(f"inverse transform undefined for link kind {link.kind!r}")


def transform_image(link: LinkFamily, eta) -> tuple[float, float]:
    """Range of H^{-1} over the marker range (the image of the latent values)."""
    eta = np.asarray(eta, dtype=float)
    if link.kind == "splines":
        lo = eta[0]
        return float(lo), float(lo + np.sum(eta[1:] ** 2))
    if link.kind == "beta":
        vals, _ = inverse_transform(link, np.array([link.y_min, link.y_max]), eta)
        return float(min(vals)), float(max(vals))
    raise SpecError("image only defined for bounded links")


def forward_transform(link: LinkFamily, lam, eta):
    """H(lam; eta): latent values back to the marker scale.

    For bounded links, latent values outside the image clamp to the marker
    range endpoints.  For thresholds, returns the ordinal level containing
    each latent value.
    """
    lam = np.asarray(lam, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if link.kind == "identity":
        return lam.copy()
    if link.kind == "linear":
        return eta[0] + eta[1] * lam
    if link.kind == "thresholds":
        cuts = expand_thresholds(eta)
        return link.level_offset + np.searchsorted(cuts, lam, side="right").astype(float)
    if link.kind == "beta":
        a, b = beta_canonical(eta[0], eta[1])
        p = np.clip(eta[3] * lam + eta[2], 0.0, 1.0)
        ystar = sp.betaincinv(a, b, p)
        span = link.y_max - link.y_min + 2.0 * link.eps_y
        y = ystar * span + link.y_min - link.eps_y
        return np.clip(y, link.y_min, link.y_max)
    if link.kind == "splines":
        coefs = eta[1:] ** 2
        lo, hi = link.y_min, link.y_max
        # monotone bisection; the transform is cheap to evaluate in bulk
        ylo = np.full(lam.shape, lo)
        yhi = np.full(lam.shape, hi)
        for _ in range(80):
            mid = 0.5 * (ylo + yhi)
            val = eta[0] + coefs @ basis.ispline_basis(mid, link.knots, order=3)
            high = val > lam
            yhi = np.where(high, mid, yhi)
            ylo = np.where(high, ylo, mid)
        return 0.5 * (ylo + yhi)
    raise SpecError(f"unknown link kind {link.kind!r}")
