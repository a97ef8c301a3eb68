"""Starting values for the optimizer.

Three strategies:

- ``init_default``: data-driven defaults (marker means for free intercepts,
  identity random-effect Cholesky, event-rate based hazard levels, fixed
  link-parameter patterns).
- ``init_from_lower``: expand a fitted single-class model to G classes by
  spreading each class-specific coordinate around the lower estimate in
  steps of one standard error.
- ``init_random``: same skeleton, but class-specific coordinates are drawn
  from the asymptotic Gaussian of the single-class fit (one draw per class).
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.special as sp

from .design import ModelStructure
from .layout import ParameterLayout

# 0.98 standard-normal quantile, used by the ordinal threshold defaults
_U98 = float(sp.ndtri(0.98))


def _hazard_defaults(baseline, event_stats, cause: int) -> np.ndarray:
    """Default raw baseline parameters for one cause."""
    nb = baseline.n_params
    if baseline.kind == "weibull":
        st = event_stats.get(str(cause), {"count": 0, "time_sum": 0.0})
        count, time_sum = st["count"], st["time_sum"]
        if count > 0 and time_sum > 0:
            ratio = count / time_sum
        else:
            ratio = 0.5
            warnings.warn(f"no observed events for cause {cause}; "
                          "starting the baseline hazard at rate 0.5")
        if baseline.logscale:
            return np.array([np.log(ratio), 0.0])
        return np.array([np.sqrt(ratio), 1.0])
    # piecewise-constant and spline baselines: flat start at 1/n_params
    if baseline.logscale:
        return np.full(nb, -np.log(nb))
    return np.full(nb, np.sqrt(1.0 / nb))


def _link_defaults(fam, mean: float, median: float, minimum: float) -> np.ndarray:
    if fam.kind == "identity":
        return np.zeros(0)
    if fam.kind == "linear":
        return np.array([mean, 1.0])
    if fam.kind == "beta":
        return np.array([0.0, -np.log(2.0), 0.7, 0.1])
    if fam.kind == "splines":
        out = np.full(fam.n_params, 0.1)
        out[0] = -2.0
        return out
    if fam.kind == "thresholds":
        M = fam.n_levels
        if M == 2:
            return np.zeros(1)
        out = np.full(fam.n_params, np.sqrt(2.0 * _U98 / (M - 2)))
        out[0] = 2.0 * _U98 * (-median + minimum + 1.0) / (M - 2)
        return out
    raise AssertionError(fam.kind)


def init_default(structure: ModelStructure) -> np.ndarray:
    """Default starting vector (free parameters only)."""
    lay = structure.layout
    spec = structure.spec
    stats = structure.stats
    means = stats.get("marker_mean", {})
    meds = stats.get("marker_median", {})
    mins = stats.get("marker_min", {})

    link_eta = {}
    for mk, fam in zip(spec.outcomes, structure.link_families):
        link_eta[mk] = _link_defaults(fam, means.get(mk, 0.0),
                                      meds.get(mk, 0.0), mins.get(mk, 0.0))
    hazard_eta = {}
    if structure.baselines is not None:
        for p, b in enumerate(structure.baselines, start=1):
            hazard_eta[p] = _hazard_defaults(b, stats.get("events", {}), p)

    chol_pos = lay._chol_positions()
    first_marker = spec.outcomes[0]
    theta = np.zeros(lay.n_free)
    for i, lab in enumerate(lay.labels):
        b = lab.block
        if b in ("fixed", "fixed_class"):
            theta[i] = means.get(first_marker, 0.0) if lab.term == "intercept" else 0.0
        elif b == "hazard":
            theta[i] = hazard_eta[lab.cause][lab.idx - 1]
        elif b == "chol":
            r, c = chol_pos[lab.idx - 1]
            theta[i] = 1.0 if r == c else 0.0
        elif b in ("re_sd", "class_scale", "marker_sd", "resid_sd"):
            theta[i] = 1.0
        elif b == "proc":
            theta[i] = 1.0 if lab.term == "sd" else 0.0
        elif b == "link":
            theta[i] = link_eta[lab.marker][lab.idx - 1]
        # classmb, hazard_shift, surv, surv_class, contrast stay 0
    return theta


# ----------------------------------------------------------------------
# expanding a single-class fit

_CLASS_BLOCKS = ("fixed_class", "surv_class", "hazard")


def _source_key(lab):
    """Key of the single-class coordinate a label inherits from."""
    block = {"fixed_class": "fixed", "surv_class": "surv"}.get(lab.block, lab.block)
    return (block, lab.term, lab.cause, lab.marker, lab.idx)


def _class_specific(lab) -> bool:
    return lab.block in _CLASS_BLOCKS and lab.klass is not None


def _source_table(source_layout: ParameterLayout, theta, se):
    table = {}
    for i, lab in enumerate(source_layout.labels):
        table[_source_key(lab)] = (float(theta[i]), float(se[i]), i)
    return table


def _se_from_cov(layout: ParameterLayout, cov) -> np.ndarray:
    if cov is None:
        return np.zeros(layout.n_free)
    d = np.clip(np.diag(np.asarray(cov, dtype=float)), 0.0, None)
    return np.sqrt(d)


def init_from_lower(layout: ParameterLayout, source_layout: ParameterLayout,
                    theta_source: np.ndarray, cov_source=None) -> np.ndarray:
    """Spread a single-class estimate into G classes.

    Class g of a class-specific coordinate starts at
    estimate + (g - (G+1)/2) * SE; coordinates without a single-class
    counterpart (e.g. a location-constrained intercept) start at 0.
    Membership coefficients start at 0, class variance scales at 1 and
    proportional-hazard shifts at g/2.
    """
    theta_source = np.asarray(theta_source, dtype=float)
    se = _se_from_cov(source_layout, cov_source)
    table = _source_table(source_layout, theta_source, se)
    G = layout.ng
    out = np.zeros(layout.n_free)
    for i, lab in enumerate(layout.labels):
        if lab.block == "classmb":
            out[i] = 0.0
        elif lab.block == "hazard_shift":
            out[i] = lab.klass / 2.0
        elif lab.block == "class_scale":
            out[i] = 1.0
        elif _class_specific(lab):
            v, s, _ = table.get(_source_key(lab), (0.0, 0.0, None))
            out[i] = v + (lab.klass - (G + 1) / 2.0) * s
        else:
            v, _, _ = table.get(_source_key(lab), (0.0, 0.0, None))
            out[i] = v
    return out


def init_random(layout: ParameterLayout, source_layout: ParameterLayout,
                theta_source: np.ndarray, cov_source,
                rng: np.random.Generator) -> np.ndarray:
    """Random start: one Gaussian draw per class for the class-specific part.

    The draw covers the single-class coordinates feeding class-specific
    parameters, with their joint asymptotic covariance sub-block; common
    coordinates are copied, the deterministic entries (memberships, scales,
    shifts) match init_from_lower.  Exactly G standard-normal vectors are
    consumed from `rng`, so draws are reproducible for a keyed generator.
    """
    theta_source = np.asarray(theta_source, dtype=float)
    table = _source_table(source_layout, theta_source,
                          np.zeros(source_layout.n_free))
    G = layout.ng

    slots: dict = {}
    for lab in layout.labels:
        if _class_specific(lab):
            key = _source_key(lab)
            if key not in slots:
                slots[key] = table.get(key, (0.0, 0.0, None))
    d = len(slots)
    mu = np.array([v for v, _, _ in slots.values()])
    src_idx = [i for _, _, i in slots.values()]

    cov_sub = np.zeros((d, d))
    if cov_source is not None:
        cov_source = np.asarray(cov_source, dtype=float)
        for a, ia in enumerate(src_idx):
            for bpos, ib in enumerate(src_idx):
                if ia is not None and ib is not None:
                    cov_sub[a, bpos] = cov_source[ia, ib]
    try:
        root = np.linalg.cholesky(cov_sub)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh((cov_sub + cov_sub.T) / 2.0)
        root = V @ np.diag(np.sqrt(np.clip(w, 0.0, None)))

    slot_pos = {key: j for j, key in enumerate(slots)}
    draws = [mu + root @ rng.standard_normal(d) for _ in range(G)]

    out = np.zeros(layout.n_free)
    for i, lab in enumerate(layout.labels):
        if lab.block == "classmb":
            out[i] = 0.0
        elif lab.block == "hazard_shift":
            out[i] = lab.klass / 2.0
        elif lab.block == "class_scale":
            out[i] = 1.0
        elif _class_specific(lab):
            out[i] = draws[lab.klass - 1][slot_pos[_source_key(lab)]]
        else:
            v, _, _ = table.get(_source_key(lab), (0.0, 0.0, None))
            out[i] = v
    return out
