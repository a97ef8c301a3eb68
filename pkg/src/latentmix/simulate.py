"""Data generation from a fully specified model.

A SimDesign pairs a model spec with true parameter values and describes the
measurement schedule and subject-level covariate distributions.  No dataset
is involved, so every data-dependent model piece must be declared: bounded
links need a range, spline links/hazards need manual (or equidistant) knots,
threshold links need a level range, and joint models need a follow-up horizon
(administrative censoring time and hazard-knot upper bound).

Draw streams are keyed per subject (counter-based generator seeded with
(seed, subject index)), so a sample is reproducible and any prefix of
subjects is unchanged when n_subjects grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hazards as hz
from . import links as lk
from .data import LongDataset
from .design import ModelStructure, term_values
from .errors import SpecError
from .layout import build_layout, class_membership_probs
from .likelihood import _class_mean, process_cov
from .modelspec import ModelSpec

_EVENT_TOL = 1e-10


@dataclass(frozen=True)
class Covariate:
    """Subject-level covariate generator.

    kinds: "constant" (value), "bernoulli" (p), "normal" (mean, sd),
    "uniform" (lo, hi).
    """

    kind: str
    a: float = 0.0
    b: float = 1.0

    def draw(self, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return float(self.a)
        if self.kind == "bernoulli":
            return float(rng.random() < self.a)
        if self.kind == "normal":
            return float(self.a + self.b * rng.standard_normal())
        if self.kind == "uniform":
            return float(self.a + (self.b - self.a) * rng.random())
        raise SpecError(f"unknown covariate generator {self.kind!r}")


@dataclass
class SimDesign:
    spec: ModelSpec
    theta: np.ndarray
    n_subjects: int
    times: np.ndarray                       # shared measurement grid
    covariates: dict = field(default_factory=dict)   # name -> Covariate
    horizon: float | None = None            # required for joint models

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)


def design_structure(design: SimDesign) -> ModelStructure:
    """Resolve links/hazards from declarations alone and build the layout."""
    spec = design.spec
    spec.validate()
    linkfams = []
    for mk, text in zip(spec.outcomes, spec.link_descriptors()):
        desc = lk.parse_link_descriptor(text)
        linkfams.append(lk.resolve_link(
            desc, y_sample=None,
            declared_range=spec.link_ranges.get(mk),
            manual_knots=spec.link_knots.get(mk),
            eps_y=spec.eps_y,
        ))
    linkfams = tuple(linkfams)
    baselines = None
    if spec.survival is not None:
        if design.horizon is None or design.horizon <= 0:
            raise SpecError("joint-model simulation needs a positive horizon")
        baselines = []
        for p, text in enumerate(spec.survival.hazards, start=1):
            desc = hz.parse_hazard_descriptor(text)
            manual = spec.survival.manual_knots[p - 1] if spec.survival.manual_knots else None
            baselines.append(hz.resolve_hazard(
                desc, logscale=spec.survival.logscale,
                time_sample=np.array([design.horizon]),
                entry_floor=0.0, manual_knots=manual,
            ))
        baselines = tuple(baselines)
    layout = build_layout(spec, tuple(f.n_params for f in linkfams), baselines)
    if design.theta.shape != (layout.n_free,):
        raise SpecError(f"true parameter vector has length {design.theta.size}, "
                        f"the model takes {layout.n_free}")
    return ModelStructure(spec=spec, link_families=linkfams, baselines=baselines,
                          layout=layout, n_subjects=0, n_obs=0,
                          n_deleted_rows=0, n_dropped_subjects=0)


def _psd_root(mat: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix (tolerates the singular BM-at-zero case)."""
    w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def _total_cumulative(structure, blocks, g, lin, t):
    total = 0.0
    for p in range(1, structure.layout.survival.n_causes + 1):
        base = structure.baselines[p - 1]
        w = base.transform(blocks.hazard_raw[p - 1][g])
        risk = np.exp(blocks.hazard_shift[p - 1][g] + lin[p - 1])
        total += float(base.cumulative(np.array([t]), w)[0]) * risk
    return total


def _cause_hazards(structure, blocks, g, lin, t):
    out = np.empty(structure.layout.survival.n_causes)
    for p in range(1, out.size + 1):
        base = structure.baselines[p - 1]
        w = base.transform(blocks.hazard_raw[p - 1][g])
        risk = np.exp(blocks.hazard_shift[p - 1][g] + lin[p - 1])
        out[p - 1] = float(base.hazard(np.array([t]), w)[0]) * risk
    return out


def _draw_event(structure, blocks, g, subj_cols, rng, horizon):
    spec = structure.spec
    P = structure.layout.survival.n_causes
    lin = np.zeros(P)
    for p in range(1, P + 1):
        s1 = [t for t in spec.survival.terms if not t.mixture and t.applies_to(p)]
        s2 = [t for t in spec.survival.terms if t.mixture and t.applies_to(p)]
        v = 0.0
        for j, t in enumerate(s1):
            v += blocks.nu[p - 1][j] * term_values(t.name, subj_cols, 1)[0]
        for j, t in enumerate(s2):
            v += blocks.delta[p - 1][g, j] * term_values(t.name, subj_cols, 1)[0]
        lin[p - 1] = v
    return _sample_event_time(structure, blocks, g, lin, rng, horizon)


def _sample_event_time(structure, blocks, g, lin, rng, horizon):
    P = structure.layout.survival.n_causes
    target = -np.log(rng.random())
    if _total_cumulative(structure, blocks, g, lin, horizon) <= target:
        return float(horizon), 0
    lo_t, hi_t = 0.0, float(horizon)
    while hi_t - lo_t > _EVENT_TOL:
        mid = 0.5 * (lo_t + hi_t)
        if _total_cumulative(structure, blocks, g, lin, mid) < target:
            lo_t = mid
        else:
            hi_t = mid
    t_event = 0.5 * (lo_t + hi_t)
    lams = _cause_hazards(structure, blocks, g, lin, t_event)
    tot = lams.sum()
    if tot <= 0:
        cause = int(rng.integers(1, P + 1))
    else:
        cause = 1 + int(np.searchsorted(np.cumsum(lams / tot), rng.random()))
        cause = min(cause, P)
    return float(t_event), cause


def simulate_dataset(design: SimDesign, seed: int = 0) -> LongDataset:
    """Draw a long-format dataset from the design's generative model."""
    structure = design_structure(design)
    spec = design.spec
    lay = structure.layout
    blocks = lay.unpack(design.theta)
    G, q = lay.ng, lay.q
    times = design.times
    n_t = times.size
    if n_t == 0:
        raise SpecError("need a non-empty measurement grid")

    proc_root = None
    if spec.cor is not None:
        proc_root = _psd_root(process_cov(times, spec.cor.kind,
                                          blocks.proc_sd, blocks.proc_rho))

    needed = set()
    for group in (spec.fixed, spec.mixture, spec.random, spec.classmb, spec.contrast):
        for t in group:
            needed.update(c for c in t.split("*") if c not in ("intercept", spec.timevar))
    if spec.survival is not None:
        for t in spec.survival.terms:
            needed.update(c for c in t.name.split("*") if c != "intercept")
    missing = needed - set(design.covariates)
    if missing:
        raise SpecError(f"no generator declared for covariates {sorted(missing)}")

    ids, rows = [], {spec.timevar: []}
    for name in design.covariates:
        rows[name] = []
    for mk in spec.outcomes:
        rows[mk] = []
    if spec.survival is not None:
        rows[spec.survival.time] = []
        rows[spec.survival.event] = []
        if spec.survival.entry is not None:
            rows[spec.survival.entry] = []

    for i in range(design.n_subjects):
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        cov_vals = {name: gen.draw(rng) for name, gen in design.covariates.items()}

        subj_cols = {name: np.full(n_t, v) for name, v in cov_vals.items()}
        subj_cols[spec.timevar] = times

        xc = np.ones((1, 1 + len(spec.classmb)))
        for j, term in enumerate(spec.classmb, start=1):
            xc[0, j] = term_values(term, {k: v[:1] for k, v in subj_cols.items()}, 1)[0]
        probs = class_membership_probs(blocks.xi, xc)[0]
        g = int(np.searchsorted(np.cumsum(probs), rng.random()))
        g = min(g, G - 1)

        u = blocks.omega[g] * (blocks.chol_u.T @ rng.standard_normal(q)) if q else np.zeros(0)
        w_path = proc_root @ rng.standard_normal(n_t) if proc_root is not None else np.zeros(n_t)
        alpha = (blocks.alpha_sd * rng.standard_normal(len(spec.outcomes))
                 if spec.random_y else np.zeros(len(spec.outcomes)))

        t_event, cause = np.nan, np.nan
        keep = np.ones(n_t, dtype=bool)
        if spec.survival is not None:
            single = {k: v[:1] for k, v in subj_cols.items()}
            t_event, cause = _draw_event(structure, blocks, g, single, rng,
                                         design.horizon)
            keep = times <= t_event
            if not keep.any():
                keep[0] = True     # keep the first visit so the subject exists

        X1 = np.column_stack([term_values(t, subj_cols, n_t) for t in spec.common_fixed]) \
            if spec.common_fixed else np.zeros((n_t, 0))
        X2 = np.column_stack([term_values(t, subj_cols, n_t) for t in spec.mixture]) \
            if spec.mixture else np.zeros((n_t, 0))
        Z = np.column_stack([term_values(t, subj_cols, n_t) for t in spec.random]) \
            if spec.random else np.zeros((n_t, 0))
        XY = np.column_stack([term_values(t, subj_cols, n_t) for t in spec.contrast]) \
            if spec.contrast else np.zeros((n_t, 0))

        base = X1 @ blocks.beta + w_path
        if X2.shape[1]:
            base = base + X2 @ blocks.upsilon[g]
        if q:
            base = base + Z @ u

        n_keep = int(keep.sum())
        ids.extend([i + 1] * n_keep)
        rows[spec.timevar].extend(times[keep])
        for name, v in cov_vals.items():
            rows[name].extend([v] * n_keep)
        if spec.survival is not None:
            rows[spec.survival.time].extend([t_event] * n_keep)
            rows[spec.survival.event].extend([cause] * n_keep)
            if spec.survival.entry is not None:
                rows[spec.survival.entry].extend([0.0] * n_keep)

        for k, mk in enumerate(spec.outcomes):
            lam = base + alpha[k]
            if XY.shape[1]:
                lam = lam + XY @ blocks.gamma[k]
            lam = lam + blocks.resid_sd[k] * rng.standard_normal(n_t)
            y = lk.forward_transform(structure.link_families[k], lam,
                                     blocks.eta[k])
            rows[mk].extend(y[keep])

    return LongDataset(ids=np.asarray(ids),
                       columns={k: np.asarray(v, dtype=float)
                                for k, v in rows.items()})


def replicate_outcomes(fit, seed: int = 0) -> dict:
    """Redraw outcomes (and events) on each fitted subject's own design.

    A parameter-level predictive check: same subjects, same visit times and
    covariates, fresh class/random-effect/noise draws at the estimated
    parameters.  Events are redrawn from time zero with administrative
    censoring at the largest observed follow-up time.  Returns long-format
    columns (subject, time, marker, observed, simulated, and for joint models
    the per-subject simulated event time and cause).
    """
    model = fit.model
    if model is None:
        raise SpecError("replication needs a dataset-bound fit")
    structure = model.structure
    spec = structure.spec
    lay = structure.layout
    blocks = lay.unpack(np.asarray(fit.theta, dtype=float))
    G, q, K = lay.ng, lay.q, len(spec.outcomes)
    joint = spec.survival is not None
    horizon = structure.stats.get("max_time") if joint else None

    out: dict = {"subject": [], "time": [], "marker": [], "observed": [],
                 "simulated": []}
    if joint:
        out["sim_event_time"] = []
        out["sim_event"] = []

    for i, subj in enumerate(model.subjects):
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        probs = class_membership_probs(blocks.xi, subj.xc.reshape(1, -1))[0]
        g = min(int(np.searchsorted(np.cumsum(probs), rng.random())), G - 1)

        n = subj.n_obs
        u = (blocks.omega[g] * (blocks.chol_u.T @ rng.standard_normal(q))
             if q else np.zeros(0))
        path = np.zeros(n)
        if spec.cor is not None:
            pcov = process_cov(subj.times, spec.cor.kind,
                               blocks.proc_sd, blocks.proc_rho)
            path = _psd_root(pcov) @ rng.standard_normal(n)
        alpha = (blocks.alpha_sd * rng.standard_normal(K)
                 if spec.random_y else np.zeros(K))

        t_event, cause = np.nan, 0
        if joint:
            sv = subj.survival
            P = lay.survival.n_causes
            lin = np.zeros(P)
            for p in range(P):
                v = float(sv.xs1[p] @ blocks.nu[p]) if len(sv.xs1[p]) else 0.0
                if len(sv.xs2[p]):
                    v += float(sv.xs2[p] @ blocks.delta[p][g])
                lin[p] = v
            t_event, cause = _sample_event_time(structure, blocks, g, lin,
                                                rng, horizon)

        mk = subj.marker_index
        lam = (_class_mean(subj, blocks, g) + subj.Z @ u + path + alpha[mk]
               + blocks.resid_sd[mk] * rng.standard_normal(n))
        ysim = np.empty(n)
        for k, fam in enumerate(structure.link_families):
            sel = mk == k
            if sel.any():
                ysim[sel] = lk.forward_transform(fam, lam[sel], blocks.eta[k])

        out["subject"].extend([subj.subject_id] * n)
        out["time"].extend(float(t) for t in subj.times)
        out["marker"].extend(spec.outcomes[int(j)] for j in mk)
        out["observed"].extend(float(v) for v in subj.y)
        out["simulated"].extend(float(v) for v in ysim)
        if joint:
            out["sim_event_time"].extend([float(t_event)] * n)
            out["sim_event"].extend([int(cause)] * n)
    return out
