"""Bind a model specification to a dataset.

Validation resolves term names to columns, applies the missing-data rules
(a row is dropped when any required covariate is missing or every marker is
missing; per-marker observations are kept where that marker is present),
sorts rows stably by subject then time, resolves data-dependent link/hazard
pieces (ranges, knots, ordinal levels), and builds per-subject design
matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import hazards as hz
from . import links as lk
from .data import LongDataset
from .errors import DataError, SpecError
from .layout import ParameterLayout, build_layout
from .modelspec import ModelSpec, term_columns


def term_values(term: str, columns: dict, n: int) -> np.ndarray:
    """Evaluate a term name against dataset columns ("a*b" is a product)."""
    if term == "intercept":
        return np.ones(n)
    parts = term.split("*")
    out = np.ones(n)
    for p in parts:
        if p == "intercept":
            continue
        if p not in columns:
            raise SpecError(f"term {term!r} refers to missing column {p!r}")
        out = out * columns[p]
    return out


def design_matrix(terms, columns: dict, n: int) -> np.ndarray:
    if not terms:
        return np.zeros((n, 0))
    return np.column_stack([term_values(t, columns, n) for t in terms])


@dataclass
class SubjectSurvival:
    entry: float
    time: float
    event: int
    xs1: list          # per cause: covariate vector for common effects
    xs2: list          # per cause: covariate vector for class-specific effects


@dataclass
class SubjectDesign:
    subject_id: object
    times: np.ndarray          # stacked observation times (marker-major)
    y: np.ndarray              # stacked raw outcome values
    marker_index: np.ndarray   # stacked marker indices
    X1: np.ndarray             # common fixed-effect design
    X2: np.ndarray             # class-specific fixed-effect design
    Z: np.ndarray              # random-effect design
    XY: np.ndarray             # contrast design
    xc: np.ndarray             # class-membership covariate row (leading 1)
    survival: SubjectSurvival | None = None

    @property
    def n_obs(self) -> int:
        return int(self.y.shape[0])

    def pattern_key(self) -> bytes:
        """Covariance pattern: V_ig depends on the subject only through these."""
        return (self.times.tobytes() + b"|" + self.Z.tobytes() + b"|"
                + self.marker_index.astype(np.int64).tobytes())


@dataclass
class ModelStructure:
    """Everything about a validated model except the per-subject data."""

    spec: ModelSpec
    link_families: tuple
    baselines: tuple | None
    layout: ParameterLayout
    n_subjects: int
    n_obs: int
    n_deleted_rows: int
    n_dropped_subjects: int
    stats: dict = field(default_factory=dict)

    @property
    def n_markers(self) -> int:
        return len(self.spec.outcomes)

    @property
    def ordinal(self) -> bool:
        return any(f.kind == "thresholds" for f in self.link_families)

    def to_dict(self) -> dict:
        from .archive import spec_to_dict  # local import to avoid a cycle
        return {
            "spec": spec_to_dict(self.spec),
            "links": [f.to_dict() for f in self.link_families],
            "baselines": (None if self.baselines is None
                          else [b.to_dict() for b in self.baselines]),
            "n_subjects": self.n_subjects,
            "n_obs": self.n_obs,
            "n_deleted_rows": self.n_deleted_rows,
            "n_dropped_subjects": self.n_dropped_subjects,
            "stats": _jsonable(self.stats),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelStructure":
        from .archive import spec_from_dict
        spec = spec_from_dict(d["spec"])
        linkfams = tuple(lk.LinkFamily.from_dict(x) for x in d["links"])
        baselines = None
        if d.get("baselines") is not None:
            baselines = tuple(hz.BaselineHazard.from_dict(x) for x in d["baselines"])
        lay = build_layout(spec, tuple(f.n_params for f in linkfams), baselines)
        return cls(spec=spec, link_families=linkfams, baselines=baselines,
                   layout=lay, n_subjects=d["n_subjects"], n_obs=d["n_obs"],
                   n_deleted_rows=d["n_deleted_rows"],
                   n_dropped_subjects=d["n_dropped_subjects"],
                   stats=d.get("stats", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


@dataclass
class ValidatedModel:
    structure: ModelStructure
    subjects: list
    fingerprint: dict
    pattern_groups: list = field(default_factory=list)  # arrays of subject indices

    @property
    def spec(self) -> ModelSpec:
        return self.structure.spec

    @property
    def layout(self) -> ParameterLayout:
        return self.structure.layout


def _required_covariate_columns(spec: ModelSpec) -> list[str]:
    cols = {spec.timevar}
    for group in (spec.fixed, spec.mixture, spec.random, spec.classmb, spec.contrast):
        for term in group:
            cols.update(term_columns(term))
    if spec.survival is not None:
        s = spec.survival
        cols.add(s.time)
        cols.add(s.event)
        if s.entry is not None:
            cols.add(s.entry)
        for t in s.terms:
            cols.update(term_columns(t.name))
    return sorted(cols)


def _constant_value(values: np.ndarray, what: str, sid) -> float:
    ok = values[~np.isnan(values)]
    if ok.size == 0:
        return np.nan
    if not np.all(ok == ok[0]):
        raise DataError(f"{what} varies within subject {sid!r}")
    return float(ok[0])


def build_model(spec: ModelSpec, data: LongDataset) -> ValidatedModel:
    """Validate `data` against `spec` and build per-subject designs."""
    spec.validate()
    n = data.n_rows
    if n == 0:
        raise DataError("empty dataset")
    for col in _required_covariate_columns(spec) + list(spec.outcomes):
        data.column(col)  # existence check

    time = data.column(spec.timevar)
    # stable ordering: subjects by sorted value, rows by time within subject
    codes, uniques = pd.factorize(pd.Series(data.ids), sort=True)
    order = np.lexsort((time, codes))
    cols = {name: arr[order] for name, arr in data.columns.items()}
    codes = codes[order]
    ids_sorted = data.ids[order]
    time = cols[spec.timevar]

    required = _required_covariate_columns(spec)
    bad_cov = np.zeros(n, dtype=bool)
    for name in required:
        bad_cov |= np.isnan(cols[name])
    marker_missing = np.column_stack([np.isnan(cols[m]) for m in spec.outcomes])
    keep = ~bad_cov & ~marker_missing.all(axis=1)
    n_deleted = int(n - keep.sum())
    if keep.sum() == 0:
        raise DataError("no usable rows after missing-data filtering")

    if spec.cor is not None and spec.cor.kind == "BM" and np.nanmin(time[keep]) < 0:
        raise DataError("Brownian-motion process requires non-negative times")

    surv = spec.survival
    n_causes = 0 if surv is None else surv.n_causes

    subjects = []
    dropped_subjects = 0
    obs_by_marker = {m: [] for m in spec.outcomes}
    event_times, entry_times, event_codes = [], [], []

    for code in range(len(uniques)):
        rows = np.flatnonzero((codes == code) & keep)
        if rows.size == 0:
            dropped_subjects += 1
            continue
        sub_cols = {name: arr[rows] for name, arr in cols.items()}
        nrows = rows.size
        sid = ids_sorted[rows[0]]

        # per-marker retained observations, stacked marker-major
        t_parts, y_parts, m_parts, row_parts = [], [], [], []
        for k, mk in enumerate(spec.outcomes):
            present = ~np.isnan(sub_cols[mk])
            if not present.any():
                continue
            idx = np.flatnonzero(present)
            t_parts.append(sub_cols[spec.timevar][idx])
            y_parts.append(sub_cols[mk][idx])
            m_parts.append(np.full(idx.size, k))
            row_parts.append(idx)
        stack_rows = np.concatenate(row_parts)
        stacked = {name: arr[stack_rows] for name, arr in sub_cols.items()}
        n_obs_i = stack_rows.size

        X1 = design_matrix(spec.common_fixed, stacked, n_obs_i)
        X2 = design_matrix(spec.mixture, stacked, n_obs_i)
        Z = design_matrix(spec.random, stacked, n_obs_i)
        XY = design_matrix(spec.contrast, stacked, n_obs_i)

        xc = np.ones(1 + len(spec.classmb))
        for j, term in enumerate(spec.classmb, start=1):
            xc[j] = _constant_value(term_values(term, sub_cols, nrows),
                                    f"class-membership term {term!r}", sid)
        if np.any(np.isnan(xc)):
            dropped_subjects += 1
            n_deleted += nrows
            continue

        subj_surv = None
        if surv is not None:
            t_ev = _constant_value(sub_cols[surv.time], "event time", sid)
            e_ev = _constant_value(sub_cols[surv.event], "event indicator", sid)
            t0 = 0.0
            if surv.entry is not None:
                t0 = _constant_value(sub_cols[surv.entry], "entry time", sid)
            if np.isnan(t_ev) or np.isnan(e_ev) or np.isnan(t0):
                dropped_subjects += 1
                n_deleted += nrows
                continue
            if abs(e_ev - round(e_ev)) > 1e-9 or not (0 <= round(e_ev) <= n_causes):
                raise DataError(f"event indicator {e_ev} of subject {sid!r} "
                                f"not an integer in [0, {n_causes}]")
            if not (t_ev > t0 >= 0.0):
                raise DataError(f"subject {sid!r} needs event time > entry time >= 0")
            xs1, xs2 = [], []
            for p in range(1, n_causes + 1):
                xs1.append(np.array([
                    _constant_value(term_values(t.name, sub_cols, nrows),
                                    f"survival term {t.name!r}", sid)
                    for t in [t for t in surv.terms if not t.mixture and t.applies_to(p)]
                ]))
                xs2.append(np.array([
                    _constant_value(term_values(t.name, sub_cols, nrows),
                                    f"survival term {t.name!r}", sid)
                    for t in [t for t in surv.terms if t.mixture and t.applies_to(p)]
                ]))
            if any(np.any(np.isnan(v)) for v in xs1 + xs2):
                dropped_subjects += 1
                n_deleted += nrows
                continue
            subj_surv = SubjectSurvival(entry=t0, time=t_ev, event=int(round(e_ev)),
                                        xs1=xs1, xs2=xs2)
            event_times.append(t_ev)
            entry_times.append(t0)
            event_codes.append(int(round(e_ev)))

        for yp, mp in zip(y_parts, m_parts):
            obs_by_marker[spec.outcomes[int(mp[0])]].append(yp)

        subjects.append(SubjectDesign(
            subject_id=sid,
            times=np.concatenate(t_parts),
            y=np.concatenate(y_parts),
            marker_index=np.concatenate(m_parts),
            X1=X1, X2=X2, Z=Z, XY=XY, xc=xc, survival=subj_surv,
        ))

    if not subjects:
        raise DataError("no subjects with usable observations")

    # resolve links against retained samples
    samples = {m: (np.concatenate(v) if v else np.array([])) for m, v in obs_by_marker.items()}
    linkfams = []
    for mk, desc_text in zip(spec.outcomes, spec.link_descriptors()):
        desc = lk.parse_link_descriptor(desc_text)
        linkfams.append(lk.resolve_link(
            desc, y_sample=samples[mk],
            declared_range=spec.link_ranges.get(mk),
            manual_knots=spec.link_knots.get(mk),
            eps_y=spec.eps_y,
        ))
    linkfams = tuple(linkfams)

    baselines = None
    if surv is not None:
        entry_floor = float(min(entry_times)) if surv.entry is not None else 0.0
        baselines = []
        for p, text in enumerate(surv.hazards, start=1):
            desc = hz.parse_hazard_descriptor(text)
            manual = None
            if surv.manual_knots:
                manual = surv.manual_knots[p - 1]
            baselines.append(hz.resolve_hazard(
                desc, logscale=surv.logscale, time_sample=np.asarray(event_times),
                entry_floor=entry_floor, manual_knots=manual,
            ))
        baselines = tuple(baselines)
        # events below the first knot cannot carry hazard mass
        for b in baselines:
            if b.knots is not None and float(np.min(event_times)) < b.knots[0]:
                raise DataError("observed event/censoring time below the first hazard knot")

    stats = {
        "marker_mean": {m: float(np.mean(samples[m])) for m in spec.outcomes},
        "marker_median": {m: float(np.median(samples[m])) for m in spec.outcomes},
        "marker_min": {m: float(np.min(samples[m])) for m in spec.outcomes},
        "marker_max": {m: float(np.max(samples[m])) for m in spec.outcomes},
    }
    if surv is not None:
        ev = np.asarray(event_codes)
        tv = np.asarray(event_times)
        stats["events"] = {
            str(p): {
                "count": int(np.sum(ev == p)),
                "time_sum": float(np.sum(tv[ev == p])),
            }
            for p in range(1, n_causes + 1)
        }
        stats["max_time"] = float(np.max(tv))
        stats["entry_floor"] = float(min(entry_times)) if surv.entry is not None else 0.0

    lay = build_layout(spec, tuple(f.n_params for f in linkfams), baselines)
    structure = ModelStructure(
        spec=spec, link_families=linkfams, baselines=baselines, layout=lay,
        n_subjects=len(subjects), n_obs=int(sum(s.n_obs for s in subjects)),
        n_deleted_rows=n_deleted, n_dropped_subjects=dropped_subjects,
        stats=stats,
    )

    groups: dict[bytes, list[int]] = {}
    for i, s in enumerate(subjects):
        groups.setdefault(s.pattern_key(), []).append(i)
    pattern_groups = [np.asarray(ix) for ix in groups.values()]

    return ValidatedModel(structure=structure, subjects=subjects,
                          fingerprint=data.fingerprint(),
                          pattern_groups=pattern_groups)
