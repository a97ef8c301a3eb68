"""JSON persistence for model specifications and fit results.

Archives are plain JSON so they diff cleanly and survive version control.
Floats go through Python's shortest round-trip repr, so a reloaded archive
reproduces the stored values bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ArchiveError
from .modelspec import CorSpec, ModelSpec, SurvivalSpec, SurvivalTerm

FORMAT_NAME = "latentmix-fit"
FORMAT_VERSION = 1


# ----------------------------------------------------------------------
# ModelSpec <-> dict

def spec_to_dict(spec: ModelSpec) -> dict:
    surv = None
    if spec.survival is not None:
        s = spec.survival
        surv = {
            "time": s.time,
            "event": s.event,
            "entry": s.entry,
            "terms": [{"name": t.name, "mixture": t.mixture, "cause": t.cause}
                      for t in s.terms],
            "hazards": list(s.hazards),
            "hazardtype": s.hazardtype,
            "logscale": s.logscale,
            "manual_knots": [None if k is None else list(map(float, k))
                             for k in s.manual_knots],
        }
    return {
        "family": spec.family,
        "subject": spec.subject,
        "outcomes": list(spec.outcomes),
        "timevar": spec.timevar,
        "fixed": list(spec.fixed),
        "mixture": list(spec.mixture),
        "random": list(spec.random),
        "classmb": list(spec.classmb),
        "contrast": list(spec.contrast),
        "ng": spec.ng,
        "idiag": spec.idiag,
        "nwg": spec.nwg,
        "random_y": spec.random_y,
        "cor": None if spec.cor is None else {"kind": spec.cor.kind},
        "links": None if spec.links is None else list(spec.links),
        "link_ranges": {m: [float(lo), float(hi)]
                        for m, (lo, hi) in spec.link_ranges.items()},
        "link_knots": {m: list(map(float, k))
                       for m, k in spec.link_knots.items()},
        "eps_y": spec.eps_y,
        "survival": surv,
    }


def spec_from_dict(d: dict) -> ModelSpec:
    try:
        surv = None
        if d.get("survival") is not None:
            s = d["survival"]
            surv = SurvivalSpec(
                time=s["time"],
                event=s["event"],
                entry=s.get("entry"),
                terms=tuple(SurvivalTerm(name=t["name"], mixture=t["mixture"],
                                         cause=t["cause"]) for t in s["terms"]),
                hazards=tuple(s["hazards"]),
                hazardtype=s["hazardtype"],
                logscale=s["logscale"],
                manual_knots=tuple(None if k is None else tuple(k)
                                   for k in s.get("manual_knots", [])),
            )
        return ModelSpec(
            family=d["family"],
            subject=d["subject"],
            outcomes=tuple(d["outcomes"]),
            timevar=d["timevar"],
            fixed=tuple(d["fixed"]),
            mixture=tuple(d["mixture"]),
            random=tuple(d["random"]),
            classmb=tuple(d["classmb"]),
            contrast=tuple(d["contrast"]),
            ng=int(d["ng"]),
            idiag=bool(d["idiag"]),
            nwg=bool(d["nwg"]),
            random_y=bool(d["random_y"]),
            cor=None if d.get("cor") is None else CorSpec(d["cor"]["kind"]),
            links=None if d.get("links") is None else tuple(d["links"]),
            link_ranges={m: (v[0], v[1]) for m, v in d.get("link_ranges", {}).items()},
            link_knots={m: tuple(v) for m, v in d.get("link_knots", {}).items()},
            eps_y=float(d.get("eps_y", 0.5)),
            survival=surv,
        )
    except (KeyError, TypeError) as exc:
        raise ArchiveError(f"malformed model description: {exc}") from exc


# ----------------------------------------------------------------------
# symmetric matrices as upper triangles

def matrix_to_upper(mat: np.ndarray) -> list:
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0]
    return [float(mat[r, c]) for r in range(n) for c in range(r, n)]


def upper_to_matrix(vals, n: int) -> np.ndarray:
    out = np.zeros((n, n))
    it = iter(vals)
    for r in range(n):
        for c in range(r, n):
            out[r, c] = out[c, r] = next(it)
    return out


# ----------------------------------------------------------------------
# file IO

def write_archive(path, payload: dict) -> None:
    payload = {"format": FORMAT_NAME, "version": FORMAT_VERSION, **payload}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def read_archive(path) -> dict:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{path}: not a JSON archive ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_NAME:
        raise ArchiveError(f"{path}: not a {FORMAT_NAME} archive")
    if payload.get("version") != FORMAT_VERSION:
        raise ArchiveError(f"{path}: unsupported archive version "
                           f"{payload.get('version')!r}")
    return payload
