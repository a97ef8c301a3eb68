"""Plain-text model documents.

One `key: value` pair per line; blank lines and `#` comments are ignored.
Keys mirror the model-building vocabulary:

    family, subject, outcome, timevar, ng, fixed, mixture, random, classmb,
    contrast, link, range, knots, epsY, idiag, nwg, cor, randomY,
    survival, hazard, hazardtype, logscale, hazard-knots

Term lists are whitespace-separated ("intercept", column names, or products
"a*b").  The survival line is formula-like:

    survival: Surv(Tentry, Tevent, Event) ~ X1 + mixture(X2) + cause1(X3)

with 2-argument Surv(time, event) when there is no delayed entry; cause(X)
gives X one coefficient per cause, causeN(X) restricts it to cause N, and
mixture(...) makes the effect class-specific.  `range`/`knots` entries are
`marker=lo,hi` / `marker=k1,k2,...` (the marker name can be dropped for a
single outcome); `hazard-knots` entries are `causeindex=k1,k2,...`.
"""

from __future__ import annotations

import re

from .errors import SpecError
from .modelspec import CorSpec, ModelSpec, SurvivalSpec, SurvivalTerm

_KNOWN_KEYS = (
    "family", "subject", "outcome", "timevar", "ng", "fixed", "mixture",
    "random", "classmb", "contrast", "link", "range", "knots", "epsY",
    "idiag", "nwg", "cor", "randomY", "survival", "hazard", "hazardtype",
    "logscale", "hazard-knots",
)

_SURV_RE = re.compile(r"^Surv\(\s*([^,()]+?)\s*,\s*([^,()]+?)\s*(?:,\s*([^,()]+?)\s*)?\)$")
_WRAP_RE = re.compile(r"^(mixture|cause(\d*))\((.*)\)$")
_COR_RE = re.compile(r"^(BM|AR)\(\s*([^()]+?)\s*\)$")


def _parse_bool(value: str, key: str) -> bool:
    low = value.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise SpecError(f"{key}: expected a boolean, got {value!r}")


def _parse_survival_term(token: str) -> SurvivalTerm:
    mixture = False
    cause = "common"
    name = token.strip()
    while True:
        m = _WRAP_RE.match(name)
        if not m:
            break
        wrapper, digits, inner = m.group(1), m.group(2), m.group(3)
        if wrapper == "mixture":
            mixture = True
        elif digits:
            cause = int(digits)
        else:
            cause = "all"
        name = inner.strip()
    if not name:
        raise SpecError(f"empty survival term in {token!r}")
    return SurvivalTerm(name=name, mixture=mixture, cause=cause)


def _parse_survival(value: str):
    if "~" in value:
        lhs, rhs = value.split("~", 1)
        term_tokens = [t.strip() for t in rhs.split("+") if t.strip()]
    else:
        lhs, term_tokens = value, []
    m = _SURV_RE.match(lhs.strip())
    if not m:
        raise SpecError(f"survival: expected Surv(time, event) or "
                        f"Surv(entry, time, event), got {lhs.strip()!r}")
    a, b, c = m.group(1), m.group(2), m.group(3)
    if c is None:
        entry, time, event = None, a, b
    else:
        entry, time, event = a, b, c
    terms = tuple(_parse_survival_term(t) for t in term_tokens)
    return entry, time, event, terms


def _parse_keyed_values(value: str, key: str, outcomes, scalar_pair: bool):
    """Entries `name=v1,v2,...`; a bare list binds to a single outcome."""
    out = {}
    for chunk in value.split():
        if "=" in chunk:
            name, vals = chunk.split("=", 1)
        else:
            if len(outcomes) != 1:
                raise SpecError(f"{key}: name the marker (marker=...) when "
                                "there are several outcomes")
            name, vals = outcomes[0], chunk
        try:
            nums = tuple(float(v) for v in vals.split(","))
        except ValueError as exc:
            raise SpecError(f"{key}: bad numbers in {chunk!r}") from exc
        if scalar_pair and len(nums) != 2:
            raise SpecError(f"{key}: expected lo,hi in {chunk!r}")
        out[name] = (nums[0], nums[1]) if scalar_pair else nums
    return out


def parse_spec_text(text: str) -> ModelSpec:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise SpecError(f"line {lineno}: expected 'key: value', got {raw!r}")
        key, value = line.split(":", 1)
        key = key.strip()
        if key not in _KNOWN_KEYS:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        if key in pairs:
            raise SpecError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()

    for required in ("family", "subject", "outcome", "timevar"):
        if required not in pairs:
            raise SpecError(f"model document lacks the {required!r} line")

    outcomes = tuple(pairs["outcome"].split())
    timevar = pairs["timevar"]

    def terms(key):
        return tuple(pairs[key].split()) if key in pairs else ()

    cor = None
    if "cor" in pairs:
        m = _COR_RE.match(pairs["cor"])
        if not m:
            raise SpecError(f"cor: expected BM(timevar) or AR(timevar), "
                            f"got {pairs['cor']!r}")
        if m.group(2) != timevar:
            raise SpecError(f"cor: the process runs on the time variable "
                            f"{timevar!r}, got {m.group(2)!r}")
        cor = CorSpec(kind=m.group(1))

    survival = None
    if "survival" in pairs:
        entry, time, event, sterms = _parse_survival(pairs["survival"])
        hazards = tuple(pairs["hazard"].split()) if "hazard" in pairs else ("Weibull",)
        manual = ()
        if "hazard-knots" in pairs:
            per_cause: dict[int, tuple] = {}
            for chunk in pairs["hazard-knots"].split():
                if "=" not in chunk:
                    raise SpecError("hazard-knots: entries are causeindex=k1,k2,...")
                idx_s, vals = chunk.split("=", 1)
                try:
                    idx = int(idx_s)
                    nums = tuple(float(v) for v in vals.split(","))
                except ValueError as exc:
                    raise SpecError(f"hazard-knots: bad entry {chunk!r}") from exc
                if not (1 <= idx <= len(hazards)):
                    raise SpecError(f"hazard-knots: cause {idx} outside "
                                    f"1..{len(hazards)}")
                per_cause[idx] = nums
            manual = tuple(per_cause.get(p) for p in range(1, len(hazards) + 1))
        survival = SurvivalSpec(
            time=time, event=event, entry=entry, terms=sterms, hazards=hazards,
            hazardtype=pairs.get("hazardtype", "Specific"),
            logscale="logscale" in pairs and _parse_bool(pairs["logscale"], "logscale"),
            manual_knots=manual,
        )
    elif any(k in pairs for k in ("hazard", "hazardtype", "logscale", "hazard-knots")):
        raise SpecError("hazard options need a survival line")

    links = tuple(pairs["link"].split()) if "link" in pairs else None
    link_ranges = (_parse_keyed_values(pairs["range"], "range", outcomes, True)
                   if "range" in pairs else {})
    link_knots = (_parse_keyed_values(pairs["knots"], "knots", outcomes, False)
                  if "knots" in pairs else {})

    try:
        ng = int(pairs.get("ng", "1"))
        eps_y = float(pairs.get("epsY", "0.5"))
    except ValueError as exc:
        raise SpecError(f"bad numeric value: {exc}") from exc

    spec = ModelSpec(
        family=pairs["family"],
        subject=pairs["subject"],
        outcomes=outcomes,
        timevar=timevar,
        fixed=terms("fixed"),
        mixture=terms("mixture"),
        random=terms("random"),
        classmb=terms("classmb"),
        contrast=terms("contrast"),
        ng=ng,
        idiag="idiag" in pairs and _parse_bool(pairs["idiag"], "idiag"),
        nwg="nwg" in pairs and _parse_bool(pairs["nwg"], "nwg"),
        random_y="randomY" in pairs and _parse_bool(pairs["randomY"], "randomY"),
        cor=cor,
        links=links,
        link_ranges=link_ranges,
        link_knots=link_knots,
        eps_y=eps_y,
        survival=survival,
    )
    spec.validate()
    return spec


def parse_spec_file(path) -> ModelSpec:
    with open(path) as fh:
        return parse_spec_text(fh.read())


def spec_text(spec: ModelSpec) -> str:
    """Render a spec back into document form (inverse of parse_spec_text)."""
    lines = [f"family: {spec.family}", f"subject: {spec.subject}",
             f"outcome: {' '.join(spec.outcomes)}", f"timevar: {spec.timevar}"]
    if spec.ng != 1:
        lines.append(f"ng: {spec.ng}")
    for key, vals in (("fixed", spec.fixed), ("mixture", spec.mixture),
                      ("random", spec.random), ("classmb", spec.classmb),
                      ("contrast", spec.contrast)):
        if vals:
            lines.append(f"{key}: {' '.join(vals)}")
    if spec.idiag:
        lines.append("idiag: true")
    if spec.nwg:
        lines.append("nwg: true")
    if spec.random_y:
        lines.append("randomY: true")
    if spec.cor is not None:
        lines.append(f"cor: {spec.cor.kind}({spec.timevar})")
    if spec.links is not None:
        lines.append(f"link: {' '.join(spec.links)}")
    if spec.link_ranges:
        lines.append("range: " + " ".join(
            f"{m}={lo:g},{hi:g}" for m, (lo, hi) in spec.link_ranges.items()))
    if spec.link_knots:
        lines.append("knots: " + " ".join(
            f"{m}=" + ",".join(f"{k:g}" for k in ks)
            for m, ks in spec.link_knots.items()))
    if spec.eps_y != 0.5:
        lines.append(f"epsY: {spec.eps_y:g}")
    s = spec.survival
    if s is not None:
        args = [s.time, s.event] if s.entry is None else [s.entry, s.time, s.event]
        rhs = []
        for t in s.terms:
            tok = t.name
            if t.cause == "all":
                tok = f"cause({tok})"
            elif t.cause != "common":
                tok = f"cause{t.cause}({tok})"
            if t.mixture:
                tok = f"mixture({tok})"
            rhs.append(tok)
        line = f"survival: Surv({', '.join(args)})"
        if rhs:
            line += " ~ " + " + ".join(rhs)
        lines.append(line)
        lines.append(f"hazard: {' '.join(s.hazards)}")
        if s.hazardtype != "Specific":
            lines.append(f"hazardtype: {s.hazardtype}")
        if s.logscale:
            lines.append("logscale: true")
        if s.manual_knots and any(k is not None for k in s.manual_knots):
            lines.append("hazard-knots: " + " ".join(
                f"{p}=" + ",".join(f"{v:g}" for v in ks)
                for p, ks in enumerate(s.manual_knots, start=1) if ks is not None))
    return "\n".join(lines) + "\n"
