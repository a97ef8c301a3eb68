"""Declarative model specification.

A ModelSpec names dataset columns for each part of the model; nothing here
touches data.  Term names are either column names, the literal "intercept", or
simple products of columns written "a*b".

Families:

- hlme: latent class linear mixed model for one Gaussian marker.
- lcmm: latent process model for one curvilinear/ordinal marker (link
  function; residual SD fixed to 1).
- multlcmm: latent process model for several markers measuring a common
  underlying process (marker-specific links, contrasts, random marker
  intercepts; Var of the first random effect fixed to 1, no mean intercept).
- jointlcmm: hlme/lcmm longitudinal part plus cause-specific proportional
  hazards with a shared latent class structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import SpecError

FAMILIES = ("hlme", "lcmm", "multlcmm", "jointlcmm")
HAZARD_TYPES = ("Specific", "PH", "Common")


def term_columns(term: str) -> tuple[str, ...]:
    """Dataset columns a term depends on ("intercept" depends on none)."""
    if term == "intercept":
        return ()
    return tuple(p for p in term.split("*") if p != "intercept")


@dataclass(frozen=True)
class CorSpec:
    kind: str  # "BM" | "AR"

    def __post_init__(self):
        if self.kind not in ("BM", "AR"):
            raise SpecError(f"unknown residual process kind {self.kind!r}")


@dataclass(frozen=True)
class SurvivalTerm:
    name: str
    mixture: bool = False
    cause: object = "common"   # "common" | "all" | 1-based cause index

    def applies_to(self, p: int) -> bool:
        return self.cause in ("common", "all") or self.cause == p


@dataclass(frozen=True)
class SurvivalSpec:
    time: str
    event: str
    entry: str | None = None
    terms: tuple[SurvivalTerm, ...] = ()
    hazards: tuple[str, ...] = ("weibull",)   # descriptor per cause
    hazardtype: str = "Specific"
    logscale: bool = False
    manual_knots: tuple = ()                  # per-cause interior knots or None

    @property
    def n_causes(self) -> int:
        return len(self.hazards)


@dataclass(frozen=True)
class ModelSpec:
    family: str
    subject: str
    outcomes: tuple[str, ...]
    timevar: str
    fixed: tuple[str, ...] = ()
    mixture: tuple[str, ...] = ()
    random: tuple[str, ...] = ()
    classmb: tuple[str, ...] = ()
    contrast: tuple[str, ...] = ()
    ng: int = 1
    idiag: bool = False
    nwg: bool = False
    random_y: bool = False
    cor: CorSpec | None = None
    links: tuple[str, ...] | None = None
    link_ranges: dict = field(default_factory=dict)   # marker -> (lo, hi)
    link_knots: dict = field(default_factory=dict)    # marker -> interior knots
    eps_y: float = 0.5
    survival: SurvivalSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        for name in ("fixed", "mixture", "random", "classmb", "contrast"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.links is not None:
            object.__setattr__(self, "links", tuple(self.links))

    @property
    def common_fixed(self) -> tuple[str, ...]:
        """Fixed-effect terms shared across classes (not in the mixture)."""
        return tuple(t for t in self.fixed if t not in self.mixture)

    # -- resolved link descriptors ------------------------------------------
    def link_descriptors(self) -> tuple[str, ...]:
        """Per-marker link descriptor strings ("identity" for raw markers)."""
        if self.family == "hlme":
            return ("identity",)
        if self.family == "jointlcmm" and self.links is None:
            return ("identity",)
        if self.links is None:
            return tuple("linear" for _ in self.outcomes)
        return self.links

    @property
    def has_free_residual(self) -> bool:
        """True when the residual SDs are estimated (identity links or multlcmm)."""
        if self.family == "multlcmm":
            return True
        return self.link_descriptors() == ("identity",)

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}")
        if self.ng < 1:
            raise SpecError("ng must be >= 1")
        if not self.outcomes:
            raise SpecError("at least one outcome is required")
        if self.family != "multlcmm" and len(self.outcomes) != 1:
            raise SpecError(f"family {self.family} takes exactly one outcome")
        if not self.timevar:
            raise SpecError("timevar is required")
        dupes = [t for t in self.mixture if self.mixture.count(t) > 1]
        if dupes:
            raise SpecError(f"duplicated mixture terms {dupes}")
        for t in self.mixture:
            if t not in self.fixed:
                raise SpecError(f"mixture term {t!r} not among fixed terms")
        if self.ng == 1:
            if self.mixture:
                raise SpecError("mixture terms require ng > 1")
            if self.classmb:
                raise SpecError("class-membership covariates require ng > 1")
            if self.nwg:
                raise SpecError("class-specific variance scales require ng > 1")
        if self.links is not None and len(self.links) != len(self.outcomes):
            raise SpecError("need one link descriptor per outcome")

        if self.family == "hlme":
            if self.links is not None:
                raise SpecError("hlme takes no link (raw Gaussian marker)")
            if self.contrast or self.random_y:
                raise SpecError("contrast/random_y are multlcmm features")
            if self.survival is not None:
                raise SpecError("survival part requires family jointlcmm")
        if self.family == "lcmm":
            if self.contrast or self.random_y:
                raise SpecError("contrast/random_y are multlcmm features")
            if self.survival is not None:
                raise SpecError("survival part requires family jointlcmm")
        if self.family == "multlcmm":
            if "intercept" in self.fixed:
                raise SpecError("multlcmm has no free mean intercept; "
                                "remove 'intercept' from fixed terms")
            if not self.random or self.random[0] != "intercept":
                raise SpecError("multlcmm requires a random intercept listed first")
            for t in self.contrast:
                if t not in self.fixed:
                    raise SpecError(f"contrast term {t!r} not among fixed terms")
            if self.survival is not None:
                raise SpecError("survival part requires family jointlcmm")
            if "thresholds" in self.link_descriptors():
                raise SpecError("threshold links are univariate only")
        if self.family == "jointlcmm":
            if self.survival is None:
                raise SpecError("jointlcmm requires a survival spec")
            if self.contrast or self.random_y:
                raise SpecError("contrast/random_y are multlcmm features")
            if self.links is not None and "thresholds" in self.links:
                raise SpecError("threshold links are not supported in joint models")

        if "thresholds" in self.link_descriptors() and self.cor is not None:
            raise SpecError("threshold links cannot be combined with a BM/AR process")

        if self.survival is not None:
            s = self.survival
            if s.hazardtype not in HAZARD_TYPES:
                raise SpecError(f"unknown hazardtype {s.hazardtype!r}")
            if s.n_causes < 1:
                raise SpecError("need at least one cause-specific hazard")
            if s.manual_knots and len(s.manual_knots) != s.n_causes:
                raise SpecError("need one manual knot list per cause (or none)")
            for t in s.terms:
                if t.cause not in ("common", "all"):
                    if not isinstance(t.cause, int) or not (1 <= t.cause <= s.n_causes):
                        raise SpecError(f"survival term {t.name!r} has bad cause scope {t.cause!r}")
                if t.mixture and self.ng == 1:
                    raise SpecError("class-specific survival effects require ng > 1")

    def reduced_to_single_class(self) -> "ModelSpec":
        """The ng=1 counterpart used to initialise multi-class fits."""
        surv = self.survival
        if surv is not None:
            surv = replace(
                surv,
                terms=tuple(replace(t, mixture=False) for t in surv.terms),
            )
        return replace(self, ng=1, mixture=(), classmb=(), nwg=False, survival=surv)
