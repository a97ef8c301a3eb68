"""Canonical parameter vector layout.

The optimizer works on a flat vector of free parameters.  Block order:

1. class-membership coefficients (grouped by class 1..G-1, intercept first)
2. baseline hazard parameters (by cause; by class within cause when
   class-specific), then PH shifts, then common survival effects, then
   class-specific survival effects
3. common fixed effects, then class-specific fixed effects (covariate-major)
4. random-effect Cholesky entries (column-major upper triangle; SDs if idiag)
5. class-specific variance scales (G-1; last class fixed to 1)
6. BM/AR process parameters (sd [, rho])
7. contrast effects (K-1 free per term, last marker = -sum)
8. marker random-intercept SDs
9. link parameters per marker
10. residual SDs (absent when a link fixes the residual scale to 1)

Identifiability constraints are handled structurally: constrained entries are
not part of the free vector and are injected by `unpack` (reference-class
membership coefficients = 0, latent-scale intercept = 0, first Cholesky entry
= 1 for multivariate models, last class scale = 1, residual SD = 1 under
non-identity links, last contrast = -sum of the others).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError
from .hazards import BaselineHazard
from .modelspec import ModelSpec, SurvivalTerm


@dataclass(frozen=True)
class ParamLabel:
    block: str
    term: str = ""
    klass: int | None = None
    cause: int | None = None
    marker: str | None = None
    idx: int | None = None

    @property
    def text(self) -> str:
        bits = []
        if self.block == "classmb":
            bits.append(f"membership {self.term}")
        elif self.block == "hazard":
            bits.append(f"event{self.cause} baseline{self.idx}")
        elif self.block == "hazard_shift":
            bits.append(f"event{self.cause} PH shift")
        elif self.block == "surv":
            bits.append(f"survival {self.term}" + (f" cause{self.cause}" if self.cause else ""))
        elif self.block == "surv_class":
            bits.append(f"survival {self.term}" + (f" cause{self.cause}" if self.cause else ""))
        elif self.block == "fixed":
            bits.append(self.term)
        elif self.block == "fixed_class":
            bits.append(self.term)
        elif self.block == "chol":
            bits.append(f"cholesky {self.idx}")
        elif self.block == "re_sd":
            bits.append(f"RE sd {self.term}")
        elif self.block == "class_scale":
            bits.append("class scale")
        elif self.block == "proc":
            bits.append(f"process {self.term}")
        elif self.block == "contrast":
            bits.append(f"contrast {self.term} {self.marker}")
        elif self.block == "marker_sd":
            bits.append(f"marker sd {self.marker}")
        elif self.block == "link":
            bits.append(f"link {self.marker} {self.idx}")
        elif self.block == "resid_sd":
            bits.append("residual sd" + (f" {self.marker}" if self.marker else ""))
        else:
            bits.append(self.block)
        if self.klass is not None:
            bits.append(f"class{self.klass}")
        return " ".join(bits)


@dataclass
class Blocks:
    """Full (constraint-injected) parameter values grouped by model part."""

    xi: np.ndarray                 # (G-1, 1+q1); empty when G == 1
    hazard_raw: list               # per cause: (G, n_baseline) raw values
    hazard_shift: list             # per cause: (G,) log proportional shifts
    nu: list                       # per cause: common survival effects
    delta: list                    # per cause: (G, n_class_specific_effects)
    beta: np.ndarray               # common fixed effects (constraints injected)
    upsilon: np.ndarray            # (G, n_mixture)
    chol_u: np.ndarray             # (q, q) upper triangular, B = U'U
    omega: np.ndarray              # (G,) class scales (last = 1)
    proc_sd: float | None
    proc_rho: float | None
    gamma: np.ndarray              # (K, n_contrast) incl. the -sum row
    alpha_sd: np.ndarray           # (K,) marker random-intercept SDs (0 if off)
    eta: list                      # per marker link parameter arrays
    resid_sd: np.ndarray           # (K,)

    @property
    def re_cov(self) -> np.ndarray:
        """Base random-effect covariance B = U'U."""
        return self.chol_u.T @ self.chol_u


@dataclass
class SurvivalLayout:
    n_causes: int
    hazardtype: str
    baselines: tuple[BaselineHazard, ...]
    terms: tuple[SurvivalTerm, ...]

    def s1_terms(self, p: int) -> list[SurvivalTerm]:
        return [t for t in self.terms if not t.mixture and t.applies_to(p)]

    def s2_terms(self, p: int) -> list[SurvivalTerm]:
        return [t for t in self.terms if t.mixture and t.applies_to(p)]

    def slots(self, mixture: bool) -> list[tuple[str, int | None]]:
        """Parameter slots (term name, cause key) in declaration order."""
        out = []
        for t in self.terms:
            if t.mixture != mixture:
                continue
            if t.cause == "common":
                out.append((t.name, None))
            elif t.cause == "all":
                out.extend((t.name, p) for p in range(1, self.n_causes + 1))
            else:
                out.append((t.name, t.cause))
        return out


@dataclass
class ParameterLayout:
    family: str
    ng: int
    markers: tuple[str, ...]
    classmb_terms: tuple[str, ...]        # incl. leading "intercept"
    fixed_terms: tuple[str, ...]
    mixture_terms: tuple[str, ...]
    random_terms: tuple[str, ...]
    idiag: bool
    nwg: bool
    cor_kind: str | None
    contrast_terms: tuple[str, ...]
    random_y: bool
    link_nparams: tuple[int, ...]
    constrain_location: bool              # latent-scale intercept pinned to 0
    constrain_first_chol: bool            # Var of first random effect pinned to 1
    resid_free: bool
    survival: SurvivalLayout | None = None
    labels: list[ParamLabel] = field(default_factory=list)

    def __post_init__(self):
        if not self.labels:
            self.labels = self._build_labels()

    # ------------------------------------------------------------------
    @property
    def common_terms(self) -> tuple[str, ...]:
        return tuple(t for t in self.fixed_terms if t not in self.mixture_terms)

    @property
    def q(self) -> int:
        return len(self.random_terms)

    @property
    def n_free(self) -> int:
        return len(self.labels)

    @property
    def n_classmb(self) -> int:
        return len(self.classmb_terms)

    def label_texts(self) -> list[str]:
        return [lab.text for lab in self.labels]

    def _chol_positions(self):
        """(row, col) pairs, column-major upper triangle, 0-based."""
        return [(r, c) for c in range(self.q) for r in range(c + 1)]

    def _free_beta_terms(self):
        out = []
        for t in self.common_terms:
            if self.constrain_location and t == "intercept":
                continue
            out.append(t)
        return out

    def _build_labels(self) -> list[ParamLabel]:
        labs: list[ParamLabel] = []
        G = self.ng
        for g in range(1, G):
            for term in self.classmb_terms:
                labs.append(ParamLabel("classmb", term=term, klass=g))
        s = self.survival
        if s is not None:
            class_specific = s.hazardtype == "Specific" and G > 1
            for p in range(1, s.n_causes + 1):
                nb = s.baselines[p - 1].n_params
                if class_specific:
                    for g in range(1, G + 1):
                        for j in range(1, nb + 1):
                            labs.append(ParamLabel("hazard", cause=p, klass=g, idx=j))
                else:
                    for j in range(1, nb + 1):
                        labs.append(ParamLabel("hazard", cause=p, idx=j))
                if s.hazardtype == "PH" and G > 1:
                    for g in range(1, G):
                        labs.append(ParamLabel("hazard_shift", cause=p, klass=g))
            for name, ck in s.slots(mixture=False):
                labs.append(ParamLabel("surv", term=name, cause=ck))
            for name, ck in s.slots(mixture=True):
                for g in range(1, G + 1):
                    labs.append(ParamLabel("surv_class", term=name, cause=ck, klass=g))
        for t in self._free_beta_terms():
            labs.append(ParamLabel("fixed", term=t))
        for t in self.mixture_terms:
            for g in range(1, G + 1):
                if self.constrain_location and t == "intercept" and g == 1:
                    continue
                labs.append(ParamLabel("fixed_class", term=t, klass=g))
        if self.q:
            if self.idiag:
                for i, t in enumerate(self.random_terms):
                    if i == 0 and self.constrain_first_chol:
                        continue
                    labs.append(ParamLabel("re_sd", term=t, idx=i + 1))
            else:
                for k, (r, c) in enumerate(self._chol_positions(), start=1):
                    if (r, c) == (0, 0) and self.constrain_first_chol:
                        continue
                    labs.append(ParamLabel("chol", idx=k))
        if self.nwg:
            for g in range(1, G):
                labs.append(ParamLabel("class_scale", klass=g))
        if self.cor_kind is not None:
            labs.append(ParamLabel("proc", term="sd"))
            if self.cor_kind == "AR":
                labs.append(ParamLabel("proc", term="rho"))
        for t in self.contrast_terms:
            for mk in self.markers[:-1]:
                labs.append(ParamLabel("contrast", term=t, marker=mk))
        if self.random_y:
            for mk in self.markers:
                labs.append(ParamLabel("marker_sd", marker=mk))
        for mk, npar in zip(self.markers, self.link_nparams):
            for j in range(1, npar + 1):
                labs.append(ParamLabel("link", marker=mk, idx=j))
        if self.resid_free:
            for mk in self.markers:
                labs.append(ParamLabel("resid_sd", marker=mk if len(self.markers) > 1 else None))
        return labs

    # ------------------------------------------------------------------
    def unpack(self, theta: np.ndarray) -> Blocks:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_free,):
            raise SpecError(f"parameter vector has length {theta.shape}, "
                            f"expected {self.n_free}")
        G, K, q = self.ng, len(self.markers), self.q
        pos = 0

        def take(n):
            nonlocal pos
            out = theta[pos:pos + n]
            pos += n
            return out

        nmb = self.n_classmb
        xi = take((G - 1) * nmb).reshape(G - 1, nmb) if G > 1 else np.zeros((0, nmb))

        hazard_raw, hazard_shift, nu, delta = [], [], [], []
        s = self.survival
        if s is not None:
            class_specific = s.hazardtype == "Specific" and G > 1
            for p in range(1, s.n_causes + 1):
                nb = s.baselines[p - 1].n_params
                if class_specific:
                    hazard_raw.append(take(G * nb).reshape(G, nb).copy())
                else:
                    hazard_raw.append(np.tile(take(nb), (G, 1)))
                shift = np.zeros(G)
                if s.hazardtype == "PH" and G > 1:
                    shift[:G - 1] = take(G - 1)
                hazard_shift.append(shift)
            s1_vals = {slot: v for slot, v in zip(s.slots(False), take(len(s.slots(False))))}
            s2_slots = s.slots(True)
            s2_vals = {}
            for slot in s2_slots:
                s2_vals[slot] = take(G)
            for p in range(1, s.n_causes + 1):
                nu.append(np.array([
                    s1_vals[(t.name, None if t.cause == "common" else p)]
                    for t in s.s1_terms(p)
                ]))
                d = [s2_vals[(t.name, None if t.cause == "common" else p)]
                     for t in s.s2_terms(p)]
                delta.append(np.array(d).T if d else np.zeros((G, 0)))

        common = self.common_terms
        beta = np.zeros(len(common))
        for i, t in enumerate(common):
            if self.constrain_location and t == "intercept":
                continue
            beta[i] = take(1)[0]
        upsilon = np.zeros((G, len(self.mixture_terms)))
        for j, t in enumerate(self.mixture_terms):
            for g in range(G):
                if self.constrain_location and t == "intercept" and g == 0:
                    continue
                upsilon[g, j] = take(1)[0]

        chol_u = np.zeros((q, q))
        if q:
            if self.idiag:
                for i in range(q):
                    if i == 0 and self.constrain_first_chol:
                        chol_u[0, 0] = 1.0
                    else:
                        chol_u[i, i] = take(1)[0]
            else:
                for (r, c) in self._chol_positions():
                    if (r, c) == (0, 0) and self.constrain_first_chol:
                        chol_u[0, 0] = 1.0
                    else:
                        chol_u[r, c] = take(1)[0]

        omega = np.ones(G)
        if self.nwg:
            omega[:G - 1] = take(G - 1)

        proc_sd = proc_rho = None
        if self.cor_kind is not None:
            proc_sd = float(take(1)[0])
            if self.cor_kind == "AR":
                proc_rho = float(take(1)[0])

        nc = len(self.contrast_terms)
        gamma = np.zeros((K, nc))
        for j in range(nc):
            vals = take(K - 1)
            gamma[:K - 1, j] = vals
            gamma[K - 1, j] = -np.sum(vals)

        alpha_sd = take(K).copy() if self.random_y else np.zeros(K)

        eta = [take(npar).copy() for npar in self.link_nparams]

        if self.resid_free:
            resid_sd = take(K).copy()
        else:
            resid_sd = np.ones(K)

        assert pos == self.n_free
        return Blocks(xi=xi, hazard_raw=hazard_raw, hazard_shift=hazard_shift,
                      nu=nu, delta=delta, beta=beta, upsilon=upsilon,
                      chol_u=chol_u, omega=omega, proc_sd=proc_sd,
                      proc_rho=proc_rho, gamma=gamma, alpha_sd=alpha_sd,
                      eta=eta, resid_sd=resid_sd)

    def pack(self, blocks: Blocks) -> np.ndarray:
        """Inverse of unpack (drops constrained entries)."""
        G, K, q = self.ng, len(self.markers), self.q
        out = []
        if G > 1:
            out.extend(np.asarray(blocks.xi, dtype=float).ravel())
        s = self.survival
        if s is not None:
            class_specific = s.hazardtype == "Specific" and G > 1
            for p in range(s.n_causes):
                raw = np.asarray(blocks.hazard_raw[p], dtype=float)
                out.extend(raw.ravel() if class_specific else raw[0])
                if s.hazardtype == "PH" and G > 1:
                    out.extend(np.asarray(blocks.hazard_shift[p])[:G - 1])
            s1 = {}
            s2 = {}
            for p in range(1, s.n_causes + 1):
                for j, t in enumerate(s.s1_terms(p)):
                    s1[(t.name, None if t.cause == "common" else p)] = blocks.nu[p - 1][j]
                for j, t in enumerate(s.s2_terms(p)):
                    s2[(t.name, None if t.cause == "common" else p)] = blocks.delta[p - 1][:, j]
            out.extend(s1[slot] for slot in s.slots(False))
            for slot in s.slots(True):
                out.extend(s2[slot])
        for i, t in enumerate(self.common_terms):
            if self.constrain_location and t == "intercept":
                continue
            out.append(blocks.beta[i])
        for j, t in enumerate(self.mixture_terms):
            for g in range(G):
                if self.constrain_location and t == "intercept" and g == 0:
                    continue
                out.append(blocks.upsilon[g, j])
        if q:
            if self.idiag:
                start = 1 if self.constrain_first_chol else 0
                out.extend(np.diag(blocks.chol_u)[start:])
            else:
                for (r, c) in self._chol_positions():
                    if (r, c) == (0, 0) and self.constrain_first_chol:
                        continue
                    out.append(blocks.chol_u[r, c])
        if self.nwg:
            out.extend(np.asarray(blocks.omega)[:G - 1])
        if self.cor_kind is not None:
            out.append(blocks.proc_sd)
            if self.cor_kind == "AR":
                out.append(blocks.proc_rho)
        for j in range(len(self.contrast_terms)):
            out.extend(np.asarray(blocks.gamma)[:K - 1, j])
        if self.random_y:
            out.extend(np.asarray(blocks.alpha_sd))
        for e in blocks.eta:
            out.extend(np.asarray(e, dtype=float))
        if self.resid_free:
            out.extend(np.asarray(blocks.resid_sd))
        arr = np.asarray(out, dtype=float)
        if arr.shape != (self.n_free,):
            raise SpecError("blocks do not match this layout")
        return arr


def build_layout(spec: ModelSpec, link_nparams: tuple[int, ...],
                 baselines: tuple[BaselineHazard, ...] | None) -> ParameterLayout:
    """Assemble the layout for a validated spec with resolved links/hazards."""
    descriptors = spec.link_descriptors()
    identity_only = all(d == "identity" for d in descriptors)
    constrain_location = (not identity_only) and spec.family in ("lcmm", "jointlcmm")
    survival = None
    if spec.survival is not None:
        survival = SurvivalLayout(
            n_causes=spec.survival.n_causes,
            hazardtype=spec.survival.hazardtype,
            baselines=tuple(baselines),
            terms=spec.survival.terms,
        )
    return ParameterLayout(
        family=spec.family,
        ng=spec.ng,
        markers=tuple(spec.outcomes),
        classmb_terms=("intercept",) + tuple(spec.classmb),
        fixed_terms=tuple(spec.fixed),
        mixture_terms=tuple(spec.mixture),
        random_terms=tuple(spec.random),
        idiag=spec.idiag,
        nwg=spec.nwg,
        cor_kind=None if spec.cor is None else spec.cor.kind,
        contrast_terms=tuple(spec.contrast),
        random_y=spec.random_y,
        link_nparams=tuple(link_nparams),
        constrain_location=constrain_location,
        constrain_first_chol=spec.family == "multlcmm",
        resid_free=spec.has_free_residual,
        survival=survival,
    )


def class_membership_logits(xi: np.ndarray, xc: np.ndarray) -> np.ndarray:
    """Linear predictors of the membership model, reference class appended as 0.

    xc: (n, 1+q1) rows with leading 1; returns (n, G).
    """
    n = xc.shape[0]
    if xi.shape[0] == 0:
        return np.zeros((n, 1))
    return np.hstack([xc @ xi.T, np.zeros((n, 1))])


def class_membership_probs(xi: np.ndarray, xc: np.ndarray) -> np.ndarray:
    """Multinomial logistic membership probabilities, shape (n, G)."""
    logits = class_membership_logits(xi, xc)
    logits = logits - logits.max(axis=1, keepdims=True)
    num = np.exp(logits)
    return num / num.sum(axis=1, keepdims=True)
