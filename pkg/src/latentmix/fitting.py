"""Model fitting: estimation loop, fitted-model container, grid search.

fit() ties together validation, starting values, the Marquardt loop and the
asymptotic covariance.  Multi-class models start by default from the fitted
single-class counterpart with class-specific coordinates spread one standard
error apart.  gridsearch() replaces that deterministic start with short runs
from random perturbations of the single-class fit and continues the best one
to convergence.
"""

from __future__ import annotations

import sys
import warnings as _warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.special as sp

from . import archive as ar
from .data import LongDataset
from .design import ModelStructure, ValidatedModel, build_model
from .errors import ArchiveError, SpecError
from .initial import init_default, init_from_lower, init_random
from .likelihood import Evaluator
from .modelspec import ModelSpec
from .optimizer import MarquardtSettings, marquardt_maximize, mle_covariance


@dataclass
class FitSettings:
    maxiter: int = 500
    conv_param: float = 1e-4
    conv_loglik: float = 1e-4
    conv_deriv: float = 1e-4
    threads: int = 1
    gh_points: int = 30
    allow_large_ordinal: bool = False
    compute_covariance: bool = True
    verbose: bool = False

    def marquardt(self) -> MarquardtSettings:
        return MarquardtSettings(maxiter=self.maxiter, conv_param=self.conv_param,
                                 conv_loglik=self.conv_loglik,
                                 conv_deriv=self.conv_deriv)


@dataclass
class FittedModel:
    structure: ModelStructure
    theta: np.ndarray
    vcov: np.ndarray | None
    loglik: float
    convergence: dict
    posfix: tuple = ()
    fingerprint: dict | None = None
    notes: list = field(default_factory=list)
    class_proportions: tuple | None = None  # posterior assignment shares
    model: ValidatedModel | None = None    # present when fitted in-process

    # -- derived quantities ------------------------------------------------
    @property
    def layout(self):
        return self.structure.layout

    @property
    def n_free(self) -> int:
        return self.layout.n_free

    @property
    def n_estimated(self) -> int:
        return self.n_free - len(self.posfix)

    @property
    def converged(self) -> bool:
        return bool(self.convergence.get("converged", False))

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_estimated

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_estimated * np.log(self.structure.n_subjects)

    def se(self) -> np.ndarray | None:
        if self.vcov is None:
            return None
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def estimated_mask(self) -> np.ndarray:
        mask = np.ones(self.n_free, dtype=bool)
        for i in self.posfix:
            mask[i - 1] = False
        return mask

    def coefficient_rows(self):
        """(label, estimate, se, wald, p) per parameter.

        se is the string "fixed" for posfix'd coordinates and None when no
        standard error is available.
        """
        se = self.se()
        mask = self.estimated_mask()
        rows = []
        for i, text in enumerate(self.layout.label_texts()):
            if not mask[i]:
                rows.append((text, float(self.theta[i]), "fixed", None, None))
            elif se is None or se[i] == 0.0:
                rows.append((text, float(self.theta[i]), None, None, None))
            else:
                w = self.theta[i] / se[i]
                p = 2.0 * sp.ndtr(-abs(w))
                rows.append((text, float(self.theta[i]), float(se[i]),
                             float(w), float(p)))
        return rows

    def summary_text(self) -> str:
        st = self.structure
        out = []
        out.append(f"{st.spec.family} fit: {st.layout.ng} latent class"
                   f"{'es' if st.layout.ng > 1 else ''}, "
                   f"{st.n_subjects} subjects, {st.n_obs} observations")
        if st.n_deleted_rows:
            out.append(f"rows removed for missing data: {st.n_deleted_rows}"
                       + (f" ({st.n_dropped_subjects} whole subjects)"
                          if st.n_dropped_subjects else ""))
        conv = self.convergence
        out.append(f"convergence: {'yes' if self.converged else 'NO'} "
                   f"({conv.get('n_iter', 0)} iterations); {conv.get('status', '')}")
        thr = conv.get("thresholds", {})
        out.append(f"  squared parameter change   {conv.get('crit_param', np.nan):.3e}"
                   f"   (threshold {thr.get('param', np.nan):g})")
        out.append(f"  log-likelihood change      {conv.get('crit_loglik', np.nan):.3e}"
                   f"   (threshold {thr.get('loglik', np.nan):g})")
        out.append(f"  normalized gradient        {conv.get('crit_deriv', np.nan):.3e}"
                   f"   (threshold {thr.get('gradient', np.nan):g})")
        out.append(f"log-likelihood {self.loglik:.7g}   "
                   f"AIC {self.aic:.7g}   BIC {self.bic:.7g}   "
                   f"estimated parameters {self.n_estimated}")

        sections = (
            ("fixed effects and class membership",
             ("classmb", "fixed", "fixed_class", "contrast")),
            ("variance components",
             ("chol", "re_sd", "class_scale", "proc", "marker_sd", "resid_sd")),
            ("link parameters", ("link",)),
            ("survival parameters",
             ("hazard", "hazard_shift", "surv", "surv_class")),
        )
        rows = self.coefficient_rows()
        width = max(len(r[0]) for r in rows)
        blocks = [lab.block for lab in self.layout.labels]
        for title, wanted in sections:
            picked = [rows[i] for i in range(len(rows)) if blocks[i] in wanted]
            if not picked:
                continue
            out.append("")
            out.append(f"{title}:")
            out.append(f"{'parameter':<{width}}  {'estimate':>12} {'SE':>10} "
                       f"{'Wald':>8} {'p':>8}")
            for text, est, se, w, p in picked:
                if se == "fixed":
                    out.append(f"{text:<{width}}  {est:>12.5f} {'(fixed)':>28}")
                elif se is None:
                    out.append(f"{text:<{width}}  {est:>12.5f} {'(not estimated)':>28}")
                else:
                    out.append(f"{text:<{width}}  {est:>12.5f} {se:>10.5f} "
                               f"{w:>8.3f} {p:>8.5f}")

        lay = self.layout
        if lay.q > 0:
            b = lay.unpack(self.theta).re_cov
            out.append("")
            out.append("random-effect covariance:")
            namew = max(len(t) for t in lay.random_terms)
            for r, term in enumerate(lay.random_terms):
                vals = " ".join(f"{b[r, c]:>12.5f}" for c in range(r + 1))
                out.append(f"  {term:<{namew}}  {vals}")
        out.append("")
        if self.class_proportions is not None:
            shares = ", ".join(f"class {g + 1}: {100 * v:.1f}%"
                               for g, v in enumerate(self.class_proportions))
            out.append(f"posterior class shares: {shares}")
        for n in self.notes:
            out.append(f"note: {n}")
        return "\n".join(out)

    # -- persistence ---------------------------------------------------------
    def save(self, path) -> None:
        payload = {
            "structure": self.structure.to_dict(),
            "labels": self.layout.label_texts(),
            "theta": [float(v) for v in self.theta],
            "vcov_upper": None if self.vcov is None else ar.matrix_to_upper(self.vcov),
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "bic": float(self.bic),
            "convergence": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else
                                (int(v) if isinstance(v, (int, np.integer)) else
                                 (float(v) if isinstance(v, (float, np.floating)) else v)))
                            for k, v in self.convergence.items()},
            "posfix": [int(i) for i in self.posfix],
            "fingerprint": self.fingerprint,
            "notes": list(self.notes),
            "class_proportions": (None if self.class_proportions is None
                                  else [float(v) for v in self.class_proportions]),
        }
        ar.write_archive(path, payload)

    @classmethod
    def load(cls, path) -> "FittedModel":
        d = ar.read_archive(path)
        try:
            structure = ModelStructure.from_dict(d["structure"])
            theta = np.asarray(d["theta"], dtype=float)
            vcov = None
            if d.get("vcov_upper") is not None:
                vcov = ar.upper_to_matrix(d["vcov_upper"], theta.size)
            props = d.get("class_proportions")
            return cls(structure=structure, theta=theta, vcov=vcov,
                       loglik=float(d["loglik"]), convergence=dict(d["convergence"]),
                       posfix=tuple(d.get("posfix", [])),
                       fingerprint=d.get("fingerprint"),
                       notes=list(d.get("notes", [])),
                       class_proportions=None if props is None else tuple(props))
        except (KeyError, TypeError, ValueError) as exc:
            raise ArchiveError(f"{path}: incomplete fit archive ({exc})") from exc

    def bind(self, data: LongDataset) -> "FittedModel":
        """Attach a dataset to an archived fit (postfit tools need designs)."""
        vm = build_model(self.structure.spec, data)
        if self.fingerprint is not None:
            same = vm.fingerprint.get("sha256") == self.fingerprint.get("sha256")
            if not same:
                _warnings.warn("dataset differs from the one used for fitting")
        if vm.structure.layout.n_free != self.n_free:
            raise SpecError("dataset is incompatible with the archived model "
                            "(different parameter layout)")
        return replace(self, model=vm, structure=vm.structure)


# ---------------------------------------------------------------------------


def _as_model(spec_or_model, data) -> ValidatedModel:
    if isinstance(spec_or_model, ValidatedModel):
        return spec_or_model
    if data is None:
        raise SpecError("fitting a spec requires a dataset")
    return build_model(spec_or_model, data)


def _check_posfix(posfix, n_free: int) -> tuple:
    posfix = tuple(int(i) for i in posfix)
    for i in posfix:
        if not (1 <= i <= n_free):
            raise SpecError(f"posfix index {i} outside 1..{n_free}")
    if len(set(posfix)) != len(posfix):
        raise SpecError("duplicate posfix indices")
    return posfix


def _fit_lower(vm: ValidatedModel, data, settings: FitSettings) -> FittedModel:
    """Fit the single-class counterpart (used to start multi-class fits)."""
    lower_spec = vm.spec.reduced_to_single_class()
    if data is None:
        raise SpecError("the default multi-class start needs the dataset "
                        "to fit a single-class model first; pass init= "
                        "explicitly when fitting a prebuilt model")
    return fit(lower_spec, data, settings=settings)


def _resolve_init(vm: ValidatedModel, data, init, settings: FitSettings,
                  notes: list) -> np.ndarray:
    lay = vm.layout
    if init is None:
        if lay.ng == 1:
            with _warnings.catch_warnings(record=True) as caught:
                _warnings.simplefilter("always")
                theta0 = init_default(vm.structure)
            notes.extend(str(w.message) for w in caught)
            return theta0
        lower = _fit_lower(vm, data, settings)
        notes.append(f"started from a single-class fit "
                     f"(log-likelihood {lower.loglik:.6g})")
        return init_from_lower(lay, lower.layout, lower.theta, lower.vcov)
    if isinstance(init, FittedModel):
        if init.layout.label_texts() == lay.label_texts():
            return init.theta.copy()
        return init_from_lower(lay, init.layout, init.theta, init.vcov)
    theta0 = np.asarray(init, dtype=float)
    if theta0.shape != (lay.n_free,):
        raise SpecError(f"initial vector has length {theta0.size}, "
                        f"expected {lay.n_free}")
    return theta0.copy()


def fit(spec_or_model, data: LongDataset | None = None, *, init=None,
        posfix=(), settings: FitSettings | None = None) -> FittedModel:
    """Maximum-likelihood fit.

    init: None (defaults; multi-class models first fit their single-class
    counterpart), a FittedModel (expanded or copied as appropriate), or an
    explicit parameter vector.  posfix holds 1-based positions kept fixed at
    their starting value.
    """
    settings = settings or FitSettings()
    vm = _as_model(spec_or_model, data)
    lay = vm.layout
    posfix = _check_posfix(posfix, lay.n_free)

    notes: list = []
    theta0 = _resolve_init(vm, data, init, settings, notes)

    ev = Evaluator(vm, threads=settings.threads, gh_points=settings.gh_points,
                   allow_large_ordinal=settings.allow_large_ordinal)
    mask = np.ones(lay.n_free, dtype=bool)
    for i in posfix:
        mask[i - 1] = False

    callback = None
    if settings.verbose:
        def callback(it, theta, value):
            print(f"iteration {it:4d}  log-likelihood {value:.8f}", file=sys.stderr)

    res = marquardt_maximize(ev.total_loglik, theta0, mask=mask,
                             settings=settings.marquardt(), callback=callback)

    vcov = None
    if settings.compute_covariance:
        vcov, vwarn = mle_covariance(ev.total_loglik, res.theta, mask=mask)
        notes.extend(vwarn)

    convergence = {
        "converged": res.converged,
        "n_iter": res.n_iter,
        "crit_param": res.crit_param,
        "crit_loglik": res.crit_loglik,
        "crit_deriv": res.crit_deriv,
        "deriv_used_raw_hessian": res.deriv_used_raw_hessian,
        "status": res.status,
        "n_eval": res.n_eval,
        "thresholds": {"param": settings.conv_param,
                       "loglik": settings.conv_loglik,
                       "gradient": settings.conv_deriv},
    }
    comp = ev.components(res.theta)
    logpost = comp.log_prior + comp.longitudinal + comp.survival
    assigned = np.argmax(logpost, axis=1)
    props = tuple(float(np.mean(assigned == g)) for g in range(lay.ng))
    return FittedModel(structure=vm.structure, theta=res.theta, vcov=vcov,
                       loglik=res.loglik, convergence=convergence,
                       posfix=posfix, fingerprint=vm.fingerprint,
                       notes=notes, class_proportions=props, model=vm)


def gridsearch(spec_or_model, data: LongDataset | None = None, *, rep: int = 30,
               maxiter_short: int = 15, seed: int = 0, posfix=(),
               settings: FitSettings | None = None) -> FittedModel:
    """Short-run multistart: `rep` runs of `maxiter_short` iterations from
    random perturbations of the single-class fit; the best interim point is
    optimized to convergence.  Reproducible for a given seed at any thread
    count."""
    settings = settings or FitSettings()
    vm = _as_model(spec_or_model, data)
    lay = vm.layout
    if lay.ng == 1:
        return fit(vm, data, posfix=posfix, settings=settings)
    if rep < 1:
        raise SpecError("gridsearch needs rep >= 1")

    lower = _fit_lower(vm, data, settings)
    ev = Evaluator(vm, threads=settings.threads, gh_points=settings.gh_points,
                   allow_large_ordinal=settings.allow_large_ordinal)
    posfix = _check_posfix(posfix, lay.n_free)
    mask = np.ones(lay.n_free, dtype=bool)
    for i in posfix:
        mask[i - 1] = False
    short = replace(settings, maxiter=maxiter_short)

    best_theta, best_value, best_j = None, -np.inf, -1
    interim = []
    for j in range(rep):
        rng = np.random.Generator(np.random.Philox(key=[seed, j]))
        theta_j = init_random(lay, lower.layout, lower.theta, lower.vcov, rng)
        try:
            r = marquardt_maximize(ev.total_loglik, theta_j, mask=mask,
                                   settings=short.marquardt())
            value, theta_end = r.loglik, r.theta
        except Exception:
            value, theta_end = -np.inf, theta_j
        interim.append(value)
        if value > best_value:
            best_theta, best_value, best_j = theta_end, value, j

    if best_theta is None:
        raise SpecError("no grid-search run produced an evaluable likelihood")

    out = fit(vm, data, init=best_theta, posfix=posfix, settings=settings)
    out.notes.insert(0, (f"grid search: {rep} runs of {maxiter_short} iterations "
                         f"(seed {seed}); continued run {best_j + 1} "
                         f"with interim log-likelihood {best_value:.6g}"))
    out.notes.insert(1, "interim log-likelihoods: "
                     + ", ".join(f"{v:.6g}" for v in interim))
    return out
