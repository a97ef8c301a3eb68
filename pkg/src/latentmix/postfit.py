"""Quantities computed from a fitted model.

Posterior classification, empirical Bayes random effects, fitted values and
residuals, profile predictions on the latent and marker scales, link-function
curves, explained variance, Wald tests, random-effect covariance with
delta-method errors, cumulative incidence and individual dynamic event
predictions.

Everything here is read-only over the fitted model.  Monte Carlo machinery
(parameter draws for percentile bands, integration draws for marker-scale
expectations) keys its generators by (seed, draw index), so results are
reproducible and draws can be partitioned across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.special as sp
from scipy import stats

from . import links as lk
from .design import SubjectDesign, design_matrix, term_values
from .errors import SpecError
from .fitting import FittedModel
from .layout import class_membership_probs
from .likelihood import (Evaluator, marginal_moments, process_cov,
                         subject_gaussian_loglik)
from .numerics import CholeskyFactor, fd_steps, gauss_hermite, gauss_legendre

_BAND_QUANTILES = (2.5, 50.0, 97.5)


def _require_data(fit: FittedModel):
    if fit.model is None:
        raise SpecError("this computation needs the fitted dataset; "
                        "load the archive and bind() the data first")
    return fit.model


def _require_vcov(fit: FittedModel):
    if fit.vcov is None:
        raise SpecError("parameter draws need the asymptotic covariance, "
                        "which is unavailable for this fit")
    return fit.vcov


def _psd_root(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + np.asarray(mat).T) / 2.0)
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def parameter_draws(fit: FittedModel, ndraws: int, seed: int = 0) -> np.ndarray:
    """(ndraws, n_free) draws from N(theta_hat, vcov), keyed by draw index."""
    root = _psd_root(_require_vcov(fit))
    out = np.empty((ndraws, fit.n_free))
    for d in range(ndraws):
        rng = np.random.Generator(np.random.Philox(key=[seed, d]))
        out[d] = fit.theta + root @ rng.standard_normal(fit.n_free)
    return out


def _columns(table) -> dict:
    """Accept a dict of arrays or a pandas DataFrame."""
    if hasattr(table, "columns") and hasattr(table, "__getitem__") and not isinstance(table, dict):
        return {c: np.asarray(table[c], dtype=float) for c in table.columns}
    return {k: np.asarray(v, dtype=float) for k, v in table.items()}


# ---------------------------------------------------------------------------
# posterior classification


@dataclass
class PosteriorTable:
    subject_ids: np.ndarray
    probs_y: np.ndarray             # (N, G) from the longitudinal part
    probs_joint: np.ndarray | None  # (N, G) adding the survival factor
    assigned: np.ndarray            # 1-based modal class (joint-based if present)

    @property
    def probs(self) -> np.ndarray:
        return self.probs_y if self.probs_joint is None else self.probs_joint


def _softmax_rows(logw: np.ndarray) -> np.ndarray:
    logw = logw - logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def posterior_probs(fit: FittedModel) -> PosteriorTable:
    """Bayes-rule class probabilities per subject.

    The longitudinal table conditions on the marker data alone; joint fits
    get a second table that also conditions on the event time and indicator.
    The modal class (lowest index on ties) uses the most complete table.
    """
    vm = _require_data(fit)
    ev = Evaluator(vm)
    comp = ev.components(fit.theta)
    probs_y = _softmax_rows(comp.log_prior + comp.longitudinal)
    probs_joint = None
    if fit.structure.baselines is not None:
        probs_joint = _softmax_rows(comp.log_prior + comp.longitudinal
                                    + comp.survival)
    table = probs_y if probs_joint is None else probs_joint
    assigned = np.argmax(table, axis=1) + 1
    ids = np.asarray([s.subject_id for s in vm.subjects])
    return PosteriorTable(subject_ids=ids, probs_y=probs_y,
                          probs_joint=probs_joint, assigned=assigned)


def postprob_summary(table: PosteriorTable) -> dict:
    """Classification diagnostics.

    Returns class counts/proportions, the matrix of mean class probabilities
    among subjects assigned to each class (rows; NaN for empty classes), and
    the proportion of each class's members with modal probability above
    0.7 / 0.8 / 0.9.
    """
    probs = table.probs
    N, G = probs.shape
    counts = np.array([np.sum(table.assigned == g) for g in range(1, G + 1)])
    mean_matrix = np.full((G, G), np.nan)
    above = {thr: np.full(G, np.nan) for thr in (0.7, 0.8, 0.9)}
    for g in range(1, G + 1):
        members = table.assigned == g
        if not members.any():
            continue
        mean_matrix[g - 1] = probs[members].mean(axis=0)
        modal = probs[members, g - 1]
        for thr in above:
            above[thr][g - 1] = float(np.mean(modal > thr))
    return {
        "n": counts,
        "proportion": counts / N,
        "mean_probabilities": mean_matrix,
        "above": above,
    }


# ---------------------------------------------------------------------------
# empirical Bayes random effects and fitted values


def _check_continuous(fit: FittedModel, what: str):
    if fit.structure.ordinal:
        raise SpecError(f"{what} is undefined under a threshold link "
                        "(no continuous latent residual decomposition)")


def _transformed_obs(structure, subj, blocks):
    ystar = np.empty(subj.n_obs)
    for k, fam in enumerate(structure.link_families):
        m = subj.marker_index == k
        if np.any(m):
            ystar[m], _ = lk.inverse_transform(fam, subj.y[m], blocks.eta[k])
    return ystar


def empirical_bayes(fit: FittedModel) -> dict:
    """Class-specific and marginal empirical Bayes random-effect predictions.

    u_hat[i, g] = omega_g^2 B Z' V_ig^{-1} (ystar_i - mean_ig); the marginal
    prediction averages classes with the longitudinal posterior weights.
    """
    _check_continuous(fit, "empirical Bayes prediction")
    vm = _require_data(fit)
    structure, lay = fit.structure, fit.layout
    blocks = lay.unpack(fit.theta)
    G, q = lay.ng, lay.q
    post = posterior_probs(fit).probs_y
    N = len(vm.subjects)
    u_class = np.zeros((N, G, q))
    for i, subj in enumerate(vm.subjects):
        ystar = _transformed_obs(structure, subj, blocks)
        for g in range(G):
            mu, V = marginal_moments(structure, subj, blocks, g)
            fac = CholeskyFactor.from_cov(V)
            u_class[i, g] = (blocks.omega[g] ** 2
                             * (blocks.re_cov @ subj.Z.T @ fac.solve(ystar - mu)))
    u_marginal = np.einsum("ng,ngq->nq", post, u_class)
    return {
        "subject_ids": np.asarray([s.subject_id for s in vm.subjects]),
        "u_class": u_class,
        "u_marginal": u_marginal,
        "weights": post,
    }


def predictions_residuals(fit: FittedModel) -> dict:
    """Per-observation fitted values and residuals on the latent scale.

    Marginal predictions average class means with the prior membership
    probabilities; subject-specific predictions add the class empirical
    Bayes effects and average with the longitudinal posterior weights.
    For identity links the latent scale is the marker scale.
    """
    _check_continuous(fit, "residual computation")
    vm = _require_data(fit)
    structure, lay = fit.structure, fit.layout
    blocks = lay.unpack(fit.theta)
    G = lay.ng
    eb = empirical_bayes(fit)
    post = eb["weights"]

    ids, times, markers = [], [], []
    obs, pred_m, pred_ss = [], [], []
    for i, subj in enumerate(vm.subjects):
        prior = class_membership_probs(blocks.xi, subj.xc.reshape(1, -1))[0]
        ystar = _transformed_obs(structure, subj, blocks)
        m_rows = np.zeros(subj.n_obs)
        ss_rows = np.zeros(subj.n_obs)
        for g in range(G):
            mu, _ = marginal_moments(structure, subj, blocks, g)
            m_rows += prior[g] * mu
            ss_rows += post[i, g] * (mu + subj.Z @ eb["u_class"][i, g])
        ids.extend([subj.subject_id] * subj.n_obs)
        times.append(subj.times)
        markers.append(subj.marker_index)
        obs.append(ystar)
        pred_m.append(m_rows)
        pred_ss.append(ss_rows)

    obs = np.concatenate(obs)
    pred_m = np.concatenate(pred_m)
    pred_ss = np.concatenate(pred_ss)
    return {
        "subject_ids": np.asarray(ids),
        "times": np.concatenate(times),
        "marker_index": np.concatenate(markers),
        "obs": obs,
        "pred_marginal": pred_m,
        "pred_subject": pred_ss,
        "resid_marginal": obs - pred_m,
        "resid_subject": obs - pred_ss,
    }


# ---------------------------------------------------------------------------
# profile predictions


def _profile_design(spec, cols: dict, n: int):
    X1 = design_matrix(spec.common_fixed, cols, n)
    X2 = design_matrix(spec.mixture, cols, n)
    Z = design_matrix(spec.random, cols, n)
    XY = design_matrix(spec.contrast, cols, n)
    return X1, X2, Z, XY


def _profile_prior(spec, blocks, cols: dict, n: int) -> np.ndarray:
    xc = np.ones((n, 1 + len(spec.classmb)))
    for j, t in enumerate(spec.classmb, start=1):
        xc[:, j] = term_values(t, cols, n)
    return class_membership_probs(blocks.xi, xc)


def _latent_moments(structure, blocks, cols, n):
    """Per-class latent-process means and variances on profile rows."""
    spec = structure.spec
    X1, X2, Z, _ = _profile_design(spec, cols, n)
    t = cols[spec.timevar]
    G = structure.layout.ng
    mean = np.empty((G, n))
    var = np.empty((G, n))
    zbz = np.einsum("ij,jk,ik->i", Z, blocks.re_cov, Z) if Z.shape[1] else np.zeros(n)
    pvar = np.zeros(n)
    if spec.cor is not None:
        if spec.cor.kind == "BM":
            pvar = blocks.proc_sd ** 2 * t
        else:
            pvar = np.full(n, blocks.proc_sd ** 2)
    for g in range(G):
        mean[g] = X1 @ blocks.beta
        if X2.shape[1]:
            mean[g] += X2 @ blocks.upsilon[g]
        var[g] = blocks.omega[g] ** 2 * zbz + pvar
    return mean, var


def _marker_scale_expectation(fam, eta, mu, var, integration, ndraws, rng):
    """E[H(lam + eps)] with lam + eps ~ N(mu, var + resid); vectorized in mu."""
    if fam.kind == "identity":
        return mu.copy()
    if fam.kind == "linear":
        return eta[0] + eta[1] * mu
    if fam.kind == "thresholds":
        cuts = lk.expand_thresholds(eta)
        sd = np.sqrt(var)
        m0, M = fam.level_offset, fam.n_levels
        return (m0 + M - 1
                - np.sum(sp.ndtr((cuts[:, None] - mu[None, :]) / sd[None, :]), axis=0))
    sd = np.sqrt(var)
    if integration == "gh":
        rule = gauss_hermite(30)
        vals = np.zeros_like(mu)
        for x, w in zip(rule.nodes, rule.weights):
            vals += w * lk.forward_transform(fam, mu + sd * x, eta)
        return vals
    m = max(1, ndraws // 2)
    z = rng.standard_normal(m)
    vals = np.zeros_like(mu)
    for zi in z:                         # antithetic pairs
        vals += lk.forward_transform(fam, mu + sd * zi, eta)
        vals += lk.forward_transform(fam, mu - sd * zi, eta)
    return vals / (2 * m)


def predict_trajectory(fit: FittedModel, table, scale: str = "outcome",
                       integration: str = "mc", ndraws: int = 2000,
                       draws: int = 0, seed: int = 0) -> dict:
    """Predicted per-class curves for a hypothetical covariate profile.

    scale "latent" returns the class linear predictors; "outcome" integrates
    the link over the latent-plus-error Gaussian law (exact for identity,
    linear and threshold links; Monte Carlo with antithetic pairs or 30-point
    Gauss-Hermite otherwise, the latter time point by time point).  With
    draws > 0, parameters are redrawn from their asymptotic law and the
    2.5/50/97.5 percentiles of each curve value are returned as bands.
    """
    if scale not in ("latent", "outcome"):
        raise SpecError(f"unknown prediction scale {scale!r}")
    if integration not in ("mc", "gh"):
        raise SpecError(f"unknown integration method {integration!r}")
    structure, lay = fit.structure, fit.layout
    spec = structure.spec
    cols = _columns(table)
    if spec.timevar not in cols:
        raise SpecError(f"profile table lacks the time variable {spec.timevar!r}")
    n = len(cols[spec.timevar])

    def curves(theta, rng):
        blocks = lay.unpack(theta)
        mean, var = _latent_moments(structure, blocks, cols, n)
        prior = _profile_prior(spec, blocks, cols, n)
        if scale == "latent":
            per_class = {None: mean}
        else:
            per_class = {}
            for k, mk in enumerate(spec.outcomes):
                fam = structure.link_families[k]
                out_k = np.empty_like(mean)
                for g in range(lay.ng):
                    mu_kg = mean[g].copy()
                    if spec.contrast:
                        XY = design_matrix(spec.contrast, cols, n)
                        mu_kg += XY @ blocks.gamma[k]
                    v_kg = var[g] + blocks.alpha_sd[k] ** 2 + blocks.resid_sd[k] ** 2
                    out_k[g] = _marker_scale_expectation(
                        fam, blocks.eta[k], mu_kg, v_kg, integration, ndraws, rng)
                per_class[mk] = out_k
        return per_class, prior

    rng0 = np.random.Generator(np.random.Philox(key=[seed, 0]))
    point, prior = curves(fit.theta, rng0)
    out = {
        "times": cols[spec.timevar],
        "weights": prior,
        "classes": {key: val for key, val in point.items()},
        "average": {key: np.einsum("ng,gn->n", prior, val)
                    for key, val in point.items()},
    }
    if draws > 0:
        root = _psd_root(_require_vcov(fit))
        stack = {key: np.empty((draws,) + val.shape) for key, val in point.items()}
        for d in range(draws):
            rng = np.random.Generator(np.random.Philox(key=[seed, d + 1]))
            theta_d = fit.theta + root @ rng.standard_normal(fit.n_free)
            try:
                per_class, _ = curves(theta_d, rng)
            except Exception:
                per_class = point    # a failed draw falls back to the estimate
            for key in stack:
                stack[key][d] = per_class[key]
        out["bands"] = {
            key: {name: np.percentile(stack[key], qq, axis=0)
                  for name, qq in zip(("lower", "median", "upper"), _BAND_QUANTILES)}
            for key in stack
        }
    return out


def fit_outcome_scale(fit: FittedModel, ndraws: int = 2000, seed: int = 0) -> dict:
    """Marginal marker-scale fitted values at the observed design points.

    Continuous links integrate H over the joint Gaussian law of each
    subject's latent vector by antithetic Monte Carlo; threshold links use
    the closed-form expectation of the induced multinomial.
    """
    vm = _require_data(fit)
    structure, lay = fit.structure, fit.layout
    spec = structure.spec
    blocks = lay.unpack(fit.theta)
    G = lay.ng
    m = max(1, ndraws // 2)

    ids, times, markers, fitted = [], [], [], []
    for i, subj in enumerate(vm.subjects):
        prior = class_membership_probs(blocks.xi, subj.xc.reshape(1, -1))[0]
        rows = np.zeros(subj.n_obs)
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        zdraw = rng.standard_normal((m, subj.n_obs))
        for g in range(G):
            mu, V = marginal_moments(structure, subj, blocks, g)
            if structure.ordinal:
                fam = structure.link_families[0]
                cuts = lk.expand_thresholds(blocks.eta[0])
                sd = np.sqrt(np.diag(V) + 1.0)    # unit probit residual
                ey = (fam.level_offset + fam.n_levels - 1
                      - np.sum(sp.ndtr((cuts[:, None] - mu[None, :]) / sd[None, :]),
                               axis=0))
                rows += prior[g] * ey
                continue
            root = _psd_root(V)
            acc = np.zeros(subj.n_obs)
            for zi in zdraw:
                for sgn in (1.0, -1.0):
                    lam = mu + sgn * (root @ zi)
                    for k, fam in enumerate(structure.link_families):
                        mk = subj.marker_index == k
                        if np.any(mk):
                            acc[mk] += lk.forward_transform(fam, lam[mk],
                                                            blocks.eta[k])
            rows += prior[g] * acc / (2 * m)
        ids.extend([subj.subject_id] * subj.n_obs)
        times.append(subj.times)
        markers.append(subj.marker_index)
        fitted.append(rows)
    return {
        "subject_ids": np.asarray(ids),
        "times": np.concatenate(times),
        "marker_index": np.concatenate(markers),
        "fitted": np.concatenate(fitted),
    }


# ---------------------------------------------------------------------------
# link curves


def _link_grid(fit: FittedModel, marker: str, fam, nsim: int):
    if fam.kind in ("beta", "splines"):
        return np.linspace(fam.y_min, fam.y_max, nsim)
    mins = fit.structure.stats.get("marker_min", {})
    maxs = fit.structure.stats.get("marker_max", {})
    if marker not in mins:
        raise SpecError("no stored marker range; pass an explicit grid")
    return np.linspace(mins[marker], maxs[marker], nsim)


def predict_link(fit: FittedModel, grid=None, nsim: int = 100,
                 draws: int = 2000, seed: int = 0) -> dict:
    """Estimated latent-scale link curves with percentile bands.

    For each marker: rows (outcome value, latent median, lower, upper)
    evaluated on `grid` (or nsim equidistant values over the marker range).
    Threshold links report the estimated latent cut points; the outcome
    column then holds the level boundaries (offset + l - 0.5).  draws = 0 or
    a missing covariance collapses the three curves onto the point estimate.
    """
    structure, lay = fit.structure, fit.layout
    spec = structure.spec
    if all(f.kind == "identity" for f in structure.link_families):
        raise SpecError("the model has no link function to estimate")

    def eval_curves(theta):
        blocks = lay.unpack(theta)
        out = {}
        for k, mk in enumerate(spec.outcomes):
            fam = structure.link_families[k]
            if fam.kind == "identity":
                continue
            if fam.kind == "thresholds":
                out[mk] = lk.expand_thresholds(blocks.eta[k])
            else:
                g = grids[mk]
                vals, _ = lk.inverse_transform(fam, g, blocks.eta[k])
                out[mk] = vals
        return out

    grids = {}
    for k, mk in enumerate(spec.outcomes):
        fam = structure.link_families[k]
        if fam.kind == "identity":
            continue
        if fam.kind == "thresholds":
            grids[mk] = fam.level_offset - 0.5 + np.arange(1, fam.n_levels)
        elif grid is not None:
            grids[mk] = np.asarray(grid, dtype=float)
        else:
            grids[mk] = _link_grid(fit, mk, fam, nsim)

    point = eval_curves(fit.theta)
    out = {"grid": grids, "latent": point}
    if draws > 0 and fit.vcov is not None:
        root = _psd_root(fit.vcov)
        stack = {mk: np.empty((draws, v.size)) for mk, v in point.items()}
        for d in range(draws):
            rng = np.random.Generator(np.random.Philox(key=[seed, d]))
            theta_d = fit.theta + root @ rng.standard_normal(fit.n_free)
            try:
                cur = eval_curves(theta_d)
            except Exception:
                cur = point
            for mk in stack:
                stack[mk][d] = cur[mk]
        out["bands"] = {
            mk: {name: np.percentile(stack[mk], qq, axis=0)
                 for name, qq in zip(("lower", "median", "upper"), _BAND_QUANTILES)}
            for mk in stack
        }
    else:
        out["bands"] = {mk: {"lower": v, "median": v, "upper": v}
                        for mk, v in point.items()}
    return out


# ---------------------------------------------------------------------------
# explained variance


def var_explained(fit: FittedModel, at: dict) -> dict:
    """Percentage of marker variance carried by the shared process, per class.

    at: covariate/time values (single row) for the random-effect design and
    the time variable.  The shared part is Z'BZ (scaled by the class
    variance factor) plus the BM/AR variance at t; marker noise adds the
    marker intercept and residual variances.
    """
    structure, lay = fit.structure, fit.layout
    spec = structure.spec
    blocks = lay.unpack(fit.theta)
    cols = {k: np.asarray([v], dtype=float) for k, v in at.items()}
    if spec.timevar not in cols:
        raise SpecError(f"needs the time variable {spec.timevar!r}")
    _, var = _latent_moments(structure, blocks, cols, 1)
    out = {}
    for k, mk in enumerate(spec.outcomes):
        noise = blocks.alpha_sd[k] ** 2 + blocks.resid_sd[k] ** 2
        out[mk] = 100.0 * var[:, 0] / (var[:, 0] + noise)
    return out


# ---------------------------------------------------------------------------
# Wald tests and random-effect covariance


def wald_test(fit: FittedModel, combination, null=None) -> dict:
    """Multivariate Wald test of C theta = c0.

    combination: list of 1-based coefficient positions (tests them jointly
    against null, default 0) or an explicit contrast matrix with n_free
    columns.  Returns the chi-square statistic, degrees of freedom and
    p-value.
    """
    vcov = _require_vcov(fit)
    comb = np.asarray(combination)
    if comb.ndim == 1:
        idx = comb.astype(int)
        if np.any(idx < 1) or np.any(idx > fit.n_free):
            raise SpecError(f"coefficient positions outside 1..{fit.n_free}")
        C = np.zeros((idx.size, fit.n_free))
        C[np.arange(idx.size), idx - 1] = 1.0
    else:
        C = comb.astype(float)
        if C.shape[1] != fit.n_free:
            raise SpecError(f"contrast matrix needs {fit.n_free} columns")
    c0 = np.zeros(C.shape[0]) if null is None else np.asarray(null, dtype=float)
    diff = C @ fit.theta - c0
    cvc = C @ vcov @ C.T
    try:
        stat = float(diff @ np.linalg.solve(cvc, diff))
    except np.linalg.LinAlgError as exc:
        raise SpecError("singular covariance for the requested combination") from exc
    df = int(np.linalg.matrix_rank(cvc))
    return {"stat": stat, "df": df, "p": float(stats.chi2.sf(stat, df))}


def varcov_re(fit: FittedModel) -> list:
    """Random-effect covariance entries with delta-method standard errors.

    Each row: (label, estimate, se, wald, p) for the upper-triangle entries
    of B.  The map from Cholesky coordinates to B is quadratic, so central
    differences give the exact Jacobian.
    """
    lay = fit.layout
    q = lay.q
    if q == 0:
        raise SpecError("the model has no random effects")
    vcov = _require_vcov(fit)
    pairs = [(r, c) for r in range(q) for c in range(r, q)]

    def entries(theta):
        B = lay.unpack(theta).re_cov
        return np.array([B[r, c] for r, c in pairs])

    free_idx = [i for i, lab in enumerate(lay.labels)
                if lab.block in ("chol", "re_sd")]
    J = np.zeros((len(pairs), fit.n_free))
    h = fd_steps(fit.theta)
    for i in free_idx:
        e = np.zeros(fit.n_free)
        e[i] = h[i]
        J[:, i] = (entries(fit.theta + e) - entries(fit.theta - e)) / (2 * h[i])
    cov_b = J @ vcov @ J.T
    se = np.sqrt(np.clip(np.diag(cov_b), 0.0, None))
    vals = entries(fit.theta)
    names = [t for t in lay.random_terms]
    rows = []
    for (r, c), v, s in zip(pairs, vals, se):
        label = f"varcov {names[r]}:{names[c]}"
        if s > 0:
            w = v / s
            rows.append((label, float(v), float(s), float(w),
                         float(2.0 * sp.ndtr(-abs(w)))))
        else:
            rows.append((label, float(v), None, None, None))
    return rows


# ---------------------------------------------------------------------------
# event predictions (joint fits)


def _require_joint(fit: FittedModel):
    if fit.structure.baselines is None:
        raise SpecError("this computation needs a joint (survival) fit")


def _check_hazard_support(fit: FittedModel, tmax: float):
    for b in fit.structure.baselines:
        if b.knots is not None and tmax > b.knots[-1] + 1e-12:
            raise SpecError(f"time {tmax} beyond the baseline hazard support "
                            f"(last knot {b.knots[-1]})")


def _survival_pieces(fit: FittedModel, blocks, profile_cols: dict):
    """Per-cause/class transformed baselines and covariate risk factors."""
    spec = fit.structure.spec
    lay = fit.layout
    P, G = lay.survival.n_causes, lay.ng
    w = [[None] * G for _ in range(P)]
    risk = np.empty((P, G))
    for p in range(1, P + 1):
        s1 = lay.survival.s1_terms(p)
        s2 = lay.survival.s2_terms(p)
        x1 = np.array([term_values(t.name, profile_cols, 1)[0] for t in s1])
        x2 = np.array([term_values(t.name, profile_cols, 1)[0] for t in s2])
        base_lin = float(x1 @ blocks.nu[p - 1]) if x1.size else 0.0
        for g in range(G):
            lin = base_lin
            if x2.size:
                lin += float(x2 @ blocks.delta[p - 1][g])
            w[p - 1][g] = fit.structure.baselines[p - 1].transform(
                blocks.hazard_raw[p - 1][g])
            risk[p - 1, g] = np.exp(blocks.hazard_shift[p - 1][g] + lin)
    return w, risk


def _cum_all(fit, w, risk, g: int, t):
    """Sum over causes of the class-g cumulative hazard at times t."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    total = np.zeros(t.shape)
    for p in range(risk.shape[0]):
        total += fit.structure.baselines[p].cumulative(t, w[p][g]) * risk[p, g]
    return total


def _window_incidence(fit, w, risk, g: int, cause: int, s: float, t_end: float):
    """P(event of `cause` in (s, t_end] | class g, at risk at s... ) numerator piece."""
    P = risk.shape[0]
    if P == 1:
        S_s = np.exp(-_cum_all(fit, w, risk, g, s)[0])
        S_e = np.exp(-_cum_all(fit, w, risk, g, t_end)[0])
        return S_s - S_e
    rule = gauss_legendre(50, s, t_end)
    base = fit.structure.baselines[cause - 1]
    lam = base.hazard(rule.nodes, w[cause - 1][g]) * risk[cause - 1, g]
    surv = np.exp(-_cum_all(fit, w, risk, g, rule.nodes))
    return float(np.sum(rule.weights * lam * surv))


def cumulative_incidence(fit: FittedModel, profile: dict, times,
                         draws: int = 0, seed: int = 0) -> dict:
    """Cause-specific cumulative incidence curves for a covariate profile.

    Returns per-class and prior-weighted marginal curves per cause; with
    draws > 0, percentile bands of the marginal curves.
    """
    _require_joint(fit)
    times = np.asarray(times, dtype=float)
    _check_hazard_support(fit, float(times.max()))
    lay = fit.layout
    P, G = lay.survival.n_causes, lay.ng
    cols = {k: np.asarray([v], dtype=float) for k, v in profile.items()}

    def compute(theta):
        blocks = lay.unpack(theta)
        w, risk = _survival_pieces(fit, blocks, cols)
        prior = _profile_prior(fit.structure.spec, blocks, cols, 1)[0]
        per_class = np.empty((P, G, times.size))
        for p in range(1, P + 1):
            for g in range(G):
                per_class[p - 1, g] = [
                    _window_incidence(fit, w, risk, g, p, 0.0, float(tt))
                    for tt in times]
        marginal = np.einsum("g,pgt->pt", prior, per_class)
        return per_class, marginal, prior

    per_class, marginal, prior = compute(fit.theta)
    out = {"times": times, "per_class": per_class, "marginal": marginal,
           "weights": prior}
    if draws > 0:
        root = _psd_root(_require_vcov(fit))
        stack = np.empty((draws,) + marginal.shape)
        for d in range(draws):
            rng = np.random.Generator(np.random.Philox(key=[seed, d]))
            theta_d = fit.theta + root @ rng.standard_normal(fit.n_free)
            try:
                _, stack[d], _ = compute(theta_d)
            except Exception:
                stack[d] = marginal
        out["bands"] = {name: np.percentile(stack, qq, axis=0)
                        for name, qq in zip(("lower", "median", "upper"),
                                            _BAND_QUANTILES)}
    return out


def _history_subject(fit: FittedModel, history: dict, s: float):
    """SubjectDesign holding the observations collected up to time s."""
    spec = fit.structure.spec
    cols = _columns(history)
    if spec.timevar not in cols:
        raise SpecError(f"history lacks the time variable {spec.timevar!r}")
    t = cols[spec.timevar]
    n = t.size
    t_parts, y_parts, m_parts, keep_rows = [], [], [], []
    for k, mk in enumerate(spec.outcomes):
        if mk not in cols:
            continue
        pres = ~np.isnan(cols[mk]) & (t <= s)
        idx = np.flatnonzero(pres)
        if idx.size:
            t_parts.append(t[idx])
            y_parts.append(cols[mk][idx])
            m_parts.append(np.full(idx.size, k))
            keep_rows.append(idx)
    if keep_rows:
        rows = np.concatenate(keep_rows)
        stacked = {name: arr[rows] for name, arr in cols.items()}
        n_obs = rows.size
        X1, X2, Z, XY = _profile_design(spec, stacked, n_obs)
        times = np.concatenate(t_parts)
        y = np.concatenate(y_parts)
        midx = np.concatenate(m_parts)
    else:
        X1 = np.zeros((0, len(spec.common_fixed)))
        X2 = np.zeros((0, len(spec.mixture)))
        Z = np.zeros((0, len(spec.random)))
        XY = np.zeros((0, len(spec.contrast)))
        times = np.zeros(0)
        y = np.zeros(0)
        midx = np.zeros(0, dtype=int)
    xc = np.ones(1 + len(spec.classmb))
    first = {name: arr[:1] for name, arr in cols.items()}
    for j, term in enumerate(spec.classmb, start=1):
        xc[j] = term_values(term, first, 1)[0]
    return SubjectDesign(subject_id="profile", times=times, y=y,
                         marker_index=midx, X1=X1, X2=X2, Z=Z, XY=XY, xc=xc), cols


def dynamic_prediction(fit: FittedModel, history: dict, landmarks, horizons,
                       cause: int = 1, draws: int = 0, seed: int = 0) -> dict:
    """Individual event probabilities in windows (s, s+t].

    history: one subject's rows (times, markers, covariates).  For each
    landmark s, observations with t <= s feed the longitudinal density; the
    result combines class probabilities, the class survival at s and the
    class incidence over the window.  Without any observation before s the
    weights reduce to the covariate-only membership probabilities.
    """
    _require_joint(fit)
    structure, lay = fit.structure, fit.layout
    landmarks = np.atleast_1d(np.asarray(landmarks, dtype=float))
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    P, G = lay.survival.n_causes, lay.ng
    if not (1 <= cause <= P):
        raise SpecError(f"cause {cause} outside 1..{P}")
    _check_hazard_support(fit, float(landmarks.max() + horizons.max()))

    def compute(theta):
        blocks = lay.unpack(theta)
        out = np.empty((landmarks.size, horizons.size))
        for a, s in enumerate(landmarks):
            subj, cols = _history_subject(fit, history, float(s))
            first = {name: arr[:1] for name, arr in cols.items()}
            w, risk = _survival_pieces(fit, blocks, first)
            prior = class_membership_probs(blocks.xi, subj.xc.reshape(1, -1))[0]
            logw = np.log(prior)
            for g in range(G):
                if subj.n_obs:
                    logw[g] += subject_gaussian_loglik(structure, subj, blocks, g)
            logw -= logw.max()
            wgt = np.exp(logw)
            S_s = np.array([np.exp(-_cum_all(fit, w, risk, g, float(s))[0])
                            for g in range(G)])
            denom = float(wgt @ S_s)
            for b, t in enumerate(horizons):
                inc = np.array([_window_incidence(fit, w, risk, g, cause,
                                                  float(s), float(s + t))
                                for g in range(G)])
                out[a, b] = float(wgt @ inc) / denom
        return out

    point = compute(fit.theta)
    out = {"landmarks": landmarks, "horizons": horizons, "probability": point}
    if draws > 0:
        root = _psd_root(_require_vcov(fit))
        stack = np.empty((draws,) + point.shape)
        for d in range(draws):
            rng = np.random.Generator(np.random.Philox(key=[seed, d]))
            theta_d = fit.theta + root @ rng.standard_normal(fit.n_free)
            try:
                stack[d] = compute(theta_d)
            except Exception:
                stack[d] = point
        out["bands"] = {name: np.percentile(stack, qq, axis=0)
                        for name, qq in zip(("lower", "median", "upper"),
                                            _BAND_QUANTILES)}
    return out
