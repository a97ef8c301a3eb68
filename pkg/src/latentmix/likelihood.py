"""Observed-data log-likelihood.

Per-subject contribution: a mixture over latent classes of Gaussian densities
of the (possibly link-transformed) marker vector, times cause-specific
survival factors in joint models, divided by the class-averaged survival at
entry under delayed entry.  Ordinal markers replace the Gaussian density by a
product of probit interval probabilities integrated over the random effects
with Gauss-Hermite quadrature.

Two routes compute the same quantities: readable per-subject functions (used
by tests and by the ordinal path) and a vectorized evaluator that batches the
covariance factorizations across subjects sharing a design pattern (used by
the fitting loop).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import links as lk
from .errors import EvaluationFailure, SpecError
from .layout import Blocks, class_membership_logits
from .numerics import LOG_2PI, CholeskyFactor, gauss_hermite, norm_cdf

# ---------------------------------------------------------------------------
# covariance pieces


def process_cov(times: np.ndarray, kind: str, sd: float, rho: float | None) -> np.ndarray:
    """Covariance of the zero-mean residual process at the stacked times."""
    t = np.asarray(times, dtype=float)
    if kind == "BM":
        return sd * sd * np.minimum.outer(t, t)
    if kind == "AR":
        return sd * sd * np.exp(-(rho * rho) * np.abs(np.subtract.outer(t, t)))
    raise SpecError(f"unknown process kind {kind!r}")


def noise_cov(marker_index: np.ndarray, alpha_sd: np.ndarray, resid_sd: np.ndarray) -> np.ndarray:
    """Marker intercept + measurement error covariance (block by marker)."""
    mk = np.asarray(marker_index)
    same = mk[:, None] == mk[None, :]
    out = same * (alpha_sd[mk, None] * alpha_sd[None, mk])
    out[np.diag_indices_from(out)] += resid_sd[mk] ** 2
    return out


def _class_cov(structure, subj, blocks: Blocks, g: int) -> np.ndarray:
    om2 = blocks.omega[g] ** 2
    B = blocks.re_cov
    V = om2 * (subj.Z @ B @ subj.Z.T)
    if structure.spec.cor is not None:
        V = V + process_cov(subj.times, structure.spec.cor.kind,
                            blocks.proc_sd, blocks.proc_rho)
    V = V + noise_cov(subj.marker_index, blocks.alpha_sd, blocks.resid_sd)
    return V


def _class_mean(subj, blocks: Blocks, g: int) -> np.ndarray:
    mu = subj.X1 @ blocks.beta
    if subj.X2.shape[1]:
        mu = mu + subj.X2 @ blocks.upsilon[g]
    if subj.XY.shape[1]:
        mu = mu + np.einsum("ij,ij->i", subj.XY, blocks.gamma[subj.marker_index])
    return mu


def transform_subject(structure, subj, blocks: Blocks):
    """Latent-scale outcomes and per-observation log-Jacobians."""
    ystar = np.empty(subj.n_obs)
    logjac = np.zeros(subj.n_obs)
    for k, fam in enumerate(structure.link_families):
        m = subj.marker_index == k
        if not np.any(m):
            continue
        vals, lj = lk.inverse_transform(fam, subj.y[m], blocks.eta[k])
        ystar[m] = vals
        logjac[m] = lj
    return ystar, logjac


def marginal_moments(structure, subj, blocks: Blocks, g: int):
    """Mean and covariance of the latent-scale observation vector in class g."""
    return _class_mean(subj, blocks, g), _class_cov(structure, subj, blocks, g)


def subject_gaussian_loglik(structure, subj, blocks: Blocks, g: int) -> float:
    """Class-g Gaussian log-density of the transformed outcomes (no Jacobian)."""
    ystar, _ = transform_subject(structure, subj, blocks)
    mu, V = marginal_moments(structure, subj, blocks, g)
    fac = CholeskyFactor.from_cov(V)
    quad = float(fac.quad_forms((ystar - mu).reshape(-1, 1))[0])
    return -0.5 * (subj.n_obs * LOG_2PI + fac.logdet + quad)


# ---------------------------------------------------------------------------
# ordinal (threshold link) contribution


def _tensor_gh(n_nodes: int, ndim: int):
    rule = gauss_hermite(n_nodes)
    if ndim == 0:
        return np.zeros((0, 1)), np.ones(1)
    grids = np.meshgrid(*([rule.nodes] * ndim), indexing="ij")
    nodes = np.stack([gr.ravel() for gr in grids])            # (ndim, m^ndim)
    w = np.ones(nodes.shape[1])
    for wg in np.meshgrid(*([rule.weights] * ndim), indexing="ij"):
        w *= wg.ravel()
    return nodes, w


def _ordinal_bounds(fam: lk.LinkFamily, y: np.ndarray, eta: np.ndarray):
    cuts = lk.expand_thresholds(eta)
    idx = np.round(y - fam.level_offset).astype(int)
    if np.any(idx < 0) or np.any(idx > fam.n_levels - 1):
        raise EvaluationFailure("ordinal level outside the declared range")
    padded = np.concatenate([[-np.inf], cuts, [np.inf]])
    return padded[idx], padded[idx + 1]


def subject_ordinal_loglik(structure, subj, blocks: Blocks, g: int,
                           gh_nodes: np.ndarray, gh_weights: np.ndarray) -> float:
    """Class-g likelihood for one ordinal marker, integrating out the REs."""
    fam = structure.link_families[0]
    lower, upper = _ordinal_bounds(fam, subj.y, blocks.eta[0])
    mu = _class_mean(subj, blocks, g)
    q = subj.Z.shape[1]
    if q == 0:
        probs = norm_cdf(upper - mu) - norm_cdf(lower - mu)
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(probs)))
    # u = omega_g U' a with a ~ N(0, I): latent values at each node
    scale = blocks.omega[g] * blocks.chol_u.T
    u_nodes = scale @ gh_nodes[:q]                      # (q, m)
    lam = mu[:, None] + subj.Z @ u_nodes                # (n_obs, m)
    cell = norm_cdf(upper[:, None] - lam) - norm_cdf(lower[:, None] - lam)
    integrand = np.prod(cell, axis=0)
    val = float(np.dot(gh_weights, integrand))
    if val <= 0.0:
        return -np.inf
    return float(np.log(val))


# ---------------------------------------------------------------------------
# survival contribution


def _cause_terms(structure, blocks: Blocks, g: int, p: int, t, entry=None):
    """Baseline hazard/cumulative at t for class g, cause p (1-based)."""
    base = structure.baselines[p - 1]
    w = base.transform(blocks.hazard_raw[p - 1][g])
    shift = blocks.hazard_shift[p - 1][g]
    lam0 = base.hazard(t, w) * np.exp(shift)
    acc0 = base.cumulative(t, w) * np.exp(shift)
    return lam0, acc0


def subject_survival_logfactor(structure, subj, blocks: Blocks, g: int) -> float:
    """log of the class-g survival factor e^{-sum_p A_p(T)} prod_p lambda_p^{1{E=p}}."""
    sv = subj.survival
    total = 0.0
    for p in range(1, structure.layout.survival.n_causes + 1):
        lam0, acc0 = _cause_terms(structure, blocks, g, p, sv.time)
        lin = 0.0
        if sv.xs1[p - 1].size:
            lin += float(sv.xs1[p - 1] @ blocks.nu[p - 1])
        if sv.xs2[p - 1].size:
            lin += float(sv.xs2[p - 1] @ blocks.delta[p - 1][g])
        total -= float(acc0) * np.exp(lin)
        if sv.event == p:
            lam = float(lam0) * np.exp(lin)
            if not lam > 0.0:
                return -np.inf
            total += np.log(lam)
    return total


def subject_entry_logsurvival(structure, subj, blocks: Blocks, g: int) -> float:
    """log S(T0 | class g), the delayed-entry correction numerator."""
    sv = subj.survival
    if sv.entry <= 0.0:
        return 0.0
    total = 0.0
    for p in range(1, structure.layout.survival.n_causes + 1):
        _, acc0 = _cause_terms(structure, blocks, g, p, sv.entry)
        lin = 0.0
        if sv.xs1[p - 1].size:
            lin += float(sv.xs1[p - 1] @ blocks.nu[p - 1])
        if sv.xs2[p - 1].size:
            lin += float(sv.xs2[p - 1] @ blocks.delta[p - 1][g])
        total -= float(acc0) * np.exp(lin)
    return total


# ---------------------------------------------------------------------------
# reference per-subject assembly (single implementation of the formulas)


def subject_loglik(structure, subj, blocks: Blocks, gh=None) -> float:
    """Full mixture contribution of one subject (reference route)."""
    G = structure.layout.ng
    logits = class_membership_logits(blocks.xi, subj.xc.reshape(1, -1))[0]
    log_prior = logits - logsumexp(logits)
    terms = np.empty(G)
    jac = 0.0
    if structure.ordinal:
        if gh is None:
            gh = _tensor_gh(30, structure.layout.q)
        for g in range(G):
            terms[g] = subject_ordinal_loglik(structure, subj, blocks, g, *gh)
    else:
        _, logjac = transform_subject(structure, subj, blocks)
        jac = float(np.sum(logjac))
        for g in range(G):
            terms[g] = subject_gaussian_loglik(structure, subj, blocks, g)
    if subj.survival is not None:
        for g in range(G):
            terms[g] += subject_survival_logfactor(structure, subj, blocks, g)
    out = float(logsumexp(log_prior + terms)) + jac
    if subj.survival is not None and subj.survival.entry > 0.0:
        trunc = np.array([subject_entry_logsurvival(structure, subj, blocks, g)
                          for g in range(G)])
        out -= float(logsumexp(log_prior + trunc))
    return out


# ---------------------------------------------------------------------------
# vectorized evaluator


@dataclass
class Components:
    """Per-subject, per-class pieces of the likelihood at a parameter value."""

    log_prior: np.ndarray      # (N, G)
    longitudinal: np.ndarray   # (N, G) log densities, Jacobian excluded
    jacobian: np.ndarray       # (N,) summed log-Jacobians
    survival: np.ndarray       # (N, G) log survival factors
    entry: np.ndarray          # (N, G) log S(T0 | g)
    subject_loglik: np.ndarray  # (N,)
    total: float


class Evaluator:
    """Vectorized total log-likelihood for a validated model.

    total_loglik returns -inf when the parameter value is not evaluable
    (non-PD covariance, degenerate link); the optimizer treats that as a
    rejected step.  `threads` splits work across covariance-pattern groups;
    results are assembled in a fixed order so any thread count yields
    bit-identical values.
    """

    def __init__(self, vm, threads: int = 1, gh_points: int = 30,
                 max_re_ordinal: int = 3, allow_large_ordinal: bool = False):
        self.vm = vm
        self.structure = vm.structure
        self.layout = vm.structure.layout
        self.threads = max(1, int(threads))
        self.subjects = vm.subjects
        self.N = len(vm.subjects)
        self.G = self.layout.ng
        if self.structure.ordinal:
            q = self.layout.q
            if q > max_re_ordinal and not allow_large_ordinal:
                raise SpecError(
                    f"ordinal quadrature over {q} random effects exceeds the "
                    f"default cap ({max_re_ordinal}); pass allow_large_ordinal=True "
                    "to override")
            self._gh = _tensor_gh(gh_points, q)
        else:
            self._gh = None

        # stacked design
        self._slices = []
        start = 0
        for s in self.subjects:
            self._slices.append(slice(start, start + s.n_obs))
            start += s.n_obs
        self.n_total = start

        def stack(pieces, width):
            # np.vstack chokes on an empty list (no subjects -> empty model)
            pieces = list(pieces)
            return np.vstack(pieces) if pieces else np.zeros((0, width))

        self.X1 = stack((s.X1 for s in self.subjects), len(self.layout.common_terms))
        self.X2 = stack((s.X2 for s in self.subjects), len(self.layout.mixture_terms))
        self.XY = stack((s.XY for s in self.subjects), len(self.layout.contrast_terms))
        self.y_all = np.concatenate([s.y for s in self.subjects] or [np.zeros(0)])
        self.marker_all = np.concatenate(
            [s.marker_index for s in self.subjects] or [np.zeros(0, dtype=int)])
        self.XC = stack((s.xc for s in self.subjects), self.layout.n_classmb)

        # pattern groups: subjects with identical (times, Z, marker) share V
        self.groups = []
        for idx in vm.pattern_groups:
            rows = np.vstack([np.arange(self._slices[i].start, self._slices[i].stop)
                              for i in idx])
            proto = self.subjects[idx[0]]
            self.groups.append((idx, rows, proto))

        self.has_survival = self.structure.baselines is not None
        if self.has_survival:
            self.T = np.array([s.survival.time for s in self.subjects])
            self.T0 = np.array([s.survival.entry for s in self.subjects])
            self.E = np.array([s.survival.event for s in self.subjects])
            self.any_entry = bool(np.any(self.T0 > 0.0))
            P = self.layout.survival.n_causes
            self.XS1 = [stack((s.survival.xs1[p].reshape(1, -1) if s.survival.xs1[p].size
                               else np.zeros((1, 0)) for s in self.subjects), 0)
                        for p in range(P)]
            self.XS2 = [stack((s.survival.xs2[p].reshape(1, -1) if s.survival.xs2[p].size
                               else np.zeros((1, 0)) for s in self.subjects), 0)
                        for p in range(P)]

    # -- pieces --------------------------------------------------------------

    def _log_prior(self, blocks: Blocks) -> np.ndarray:
        logits = class_membership_logits(blocks.xi, self.XC)
        return logits - logsumexp(logits, axis=1, keepdims=True)

    def _transform_all(self, blocks: Blocks):
        ystar = np.empty(self.n_total)
        logjac = np.zeros(self.n_total)
        for k, fam in enumerate(self.structure.link_families):
            m = self.marker_all == k
            if not np.any(m):
                continue
            vals, lj = lk.inverse_transform(fam, self.y_all[m], blocks.eta[k])
            ystar[m] = vals
            logjac[m] = lj
        jac_per_subject = np.array([np.sum(logjac[sl]) for sl in self._slices])
        return ystar, jac_per_subject

    def _mean_all(self, blocks: Blocks, g: int) -> np.ndarray:
        mu = self.X1 @ blocks.beta
        if self.X2.shape[1]:
            mu = mu + self.X2 @ blocks.upsilon[g]
        if self.XY.shape[1]:
            mu = mu + np.einsum("ij,ij->i", self.XY, blocks.gamma[self.marker_all])
        return mu

    def _gaussian_block(self, blocks: Blocks, ystar, means, long_out):
        """Fill long_out (N, G) with Gaussian log-densities, grouped by pattern."""
        spec = self.structure.spec

        def work(group):
            idx, rows, proto = group
            n = proto.n_obs
            base = np.zeros((n, n))
            if spec.cor is not None:
                base += process_cov(proto.times, spec.cor.kind,
                                    blocks.proc_sd, blocks.proc_rho)
            base += noise_cov(proto.marker_index, blocks.alpha_sd, blocks.resid_sd)
            ZB = proto.Z @ blocks.re_cov @ proto.Z.T
            for g in range(self.G):
                V = blocks.omega[g] ** 2 * ZB + base
                fac = CholeskyFactor.from_cov(V)
                resid = (ystar[rows] - means[g][rows]).T   # (n, m)
                quad = fac.quad_forms(resid)
                long_out[idx, g] = -0.5 * (n * LOG_2PI + fac.logdet + quad)

        self._run(work, self.groups)

    def _ordinal_block(self, blocks: Blocks, long_out):
        def work(i):
            subj = self.subjects[i]
            for g in range(self.G):
                long_out[i, g] = subject_ordinal_loglik(
                    self.structure, subj, blocks, g, *self._gh)

        self._run(work, range(self.N))

    def _survival_block(self, blocks: Blocks):
        P = self.layout.survival.n_causes
        surv = np.zeros((self.N, self.G))
        entry = np.zeros((self.N, self.G))
        for p in range(1, P + 1):
            base = self.structure.baselines[p - 1]
            lin = np.zeros(self.N)
            if self.XS1[p - 1].shape[1]:
                lin += self.XS1[p - 1] @ blocks.nu[p - 1]
            is_event = self.E == p
            for g in range(self.G):
                w = base.transform(blocks.hazard_raw[p - 1][g])
                shift = blocks.hazard_shift[p - 1][g]
                lin_g = lin.copy()
                if self.XS2[p - 1].shape[1]:
                    lin_g = lin_g + self.XS2[p - 1] @ blocks.delta[p - 1][g]
                risk = np.exp(shift + lin_g)
                surv[:, g] -= base.cumulative(self.T, w) * risk
                if np.any(is_event):
                    lam = base.hazard(self.T[is_event], w) * risk[is_event]
                    with np.errstate(divide="ignore"):
                        surv[is_event, g] += np.log(lam)
                if self.any_entry:
                    entry[:, g] -= base.cumulative(self.T0, w) * risk
        return surv, entry

    def _run(self, work, items):
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            for it in items:
                work(it)
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                list(pool.map(work, items))

    # -- public --------------------------------------------------------------

    def components(self, theta: np.ndarray) -> Components:
        blocks = self.layout.unpack(theta)
        log_prior = self._log_prior(blocks)
        long = np.empty((self.N, self.G))
        jac = np.zeros(self.N)
        if self.structure.ordinal:
            self._ordinal_block(blocks, long)
        else:
            ystar, jac = self._transform_all(blocks)
            means = [self._mean_all(blocks, g) for g in range(self.G)]
            self._gaussian_block(blocks, ystar, means, long)
        surv = np.zeros((self.N, self.G))
        entry = np.zeros((self.N, self.G))
        if self.has_survival:
            surv, entry = self._survival_block(blocks)
        per_subject = logsumexp(log_prior + long + surv, axis=1) + jac
        if self.has_survival and self.any_entry:
            per_subject = per_subject - logsumexp(log_prior + entry, axis=1)
        total = float(np.sum(per_subject))
        return Components(log_prior=log_prior, longitudinal=long, jacobian=jac,
                          survival=surv, entry=entry, subject_loglik=per_subject,
                          total=total)

    def total_loglik(self, theta: np.ndarray) -> float:
        """Total log-likelihood; -inf when not evaluable at theta."""
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore",
                             under="ignore"):
                total = self.components(theta).total
        except EvaluationFailure:
            return -np.inf
        if not np.isfinite(total):
            return -np.inf
        return total
