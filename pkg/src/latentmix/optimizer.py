"""Marquardt-Levenberg maximization with finite-difference derivatives.

Update: theta <- theta + delta * Htilde^{-1} grad, where Htilde is the
negative Hessian of the objective, diagonal-inflated until positive definite:

    Htilde_ii = H_ii + lam * ((1 - eta) |H_ii| + eta * max(tr(H), 0))

lam and eta start at 0.01, shrink (x0.1) whenever a positive-definite matrix
is obtained and grow (x10) when inflation fails; lam lives in [1e-12, 1e12],
eta additionally stays below 1 so the inflation cannot change sign.  delta is
found by halving from 1 until the objective strictly improves (at most 30
halvings, reset every iteration).

Convergence requires three simultaneous criteria: squared parameter change,
objective change, and the normalized gradient quadratic form
g' H^{-1} g / n_free (raw negative Hessian when PD at the test point, else the
inflated one).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationFailure, OptimizationError
from .numerics import fd_gradient, fd_hessian

_LAM_MIN, _LAM_MAX = 1e-12, 1e12
_ETA_MIN, _ETA_MAX = 1e-12, 0.99


@dataclass
class MarquardtSettings:
    maxiter: int = 500
    conv_param: float = 1e-4
    conv_loglik: float = 1e-4
    conv_deriv: float = 1e-4
    max_halvings: int = 30


@dataclass
class OptResult:
    theta: np.ndarray
    loglik: float
    n_iter: int
    converged: bool
    crit_param: float
    crit_loglik: float
    crit_deriv: float
    deriv_used_raw_hessian: bool = True
    status: str = ""
    n_eval: int = 0
    history: list = field(default_factory=list)


def _is_pd(mat: np.ndarray):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return None


def inflate_hessian(hneg: np.ndarray, lam: float, eta: float) -> np.ndarray:
    """One diagonal inflation pass at (lam, eta).

    The trace term is floored at zero: with a negative trace the blend could
    otherwise shrink the diagonal and the escalation would never reach a
    positive-definite matrix.
    """
    out = hneg.copy()
    diag = np.abs(np.diag(hneg))
    tr = max(float(np.trace(hneg)), 0.0)
    out[np.diag_indices_from(out)] += lam * ((1.0 - eta) * diag + eta * tr)
    return out


def make_positive_definite(hneg: np.ndarray, lam: float, eta: float):
    """Inflate until PD; returns (factor, matrix, lam, eta, inflated?).

    Raises OptimizationError when the cap is reached without success.
    """
    chol = _is_pd(hneg)
    if chol is not None:
        lam = max(lam / 10.0, _LAM_MIN)
        eta = max(eta / 10.0, _ETA_MIN)
        return chol, hneg, lam, eta, False
    while True:
        cand = inflate_hessian(hneg, lam, eta)
        chol = _is_pd(cand)
        if chol is not None:
            return chol, cand, max(lam / 10.0, _LAM_MIN), max(eta / 10.0, _ETA_MIN), True
        if lam >= _LAM_MAX:
            raise OptimizationError("could not make the Hessian positive definite")
        lam = min(lam * 10.0, _LAM_MAX)
        eta = min(eta * 10.0, _ETA_MAX)


def _chol_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import cho_solve
    return cho_solve((chol, True), b, check_finite=False)


def marquardt_maximize(f, theta0, mask=None, settings: MarquardtSettings | None = None,
                       callback=None) -> OptResult:
    """Maximize f from theta0; components with mask == False stay fixed."""
    st = settings or MarquardtSettings()
    theta = np.asarray(theta0, dtype=float).copy()
    n = theta.size
    if mask is None:
        mask = np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    act = np.flatnonzero(mask)

    n_eval = 0

    def fv(x):
        nonlocal n_eval
        n_eval += 1
        return f(x)

    f_cur = fv(theta)
    if not np.isfinite(f_cur):
        raise OptimizationError("objective not evaluable at the starting point")

    if act.size == 0:
        return OptResult(theta=theta, loglik=f_cur, n_iter=0, converged=True,
                         crit_param=0.0, crit_loglik=0.0, crit_deriv=0.0,
                         status="no free parameters", n_eval=n_eval)

    lam, eta = 0.01, 0.01
    crit_param = np.inf
    crit_loglik = np.inf
    crit_deriv = np.inf
    used_raw = True
    n_iter = 0
    status = "maximum iterations reached"
    converged = False
    history = []

    for it in range(1, st.maxiter + 1):
        try:
            grad = fd_gradient(fv, theta, mask)
            hneg = -fd_hessian(fv, theta, mask, f0=f_cur)
        except EvaluationFailure as exc:
            raise OptimizationError(f"derivatives failed at iteration {it}: {exc}") from exc
        g = grad[act]
        hn = hneg[np.ix_(act, act)]

        raw_chol = _is_pd(hn)
        if raw_chol is not None:
            crit_deriv = float(g @ _chol_solve(raw_chol, g)) / act.size
            used_raw = True
        chol, hpd, lam, eta, inflated = make_positive_definite(hn, lam, eta)
        if raw_chol is None:
            crit_deriv = float(g @ _chol_solve(chol, g)) / act.size
            used_raw = False

        if (it > 1 and crit_param <= st.conv_param
                and crit_loglik <= st.conv_loglik and crit_deriv <= st.conv_deriv):
            converged = True
            status = "convergence criteria satisfied"
            break

        direction = _chol_solve(chol, g)
        delta = 1.0
        improved = False
        for _ in range(st.max_halvings + 1):
            cand = theta.copy()
            cand[act] += delta * direction
            f_cand = fv(cand)
            if np.isfinite(f_cand) and f_cand > f_cur:
                improved = True
                break
            delta *= 0.5
        n_iter = it
        if not improved:
            status = "step halving stalled without improvement"
            converged = (crit_param <= st.conv_param
                         and crit_loglik <= st.conv_loglik
                         and crit_deriv <= st.conv_deriv)
            if converged:
                status = "convergence criteria satisfied"
            break

        crit_param = float(np.sum((delta * direction) ** 2))
        crit_loglik = abs(f_cand - f_cur)
        theta = cand
        f_cur = f_cand
        history.append(f_cur)
        if callback is not None:
            callback(it, theta, f_cur)

    return OptResult(theta=theta, loglik=f_cur, n_iter=n_iter, converged=converged,
                     crit_param=float(crit_param), crit_loglik=float(crit_loglik),
                     crit_deriv=float(crit_deriv), deriv_used_raw_hessian=used_raw,
                     status=status, n_eval=n_eval, history=history)


def mle_covariance(f, theta_hat, mask=None):
    """Asymptotic covariance: inverse of the negative Hessian at the optimum.

    Returns (vcov, warnings).  vcov is None when the Hessian is singular;
    masked rows/columns are zero.  A non-PD Hessian falls back to a general
    inverse with a degeneracy warning (negative diagonal entries possible).
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    n = theta_hat.size
    if mask is None:
        mask = np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    act = np.flatnonzero(mask)
    warnings = []
    if act.size == 0:
        return np.zeros((n, n)), warnings
    hneg = -fd_hessian(f, theta_hat, mask)
    hn = hneg[np.ix_(act, act)]
    chol = _is_pd(hn)
    if chol is not None:
        inv = _chol_solve(chol, np.eye(act.size))
    else:
        warnings.append("Hessian not positive definite at the optimum")
        try:
            inv = np.linalg.inv(hn)
        except np.linalg.LinAlgError:
            warnings.append("Hessian singular; covariance unavailable")
            return None, warnings
        if np.any(np.diag(inv) < 0):
            warnings.append("negative variance estimates; model near a boundary")
    vcov = np.zeros((n, n))
    vcov[np.ix_(act, act)] = 0.5 * (inv + inv.T)
    return vcov, warnings
