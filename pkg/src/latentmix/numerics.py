"""Shared numerical kernels.

Multivariate normal log-densities through Cholesky factorization, Gauss-Hermite
and Gauss-Legendre quadrature rules, and the finite-difference derivatives used
by the fitting loop.  Everything downstream (likelihoods, optimizer, post-fit
integrals) is built on these few primitives so their contracts are tested hard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import special as sp

from .errors import EvaluationFailure

LOG_2PI = float(np.log(2.0 * np.pi))


def norm_cdf(x):
    """Standard normal CDF.

    Backed by an erfc evaluation with absolute error below 1e-15 over the
    whole real line.
    """
    return sp.ndtr(x)


def norm_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * (x * x + LOG_2PI)


def reg_inc_beta(a, b, x):
    """Regularized incomplete beta function I_x(a, b) (continued-fraction backed)."""
    return sp.betainc(a, b, x)


def log_beta_pdf(x, a, b):
    """log of the Beta(a, b) density at x in (0, 1)."""
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - sp.betaln(a, b)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with V = L L' and cached log det V."""

    lower: np.ndarray
    logdet: float

    @classmethod
    def from_cov(cls, cov: np.ndarray) -> "CholeskyFactor":
        try:
            lower = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise EvaluationFailure("covariance matrix not positive definite") from exc
        logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
        return cls(lower=lower, logdet=logdet)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """V^{-1} b."""
        return sla.cho_solve((self.lower, True), b, check_finite=False)

    def quad_forms(self, resid: np.ndarray) -> np.ndarray:
        """r' V^{-1} r for each column r of `resid` (shape (dim, m) -> (m,))."""
        half = sla.solve_triangular(self.lower, resid, lower=True, check_finite=False)
        return np.einsum("ij,ij->j", half, half)


def mvn_logdensity(y, mean, cov) -> float:
    """Log-density of N(mean, cov) at y.

    Raises
    ------
    EvaluationFailure
        If cov is not positive definite.  The caller decides whether that is
        a rejected optimizer step or a hard error.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mean = np.broadcast_to(np.asarray(mean, dtype=float), y.shape)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    fac = CholeskyFactor.from_cov(cov)
    resid = (y - mean).reshape(-1, 1)
    quad = float(fac.quad_forms(resid)[0])
    return -0.5 * (y.size * LOG_2PI + fac.logdet + quad)


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray


def gauss_hermite(n: int) -> QuadratureRule:
    """n-point rule with sum_i w_i f(x_i) ~ E[f(X)], X ~ N(0, 1).

    Nodes/weights come from the symmetric-tridiagonal (Jacobi matrix)
    eigendecomposition for the e^{-x^2/2} weight; the rule is exact for
    polynomials of degree <= 2n - 1 and the weights sum to 1.
    """
    if n < 1:
        raise ValueError("need at least one quadrature node")
    nodes, weights = np.polynomial.hermite_e.hermegauss(n)
    return QuadratureRule(nodes=nodes, weights=weights / np.sqrt(2.0 * np.pi))


def gauss_legendre(n: int, a: float, b: float) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [a, b] (degree of exactness 2n - 1)."""
    if n < 1:
        raise ValueError("need at least one quadrature node")
    if not b >= a:
        raise ValueError("interval endpoints out of order")
    nodes, weights = np.polynomial.legendre.leggauss(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return QuadratureRule(nodes=mid + half * nodes, weights=half * weights)


# Finite differences.  Step for component v is max(1e-7, 1e-4 |theta_v|); the
# gradient is central (probes at theta +/- h, divisor 2h), the Hessian uses
# forward steps and is symmetric by construction.
_FD_FLOOR = 1e-7
_FD_REL = 1e-4


def fd_steps(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.maximum(_FD_FLOOR, _FD_REL * np.abs(theta))


def _active(n: int, mask) -> np.ndarray:
    if mask is None:
        return np.arange(n)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError("mask length does not match parameter vector")
    return np.flatnonzero(mask)


def _checked(value: float, where: str) -> float:
    if not np.isfinite(value):
        raise EvaluationFailure(f"objective not finite at {where}")
    return float(value)


def fd_gradient(f, theta, mask=None) -> np.ndarray:
    """Central-difference gradient of f at theta.

    Components where `mask` is False are held fixed and reported as 0.
    """
    theta = np.asarray(theta, dtype=float)
    h = fd_steps(theta)
    grad = np.zeros(theta.size)
    for v in _active(theta.size, mask):
        up = theta.copy()
        up[v] += h[v]
        dn = theta.copy()
        dn[v] -= h[v]
        grad[v] = (_checked(f(up), "gradient probe") - _checked(f(dn), "gradient probe")) / (2.0 * h[v])
    return grad


def fd_hessian(f, theta, mask=None, f0=None) -> np.ndarray:
    """Forward-difference Hessian of f at theta (masked rows/columns are 0).

    H[u, v] = (f(th + h_u e_u + h_v e_v) - f(th + h_u e_u) - f(th + h_v e_v)
               + f(th)) / (h_u h_v)
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    h = fd_steps(theta)
    act = _active(n, mask)
    if f0 is None:
        f0 = f(theta)
    f0 = _checked(f0, "expansion point")
    f_one = {}
    for v in act:
        up = theta.copy()
        up[v] += h[v]
        f_one[v] = _checked(f(up), "Hessian probe")
    hess = np.zeros((n, n))
    for i, u in enumerate(act):
        for v in act[i:]:
            both = theta.copy()
            both[u] += h[u]
            both[v] += h[v]
            f_uv = _checked(f(both), "Hessian probe")
            val = (f_uv - f_one[u] - f_one[v] + f0) / (h[u] * h[v])
            hess[u, v] = val
            hess[v, u] = val
    return hess
