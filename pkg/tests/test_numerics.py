"""Numerical kernels: MVN log-density, quadrature rules, finite differences.

Reference values come from independent constructions inside this file
(cofactor-expansion determinants/inverses, double factorials, Richardson
extrapolation), not from the code under test.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentmix.errors import EvaluationFailure
from latentmix.numerics import (
    CholeskyFactor,
    fd_gradient,
    fd_hessian,
    gauss_hermite,
    gauss_legendre,
    mvn_logdensity,
    norm_cdf,
)


# ---------------------------------------------------------------- oracles


def det_cofactor(a):
    """Determinant by recursive cofactor expansion along the first row."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 0:
        return 1.0
    if n == 1:
        return a[0, 0]
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(a, 0, axis=0), j, axis=1)
        total += ((-1.0) ** j) * a[0, j] * det_cofactor(minor)
    return total


def inv_adjugate(a):
    """Matrix inverse through the classical adjugate formula."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    cof = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(a, i, axis=0), j, axis=1)
            cof[i, j] = ((-1.0) ** (i + j)) * det_cofactor(minor)
    return cof.T / det_cofactor(a)


def mvn_logpdf_oracle(y, mean, cov):
    d = len(y)
    r = np.asarray(y, dtype=float) - np.asarray(mean, dtype=float)
    quad = r @ inv_adjugate(cov) @ r
    return -0.5 * (d * np.log(2.0 * np.pi) + np.log(det_cofactor(cov)) + quad)


def double_factorial(n):
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + n * np.eye(n)


# ---------------------------------------------------- multivariate normal


def test_mvn_standard_univariate():
    assert mvn_logdensity(0.0, 0.0, [[1.0]]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)


def test_mvn_matches_cofactor_oracle_4d():
    rng = np.random.default_rng(7)
    for _ in range(25):
        cov = random_spd(rng, 4)
        mean = rng.normal(size=4)
        y = rng.normal(size=4)
        got = mvn_logdensity(y, mean, cov)
        want = mvn_logpdf_oracle(y, mean, cov)
        assert abs(got - want) < 1e-10


def test_mvn_matches_oracle_small_dims():
    rng = np.random.default_rng(11)
    for n in (1, 2, 3):
        for _ in range(10):
            cov = random_spd(rng, n)
            y = rng.normal(size=n)
            assert mvn_logdensity(y, np.zeros(n), cov) == pytest.approx(
                mvn_logpdf_oracle(y, np.zeros(n), cov), abs=1e-10
            )


def test_mvn_rejects_indefinite_covariance():
    with pytest.raises(EvaluationFailure):
        mvn_logdensity([0.0, 0.0], [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


def test_cholesky_factor_round_trip():
    rng = np.random.default_rng(3)
    for n in (2, 5, 17, 50):
        cov = random_spd(rng, n)
        fac = CholeskyFactor.from_cov(cov)
        assert np.max(np.abs(fac.lower @ fac.lower.T - cov)) < 1e-12 * n * np.max(np.abs(cov))
        assert fac.logdet == pytest.approx(np.linalg.slogdet(cov)[1], rel=1e-12)
        b = rng.normal(size=n)
        assert np.allclose(cov @ fac.solve(b), b, atol=1e-9)


def test_cholesky_quad_forms_columnwise():
    rng = np.random.default_rng(5)
    cov = random_spd(rng, 3)
    fac = CholeskyFactor.from_cov(cov)
    resid = rng.normal(size=(3, 4))
    vinv = inv_adjugate(cov)
    want = np.array([resid[:, j] @ vinv @ resid[:, j] for j in range(4)])
    assert np.allclose(fac.quad_forms(resid), want, atol=1e-10)


# ------------------------------------------------------------- quadrature


def test_gh_weights_sum_to_one():
    rule = gauss_hermite(30)
    assert abs(np.sum(rule.weights) - 1.0) < 1e-14


def test_gh_second_moment():
    rule = gauss_hermite(30)
    assert abs(np.sum(rule.weights * rule.nodes**2) - 1.0) < 1e-12


def test_gh_degree_58_moment():
    # E[X^58] = 57!! for X ~ N(0, 1); degree 58 < 2*30 - 1 so the 30-point
    # rule must reproduce it to roundoff relative accuracy.
    rule = gauss_hermite(30)
    got = np.sum(rule.weights * rule.nodes**58)
    want = float(double_factorial(57))
    assert abs(got - want) / want < 1e-8


def test_gh_odd_moments_vanish():
    rule = gauss_hermite(30)
    for k in (1, 3, 7, 21):
        assert abs(np.sum(rule.weights * rule.nodes**k)) < 1e-8 * double_factorial(k)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(min_value=1, max_value=20), k=st.integers(min_value=0, max_value=12))
def test_gh_exact_for_low_even_moments(n, k):
    if 2 * k > 2 * n - 1:
        return
    rule = gauss_hermite(n)
    want = float(double_factorial(2 * k - 1)) if k else 1.0
    assert np.sum(rule.weights * rule.nodes ** (2 * k)) == pytest.approx(want, rel=1e-9)


def test_gl_constant():
    rule = gauss_legendre(50, 0.0, 1.0)
    assert abs(np.sum(rule.weights) - 1.0) < 1e-13


def test_gl_cubic_on_0_2():
    rule = gauss_legendre(50, 0.0, 2.0)
    assert np.sum(rule.weights * rule.nodes**3) == pytest.approx(4.0, abs=1e-12)


def test_gl_degree_99_monomial():
    rule = gauss_legendre(50, 0.0, 1.0)
    assert abs(np.sum(rule.weights * rule.nodes**99) - 0.01) < 1e-10


def test_gl_nodes_inside_interval():
    rule = gauss_legendre(20, -3.0, 5.5)
    assert rule.nodes.min() > -3.0 and rule.nodes.max() < 5.5


@settings(max_examples=40, deadline=None)
@given(
    shift=st.floats(min_value=-50, max_value=50),
    width=st.floats(min_value=0.1, max_value=20),
    k=st.integers(min_value=0, max_value=8),
)
def test_gl_translation_consistency(shift, width, k):
    # integral of (x - shift)^k over [shift, shift + width] equals the
    # integral of x^k over [0, width]
    base = gauss_legendre(30, 0.0, width)
    moved = gauss_legendre(30, shift, shift + width)
    want = np.sum(base.weights * base.nodes**k)
    got = np.sum(moved.weights * (moved.nodes - shift) ** k)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


# ------------------------------------------------------ finite differences


def test_gradient_quadratic():
    f = lambda th: th[0] ** 2 + 2.0 * th[1] ** 2
    g = fd_gradient(f, np.array([1.0, 1.0]))
    assert np.allclose(g, [2.0, 4.0], atol=1e-6)


def test_gradient_linear_is_exact():
    c = np.array([3.0, -1.5, 0.25])
    g = fd_gradient(lambda th: c @ th, np.array([10.0, -2.0, 0.0]))
    assert np.allclose(g, c, atol=1e-9)


def test_gradient_respects_mask():
    f = lambda th: th[0] ** 2 + th[1] ** 2
    g = fd_gradient(f, np.array([1.0, 1.0]), mask=np.array([True, False]))
    assert g[1] == 0.0
    assert g[0] == pytest.approx(2.0, abs=1e-6)


def _mixture_toy(th):
    """Two-component Gaussian mixture log-likelihood over five points.

    Smooth, non-polynomial target for derivative checks.
    """
    data = np.array([-1.3, 0.2, 0.9, 2.4, 3.1])
    mu1, mu2, logit_w = th
    w = 1.0 / (1.0 + np.exp(-logit_w))
    d1 = np.exp(-0.5 * (data - mu1) ** 2) / np.sqrt(2 * np.pi)
    d2 = np.exp(-0.5 * (data - mu2) ** 2) / np.sqrt(2 * np.pi)
    return float(np.sum(np.log(w * d1 + (1 - w) * d2)))


def _richardson_gradient(f, theta, h0=1e-3):
    """Richardson-extrapolated central differences, one order beyond plain."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.size)
    for v in range(theta.size):
        def cd(h):
            up = theta.copy(); up[v] += h
            dn = theta.copy(); dn[v] -= h
            return (f(up) - f(dn)) / (2 * h)
        out[v] = (4 * cd(h0 / 2) - cd(h0)) / 3
    return out


def test_gradient_against_richardson_oracle():
    theta = np.array([0.1, 2.0, 0.3])
    got = fd_gradient(_mixture_toy, theta)
    want = _richardson_gradient(_mixture_toy, theta)
    assert np.max(np.abs(got - want)) < 1e-4 * max(1.0, np.max(np.abs(want)))


def test_hessian_quadratic():
    a = np.array([[2.0, 0.5, 0.0], [0.5, 3.0, -0.25], [0.0, -0.25, 1.0]])
    f = lambda th: -0.5 * th @ a @ th + th[0]
    h = fd_hessian(f, np.array([0.3, -0.2, 1.1]))
    assert np.max(np.abs(h + a)) < 1e-4


def test_hessian_separable_off_diagonal():
    f = lambda th: np.sin(th[0]) + np.exp(th[1]) + th[2] ** 4
    h = fd_hessian(f, np.array([0.5, 0.2, 1.3]))
    off = h - np.diag(np.diag(h))
    assert np.max(np.abs(off)) < 1e-6


def _central_hessian(f, theta, h=1e-4):
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    out = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            pp = theta.copy(); pp[u] += h; pp[v] += h
            pm = theta.copy(); pm[u] += h; pm[v] -= h
            mp = theta.copy(); mp[u] -= h; mp[v] += h
            mm = theta.copy(); mm[u] -= h; mm[v] -= h
            out[u, v] = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h)
    return out


def test_hessian_against_central_oracle():
    theta = np.array([0.1, 2.0, 0.3])
    got = fd_hessian(_mixture_toy, theta)
    want = _central_hessian(_mixture_toy, theta)
    scale = np.max(np.abs(want))
    assert np.max(np.abs(got - want)) < 1e-3 * scale


def test_hessian_masked_rows_and_symmetry():
    f = lambda th: th[0] ** 2 * th[1] + th[2] ** 2
    h = fd_hessian(f, np.array([1.0, 2.0, 3.0]), mask=np.array([True, True, False]))
    assert np.all(h[2, :] == 0.0) and np.all(h[:, 2] == 0.0)
    assert np.array_equal(h, h.T)


def test_hessian_raises_on_nan_probe():
    def f(th):
        return float("nan") if th[0] > 1.0 else -th[0] ** 2
    with pytest.raises(EvaluationFailure):
        fd_hessian(f, np.array([1.0]))


# ------------------------------------------------------------- normal CDF


def test_norm_cdf_halves():
    assert norm_cdf(0.0) == pytest.approx(0.5, abs=1e-16)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(min_value=-37, max_value=37))
def test_norm_cdf_symmetry(x):
    assert abs(norm_cdf(x) + norm_cdf(-x) - 1.0) < 1e-15


def test_norm_cdf_known_value():
    # P(X <= 1.96) from the classical table, high-accuracy value
    assert norm_cdf(1.96) == pytest.approx(0.9750021048517795, abs=1e-14)
