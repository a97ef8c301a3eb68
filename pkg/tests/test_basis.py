"""Knot placement and M/I-spline bases.

Integral identities are checked against scipy's adaptive quadrature, which
shares no code with the partial-sum construction under test.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from latentmix.basis import ispline_basis, mspline_basis, n_basis, place_knots
from latentmix.errors import SpecError


def test_equidistant_knots():
    assert np.array_equal(place_knots(5, "equi", 0.0, 10.0), [0.0, 2.5, 5.0, 7.5, 10.0])


def test_quantile_knots_type7():
    rng = np.random.default_rng(42)
    sample = rng.gamma(2.0, 3.0, size=200)
    lo, hi = 0.0, float(sample.max() + 1)
    knots = place_knots(5, "quant", lo, hi, sample=sample)
    want = np.quantile(sample, [0.25, 0.5, 0.75])
    assert knots[0] == lo and knots[-1] == hi
    assert np.allclose(knots[1:4], want, atol=0)


def test_manual_knots_kept_verbatim():
    knots = place_knots(0, "manual", 0.0, 52.0, manual=(2.0, 6.0, 12.0))
    assert np.array_equal(knots, [0.0, 2.0, 6.0, 12.0, 52.0])


def test_manual_knots_outside_range_rejected():
    with pytest.raises(SpecError):
        place_knots(0, "manual", 0.0, 10.0, manual=(12.0,))


def test_duplicate_quantiles_rejected():
    sample = np.repeat(5.0, 50)
    with pytest.raises(SpecError):
        place_knots(6, "quant", 0.0, 10.0, sample=sample)


def test_unknown_mode_rejected():
    with pytest.raises(SpecError):
        place_knots(5, "ekwi", 0.0, 1.0)


def test_basis_count():
    knots = np.array([0.0, 1.0, 2.0, 3.0])
    assert n_basis(knots, 3) == 5
    assert n_basis(knots, 4) == 6
    assert mspline_basis([0.5], knots, 3).shape[0] == 5
    assert ispline_basis([0.5], knots, 3).shape[0] == 5


# ------------------------------------------------------------- M-splines


def _random_knots(rng, n_interior):
    interior = np.sort(rng.uniform(0.5, 9.5, size=n_interior))
    while np.any(np.diff(interior) < 0.2):
        interior = np.sort(rng.uniform(0.5, 9.5, size=n_interior))
    return np.concatenate([[0.0], interior, [10.0]])


def _integrate_mspline(j, knots, order, upper):
    """Adaptive quadrature of M_j from knots[0] to upper, split at the knots
    so each piece is a smooth polynomial."""
    cuts = np.concatenate([knots[knots < upper], [upper]])
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        piece, _ = quad(lambda x: mspline_basis([x], knots, order)[j, 0], a, b)
        total += piece
    return total


@pytest.mark.parametrize("order", [2, 3, 4])
def test_mspline_unit_integrals(order):
    rng = np.random.default_rng(order)
    knots = _random_knots(rng, 3)
    nb = n_basis(knots, order)
    for j in range(nb):
        assert abs(_integrate_mspline(j, knots, order, knots[-1]) - 1.0) < 1e-10


@pytest.mark.parametrize("order", [2, 3, 4])
def test_mspline_nonnegative_and_local(order):
    knots = np.array([0.0, 1.0, 3.0, 7.0, 10.0])
    x = np.linspace(-1.0, 11.0, 500)
    m = mspline_basis(x, knots, order)
    assert np.all(m >= 0.0)
    assert np.all(m[:, x < 0.0] == 0.0)
    assert np.all(m[:, x > 10.0] == 0.0)


def test_mspline_partition_property():
    # sum_j M_j(x) * span_j / order == sum of B-splines == 1 inside the range
    order = 4
    knots = np.array([0.0, 2.0, 5.0, 10.0])
    tk = np.concatenate([np.repeat(0.0, order - 1), knots, np.repeat(10.0, order - 1)])
    nb = n_basis(knots, order)
    spans = tk[order : order + nb] - tk[:nb]
    x = np.linspace(0.0, 10.0, 101)
    m = mspline_basis(x, knots, order)
    assert np.allclose((m * (spans / order)[:, None]).sum(axis=0), 1.0, atol=1e-12)


# ------------------------------------------------------------- I-splines


@pytest.mark.parametrize("order", [2, 3, 4])
def test_ispline_boundary_values(order):
    knots = np.array([0.0, 1.0, 4.0, 9.0, 10.0])
    lo = ispline_basis([knots[0]], knots, order)
    hi = ispline_basis([knots[-1]], knots, order)
    assert np.allclose(lo, 0.0, atol=1e-14)
    assert np.allclose(hi, 1.0, atol=1e-14)


def test_ispline_clamps_outside_range():
    knots = np.array([0.0, 5.0, 10.0])
    vals = ispline_basis([-3.0, 12.0], knots, 3)
    assert np.all(vals[:, 0] == 0.0)
    assert np.all(vals[:, 1] == 1.0)


@pytest.mark.parametrize("order", [2, 3, 4])
def test_ispline_matches_adaptive_quadrature(order):
    rng = np.random.default_rng(100 + order)
    knots = _random_knots(rng, 2)
    xs = rng.uniform(knots[0], knots[-1], size=6)
    got = ispline_basis(xs, knots, order)
    for j in range(n_basis(knots, order)):
        for c, x in enumerate(xs):
            assert abs(got[j, c] - _integrate_mspline(j, knots, order, x)) < 1e-8


def test_ispline_derivative_is_mspline():
    order = 3
    knots = np.array([0.0, 2.0, 6.0, 10.0])
    x = np.linspace(0.3, 9.7, 40)
    h = 1e-6
    fd = (ispline_basis(x + h, knots, order) - ispline_basis(x - h, knots, order)) / (2 * h)
    assert np.max(np.abs(fd - mspline_basis(x, knots, order))) < 1e-5


@settings(max_examples=60, deadline=None)
@given(
    a=st.floats(min_value=0.0, max_value=10.0),
    b=st.floats(min_value=0.0, max_value=10.0),
    seed=st.integers(min_value=0, max_value=10),
)
def test_ispline_monotone_in_x(a, b, seed):
    lo, hi = min(a, b), max(a, b)
    rng = np.random.default_rng(seed)
    knots = _random_knots(rng, 2)
    vals = ispline_basis([lo, hi], knots, 3)
    assert np.all(vals[:, 1] - vals[:, 0] >= -1e-12)


def test_nonneg_combination_is_nondecreasing():
    # any combination with nonnegative weights inherits monotonicity
    rng = np.random.default_rng(9)
    knots = _random_knots(rng, 3)
    coefs = rng.uniform(0.0, 2.0, size=n_basis(knots, 3)) ** 2
    pairs = rng.uniform(0.0, 10.0, size=(1000, 2))
    pairs.sort(axis=1)
    f_lo = coefs @ ispline_basis(pairs[:, 0], knots, 3)
    f_hi = coefs @ ispline_basis(pairs[:, 1], knots, 3)
    assert np.all(f_hi - f_lo >= -1e-12)


def test_bases_are_deterministic():
    knots = np.array([0.0, 1.0, 5.0, 10.0])
    x = np.linspace(0.0, 10.0, 37)
    assert np.array_equal(mspline_basis(x, knots, 4), mspline_basis(x, knots, 4))
    assert np.array_equal(ispline_basis(x, knots, 3), ispline_basis(x, knots, 3))
