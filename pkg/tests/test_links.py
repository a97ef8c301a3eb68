"""Link families: parsing, parameter counts, transforms and Jacobians.

The Beta-CDF values are cross-checked by numerically integrating the Beta
density, and Jacobians by finite differences of the inverse transform.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from latentmix.errors import DataError, EvaluationFailure, SpecError
from latentmix.links import (
    LinkDescriptor,
    LinkFamily,
    beta_canonical,
    expand_thresholds,
    forward_transform,
    inverse_transform,
    parse_link_descriptor,
    resolve_link,
    transform_image,
)


# ----------------------------------------------------- descriptor parsing


def test_parse_default_is_identity():
    assert parse_link_descriptor(None).kind == "identity"


def test_parse_named_kinds():
    for name in ("identity", "linear", "beta", "thresholds"):
        assert parse_link_descriptor(name).kind == name


def test_parse_splines_default():
    d = parse_link_descriptor("splines")
    assert (d.kind, d.n_knots, d.placement) == ("splines", 5, "quant")


def test_parse_splines_with_count_and_placement():
    d = parse_link_descriptor("7-equi-splines")
    assert (d.kind, d.n_knots, d.placement) == ("splines", 7, "equi")


def test_parse_rejects_garbage_and_tiny_splines():
    with pytest.raises(SpecError):
        parse_link_descriptor("logit")
    with pytest.raises(SpecError):
        parse_link_descriptor("2-equi-splines")


# ------------------------------------------------------- parameter counts


def test_param_counts():
    y = np.linspace(0.0, 30.0, 100)
    assert resolve_link(LinkDescriptor("identity")).n_params == 0
    assert resolve_link(LinkDescriptor("linear")).n_params == 2
    assert resolve_link(LinkDescriptor("beta"), y_sample=y).n_params == 4
    spl = resolve_link(LinkDescriptor("splines", 5, "equi"), y_sample=y)
    assert spl.n_params == 7
    ords = resolve_link(LinkDescriptor("thresholds"), y_sample=np.arange(4.0))
    assert ords.n_params == 3


def test_thresholds_resolution_from_levels():
    link = resolve_link(LinkDescriptor("thresholds"), y_sample=np.array([2.0, 5.0, 3.0, 2.0]))
    assert link.n_levels == 4 and link.level_offset == 2


def test_thresholds_resolution_from_declared_range():
    link = resolve_link(LinkDescriptor("thresholds"), declared_range=(0, 10))
    assert link.n_levels == 11 and link.level_offset == 0


def test_thresholds_reject_non_integer_levels():
    with pytest.raises(DataError):
        resolve_link(LinkDescriptor("thresholds"), y_sample=np.array([0.0, 0.5, 1.0]))


def test_declared_range_must_cover_sample():
    with pytest.raises(DataError):
        resolve_link(LinkDescriptor("beta"), y_sample=np.array([0.0, 40.0]), declared_range=(0, 30))


def test_bounded_link_needs_a_range():
    with pytest.raises(SpecError):
        resolve_link(LinkDescriptor("beta"))


def test_link_round_trips_through_dict():
    y = np.linspace(0.0, 30.0, 50)
    link = resolve_link(LinkDescriptor("splines", 5, "equi"), y_sample=y)
    back = LinkFamily.from_dict(link.to_dict())
    assert back.kind == link.kind and np.array_equal(back.knots, link.knots)


# ---------------------------------------------------------- linear link


def test_linear_inverse_value_and_jacobian():
    link = LinkFamily(kind="linear")
    vals, logjac = inverse_transform(link, np.array([10.0]), np.array([5.0, 2.0]))
    assert vals[0] == pytest.approx(2.5)
    assert logjac[0] == pytest.approx(-np.log(2.0))


def test_linear_forward_round_trip():
    link = LinkFamily(kind="linear")
    eta = np.array([5.0, 2.0])
    assert forward_transform(link, np.array([2.5]), eta)[0] == pytest.approx(10.0)


def test_linear_zero_scale_rejected():
    with pytest.raises(EvaluationFailure):
        inverse_transform(LinkFamily(kind="linear"), np.array([1.0]), np.array([0.0, 0.0]))


# ------------------------------------------------------------- beta link


def test_beta_canonical_at_zero():
    # eta1 = eta2 = 0 gives the arcsine-law shapes (1/2, 1/2)
    a, b = beta_canonical(0.0, 0.0)
    assert a == pytest.approx(0.5) and b == pytest.approx(0.5)


def test_beta_canonical_positive():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = beta_canonical(*rng.normal(scale=2, size=2))
        assert a > 0 and b > 0


def _beta_cdf_oracle(a, b, x):
    norm, _ = quad(lambda t: t ** (a - 1) * (1 - t) ** (b - 1), 0.0, 1.0)
    val, _ = quad(lambda t: t ** (a - 1) * (1 - t) ** (b - 1), 0.0, x)
    return val / norm


def test_beta_inverse_matches_density_integral():
    link = LinkFamily(kind="beta", y_min=0.0, y_max=30.0, eps_y=0.5)
    eta = np.array([0.3, -0.2, 0.1, 0.5])
    a, b = beta_canonical(eta[0], eta[1])
    ys = np.array([3.0, 11.0, 22.5, 29.0])
    vals, _ = inverse_transform(link, ys, eta)
    span = 30.0 + 1.0
    for y, v in zip(ys, vals):
        ystar = (y + 0.5) / span
        want = (_beta_cdf_oracle(a, b, ystar) - eta[2]) / eta[3]
        assert abs(v - want) < 1e-8


def test_beta_jacobian_matches_fd():
    link = LinkFamily(kind="beta", y_min=0.0, y_max=30.0, eps_y=0.5)
    eta = np.array([0.3, -0.2, 0.1, 0.5])
    ys = np.array([5.0, 15.0, 25.0])
    _, logjac = inverse_transform(link, ys, eta)
    h = 1e-5
    up, _ = inverse_transform(link, ys + h, eta)
    dn, _ = inverse_transform(link, ys - h, eta)
    fd = (up - dn) / (2 * h)
    assert np.allclose(np.exp(logjac), fd, rtol=1e-5)


def test_beta_forward_round_trip_and_clamp():
    link = LinkFamily(kind="beta", y_min=0.0, y_max=30.0, eps_y=0.5)
    eta = np.array([0.3, -0.2, 0.1, 0.5])
    ys = np.array([3.0, 15.0, 28.0])
    lam, _ = inverse_transform(link, ys, eta)
    back = forward_transform(link, lam, eta)
    assert np.allclose(back, ys, atol=1e-6)
    # far outside the image: clamps to the endpoints, never leaves the range
    wild = forward_transform(link, np.array([-1e6, 1e6]), eta)
    assert wild[0] == 0.0 and wild[1] == 30.0


# ---------------------------------------------------------- splines link


def _spline_link():
    return resolve_link(LinkDescriptor("splines", 5, "equi"), declared_range=(0.0, 30.0))


def test_spline_inverse_is_strictly_increasing():
    link = _spline_link()
    eta = np.array([-2.0, 0.4, 0.8, 0.3, 1.1, 0.2, 0.6])
    y = np.linspace(0.0, 30.0, 200)
    vals, _ = inverse_transform(link, y, eta)
    assert np.all(np.diff(vals) > 0.0)


def test_spline_jacobian_matches_fd():
    link = _spline_link()
    eta = np.array([-2.0, 0.4, 0.8, 0.3, 1.1, 0.2, 0.6])
    y = np.linspace(0.5, 29.5, 40)
    _, logjac = inverse_transform(link, y, eta)
    h = 1e-6
    up, _ = inverse_transform(link, y + h, eta)
    dn, _ = inverse_transform(link, y - h, eta)
    assert np.allclose(np.exp(logjac), (up - dn) / (2 * h), rtol=1e-5)


def test_spline_zero_coefficients_rejected():
    link = _spline_link()
    eta = np.zeros(7)
    with pytest.raises(EvaluationFailure):
        inverse_transform(link, np.array([15.0]), eta)


def test_spline_forward_round_trip():
    link = _spline_link()
    eta = np.array([-2.0, 0.4, 0.8, 0.3, 1.1, 0.2, 0.6])
    rng = np.random.default_rng(8)
    y = rng.uniform(0.0, 30.0, size=100)
    lam, _ = inverse_transform(link, y, eta)
    back = forward_transform(link, lam, eta)
    assert np.max(np.abs(back - y)) < 1e-8


def test_spline_image_bounds():
    link = _spline_link()
    eta = np.array([-2.0, 0.4, 0.8, 0.3, 1.1, 0.2, 0.6])
    lo, hi = transform_image(link, eta)
    assert lo == pytest.approx(-2.0)
    assert hi == pytest.approx(-2.0 + np.sum(eta[1:] ** 2))
    vals, _ = inverse_transform(link, np.array([0.0, 30.0]), eta)
    assert vals[0] == pytest.approx(lo, abs=1e-12)
    assert vals[1] == pytest.approx(hi, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    coefs=st.lists(st.floats(min_value=-2, max_value=2), min_size=7, max_size=7),
    a=st.floats(min_value=0, max_value=30),
    b=st.floats(min_value=0, max_value=30),
)
def test_spline_monotone_for_any_parameters(coefs, a, b):
    eta = np.asarray(coefs)
    if np.all(eta[1:] ** 2 < 1e-8):
        return
    link = _spline_link()
    lo, hi = min(a, b), max(a, b)
    try:
        vals, _ = inverse_transform(link, np.array([lo, hi]), eta)
    except EvaluationFailure:
        return
    assert vals[1] >= vals[0] - 1e-12


# ------------------------------------------------------------- thresholds


def test_threshold_expansion_single():
    assert np.array_equal(expand_thresholds(np.array([0.5])), [0.5])


def test_threshold_expansion_squares_increments():
    got = expand_thresholds(np.array([0.5, 1.0, 2.0]))
    assert np.allclose(got, [0.5, 1.5, 5.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-5, max_value=5), min_size=1, max_size=8))
def test_threshold_expansion_nondecreasing(raw):
    out = expand_thresholds(np.asarray(raw))
    assert np.all(np.diff(out) >= 0.0)


def test_threshold_forward_buckets():
    link = LinkFamily(kind="thresholds", n_levels=4, level_offset=0)
    eta = np.array([0.0, 1.0, 1.0])   # cuts at 0, 1, 2
    lam = np.array([-3.0, 0.5, 1.5, 7.0])
    assert np.array_equal(forward_transform(link, lam, eta), [0.0, 1.0, 2.0, 3.0])


def test_threshold_forward_respects_offset():
    link = LinkFamily(kind="thresholds", n_levels=3, level_offset=4)
    eta = np.array([0.0, 1.0])
    assert np.array_equal(forward_transform(link, np.array([-1.0, 0.5, 9.0]), eta), [4.0, 5.0, 6.0])
