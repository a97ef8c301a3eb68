"""Starting-value strategies: data-driven defaults, spreading a one-class
fit across classes, and random restarts."""

import numpy as np
import pandas as pd
import pytest
from scipy.special import ndtri

from latentmix.data import LongDataset
from latentmix.design import build_model
from latentmix.hazards import BaselineHazard
from latentmix.initial import (
    _hazard_defaults,
    _link_defaults,
    init_default,
    init_from_lower,
    init_random,
)
from latentmix.layout import build_layout
from latentmix.links import LinkFamily
from latentmix.modelspec import ModelSpec, SurvivalSpec, SurvivalTerm


# ------------------------------------------------------------ link defaults


def test_linear_link_starts_at_marker_location():
    got = _link_defaults(LinkFamily(kind="linear"), mean=23.4, median=0.0, minimum=0.0)
    assert np.allclose(got, [23.4, 1.0])


def test_beta_link_default_pattern():
    got = _link_defaults(LinkFamily(kind="beta", y_min=0, y_max=1), 0.0, 0.0, 0.0)
    assert np.allclose(got, [0.0, -np.log(2.0), 0.7, 0.1])


def test_spline_link_default_pattern():
    fam = LinkFamily(kind="splines", y_min=0, y_max=1, knots=np.linspace(0, 1, 5))
    got = _link_defaults(fam, 0.0, 0.0, 0.0)
    assert got.shape == (7,)
    assert got[0] == -2.0
    assert np.all(got[1:] == 0.1)


def test_threshold_link_default_pattern():
    fam = LinkFamily(kind="thresholds", n_levels=5, level_offset=0)
    med, lo = 3.0, 0.0
    got = _link_defaults(fam, 0.0, med, lo)
    u98 = ndtri(0.98)
    assert got.shape == (4,)
    assert got[0] == pytest.approx(2.0 * u98 * (-med + lo + 1.0) / 3.0)
    assert np.allclose(got[1:], np.sqrt(2.0 * u98 / 3.0))


def test_binary_threshold_starts_at_zero():
    fam = LinkFamily(kind="thresholds", n_levels=2, level_offset=0)
    assert np.array_equal(_link_defaults(fam, 0.0, 0.0, 0.0), [0.0])


# ---------------------------------------------------------- hazard defaults


def test_weibull_default_from_event_rate():
    hz = BaselineHazard(kind="weibull", logscale=False)
    stats = {"1": {"count": 10, "time_sum": 40.0}}   # rate 0.25
    got = _hazard_defaults(hz, stats, 1)
    assert np.allclose(got, [0.5, 1.0])   # sqrt(rate), unit shape


def test_weibull_default_logscale():
    hz = BaselineHazard(kind="weibull", logscale=True)
    stats = {"1": {"count": 10, "time_sum": 40.0}}
    got = _hazard_defaults(hz, stats, 1)
    assert np.allclose(got, [np.log(0.25), 0.0])


def test_weibull_default_no_events_warns_and_uses_half():
    hz = BaselineHazard(kind="weibull", logscale=False)
    with pytest.warns(UserWarning):
        got = _hazard_defaults(hz, {"1": {"count": 0, "time_sum": 0.0}}, 1)
    assert np.allclose(got, [np.sqrt(0.5), 1.0])


def test_piecewise_default_flat():
    hz = BaselineHazard(kind="piecewise", knots=np.array([0.0, 1.0, 2.0, 3.0, 4.0]))
    got = _hazard_defaults(hz, {}, 1)
    assert np.allclose(got, np.sqrt(0.25))
    lg = BaselineHazard(kind="piecewise", logscale=True, knots=hz.knots)
    assert np.allclose(_hazard_defaults(lg, {}, 1), -np.log(4.0))


def test_mspline_default_flat():
    hz = BaselineHazard(kind="msplines", knots=np.linspace(0, 10, 5))
    got = _hazard_defaults(hz, {}, 1)
    assert got.shape == (7,)
    assert np.allclose(got, np.sqrt(1.0 / 7.0))


# ------------------------------------------------------------- init_default


def _toy_dataset(n=30, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        for t in (0.0, 1.0, 2.0):
            rows.append({"id": i, "t": t, "y": 20.0 + rng.normal(), "x": i % 2})
    return LongDataset.from_frame(pd.DataFrame(rows), subject="id")


def test_default_vector_patterns():
    spec = ModelSpec(
        family="hlme", subject="id", outcomes=("y",), timevar="t",
        fixed=("intercept", "t", "x"), random=("intercept", "t"),
    )
    spec.validate()
    vm = build_model(spec, _toy_dataset())
    theta = init_default(vm.structure)
    lay = vm.structure.layout
    by_label = dict(zip(lay.label_texts(), theta))
    mean_y = vm.structure.stats["marker_mean"]["y"]
    assert by_label["intercept"] == pytest.approx(mean_y)
    assert by_label["t"] == 0.0 and by_label["x"] == 0.0
    blocks = lay.unpack(theta)
    assert np.allclose(blocks.chol_u, np.eye(2))   # identity covariance start
    assert blocks.resid_sd[0] == 1.0


def test_default_vector_mixture_intercepts_share_marker_mean():
    spec = ModelSpec(
        family="hlme", subject="id", outcomes=("y",), timevar="t", ng=2,
        fixed=("intercept", "t"), mixture=("intercept",), random=("intercept",),
    )
    spec.validate()
    vm = build_model(spec, _toy_dataset())
    theta = init_default(vm.structure)
    blocks = vm.structure.layout.unpack(theta)
    mean_y = vm.structure.stats["marker_mean"]["y"]
    assert np.allclose(blocks.upsilon[:, 0], mean_y)
    assert np.all(blocks.xi == 0.0)


# ------------------------------------------------- spreading a one-class fit


def _pair_of_layouts(ng, **kw):
    base = dict(
        family="hlme", subject="id", outcomes=("y",), timevar="t",
        fixed=("intercept", "t"), random=("intercept",),
    )
    single = ModelSpec(**base)
    multi = ModelSpec(**{**base, **kw}, ng=ng, mixture=("intercept", "t"))
    single.validate(), multi.validate()
    return (build_layout(multi, (0,), None), build_layout(single, (0,), None))


def test_spread_two_classes_one_se_apart():
    lay, src = _pair_of_layouts(2)
    theta1 = np.array([5.0, 10.0, 1.0, 1.0])           # intercept, t, chol, resid
    cov = np.diag([1.0, 4.0, 1.0, 1.0])                # SE(t) = 2
    theta = init_from_lower(lay, src, theta1, cov)
    blocks = lay.unpack(theta)
    assert np.allclose(blocks.upsilon[:, 1], [9.0, 11.0])
    assert np.allclose(blocks.upsilon[:, 0], [4.5, 5.5])


def test_spread_three_classes_centered_on_estimate():
    lay, src = _pair_of_layouts(3)
    theta1 = np.array([5.0, 10.0, 1.0, 1.0])
    cov = np.diag([0.0, 4.0, 0.0, 0.0])
    theta = init_from_lower(lay, src, theta1, cov)
    blocks = lay.unpack(theta)
    assert np.allclose(blocks.upsilon[:, 1], [8.0, 10.0, 12.0])
    assert np.allclose(blocks.upsilon[:, 0], 5.0)      # zero SE: no spread


def test_spread_copies_common_coordinates_and_without_cov():
    lay, src = _pair_of_layouts(2)
    theta1 = np.array([5.0, 10.0, 1.3, 0.7])
    theta = init_from_lower(lay, src, theta1, None)
    blocks = lay.unpack(theta)
    assert blocks.chol_u[0, 0] == pytest.approx(1.3)
    assert blocks.resid_sd[0] == pytest.approx(0.7)
    assert np.allclose(blocks.upsilon[:, 0], 5.0)      # no cov: no spread


def test_spread_ph_shifts_and_memberships():
    base = dict(
        family="jointlcmm", subject="id", outcomes=("y",), timevar="t",
        fixed=("intercept", "t"), random=("intercept",),
    )
    single = ModelSpec(**base, survival=SurvivalSpec(time="time", event="event"))
    multi = ModelSpec(**base, ng=3, mixture=("intercept",), classmb=("x",),
                      survival=SurvivalSpec(time="time", event="event", hazardtype="PH"))
    single.validate(), multi.validate()
    b = (BaselineHazard(kind="weibull"),)
    lay = build_layout(multi, (0,), b)
    src = build_layout(single, (0,), b)
    theta1 = init_default_like(src)
    theta = init_from_lower(lay, src, theta1, None)
    shifts = [theta[i] for i, lab in enumerate(lay.labels) if lab.block == "hazard_shift"]
    assert shifts == [0.5, 1.0]
    mb = [theta[i] for i, lab in enumerate(lay.labels) if lab.block == "classmb"]
    assert np.all(np.asarray(mb) == 0.0)


def init_default_like(lay):
    rng = np.random.default_rng(12)
    return rng.normal(size=lay.n_free)


def test_spread_hazard_inherits_single_class_baseline():
    base = dict(
        family="jointlcmm", subject="id", outcomes=("y",), timevar="t",
        fixed=("intercept", "t"), random=("intercept",),
    )
    single = ModelSpec(**base, survival=SurvivalSpec(time="time", event="event"))
    multi = ModelSpec(**base, ng=2, mixture=("intercept",),
                      survival=SurvivalSpec(time="time", event="event", hazardtype="Specific"))
    single.validate(), multi.validate()
    b = (BaselineHazard(kind="weibull"),)
    lay = build_layout(multi, (0,), b)
    src = build_layout(single, (0,), b)
    theta1 = np.arange(1.0, src.n_free + 1)
    cov = np.eye(src.n_free)
    theta = init_from_lower(lay, src, theta1, cov)
    blocks = lay.unpack(theta)
    w1 = dict(zip(src.label_texts(), theta1))
    # class-specific baselines spread around the one-class values with SE 1
    assert np.allclose(blocks.hazard_raw[0][:, 0],
                       [w1["event1 baseline1"] - 0.5, w1["event1 baseline1"] + 0.5])


# ------------------------------------------------------------- init_random


def test_random_start_deterministic_under_same_key():
    lay, src = _pair_of_layouts(3)
    theta1 = np.array([5.0, 10.0, 1.0, 1.0])
    cov = 0.25 * np.eye(4)
    a = init_random(lay, src, theta1, cov, np.random.Generator(np.random.Philox(key=[7, 0])))
    b = init_random(lay, src, theta1, cov, np.random.Generator(np.random.Philox(key=[7, 0])))
    c = init_random(lay, src, theta1, cov, np.random.Generator(np.random.Philox(key=[7, 1])))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_random_start_degenerate_covariance_collapses_to_estimate():
    lay, src = _pair_of_layouts(2)
    theta1 = np.array([5.0, 10.0, 1.0, 1.0])
    theta = init_random(lay, src, theta1, None, np.random.default_rng(0))
    blocks = lay.unpack(theta)
    assert np.allclose(blocks.upsilon[:, 0], 5.0)
    assert np.allclose(blocks.upsilon[:, 1], 10.0)


def test_random_start_classes_differ_with_positive_covariance():
    lay, src = _pair_of_layouts(2)
    theta1 = np.array([5.0, 10.0, 1.0, 1.0])
    cov = np.eye(4)
    theta = init_random(lay, src, theta1, cov, np.random.default_rng(3))
    blocks = lay.unpack(theta)
    assert blocks.upsilon[0, 0] != blocks.upsilon[1, 0]
    # common coordinates still copied exactly
    assert blocks.chol_u[0, 0] == 1.0
