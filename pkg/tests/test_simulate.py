"""Data generation.

Distributional checks run at fixed seeds with 3-4 standard error bounds, so
they are deterministic; the standard errors come from the usual binomial /
normal-theory formulas.  Event-time laws are pinned with Kolmogorov-Smirnov
tests against the exponential closed forms.
"""

import numpy as np
import pytest
import scipy.stats

from latentmix import (
    Covariate,
    CorSpec,
    ModelSpec,
    SimDesign,
    SurvivalSpec,
    replicate_outcomes,
    simulate_dataset,
)
from latentmix import hazards as hz
from latentmix import links as lk
from latentmix.design import ModelStructure
from latentmix.errors import SpecError
from latentmix.fitting import FittedModel
from latentmix.layout import build_layout
from latentmix.likelihood import Evaluator

from oracles import make_instance, random_theta


def _layout_for(spec, horizon=None):
    """Resolve links/hazards from declarations, as the simulator does."""
    spec.validate()
    fams = tuple(
        lk.resolve_link(lk.parse_link_descriptor(text), y_sample=None,
                        declared_range=spec.link_ranges.get(mk),
                        manual_knots=spec.link_knots.get(mk), eps_y=spec.eps_y)
        for mk, text in zip(spec.outcomes, spec.link_descriptors()))
    baselines = None
    if spec.survival is not None:
        baselines = tuple(
            hz.resolve_hazard(hz.parse_hazard_descriptor(text),
                              logscale=spec.survival.logscale,
                              time_sample=np.array([horizon]), entry_floor=0.0,
                              manual_knots=None)
            for text in spec.survival.hazards)
    return build_layout(spec, tuple(f.n_params for f in fams), baselines)


def _design(spec, theta_map, n_subjects, times, covariates=None, horizon=None):
    lay = _layout_for(spec, horizon)
    theta = np.zeros(lay.n_free)
    texts = lay.label_texts()
    for k, v in theta_map.items():
        theta[texts.index(k)] = v
    return SimDesign(spec=spec, theta=theta, n_subjects=n_subjects,
                     times=np.asarray(times, dtype=float),
                     covariates=covariates or {}, horizon=horizon)


def _anova_design(n, mu=3.0, sd_u=1.2, sd_e=0.5, times=(0.0, 1.0, 2.0)):
    spec = ModelSpec(family="hlme", subject="id", outcomes=("y",), timevar="t",
                     fixed=("intercept",), random=("intercept",))
    return _design(spec, {"intercept": mu, "cholesky 1": sd_u,
                          "residual sd": sd_e}, n, times)


# ---------------------------------------------------------------------------
# reproducibility


class TestReproducibility:
    def test_same_seed_same_data(self):
        d = _anova_design(20)
        a = simulate_dataset(d, seed=5)
        b = simulate_dataset(d, seed=5)
        assert np.array_equal(a.ids, b.ids)
        for c in a.columns:
            assert np.array_equal(a.columns[c], b.columns[c])

    def test_different_seed_different_data(self):
        d = _anova_design(20)
        a = simulate_dataset(d, seed=0)
        b = simulate_dataset(d, seed=1)
        assert not np.array_equal(a.columns["y"], b.columns["y"])

    def test_subject_streams_are_independent(self):
        # growing the sample must not disturb the existing subjects
        small = simulate_dataset(_anova_design(5), seed=9)
        big = simulate_dataset(_anova_design(8), seed=9)
        n = small.ids.size
        assert np.array_equal(big.ids[:n], small.ids)
        assert np.array_equal(big.columns["y"][:n], small.columns["y"])


def test_schema_and_grid():
    d = _anova_design(7, times=(0.0, 0.5, 2.0))
    out = simulate_dataset(d, seed=2)
    assert set(out.columns) == {"t", "y"}
    assert out.ids.size == 21
    assert np.array_equal(np.unique(out.ids), np.arange(1, 8))
    assert np.array_equal(out.columns["t"][:3], [0.0, 0.5, 2.0])


# ---------------------------------------------------------------------------
# longitudinal laws


def test_gaussian_moments():
    mu, sd_u, sd_e, n, j = 3.0, 1.2, 0.5, 1200, 3
    out = simulate_dataset(_anova_design(n, mu, sd_u, sd_e), seed=7)
    y = out.columns["y"]
    per = np.array([y[out.ids == i].mean() for i in range(1, n + 1)])
    tau = sd_u ** 2 + sd_e ** 2 / j
    assert abs(per.mean() - mu) < 4 * np.sqrt(tau / n)
    assert abs(per.var(ddof=1) - tau) < 4 * tau * np.sqrt(2 / (n - 1))
    within = y - np.repeat(per, j)
    s2 = within @ within / (n * (j - 1))
    assert abs(s2 - sd_e ** 2) < 4 * sd_e ** 2 * np.sqrt(2 / (n * (j - 1)))


def test_class_membership_frequencies():
    spec = ModelSpec(family="hlme", subject="id", outcomes=("y",), timevar="t",
                     ng=2, fixed=("intercept",), mixture=("intercept",),
                     random=("intercept",))
    d = _design(spec, {"membership intercept class1": np.log(2.0),
                       "intercept class1": 0.0, "intercept class2": 50.0,
                       "cholesky 1": 0.3, "residual sd": 0.3},
                n_subjects=1200, times=(0.0, 1.0))
    out = simulate_dataset(d, seed=11)
    per = np.array([out.columns["y"][out.ids == i].mean() for i in range(1, 1201)])
    freq = np.mean(per < 25.0)       # the classes are 150 sd apart
    p = 2.0 / 3.0
    assert abs(freq - p) < 3 * np.sqrt(p * (1 - p) / 1200)


def test_brownian_motion_covariance():
    spec = ModelSpec(family="hlme", subject="id", outcomes=("y",), timevar="t",
                     fixed=("intercept",), random=("intercept",),
                     cor=CorSpec("BM"))
    u, s, e, n = 0.8, 0.6, 0.5, 1500
    d = _design(spec, {"intercept": 0.0, "cholesky 1": u,
                       "process sd": s, "residual sd": e},
                n_subjects=n, times=(0.0, 1.0, 4.0))
    out = simulate_dataset(d, seed=13)
    y = out.columns["y"].reshape(n, 3)
    v4 = u * u + s * s * 4 + e * e
    assert abs(y[:, 2].var(ddof=1) - v4) < 4 * v4 * np.sqrt(2 / n)
    cov = np.cov(y[:, 1], y[:, 2])[0, 1]
    want = u * u + s * s * 1.0       # BM covariance is s^2 min(1, 4)
    v1 = u * u + s * s + e * e
    assert abs(cov - want) < 4 * np.sqrt((v1 * v4 + want ** 2) / n)


def test_threshold_level_frequencies():
    spec = ModelSpec(family="lcmm", subject="id", outcomes=("y",), timevar="t",
                     fixed=("intercept",), random=("intercept",),
                     links=("thresholds",), link_ranges={"y": (0, 3)})
    cuts_raw = {"cholesky 1": 0.8, "link y 1": -0.3,
                "link y 2": 0.7, "link y 3": 0.9}
    n = 2500
    d = _design(spec, cuts_raw, n_subjects=n, times=(0.0,))
    out = simulate_dataset(d, seed=17)
    y = out.columns["y"]
    assert set(np.unique(y)) <= {0.0, 1.0, 2.0, 3.0}
    cuts = np.array([-0.3, -0.3 + 0.7 ** 2, -0.3 + 0.7 ** 2 + 0.9 ** 2])
    sd = np.sqrt(0.8 ** 2 + 1.0)     # latent spread plus unit probit residual
    cells = np.diff(np.concatenate([[0.0],
                                    scipy.stats.norm.cdf(cuts / sd), [1.0]]))
    for m, p in enumerate(cells):
        freq = np.mean(y == m)
        assert abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_bounded_link_respects_range():
    spec = ModelSpec(family="lcmm", subject="id", outcomes=("y",), timevar="t",
                     fixed=("intercept",), random=("intercept",),
                     links=("beta",), link_ranges={"y": (0.0, 10.0)})
    d = _design(spec, {"cholesky 1": 1.0, "link y 1": 0.2, "link y 2": -0.4,
                       "link y 3": 0.5, "link y 4": 0.4},
                n_subjects=300, times=(0.0, 1.0))
    y = simulate_dataset(d, seed=19).columns["y"]
    assert y.min() >= 0.0 - spec.eps_y - 1e-9
    assert y.max() <= 10.0 + spec.eps_y + 1e-9


def test_constant_covariate_shifts_mean():
    spec = ModelSpec(family="hlme", subject="id", outcomes=("y",), timevar="t",
                     fixed=("intercept", "x"), random=("intercept",))
    d = _design(spec, {"intercept": 1.0, "x": 1.5, "cholesky 1": 0.0,
                       "residual sd": 1e-9},
                n_subjects=5, times=(0.0,),
                covariates={"x": Covariate("constant", 2.0)})
    out = simulate_dataset(d, seed=23)
    assert np.allclose(out.columns["y"], 4.0, atol=1e-6)
    assert np.all(out.columns["x"] == 2.0)


def test_covariate_generators():
    spec = ModelSpec(family="hlme", subject="id", outcomes=("y",), timevar="t",
                     fixed=("intercept",), random=("intercept",))
    n = 400
    d = _design(spec, {"intercept": 0.0, "cholesky 1": 1.0, "residual sd": 1.0},
                n_subjects=n, times=(0.0,),
                covariates={"b": Covariate("bernoulli", 0.3),
                            "u": Covariate("uniform", -1.0, 2.0),
                            "g": Covariate("normal", 5.0, 2.0)})
    out = simulate_dataset(d, seed=29)
    b, u, g = out.columns["b"], out.columns["u"], out.columns["g"]
    assert set(np.unique(b)) <= {0.0, 1.0}
    assert abs(b.mean() - 0.3) < 4 * np.sqrt(0.3 * 0.7 / n)
    assert u.min() >= -1.0 and u.max() <= 2.0
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(0.75 / n)
    assert abs(g.mean() - 5.0) < 4 * 2.0 / np.sqrt(n)
    assert abs(g.std(ddof=1) - 2.0) < 4 * 2.0 * np.sqrt(0.5 / n)


# ---------------------------------------------------------------------------
# event times


def _joint_spec(causes=1):
    return ModelSpec(family="jointlcmm", subject="id", outcomes=("y",),
                     timevar="t", fixed=("intercept",), random=("intercept",),
                     survival=SurvivalSpec(time="time", event="event",
                                           hazards=("weibull",) * causes))


def _event_columns(out, n):
    first = np.array([np.flatnonzero(out.ids == i)[0] for i in range(1, n + 1)])
    return out.columns["time"][first], out.columns["event"][first]


class TestEventTimes:
    def test_unit_weibull_is_standard_exponential(self):
        n = 2000
        d = _design(_joint_spec(), {"event1 baseline1": 1.0,
                                    "event1 baseline2": 1.0,
                                    "cholesky 1": 0.5, "residual sd": 1.0},
                    n_subjects=n, times=(0.0,), horizon=50.0)
        te, ev = _event_columns(simulate_dataset(d, seed=31), n)
        assert np.all(ev == 1)       # censoring beyond t=50 has mass exp(-50)
        assert scipy.stats.kstest(te, "expon").pvalue > 0.01

    def test_administrative_censoring_at_horizon(self):
        n = 1500
        d = _design(_joint_spec(), {"event1 baseline1": 1.0,
                                    "event1 baseline2": 1.0,
                                    "cholesky 1": 0.5, "residual sd": 1.0},
                    n_subjects=n, times=(0.0,), horizon=1.0)
        te, ev = _event_columns(simulate_dataset(d, seed=37), n)
        censored = ev == 0
        assert np.all(te[censored] == 1.0)
        assert np.all(te[~censored] < 1.0)
        p = np.exp(-1.0)
        assert abs(censored.mean() - p) < 3 * np.sqrt(p * (1 - p) / n)

    def test_competing_exponential_causes(self):
        n = 1500
        d = _design(_joint_spec(causes=2),
                    {"event1 baseline1": 1.0, "event1 baseline2": 1.0,
                     "event2 baseline1": np.sqrt(2.0), "event2 baseline2": 1.0,
                     "cholesky 1": 0.5, "residual sd": 1.0},
                    n_subjects=n, times=(0.0,), horizon=50.0)
        te, ev = _event_columns(simulate_dataset(d, seed=41), n)
        assert set(np.unique(ev)) == {1.0, 2.0}
        share1 = np.mean(ev == 1)    # cause-1 share is 1/(1+2)
        assert abs(share1 - 1 / 3) < 3 * np.sqrt((1 / 3) * (2 / 3) / n)
        assert scipy.stats.kstest(te, "expon", args=(0, 1 / 3)).pvalue > 0.01

    def test_visits_truncated_at_event(self):
        n = 300
        d = _design(_joint_spec(), {"event1 baseline1": 1.0,
                                    "event1 baseline2": 1.0,
                                    "cholesky 1": 0.5, "residual sd": 1.0},
                    n_subjects=n, times=(0.0, 1.0, 2.0, 3.0), horizon=10.0)
        out = simulate_dataset(d, seed=43)
        kept = out.columns["t"] <= out.columns["time"]
        assert np.all(kept)


# ---------------------------------------------------------------------------
# argument validation


class TestValidation:
    def test_theta_length_checked(self):
        d = _anova_design(5)
        d.theta = np.zeros(2)
        with pytest.raises(SpecError, match="length"):
            simulate_dataset(d)

    def test_joint_needs_horizon(self):
        lay = _layout_for(_joint_spec(), horizon=5.0)
        d = SimDesign(spec=_joint_spec(), theta=np.zeros(lay.n_free),
                      n_subjects=3, times=[0.0], horizon=None)
        with pytest.raises(SpecError, match="horizon"):
            simulate_dataset(d)

    def test_missing_covariate_generator(self):
        spec = ModelSpec(family="hlme", subject="id", outcomes=("y",),
                         timevar="t", fixed=("intercept", "x"),
                         random=("intercept",))
        d = _design(spec, {}, n_subjects=3, times=(0.0,))
        with pytest.raises(SpecError, match="x"):
            simulate_dataset(d)

    def test_empty_grid_rejected(self):
        d = _anova_design(3)
        d.times = np.zeros(0)
        with pytest.raises(SpecError, match="grid"):
            simulate_dataset(d)

    def test_unknown_covariate_kind(self):
        with pytest.raises(SpecError, match="generator"):
            Covariate("poisson", 3.0).draw(np.random.default_rng(0))


# ---------------------------------------------------------------------------
# predictive replication


def _pseudo_fit(name, seed=0):
    vm = make_instance(name, seed)
    theta = random_theta(vm, np.random.default_rng([seed, 77]))
    return FittedModel(structure=vm.structure, theta=theta, vcov=None,
                       loglik=float(Evaluator(vm).total_loglik(theta)),
                       convergence={}, fingerprint=vm.fingerprint, model=vm)


class TestReplicateOutcomes:
    def test_deterministic_and_aligned(self):
        fit = _pseudo_fit("hlme-g1", seed=1)
        a = replicate_outcomes(fit, seed=3)
        b = replicate_outcomes(fit, seed=3)
        assert a["simulated"] == b["simulated"]
        want_y = np.concatenate([s.y for s in fit.model.subjects])
        assert np.allclose(a["observed"], want_y)
        assert len(a["simulated"]) == want_y.size
        assert "sim_event_time" not in a

    def test_joint_fields(self):
        fit = _pseudo_fit("joint-g1", seed=2)
        out = replicate_outcomes(fit, seed=5)
        horizon = fit.structure.stats["max_time"]
        assert set(out["sim_event"]) <= {0, 1}
        assert max(out["sim_event_time"]) <= horizon + 1e-9
        censored = [t for t, e in zip(out["sim_event_time"], out["sim_event"])
                    if e == 0]
        assert all(t == horizon for t in censored)

    def test_needs_bound_fit(self):
        import dataclasses
        fit = dataclasses.replace(_pseudo_fit("hlme-g1"), model=None)
        with pytest.raises(SpecError, match="bound"):
            replicate_outcomes(fit)
