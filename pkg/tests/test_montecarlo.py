"""Statistical verdict machinery at reduced campaign sizes.

The full-budget runs live in the acceptance suite; here every check is
exercised with smaller campaigns plus plumbing tests for the estimators."""

import math

import numpy as np
import pytest

import lcb.analytic as analytic
import lcb.mechanism as mechanism
import lcb.montecarlo as mc
from lcb.montecarlo import McEstimate, Verdict
from lcb.paths import SimConfig


@pytest.fixture(scope="module")
def stable_ht():
    mech = mechanism.stable_mechanism()
    return analytic.HTransform(mech, analytic.build_scale_table(mech))


@pytest.fixture(scope="module")
def feller_ht():
    mech = mechanism.feller_mechanism()
    return analytic.HTransform(mech, analytic.build_scale_table(mech))


@pytest.fixture(scope="module")
def neveu_ht():
    mech = mechanism.neveu_mechanism()
    return analytic.HTransform(mech, analytic.build_scale_table(mech))


# ---------------------------------------------------------------------------
# estimator plumbing


def test_mc_mean_matches_numpy():
    rng = np.random.default_rng(1)
    x = rng.normal(3.0, 2.0, size=5000)
    est = mc.mc_mean(x)
    assert est.mean == pytest.approx(x.mean(), abs=1e-12)
    assert est.stderr == pytest.approx(x.std(ddof=1) / math.sqrt(x.size), rel=1e-10)
    assert est.n == 5000


def test_mc_estimate_validation_and_interval():
    with pytest.raises(ValueError):
        McEstimate(mean=0.0, stderr=-1.0, n=10)
    est = McEstimate(mean=0.0, stderr=1.0, n=10, clevel=0.997)
    assert est.half_width == pytest.approx(2.9677, abs=1e-3)


def test_batched_se_close_to_pooled():
    rng = np.random.default_rng(2)
    x = rng.exponential(size=20_000)
    pooled = mc.mc_mean(x).stderr
    batched = mc.batched_se(x, 10)
    assert pooled / 2 < batched < pooled * 2


def test_collect_campaign_worker_invariance():
    def block(rng, n):
        return {"v": rng.random(n)}

    a = mc.collect_campaign(block, 10_000, seed=3, campaign_id=7, workers=1)["v"]
    b = mc.collect_campaign(block, 10_000, seed=3, campaign_id=7, workers=4)["v"]
    assert np.array_equal(a, b)
    c = mc.collect_campaign(block, 10_000, seed=3, campaign_id=8, workers=1)["v"]
    assert not np.array_equal(a, c)


def test_two_sided_margin_logic():
    a = McEstimate(1.0, 0.01, 100)
    b = McEstimate(1.02, 0.01, 100)
    v = mc._two_sided("x", a, b)
    assert v.passed and v.margin == pytest.approx(0.02 / math.hypot(0.01, 0.01))
    far = McEstimate(1.10, 0.01, 100)
    assert not mc._two_sided("x", a, far).passed


# ---------------------------------------------------------------------------
# duality checks at reduced n


def test_laplace_duality_small(stable_ht):
    cfg = SimConfig(dt=0.01, t_max=0.5, n_paths=6000, seed=11)
    v = mc.check_laplace_duality(stable_ht.mech, cfg, 1.0, 1.0, 0.5)
    assert v.passed, v
    assert 0.0 < v.lhs < 1.0 and 0.0 < v.rhs < 1.0


def test_laplace_duality_reproducible(stable_ht):
    cfg = SimConfig(dt=0.01, t_max=0.5, n_paths=4000, seed=11)
    v1 = mc.check_laplace_duality(stable_ht.mech, cfg, 1.0, 1.0, 0.5, workers=1)
    v2 = mc.check_laplace_duality(stable_ht.mech, cfg, 1.0, 1.0, 0.5, workers=8)
    assert v1.lhs == v2.lhs and v1.rhs == v2.rhs and v1.margin == v2.margin


def test_siegmund_duality_small(neveu_ht):
    cfg = SimConfig(dt=0.01, t_max=0.5, n_paths=6000, seed=12)
    v = mc.check_siegmund_duality(neveu_ht.mech, cfg, 1.0, 1.0, 0.5)
    assert v.passed, v


def test_biduality_small(stable_ht):
    cfg = SimConfig(dt=0.01, t_max=0.5, n_paths=6000, seed=13)
    v = mc.check_biduality(stable_ht.mech, cfg, 1.0, 1.0, 0.5)
    assert v.passed, v
    assert "truncation" in v.detail


# ---------------------------------------------------------------------------
# h-transform checks


def test_h_supermartingale_small(feller_ht):
    cfg = SimConfig(dt=0.005, t_max=1.0, n_paths=6000, seed=14)
    v = mc.check_h_supermartingale(feller_ht, cfg, 1.0, [0.5, 1.0])
    assert v.passed, v
    assert len(v.subresults) == 3  # two horizons plus the dual representation
    assert v.margin > 3.0


def test_infimum_law_small(feller_ht):
    cfg = SimConfig(dt=0.0025, t_max=5.0, n_paths=4000, seed=15)
    v = mc.check_infimum_law(feller_ht, cfg, 1.0, [0.4, 0.55, 0.7, 0.85, 0.95])
    assert v.passed, [(s.name, s.margin) for s in v.subresults]
    assert len(v.subresults) == 5


def test_progeny_lt_small(stable_ht):
    cfg = SimConfig(dt=0.01, t_max=30.0, n_paths=4000, seed=16)
    v = mc.check_progeny_lt(stable_ht.mech, stable_ht.scale, cfg, 1.0, [0.3])
    assert v.passed, v


def test_progeny_lt_competition_free():
    mech = mechanism.feller_mechanism(gamma=-0.5, c=0.0)
    cfg = SimConfig(dt=0.01, t_max=40.0, n_paths=4000, seed=17)
    v = mc.check_progeny_lt(mech, None, cfg, 1.0, [0.3])
    assert v.passed, v
    # target is the inverse-Psi closed form
    phi = mechanism.psi_inverse(mech, 0.3)
    assert v.rhs == pytest.approx(math.exp(-phi))


def test_lifetime_exponential_small():
    mech = mechanism.feller_mechanism(gamma=-0.5, c=0.0)
    cfg = SimConfig(dt=0.01, t_max=40.0, n_paths=3000, seed=18)
    v = mc.check_lifetime_exponential(mech, cfg, 1.0)
    assert v.passed, v.detail


def test_lifetime_critical_no_killing():
    mech = mechanism.feller_mechanism(gamma=0.0, c=0.0)
    cfg = SimConfig(dt=0.01, t_max=10.0, n_paths=4000, seed=19)
    v = mc.check_lifetime_exponential(mech, cfg, 1.0)
    assert v.passed and v.lhs == 0.0


def test_lifetime_requires_no_competition(feller_ht):
    with pytest.raises(ValueError):
        mc.check_lifetime_exponential(feller_ht.mech, SimConfig(), 1.0)


def test_killing_dichotomy_positive_ell(neveu_ht):
    cfg = SimConfig(dt=0.01, t_max=2.0, n_paths=3000, seed=20)
    v = mc.check_killing_dichotomy(neveu_ht, cfg, 1.0)
    assert v.passed, v.detail
    assert v.margin > 3.0


def test_killing_dichotomy_zero_ell():
    mech = mechanism.slow_log_mechanism()
    ht = analytic.HTransform(mech, analytic.build_scale_table(mech))
    cfg = SimConfig(dt=0.005, t_max=10.0, n_paths=3000, seed=21, eps_jump=0.5)
    v = mc.check_killing_dichotomy(ht, cfg, 1.0)
    assert v.passed, v.detail
    assert v.lhs == 0.0  # no killings
    assert "exploded" in v.detail


def test_conditioning_limit_small(stable_ht):
    cfg = SimConfig(dt=0.01, t_max=25.0, n_paths=10_000, seed=22)
    v = mc.check_conditioning_limit(stable_ht, cfg, 1.0, 0.5, [1.0, 0.3, 0.1])
    assert v.passed, v.detail
    assert len(v.subresults) == 3


def test_two_constructions_small(stable_ht):
    cfg = SimConfig(dt=0.01, t_max=0.5, n_paths=6000, seed=23)
    v = mc.check_two_constructions(stable_ht, cfg, 1.0, 0.5)
    assert v.passed, [(s.name, s.margin) for s in v.subresults]


def test_entrance_from_zero_small(feller_ht):
    cfg = SimConfig(dt=0.005, t_max=0.25, n_paths=6000, seed=24)
    v = mc.check_entrance_from_zero(feller_ht, cfg, x=1.0, t=0.25)
    assert v.passed, v.detail
    assert "below-1" in v.detail


def test_verdict_reproducible_same_seed(stable_ht):
    cfg = SimConfig(dt=0.01, t_max=0.5, n_paths=4000, seed=25)
    a = mc.check_two_constructions(stable_ht, cfg, 1.0, 0.5)
    b = mc.check_two_constructions(stable_ht, cfg, 1.0, 0.5)
    assert a.lhs == b.lhs and a.rhs == b.rhs and a.margin == b.margin
