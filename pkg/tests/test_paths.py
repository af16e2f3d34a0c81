"""Simulator kernels: closed-form anchors, boundary behaviour, determinism."""

import math

import numpy as np
import pytest

import lcb.analytic as analytic
import lcb.mechanism as mechanism
import lcb.paths as paths
from lcb.mechanism import JumpMeasure, Mechanism
from lcb.paths import Path, SimConfig


def gen(*key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def logistic_mechanism(gamma=1.0, c=2.0):
    # noiseless pure-logistic dynamics: dz = gamma z - (c/2) z^2 dt
    return Mechanism(sigma=0.0, gamma=gamma, pi=JumpMeasure(kind="none"), c=c)


def logistic_solution(z0, g, chalf, t):
    if abs(g) < 1e-14:
        return z0 / (1.0 + chalf * z0 * t)
    e = math.exp(g * t)
    return z0 * e / (1.0 + chalf * z0 * (e - 1.0) / g)


@pytest.fixture(scope="module")
def feller_ht():
    mech = mechanism.feller_mechanism()
    return analytic.HTransform(mech, analytic.build_scale_table(mech))


# ---------------------------------------------------------------------------
# SimConfig


def test_simconfig_defaults_and_steps():
    cfg = SimConfig(dt=0.01, t_max=1.0)
    assert cfg.n_steps == 100
    assert SimConfig(dt=0.4, t_max=1.0).n_steps == 2


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(dt=0.0),
        dict(t_max=-1.0),
        dict(eps_jump=0.0),
        dict(explosion_cap=0.5),
        dict(extinction_floor=2.0),
        dict(small_jump_mode="drop"),
        dict(diffusion_scheme="exact"),
        dict(n_paths=0),
    ],
)
def test_simconfig_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


def test_block_streams_partition_and_reproducibility():
    blocks = list(paths.block_streams(seed=7, campaign_id=3, n_paths=10_000))
    assert [b[1] for b in blocks] == [4096, 4096, 1808]
    assert [b[0] for b in blocks] == [0, 1, 2]
    again = list(paths.block_streams(seed=7, campaign_id=3, n_paths=10_000))
    for (_, _, g1), (_, _, g2) in zip(blocks, again):
        assert np.array_equal(g1.random(5), g2.random(5))
    other = list(paths.block_streams(seed=7, campaign_id=4, n_paths=10_000))
    assert not np.array_equal(blocks[0][2].random(5), other[0][2].random(5))


# ---------------------------------------------------------------------------
# driving Lévy process


def test_levy_feller_is_brownian():
    mech = mechanism.feller_mechanism()  # sigma^2 = 2, no drift, no jumps
    cfg = SimConfig(dt=0.01, t_max=1.0, n_paths=1)
    n = 20_000
    out = paths.levy_block(mech, cfg, gen(11), n)
    y = out["values"]
    assert abs(y.mean()) < 3.0 * math.sqrt(2.0 / n)
    assert abs(y.var() - 2.0) < 0.1


def test_levy_laplace_exponent_stable():
    # E e^{-x Y_t} = e^{t Psi(x)} for the compensated driver
    mech = mechanism.stable_mechanism()
    x, t = 1.0, 0.5
    cfg = SimConfig(dt=0.01, t_max=t, eps_jump=0.005)
    n = 20_000
    y = paths.levy_block(mech, cfg, gen(12), n)["values"]
    est = np.exp(-x * y)
    target = math.exp(t * mechanism.psi_eval(mech, x))
    assert abs(est.mean() - target) < 4.0 * est.std() / math.sqrt(n)


# ---------------------------------------------------------------------------
# logistic branching SDE


def test_lcb_noiseless_matches_logistic_ode():
    mech = logistic_mechanism(gamma=1.0, c=2.0)
    cfg = SimConfig(dt=0.05, t_max=2.0)
    path = paths.simulate_lcb_euler(mech, cfg, gen(13), z0=0.7)
    # the exponential substep is exact, so composition equals the flow
    for t, v in zip(path.times, path.values):
        assert v == pytest.approx(logistic_solution(0.7, 1.0, 1.0, t), rel=1e-10)
    assert path.status == "alive-at-horizon"


def test_lcb_noiseless_driftless_case():
    mech = logistic_mechanism(gamma=0.0, c=2.0)
    cfg = SimConfig(dt=0.1, t_max=1.0)
    path = paths.simulate_lcb_euler(mech, cfg, gen(14), z0=2.0)
    assert path.values[-1] == pytest.approx(logistic_solution(2.0, 0.0, 1.0, 1.0), rel=1e-10)


def test_lcb_zero_start_is_absorbed():
    mech = mechanism.feller_mechanism()
    cfg = SimConfig(dt=0.01, t_max=0.5)
    out = paths.lcb_block(mech, cfg, gen(15), 16, 0.0)
    assert np.all(out["status"] == 1)  # absorbed-zero
    assert np.all(out["values"] == 0.0)
    assert np.all(out["lifetime"] == pytest.approx(cfg.dt))


def test_lcb_dyadic_levels_from_start():
    mech = logistic_mechanism(gamma=0.0, c=2.0)
    cfg = SimConfig(dt=0.1, t_max=0.5)
    out = paths.lcb_block(mech, cfg, gen(16), 1, 8.0)
    levels = out["levels"][0]
    assert levels[:4].all()       # 1, 2, 4, 8 reached at the start
    assert not levels[4:].any()   # decreasing path never reaches 16


def test_lcb_progeny_is_time_integral():
    mech = logistic_mechanism(gamma=1.0, c=2.0)
    cfg = SimConfig(dt=0.01, t_max=1.0)
    path = paths.simulate_lcb_euler(mech, cfg, gen(17), z0=0.5)
    trapezoid = np.trapezoid(path.values, path.times)
    assert path.progeny == pytest.approx(trapezoid, rel=1e-10)


def test_lcb_infimum_below_grid_minimum():
    mech = mechanism.feller_mechanism()
    cfg = SimConfig(dt=0.01, t_max=1.0)
    out = paths.lcb_block(mech, cfg, gen(18), 256, 1.0, record=True)
    grid_min = out["trajectory"].min(axis=0)
    finite = np.isfinite(grid_min)
    assert np.all(out["infimum"][finite] <= grid_min[finite] + 1e-12)


def test_lcb_same_stream_is_bit_identical():
    mech = mechanism.stable_mechanism()
    cfg = SimConfig(dt=0.01, t_max=0.5)
    a = paths.lcb_block(mech, cfg, gen(19, 0), 64, 1.0)
    b = paths.lcb_block(mech, cfg, gen(19, 0), 64, 1.0)
    assert np.array_equal(a["values"], b["values"], equal_nan=True)
    assert np.array_equal(a["status"], b["status"])
    c = paths.lcb_block(mech, cfg, gen(19, 1), 64, 1.0)
    assert not np.array_equal(a["values"], c["values"], equal_nan=True)


def test_lcb_checkpoint_off_grid_rejected():
    mech = mechanism.feller_mechanism()
    cfg = SimConfig(dt=0.01, t_max=0.5)
    with pytest.raises(ValueError):
        paths.lcb_block(mech, cfg, gen(20), 4, 1.0, checkpoints=[0.7])


def test_conditioned_needs_transform():
    mech = mechanism.feller_mechanism()
    with pytest.raises(ValueError):
        paths.lcb_block(mech, SimConfig(), gen(21), 4, 1.0, conditioned=True)


def test_conditioned_avoids_zero(feller_ht):
    cfg = SimConfig(dt=0.005, t_max=1.0)
    out = paths.lcb_block(feller_ht.mech, cfg, gen(22), 2000, 1.0, ht=feller_ht, conditioned=True)
    st = out["status"]
    # zero is inaccessible under the transformed law; rare Euler crossings
    # are a discretization artifact and must stay marginal
    assert np.mean((st == 1) | (st == 2)) < 0.01
    assert np.sum(st == 3) > 0                  # some killing at this horizon


def test_weighted_unconditioned_weight(feller_ht):
    cfg = SimConfig(dt=0.01, t_max=0.5)
    path, w = paths.weighted_unconditioned(feller_ht, cfg, gen(23), 1.0)
    assert path.weight == w
    z_t = path.values[-1]
    assert w == pytest.approx(float(feller_ht.h(z_t) / feller_ht.h(1.0)), rel=1e-6)


# ---------------------------------------------------------------------------
# competition-free conditioned dynamics


def test_cb_conditioning_requires_no_competition():
    mech = mechanism.feller_mechanism()  # c = 2
    with pytest.raises(ValueError):
        paths.lcb_block(mech, SimConfig(), gen(24), 4, 1.0, cb_immigration=True)


def test_cb_conditioned_critical_mean_grows_linearly():
    # critical CB conditioned on survival: E Z_t = z0 + sigma^2 t
    mech = mechanism.feller_mechanism(gamma=0.0, c=0.0)
    t = 1.0
    cfg = SimConfig(dt=0.005, t_max=t)
    n = 20_000
    out = paths.lcb_block(mech, cfg, gen(25), n, 1.0, cb_immigration=True)
    z = out["values"]
    alive = np.isfinite(z)
    assert alive.mean() > 0.99
    target = 1.0 + mech.sigma**2 * t
    assert abs(z[alive].mean() - target) < 4.0 * z[alive].std() / math.sqrt(alive.sum())


def test_cb_subcritical_killing_observed():
    mech = mechanism.feller_mechanism(gamma=-0.5, c=0.0)
    cfg = SimConfig(dt=0.01, t_max=4.0)
    out = paths.lcb_block(mech, cfg, gen(26), 2000, 1.0, cb_immigration=True)
    killed = out["status"] == 3
    assert killed.sum() > 100
    assert np.all(np.isfinite(out["lifetime"][killed]))


# ---------------------------------------------------------------------------
# dual diffusions


def test_besq_step_dimension_two_mean():
    rng = gen(27)
    x = np.full(40_000, 0.7)
    c, dt = 1.5, 0.05
    x1 = paths._besq_step(rng, x, c, dt, 2)
    assert np.all(x1 > 0.0)
    target = 0.7 + 0.25 * c * 2 * dt
    assert abs(x1.mean() - target) < 4.0 * x1.std() / 200.0


def test_besq_step_dimension_zero_atom():
    rng = gen(28)
    c, dt = 1.0, 0.1
    x = np.full(40_000, 0.01)
    x1 = paths._besq_step(rng, x, c, dt, 0)
    p_zero = math.exp(-0.01 / (0.5 * c * dt))
    frac = np.mean(x1 == 0.0)
    assert abs(frac - p_zero) < 4.0 * math.sqrt(p_zero * (1 - p_zero) / 40_000)
    assert abs(x1.mean() - 0.01) < 4.0 * x1.std() / 200.0


def test_dual_u_absorbs_exactly():
    mech = mechanism.feller_mechanism()
    cfg = SimConfig(dt=0.01, t_max=3.0)
    out = paths.dual_u_block(mech, cfg, gen(29), 2000, 0.3)
    absorbed = out["status"] == 1
    assert absorbed.mean() > 0.2
    assert np.all(out["values"][absorbed] == 0.0)


def test_dual_v_never_absorbs():
    mech = mechanism.stable_mechanism()
    cfg = SimConfig(dt=0.005, t_max=0.5)
    out = paths.dual_v_block(mech, cfg, gen(30), 2000, 0.05)
    assert np.sum(out["status"] == 1) == 0
    finite = np.isfinite(out["values"])
    assert np.all(out["values"][finite] > 0.0)


def test_s_of_v_is_supermartingale(feller_ht):
    sc = feller_ht.scale
    cfg = SimConfig(dt=0.005, t_max=0.5)
    out = paths.dual_v_block(feller_ht.mech, cfg, gen(31), 8000, 0.5, checkpoints=[0.5])
    v = out["checkpoints"][0]
    s = np.where(np.isfinite(v), sc.S_eval(np.clip(v, sc.x_min, None)), 0.0)
    assert s.mean() < float(sc.S_eval(0.5)) + 3.0 * s.std() / math.sqrt(8000)


def test_v_down_always_reaches_zero(feller_ht):
    cfg = SimConfig(dt=0.005, t_max=30.0)
    out = paths.v_down_block(feller_ht.scale, cfg, gen(32), 500, 1.0)
    assert np.all(out["status"] == 1)


def test_dual_diffusions_need_competition():
    mech = mechanism.feller_mechanism(c=0.0)
    with pytest.raises(ValueError):
        paths.dual_u_block(mech, SimConfig(), gen(33), 4, 1.0)


# ---------------------------------------------------------------------------
# auxiliary-process representation


def test_gou_deterministic_matches_logistic():
    mech = logistic_mechanism(gamma=1.0, c=2.0)
    cfg = SimConfig(dt=0.001, t_max=1.0)
    out = paths.gou_block(mech, cfg, gen(34), 1, 0.7, checkpoints=[0.5, 1.0])
    for j, t in enumerate([0.5, 1.0]):
        assert out["checkpoints"][j, 0] == pytest.approx(
            logistic_solution(0.7, 1.0, 1.0, t), rel=2e-2
        )


def test_gou_agrees_with_direct_simulation_feller():
    mech = mechanism.feller_mechanism()
    t = 0.5
    cfg = SimConfig(dt=0.002, t_max=t)
    n = 8000
    direct = paths.lcb_block(mech, cfg, gen(35, 0), n, 1.0, checkpoints=[t])["checkpoints"][0]
    via_gou = paths.gou_block(mech, cfg, gen(35, 1), n, 1.0, checkpoints=[t])["checkpoints"][0]
    d = np.maximum(direct[np.isfinite(direct)], 0.0)
    g = np.maximum(via_gou[np.isfinite(via_gou)], 0.0)
    se = math.hypot(d.std() / math.sqrt(d.size), g.std() / math.sqrt(g.size))
    assert abs(d.mean() - g.mean()) < 4.0 * se


def test_gou_rejects_nonpositive_start():
    mech = mechanism.feller_mechanism()
    with pytest.raises(ValueError):
        paths.gou_block(mech, SimConfig(), gen(36), 4, 0.0)


# ---------------------------------------------------------------------------
# wrappers


def test_single_path_wrappers_shapes(feller_ht):
    mech = feller_ht.mech
    cfg = SimConfig(dt=0.01, t_max=0.5)
    for path in [
        paths.simulate_levy(mech, cfg, gen(40)),
        paths.simulate_lcb_euler(mech, cfg, gen(41), 1.0),
        paths.simulate_gou_and_timechange(mech, cfg, gen(42), 1.0),
        paths.simulate_U(mech, cfg, gen(43), 1.0),
        paths.simulate_V(mech, cfg, gen(44), 1.0),
        paths.simulate_V_down(feller_ht, cfg, gen(45), 1.0),
        paths.simulate_conditioned(feller_ht, cfg, gen(46), 1.0),
        paths.simulate_cb_conditioned(
            mechanism.feller_mechanism(c=0.0), cfg, gen(47), 1.0
        ),
    ]:
        assert isinstance(path, Path)
        assert len(path.times) == cfg.n_steps + 1
        assert len(path.values) == len(path.times)
        assert path.status in paths.STATUS_NAMES
