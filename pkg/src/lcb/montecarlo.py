"""Monte Carlo campaigns and statistical verdicts for the process identities.

Every check compares two estimates (or an estimate against an analytic value)
and returns a Verdict with a margin in joint standard errors or as a KS
p-value.  Campaigns draw from block-keyed counter streams and reduce block
sums in index order with exact summation, so results are bit-identical for
any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .mechanism import Mechanism, psi_eval, psi_inverse, psi_prime_at_zero
from .analytic import HTransform, f_theta_eval
from .paths import SimConfig, block_streams, dual_u_block, dual_v_block, lcb_block

__all__ = [
    "McEstimate",
    "Verdict",
    "collect_campaign",
    "mc_mean",
    "check_laplace_duality",
    "check_siegmund_duality",
    "check_biduality",
    "check_h_supermartingale",
    "check_infimum_law",
    "check_progeny_lt",
    "check_lifetime_exponential",
    "check_killing_dichotomy",
    "check_conditioning_limit",
    "check_two_constructions",
    "check_entrance_from_zero",
]

Z3 = 3.0  # default criterion: three joint standard errors

# fixed campaign-id bases so the two sides of every comparison use documented,
# independent streams derived from the one master seed
_CID = {
    "laplace": 100,
    "siegmund": 200,
    "biduality": 300,
    "supermartingale": 400,
    "infimum": 500,
    "progeny": 600,
    "lifetime": 700,
    "dichotomy": 800,
    "conditioning": 900,
    "two-constructions": 1000,
    "entrance": 1100,
}


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with its standard error."""

    mean: float
    stderr: float
    n: int
    clevel: float = 0.997

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be >= 0")

    @property
    def half_width(self) -> float:
        return float(stats.norm.ppf(0.5 + 0.5 * self.clevel)) * self.stderr


@dataclass
class Verdict:
    name: str
    lhs: float
    rhs: float
    passed: bool
    margin: float
    detail: str = ""
    subresults: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# campaign engine


def collect_campaign(block_fn, n_paths: int, seed: int, campaign_id: int, workers: int = 1) -> dict:
    """Run block_fn(rng, n) -> dict-of-arrays over every block and concatenate
    the results in block order.  The per-block streams make the output
    independent of the worker count."""
    specs = list(block_streams(seed, campaign_id, n_paths))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: block_fn(s[2], s[1]), specs))
    else:
        results = [block_fn(rng, n) for _, n, rng in specs]
    keys = results[0].keys()
    return {k: np.concatenate([np.atleast_1d(r[k]) for r in results]) for k in keys}


def _fsum(x: np.ndarray) -> float:
    # exact summation: the reduction result does not depend on scheduling
    return math.fsum(x.tolist())


def mc_mean(values: np.ndarray, clevel: float = 0.997) -> McEstimate:
    values = np.asarray(values, dtype=float)
    n = values.size
    m = _fsum(values) / n
    var = _fsum((values - m) ** 2) / max(n - 1, 1)
    return McEstimate(mean=m, stderr=math.sqrt(var / n), n=n, clevel=clevel)


def batched_se(values: np.ndarray, n_batches: int = 10) -> float:
    """SE from batch means; a correlated-stream sanity check against the
    pooled SE."""
    chunks = np.array_split(np.asarray(values, dtype=float), n_batches)
    means = np.array([_fsum(c) / c.size for c in chunks])
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def _joint(a: McEstimate, b: McEstimate) -> float:
    return math.hypot(a.stderr, b.stderr)


def _two_sided(name, lhs: McEstimate, rhs: McEstimate, detail="") -> Verdict:
    se = max(_joint(lhs, rhs), 1e-300)
    margin = abs(lhs.mean - rhs.mean) / se
    return Verdict(name, lhs.mean, rhs.mean, margin < Z3, margin, detail)


# ---------------------------------------------------------------------------
# shared statistic kernels


def _laplace_stat(values: np.ndarray, x: float) -> np.ndarray:
    # frozen states carry the right limits: absorbed 0 -> 1, exploded inf -> 0
    with np.errstate(over="ignore"):
        return np.where(np.isfinite(values), np.exp(-x * np.maximum(values, 0.0)), 0.0)


def _h_at(ht: HTransform, values: np.ndarray) -> np.ndarray:
    return np.asarray(ht.h_vec(np.clip(values, 1e-8, 1e9)))


# ---------------------------------------------------------------------------
# duality checks


def check_laplace_duality(mech: Mechanism, cfg: SimConfig, z: float, x: float, t: float,
                          workers: int = 1) -> Verdict:
    """E_z e^{-x Z_t} against E_x e^{-z U_t} from independent campaigns."""
    base = _CID["laplace"]
    zs = collect_campaign(
        lambda rng, n: {"v": lcb_block(mech, cfg, rng, n, z, checkpoints=[t])["checkpoints"][0]},
        cfg.n_paths, cfg.seed, base, workers)["v"]
    us = collect_campaign(
        lambda rng, n: {"v": dual_u_block(mech, cfg, rng, n, x, checkpoints=[t])["checkpoints"][0]},
        cfg.n_paths, cfg.seed, base + 1, workers)["v"]
    lhs = mc_mean(_laplace_stat(zs, x))
    rhs = mc_mean(_laplace_stat(us, z))
    return _two_sided(f"laplace-duality z={z} x={x} t={t}", lhs, rhs)


def check_siegmund_duality(mech: Mechanism, cfg: SimConfig, x: float, y: float, t: float,
                           workers: int = 1) -> Verdict:
    """P_x(U_t <= y) against P_y(V_t >= x)."""
    base = _CID["siegmund"]
    us = collect_campaign(
        lambda rng, n: {"v": dual_u_block(mech, cfg, rng, n, x, checkpoints=[t])["checkpoints"][0]},
        cfg.n_paths, cfg.seed, base, workers)["v"]
    vs = collect_campaign(
        lambda rng, n: {"v": dual_v_block(mech, cfg, rng, n, y, checkpoints=[t])["checkpoints"][0]},
        cfg.n_paths, cfg.seed, base + 1, workers)["v"]
    lhs = mc_mean((us <= y).astype(float))      # absorbed U is frozen at 0 <= y
    rhs = mc_mean((vs >= x).astype(float))      # exploded V is frozen at inf >= x
    return _two_sided(f"siegmund-duality x={x} y={y} t={t}", lhs, rhs)


def _log_gl_nodes(lo: float, hi: float, n_nodes: int = 24):
    # Gauss-Legendre in log y, good for kernels spread over decades
    gx, gw = np.polynomial.legendre.leggauss(n_nodes)
    llo, lhi = math.log(lo), math.log(hi)
    ly = 0.5 * (lhi - llo) * gx + 0.5 * (lhi + llo)
    ys = np.exp(ly)
    return ys, 0.5 * (lhi - llo) * gw * ys


def check_biduality(mech: Mechanism, cfg: SimConfig, z: float, x: float, t: float,
                    workers: int = 1) -> Verdict:
    """E_z e^{-x Z_t} against int_0^inf z e^{-zy} P_y(V_t >= x) dy, the right
    side by V campaigns from quadrature launch points."""
    base = _CID["biduality"]
    zs = collect_campaign(
        lambda rng, n: {"v": lcb_block(mech, cfg, rng, n, z, checkpoints=[t])["checkpoints"][0]},
        cfg.n_paths, cfg.seed, base, workers)["v"]
    lhs = mc_mean(_laplace_stat(zs, x))

    y_lo, y_hi = 2e-3 / z, 25.0 / z
    nodes, weights = _log_gl_nodes(y_lo, y_hi)
    n_per = max(cfg.n_paths // nodes.size, 256)
    total, var = 0.0, 0.0
    for i, (y0, w) in enumerate(zip(nodes, weights)):
        vs = collect_campaign(
            lambda rng, n, y0=y0: {
                "v": dual_v_block(mech, cfg, rng, n, y0, checkpoints=[t])["checkpoints"][0]
            },
            n_per, cfg.seed, base + 10 + i, workers)["v"]
        p = mc_mean((vs >= x).astype(float))
        kern = w * z * math.exp(-z * y0)
        total += kern * p.mean
        var += (kern * p.stderr) ** 2
    # truncation: the integrand is bounded by the kernel mass outside [lo, hi]
    trunc = (1.0 - math.exp(-z * y_lo)) + math.exp(-z * y_hi)
    rhs = McEstimate(total, math.sqrt(var), nodes.size * n_per)
    se = max(_joint(lhs, rhs), 1e-300)
    margin = max(abs(lhs.mean - rhs.mean) - trunc, 0.0) / se
    return Verdict(
        f"biduality z={z} x={x} t={t}", lhs.mean, rhs.mean, margin < Z3, margin,
        detail=f"quadrature truncation bound {trunc:.2e}",
    )


# ---------------------------------------------------------------------------
# supermartingale property of h


def check_h_supermartingale(ht: HTransform, cfg: SimConfig, z: float, t_list,
                            workers: int = 1) -> Verdict:
    """Strict decrease of E_z h(Z_t), plus the dual representation
    E_z h(Z_t) = int z e^{-zy} E_y[S(V_t)] dy as a bracketed comparison.

    Paths frozen at the explosion cap bound h(Z_t) between 0 and the cap
    value, so the strictness test uses the conservative upper score and the
    dual representation is matched against the bracket."""
    mech = ht.mech
    base = _CID["supermartingale"]
    t_list = list(t_list)
    cps = collect_campaign(
        lambda rng, n: {"cp": lcb_block(mech, cfg, rng, n, z, checkpoints=t_list)["checkpoints"].T},
        cfg.n_paths, cfg.seed, base, workers)["cp"]
    h_z = float(ht.h(z))
    h_cap = float(ht.h(1e9))
    subs = []
    worst = math.inf
    all_pass = True
    for j, t in enumerate(t_list):
        vals = cps[:, j]
        finite = np.isfinite(vals)
        low = mc_mean(np.where(finite, _h_at(ht, np.maximum(vals, 0.0)), 0.0))
        high = mc_mean(np.where(finite, _h_at(ht, np.maximum(vals, 0.0)), h_cap))
        margin = (h_z - high.mean) / max(high.stderr, 1e-300)
        ok = margin > Z3
        all_pass &= ok
        worst = min(worst, margin)
        subs.append(Verdict(f"h-strict-decrease t={t}", high.mean, h_z, ok, margin,
                            detail=f"exploded-bracket low {low.mean:.6g}"))

    # dual representation at the first horizon
    t0 = t_list[0]
    sc = ht.scale
    y_lo, y_hi = 5e-3 / z, 20.0 / z
    nodes, weights = _log_gl_nodes(y_lo, y_hi)
    n_per = max(cfg.n_paths // (2 * nodes.size), 256)
    total, var = 0.0, 0.0
    for i, (y0, w) in enumerate(zip(nodes, weights)):
        vs = collect_campaign(
            lambda rng, n, y0=y0: {
                "v": dual_v_block(mech, cfg, rng, n, y0, checkpoints=[t0])["checkpoints"][0]
            },
            n_per, cfg.seed, base + 10 + i, workers)["v"]
        sv = np.where(np.isfinite(vs), sc.S_eval(np.clip(vs, sc.x_min, None)), 0.0)
        est = mc_mean(sv)
        kern = w * z * math.exp(-z * y0)
        total += kern * est.mean
        var += (kern * est.stderr) ** 2
    # E_y S(V_t) <= S(y), so both cut-off tails are bounded by the S integral
    from scipy.integrate import quad
    head = z * quad(lambda y: float(sc.S_eval(max(y, sc.x_min))), 0.0, y_lo)[0]
    tail = math.exp(-z * y_hi) * float(sc.S_eval(y_hi))
    rhs = McEstimate(total, math.sqrt(var), nodes.size * n_per)
    finite0 = np.isfinite(cps[:, 0])
    h_vals0 = _h_at(ht, np.maximum(cps[:, 0], 0.0))
    lhs_t0_low = mc_mean(np.where(finite0, h_vals0, 0.0))
    lhs_t0_high = mc_mean(np.where(finite0, h_vals0, h_cap))
    lhs_lo = lhs_t0_low.mean - Z3 * lhs_t0_low.stderr
    lhs_hi = lhs_t0_high.mean + Z3 * lhs_t0_high.stderr
    rhs_lo = rhs.mean - Z3 * rhs.stderr
    rhs_hi = rhs.mean + Z3 * rhs.stderr + head + tail
    rep_ok = (lhs_lo <= rhs_hi) and (rhs_lo <= lhs_hi)
    subs.append(Verdict(
        f"h-dual-representation t={t0}", lhs_t0_high.mean, rhs.mean, rep_ok,
        margin=0.0 if rep_ok else abs(lhs_t0_high.mean - rhs.mean) / max(rhs.stderr, 1e-300),
        detail=f"lhs bracket [{lhs_lo:.6g}, {lhs_hi:.6g}] vs rhs [{rhs_lo:.6g}, {rhs_hi:.6g}]",
    ))
    all_pass &= rep_ok
    return Verdict(
        f"h-supermartingale z={z}", subs[0].lhs, h_z, all_pass, worst,
        detail="; ".join(f"{s.name}: {'pass' if s.passed else 'FAIL'}" for s in subs),
        subresults=subs,
    )


# ---------------------------------------------------------------------------
# infimum law under the conditioned dynamics


def check_infimum_law(ht: HTransform, cfg: SimConfig, z: float, a_list,
                      workers: int = 1) -> Verdict:
    """Empirical P(inf Z <= a) over conditioned paths against h(a)/h(z), a
    Bonferroni-corrected sweep over the levels."""
    a_list = list(a_list)
    inf_vals = collect_campaign(
        lambda rng, n: {
            "inf": lcb_block(ht.mech, cfg, rng, n, z, ht=ht, conditioned=True)["infimum"]
        },
        cfg.n_paths, cfg.seed, _CID["infimum"], workers)["inf"]
    crit = float(stats.norm.ppf(1.0 - 0.0027 / (2 * len(a_list))))
    subs = []
    worst = 0.0
    h_z = float(ht.h(z))
    for a in a_list:
        est = mc_mean((inf_vals <= a).astype(float))
        target = float(ht.h(a)) / h_z
        m = abs(est.mean - target) / max(est.stderr, 1e-300)
        worst = max(worst, m)
        subs.append(Verdict(f"infimum a={a}", est.mean, target, m < crit, m))
    ok = all(s.passed for s in subs)
    return Verdict(
        f"infimum-law z={z}", subs[0].lhs, subs[0].rhs, ok, worst,
        detail=f"Bonferroni threshold {crit:.2f} SE over {len(a_list)} levels",
        subresults=subs,
    )


# ---------------------------------------------------------------------------
# progeny Laplace transform


def check_progeny_lt(mech: Mechanism, scale, cfg: SimConfig, z: float, theta_list,
                     workers: int = 1) -> Verdict:
    """MC E_z e^{-theta J} against f_theta(z)/f_theta(0), or e^{-z Psi^{-1}(theta)}
    when there is no competition.  Unfinished paths contribute a truncation
    bar: their e^{-theta J} lies between 0 and the partial-J value."""
    out = collect_campaign(
        lambda rng, n: _progeny_block(mech, cfg, rng, n, z),
        cfg.n_paths, cfg.seed, _CID["progeny"], workers)
    progeny, status = out["progeny"], out["status"]
    done = status != 0
    subs = []
    worst = 0.0
    for theta in theta_list:
        e = np.exp(-theta * progeny)
        stat = np.where(done, np.where(status == 4, 0.0, e), 0.0)
        trunc = _fsum(np.where(~done, e, 0.0)) / progeny.size
        est = mc_mean(stat)
        if mech.c > 0:
            target = float(f_theta_eval(scale, theta, z) / f_theta_eval(scale, theta, 0.0))
        else:
            target = math.exp(-z * psi_inverse(mech, theta))
        gap = abs(est.mean - target)
        m = max(gap - trunc, 0.0) / max(est.stderr, 1e-300)
        worst = max(worst, m)
        subs.append(Verdict(
            f"progeny theta={theta}", est.mean, target, m < Z3, m,
            detail=f"truncation bar {trunc:.2e}, unfinished {int((~done).sum())}",
        ))
    ok = all(s.passed for s in subs)
    return Verdict(f"progeny-lt z={z}", subs[0].lhs, subs[0].rhs, ok, worst,
                   detail="; ".join(s.detail for s in subs), subresults=subs)


def _progeny_block(mech, cfg, rng, n, z):
    out = lcb_block(mech, cfg, rng, n, z)
    return {"progeny": out["progeny"], "status": out["status"].astype(np.int8)}


# ---------------------------------------------------------------------------
# competition-free lifetime law


def check_lifetime_exponential(mech: Mechanism, cfg: SimConfig, z: float,
                               workers: int = 1) -> Verdict:
    """KS test of conditioned-CB killing times against Exp(rho); in the
    critical case the verdict is the absence of killing."""
    if mech.c != 0.0:
        raise ValueError("the lifetime law applies to the competition-free case")
    rho = psi_prime_at_zero(mech)
    out = collect_campaign(
        lambda rng, n: _lifetime_block(mech, cfg, rng, n, z),
        cfg.n_paths, cfg.seed, _CID["lifetime"], workers)
    killed = out["status"] == 3
    if rho <= 0.0:
        n_killed = int(killed.sum())
        return Verdict(
            f"lifetime-critical z={z}", float(n_killed), 0.0, n_killed == 0,
            margin=float(n_killed), detail=f"{cfg.n_paths} paths to horizon {cfg.t_max}",
        )
    lifetimes = out["lifetime"][killed]
    res = stats.kstest(lifetimes, "expon", args=(0.0, 1.0 / rho))
    return Verdict(
        f"lifetime-exponential z={z}", float(res.statistic), 0.0,
        res.pvalue >= 0.01, float(res.pvalue),
        detail=f"KS on {lifetimes.size} killed lifetimes vs Exp({rho:g}), p={res.pvalue:.4f}",
    )


def _lifetime_block(mech, cfg, rng, n, z):
    out = lcb_block(mech, cfg, rng, n, z, cb_immigration=True)
    return {"status": out["status"].astype(np.int8), "lifetime": out["lifetime"]}


# ---------------------------------------------------------------------------
# killing dichotomy


def check_killing_dichotomy(ht: HTransform, cfg: SimConfig, z: float,
                            workers: int = 1) -> Verdict:
    """ell > 0: killed fraction significantly positive with finite pre-kill
    values; ell = 0: no killing, and every exploding path has crossed every
    dyadic level below the cap."""
    out = collect_campaign(
        lambda rng, n: _dichotomy_block(ht, cfg, rng, n, z),
        cfg.n_paths, cfg.seed, _CID["dichotomy"], workers)
    status = out["status"]
    killed = status == 3
    if ht.ell > 0.0:
        frac = mc_mean(killed.astype(float))
        margin = frac.mean / max(frac.stderr, 1e-300)
        finite_prekill = bool(np.all(np.isfinite(out["pre_terminal"][killed])))
        ok = margin > Z3 and finite_prekill
        return Verdict(
            f"dichotomy ell>0 z={z}", frac.mean, 0.0, ok, margin,
            detail=f"killed {int(killed.sum())}/{status.size}, finite pre-kill: {finite_prekill}",
        )
    n_killed = int(killed.sum())
    exploded = status == 4
    n_levels = int(math.floor(math.log2(cfg.explosion_cap)))
    crossed_all = bool(np.all(out["levels"][exploded][:, :n_levels])) if exploded.any() else True
    ok = n_killed == 0 and exploded.any() and crossed_all
    return Verdict(
        f"dichotomy ell=0 z={z}", float(n_killed), 0.0, ok, float(n_killed),
        detail=(f"exploded {int(exploded.sum())}/{status.size}, "
                f"all dyadic levels below cap crossed: {crossed_all}"),
    )


def _dichotomy_block(ht, cfg, rng, n, z):
    out = lcb_block(ht.mech, cfg, rng, n, z, ht=ht, conditioned=True)
    return {
        "status": out["status"].astype(np.int8),
        "pre_terminal": out["pre_terminal"],
        "levels": out["levels"][:, :31],
    }


# ---------------------------------------------------------------------------
# conditioning as a limit


def check_conditioning_limit(ht: HTransform, cfg: SimConfig, z: float, t: float,
                             theta_list, workers: int = 1) -> Verdict:
    """P_z(Z_t in B, t <= T | J >= T) with T an independent Exp clock of mean
    1/theta, along a decreasing theta sequence with common random numbers,
    against the conditioned-process value of P(Z_t in B, t < lifetime)."""
    theta_list = sorted(theta_list, reverse=True)
    lo, hi = 0.5 * z, 2.0 * z
    base = _CID["conditioning"]
    out = collect_campaign(
        lambda rng, n: _cond_limit_block(ht.mech, cfg, rng, n, z, t),
        cfg.n_paths, cfg.seed, base, workers)
    clocks = collect_campaign(
        lambda rng, n: {"e": rng.exponential(size=n)},
        cfg.n_paths, cfg.seed, base + 1, workers)["e"]
    zt, progeny, status = out["zt"], out["progeny"], out["status"]
    in_b = np.isfinite(zt) & (zt > lo) & (zt < hi)
    complete = status != 0
    # exploded paths have infinite progeny; unfinished ones at least J-so-far
    j_low = np.where(status == 4, np.inf, progeny)

    target_vals = collect_campaign(
        lambda rng, n: {
            "zt": lcb_block(ht.mech, cfg, rng, n, z, ht=ht, conditioned=True,
                            checkpoints=[t])["checkpoints"][0]
        },
        cfg.n_paths, cfg.seed, base + 2, workers)["zt"]
    tgt_in_b = np.isfinite(target_vals) & (target_vals > lo) & (target_vals < hi)
    rhs = mc_mean(tgt_in_b.astype(float))

    gaps = []
    subs = []
    last_est = None
    for theta in theta_list:
        T = clocks / theta
        accept = j_low >= T
        # incomplete paths with j-so-far < T have unknown acceptance; they are
        # rare at long horizons and are dropped from both numerator and denominator
        valid = complete | accept
        n_acc = int((accept & valid).sum())
        if n_acc == 0:
            subs.append(Verdict(f"conditioning theta={theta}", math.nan, rhs.mean, False, math.inf))
            continue
        num = (accept & in_b & (T >= t)).sum()
        p = num / n_acc
        est = McEstimate(p, math.sqrt(max(p * (1 - p), 1e-12) / n_acc), n_acc)
        last_est = est
        gap = abs(est.mean - rhs.mean)
        gaps.append(gap)
        subs.append(Verdict(f"conditioning theta={theta}", est.mean, rhs.mean, True,
                            gap / max(_joint(est, rhs), 1e-300),
                            detail=f"{n_acc} accepted"))
    endpoint_margin = subs[-1].margin
    endpoint_ok = endpoint_margin < Z3
    trend_ok = all(
        gaps[i + 1] <= gaps[i] + 2.0 * (last_est.stderr if last_est else 0.0)
        for i in range(len(gaps) - 1)
    )
    ok = endpoint_ok and trend_ok
    return Verdict(
        f"conditioning-limit z={z} t={t}", subs[-1].lhs, rhs.mean, ok, endpoint_margin,
        detail=f"gaps along theta {[f'{g:.4f}' for g in gaps]}, trend ok: {trend_ok}",
        subresults=subs,
    )


def _cond_limit_block(mech, cfg, rng, n, z, t):
    out = lcb_block(mech, cfg, rng, n, z, checkpoints=[t])
    return {
        "zt": out["checkpoints"][0],
        "progeny": out["progeny"],
        "status": out["status"].astype(np.int8),
    }


# ---------------------------------------------------------------------------
# two constructions of the conditioned process


def check_two_constructions(ht: HTransform, cfg: SimConfig, z: float, t: float,
                            test_functions=None, workers: int = 1) -> Verdict:
    """E[f(Z_t); t < lifetime] under the conditioned SDE against the
    h-weighted unconditioned estimate E_z[f(Z_t) h(Z_t)] / h(z)."""
    if test_functions is None:
        test_functions = [
            ("laplace-1", lambda v: np.exp(-np.maximum(v, 0.0))),
            ("box", lambda v: ((v > 0.5 * z) & (v < 2.0 * z)).astype(float)),
        ]
    base = _CID["two-constructions"]
    cond = collect_campaign(
        lambda rng, n: {
            "zt": lcb_block(ht.mech, cfg, rng, n, z, ht=ht, conditioned=True,
                            checkpoints=[t])["checkpoints"][0]
        },
        cfg.n_paths, cfg.seed, base, workers)["zt"]
    plain = collect_campaign(
        lambda rng, n: {
            "zt": lcb_block(ht.mech, cfg, rng, n, z, checkpoints=[t])["checkpoints"][0]
        },
        cfg.n_paths, cfg.seed, base + 1, workers)["zt"]
    h_z = float(ht.h(z))
    weights = np.where(np.isfinite(plain), _h_at(ht, np.maximum(plain, 0.0)), 0.0) / h_z
    subs = []
    worst = 0.0
    for fname, f in test_functions:
        with np.errstate(invalid="ignore"):
            lhs = mc_mean(np.where(np.isfinite(cond), f(np.maximum(cond, 0.0)), 0.0))
            fv = np.where(np.isfinite(plain), f(np.maximum(plain, 0.0)), 0.0)
        rhs = mc_mean(fv * weights)
        v = _two_sided(f"two-constructions f={fname}", lhs, rhs)
        worst = max(worst, v.margin)
        subs.append(v)
    ok = all(s.passed for s in subs)
    return Verdict(f"two-constructions z={z} t={t}", subs[0].lhs, subs[0].rhs, ok, worst,
                   subresults=subs)


# ---------------------------------------------------------------------------
# entrance from zero


def check_entrance_from_zero(ht: HTransform, cfg: SimConfig, x: float = 1.0, t: float = 0.25,
                             z_list=(0.1, 0.01, 0.001), below_one_cell=(5.0, 0.1),
                             workers: int = 1) -> Verdict:
    """Laplace functionals of the conditioned process along a vanishing
    z-sequence: successive gaps shrink and the endpoint matches the direct
    z = 0 simulation; additionally the entrance law stays strictly below 1 at
    a large-x short-t cell."""
    base = _CID["entrance"]
    ests = []
    for i, z0 in enumerate(list(z_list) + [0.0]):
        vals = collect_campaign(
            lambda rng, n, z0=z0: {
                "zt": lcb_block(ht.mech, cfg, rng, n, z0, ht=ht, conditioned=True,
                                checkpoints=[t])["checkpoints"][0]
            },
            cfg.n_paths, cfg.seed, base + i, workers)["zt"]
        ests.append(mc_mean(_laplace_stat(vals, x)))
    gaps = [abs(a.mean - b.mean) for a, b in zip(ests, ests[1:])]
    cauchy_ok = all(g2 <= g1 + 2.0 * _joint(ests[0], ests[-1]) for g1, g2 in zip(gaps, gaps[1:]))
    final_se = _joint(ests[-2], ests[-1])
    match_margin = gaps[-1] / max(final_se, 1e-300)
    match_ok = match_margin < Z3

    xb, tb = below_one_cell
    cfg_b = SimConfig(**{**cfg.__dict__, "t_max": tb})
    vals_b = collect_campaign(
        lambda rng, n: {
            "zt": lcb_block(ht.mech, cfg_b, rng, n, 0.0, ht=ht, conditioned=True,
                            checkpoints=[tb])["checkpoints"][0]
        },
        cfg.n_paths, cfg.seed, base + 50, workers)["zt"]
    below = mc_mean(_laplace_stat(vals_b, xb))
    below_margin = (1.0 - below.mean) / max(below.stderr, 1e-300)
    below_ok = below_margin > Z3

    ok = cauchy_ok and match_ok and below_ok
    return Verdict(
        f"entrance-from-zero x={x} t={t}", ests[-2].mean, ests[-1].mean, ok,
        match_margin,
        detail=(f"gaps {[f'{g:.4f}' for g in gaps]}, cauchy: {cauchy_ok}; "
                f"below-1 at (x={xb}, t={tb}): {below.mean:.4f} "
                f"({below_margin:.1f} SE below 1)"),
    )
