"""Path simulation: the driving Lévy process, the logistic branching SDE, its
dual diffusions, and the conditioned (h-transformed) dynamics.

All simulators come in two layers.  The *_block kernels advance a whole block
of paths as numpy arrays with a single counter-based RNG stream per block,
which is what the Monte Carlo campaigns consume; the simulate_* wrappers run
one recorded path and return a Path object.  Streams are keyed by
(master seed, campaign id, block index) so results are reproducible and
independent of how blocks are scheduled across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .mechanism import (
    Mechanism,
    discretize_pi,
    jump_mean_between,
    jump_square_below,
    jump_tail_mass,
    psi_fast,
    psi_prime_at_zero,
)
from .analytic import HTransform, ScaleTable

__all__ = [
    "SimConfig",
    "Path",
    "STATUS_NAMES",
    "BLOCK_SIZE",
    "block_streams",
    "levy_block",
    "gou_block",
    "lcb_block",
    "dual_u_block",
    "dual_v_block",
    "v_down_block",
    "simulate_levy",
    "simulate_gou_and_timechange",
    "simulate_lcb_euler",
    "simulate_U",
    "simulate_V",
    "simulate_V_down",
    "simulate_conditioned",
    "weighted_unconditioned",
    "simulate_cb_conditioned",
]

# terminal status codes
ALIVE, ABSORBED_ZERO, EXTINCT, KILLED, EXPLODED = range(5)
STATUS_NAMES = ("alive-at-horizon", "absorbed-zero", "extinct-numerically", "killed", "exploded")

BLOCK_SIZE = 4096
_EXTINCT_STREAK = 10          # consecutive sub-floor steps before declaring extinction
_N_LEVELS = 32                # dyadic levels 2^0 .. 2^31 tracked by the running max


@dataclass(frozen=True)
class SimConfig:
    """Discretization and campaign parameters shared by every simulator."""

    dt: float = 0.01
    eps_jump: float = 0.01
    t_max: float = 1.0
    n_paths: int = 10_000
    seed: int = 0
    small_jump_mode: str = "auto"   # auto | discard | gaussian-compensate
    diffusion_scheme: str = "euler-full-truncation"
    explosion_cap: float = 1e9
    extinction_floor: float = 1e-9

    def __post_init__(self):
        if self.dt <= 0 or self.t_max <= 0:
            raise ValueError("dt and t_max must be > 0")
        if self.eps_jump <= 0:
            raise ValueError("eps_jump must be > 0")
        if not (self.extinction_floor < 1.0 < self.explosion_cap):
            raise ValueError("need extinction_floor < 1 < explosion_cap")
        if self.small_jump_mode not in ("auto", "discard", "gaussian-compensate"):
            raise ValueError(f"unknown small_jump_mode {self.small_jump_mode!r}")
        if self.diffusion_scheme not in ("euler-full-truncation", "milstein-full-truncation"):
            raise ValueError(f"unknown diffusion_scheme {self.diffusion_scheme!r}")
        if self.n_paths <= 0:
            raise ValueError("n_paths must be > 0")

    @property
    def n_steps(self) -> int:
        return max(int(round(self.t_max / self.dt)), 1)


@dataclass
class Path:
    """One recorded trajectory."""

    times: np.ndarray
    values: np.ndarray
    status: str
    lifetime: float
    progeny: float
    weight: float | None = None


def block_streams(seed: int, campaign_id: int, n_paths: int, block_size: int = BLOCK_SIZE):
    """Yield (block_index, block_n, Generator) with one Philox stream per block."""
    start = 0
    index = 0
    while start < n_paths:
        n = min(block_size, n_paths - start)
        ss = np.random.SeedSequence([int(seed), int(campaign_id), int(index)])
        yield index, n, np.random.Generator(np.random.Philox(ss))
        start += n
        index += 1


# ---------------------------------------------------------------------------
# jump machinery


class _JumpKit:
    """Per-(mechanism, config) sampling plumbing for the jump part.

    Simulated jumps are those above eps_jump; jumps in (eps, 1] enter the SDE
    compensated, so their mean is subtracted from the linear drift.  Discarded
    sub-eps jumps are compensated martingales (no drift correction); in
    gaussian-compensate mode their variance is folded into the diffusion.
    """

    def __init__(self, mech: Mechanism, cfg: SimConfig):
        pi = mech.pi
        self.rate = 0.0
        self.comp = 0.0
        self.small_var = 0.0
        self.disc = None
        self.mode = "discard"
        if pi.kind != "none":
            eps = cfg.eps_jump
            self.rate = jump_tail_mass(pi, eps)
            self.disc = discretize_pi(pi, eps)
            if eps < 1.0:
                self.comp = jump_mean_between(pi, eps, 1.0)
            v2 = jump_square_below(pi, eps)
            self.v2_below = v2
            mode = cfg.small_jump_mode
            if mode == "auto":
                mode = "gaussian-compensate" if v2 > 0.01 * max(mech.sigma**2, 1e-12) else "discard"
            self.mode = mode
            if mode == "gaussian-compensate":
                self.small_var = v2
        else:
            self.v2_below = 0.0
        self.gamma_eff = mech.gamma - self.comp
        self.sig2_eff = mech.sigma**2 + self.small_var

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.disc.sample(rng, n)


def _scatter_jumps(z: np.ndarray, counts: np.ndarray, sizes: np.ndarray) -> None:
    if sizes.size:
        idx = np.repeat(np.arange(z.size), counts)
        np.add.at(z, idx, sizes)


def _verhulst(z: np.ndarray, g: float, chalf: float, dt: float) -> np.ndarray:
    """Exact step of dz = g z - chalf z^2 over dt (reduces to e^{g dt} scaling
    when chalf = 0)."""
    if abs(g) > 1e-12:
        factor = math.expm1(g * dt) / g
    else:
        factor = dt
    return z * math.exp(g * dt) / (1.0 + chalf * z * factor)


def _milstein_term(scheme: str, diff2: float, noise: np.ndarray, dt: float) -> np.ndarray | float:
    # for sqrt-coefficient diffusions the correction is (diff2/4)((N^2 - 1) dt)
    if scheme == "milstein-full-truncation":
        return 0.25 * diff2 * (noise * noise - 1.0) * dt
    return 0.0


# ---------------------------------------------------------------------------
# Lévy process


def levy_block(
    mech: Mechanism,
    cfg: SimConfig,
    rng: np.random.Generator,
    n: int,
    y0: float = 0.0,
    checkpoints=None,
    record: bool = False,
) -> dict:
    """Spectrally positive Lévy process with Laplace exponent matching Psi:
    E e^{-x Y_t} = e^{-x y0 + t Psi(x)}."""
    kit = _JumpKit(mech, cfg)
    dt, steps = cfg.dt, cfg.n_steps
    y = np.full(n, float(y0))
    cp_idx = _checkpoint_indices(checkpoints, cfg)
    cp_vals = np.empty((len(cp_idx), n)) if cp_idx else None
    rec = [y.copy()] if record else None
    sig = math.sqrt(kit.sig2_eff * dt)
    for step in range(1, steps + 1):
        y = y + kit.gamma_eff * dt + sig * rng.standard_normal(n)
        if kit.rate > 0.0:
            counts = rng.poisson(kit.rate * dt, n)
            _scatter_jumps(y, counts, kit.sample(rng, int(counts.sum())))
        if cp_vals is not None and step in cp_idx:
            cp_vals[cp_idx.index(step)] = y
        if rec is not None:
            rec.append(y.copy())
    out = {
        "values": y,
        "status": np.zeros(n, dtype=np.int8),
        "lifetime": np.full(n, np.inf),
        "progeny": np.zeros(n),
    }
    if cp_vals is not None:
        out["checkpoints"] = cp_vals
    if rec is not None:
        out["trajectory"] = np.asarray(rec)
    return out


def _checkpoint_indices(checkpoints, cfg: SimConfig) -> list:
    if checkpoints is None:
        return []
    idx = []
    for t in checkpoints:
        k = int(round(t / cfg.dt))
        if not (0 < k <= cfg.n_steps):
            raise ValueError(f"checkpoint {t} outside (0, t_max] on the dt grid")
        idx.append(k)
    return idx


# ---------------------------------------------------------------------------
# logistic branching SDE and its conditioned variants


def lcb_block(
    mech: Mechanism,
    cfg: SimConfig,
    rng: np.random.Generator,
    n: int,
    z0,
    *,
    ht: HTransform | None = None,
    conditioned: bool = False,
    cb_immigration: bool = False,
    checkpoints=None,
    record: bool = False,
) -> dict:
    """Block step of dZ = sigma sqrt(Z) dB + gamma Z dt + jumps - (c/2) Z^2 dt.

    conditioned=True superposes the h-transform terms: extra drift
    sigma^2 b(Z), immigration jumps with intensity q(Z,y) pi(dy) (thinned
    against the envelope (z/h(z)) h(y)), and killing at rate k(Z) via the
    cumulative-hazard construction.  cb_immigration=True instead adds the
    c = 0 conditioning: immigration subordinator with drift sigma^2 and jump
    measure y pi(dy), killed at an independent exponential time with rate
    Psi'(0+).
    """
    if conditioned and ht is None:
        raise ValueError("conditioned dynamics need an HTransform")
    if cb_immigration:
        if mech.c != 0.0:
            raise ValueError("the competition-free conditioning requires c = 0")
        rho = psi_prime_at_zero(mech)
        if not (rho >= 0.0):
            raise ValueError("conditioning at c = 0 requires Psi'(0+) >= 0")

    kit = _JumpKit(mech, cfg)
    dt, steps = cfg.dt, cfg.n_steps
    chalf = 0.5 * mech.c
    cap, floor = cfg.explosion_cap, cfg.extinction_floor

    z = np.broadcast_to(np.asarray(z0, dtype=float), (n,)).copy()
    if np.any(z < 0):
        raise ValueError("z0 must be >= 0")
    status = np.zeros(n, dtype=np.int8)
    lifetime = np.full(n, np.inf)
    progeny = np.zeros(n)
    infimum = z.copy()
    pre_terminal = z.copy()
    low_streak = np.zeros(n, dtype=np.int32)
    levels = np.zeros((n, _N_LEVELS), dtype=bool)
    level_vals = 2.0 ** np.arange(_N_LEVELS)
    levels |= z[:, None] >= level_vals[None, :]

    if conditioned:
        hazard = np.zeros(n)
        hazard_cut = rng.exponential(size=n)
        disc = kit.disc
        if disc is not None:
            env_pts = np.concatenate([disc.cell_hi, disc.atom_sizes, [disc.cap]])
            env_h = ht.h_vec(env_pts)
            masses = np.concatenate([disc.cell_mass, disc.atom_rates, [disc.lump_mass]])
            imm_weight = float(np.sum(masses * env_h))
            if not math.isfinite(imm_weight):
                raise ArithmeticError("immigration envelope integral of h is not finite")
        else:
            imm_weight = 0.0
    if cb_immigration:
        kill_time = rng.exponential(1.0 / rho, size=n) if rho > 0 else np.full(n, np.inf)
        disc = kit.disc
        if disc is not None:
            env_pts = np.concatenate([disc.cell_hi, disc.atom_sizes, [disc.cap]])
            masses = np.concatenate([disc.cell_mass, disc.atom_rates, [disc.lump_mass]])
            cb_rate = float(np.sum(masses * env_pts))
            if not math.isfinite(cb_rate):
                raise ArithmeticError("size-biased jump measure has infinite mass above eps")
        else:
            cb_rate = 0.0

    cp_idx = _checkpoint_indices(checkpoints, cfg)
    cp_vals = np.empty((len(cp_idx), n)) if cp_idx else None
    rec = [z.copy()] if record else None

    for step in range(1, steps + 1):
        alive = status == ALIVE
        zs = np.where(alive, np.maximum(z, 0.0), 0.0)

        # the jump compensator enters additively, mirroring how the jumps it
        # compensates are added, so their means cancel exactly per step; only
        # the smooth gamma/competition drift uses the exact logistic substep
        z_new = _verhulst(zs, mech.gamma, chalf, dt) - zs * kit.comp * dt
        noise = rng.standard_normal(n)
        z_new = z_new + np.sqrt(kit.sig2_eff * zs * dt) * noise
        z_new = z_new + _milstein_term(cfg.diffusion_scheme, kit.sig2_eff, noise, dt)

        # running-infimum refinement: exact Brownian-bridge minimum of the
        # continuous part between grid points (jumps are upward and cannot
        # lower the bridge), removes the sqrt(dt) monitoring bias
        if kit.sig2_eff > 0.0:
            # in s = sqrt(z) coordinates the noise has constant volatility
            # sigma/2, so the bridge respects the vanishing diffusion at 0
            s0, s1 = np.sqrt(zs), np.sqrt(np.maximum(z_new, 0.0))
            gap2 = (s1 - s0) ** 2 - 0.5 * kit.sig2_eff * dt * np.log(
                np.maximum(rng.random(n), 1e-300)
            )
            s_min = 0.5 * (s0 + s1 - np.sqrt(np.maximum(gap2, 0.0)))
            bridge_min = np.maximum(s_min, 0.0) ** 2
        else:
            bridge_min = np.minimum(zs, z_new)

        if conditioned:
            bz = ht.b(zs)
            # sub-eps immigration enters as drift b(z) * int_0^eps y^2 pi(dy)
            z_new = z_new + (mech.sigma**2 * bz + bz * kit.v2_below) * dt
        if cb_immigration:
            z_new = z_new + (mech.sigma**2 + kit.v2_below) * dt

        if kit.rate > 0.0:
            counts = rng.poisson(np.where(alive, zs, 0.0) * kit.rate * dt)
            _scatter_jumps(z_new, counts, kit.sample(rng, int(counts.sum())))

        if conditioned and imm_weight > 0.0:
            lam = np.where(alive, ht.z_over_h(zs), 0.0) * imm_weight
            counts = rng.poisson(lam * dt)
            total = int(counts.sum())
            if total:
                sizes = kit.disc.sample(rng, total, cell_weights=env_h)
                owner = np.repeat(np.arange(n), counts)
                k_cell = np.searchsorted(kit.disc.cell_hi, sizes, side="left")
                in_cell = k_cell < kit.disc.cell_hi.size
                env_y = np.where(in_cell, kit.disc.cell_hi[np.minimum(k_cell, kit.disc.cell_hi.size - 1)], sizes)
                u = rng.random(total)
                z_owner = zs[owner]
                gain = ht.h_vec(z_owner + sizes) - ht.h_vec(z_owner)
                accept = u * ht.h_vec(env_y) < gain
                if np.any(accept):
                    np.add.at(z_new, owner[accept], sizes[accept])

        if cb_immigration and cb_rate > 0.0:
            counts = rng.poisson(np.where(alive, cb_rate, 0.0) * dt)
            total = int(counts.sum())
            if total:
                sizes = kit.disc.sample(rng, total, cell_weights=env_pts)
                owner = np.repeat(np.arange(n), counts)
                k_cell = np.searchsorted(kit.disc.cell_hi, sizes, side="left")
                in_cell = k_cell < kit.disc.cell_hi.size
                env_y = np.where(in_cell, kit.disc.cell_hi[np.minimum(k_cell, kit.disc.cell_hi.size - 1)], sizes)
                accept = rng.random(total) * env_y < sizes
                if np.any(accept):
                    np.add.at(z_new, owner[accept], sizes[accept])

        z_new = np.where(alive, z_new, z)
        progeny = progeny + np.where(alive, 0.5 * (zs + np.clip(z_new, 0.0, cap)) * dt, 0.0)
        t_now = step * dt

        if conditioned:
            hazard = hazard + np.where(alive, ht.k(zs) * dt, 0.0)
            newly_killed = alive & (hazard >= hazard_cut)
        elif cb_immigration:
            newly_killed = alive & (t_now >= kill_time)
        else:
            newly_killed = np.zeros(n, dtype=bool)

        newly_exploded = alive & ~newly_killed & (z_new >= cap)
        newly_absorbed = alive & ~newly_killed & ~newly_exploded & (z_new <= 0.0)
        low = alive & ~newly_killed & ~newly_exploded & ~newly_absorbed & (z_new < floor)
        low_streak = np.where(low, low_streak + 1, 0)
        newly_extinct = low & (low_streak >= _EXTINCT_STREAK)

        pre_terminal = np.where(alive & (newly_killed | newly_exploded), zs, pre_terminal)
        term = newly_killed | newly_exploded | newly_absorbed | newly_extinct
        lifetime = np.where(term, t_now, lifetime)
        status = np.where(newly_killed, KILLED, status)
        status = np.where(newly_exploded, EXPLODED, status)
        status = np.where(newly_absorbed, ABSORBED_ZERO, status)
        status = np.where(newly_extinct, EXTINCT, status)

        z = np.where(newly_killed | newly_exploded, np.inf, z_new)
        z = np.where(newly_absorbed | newly_extinct, 0.0, z)

        stepped = alive  # paths that moved during this step
        step_min = np.minimum(np.maximum(bridge_min, 0.0), np.maximum(np.minimum(z, z_new), 0.0))
        # a path killed inside the step was only exposed for part of it; the
        # endpoint minimum avoids over-counting the unobserved remainder
        step_min = np.where(newly_killed, np.maximum(np.minimum(zs, z_new), 0.0), step_min)
        infimum = np.where(stepped, np.minimum(infimum, step_min), infimum)
        infimum = np.where(newly_absorbed | newly_extinct, 0.0, infimum)
        levels |= (np.where(np.isfinite(z), z, np.where(status == EXPLODED, cap, 0.0))[:, None]
                   >= level_vals[None, :])

        if cp_vals is not None and step in cp_idx:
            cp_vals[cp_idx.index(step)] = z
        if rec is not None:
            rec.append(z.copy())

    out = {
        "values": z,
        "status": status,
        "lifetime": lifetime,
        "progeny": progeny,
        "infimum": infimum,
        "pre_terminal": pre_terminal,
        "levels": levels,
    }
    if cp_vals is not None:
        out["checkpoints"] = cp_vals
    if rec is not None:
        out["trajectory"] = np.asarray(rec)
    return out


# ---------------------------------------------------------------------------
# GOU representation with Lamperti time change


def gou_block(
    mech: Mechanism,
    cfg: SimConfig,
    rng: np.random.Generator,
    n: int,
    z0,
    checkpoints=None,
    max_clock_factor: float = 400.0,
) -> dict:
    """Z through the auxiliary process R solving R = Y - (c/2) int R du and the
    clock theta_u = int_0^u ds / R_s: Z_t = R at the u where theta reaches t.

    The R grid runs at cfg.dt in the auxiliary time u; the total progeny of Z
    equals the u-clock value at the zero hitting of R, which is recorded
    exactly.  Checkpoints are Z-times; values are R at the first grid point
    where theta crosses them.
    """
    kit = _JumpKit(mech, cfg)
    dt = cfg.dt
    cap = cfg.explosion_cap
    r = np.broadcast_to(np.asarray(z0, dtype=float), (n,)).copy()
    if np.any(r <= 0):
        raise ValueError("z0 must be > 0")
    theta = np.zeros(n)
    status = np.zeros(n, dtype=np.int8)
    lifetime = np.full(n, np.inf)
    progeny = np.zeros(n)
    cps = sorted(checkpoints) if checkpoints is not None else []
    for t in cps:
        if not (0 < t <= cfg.t_max):
            raise ValueError(f"checkpoint {t} outside (0, t_max]")
    cp_vals = np.full((len(cps), n), np.nan)
    done_cp = np.zeros((len(cps), n), dtype=bool)
    values_at_t = np.full(n, np.nan)
    max_steps = int(math.ceil(max_clock_factor * cfg.t_max / dt))
    sig = math.sqrt(kit.sig2_eff * dt)

    for step in range(1, max_steps + 1):
        active = status == ALIVE
        if not np.any(active):
            break
        rs = np.maximum(r, 1e-300)
        dy = kit.gamma_eff * dt + sig * rng.standard_normal(n)
        if kit.rate > 0.0:
            counts = rng.poisson(np.where(active, kit.rate * dt, 0.0))
            jumps = np.zeros(n)
            _scatter_jumps(jumps, counts, kit.sample(rng, int(counts.sum())))
            dy = dy + jumps
        r_new = np.where(active, r + dy - chalf_dt(mech, r, dt), r)
        d_theta = np.where(active, dt / rs, 0.0)
        theta_new = theta + d_theta
        u_now = step * dt

        hit_zero = active & (r_new <= 0.0)
        reach_t = active & ~hit_zero & (theta_new >= cfg.t_max)
        explode = active & ~hit_zero & (r_new >= cap)

        for j, t in enumerate(cps):
            crossing = active & ~done_cp[j] & (theta_new >= t)
            cp_vals[j, crossing] = np.maximum(r_new[crossing], 0.0)
            done_cp[j] |= crossing | ~active
        # absorbed: Z dies at theta of the crossing, total progeny = u-clock
        lifetime = np.where(hit_zero | explode, theta_new, lifetime)
        progeny = np.where(hit_zero, u_now, progeny)
        status = np.where(hit_zero, ABSORBED_ZERO, status)
        values_at_t = np.where(hit_zero, 0.0, values_at_t)
        status = np.where(explode, EXPLODED, status)
        values_at_t = np.where(explode, np.inf, values_at_t)
        values_at_t = np.where(reach_t, r_new, values_at_t)
        progeny = np.where(reach_t, u_now, progeny)
        status = np.where(reach_t, ALIVE, status)
        # freeze finished-at-horizon paths by marking them inactive via theta
        theta = np.where(reach_t, np.inf, theta_new)
        r = np.where(status == ALIVE, r_new, r)
        status = np.where(reach_t, np.int8(-1), status)  # sentinel: done alive

    unfinished = status == ALIVE
    status = np.where(status == np.int8(-1), ALIVE, status)
    values_at_t = np.where(unfinished, r, values_at_t)
    for j in range(len(cps)):
        cp_vals[j] = np.where(np.isnan(cp_vals[j]),
                              np.where(status == ABSORBED_ZERO, 0.0, values_at_t), cp_vals[j])
    out = {
        "values": values_at_t,
        "status": status,
        "lifetime": lifetime,
        "progeny": progeny,
        "unfinished": int(np.sum(unfinished)),
    }
    if cps:
        out["checkpoints"] = cp_vals
    return out


def chalf_dt(mech: Mechanism, r: np.ndarray, dt: float) -> np.ndarray:
    return 0.5 * mech.c * r * dt


# ---------------------------------------------------------------------------
# dual diffusions


def _besq_step(rng: np.random.Generator, x: np.ndarray, c: float, dt: float, df: int) -> np.ndarray:
    """Exact transition over dt of dX = sqrt(c X) dB + (c df / 4) dt, a scaled
    Bessel-square process of dimension df.  For df = 0 the chi-square mixture
    has an exact atom at 0, reproducing absorption without truncation bias."""
    scale = 0.25 * c * dt
    nc = x / scale
    if df > 0:
        return scale * rng.noncentral_chisquare(float(df), nc)
    return 2.0 * scale * rng.standard_gamma(rng.poisson(0.5 * nc))


def _diffusion_block(
    extra_drift,
    c: float,
    cfg: SimConfig,
    rng: np.random.Generator,
    n: int,
    x0,
    checkpoints=None,
    record: bool = False,
    *,
    besq_df: int = 0,
    absorb: bool = True,
) -> dict:
    """Split-step scheme for dX = sqrt(c X) dB + (c besq_df/4 + extra_drift(X)) dt.

    The Bessel-square part (noise plus its matching constant drift) is stepped
    with its exact chi-square transition, so behaviour at the 0 boundary is
    reproduced without the bias of truncated Euler schemes; the remaining
    drift is added explicitly.  Paths are absorbed at 0 when absorb=True,
    reflected otherwise (an entrance boundary), and declared exploded past
    explosion_cap."""
    if c <= 0.0:
        raise ValueError("the dual diffusions need c > 0")
    dt, steps = cfg.dt, cfg.n_steps
    cap = cfg.explosion_cap
    x = np.broadcast_to(np.asarray(x0, dtype=float), (n,)).copy()
    status = np.zeros(n, dtype=np.int8)
    lifetime = np.full(n, np.inf)
    cp_idx = _checkpoint_indices(checkpoints, cfg)
    cp_vals = np.empty((len(cp_idx), n)) if cp_idx else None
    rec = [x.copy()] if record else None
    for step in range(1, steps + 1):
        alive = status == ALIVE
        xs = np.where(alive, np.maximum(x, 0.0), 0.0)
        x_new = _besq_step(rng, xs, c, dt, besq_df) + extra_drift(xs) * dt
        x_new = np.where(alive, x_new, x)
        t_now = step * dt
        absorbed = alive & (x_new <= 0.0) if absorb else np.zeros(n, dtype=bool)
        if not absorb:
            x_new = np.where(alive, np.maximum(x_new, 0.0), x_new)
        exploded = alive & ~absorbed & (x_new >= cap)
        lifetime = np.where(absorbed | exploded, t_now, lifetime)
        status = np.where(absorbed, ABSORBED_ZERO, status)
        status = np.where(exploded, EXPLODED, status)
        x = np.where(absorbed, 0.0, np.where(exploded, np.inf, x_new))
        if cp_vals is not None and step in cp_idx:
            cp_vals[cp_idx.index(step)] = x
        if rec is not None:
            rec.append(x.copy())
    out = {
        "values": x,
        "status": status,
        "lifetime": lifetime,
        "progeny": np.zeros(n),
    }
    if cp_vals is not None:
        out["checkpoints"] = cp_vals
    if rec is not None:
        out["trajectory"] = np.asarray(rec)
    return out


def dual_u_block(mech, cfg, rng, n, x0, checkpoints=None, record=False) -> dict:
    """dU = sqrt(cU) dB - Psi(U) dt; 0 is an exit boundary (dimension-0
    Bessel-square noise part, so absorption at 0 is exact)."""
    psi = psi_fast(mech)
    return _diffusion_block(
        lambda x: -psi(x), mech.c, cfg, rng, n, x0, checkpoints, record,
        besq_df=0, absorb=True,
    )


def dual_v_block(mech, cfg, rng, n, y0, checkpoints=None, record=False) -> dict:
    """dV = sqrt(cV) dB + (c/2 + Psi(V)) dt; the noise plus the c/2 drift is a
    dimension-2 Bessel-square part, for which 0 is an entrance boundary, and
    infinity attracts."""
    psi = psi_fast(mech)
    return _diffusion_block(
        psi, mech.c, cfg, rng, n, y0, checkpoints, record,
        besq_df=2, absorb=False,
    )


def v_down_block(scale: ScaleTable, cfg, rng, n, y0, checkpoints=None, record=False) -> dict:
    """The dual diffusion conditioned to hit 0: extra drift c V S'(V)/S(V) =
    -c e^{-I(V)} / S(V) pulls every path into the origin."""
    mech = scale.mech
    psi = psi_fast(mech)
    c = mech.c

    def drift(x):
        xs = np.maximum(x, scale.x_min)
        pull = -c * np.exp(-np.clip(scale.exp_integral(xs), -700.0, 700.0)) / scale.S_eval(xs)
        return psi(x) + pull

    return _diffusion_block(drift, c, cfg, rng, n, y0, checkpoints, record, besq_df=2, absorb=True)


# ---------------------------------------------------------------------------
# single-path wrappers


def _grid(cfg: SimConfig) -> np.ndarray:
    return np.arange(cfg.n_steps + 1) * cfg.dt


def _to_path(cfg: SimConfig, out: dict, weight: float | None = None) -> Path:
    return Path(
        times=_grid(cfg),
        values=out["trajectory"][:, 0],
        status=STATUS_NAMES[int(out["status"][0])],
        lifetime=float(out["lifetime"][0]),
        progeny=float(out["progeny"][0]),
        weight=weight,
    )


def simulate_levy(mech: Mechanism, cfg: SimConfig, stream: np.random.Generator, y0: float = 0.0) -> Path:
    return _to_path(cfg, levy_block(mech, cfg, stream, 1, y0, record=True))


def simulate_lcb_euler(mech: Mechanism, cfg: SimConfig, stream, z0: float) -> Path:
    return _to_path(cfg, lcb_block(mech, cfg, stream, 1, z0, record=True))


def simulate_gou_and_timechange(mech: Mechanism, cfg: SimConfig, stream, z0: float) -> Path:
    # checkpoint every grid time to expose Z on its own clock
    ts = _grid(cfg)[1:]
    out = gou_block(mech, cfg, stream, 1, z0, checkpoints=ts)
    values = np.concatenate([[z0], out["checkpoints"][:, 0]])
    return Path(
        times=_grid(cfg),
        values=values,
        status=STATUS_NAMES[int(out["status"][0])],
        lifetime=float(out["lifetime"][0]),
        progeny=float(out["progeny"][0]),
    )


def simulate_U(mech: Mechanism, cfg: SimConfig, stream, x0_state: float) -> Path:
    out = dual_u_block(mech, cfg, stream, 1, x0_state, record=True)
    return _to_path(cfg, out)


def simulate_V(mech: Mechanism, cfg: SimConfig, stream, y0: float) -> Path:
    out = dual_v_block(mech, cfg, stream, 1, y0, record=True)
    return _to_path(cfg, out)


def simulate_V_down(ht: HTransform, cfg: SimConfig, stream, y0: float) -> Path:
    out = v_down_block(ht.scale, cfg, stream, 1, y0, record=True)
    return _to_path(cfg, out)


def simulate_conditioned(ht: HTransform, cfg: SimConfig, stream, z0: float) -> Path:
    out = lcb_block(ht.mech, cfg, stream, 1, z0, ht=ht, conditioned=True, record=True)
    return _to_path(cfg, out)


def weighted_unconditioned(
    ht: HTransform, cfg: SimConfig, stream, z0: float, t: float | None = None
) -> tuple[Path, float]:
    """Plain trajectory with the change-of-measure weight h(Z_t)/h(z0)."""
    if z0 <= 0:
        raise ValueError("z0 must be > 0")
    if t is None:
        t = cfg.t_max
    out = lcb_block(ht.mech, cfg, stream, 1, z0, checkpoints=[t], record=True)
    z_t = float(out["checkpoints"][0, 0])
    w = float(ht.h_vec(np.asarray(z_t)) / ht.h_vec(np.asarray(float(z0)))) if np.isfinite(z_t) else 0.0
    path = _to_path(cfg, out, weight=w)
    return path, w


def simulate_cb_conditioned(mech: Mechanism, cfg: SimConfig, stream, z0: float) -> Path:
    out = lcb_block(mech, cfg, stream, 1, z0, cb_immigration=True, record=True)
    return _to_path(cfg, out)
