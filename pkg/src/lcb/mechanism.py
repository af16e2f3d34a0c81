"""Branching mechanisms and regime classification.

A mechanism is the data (sigma, gamma, pi, c, x0) defining

    Psi(x) = (sigma^2/2) x^2 - gamma x + int_0^inf (e^{-xy} - 1 + xy 1_{y<=1}) pi(dy)

together with the quadratic competition rate c and the reference point x0
used by downstream scale-function integrals.  Everything downstream (scale
tables, excessive functions, simulators) consumes a Mechanism.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "JumpMeasure",
    "Mechanism",
    "RegimeReport",
    "stable_mechanism",
    "neveu_mechanism",
    "feller_mechanism",
    "slow_log_mechanism",
    "psi_eval",
    "psi_eval_components",
    "psi_prime",
    "psi_prime_at_zero",
    "psi_inverse",
    "classify",
    "jump_mean_between",
    "jump_square_below",
    "jump_tail_mass",
    "jump_log_moment_finite",
    "jump_mean_tail_finite",
    "PiDiscretization",
    "discretize_pi",
    "mechanism_hash",
]

EULER_GAMMA = float(np.euler_gamma)


# ---------------------------------------------------------------------------
# Jump measures


@dataclass(frozen=True)
class JumpMeasure:
    """Levy measure pi on (0, inf) with int (1 ^ y^2) pi(dy) < inf.

    kind is one of:
      "none"              -- no jumps.
      "stable-tail"       -- density C y^{-1-alpha}, alpha in (1,2), where C is
                             chosen so the Levy-Khintchine integral equals
                             a x^alpha minus a linear term; parameters (alpha, a).
      "compound-poisson"  -- finitely many atoms (size, rate).
      "tabulated-density" -- log-linear density on a grid, extended past the
                             last point by coef * y^{-tail_power} * (log y)^{-tail_log_power}.
      "neveu-implied"     -- density y^{-2} dy on (0, inf).
    """

    kind: str
    alpha: float | None = None
    a: float | None = None
    atoms: tuple[tuple[float, float], ...] | None = None
    y_grid: tuple[float, ...] | None = None
    density: tuple[float, ...] | None = None
    tail_power: float | None = None
    tail_log_power: float | None = None
    tail_coef: float | None = None

    def __post_init__(self):
        if self.kind == "stable-tail":
            if not (1.0 < self.alpha < 2.0):
                raise ValueError("stable-tail requires alpha in (1,2)")
            if self.a <= 0:
                raise ValueError("stable-tail requires a > 0")
        elif self.kind == "compound-poisson":
            if not self.atoms:
                raise ValueError("compound-poisson requires at least one atom")
            for size, rate in self.atoms:
                if size <= 0 or rate < 0:
                    raise ValueError("atom sizes must be > 0, rates >= 0")
        elif self.kind == "tabulated-density":
            g = np.asarray(self.y_grid, dtype=float)
            d = np.asarray(self.density, dtype=float)
            if g.ndim != 1 or g.size < 2 or d.shape != g.shape:
                raise ValueError("tabulated-density needs matching grid/density arrays")
            if g[0] <= 0 or np.any(np.diff(g) <= 0):
                raise ValueError("grid must be positive and strictly increasing")
            if np.any(d < 0):
                raise ValueError("densities must be nonnegative")
            eta, beta = self.tail_power, self.tail_log_power
            if eta is None or beta is None or self.tail_coef is None:
                raise ValueError("tabulated-density needs tail metadata")
            # integrability of the declared tail: eta > 1, or eta = 1 with beta > 1
            if not (eta > 1.0 or (eta == 1.0 and beta > 1.0)):
                raise ValueError("tail not integrable: need eta>1 or eta=1, beta>1")
            if self._numeric_one_wedge_sq() > 1e12:
                raise ValueError("int (1 ^ y^2) pi(dy) numerically infinite")
        elif self.kind not in ("none", "neveu-implied"):
            raise ValueError(f"unknown jump measure kind {self.kind!r}")

    def _numeric_one_wedge_sq(self) -> float:
        """Numeric check of int (1 ^ y^2) pi(dy) for tabulated measures."""
        total = _tab_grid_integral(self, lambda y: np.minimum(1.0, y * y))
        total += _tab_tail_integral(self, lambda y: np.ones_like(y))
        return total

    @property
    def stable_c(self) -> float:
        """Density constant C with pi(dy) = C y^{-1-alpha} dy."""
        al = self.alpha
        return self.a * al * (al - 1.0) / special.gamma(2.0 - al)


def _tab_segments(jm: JumpMeasure):
    """Per-segment (y_lo, y_hi, d_lo, exponent) of the log-linear density."""
    g = np.asarray(jm.y_grid, dtype=float)
    d = np.asarray(jm.density, dtype=float)
    with np.errstate(divide="ignore"):
        logd = np.log(np.maximum(d, 1e-300))
    slopes = np.diff(logd) / np.diff(np.log(g))
    return g[:-1], g[1:], d[:-1], slopes


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _powerlaw_cell_integral(f, y_lo, y_hi, d_lo, p):
    """int_{y_lo}^{y_hi} f(y) d_lo (y/y_lo)^p dy by Gauss-Legendre in log y."""
    t_lo, t_hi = np.log(y_lo), np.log(y_hi)
    half, mid = 0.5 * (t_hi - t_lo), 0.5 * (t_hi + t_lo)
    t = mid + half * _GL_NODES
    y = np.exp(t)
    dens = d_lo * (y / y_lo) ** p
    return half * float(np.sum(_GL_WEIGHTS * f(y) * dens * y))


def _tab_grid_integral(jm: JumpMeasure, f) -> float:
    total = 0.0
    for y_lo, y_hi, d_lo, p in zip(*_tab_segments(jm)):
        total += _powerlaw_cell_integral(f, y_lo, y_hi, d_lo, p)
    return total


_GL64_NODES, _GL64_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _tab_tail_integral(jm: JumpMeasure, f) -> float:
    """int over the declared tail, substituting t = log y."""
    t0 = math.log(jm.y_grid[-1])
    eta, beta, coef = jm.tail_power, jm.tail_log_power, jm.tail_coef
    if coef == 0.0:
        return 0.0
    if eta == 1.0 and beta == 2.0:
        # exact substitution u = 1/t maps to a finite interval
        half = 0.5 / t0
        u = half + half * _GL64_NODES
        y = np.exp(np.minimum(1.0 / u, 700.0))  # f must be bounded at infinity
        return coef * half * float(np.sum(_GL64_WEIGHTS * f(y)))

    def g(t):
        y = math.exp(min(t, 700.0))
        return float(f(np.asarray([y]))[0]) * coef * math.exp((1.0 - eta) * t) * t ** (-beta)

    val, _ = integrate.quad(g, t0, np.inf, limit=200)
    return val


def _tab_integral(jm: JumpMeasure, f) -> float:
    return _tab_grid_integral(jm, f) + _tab_tail_integral(jm, f)


def jump_tail_mass(jm: JumpMeasure, eps: float) -> float:
    """pi([eps, inf))."""
    if jm.kind == "none":
        return 0.0
    if jm.kind == "stable-tail":
        return jm.stable_c * eps ** (-jm.alpha) / jm.alpha
    if jm.kind == "neveu-implied":
        return 1.0 / eps
    if jm.kind == "compound-poisson":
        return sum(r for s, r in jm.atoms if s >= eps)
    # tabulated
    total = 0.0
    for y_lo, y_hi, d_lo, p in zip(*_tab_segments(jm)):
        lo = max(y_lo, eps)
        if lo >= y_hi:
            continue
        total += _powerlaw_cell_integral(lambda y: np.ones_like(y), lo, y_hi, d_lo * (lo / y_lo) ** p, p)
    total += _tab_tail_mass_from(jm, max(eps, jm.y_grid[-1]))
    return total


def _tab_tail_mass_from(jm: JumpMeasure, y_from: float) -> float:
    """Mass of the declared analytic tail on [y_from, inf), y_from >= last grid point."""
    eta, beta, coef = jm.tail_power, jm.tail_log_power, jm.tail_coef
    if coef == 0.0:
        return 0.0
    t0 = math.log(max(y_from, jm.y_grid[-1]))
    if eta == 1.0:
        # int_{t0}^inf coef t^{-beta} dt
        return coef * t0 ** (1.0 - beta) / (beta - 1.0)
    val, _ = integrate.quad(
        lambda t: coef * math.exp((1.0 - eta) * t) * t ** (-beta), t0, np.inf, limit=200
    )
    return val


def jump_mean_between(jm: JumpMeasure, lo: float, hi: float) -> float:
    """int_{[lo,hi)} y pi(dy); hi may be inf (may return inf)."""
    if jm.kind == "none" or lo >= hi:
        return 0.0
    if jm.kind == "stable-tail":
        C, al = jm.stable_c, jm.alpha
        if math.isinf(hi):
            return C * lo ** (1.0 - al) / (al - 1.0)
        return C * (lo ** (1.0 - al) - hi ** (1.0 - al)) / (al - 1.0)
    if jm.kind == "neveu-implied":
        return math.inf if math.isinf(hi) else math.log(hi / lo)
    if jm.kind == "compound-poisson":
        return sum(s * r for s, r in jm.atoms if lo <= s < hi)
    # tabulated
    total = 0.0
    for y_lo, y_hi, d_lo, p in zip(*_tab_segments(jm)):
        a, b = max(y_lo, lo), min(y_hi, hi)
        if a >= b:
            continue
        total += _powerlaw_cell_integral(lambda y: y, a, b, d_lo * (a / y_lo) ** p, p)
    t_from = max(lo, jm.y_grid[-1])
    if hi > t_from:
        eta, beta, coef = jm.tail_power, jm.tail_log_power, jm.tail_coef
        if coef > 0.0:
            if eta <= 2.0 and math.isinf(hi) and not (eta == 2.0 and beta > 1.0):
                return math.inf
            t0, t1 = math.log(t_from), math.log(hi) if not math.isinf(hi) else np.inf
            val, _ = integrate.quad(
                lambda t: coef * math.exp((2.0 - eta) * t) * t ** (-beta), t0, t1, limit=200
            )
            total += val
    return total


def jump_square_below(jm: JumpMeasure, eps: float) -> float:
    """int_{(0,eps)} y^2 pi(dy)."""
    if jm.kind == "none":
        return 0.0
    if jm.kind == "stable-tail":
        C, al = jm.stable_c, jm.alpha
        return C * eps ** (2.0 - al) / (2.0 - al)
    if jm.kind == "neveu-implied":
        return eps
    if jm.kind == "compound-poisson":
        return sum(s * s * r for s, r in jm.atoms if s < eps)
    total = 0.0
    for y_lo, y_hi, d_lo, p in zip(*_tab_segments(jm)):
        b = min(y_hi, eps)
        if y_lo >= b:
            continue
        total += _powerlaw_cell_integral(lambda y: y * y, y_lo, b, d_lo, p)
    return total


def jump_mean_tail_finite(jm: JumpMeasure) -> bool:
    """Whether int_1^inf y pi(dy) < inf."""
    if jm.kind in ("none", "compound-poisson"):
        return True
    if jm.kind == "stable-tail":
        return True
    if jm.kind == "neveu-implied":
        return False
    eta, beta = jm.tail_power, jm.tail_log_power
    return eta > 2.0 or (eta == 2.0 and beta > 1.0)


def jump_log_moment_finite(jm: JumpMeasure) -> bool:
    """Whether int_1^inf log(y) pi(dy) < inf."""
    if jm.kind in ("none", "compound-poisson", "stable-tail", "neveu-implied"):
        return True
    eta, beta = jm.tail_power, jm.tail_log_power
    # log y * y^{-eta} (log y)^{-beta}: in t = log y the integrand is t^{1-beta} e^{(1-eta)t}
    return eta > 1.0 or (eta == 1.0 and beta > 2.0)


def _jump_psi_part(jm: JumpMeasure, x: np.ndarray) -> np.ndarray:
    """int (e^{-xy} - 1 + xy 1_{y<=1}) pi(dy), exact per kind where possible."""
    x = np.asarray(x, dtype=float)
    if jm.kind == "none":
        return np.zeros_like(x)
    if jm.kind == "stable-tail":
        C, al = jm.stable_c, jm.alpha
        return jm.a * x**al - C / (al - 1.0) * x
    if jm.kind == "neveu-implied":
        with np.errstate(divide="ignore", invalid="ignore"):
            xlogx = np.where(x > 0.0, x * np.log(np.where(x > 0.0, x, 1.0)), 0.0)
        return xlogx - x + EULER_GAMMA * x
    if jm.kind == "compound-poisson":
        out = np.zeros_like(x)
        for s, r in jm.atoms:
            out += r * (np.exp(-x * s) - 1.0 + (x * s if s <= 1.0 else 0.0))
        return out
    # tabulated: numeric
    out = np.empty_like(x)
    for i, xi in np.ndenumerate(x):
        def integrand(y, xi=xi):
            with np.errstate(over="ignore"):
                u = np.minimum(xi * y, 1e300)
            return np.where(y <= 1.0, np.expm1(-u) + u, np.exp(-np.minimum(u, 700.0)) - 1.0)

        out[i] = _tab_integral(jm, integrand)
    return out


def _jump_psi_prime_part(jm: JumpMeasure, x: np.ndarray) -> np.ndarray:
    """int (y 1_{y<=1} - y e^{-xy}) pi(dy)."""
    x = np.asarray(x, dtype=float)
    if jm.kind == "none":
        return np.zeros_like(x)
    if jm.kind == "stable-tail":
        C, al = jm.stable_c, jm.alpha
        return jm.a * al * x ** (al - 1.0) - C / (al - 1.0)
    if jm.kind == "neveu-implied":
        with np.errstate(divide="ignore"):
            return np.where(x > 0.0, np.log(np.where(x > 0.0, x, 1.0)), -np.inf) + EULER_GAMMA
    if jm.kind == "compound-poisson":
        out = np.zeros_like(x)
        for s, r in jm.atoms:
            out += r * ((s if s <= 1.0 else 0.0) - s * np.exp(-x * s))
        return out
    out = np.empty_like(x)
    for i, xi in np.ndenumerate(x):
        def integrand(y, xi=xi):
            with np.errstate(over="ignore"):
                u = np.minimum(xi * y, 700.0)
            decayed = np.where(u >= 700.0, 0.0, y * np.exp(-u))
            return y * (y <= 1.0) - decayed

        out[i] = _tab_integral(jm, integrand)
    return out


def _jump_psi_part_quadrature(jm: JumpMeasure, x: float) -> float:
    """Same integral by blind adaptive quadrature over the density (cross-check path)."""
    if jm.kind == "none":
        return 0.0
    if jm.kind == "compound-poisson":
        return float(_jump_psi_part(jm, np.asarray(x)))
    if jm.kind == "tabulated-density":
        return _tab_integral(jm, lambda y: np.exp(-x * y) - 1.0 + x * y * (y <= 1.0))

    if jm.kind == "stable-tail":
        dens = lambda y: jm.stable_c * y ** (-1.0 - jm.alpha)
    else:  # neveu-implied
        dens = lambda y: y**-2.0

    def below(y):
        # e^{-xy} - 1 + xy ~ (xy)^2/2 near 0; evaluate stably
        u = x * y
        return (np.expm1(-u) + u) * dens(y)

    def above(y):
        return (np.exp(-x * y) - 1.0) * dens(y)

    lo, err1 = integrate.quad(below, 0.0, 1.0, limit=200)
    hi, err2 = integrate.quad(above, 1.0, np.inf, limit=200)
    if err1 + err2 > 1e-6 * (1.0 + abs(lo + hi)):
        raise ArithmeticError(
            f"jump-integral quadrature did not converge: error {err1 + err2:.3e}"
        )
    return lo + hi


# ---------------------------------------------------------------------------
# Mechanism


@dataclass(frozen=True)
class Mechanism:
    """The data (sigma, gamma, pi, c, x0) plus an optional closed-form tag.

    sigma >= 0 diffusion coefficient, gamma real linear drift, pi the jump
    measure, c >= 0 competition rate, x0 > 0 reference point for scale-table
    integrals.  closed_form, when set, is a tuple tag enabling analytic Psi:
    ("stable", a, alpha, gamma_lin), ("neveu",) or ("feller",).
    """

    sigma: float
    gamma: float
    pi: JumpMeasure
    c: float
    x0: float = 1.0
    closed_form: tuple | None = None

    def __post_init__(self):
        if self.sigma < 0 or self.c < 0 or self.x0 <= 0:
            raise ValueError("need sigma >= 0, c >= 0, x0 > 0")
        if self.closed_form is not None and self.closed_form[0] not in (
            "stable",
            "neveu",
            "feller",
        ):
            raise ValueError(f"unknown closed form {self.closed_form!r}")


def stable_mechanism(
    a: float = 1.0, alpha: float = 1.5, gamma: float = 0.0, c: float = 1.0, x0: float = 1.0
) -> Mechanism:
    """Psi(x) = a x^alpha - gamma x.

    Component form: density C y^{-1-alpha} with C = a alpha (alpha-1)/Gamma(2-alpha)
    and linear drift gamma - C/(alpha-1) (the compensator of jumps above 1).
    alpha = 2 degenerates to pure diffusion with sigma^2/2 = a.
    """
    if alpha == 2.0:
        return Mechanism(
            sigma=math.sqrt(2.0 * a),
            gamma=gamma,
            pi=JumpMeasure(kind="none"),
            c=c,
            x0=x0,
            closed_form=("stable", a, 2.0, gamma),
        )
    pi = JumpMeasure(kind="stable-tail", alpha=alpha, a=a)
    gamma_comp = gamma - pi.stable_c / (alpha - 1.0)
    return Mechanism(
        sigma=0.0,
        gamma=gamma_comp,
        pi=pi,
        c=c,
        x0=x0,
        closed_form=("stable", a, alpha, gamma),
    )


def neveu_mechanism(c: float = 1.0, x0: float = 1.0) -> Mechanism:
    """Psi(x) = x log x; implied density y^{-2} dy, drift euler_gamma - 1."""
    return Mechanism(
        sigma=0.0,
        gamma=EULER_GAMMA - 1.0,
        pi=JumpMeasure(kind="neveu-implied"),
        c=c,
        x0=x0,
        closed_form=("neveu",),
    )


def feller_mechanism(
    sigma: float = math.sqrt(2.0), gamma: float = 0.0, c: float = 2.0, x0: float = 1.0
) -> Mechanism:
    """Psi(x) = (sigma^2/2) x^2 - gamma x, no jumps."""
    return Mechanism(
        sigma=sigma, gamma=gamma, pi=JumpMeasure(kind="none"), c=c, x0=x0, closed_form=("feller",)
    )


def slow_log_mechanism(
    alpha: float = 0.6,
    c: float = 2.0,
    sigma: float = math.sqrt(2.0),
    gamma: float = 0.0,
    x0: float = 1.0,
    grid_points: int = 60,
) -> Mechanism:
    """Jump density alpha/(y log^2 y) on (e, inf): infinite log-moment family.

    The tail mass above y is alpha/log y, a slowly varying tail, so
    int_1^inf log(y) pi(dy) = inf and the limit constant of x(-S)'(x) is 0.
    The non-explosion integral test passes exactly when alpha <= c/2.
    A diffusion part keeps Psi(inf) = inf and zero accessible.
    """
    y0 = math.e
    g = np.exp(np.linspace(math.log(y0), math.log(y0) + 8.0, grid_points))
    d = alpha / (g * np.log(g) ** 2)
    return Mechanism(
        sigma=sigma,
        gamma=gamma,
        pi=JumpMeasure(
            kind="tabulated-density",
            y_grid=tuple(float(v) for v in g),
            density=tuple(float(v) for v in d),
            tail_power=1.0,
            tail_log_power=2.0,
            tail_coef=alpha,
        ),
        c=c,
        x0=x0,
    )


# ---------------------------------------------------------------------------
# Psi evaluation


def psi_eval(mech: Mechanism, x) -> float | np.ndarray:
    """Psi(x) for scalar or array x >= 0; closed form when tagged."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise ValueError("psi_eval requires x >= 0")
    cf = mech.closed_form
    if cf is not None:
        if cf[0] == "stable":
            _, a, al, gl = cf
            out = a * x_arr**al - gl * x_arr
        elif cf[0] == "neveu":
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(
                    x_arr > 0.0, x_arr * np.log(np.where(x_arr > 0.0, x_arr, 1.0)), 0.0
                )
        else:  # feller
            out = 0.5 * mech.sigma**2 * x_arr**2 - mech.gamma * x_arr
    else:
        out = psi_eval_components(mech, x_arr)
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def psi_eval_components(mech: Mechanism, x) -> np.ndarray:
    """Psi(x) from the (sigma, gamma, pi) components regardless of tag."""
    x_arr = np.asarray(x, dtype=float)
    out = 0.5 * mech.sigma**2 * x_arr**2 - mech.gamma * x_arr + _jump_psi_part(mech.pi, x_arr)
    return np.where(x_arr == 0.0, 0.0, out)


def psi_eval_quadrature(mech: Mechanism, x: float) -> float:
    """Component Psi with the jump part by blind adaptive quadrature."""
    return (
        0.5 * mech.sigma**2 * x**2
        - mech.gamma * x
        + _jump_psi_part_quadrature(mech.pi, x)
    )


def psi_prime(mech: Mechanism, x) -> float | np.ndarray:
    """Psi'(x) for x > 0."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise ValueError("psi_prime requires x > 0; use psi_prime_at_zero for 0+")
    cf = mech.closed_form
    if cf is not None:
        if cf[0] == "stable":
            _, a, al, gl = cf
            out = a * al * x_arr ** (al - 1.0) - gl
        elif cf[0] == "neveu":
            out = np.log(x_arr) + 1.0
        else:
            out = mech.sigma**2 * x_arr - mech.gamma
    else:
        out = mech.sigma**2 * x_arr - mech.gamma + _jump_psi_prime_part(mech.pi, x_arr)
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def psi_prime_at_zero(mech: Mechanism) -> float:
    """Psi'(0+), equal to -gamma - int_1^inf y pi(dy); -inf on infinite mean tails."""
    cf = mech.closed_form
    if cf is not None:
        if cf[0] == "stable":
            return -cf[3]
        if cf[0] == "neveu":
            return -math.inf
        return -mech.gamma
    if not jump_mean_tail_finite(mech.pi):
        return -math.inf
    return -mech.gamma - jump_mean_between(mech.pi, 1.0, math.inf)


def largest_psi_zero(mech: Mechanism) -> float:
    """sup{x >= 0 : Psi(x) <= 0} (0 when Psi > 0 on (0, inf))."""
    cf = mech.closed_form
    if cf is not None:
        if cf[0] == "stable":
            _, a, al, gl = cf
            return (gl / a) ** (1.0 / (al - 1.0)) if gl > 0 else 0.0
        if cf[0] == "neveu":
            return 1.0
        if mech.sigma > 0:
            return max(0.0, 2.0 * mech.gamma / mech.sigma**2)
        return 0.0
    # find a probe with Psi > 0 then bracket downward
    x_hi = mech.x0
    for _ in range(200):
        if psi_eval(mech, x_hi) > 0:
            break
        x_hi *= 2.0
    else:
        raise ValueError("Psi never becomes positive: Psi(inf) != inf?")
    x_lo = x_hi / 2.0
    while x_lo > 1e-300 and psi_eval(mech, x_lo) > 0:
        x_hi = x_lo
        x_lo /= 2.0
    if x_lo <= 1e-300:
        return 0.0
    return optimize.brentq(lambda t: psi_eval(mech, t), x_lo, x_hi, xtol=1e-300, rtol=1e-14)


def psi_inverse(mech: Mechanism, theta: float) -> float:
    """Inverse of Psi on its final increasing branch, relative tolerance 1e-12.

    theta = 0 returns the largest zero of Psi.
    """
    if theta < 0:
        raise ValueError("theta must be >= 0")
    x_star = largest_psi_zero(mech)
    if theta == 0.0:
        return x_star
    lo = max(x_star, 1e-300)
    hi = max(2.0 * lo, mech.x0)
    for _ in range(400):
        if psi_eval(mech, hi) >= theta:
            break
        hi *= 2.0
    else:
        raise ValueError("theta above the reachable range of Psi")
    return optimize.brentq(
        lambda t: psi_eval(mech, t) - theta, lo, hi, xtol=1e-300, rtol=1e-13
    )


# ---------------------------------------------------------------------------
# Regime classification


@dataclass(frozen=True)
class RegimeReport:
    """Boundary/extinction regime of a mechanism.

    rho = Psi'(0+); grey is accessibility of 0; log_moment is
    int_1^inf log y pi(dy) < inf (equivalently ell > 0); calE_infinite is
    divergence of the non-explosion integral test; H_holds means the test
    diverges and Psi(inf) = inf, i.e. almost-sure extinction.
    """

    rho: float
    grey: bool
    log_moment: bool
    calE_infinite: bool
    psi_inf_infinite: bool
    H_holds: bool
    ell: float
    undetermined: frozenset = field(default_factory=frozenset)
    notes: tuple = ()


def _ell_integral(mech: Mechanism) -> float:
    """int_0^{x0} 2 Psi(u)/(c u) du via t = log u (finite iff log-moment)."""
    val, _ = integrate.quad(
        lambda t: 2.0 * psi_eval(mech, math.exp(t)) / mech.c,
        -60.0,
        math.log(mech.x0),
        limit=400,
    )
    return val


def _grey_numeric(mech: Mechanism) -> tuple[bool | None, str]:
    """Improper-integral test for int^inf dx/Psi by doubling with growth fit."""
    x_star = largest_psi_zero(mech)
    a = 2.0 * max(x_star, mech.x0)
    while psi_eval(mech, a) <= 0:
        a *= 2.0
    partial = 0.0
    increments = []
    b = a
    for _ in range(60):
        b2 = 2.0 * b
        seg, _ = integrate.quad(lambda t: 1.0 / psi_eval(mech, t), b, b2, limit=100)
        partial += seg
        increments.append(seg)
        if partial > 1e8:
            return False, "numeric: partial integral exceeded 1e8 while growing"
        # growth exponent of Psi across the last doubling
        p = math.log(psi_eval(mech, b2) / psi_eval(mech, b)) / math.log(2.0)
        if p > 1.05:
            tail = b2 / ((p - 1.0) * psi_eval(mech, b2))
            if tail < 1e-10:
                return True, "numeric: tail bound below 1e-10 (power-law fit)"
        b = b2
    if len(increments) >= 10 and increments[-1] > 0.95 * increments[-10]:
        return False, "numeric: per-doubling increments not decaying (divergent)"
    return None, "numeric: inconclusive within budget"


def _cal_e_numeric(mech: Mechanism) -> tuple[bool | None, str]:
    """Numeric divergence test for the integral int_0^{x0} u^{-1} e^{I(x0)-I(u)} du."""
    # accumulate inner integral I downward from x0 and the outer sum together
    u = mech.x0
    inner = 0.0  # int_u^{x0} 2 Psi(v)/(c v) dv
    outer = 0.0
    increments = []
    for _ in range(2000):
        u2 = 0.8 * u
        seg, _ = integrate.quad(
            lambda t: 2.0 * psi_eval(mech, math.exp(t)) / mech.c, math.log(u2), math.log(u)
        )
        inner += seg
        # outer piece int_{u2}^{u} du/u * e^{inner} with inner frozen at the cell
        piece = math.exp(min(inner, 700.0)) * math.log(u / u2)
        outer += piece
        increments.append(piece)
        if outer > 1e8:
            return True, "numeric: partial integral exceeded 1e8 while growing"
        if len(increments) >= 50 and sum(increments[-50:]) < 1e-10 * outer:
            return False, "numeric: tail contribution below 1e-10 relative"
        u = u2
        if u < 1e-250:
            break
    if len(increments) >= 100 and increments[-1] >= 0.98 * increments[-100]:
        return True, "numeric: per-cell contributions not decaying (divergent)"
    return None, "numeric: inconclusive within budget"


def classify(mech: Mechanism, assume_cal_e: bool | None = None) -> RegimeReport:
    """Fill a RegimeReport; analytic per family first, numeric fallback after.

    assume_cal_e overrides the integral-test verdict and is recorded in notes.
    """
    notes: list[str] = []
    undetermined: set[str] = set()

    rho = psi_prime_at_zero(mech)
    log_moment = jump_log_moment_finite(mech.pi)

    # Psi(inf) = inf
    if mech.sigma > 0 or (mech.closed_form and mech.closed_form[0] in ("stable", "neveu")):
        psi_inf = True
    elif mech.closed_form and mech.closed_form[0] == "feller":
        psi_inf = mech.sigma > 0 or mech.gamma < 0
    else:
        probes = psi_eval(mech, np.array([1e4, 1e6, 1e8]))
        psi_inf = bool(probes[-1] > 0 and probes[-1] > probes[-2])
        notes.append("psi_inf: numeric probe")

    # Grey's condition
    if mech.sigma > 0:
        grey = True  # Psi >= (sigma^2/2)x^2 - gamma x - pi((1,inf))
    elif mech.closed_form and mech.closed_form[0] == "stable":
        grey = True
    elif mech.closed_form and mech.closed_form[0] == "neveu":
        grey = False
    elif not psi_inf:
        grey = False
    else:
        verdict, note = _grey_numeric(mech)
        notes.append(f"grey {note}")
        if verdict is None:
            undetermined.add("grey")
            grey = False
        else:
            grey = verdict

    # integral test for non-explosion
    if assume_cal_e is not None:
        cal_e = assume_cal_e
        notes.append(f"calE: user override {assume_cal_e}")
    elif mech.c == 0.0:
        cal_e = False
        undetermined.add("calE_infinite")
        notes.append("calE: not applicable without competition (c = 0)")
    elif log_moment:
        cal_e = True  # bounded inner exponent, outer integral int du/u diverges
    elif mech.pi.kind == "tabulated-density" and mech.pi.tail_power == 1.0:
        beta, coef = mech.pi.tail_log_power, mech.pi.tail_coef
        if beta == 2.0:
            cal_e = coef <= mech.c / 2.0
            notes.append("calE: slowly-varying family criterion coef <= c/2")
        elif beta > 2.0:
            cal_e = True
        else:
            cal_e = False
            notes.append("calE: slowly-varying family, log-power < 2 makes the test converge")
    else:
        verdict, note = _cal_e_numeric(mech)
        notes.append(f"calE {note}")
        if verdict is None:
            undetermined.add("calE_infinite")
            cal_e = False
        else:
            cal_e = verdict

    h_holds = bool(cal_e and psi_inf) and "calE_infinite" not in undetermined

    if mech.c == 0.0:
        ell = 0.0
        undetermined.add("ell")
        notes.append("ell: not applicable without competition (c = 0)")
    elif not log_moment:
        ell = 0.0
    else:
        ell = math.exp(_ell_integral(mech))

    return RegimeReport(
        rho=rho,
        grey=grey,
        log_moment=log_moment,
        calE_infinite=cal_e,
        psi_inf_infinite=psi_inf,
        H_holds=h_holds,
        ell=ell,
        undetermined=frozenset(undetermined),
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Discretization of pi for sampling and h-weighted integrals


@dataclass(frozen=True)
class PiDiscretization:
    """pi restricted to (eps, cap], split into log cells with exact masses.

    Each cell carries a local power-law density d(y) = d_lo (y/y_lo)^p, exact
    for stable-tail and neveu-implied, log-linear interpolation for tabulated.
    Beyond cap the remaining mass is lumped into a single atom at cap (the
    lump only matters for paths that explode immediately anyway).
    """

    eps: float
    cap: float
    cell_lo: np.ndarray
    cell_hi: np.ndarray
    cell_mass: np.ndarray
    cell_exponent: np.ndarray  # local density exponent p
    atom_sizes: np.ndarray  # compound-poisson atoms handled exactly
    atom_rates: np.ndarray
    lump_mass: float

    @property
    def total_mass(self) -> float:
        return float(self.cell_mass.sum() + self.atom_rates.sum() + self.lump_mass)

    def nodes_weights(self, n_gl: int = 8) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes/weights with sum w f(y) ~ int_(eps,inf) f dpi."""
        xs, ws = np.polynomial.legendre.leggauss(n_gl)
        t_lo = np.log(self.cell_lo)[:, None]
        t_hi = np.log(self.cell_hi)[:, None]
        half = 0.5 * (t_hi - t_lo)
        t = 0.5 * (t_hi + t_lo) + half * xs[None, :]
        y = np.exp(t)
        p = self.cell_exponent[:, None]
        # density normalized so the cell integrates to cell_mass exactly
        raw = (y / self.cell_lo[:, None]) ** p * y  # d(y) * y up to d_lo
        raw_w = half * ws[None, :] * raw
        norm = raw_w.sum(axis=1)
        scale = np.where(norm > 0, self.cell_mass / np.maximum(norm, 1e-300), 0.0)
        w = (raw_w * scale[:, None]).ravel()
        nodes = y.ravel()
        nodes = np.concatenate([nodes, self.atom_sizes, [self.cap]])
        w = np.concatenate([w, self.atom_rates, [self.lump_mass]])
        return nodes, w

    def sample(self, rng: np.random.Generator, n: int, cell_weights: np.ndarray | None = None) -> np.ndarray:
        """Draw n sizes; cell_weights re-weights cells (and atoms, lump) before drawing.

        With cell_weights w_k the draw follows the measure w_k * pi|cell_k,
        normalized; within a cell the exact local power law is inverted.
        """
        masses = np.concatenate([self.cell_mass, self.atom_rates, [self.lump_mass]])
        if cell_weights is not None:
            masses = masses * cell_weights
        cum = np.cumsum(masses)
        if cum[-1] <= 0:
            raise ValueError("empty discretized measure")
        u = rng.random(n) * cum[-1]
        idx = np.searchsorted(cum, u)
        out = np.empty(n)
        n_cells = self.cell_mass.size
        in_cell = idx < n_cells
        if np.any(in_cell):
            k = idx[in_cell]
            v = rng.random(k.size)
            lo, hi, p = self.cell_lo[k], self.cell_hi[k], self.cell_exponent[k]
            q = p + 1.0
            power = np.abs(q) > 1e-12
            out_c = np.empty(k.size)
            if np.any(power):
                lq, hq = lo[power] ** q[power], hi[power] ** q[power]
                out_c[power] = (lq + v[power] * (hq - lq)) ** (1.0 / q[power])
            if np.any(~power):
                out_c[~power] = lo[~power] * (hi[~power] / lo[~power]) ** v[~power]
            out[in_cell] = out_c
        is_atom = (idx >= n_cells) & (idx < n_cells + self.atom_sizes.size)
        if np.any(is_atom):
            out[is_atom] = self.atom_sizes[idx[is_atom] - n_cells]
        out[idx >= n_cells + self.atom_sizes.size] = self.cap
        return out


@lru_cache(maxsize=32)
def discretize_pi(jm: JumpMeasure, eps: float, cap: float = 1e12, n_cells: int = 400) -> PiDiscretization:
    """Split pi on (eps, cap] into exact-mass log cells (see PiDiscretization)."""
    if jm.kind == "none":
        z = np.zeros(0)
        return PiDiscretization(eps, cap, z, z, z, z, z, z, 0.0)
    if jm.kind == "compound-poisson":
        sizes = np.array([s for s, r in jm.atoms if s >= eps])
        rates = np.array([r for s, r in jm.atoms if s >= eps])
        z = np.zeros(0)
        return PiDiscretization(eps, cap, z, z, z, z, sizes, rates, 0.0)

    if jm.kind == "stable-tail":
        lo_support = eps
        edges = np.exp(np.linspace(math.log(lo_support), math.log(cap), n_cells + 1))
        p = np.full(n_cells, -1.0 - jm.alpha)
        C, al = jm.stable_c, jm.alpha
        mass = C / al * (edges[:-1] ** -al - edges[1:] ** -al)
        lump = C / al * cap**-al
    elif jm.kind == "neveu-implied":
        lo_support = eps
        edges = np.exp(np.linspace(math.log(lo_support), math.log(cap), n_cells + 1))
        p = np.full(n_cells, -2.0)
        mass = 1.0 / edges[:-1] - 1.0 / edges[1:]
        lump = 1.0 / cap
    else:  # tabulated
        lo_support = max(eps, jm.y_grid[0])
        if lo_support >= cap:
            z = np.zeros(0)
            return PiDiscretization(eps, cap, z, z, z, z, z, np.zeros(0), jump_tail_mass(jm, eps))
        # cell edges: union of grid knots with a log refinement, plus tail cells
        knots = [y for y in jm.y_grid if lo_support < y < cap]
        base = np.exp(np.linspace(math.log(lo_support), math.log(cap), n_cells + 1))
        edges = np.unique(np.concatenate([base, knots, [lo_support, cap]]))
        seg_lo, seg_hi, seg_d, seg_p = _tab_segments(jm)
        p = np.empty(edges.size - 1)
        mass = np.empty(edges.size - 1)
        last_y = jm.y_grid[-1]
        eta, beta, coef = jm.tail_power, jm.tail_log_power, jm.tail_coef
        for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
            if b <= last_y:
                j = int(np.searchsorted(seg_hi, a, side="right"))
                j = min(j, seg_p.size - 1)
                p[i] = seg_p[j]
                d_a = seg_d[j] * (a / seg_lo[j]) ** seg_p[j]
                mass[i] = _powerlaw_cell_integral(lambda y: np.ones_like(y), a, b, d_a, p[i])
            else:
                # analytic tail: local exponent of y^{-eta}(log y)^{-beta}
                p[i] = -eta - beta / math.log(a)
                mass[i] = _tab_tail_mass_from(jm, a) - _tab_tail_mass_from(jm, b)
        lump = _tab_tail_mass_from(jm, cap)

    keep = mass > 0
    z = np.zeros(0)
    return PiDiscretization(
        eps, cap, edges[:-1][keep], edges[1:][keep], mass[keep], p[keep], z, np.zeros(0), float(lump)
    )


# ---------------------------------------------------------------------------
# Fast vectorized Psi for simulation loops


@lru_cache(maxsize=32)
def _psi_spline(mech: Mechanism):
    from scipy.interpolate import CubicSpline

    xs = np.exp(np.linspace(math.log(1e-10), math.log(1e10), 4000))
    ys = np.array([float(psi_eval(mech, x)) for x in xs])
    return CubicSpline(np.log(xs), ys)


def psi_fast(mech: Mechanism):
    """Vectorized Psi evaluator; splined for tabulated jump measures."""
    cf = mech.closed_form
    if cf is not None or mech.pi.kind in ("none", "stable-tail", "neveu-implied", "compound-poisson"):
        return lambda x: psi_eval(mech, np.maximum(np.asarray(x, dtype=float), 0.0))
    spline = _psi_spline(mech)
    total_mass = jump_tail_mass(mech.pi, 0.0)

    def f(x):
        x = np.asarray(x, dtype=float)
        x = np.maximum(x, 0.0)
        inside = (x > 1e-10) & (x < 1e10)
        out = np.where(
            inside,
            spline(np.log(np.where(inside, x, 1.0))),
            0.5 * mech.sigma**2 * x**2 - mech.gamma * x - total_mass * (x >= 1e10),
        )
        return np.where(x == 0.0, 0.0, out)

    return f


# ---------------------------------------------------------------------------
# Hashing / serialization


def mechanism_to_dict(mech: Mechanism) -> dict:
    pi = mech.pi
    d: dict = {"sigma": mech.sigma, "gamma": mech.gamma, "c": mech.c, "x0": mech.x0}
    d["pi"] = {
        "kind": pi.kind,
        **{
            k: getattr(pi, k)
            for k in (
                "alpha",
                "a",
                "atoms",
                "y_grid",
                "density",
                "tail_power",
                "tail_log_power",
                "tail_coef",
            )
            if getattr(pi, k) is not None
        },
    }
    if mech.closed_form is not None:
        d["closed_form"] = list(mech.closed_form)
    return d


def mechanism_hash(mech: Mechanism) -> str:
    """Stable content hash used to stamp tables and campaign outputs."""
    blob = json.dumps(mechanism_to_dict(mech), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
