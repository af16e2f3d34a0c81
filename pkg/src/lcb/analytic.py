"""Scale function, speed density, excessive function h, and generator calculus.

The bidual diffusion dV = sqrt(cV) dB + (c/2 + Psi(V)) dt has scale function

    S(x) = int_x^inf (1/y) exp(-I(y)) dy,    I(y) = int_{x0}^y 2 Psi(u)/(c u) du

and speed density m(y) = exp(I(y)).  Everything here is quadrature over one
dense log grid in the dual variable: I is accumulated once with nested
Gauss-Legendre panels, S is accumulated downward from an analytically seeded
truncation point, and the excessive function

    h(z) = int_0^inf z e^{-zy} S(y) dy  =  int_0^inf (1 - e^{-xz}) exp(-I(x))/x dx

is evaluated against those tables (the first form is the default, the second
is kept as an independent cross-check).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .mechanism import (
    Mechanism,
    classify,
    jump_log_moment_finite,
    mechanism_hash,
    psi_eval,
    psi_fast,
    _tab_integral,
)

__all__ = [
    "ScaleTable",
    "HTransform",
    "build_scale_table",
    "build_h_transform",
    "compute_ell",
    "h_eval",
    "h_prime_eval",
    "f_theta_eval",
    "coefficients",
    "generator_apply",
    "generator_up_apply",
    "scale_table_to_csv",
    "scale_table_from_csv",
]

_GL5_X, _GL5_W = np.polynomial.legendre.leggauss(5)
_GL3_X, _GL3_W = np.polynomial.legendre.leggauss(3)


# ---------------------------------------------------------------------------
# Scale table


@dataclass
class ScaleTable:
    """Tabulated S, m = e^I and I on a dense log grid in (0, x_max].

    grid holds the cell edges; node_* arrays hold the per-cell Gauss-Legendre
    nodes (in t = log x) used by every downstream quadrature, so integrals of
    smooth f against dx/x are sum(node_w * f(exp(node_t))).
    """

    mech: Mechanism
    grid: np.ndarray          # cell edges x, ascending
    I_values: np.ndarray      # I at edges, I(x0) = 0
    S_values: np.ndarray      # S at edges
    m_values: np.ndarray      # e^I at edges
    node_t: np.ndarray        # (n_cells, 5) GL nodes in t = log x
    node_w: np.ndarray        # (n_cells, 5) weights for dt integration
    node_I: np.ndarray        # I at nodes
    node_S: np.ndarray        # S at nodes
    tail_rate: float          # certified b_hat with Psi(u)/u >= b_hat past x_star
    tail_anchor: float        # x_star of the certificate
    S_tail_seed: float        # seeded S(x_max)
    diagnostics: dict = dc_field(default_factory=dict)

    _I_spline: CubicSpline | None = None
    _logS_spline: CubicSpline | None = None

    def __post_init__(self):
        t_all = np.concatenate([np.log(self.grid), self.node_t.ravel()])
        I_all = np.concatenate([self.I_values, self.node_I.ravel()])
        S_all = np.concatenate([self.S_values, self.node_S.ravel()])
        order = np.argsort(t_all)
        t_all, I_all, S_all = t_all[order], I_all[order], S_all[order]
        keep = np.concatenate([[True], np.diff(t_all) > 1e-14])
        self._t_all = t_all[keep]
        self._I_spline = CubicSpline(t_all[keep], I_all[keep])
        self._logS_spline = CubicSpline(t_all[keep], np.log(np.maximum(S_all[keep], 1e-300)))

    @property
    def x_min(self) -> float:
        return float(self.grid[0])

    @property
    def x_max(self) -> float:
        return float(self.grid[-1])

    def exp_integral(self, x) -> np.ndarray:
        """I(x) = int_{x0}^x 2 Psi(u)/(c u) du, clamped linearly outside the grid."""
        x = np.asarray(x, dtype=float)
        t = np.log(np.clip(x, 1e-300, None))
        t_lo, t_hi = self._t_all[0], self._t_all[-1]
        g_hi = 2.0 * psi_eval(self.mech, self.x_max) / self.mech.c
        inside = self._I_spline(np.clip(t, t_lo, t_hi))
        out = np.where(t > t_hi, inside + g_hi * (t - t_hi), inside)
        return out if out.ndim else float(out)

    def S_eval(self, x) -> np.ndarray:
        """S(x); above x_max decays with the local exponential rate, below
        x_min continues with slope -e^{-I} per unit log."""
        x = np.asarray(x, dtype=float)
        t = np.log(np.clip(x, 1e-300, None))
        t_lo, t_hi = self._t_all[0], self._t_all[-1]
        inside = np.exp(self._logS_spline(np.clip(t, t_lo, t_hi)))
        g_hi = max(2.0 * psi_eval(self.mech, self.x_max) / self.mech.c, 1.0)
        above = self.S_tail_seed * np.exp(-g_hi * np.clip(t - t_hi, 0.0, 600.0))
        ell_lo = math.exp(-float(self.I_values[0]))
        below = float(self.S_values[0]) + ell_lo * (t_lo - t)
        out = np.where(t > t_hi, above, np.where(t < t_lo, below, inside))
        return out if out.ndim else float(out)

    def m_eval(self, x) -> np.ndarray:
        return np.exp(np.clip(self.exp_integral(x), -700.0, 700.0))

    def S_prime(self, x) -> np.ndarray:
        """(-S)'(x) = e^{-I(x)}/x, returned with its sign: S'(x) < 0."""
        x = np.asarray(x, dtype=float)
        out = -np.exp(-np.clip(self.exp_integral(x), -700.0, 700.0)) / np.clip(x, 1e-300, None)
        return out if out.ndim else float(out)

    def gs_residual(self) -> np.ndarray:
        """(c/2) x S'' + (c/2 + Psi(x)) S' at interior edges, via the identity
        S'' = -S' (1/x + I'(x)); should vanish identically up to quadrature."""
        x = self.grid[1:-1]
        c = self.mech.c
        psi = psi_eval(self.mech, x)
        sp = self.S_prime(x)
        g = 2.0 * psi / (c * x)
        spp = -sp * (1.0 / x + g)
        return (c / 2.0) * x * spp + (c / 2.0 + psi) * sp

    def node_quad(self, f) -> float:
        """sum of f over the node measure: approx int f(x)/x dx on (x_min, x_max)."""
        return float(np.sum(self.node_w * f(np.exp(self.node_t))))


def _certify_tail_rate(mech: Mechanism) -> tuple[float, float]:
    """First doubling probe x* past x0 with Psi(x*) > 0; rate Psi(x*)/x*.

    Convexity with Psi(0) = 0 makes Psi(u)/u nondecreasing, so
    Psi(u)/u >= b_hat for every u >= x*.
    """
    x = mech.x0
    for _ in range(64):
        p = float(psi_eval(mech, x))
        if p > 0:
            return p / x, x
        x *= 2.0
    raise ValueError(
        "cannot certify an exponential tail rate: Psi(x0 * 2^k) <= 0 for all "
        "probed k; raise x0 or check Psi(inf) = inf"
    )


def build_scale_table(
    mech: Mechanism,
    tol: float = 1e-10,
    x_max: float | None = None,
    override_h: bool = False,
) -> ScaleTable:
    """Accumulate I, m, S on a dense log grid; auto x_max until the seeded
    truncation remainder is below tol relative to S(x0)."""
    if mech.c <= 0.0:
        raise ValueError("scale table undefined without competition (c = 0)")
    if not override_h:
        rep = classify(mech)
        if not rep.H_holds:
            raise ValueError(
                "mechanism does not satisfy the extinction hypothesis; pass "
                "override_h=True to build anyway"
            )

    b_hat, x_star = _certify_tail_rate(mech)
    psi = psi_fast(mech)
    auto = x_max is None
    if auto:
        x_max = 4.0 * max(x_star, mech.x0)

    for _ in range(40):
        table = _build_arrays(mech, psi, x_max, b_hat, x_star, tol)
        s_x0 = float(np.interp(math.log(mech.x0), np.log(table.grid), table.S_values))
        if not auto or table.S_tail_seed < tol * max(s_x0, 1e-300):
            table.diagnostics["tol"] = tol
            table.diagnostics["S_at_x0"] = s_x0
            return table
        x_max *= 1.6
    raise ArithmeticError("x_max search did not converge; I(x) may grow too slowly")


def _build_arrays(mech, psi, x_max, b_hat, x_star, tol) -> ScaleTable:
    x0, c = mech.x0, mech.c
    # geometric refinement near zero (slowly varying Psi(u)/u needs the decades)
    n_below = int(math.ceil(10.0 * math.log(10.0) / math.log(1.0 / 0.9)))
    t_below = math.log(x0) - math.log(1.0 / 0.9) * np.arange(n_below, 0, -1)
    n_above = max(int(math.ceil((math.log(x_max) - math.log(x0)) / 0.02)), 8)
    t_above = np.linspace(math.log(x0), math.log(x_max), n_above + 1)
    t_edges = np.concatenate([t_below, t_above])
    i_x0 = n_below

    lo, hi = t_edges[:-1], t_edges[1:]
    half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
    tn = mid[:, None] + half[:, None] * _GL5_X          # (n, 5)
    wn = half[:, None] * _GL5_W

    def g(t):
        return 2.0 * psi(np.exp(t)) / c

    cell_I = np.sum(wn * g(tn), axis=1)
    I_edges = np.concatenate([[0.0], np.cumsum(cell_I)])
    I_edges = I_edges - I_edges[i_x0]

    # I at the GL nodes: partial panel from the left edge
    h2, m2 = 0.5 * (tn - lo[:, None]), 0.5 * (tn + lo[:, None])
    tsub = m2[..., None] + h2[..., None] * _GL3_X       # (n, 5, 3)
    I_nodes = I_edges[:-1, None] + np.sum(h2[..., None] * _GL3_W * g(tsub), axis=-1)

    # S: downward accumulation of int e^{-I} dt, seeded analytically at x_max
    psi_top = float(psi_eval(mech, x_max))
    I_top = float(I_edges[-1])
    seed = c * math.exp(-min(I_top, 700.0)) / (2.0 * psi_top)
    En = np.exp(-np.clip(I_nodes, -700.0, 700.0))
    cell_S = np.sum(wn * En, axis=1)
    S_edges = seed + np.concatenate([np.cumsum(cell_S[::-1])[::-1], [0.0]])

    # S at the GL nodes: partial panel up to the right edge, with I at the
    # sub-panel nodes re-accumulated from the node values
    h3, m3 = 0.5 * (hi[:, None] - tn), 0.5 * (hi[:, None] + tn)
    t4 = m3[..., None] + h3[..., None] * _GL3_X         # (n, 5, 3)
    h4, m4 = 0.5 * (hi[:, None, None] - t4), 0.5 * (hi[:, None, None] + t4)
    t5 = m4[..., None] + h4[..., None] * _GL3_X         # (n, 5, 3, 3)
    I4 = I_edges[1:, None, None] - np.sum(h4[..., None] * _GL3_W * g(t5), axis=-1)
    E4 = np.exp(-np.clip(I4, -700.0, 700.0))
    S_nodes = S_edges[1:, None] + np.sum(h3[..., None] * _GL3_W * E4, axis=-1)

    return ScaleTable(
        mech=mech,
        grid=np.exp(t_edges),
        I_values=I_edges,
        S_values=S_edges,
        m_values=np.exp(np.clip(I_edges, -700.0, 700.0)),
        node_t=tn,
        node_w=wn,
        node_I=I_nodes,
        node_S=S_nodes,
        tail_rate=b_hat,
        tail_anchor=x_star,
        S_tail_seed=seed,
        diagnostics={"x_max": x_max, "n_cells": int(lo.size)},
    )


def compute_ell(scale: ScaleTable) -> float:
    """Limit of x(-S)'(x) = e^{-I(x)} as x tends to 0, from the refined grid.

    Returns 0 when I keeps growing decade after decade (infinite log-moment);
    raises when the near-zero tail is non-monotone.
    """
    t = np.log(scale.grid)
    I = scale.I_values
    dec = math.log(10.0)
    # I at decade marks x0 * 10^{-k}
    t0 = math.log(scale.mech.x0)
    marks = t0 - dec * np.arange(1, 10)
    I_marks = np.interp(marks[::-1], t, I)[::-1]
    steps = np.diff(I_marks)  # I(10^{-k-1}) - I(10^{-k}) per decade
    last, prev = float(steps[-1]), float(steps[-2])
    if abs(last) < 1e-6:
        return math.exp(-float(I[0]))
    if last > 1e-4 and last >= 0.5 * prev > 0:
        # steady growth of I toward +inf: e^{-I} -> 0
        return 0.0
    if last * prev < 0:
        raise ArithmeticError(
            f"near-zero extrapolation unstable: non-monotone I tail (steps {steps})"
        )
    if abs(last) < abs(prev):
        # per-decade contributions shrinking: geometric extrapolation of the
        # remaining tail of I
        ratio = abs(last) / max(abs(prev), 1e-300)
        remainder = last * ratio / max(1.0 - ratio, 1e-3)
        return math.exp(-(float(I[0]) + remainder))
    raise ArithmeticError(
        f"near-zero extrapolation unstable: I decade steps not settling ({steps})"
    )


# ---------------------------------------------------------------------------
# Excessive function


class HTransform:
    """Evaluators for h, h', the constant ell, and the coefficients b, q, k.

    h is computed through the S-representation against the scale table; the
    density representation is exposed as h_alt for cross-checks.  Fast
    vectorized variants (h_vec, ...) interpolate a dense log grid of the
    exact quadrature values and switch to the ell*log z asymptote once
    e^{-zy} underflows across the table.
    """

    def __init__(self, mech: Mechanism, scale: ScaleTable, tol: float = 1e-10):
        self.mech = mech
        self.scale = scale
        self.ell = compute_ell(scale)
        self.diagnostics: dict = {}

        tn, wn = scale.node_t, scale.node_w
        self._y = np.exp(tn.ravel())          # nodes in x/y space
        self._w = wn.ravel()                  # dt weights
        self._S = scale.node_S.ravel()
        self._E = np.exp(-np.clip(scale.node_I.ravel(), -700.0, 700.0))  # e^{-I}
        self._x_min = scale.x_min
        self._x_max = scale.x_max
        self._S_min = float(scale.S_values[0])
        self._seed = scale.S_tail_seed

        # h'(0) = int e^{-I(x)} dx, with analytic stubs beyond the grid
        psi_top = float(psi_eval(mech, self._x_max))
        top = math.exp(-min(float(scale.I_values[-1]), 700.0)) * mech.c * self._x_max / (
            2.0 * psi_top
        )
        self.h_prime_at_zero = float(np.sum(self._w * self._E * self._y)) + self.ell * self._x_min + top
        self._h2_at_zero = -float(np.sum(self._w * self._E * self._y**2))

        # dense log-z grid of exact values for the fast evaluators
        z_lo, z_hi = 1e-8, 0.1 / self._x_min
        zg = np.exp(np.linspace(math.log(z_lo), math.log(z_hi), 1200))
        hg = self._h_quad(zg)
        hpg = self._h_prime_quad(zg)
        self._z_lo, self._z_hi = z_lo, z_hi
        self._h_spline = CubicSpline(np.log(zg), np.log(hg))
        self._hp_spline = CubicSpline(np.log(zg), np.log(hpg))
        self._h_at_zhi = float(hg[-1])
        self._hp_at_zhi = float(hpg[-1])
        # asymptote h ~ ell log z + const; for ell = 0 fall back to the local
        # log-slope at the top of the grid (heuristic, recorded)
        slope = self.ell if self.ell > 0 else float(
            (math.log(hg[-1]) - math.log(hg[-2]))
            / (math.log(zg[-1]) - math.log(zg[-2]))
            * hg[-1]
        )
        self._asym_slope = slope
        self._asym_const = self._h_at_zhi - slope * math.log(z_hi)
        self.diagnostics["asymptote_switch_z"] = z_hi
        self.diagnostics["asymptote_slope"] = slope

    # -- exact quadrature forms ------------------------------------------------

    def _h_quad(self, z: np.ndarray) -> np.ndarray:
        """S-representation: int z e^{-zy} S(y) dy over the node set."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        for i in range(0, z.size, 64):
            zz = z[i : i + 64, None]
            ker = zz * np.exp(-np.clip(zz * self._y[None, :], 0.0, 700.0)) * self._y
            out[i : i + 64] = np.sum(self._w[None, :] * ker * self._S[None, :], axis=1)
        # below-grid stub: S ~ S(x_min), e^{-zy} ~ 1
        out += -np.expm1(-z * self._x_min) * self._S_min
        return out

    def _h_alt_quad(self, z: np.ndarray) -> np.ndarray:
        """Density representation: int (1 - e^{-xz}) e^{-I(x)}/x dx."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        for i in range(0, z.size, 64):
            zz = z[i : i + 64, None]
            ker = -np.expm1(-np.clip(zz * self._y[None, :], 0.0, 700.0))
            out[i : i + 64] = np.sum(self._w[None, :] * ker * self._E[None, :], axis=1)
        out += self._seed  # above x_max the bracket is ~1 and int e^{-I} dt = seed
        out += z * self.ell * self._x_min  # below x_min: bracket ~ zx, e^{-I} ~ ell
        return out

    def _h_prime_quad(self, z: np.ndarray) -> np.ndarray:
        """h'(z) = int e^{-xz} e^{-I(x)} dx."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        for i in range(0, z.size, 64):
            zz = z[i : i + 64, None]
            ker = np.exp(-np.clip(zz * self._y[None, :], 0.0, 700.0)) * self._y
            out[i : i + 64] = np.sum(self._w[None, :] * ker * self._E[None, :], axis=1)
        out += self.ell * self._x_min * np.exp(-z * self._x_min)
        return out

    def _h_second_quad(self, z: np.ndarray) -> np.ndarray:
        """h''(z) = -int x e^{-xz} e^{-I(x)} dx."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        for i in range(0, z.size, 64):
            zz = z[i : i + 64, None]
            ker = np.exp(-np.clip(zz * self._y[None, :], 0.0, 700.0)) * self._y**2
            out[i : i + 64] = -np.sum(self._w[None, :] * ker * self._E[None, :], axis=1)
        return out

    # -- public evaluators -----------------------------------------------------

    def h(self, z) -> float | np.ndarray:
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if np.any(z < 0):
            raise ValueError("h requires z >= 0")
        out = np.where(z > 0, self._h_quad(np.maximum(z, 1e-300)), 0.0)
        return float(out[0]) if scalar else out

    def h_alt(self, z) -> float | np.ndarray:
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.where(z > 0, self._h_alt_quad(np.maximum(z, 1e-300)), 0.0)
        return float(out[0]) if scalar else out

    def h_prime(self, z) -> float | np.ndarray:
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.where(z > 0, self._h_prime_quad(np.maximum(z, 1e-300)), self.h_prime_at_zero)
        return float(out[0]) if scalar else out

    def h_second(self, z) -> float | np.ndarray:
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = self._h_second_quad(np.maximum(z, 1e-300))
        return float(out[0]) if scalar else out

    def h_vec(self, z: np.ndarray) -> np.ndarray:
        """Fast interpolated h for simulation loops."""
        z = np.asarray(z, dtype=float)
        zc = np.clip(z, self._z_lo, self._z_hi)
        mid = np.exp(self._h_spline(np.log(zc)))
        zs = np.minimum(z, self._z_lo)
        small = self.h_prime_at_zero * zs + 0.5 * self._h2_at_zero * zs * zs
        large = self._asym_slope * np.log(np.maximum(z, 1.0)) + self._asym_const
        out = np.where(z < self._z_lo, np.maximum(small, 0.0), np.where(z > self._z_hi, large, mid))
        return np.where(z <= 0.0, 0.0, out)

    def h_prime_vec(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        zc = np.clip(z, self._z_lo, self._z_hi)
        mid = np.exp(self._hp_spline(np.log(zc)))
        small = self.h_prime_at_zero + self._h2_at_zero * np.minimum(z, self._z_lo)
        large = self._hp_at_zhi * self._z_hi / np.maximum(z, self._z_hi)
        return np.where(z < self._z_lo, small, np.where(z > self._z_hi, large, mid))

    def z_over_h(self, z: np.ndarray) -> np.ndarray:
        """z/h(z) with the continuous extension 1/h'(0) at z = 0."""
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = z / self.h_vec(z)
        return np.where(z < 1e-12, 1.0 / self.h_prime_at_zero, r)

    def b(self, z) -> float | np.ndarray:
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.where(
            z < 1e-12, 1.0, self.h_prime_vec(z) * z / np.maximum(self.h_vec(z), 1e-300)
        )
        return float(out[0]) if scalar else out

    def q(self, z, y) -> float | np.ndarray:
        scalar = np.ndim(z) == 0 and np.ndim(y) == 0
        z = np.atleast_1d(np.asarray(z, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = self.z_over_h(z) * (self.h_vec(z + y) - self.h_vec(z))
        return float(out[0]) if scalar else out

    def k(self, z) -> float | np.ndarray:
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = (self.mech.c * self.ell / 2.0) * self.z_over_h(z)
        return float(out[0]) if scalar else out


def build_h_transform(mech: Mechanism, tol: float = 1e-10, **kwargs) -> HTransform:
    return HTransform(mech, build_scale_table(mech, tol=tol, **kwargs), tol=tol)


def h_eval(ht: HTransform, z) -> float | np.ndarray:
    return ht.h(z)


def h_prime_eval(ht: HTransform, z) -> float | np.ndarray:
    return ht.h_prime(z)


def coefficients(ht: HTransform, z: float, y: float) -> tuple[float, float, float]:
    """(b(z), q(z, y), k(z)) with the entrance extension at z = 0."""
    if z < 0 or y <= 0:
        raise ValueError("need z >= 0, y > 0")
    return float(ht.b(z)), float(ht.q(z, y)), float(ht.k(z))


def f_theta_eval(scale: ScaleTable, theta: float, z: float | np.ndarray) -> float | np.ndarray:
    """f_theta(z) = int x^{2 theta/c} e^{-xz} e^{-I(x)}/x dx."""
    if theta <= 0:
        raise ValueError("theta must be > 0")
    # by convexity Psi(u)/u is nondecreasing, so the rate certified at x_max
    # controls the truncated tail, which is the only place decay is needed
    b_eff = max(scale.tail_rate, float(psi_eval(scale.mech, scale.x_max)) / scale.x_max)
    if theta >= b_eff:
        raise ValueError(
            f"theta = {theta} is not below the certified tail rate "
            f"{b_eff:.4g}; rebuild the table with a larger x_max"
        )
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=float))
    p = 2.0 * theta / scale.mech.c
    t = scale.node_t.ravel()
    w = scale.node_w.ravel()
    E = np.exp(-np.clip(scale.node_I.ravel(), -700.0, 700.0))
    y = np.exp(t)
    ker = np.exp(p * t[None, :] - np.clip(z[:, None] * y[None, :], 0.0, 700.0))
    out = np.sum(w[None, :] * ker * E[None, :], axis=1)
    # stubs beyond the table
    ell = math.exp(-float(scale.I_values[0]))
    if jump_log_moment_finite(scale.mech.pi):
        out += ell * scale.x_min**p * scale.mech.c / (2.0 * theta)
    out += scale.x_max**p * scale.S_tail_seed * np.exp(-z * scale.x_max)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Generators


def _derivatives(f, z, fp=None, fpp=None):
    step = 1e-5 * (1.0 + abs(z))
    if z - step < 0.0:
        # one-sided stencils at the boundary
        f0, f1, f2 = f(z), f(z + step), f(z + 2.0 * step)
        d1 = fp(z) if fp is not None else (-1.5 * f0 + 2.0 * f1 - 0.5 * f2) / step
        d2 = fpp(z) if fpp is not None else (f0 - 2.0 * f1 + f2) / (step * step)
        return d1, d2
    d1 = fp(z) if fp is not None else (f(z + step) - f(z - step)) / (2.0 * step)
    d2 = fpp(z) if fpp is not None else (f(z + step) - 2.0 * f(z) + f(z - step)) / (step * step)
    return d1, d2


def _levy_integral(mech: Mechanism, fn, compensate: float) -> float:
    """int (fn(y) - y 1_{y<=1} * compensate) pi(dy), adaptively split at 1.

    fn(y) must be the already-shifted increment f(z+y) - f(z), vectorized.
    """
    pi = mech.pi
    if pi.kind == "none":
        return 0.0
    if pi.kind == "compound-poisson":
        return float(
            sum(
                r * (float(fn(np.asarray([s]))[0]) - (s * compensate if s <= 1.0 else 0.0))
                for s, r in pi.atoms
            )
        )
    if pi.kind == "tabulated-density":
        return _tab_integral(pi, lambda y: fn(y) - y * (y <= 1.0) * compensate)

    if pi.kind == "stable-tail":
        dens = lambda y: pi.stable_c * y ** (-1.0 - pi.alpha)
    else:  # neveu-implied
        dens = lambda y: y**-2.0

    def below(y):
        return (float(fn(np.asarray([y]))[0]) - y * compensate) * dens(y)

    def above(y):
        return float(fn(np.asarray([y]))[0]) * dens(y)

    lo, err1 = integrate.quad(below, 0.0, 1.0, limit=200)
    hi, err2 = integrate.quad(above, 1.0, np.inf, limit=200)
    if not math.isfinite(lo + hi):
        raise ArithmeticError("jump integral diverged")
    return lo + hi


def generator_apply(mech: Mechanism, f, z: float, fp=None, fpp=None) -> float:
    """L f(z) = z [ (sigma^2/2) f'' + gamma f' + jump part ] - (c/2) z^2 f'(z)."""
    if z <= 0:
        raise ValueError("generator_apply requires z > 0")
    d1, d2 = _derivatives(f, z, fp, fpp)

    def incr(y):
        return f(z + np.asarray(y, dtype=float)) - f(z)

    jump = _levy_integral(mech, incr, d1)
    l_psi = 0.5 * mech.sigma**2 * d2 + mech.gamma * d1 + jump
    return z * l_psi - 0.5 * mech.c * z * z * d1


def _q_weighted_jump(ht: HTransform, f, z: float) -> float:
    """int (f(z+y) - f(z)) q(z, y) pi(dy) (no compensation; q(z,y) <= y)."""
    mech = ht.mech
    pi = mech.pi

    def fn(y):
        y = np.asarray(y, dtype=float)
        return (f(z + y) - f(z)) * ht.q(np.full_like(y, z), y)

    if pi.kind == "none":
        return 0.0
    if pi.kind == "compound-poisson":
        return float(sum(r * float(fn(np.asarray([s]))[0]) for s, r in pi.atoms))
    if pi.kind == "tabulated-density":
        return _tab_integral(pi, fn)
    if pi.kind == "stable-tail":
        dens = lambda y: pi.stable_c * y ** (-1.0 - pi.alpha)
    else:
        dens = lambda y: y**-2.0
    lo, _ = integrate.quad(lambda y: float(fn(np.asarray([y]))[0]) * dens(y), 0.0, 1.0, limit=200)
    hi, _ = integrate.quad(lambda y: float(fn(np.asarray([y]))[0]) * dens(y), 1.0, np.inf, limit=200)
    return lo + hi


def generator_up_apply(ht: HTransform, f, z: float, fp=None, fpp=None) -> float:
    """Conditioned generator: L f + sigma^2 b f' + q-weighted jumps - k f.

    At z = 0 the entrance-limit form is used (b(0) = 1, q(0,y) = h(y)/h'(0),
    k(0) = c ell / (2 h'(0)) and the base generator vanishes).
    """
    mech = ht.mech
    if z < 0:
        raise ValueError("z must be >= 0")
    if z == 0.0:
        d1, _ = _derivatives(f, 0.0, fp, fpp)
        drift = mech.sigma**2 * d1
        jump = _q_weighted_jump(ht, f, 0.0)
        return drift + jump - float(ht.k(0.0)) * f(0.0)
    base = generator_apply(mech, f, z, fp, fpp)
    d1, _ = _derivatives(f, z, fp, fpp)
    drift = mech.sigma**2 * float(ht.b(z)) * d1
    jump = _q_weighted_jump(ht, f, z)
    return base + drift + jump - float(ht.k(z)) * f(z)


# ---------------------------------------------------------------------------
# Serialization


def scale_table_to_csv(scale: ScaleTable, path) -> None:
    """Dump the edge grid (columns x, S, m, I) with a versioned hash header."""
    with open(path, "w") as fh:
        fh.write(f"# lcb-scale-table v1 mech={mechanism_hash(scale.mech)}\n")
        fh.write("x,S,m,I\n")
        for x, s, m, i in zip(scale.grid, scale.S_values, scale.m_values, scale.I_values):
            fh.write(f"{x:.17e},{s:.17e},{m:.17e},{i:.17e}\n")


def scale_table_from_csv(path, mech: Mechanism | None = None):
    """Load a dumped table; verifies the mechanism hash when mech is given."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# lcb-scale-table v1"):
            raise ValueError("not a scale-table dump")
        stored = header.split("mech=")[1]
        if mech is not None and stored != mechanism_hash(mech):
            raise ValueError(
                f"mechanism hash mismatch: file {stored}, config {mechanism_hash(mech)}"
            )
        data = np.loadtxt(fh, delimiter=",", skiprows=1)
    return {
        "x": data[:, 0],
        "S": data[:, 1],
        "m": data[:, 2],
        "I": data[:, 3],
        "mech_hash": stored,
    }
