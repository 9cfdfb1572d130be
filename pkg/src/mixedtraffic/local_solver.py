"""Local sub-problem: r_t + (r v_L(S(t, x) + r))_x = 0 for a given
coefficient S = sum of the nonlocal densities.

The scheme is a first-order conservative update with a demand/supply
(Godunov-type) interface flux built from the cellwise fluxes
f_j(u) = u v_L(S_j + u).  It is monotone under the CFL condition and keeps
any steady state whose cellwise fluxes all vanish exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .model import LocalSpeedLaw

CFL = 0.9
BISECTION_STEPS = 60


class LocalError(RuntimeError):
    pass


class LocalCFLError(LocalError):
    pass


class OracleError(ValueError):
    pass


@dataclass
class LocalFlux:
    """Coefficient slab S[m, j] on the time levels plus the speed law."""

    coefficient: np.ndarray   # (M+1, N) or (N,)
    law: LocalSpeedLaw

    def __post_init__(self):
        self.coefficient = np.atleast_2d(np.asarray(self.coefficient, dtype=float))

    def w(self, m: int, r):
        return self.law(self.coefficient[m] + r)

    def cutoff_ok(self) -> bool:
        """w(t, x, R_L + sup S) = 0 and w(t, x, -sup S - 1) = V_L on every sample."""
        s = self.coefficient
        top = float(np.max(np.abs(s)))
        hi = self.law(s + self.law.R_L + top)
        lo = self.law(s - top - 1.0)
        return bool(np.all(hi == 0.0) and np.all(lo == self.law.V_L))


def max_wave_speed(flux: LocalFlux, r_range=None, samples: int = 201) -> float:
    """sup |w + q d_r w| over the sampled coefficients and q in ``r_range``."""
    lo, hi = (0.0, flux.law.R_L) if r_range is None else r_range
    q = np.linspace(lo, hi, samples)
    s = np.unique(flux.coefficient.ravel())
    y = s[:, None] + q[None, :]
    val = flux.law(y) + q * flux.law.d1(y)
    return float(np.max(np.abs(val)))


def sonic_point(s, law: LocalSpeedLaw) -> np.ndarray:
    """Maximiser u* of u -> u v_L(s + u) on [0, first_zero - s] per cell.

    Found by bisection on the sign of v_L(s + u) + u v_L'(s + u), which is
    positive before the maximum and non-positive after it for unimodal
    fluxes.  Cells with s >= first_zero get u* = 0.
    """
    s = np.asarray(s, dtype=float)
    a = np.zeros_like(s)
    b = np.maximum(law.first_zero - s, 0.0)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (a + b)
        fp = law(s + mid) + mid * law.d1(s + mid)
        up = fp > 0
        a = np.where(up, mid, a)
        b = np.where(up, b, mid)
    return 0.5 * (a + b)


def interface_flux(r, s, law: LocalSpeedLaw, u_star=None) -> np.ndarray:
    """Demand/supply flux at the N+1 interfaces with empty ghost cells
    (r = 0 and S = 0) on both sides."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    rp = np.concatenate(([0.0], r, [0.0]))
    sp = np.concatenate(([0.0], s, [0.0]))
    if u_star is None:
        u_star = sonic_point(sp, law)
    demand = np.minimum(rp, u_star)
    supply = np.maximum(rp, u_star)
    d = demand * law(sp + demand)
    sup = supply * law(sp + supply)
    return np.minimum(d[:-1], sup[1:])


def local_dt_bound(law: LocalSpeedLaw, dx: float) -> float:
    sigma = law.flux_speed_bound()
    return np.inf if sigma == 0 else CFL * dx / sigma


def local_step(r, s, law: LocalSpeedLaw, dt: float, dx: float,
               sigma: float | None = None, u_star=None) -> np.ndarray:
    """One conservative update of r with coefficient S frozen at the start
    of the step.  ``u_star`` may carry precomputed sonic points of the
    padded coefficient."""
    if sigma is None:
        sigma = law.flux_speed_bound()
    if dt * sigma > CFL * dx * (1 + 1e-12):
        raise LocalCFLError(f"CFL violated: dt*sigma = {dt * sigma:.4g} > {CFL}*dx")
    flux = interface_flux(r, s, law, u_star)
    return np.asarray(r, dtype=float) - dt / dx * np.diff(flux)


def local_solve(r0, flux: LocalFlux, dt: float, dx: float) -> np.ndarray:
    """March through the levels of ``flux.coefficient``; returns the slab
    (M+1, N) of r."""
    s = flux.coefficient
    steps = s.shape[0] - 1
    sigma = flux.law.flux_speed_bound()
    r = np.asarray(r0, dtype=float).copy()
    out = np.empty((steps + 1, r.size))
    out[0] = r
    u_star, s_prev = None, None
    for m in range(steps):
        if s_prev is None or not np.array_equal(s[m], s_prev):
            s_prev = s[m]
            u_star = sonic_point(np.concatenate(([0.0], s_prev, [0.0])), flux.law)
        r = local_step(r, s[m], flux.law, dt, dx, sigma, u_star)
        out[m + 1] = r
    return out


# {{{ Riemann oracle

def _classify(law: LocalSpeedLaw, lo: float, hi: float) -> int:
    """+1 for a convex flux u v_L(u) on [lo, hi], -1 for concave."""
    u = np.linspace(lo, hi, 2001)
    f2 = 2.0 * law.d1(u) + u * law.d2(u)
    # the cutoff kinks of a merely Lipschitz law are invisible to d2, so the
    # sign is also read off second differences of the flux itself
    f = u * law(u)
    dd = np.diff(f, 2)
    scale = 1e-9 * max(1.0, float(np.max(np.abs(f))))
    if np.all(f2 <= 1e-12) and np.all(dd <= scale):
        return -1
    if np.all(f2 >= -1e-12) and np.all(dd >= -scale):
        return 1
    raise OracleError("oracle limited to convex/concave flux")


def riemann_oracle(r_l: float, r_r: float, law: LocalSpeedLaw, t: float, x):
    """Entropy solution at (t, x) of the Riemann problem for u v_L(u) with the
    jump at x = 0."""
    x = np.asarray(x, dtype=float)
    if r_l == r_r:
        return np.full_like(x, r_l)
    if t <= 0:
        return np.where(x < 0, r_l, r_r)
    kind = _classify(law, min(r_l, r_r), max(r_l, r_r))
    f = lambda u: u * float(law(np.array(u)))
    fp = lambda u: float(law(np.array(u)) + u * law.d1(np.array(u)))
    # concave: shock when r_l < r_r; convex: shock when r_l > r_r
    if (kind < 0) == (r_l < r_r):
        st = (f(r_r) - f(r_l)) / (r_r - r_l)
        return np.where(x < st * t, r_l, r_r)
    xi = x / t
    # fan edges taken just inside the interval: a Lipschitz law has one-sided
    # derivatives at its cutoffs
    eps = 1e-12 * abs(r_r - r_l)
    inward = np.sign(r_r - r_l)
    a, b = fp(r_l + inward * eps), fp(r_r - inward * eps)
    out = np.empty_like(xi)
    for i, z in enumerate(xi.ravel()):
        if z <= a:
            out.flat[i] = r_l
        elif z >= b:
            out.flat[i] = r_r
        else:
            out.flat[i] = brentq(lambda u: fp(u) - z, min(r_l, r_r) + eps,
                                 max(r_l, r_r) - eps, xtol=1e-14)
    return out

# }}}
