"""Model ingredients: averaging kernels, speed laws, initial data.

Kernels and speed laws carry closed-form derivatives (kernels and nonlocal
laws up to third order, the local law up to second order).  Objects built
here are immutable; everything is evaluated on numpy arrays.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special

from .grid import Grid1D

Fn = Callable[[np.ndarray], np.ndarray]

KERNEL_CUTOFF = 1e-12


class ModelError(ValueError):
    pass


def _bound(funcs: Sequence[Fn], lo: float, hi: float, n: int = 40001) -> float:
    z = np.linspace(lo, hi, n)
    return 1.001 * max(float(np.max(np.abs(f(z)))) for f in funcs)


# {{{ kernels

@dataclass(frozen=True, eq=False)
class Kernel:
    """Averaging kernel with derivatives up to order three.

    The convolution ``(u * eta)(x) = int u(y) eta(x - y) dy`` averages ``u``
    over ``[x - support_back, x + support_fwd]``, so ``eta(z)`` is only
    evaluated for ``z`` in ``[-support_fwd, support_back]``.
    """

    name: str
    evaluate: Fn
    d1: Fn
    d2: Fn
    d3: Fn
    support_back: float
    support_fwd: float
    w3inf_bound: float
    tail_mass: float = 0.0
    params: dict = field(default_factory=dict)

    def __call__(self, z):
        return self.evaluate(np.asarray(z, dtype=float))

    def derivative(self, order: int) -> Fn:
        return (self.evaluate, self.d1, self.d2, self.d3)[order]

    @property
    def window(self) -> tuple[float, float]:
        return (-self.support_fwd, self.support_back)

    def mass(self) -> float:
        lo, hi = self.window
        val, _ = integrate.quad(lambda z: float(self.evaluate(np.array(z))),
                                lo, hi, limit=400, epsabs=1e-14, epsrel=1e-13)
        return val


def gaussian_kernel(sigma: float, cutoff: float = KERNEL_CUTOFF,
                    half_width: float | None = None) -> Kernel:
    """Normalized Gaussian; the window is where the density exceeds ``cutoff``
    unless ``half_width`` truncates it explicitly."""
    if sigma <= 0:
        raise ModelError("sigma must be positive")
    c = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    s2 = sigma * sigma

    def f(z):
        return c * np.exp(-0.5 * z * z / s2)

    def d1(z):
        return -z / s2 * f(z)

    def d2(z):
        return (z * z / s2**2 - 1.0 / s2) * f(z)

    def d3(z):
        return (-z**3 / s2**3 + 3.0 * z / s2**2) * f(z)

    if half_width is None:
        if c <= cutoff:
            half_width = 0.0
        else:
            half_width = sigma * math.sqrt(2.0 * math.log(c / cutoff))
    tail = float(special.erfc(half_width / (sigma * math.sqrt(2.0))))
    w = max(half_width, 4 * sigma)
    bound = _bound((f, d1, d2, d3), -w, w)
    return Kernel("gaussian", f, d1, d2, d3, half_width, half_width, bound,
                  tail, {"sigma": sigma})


def forward_kernel(lam: float, cutoff: float = KERNEL_CUTOFF) -> Kernel:
    """Look-ahead kernel ``eta(z) = lam^5/24 z^4 exp(lam z)`` for ``z <= 0``.

    The quartic factor makes it C^3 at the origin; only downstream density
    enters the average (``support_back == 0``).
    """
    if lam <= 0:
        raise ModelError("lam must be positive")
    c = lam**5 / 24.0

    def _y(z):
        return np.maximum(-z, 0.0)

    def _e(y):
        return np.exp(-lam * y)

    def f(z):
        y = _y(z)
        return c * y**4 * _e(y)

    def d1(z):
        y = _y(z)
        return -c * (4 * y**3 - lam * y**4) * _e(y)

    def d2(z):
        y = _y(z)
        return c * (12 * y**2 - 8 * lam * y**3 + lam**2 * y**4) * _e(y)

    def d3(z):
        y = _y(z)
        return -c * (24 * y - 36 * lam * y**2 + 12 * lam**2 * y**3
                     - lam**3 * y**4) * _e(y)

    # beyond the mode at y = 4/lam the kernel decays monotonically
    g = lambda y: math.log(c) + 4 * math.log(y) - lam * y - math.log(cutoff)
    y_hi = 4.0 / lam
    while g(y_hi) > 0:
        y_hi *= 2
    reach = optimize.brentq(g, 4.0 / lam, y_hi, xtol=1e-14)
    tail = float(special.gammaincc(5, lam * reach))
    bound = _bound((f, d1, d2, d3), -reach, 0.0)
    return Kernel("forward", f, d1, d2, d3, 0.0, reach, bound, tail,
                  {"lam": lam})


def kernel_from_callables(name, f, d1, d2, d3, support_back, support_fwd,
                          w3inf_bound=None) -> Kernel:
    if w3inf_bound is None:
        w3inf_bound = _bound((f, d1, d2, d3), -support_fwd, support_back)
    return Kernel(name, f, d1, d2, d3, support_back, support_fwd, w3inf_bound)

# }}}


# {{{ speed laws

@dataclass(frozen=True, eq=False)
class ScalarLaw:
    """A scalar speed law q -> v(q) with derivatives up to order three."""

    name: str
    f: Fn
    d1: Fn
    d2: Fn
    d3: Fn
    params: dict = field(default_factory=dict)

    def __call__(self, q):
        return self.f(np.asarray(q, dtype=float))


# C^3 clamp from 0 to 1 on [0, 1]
_SEPTIC = np.poly1d([-20.0, 70.0, -84.0, 35.0, 0.0, 0.0, 0.0, 0.0])
_SEPTIC_D = [_SEPTIC, _SEPTIC.deriv(1), _SEPTIC.deriv(2), _SEPTIC.deriv(3)]


def smoothstep_law(v_max: float, q_max: float) -> ScalarLaw:
    """v(q) = v_max (1 - S(q / q_max)) with S the septic smoothstep.

    Equals v_max for q <= 0 and 0 for q >= q_max; C^3 with bounded
    derivatives on the whole line.
    """
    if q_max <= 0:
        raise ModelError("q_max must be positive")

    def make(order):
        p = _SEPTIC_D[order]

        def fn(q):
            t = np.asarray(q, dtype=float) / q_max
            inside = (t > 0) & (t < 1)
            out = np.zeros_like(t)
            if order == 0:
                out = np.where(t >= 1, 1.0, 0.0)
                out = np.where(inside, p(np.clip(t, 0, 1)), out)
                return v_max * (1.0 - out)
            out = np.where(inside, p(np.clip(t, 0, 1)), 0.0)
            return -v_max * out / q_max**order
        return fn

    return ScalarLaw("smoothstep", make(0), make(1), make(2), make(3),
                     {"v_max": v_max, "q_max": q_max})


def constant_law(c: float) -> ScalarLaw:
    zero = lambda q: np.zeros_like(np.asarray(q, dtype=float))
    return ScalarLaw("constant", lambda q: np.full_like(np.asarray(q, dtype=float), c),
                     zero, zero, zero, {"c": c})


def linear_law(a: float = 1.0, b: float = -1.0) -> ScalarLaw:
    """v(q) = a + b q.  Unbounded, so not W^{3,inf}; meant for tests."""
    zero = lambda q: np.zeros_like(np.asarray(q, dtype=float))
    return ScalarLaw("linear", lambda q: a + b * np.asarray(q, dtype=float),
                     lambda q: np.full_like(np.asarray(q, dtype=float), b),
                     zero, zero, {"a": a, "b": b})


@dataclass(frozen=True, eq=False)
class NonlocalSpeedLaw:
    components: tuple[ScalarLaw, ...]
    w3inf_bound: float
    # range of convolved densities the bound was sampled on
    q_range: tuple[float, float] = (-10.0, 10.0)

    @property
    def k(self) -> int:
        return len(self.components)

    def speed_bound(self) -> float:
        """sup |v_NL^i| over the sampled range."""
        q = np.linspace(*self.q_range, 20001)
        return max(float(np.max(np.abs(c.f(q)))) for c in self.components)

    def slope_bound(self) -> float:
        q = np.linspace(*self.q_range, 20001)
        return max(float(np.max(np.abs(c.d1(q)))) for c in self.components)


def nonlocal_law(components: Sequence[ScalarLaw],
                 q_range: tuple[float, float] = (-10.0, 10.0)) -> NonlocalSpeedLaw:
    comps = tuple(components)
    bound = max(_bound((c.f, c.d1, c.d2, c.d3), *q_range) for c in comps)
    return NonlocalSpeedLaw(comps, bound, q_range)


def _hermite5(x0, x1, left, right) -> np.poly1d:
    """Quintic in t = x - x0 matching (value, d1, d2) at both ends."""
    h = x1 - x0
    rows, rhs = [], []
    for t, (p, m, c) in ((0.0, left), (h, right)):
        rows.append([t**5, t**4, t**3, t**2, t, 1.0])
        rows.append([5 * t**4, 4 * t**3, 3 * t**2, 2 * t, 1.0, 0.0])
        rows.append([20 * t**3, 12 * t**2, 6 * t, 2.0, 0.0, 0.0])
        rhs += [p, m, c]
    return np.poly1d(np.linalg.solve(np.array(rows), np.array(rhs)))


@dataclass(frozen=True, eq=False)
class LocalSpeedLaw:
    """Speed law of the local class with the cutoffs v = V_L below 0 and
    v = 0 above R_L.  ``first_zero`` is the smallest density where the
    speed vanishes; the local scheme only looks for sonic points below it.
    """

    name: str
    profile: Fn
    d1: Fn
    d2: Fn
    V_L: float
    R_L: float
    first_zero: float
    params: dict = field(default_factory=dict)

    def __call__(self, r):
        return self.profile(np.asarray(r, dtype=float))

    def flux_speed_bound(self) -> float:
        """sup |v(y) + q v'(y)| over 0 <= q <= y <= R_L.

        Bounds the local wave speed for any nonnegative coefficient; the
        expression is linear in q so the ends q = 0 and q = y suffice.
        """
        y = np.linspace(0.0, self.R_L, 200001)
        v, dv = self.profile(y), self.d1(y)
        return float(max(np.max(np.abs(v)), np.max(np.abs(v + y * dv))))

    def sup_d1(self) -> float:
        y = np.linspace(-0.1 * self.R_L, 1.1 * self.R_L, 200001)
        return float(np.max(np.abs(self.d1(y))))

    def sup_d2(self) -> float:
        y = np.linspace(-0.1 * self.R_L, 1.1 * self.R_L, 200001)
        return float(np.max(np.abs(self.d2(y))))


def _piecewise_law(name, V_L, R_L, first_zero, pieces, params) -> LocalSpeedLaw:
    """``pieces`` is a list of (lo, hi, poly) on which v is that polynomial in
    ``r - lo``; outside them v is V_L below 0 and 0 above R_L."""

    def make(order):
        def fn(r):
            r = np.asarray(r, dtype=float)
            out = np.where(r <= 0, V_L if order == 0 else 0.0, 0.0)
            out = np.array(out, dtype=float)
            for lo, hi, poly in pieces:
                p = poly.deriv(order) if order else poly
                mask = (r > lo) & (r <= hi)
                if np.any(mask):
                    out[mask] = p(r[mask] - lo)
            out[r >= R_L] = 0.0
            return out
        return fn

    return LocalSpeedLaw(name, make(0), make(1), make(2), V_L, R_L,
                         first_zero, params)


def greenshields_law(V_L: float = 1.0, R_L: float = 1.0) -> LocalSpeedLaw:
    """Plain Greenshields V_L (1 - r / R_L) clipped to [0, V_L].

    Only Lipschitz at 0 and R_L; its flux is strictly concave on [0, R_L],
    which the Riemann oracle relies on.
    """
    lin = np.poly1d([-V_L / R_L, V_L])
    return _piecewise_law("greenshields", V_L, R_L, R_L,
                          [(0.0, R_L, lin)], {"V_L": V_L, "R_L": R_L})


def greenshields_c2_law(V_L: float = 1.0, R_L: float = 1.0,
                        delta: float | None = None) -> LocalSpeedLaw:
    """Greenshields with C^2 cutoffs: quintic Hermite joins on [0, delta]
    and [R_L - delta, R_L], linear in between.  Default delta = R_L / 10."""
    if delta is None:
        delta = R_L / 10.0
    if not 0 < delta < R_L / 2:
        raise ModelError("delta must lie in (0, R_L / 2)")
    g = lambda r: V_L * (1.0 - r / R_L)
    s = -V_L / R_L
    left = _hermite5(0.0, delta, (V_L, 0.0, 0.0), (g(delta), s, 0.0))
    mid = np.poly1d([s, g(delta)])
    right = _hermite5(R_L - delta, R_L, (g(R_L - delta), s, 0.0), (0.0, 0.0, 0.0))
    pieces = [(0.0, delta, left), (delta, R_L - delta, mid),
              (R_L - delta, R_L, right)]
    return _piecewise_law("greenshields-c2", V_L, R_L, R_L, pieces,
                          {"V_L": V_L, "R_L": R_L, "delta": delta})


def example1_law(R_L: float = 1.5) -> LocalSpeedLaw:
    """C^2 law with v(r) = 1 - r on [1/2, 1] and V_L = 1.

    Being C^2 with v(1) = 0 and v'(1) = -1, the law dips below zero on
    (1, R_L) before the cutoff, so R_L > 1 is required.
    """
    if R_L <= 1.0:
        raise ModelError("example1 law needs R_L > 1")
    left = _hermite5(0.0, 0.5, (1.0, 0.0, 0.0), (0.5, -1.0, 0.0))
    mid = np.poly1d([-1.0, 0.5])
    right = _hermite5(1.0, R_L, (0.0, -1.0, 0.0), (0.0, 0.0, 0.0))
    pieces = [(0.0, 0.5, left), (0.5, 1.0, mid), (1.0, R_L, right)]
    return _piecewise_law("example1", 1.0, R_L, 1.0, pieces, {"R_L": R_L})


def zero_local_law(R_L: float = 1.0) -> LocalSpeedLaw:
    """Degenerate v_L == 0 (violates V_L > 0; used as a test fixture)."""
    zero = lambda r: np.zeros_like(np.asarray(r, dtype=float))
    return LocalSpeedLaw("zero", zero, zero, zero, 0.0, R_L, 0.0)


def local_law_from_callables(name, profile, d1, d2, V_L, R_L,
                             first_zero=None) -> LocalSpeedLaw:
    return LocalSpeedLaw(name, profile, d1, d2, V_L, R_L,
                         R_L if first_zero is None else first_zero)

# }}}


# {{{ model bundle and initial data

@dataclass(frozen=True, eq=False)
class Model:
    kernels: tuple[Kernel, ...]
    v_nl: NonlocalSpeedLaw
    v_l: LocalSpeedLaw
    name: str = "custom"

    def __post_init__(self):
        if len(self.kernels) != self.v_nl.k:
            raise ModelError(
                f"{len(self.kernels)} kernels for {self.v_nl.k} nonlocal classes")

    @property
    def k(self) -> int:
        return self.v_nl.k


def bump(x, center: float, width: float, height: float = 1.0) -> np.ndarray:
    """height (1 - ((x - center) / width)^2)^4 on |x - center| < width: C^3
    with compact support."""
    z = (np.asarray(x, dtype=float) - center) / width
    return np.where(np.abs(z) < 1.0, height * (1.0 - z * z) ** 4, 0.0)


def example1_rho(x, n: int) -> np.ndarray:
    """Hat of height 1 on [1 - 1/n, 1 + 1/n]."""
    x = np.asarray(x, dtype=float)
    up = 1.0 + n * (x - 1.0)
    down = 1.0 - n * (x - 1.0)
    return np.where((x >= 1 - 1 / n) & (x <= 1.0), up,
                    np.where((x > 1.0) & (x <= 1 + 1 / n), down, 0.0))


def example1_r(x, n: int) -> np.ndarray:
    """1 on [0, 1 - 1/n], then n (1 - x) down to 0 at x = 1."""
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0) & (x <= 1 - 1 / n), 1.0,
                    np.where((x > 1 - 1 / n) & (x <= 1.0), n * (1.0 - x), 0.0))


def indicator(x, a: float, b: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where((x >= a) & (x <= b), 1.0, 0.0)


@dataclass(frozen=True)
class InitialDatum:
    rho0: np.ndarray  # (k, N)
    r0: np.ndarray    # (N,)

    def __post_init__(self):
        rho = np.atleast_2d(np.asarray(self.rho0, dtype=float))
        object.__setattr__(self, "rho0", rho)
        object.__setattr__(self, "r0", np.asarray(self.r0, dtype=float))
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(self.r0))):
            raise ModelError("initial datum must be finite")
        if rho.shape[1] != self.r0.shape[0]:
            raise ModelError("rho0 and r0 sampled on different grids")

    @property
    def class_count(self) -> int:
        return self.rho0.shape[0]

    def check_physical(self, R_L: float) -> None:
        if np.any(self.rho0 < 0):
            raise ModelError("rho0 must be nonnegative")
        if np.any(self.r0 < 0) or np.any(self.r0 > R_L):
            raise ModelError(f"r0 must lie in [0, {R_L}]")

    def norms(self, grid: Grid1D) -> dict:
        from .grid import norm_report
        return {"rho": [norm_report(grid, u) for u in self.rho0],
                "r": norm_report(grid, self.r0)}

# }}}


# {{{ mollifier

def _zeta(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def _simpson(fn, a, b, m=64):
    """Composite Simpson on [a, b] (vectorized over a, b) with m panels."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.linspace(0.0, 1.0, 2 * m + 1)
    w = np.ones(2 * m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    pts = a[..., None] + (b - a)[..., None] * t
    return (b - a) / (6.0 * m) * (fn(pts) @ w)


_ZETA_MASS = float(_simpson(_zeta, -1.0, 1.0, m=4096))


def zeta_n(x, n: float):
    """Normalized bump mollifier scaled to support [-1/n, 1/n]."""
    return n * _zeta(n * np.asarray(x, dtype=float)) / _ZETA_MASS


def mollify(grid: Grid1D, field: np.ndarray, n: int) -> np.ndarray:
    """Discrete convolution with zeta_n.

    Cell weights are Simpson integrals of zeta_n over each cell, normalized
    to sum to one, so the L1 norm never increases.
    """
    if n < 1:
        raise ModelError("n must be a positive integer")
    dx = grid.dx
    if 1.0 / n < 2.0 * dx:
        raise ModelError("under-resolved mollifier")
    u = np.asarray(field, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ModelError("field must be finite")
    m = int(math.ceil(1.0 / (n * dx) + 0.5))
    offs = np.arange(-m, m + 1)
    lo = np.clip((offs - 0.5) * dx, -1.0 / n, 1.0 / n)
    hi = np.clip((offs + 0.5) * dx, -1.0 / n, 1.0 / n)
    w = _simpson(lambda y: zeta_n(y, n), lo, hi, m=32)
    w = w / w.sum()
    full = np.convolve(u, w, mode="full")
    return full[m:m + u.size]

# }}}


# {{{ hypothesis screening

@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    worst: float
    where: float | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[HypothesisCheck]
    support_window: tuple[float, float] | None = None
    tail_mass: float | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[HypothesisCheck]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _fd_consistency(name, f, df, pts, h, bound) -> HypothesisCheck:
    """Centered differences of f against df.  W^{3,inf} allows the top
    derivative to have kinks, so the tolerance is first order in h; a wrong
    or discontinuous derivative still shows up as an O(1) error."""
    fd = (f(pts + h) - f(pts - h)) / (2 * h)
    err = np.abs(fd - df(pts))
    tol = 10 * h * bound + 1e-9 * (1 + bound)
    i = int(np.argmax(err - tol))
    return HypothesisCheck(name, bool(np.all(err <= tol)), float(err[i]),
                           float(pts[i]), f"tol {tol:.3g}")


def _bounded(name, funcs, pts, bound) -> HypothesisCheck:
    worst = max(float(np.max(np.abs(f(pts)))) for f in funcs)
    return HypothesisCheck(name, worst <= bound * (1 + 1e-12), worst,
                           detail=f"bound {bound:.6g}")


def _integrated(name, f, df, lo, hi, h, scale) -> HypothesisCheck:
    """f(x + h) - f(x) against the trapezoid of df: fails on jumps."""
    x = np.arange(lo, hi, h)
    fx = f(x)
    dfx = df(x)
    err = np.abs(np.diff(fx) - 0.5 * h * (dfx[1:] + dfx[:-1]))
    tol = 10 * h * h * (1.0 + scale)
    i = int(np.argmax(err))
    return HypothesisCheck(name, bool(err[i] <= tol), float(err[i]),
                           float(x[i]), f"tol {tol:.3g}")


def validate_hypotheses(kernel: Kernel | Sequence[Kernel], v_nl: NonlocalSpeedLaw,
                        v_l: LocalSpeedLaw, sample_count: int = 1000,
                        seed: int = 0, tail_tol: float = 1e-8) -> ValidationReport:
    """Numerical screening of the regularity hypotheses on eta, v_NL, v_L.

    Samples are drawn from a seeded generator plus a uniform grid, so the
    report is deterministic.
    """
    if sample_count < 100:
        raise ModelError("sample_count must be at least 100")
    rng = np.random.default_rng(seed)
    kernels = [kernel] if isinstance(kernel, Kernel) else list(kernel)
    checks: list[HypothesisCheck] = []
    h = 1e-4

    window, tail = None, None
    for i, ker in enumerate(kernels):
        lo, hi = ker.window
        span = max(hi - lo, 1e-3)
        pts = np.concatenate([rng.uniform(lo - 0.1 * span, hi + 0.1 * span, sample_count),
                              np.linspace(lo, hi, sample_count)])
        fns = [ker.evaluate, ker.d1, ker.d2, ker.d3]
        hk = h * span
        for o in range(3):
            checks.append(_fd_consistency(f"eta[{i}] d{o + 1}", fns[o], fns[o + 1],
                                          pts, hk, ker.w3inf_bound))
        checks.append(_bounded(f"eta[{i}] W3inf", fns, pts, ker.w3inf_bound))
        checks.append(HypothesisCheck(f"eta[{i}] tail mass", ker.tail_mass <= tail_tol,
                                      ker.tail_mass, detail=f"tol {tail_tol:g}"))
        if i == 0:
            window, tail = ker.window, ker.tail_mass

    q = np.concatenate([rng.uniform(*v_nl.q_range, sample_count),
                        np.linspace(*v_nl.q_range, sample_count)])
    for i, c in enumerate(v_nl.components):
        fns = [c.f, c.d1, c.d2, c.d3]
        for o in range(3):
            checks.append(_fd_consistency(f"v_NL[{i}] d{o + 1}", fns[o], fns[o + 1],
                                          q, h, v_nl.w3inf_bound))
        checks.append(_bounded(f"v_NL[{i}] W3inf", fns, q, v_nl.w3inf_bound))

    R = v_l.R_L
    below = -rng.uniform(0, 10 * R, sample_count)
    above = R + rng.uniform(0, 10 * R, sample_count)
    vb = v_l.profile(np.concatenate([below, [0.0, -R]]))
    va = v_l.profile(np.concatenate([above, [R, 2 * R]]))
    bad_b = float(np.max(np.abs(vb - v_l.V_L)))
    bad_a = float(np.max(np.abs(va)))
    checks.append(HypothesisCheck("v_L cutoffs", bad_b == 0.0 and bad_a == 0.0
                                  and v_l.V_L > 0 and R > 0, max(bad_b, bad_a)))
    hl = 1e-5 * R
    s1 = v_l.sup_d1()
    s2 = v_l.sup_d2()
    c1 = _integrated("v_L C1", v_l.profile, v_l.d1, -0.1 * R, 1.1 * R, hl, s1)
    c2 = _integrated("v_L C2", v_l.d1, v_l.d2, -0.1 * R, 1.1 * R, hl, s2)
    x = np.arange(-0.1 * R, 1.1 * R, hl)
    jump = float(np.max(np.abs(np.diff(v_l.d2(x)))))
    cont = jump <= 1e-2 * (1.0 + s2)
    ok = c1.passed and c2.passed and cont
    worst = max(c1.worst, c2.worst, jump)
    checks.append(HypothesisCheck("v_L C2", ok, worst,
                                  detail="" if ok else "C² violated"))

    # the local scheme needs r -> r v_L(s + r) unimodal where v_L >= 0
    uni_ok, uni_worst = True, 0.0
    for s in np.linspace(0.0, v_l.first_zero, 11)[:-1]:
        u = np.linspace(0.0, v_l.first_zero - s, 2001)
        fp = v_l.profile(s + u) + u * v_l.d1(s + u)
        neg = np.flatnonzero(fp < -1e-12)
        if neg.size and np.any(fp[neg[0]:] > 1e-12):
            uni_ok = False
            uni_worst = float(s)
    checks.append(HypothesisCheck("local flux unimodal", uni_ok, uni_worst))
    return ValidationReport(checks, window, tail)

# }}}


# {{{ built-ins and descriptors

def builtin_model(name: str, parameters: dict | None = None) -> Model:
    p = dict(parameters or {})
    if name == "gaussian-greenshields":
        sigma = p.get("sigma", 0.5)
        V_L, R_L = p.get("V_L", 1.0), p.get("R_L", 1.0)
        speeds = p.get("speeds", [1.0])
        q_max = p.get("q_max", 1.5)
        kernels = tuple(gaussian_kernel(sigma) for _ in speeds)
        v_nl = nonlocal_law([smoothstep_law(v, q_max) for v in speeds])
        return Model(kernels, v_nl, greenshields_c2_law(V_L, R_L), name)
    if name == "forward-exponential":
        lam = p.get("lam", 1.0)
        V_L, R_L = p.get("V_L", 1.0), p.get("R_L", 1.0)
        speeds = p.get("speeds", [1.0])
        q_max = p.get("q_max", 1.5)
        kernels = tuple(forward_kernel(lam) for _ in speeds)
        v_nl = nonlocal_law([smoothstep_law(v, q_max) for v in speeds])
        return Model(kernels, v_nl, greenshields_c2_law(V_L, R_L), name)
    if name == "example1":
        sigma = p.get("sigma", 0.5)
        return Model((gaussian_kernel(sigma),), nonlocal_law([constant_law(0.0)]),
                     example1_law(p.get("R_L", 1.5)), name)
    raise ModelError(f"unknown built-in model {name!r}")


def kernel_from_dict(d: dict) -> Kernel:
    fam = d.get("family")
    if fam == "gaussian":
        return gaussian_kernel(d["sigma"], d.get("cutoff", KERNEL_CUTOFF),
                               d.get("half_width"))
    if fam == "forward":
        return forward_kernel(d["lam"], d.get("cutoff", KERNEL_CUTOFF))
    raise ModelError(f"unknown kernel family {fam!r}")


def scalar_law_from_dict(d: dict) -> ScalarLaw:
    fam = d.get("family")
    if fam == "smoothstep":
        return smoothstep_law(d["v_max"], d["q_max"])
    if fam == "constant":
        return constant_law(d.get("c", 0.0))
    if fam == "zero":
        return constant_law(0.0)
    if fam == "linear":
        return linear_law(d.get("a", 1.0), d.get("b", -1.0))
    raise ModelError(f"unknown speed-law family {fam!r}")


def local_law_from_dict(d: dict) -> LocalSpeedLaw:
    fam = d.get("family")
    if fam == "greenshields":
        return greenshields_law(d.get("V_L", 1.0), d.get("R_L", 1.0))
    if fam == "greenshields-c2":
        return greenshields_c2_law(d.get("V_L", 1.0), d.get("R_L", 1.0), d.get("delta"))
    if fam == "example1":
        return example1_law(d.get("R_L", 1.5))
    if fam == "zero":
        return zero_local_law(d.get("R_L", 1.0))
    raise ModelError(f"unknown local-law family {fam!r}")


def model_from_dict(d: dict) -> Model:
    """Build a model from ``{"builtin": ..}`` or explicit
    ``{"kernel": .., "v_nl": .., "v_l": ..}``; kernel and v_nl may be lists
    (one entry per class)."""
    if "builtin" in d:
        return builtin_model(d["builtin"], d.get("params"))
    kd = d["kernel"]
    nd = d["v_nl"]
    kds = kd if isinstance(kd, list) else None
    nds = nd if isinstance(nd, list) else None
    k = len(kds or nds or [None])
    kernels = tuple(kernel_from_dict(x) for x in (kds or [kd] * k))
    laws = [scalar_law_from_dict(x) for x in (nds or [nd] * k)]
    return Model(kernels, nonlocal_law(laws), local_law_from_dict(d["v_l"]),
                 d.get("name", "custom"))


def _shape(grid: Grid1D, entry, base: Path | None) -> np.ndarray:
    if isinstance(entry, (int, float)):
        return np.full(grid.n_cells, float(entry))
    if isinstance(entry, list):
        return sum((_shape(grid, s, base) for s in entry), np.zeros(grid.n_cells))
    kind = entry.get("shape")
    x = grid.centers
    if kind == "bump":
        return bump(x, entry["center"], entry["width"], entry.get("height", 1.0))
    if kind == "indicator":
        return entry.get("height", 1.0) * indicator(x, entry["a"], entry["b"])
    if kind == "example1-rho":
        return example1_rho(x, entry["n"])
    if kind == "example1-r":
        return example1_r(x, entry["n"])
    if kind == "zero":
        return np.zeros(grid.n_cells)
    if kind == "csv":
        path = Path(entry["path"])
        if base is not None and not path.is_absolute():
            path = base / path
        return load_csv_field(grid, path)
    raise ModelError(f"unknown initial shape {kind!r}")


def initial_from_dict(grid: Grid1D, d: dict, k: int,
                      base: Path | None = None) -> InitialDatum:
    rho_specs = d.get("rho", [])
    if not isinstance(rho_specs, list) or (rho_specs and not isinstance(rho_specs[0], (list, dict, int, float))):
        raise ModelError("initial.rho must be a list with one entry per class")
    if len(rho_specs) != k:
        raise ModelError(f"initial.rho has {len(rho_specs)} entries for {k} classes")
    rho = np.array([_shape(grid, s, base) for s in rho_specs])
    r = _shape(grid, d.get("r", {"shape": "zero"}), base)
    return InitialDatum(rho, r)


def load_csv_field(grid: Grid1D, path: Path) -> np.ndarray:
    """Two-column CSV (x, value), linearly interpolated onto the cell centers
    and zero outside the sampled range.  Lines starting with '#' and a
    non-numeric header row are skipped."""
    xs, vs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                xs.append(float(row[0]))
                vs.append(float(row[1]))
            except ValueError:
                if xs:
                    raise ModelError(f"malformed row in {path}: {row}")
    if not xs:
        raise ModelError(f"no data in {path}")
    xs = np.asarray(xs)
    order = np.argsort(xs, kind="stable")
    return np.interp(grid.centers, xs[order], np.asarray(vs)[order],
                     left=0.0, right=0.0)


def load_model_json(path) -> tuple[Model, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc), doc

# }}}
