"""Nonlocal sub-problem: transport of each informed class with a velocity
built from convolutions of the total density.

Two discretizations are provided.  ``fv_step`` is a conservative upwind
finite-volume update (the production path).  ``characteristics_solve``
transports the initial datum along backward characteristics and rescales it
by the exponential Jacobian factor; it is used as an independent check.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid1D, l1_norm
from .model import Kernel, NonlocalSpeedLaw

CFL = 0.9


class NonlocalError(RuntimeError):
    pass


class CFLError(NonlocalError):
    pass


class UnderResolvedKernel(NonlocalError):
    pass


class TraceExit(NonlocalError):
    pass


# {{{ convolution

@functools.lru_cache(maxsize=64)
def convolution_taps(kernel: Kernel, grid: Grid1D, order: int = 0):
    """Weights dx eta^(order)(d dx) for offsets d = x_j - x_m in cells, and
    the number of leading (negative-offset) taps."""
    lo, hi = kernel.window
    if hi - lo < 4 * grid.dx:
        raise UnderResolvedKernel(
            f"kernel window {hi - lo:.3g} spans fewer than 4 cells (dx={grid.dx:.3g})")
    n = grid.n_cells
    d_lo = min(int(np.floor(-lo / grid.dx + 1e-9)), n - 1)
    d_hi = min(int(np.floor(hi / grid.dx + 1e-9)), n - 1)
    d = np.arange(-d_lo, d_hi + 1)
    w = grid.dx * kernel.derivative(order)(d * grid.dx)
    w.setflags(write=False)
    return w, d_lo


def convolve(field, kernel: Kernel, grid: Grid1D, order: int = 0) -> np.ndarray:
    """(field * eta)(x_j) = dx sum_m field_m eta(x_j - x_m) over the kernel
    window (midpoint rule, zero outside the grid).  Direct sums; ``field``
    may carry leading batch axes."""
    u = np.asarray(field, dtype=float)
    w, shift = convolution_taps(kernel, grid, order)
    n = grid.n_cells
    if u.ndim == 1:
        return np.convolve(u, w)[shift:shift + n]
    flat = u.reshape(-1, n)
    out = np.array([np.convolve(row, w)[shift:shift + n] for row in flat])
    return out.reshape(u.shape)

# }}}


# {{{ velocity

@dataclass
class VelocityField:
    """Per-class velocity samples v[i, j] and their exact x-derivative."""

    v: np.ndarray
    dv: np.ndarray
    time: float = 0.0

    @property
    def k(self) -> int:
        return self.v.shape[0]


def assemble_velocity(rho, r, kernels, v_nl: NonlocalSpeedLaw, grid: Grid1D,
                      time: float = 0.0) -> VelocityField:
    """v^i = v_NL^i((sum rho + r) * eta^i) and dv^i = v_NL^i'(.) ((sum rho + r) * eta^i')."""
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    total = rho.sum(axis=0) + np.asarray(r, dtype=float)
    v = np.empty_like(rho)
    dv = np.empty_like(rho)
    for i, (ker, law) in enumerate(zip(kernels, v_nl.components)):
        if law.name == "constant":
            # exact: the convolution does not enter a constant law
            v[i] = law.params["c"]
            dv[i] = 0.0
            continue
        q = convolve(total, ker, grid)
        dq = convolve(total, ker, grid, order=1)
        v[i] = law.f(q)
        dv[i] = law.d1(q) * dq
    return VelocityField(v, dv, time)

# }}}


# {{{ finite volume

def interface_velocity(v: np.ndarray) -> np.ndarray:
    """Velocities at the N+1 interfaces; outer ones copy the edge cells."""
    mid = 0.5 * (v[..., 1:] + v[..., :-1])
    return np.concatenate((v[..., :1], mid, v[..., -1:]), axis=-1)


def fv_step(rho, velocity: VelocityField, dt: float, dx: float,
            nonconservative: bool = False) -> np.ndarray:
    """Upwind update with interface flux v+ rho_j + v- rho_{j+1}.

    ``nonconservative`` switches to the advective form
    rho_t + v rho_x = 0, which loses mass; it only exists as a negative
    control for the verification suite.
    """
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    v = velocity.v
    vmax = float(np.max(np.abs(v))) if v.size else 0.0
    if dt * vmax > CFL * dx * (1 + 1e-12):
        raise CFLError(f"CFL violated: dt*max|v| = {dt * vmax:.4g} > {CFL}*dx")
    lam = dt / dx
    if nonconservative:
        pad = np.pad(rho, ((0, 0), (1, 1)))
        back = pad[:, 1:-1] - pad[:, :-2]
        fwd = pad[:, 2:] - pad[:, 1:-1]
        return rho - lam * (np.maximum(v, 0) * back + np.minimum(v, 0) * fwd)
    vi = interface_velocity(v)
    pad = np.pad(rho, ((0, 0), (1, 1)))
    flux = np.maximum(vi, 0.0) * pad[:, :-1] + np.minimum(vi, 0.0) * pad[:, 1:]
    return rho - lam * np.diff(flux, axis=-1)


def kernel_slope_bound(kernel: Kernel, samples: int = 20001) -> float:
    lo, hi = kernel.window
    z = np.linspace(lo, hi, samples)
    return float(np.max(np.abs(kernel.d1(z))))


def nonlocal_dt_bound(v_nl: NonlocalSpeedLaw, kernels, mass: float,
                      dx: float) -> float:
    """Largest dt meeting the CFL bound and dt * sup|dv| <= 1/2.

    |dv| <= sup|v_NL'| sup|eta'| ||sum rho + r||_L1, which is the bound used
    for the second constraint (it keeps the upwind update monotone).
    """
    vmax = v_nl.speed_bound()
    q = v_nl.slope_bound() * max(kernel_slope_bound(k) for k in kernels) * mass
    bounds = [np.inf]
    if vmax > 0:
        bounds.append(CFL * dx / vmax)
    if q > 0:
        bounds.append(0.5 / q)
    return float(min(bounds))


def fv_solve(grid: Grid1D, rho0, r_history, kernels, v_nl: NonlocalSpeedLaw,
             dt: float, nonconservative: bool = False):
    """March the FV scheme through the steps of ``r_history`` (shape (M+1, N)).

    Returns the rho slab (M+1, k, N).  Velocities are frozen at the start of
    each step.
    """
    r_history = np.asarray(r_history, dtype=float)
    steps = r_history.shape[0] - 1
    rho = np.atleast_2d(np.asarray(rho0, dtype=float)).copy()
    slab = np.empty((steps + 1,) + rho.shape)
    slab[0] = rho
    for m in range(steps):
        vel = assemble_velocity(rho, r_history[m], kernels, v_nl, grid, m * dt)
        rho = fv_step(rho, vel, dt, grid.dx, nonconservative)
        slab[m + 1] = rho
    return slab

# }}}


# {{{ characteristics

@dataclass
class CharacteristicTrace:
    """Feet X(0; t, x_j), Jacobian factors E(0, t, x_j) and the measured
    sup |dv| along the traced paths."""

    foot: np.ndarray
    jacobian: np.ndarray
    sup_dv: float
    time: float

    @property
    def log_jacobian_max(self) -> float:
        return float(np.max(np.abs(np.log(self.jacobian))))


@dataclass
class CharacteristicsResult:
    times: np.ndarray
    rho: np.ndarray                   # (M+1, k, N)
    traces: list = field(default_factory=list)  # CharacteristicTrace per output time
    sup_dv: float = 0.0               # sup |d_x v| over the whole slab
    max_log_jacobian: float = 0.0

    def jacobian_bound_holds(self, slack: float = 0.1) -> bool:
        return all(tr.log_jacobian_max <= self.sup_dv * tr.time + slack
                   for tr in self.traces)


def _lookup(xq, x, fields_a, fields_b, theta):
    """Linear interpolation in x (constant beyond the grid) and in time
    between two velocity levels; fields are (k, N), xq is (k, P)."""
    out = np.empty_like(xq)
    for i in range(xq.shape[0]):
        fa = np.interp(xq[i], x, fields_a[i])
        if theta == 0.0:
            out[i] = fa
        else:
            out[i] = fa + theta * (np.interp(xq[i], x, fields_b[i]) - fa)
    return out


def _trace_back(grid: Grid1D, vels, dvs, m_end: int, dt: float, substeps: int,
                v_last=None, dv_last=None):
    """Trace characteristics from (t_{m_end}, x_j) back to t = 0.

    ``vels[m]`` is the (k, N) velocity at t_m for m < m_end; the level at
    t_{m_end} is ``v_last`` (a provisional field while that level is being
    built).  RK4 with ``substeps`` steps per dt; the integral of dv along
    each path uses the trapezoid rule on the same nodes.  Returns feet and
    that integral.
    """
    xc = grid.centers
    k = vels[0].shape[0]
    x = np.broadcast_to(xc, (k, xc.size)).copy()
    integral = np.zeros_like(x)
    h = dt / substeps
    half = 0.5 / substeps
    g0 = None
    for m in range(m_end, 0, -1):
        va, dva = vels[m - 1], dvs[m - 1]
        vb = v_last if m == m_end else vels[m]
        dvb = dv_last if m == m_end else dvs[m]
        # theta = 1 at t_m, 0 at t_{m-1}
        for s in range(substeps):
            th = 1.0 - s / substeps
            if g0 is None:
                g0 = _lookup(x, xc, dva, dvb, th)
            k1 = _lookup(x, xc, va, vb, th)
            k2 = _lookup(x - 0.5 * h * k1, xc, va, vb, th - half)
            k3 = _lookup(x - 0.5 * h * k2, xc, va, vb, th - half)
            k4 = _lookup(x - h * k3, xc, va, vb, th - 2 * half)
            x = x - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            g1 = _lookup(x, xc, dva, dvb, th - 2 * half)
            integral += 0.5 * h * (g0 + g1)
            # level t_{m-1} is shared by the next pair, so g1 is the next g0
            g0 = g1
    return x, integral


def characteristics_solve(grid: Grid1D, rho0, r_history, kernels,
                          v_nl: NonlocalSpeedLaw, dt: float,
                          substeps: int = 2) -> CharacteristicsResult:
    """Solve the nonlocal transport for a given local-density history by
    rho(t, x) = rho_o(X(0; t, x)) E(0, t, x).

    Velocities at t_m come from the density built through step m.  The
    level t_{m+1} is first predicted by linear extrapolation of the two
    previous levels, the density there is computed from the full backward
    trace, and the velocity is then rebuilt from it.
    """
    rho0 = np.atleast_2d(np.asarray(rho0, dtype=float))
    r_history = np.asarray(r_history, dtype=float)
    steps = r_history.shape[0] - 1
    k = rho0.shape[0]
    x = grid.centers
    slab = np.empty((steps + 1, k, grid.n_cells))
    slab[0] = rho0
    vel = assemble_velocity(rho0, r_history[0], kernels, v_nl, grid, 0.0)
    vels, dvs = [vel.v], [vel.dv]
    sup_dv = float(np.max(np.abs(vel.dv)))
    mass = np.array([l1_norm(grid, u) for u in rho0])
    traces = [CharacteristicTrace(np.broadcast_to(x, (k, x.size)).copy(),
                                  np.ones((k, x.size)), sup_dv, 0.0)]

    for m in range(steps):
        if dt * sup_dv > 0.5:
            raise CFLError(f"step bound violated: dt*sup|dv| = {dt * sup_dv:.3g} > 0.5")
        if m == 0:
            v_pred, dv_pred = vels[0], dvs[0]
        else:
            v_pred = 2 * vels[m] - vels[m - 1]
            dv_pred = 2 * dvs[m] - dvs[m - 1]
        foot, integral = _trace_back(grid, vels, dvs, m + 1, dt, substeps,
                                     v_pred, dv_pred)
        _check_feet(grid, foot, rho0, mass)
        jac = np.exp(-integral)
        rho = np.array([np.interp(foot[i], x, rho0[i], left=0.0, right=0.0)
                        for i in range(k)]) * jac
        slab[m + 1] = rho
        t = (m + 1) * dt
        vel = assemble_velocity(rho, r_history[m + 1], kernels, v_nl, grid, t)
        vels.append(vel.v)
        dvs.append(vel.dv)
        sup_dv = max(sup_dv, float(np.max(np.abs(vel.dv))), float(np.max(np.abs(dv_pred))))
        traces.append(CharacteristicTrace(foot, jac, sup_dv, t))

    times = dt * np.arange(steps + 1)
    mlj = max(tr.log_jacobian_max for tr in traces)
    return CharacteristicsResult(times, slab, traces, sup_dv, mlj)


def _check_feet(grid: Grid1D, foot, rho0, mass):
    """Feet leaving the grid are fine only where the datum carries no mass
    near that edge."""
    lo, hi = grid.x_min, grid.x_max
    x = grid.centers
    for i in range(foot.shape[0]):
        out_l = foot[i] < lo
        out_r = foot[i] > hi
        if not (out_l.any() or out_r.any()):
            continue
        reach_l = lo + (lo - foot[i][out_l].min()) if out_l.any() else lo
        reach_r = hi - (foot[i][out_r].max() - hi) if out_r.any() else hi
        near = (x <= reach_l + grid.dx) | (x >= reach_r - grid.dx)
        edge_mass = grid.dx * float(np.sum(np.abs(rho0[i][near])))
        if edge_mass > 1e-12 * max(mass[i], 1e-300):
            raise TraceExit("characteristic left the grid through occupied cells; "
                            "pad the domain")

# }}}
