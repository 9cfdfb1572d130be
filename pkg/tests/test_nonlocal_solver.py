import numpy as np
import pytest
from scipy.special import erf, gammainc

from mixedtraffic.grid import Grid1D, l1_norm
from mixedtraffic.model import (constant_law, forward_kernel, gaussian_kernel,
                                indicator, nonlocal_law, smoothstep_law)
from mixedtraffic.nonlocal_solver import (CFLError, TraceExit, UnderResolvedKernel,
                                          VelocityField, assemble_velocity,
                                          characteristics_solve, convolve, fv_solve,
                                          fv_step, interface_velocity,
                                          nonlocal_dt_bound)

GRID = Grid1D(-4.0, 6.0, 800)
BUMP = np.where(np.abs(GRID.centers) < 1, (1 - GRID.centers ** 2) ** 4, 0.0)


# {{{ convolution

@pytest.mark.parametrize("kernel", [gaussian_kernel(0.5), forward_kernel(2.0)],
                         ids=["gauss", "fwd"])
def test_convolve_zero_and_constant(kernel):
    assert np.all(convolve(np.zeros(GRID.n_cells), kernel, GRID) == 0)
    out = convolve(np.ones(GRID.n_cells), kernel, GRID)
    lo, hi = kernel.window
    inner = (GRID.centers > GRID.x_min + hi + 0.1) & (GRID.centers < GRID.x_max + lo - 0.1)
    assert np.allclose(out[inner], 1.0, atol=5e-3)


@pytest.mark.parametrize("sigma", [0.25, 0.5])
def test_gaussian_convolution_of_indicator_matches_erf(sigma):
    g = Grid1D(-3.0, 4.0, 1400)
    x = g.centers
    out = convolve(indicator(x, 0.0, 1.0), gaussian_kernel(sigma), g)
    s = sigma * np.sqrt(2)
    exact = 0.5 * (erf(x / s) - erf((x - 1) / s))
    assert np.max(np.abs(out - exact)) < g.dx / sigma


def test_forward_convolution_of_indicator_closed_form():
    lam = 2.0
    g = Grid1D(-3.0, 4.0, 1400)
    x = g.centers
    out = convolve(indicator(x, 0.0, 1.0), forward_kernel(lam), g)
    # the look-ahead distance y - x is Gamma(5, lam) distributed
    cdf = lambda d: gammainc(5, lam * np.maximum(d, 0.0))
    exact = cdf(1.0 - x) - cdf(-x)
    assert np.max(np.abs(out - exact)) < 2 * lam * g.dx


def test_convolution_derivative_matches_difference():
    k = gaussian_kernel(0.5)
    u = BUMP
    d = convolve(u, k, GRID, order=1)
    c = convolve(u, k, GRID)
    fd = np.gradient(c, GRID.dx)
    assert np.max(np.abs(d - fd)) < 1e-3


def test_under_resolved_kernel():
    g = Grid1D(0.0, 10.0, 20)
    with pytest.raises(UnderResolvedKernel):
        convolve(np.ones(20), gaussian_kernel(0.05, half_width=0.3), g)


def test_constant_law_velocity_is_exact():
    vel = assemble_velocity(BUMP, np.zeros_like(BUMP), [gaussian_kernel(0.5)],
                            nonlocal_law([constant_law(0.7)]), GRID)
    assert np.all(vel.v == 0.7) and np.all(vel.dv == 0.0)


def test_velocity_uses_total_density():
    ker = [gaussian_kernel(0.5)]
    law = nonlocal_law([smoothstep_law(1.0, 1.5)])
    a = assemble_velocity(BUMP, 0.5 * BUMP, ker, law, GRID)
    b = assemble_velocity(1.5 * BUMP, np.zeros_like(BUMP), ker, law, GRID)
    assert np.allclose(a.v, b.v, atol=1e-15) and np.allclose(a.dv, b.dv, atol=1e-15)

# }}}


# {{{ finite volume

def _vel(c, n=GRID.n_cells):
    return VelocityField(np.full((1, n), float(c)), np.zeros((1, n)))


def test_fv_zero_velocity_is_identity():
    out = fv_step(BUMP, _vel(0.0), 0.01, GRID.dx)
    assert np.array_equal(out[0], BUMP)


@pytest.mark.parametrize("c", [1.0, -0.6])
def test_fv_constant_speed_moves_centroid_exactly(c):
    dt = 0.5 * GRID.dx / abs(c)
    rho = BUMP[None]
    x = GRID.centers
    m0 = np.sum(rho) * GRID.dx
    x0 = np.sum(x * rho) / np.sum(rho)
    steps = 100
    for _ in range(steps):
        rho = fv_step(rho, _vel(c), dt, GRID.dx)
    assert np.sum(rho) * GRID.dx == pytest.approx(m0, rel=1e-14)
    assert np.sum(x * rho) / np.sum(rho) == pytest.approx(x0 + c * steps * dt, abs=1e-10)
    assert rho.min() >= 0.0


def test_fv_cfl_violation():
    with pytest.raises(CFLError):
        fv_step(BUMP, _vel(1.0), 2 * GRID.dx, GRID.dx)


def test_interface_velocity_edges():
    v = np.array([[1.0, 3.0, 5.0]])
    assert interface_velocity(v).tolist() == [[1.0, 2.0, 4.0, 5.0]]


def test_fv_solve_mass_and_positivity():
    kernels = [gaussian_kernel(0.5), forward_kernel(4.0)]
    law = nonlocal_law([smoothstep_law(1.0, 1.5), smoothstep_law(0.8, 1.5)])
    rho0 = np.stack([0.8 * BUMP, 0.5 * np.roll(BUMP, 80)])
    r_hist = np.broadcast_to(0.3 * np.roll(BUMP, 40), (201, GRID.n_cells))
    dt = min(nonlocal_dt_bound(law, kernels, 3.0, GRID.dx), 1.0 / 200)
    slab = fv_solve(GRID, rho0, r_hist[: int(1.0 / dt) + 1], kernels, law, dt)
    m = slab.sum(axis=-1) * GRID.dx
    assert np.allclose(m, m[0], rtol=1e-13, atol=0)
    assert slab.min() >= -1e-15


def test_nonconservative_form_loses_mass():
    kernels = [gaussian_kernel(0.5)]
    law = nonlocal_law([smoothstep_law(1.0, 0.5)])
    r_hist = np.zeros((101, GRID.n_cells))
    slab = fv_solve(GRID, BUMP[None], r_hist, kernels, law, 0.005, nonconservative=True)
    m = slab.sum(axis=-1) * GRID.dx
    assert abs(m[-1, 0] - m[0, 0]) > 1e-4

# }}}


# {{{ characteristics

def test_characteristics_zero_speed_is_identity():
    law = nonlocal_law([constant_law(0.0)])
    r_hist = np.zeros((11, GRID.n_cells))
    res = characteristics_solve(GRID, BUMP[None], r_hist, [gaussian_kernel(0.5)], law, 0.01)
    assert np.array_equal(res.rho[-1, 0], BUMP)
    assert res.max_log_jacobian == 0.0


def test_characteristics_constant_speed_is_exact_shift():
    c = 0.8
    dt = GRID.dx / c          # one cell per step
    law = nonlocal_law([constant_law(c)])
    steps = 40
    r_hist = np.zeros((steps + 1, GRID.n_cells))
    res = characteristics_solve(GRID, BUMP[None], r_hist, [gaussian_kernel(0.5)], law, dt)
    assert np.allclose(res.rho[-1, 0], np.roll(BUMP, steps), atol=1e-12)


def test_characteristics_against_fv_on_frozen_history():
    g = Grid1D(-4.0, 6.0, 400)
    bump = np.where(np.abs(g.centers) < 1, (1 - g.centers ** 2) ** 4, 0.0)
    kernels = [gaussian_kernel(0.5)]
    law = nonlocal_law([smoothstep_law(1.0, 1.5)])
    dt = 0.01
    r_hist = np.broadcast_to(0.5 * np.roll(bump, 20), (51, g.n_cells))
    fv = fv_solve(g, bump[None], r_hist, kernels, law, dt)
    ch = characteristics_solve(g, bump[None], r_hist, kernels, law, dt)
    dist = l1_norm(g, fv[-1, 0] - ch.rho[-1, 0])
    assert dist < 0.05 * l1_norm(g, bump)
    assert ch.jacobian_bound_holds()
    m = ch.rho.sum(axis=-1) * g.dx
    assert np.allclose(m, m[0], rtol=5e-3)


def test_characteristics_trace_exit():
    g = Grid1D(0.0, 2.0, 200)
    u = indicator(g.centers, 1.5, 2.0)
    law = nonlocal_law([constant_law(-1.0)])
    r_hist = np.zeros((11, g.n_cells))
    with pytest.raises(TraceExit):
        characteristics_solve(g, u[None], r_hist, [gaussian_kernel(0.1)], law, 0.005)


def test_characteristics_step_bound():
    g = Grid1D(-2.0, 2.0, 100)
    u = 5 * indicator(g.centers, -0.5, 0.5)
    law = nonlocal_law([smoothstep_law(1.0, 0.5)])
    r_hist = np.zeros((3, g.n_cells))
    with pytest.raises(CFLError):
        characteristics_solve(g, u[None], r_hist, [gaussian_kernel(0.1, half_width=0.5)],
                              law, 0.5)

# }}}
