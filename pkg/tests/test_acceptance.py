"""Acceptance suite: one recorded pass/fail line per criterion, tolerances
pinned below.  The lines are repeated in the "acceptance criteria" section
of the pytest terminal summary."""

import filecmp

import numpy as np
import pytest

from mixedtraffic.analysis import (cmd_example1, cmd_simulate, cross_solver,
                                   example1_states, random_fields, run, stitch,
                                   tv_growth_bound, uniform_r_history)
from mixedtraffic.config import load_preset
from mixedtraffic.coupler import evolve, l1_distance
from mixedtraffic.grid import Grid1D, half_tv_bound_check, l1_norm, restrict
from mixedtraffic.local_solver import LocalFlux, local_dt_bound, local_solve, riemann_oracle
from mixedtraffic.model import greenshields_law

MASS_REL_TOL = 1e-12
R_MASS_TOL = 1e-10
SIGN_TOL = 1e-12
STATIONARY_TOL = 1e-8
INITIAL_DIST_CELLS = 2
GROWTH_FACTOR = 10.0
SPREAD_TOL = 0.10
SEMIGROUP_FACTOR = 2.0
CONTRACTION = 0.9
MAX_ITER = 25
CROSS_REL_TOL = 0.05
CROSS_DECAY = 1.5
SHOCK_CELLS = 3
RAREFACTION_ORDER = 0.8
RAREFACTION_C = 1.0
TV_FACTOR = 2.0
JACOBIAN_SLACK = 0.1
RANDOM_FIELDS = 10_000


# {{{ shared runs

@pytest.fixture(scope="module")
def example1_report(example1_cfg):
    return cmd_example1(example1_cfg, n_list=[4, 8, 16, 32], horizon=0.5)


@pytest.fixture(scope="module")
def smooth_fine(smooth_cfg):
    cfg = smooth_cfg.with_grid(smooth_cfg.grid.refine(2))
    return cfg, run(cfg, keep_slabs=True)


@pytest.fixture(scope="module")
def cross(smooth_cfg, smooth_slab, smooth_fine):
    out = {}
    fine_cfg, fine_run = smooth_fine
    for cfg, slab in ((smooth_cfg, smooth_slab), (fine_cfg, stitch(fine_run))):
        r_hist, dt = uniform_r_history(slab)
        dist, _, ch = cross_solver(cfg.grid, cfg.model, cfg.state0.rho, r_hist, dt)
        mass = sum(l1_norm(cfg.grid, u) for u in cfg.state0.rho)
        out[cfg.grid.n_cells] = (dist, mass, ch)
    return out

# }}}


def test_c01_mass_conservation(smooth_slab, smooth_cfg, acceptance):
    rho_m = smooth_slab.rho.sum(axis=-1) * smooth_cfg.grid.dx
    r_m = smooth_slab.r.sum(axis=-1) * smooth_cfg.grid.dx
    rho_dev = float(np.max(np.abs(rho_m - rho_m[0]) / rho_m[0]))
    r_up = float(np.max(r_m - r_m[0]))
    r_dev = float(np.max(np.abs(r_m - r_m[0])))
    ok = (acceptance("C1 rho mass, relative drift over T=1", rho_dev <= MASS_REL_TOL,
                     f"{rho_dev:.3e}", f"<= {MASS_REL_TOL:g}")
          & acceptance("C1 r mass never above initial", r_up <= R_MASS_TOL,
                       f"{r_up:.3e}", f"<= {R_MASS_TOL:g}")
          & acceptance("C1 r mass conserved (no boundary loss)", r_dev <= R_MASS_TOL,
                       f"{r_dev:.3e}", f"<= {R_MASS_TOL:g}"))
    assert ok


def test_c02_invariant_region(smooth_slab, smooth_cfg, acceptance):
    r_min, r_max = float(smooth_slab.r.min()), float(smooth_slab.r.max())
    rho_min = float(smooth_slab.rho.min())
    R = smooth_cfg.model.v_l.R_L
    ok = (r_min >= -SIGN_TOL) & (r_max <= R + SIGN_TOL) & (rho_min >= -SIGN_TOL)
    acceptance("C2 invariant region", ok,
               f"min r={r_min:.3e} max r={r_max:.4f} min rho={rho_min:.3e}",
               f"r in [-{SIGN_TOL:g}, R_L+{SIGN_TOL:g}], rho >= -{SIGN_TOL:g}")
    assert ok


@pytest.mark.parametrize("n", [4, 8, 16])
def test_c03_example_pair_stationary(example1_cfg, n, acceptance):
    pair, _ = example1_states(example1_cfg.grid, n)
    out = evolve(pair, 1.0, example1_cfg.picard, example1_cfg.model)
    drift = l1_distance(out.final, pair)
    assert acceptance(f"C3 stationary pair n={n} at t=1", drift <= STATIONARY_TOL,
                      f"{drift:.3e}", f"<= {STATIONARY_TOL:g}")


# {{{ criterion 4

def test_c04a_initial_distances(example1_report, acceptance):
    dx = example1_report.dx
    errs = [abs(r.initial_distance - r.expected_initial) for r in example1_report.rows]
    ok = max(errs) <= INITIAL_DIST_CELLS * dx
    acceptance("C4a initial distances equal 3/(2n)", ok,
               [f"{r.initial_distance:.5f}" for r in example1_report.rows],
               f"|d - 3/(2n)| <= {INITIAL_DIST_CELLS}dx = {INITIAL_DIST_CELLS * dx:.4g}")
    assert ok


def test_c04b_final_distances_amplified_tenfold(example1_report, acceptance):
    finals = [r.final_distance for r in example1_report.rows]
    target = GROWTH_FACTOR * max(r.initial_distance for r in example1_report.rows)
    ok = min(finals) >= target
    acceptance("C4b final distances >= 10x largest initial", ok,
               [f"{f:.4f}" for f in finals], f">= {target:.4f}")
    assert ok


def test_c04c_final_distances_agree(example1_report, acceptance):
    finals = np.array([r.final_distance for r in example1_report.rows])
    spread = float((finals.max() - finals.min()) / finals.min())
    ok = spread <= SPREAD_TOL
    acceptance("C4c final distances within 10% of each other", ok,
               f"{spread:.3f}", f"<= {SPREAD_TOL:g}")
    assert ok


def test_c04d_final_distances_bounded_below(example1_report, acceptance):
    # triangle inequality: ||S_t u_n - S_t u|| >= ||S_t u - u|| - ||u_n - u|| - ||S_t u_n - u_n||
    disp = example1_report.limit_displacement
    slack = [r.final_distance - (disp - r.initial_distance - r.stationary_drift - 0.01)
             for r in example1_report.rows]
    ok = min(slack) >= 0
    acceptance("C4d final distance stays above the limit displacement bound", ok,
               f"min margin {min(slack):.4f} (limit displacement {disp:.4f})", ">= 0")
    assert ok

# }}}


def test_c05_semigroup(smooth_cfg, acceptance):
    direct = run(smooth_cfg, 0.6).final
    composed = run(smooth_cfg, 0.3, state0=run(smooth_cfg, 0.3).final).final
    gap = l1_distance(direct, composed)
    fine_cfg = smooth_cfg.with_grid(smooth_cfg.grid.refine(2))
    fine = run(fine_cfg, 0.6).final
    g = smooth_cfg.grid
    ref = (sum(l1_norm(g, u) for u in direct.rho - restrict(fine.rho, 2))
           + l1_norm(g, direct.r - restrict(fine.r, 2)))
    ok = gap <= SEMIGROUP_FACTOR * ref
    acceptance("C5 semigroup 0.6 vs 0.3+0.3", ok, f"{gap:.3e}",
               f"<= {SEMIGROUP_FACTOR:g} x refinement distance {ref:.3e}")
    assert ok


def test_c06_picard_contraction(smooth_run, acceptance):
    worst = 0.0
    iters = 0
    for w in smooth_run.report.windows:
        iters = max(iters, w.iters)
        if w.ratios:
            worst = max(worst, max(w.ratios))
    converged = all(w.residuals[-1] <= 1e-10 for w in smooth_run.report.windows)
    ok = worst <= CONTRACTION and iters <= MAX_ITER and converged
    acceptance("C6 Picard residual ratios", ok, f"max ratio {worst:.3e}, iters {iters}",
               f"ratio <= {CONTRACTION:g}, iters <= {MAX_ITER}")
    assert ok


def test_c07_cross_solver(cross, acceptance):
    (d1, m1, _), (d2, _, _) = cross[800], cross[1600]
    ok1 = d1 <= CROSS_REL_TOL * m1
    ok2 = d1 / d2 >= CROSS_DECAY
    acceptance("C7 FV vs characteristics at N=800", ok1, f"{d1:.4e}",
               f"<= {CROSS_REL_TOL:g} x {m1:.4f}")
    acceptance("C7 distance decay 800 -> 1600", ok2, f"{d1 / d2:.3f}", f">= {CROSS_DECAY:g}")
    assert ok1 and ok2


def _riemann(r_l, r_r, n_cells, t=0.5):
    law = greenshields_law()
    g = Grid1D(-2.0, 2.0, n_cells)
    x = g.centers
    dt = local_dt_bound(law, g.dx)
    steps = int(np.ceil(t / dt))
    slab = local_solve(np.where(x < 0, r_l, r_r),
                       LocalFlux(np.zeros((steps + 1, n_cells)), law), t / steps, g.dx)
    return g, slab[-1], riemann_oracle(r_l, r_r, law, t, x)


def test_c08a_stationary_shock(acceptance):
    g, r, exact = _riemann(0.0, 1.0, 400)
    inside = np.abs(g.centers) < 1.0   # outside the reach of the boundary
    dev = g.dx * float(np.sum(np.abs(r - exact)[inside]))
    ok = dev <= SHOCK_CELLS * g.dx
    acceptance("C8a stationary shock at t=0.5", ok, f"{dev:.3e}",
               f"<= {SHOCK_CELLS}dx = {SHOCK_CELLS * g.dx:.3e}")
    assert ok


def test_c08b_rarefaction_rate(acceptance):
    cells = [1600, 3200, 6400]
    dxs, errs = [], []
    for n in cells:
        g, r, exact = _riemann(1.0, 0.0, n)
        dxs.append(g.dx)
        errs.append(l1_norm(g, r - exact))
    order = float(np.polyfit(np.log(dxs), np.log(errs), 1)[0])
    c = max(e / d ** RAREFACTION_ORDER for e, d in zip(errs, dxs))
    ok = order >= RAREFACTION_ORDER and c <= RAREFACTION_C
    acceptance("C8b rarefaction error <= C dx^0.8", ok,
               f"errors {[f'{e:.3e}' for e in errs]}, order {order:.3f}, C {c:.3f}",
               f"order >= {RAREFACTION_ORDER}, C <= {RAREFACTION_C}")
    assert ok


def test_c09_tv_growth(smooth_cfg, smooth_slab, acceptance):
    tvs, bound, kappa = tv_growth_bound(smooth_cfg.grid, smooth_slab, smooth_cfg.model.v_l)
    ratio = float(np.max(tvs / (TV_FACTOR * bound)))
    ok = ratio <= 1.0
    acceptance("C9 TV(r) within twice the envelope", ok, f"max ratio {ratio:.4f}",
               f"<= 1 (kappa {kappa:.1f})")
    assert ok


def test_c10_jacobian_bound(cross, acceptance):
    ok = True
    for n, (_, _, ch) in sorted(cross.items()):
        t = float(ch.times[-1])
        limit = ch.sup_dv * t + JACOBIAN_SLACK
        passed = ch.max_log_jacobian <= limit
        ok &= passed
        acceptance(f"C10 Jacobian bound N={n}", passed, f"{ch.max_log_jacobian:.4f}",
                   f"<= sup|dv| t + {JACOBIAN_SLACK} = {limit:.4f}")
    assert ok


def test_c11_half_tv_random_fields(acceptance):
    fields = random_fields(np.random.default_rng(20240), RANDOM_FIELDS, 200)
    bad = sum(not half_tv_bound_check(u) for u in fields)
    acceptance("C11 sup|u| <= TV(u)/2", bad == 0, f"{bad} violations",
               f"0 of {RANDOM_FIELDS}")
    assert bad == 0


@pytest.mark.parametrize("preset", ["smooth", "example1", "riemann"])
def test_c12_bit_identical_outputs(tmp_path, preset, acceptance):
    cfg = load_preset(preset)
    cmd_simulate(cfg, tmp_path / "a")
    cmd_simulate(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names,
                                               shallow=False)
    ok = bool(names) and not mismatch and not errors
    acceptance(f"C12 repeated {preset} runs byte-identical", ok,
               f"{len(match)}/{len(names)} CSV files equal", "all")
    assert ok
