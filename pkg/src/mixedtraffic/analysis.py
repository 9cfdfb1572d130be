"""Verification suite, the stationary-pair sweep and self-convergence studies."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .coupler import (CouplingError, EvolveResult, PicardConfig, evolve,
                      lipschitz_probe)
from .grid import (Grid1D, State, derivative, half_tv_bound_check, l1_norm,
                   restrict, state_distance, tv, write_state_csv)
from .local_solver import LocalError, riemann_oracle
from .model import (LocalSpeedLaw, Model, ModelError, example1_r, example1_rho,
                    indicator)
from .nonlocal_solver import NonlocalError, characteristics_solve, fv_solve

SOLVER_ERRORS = (CouplingError, NonlocalError, LocalError, ModelError)


# {{{ summaries

@dataclass
class Check:
    name: str
    passed: bool
    value: float | None
    tolerance: str
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        val = "n/a" if self.value is None else f"{self.value:.6g}"
        tail = f"  ({self.detail})" if self.detail else ""
        return f"[{mark}] {self.name}: value={val} tolerance={self.tolerance}{tail}"


@dataclass
class VerificationSummary:
    instance: str
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def add(self, *args, **kw) -> Check:
        c = Check(*args, **kw)
        self.checks.append(c)
        return c

    def to_dict(self) -> dict:
        return {"instance": self.instance, "passed": self.passed,
                "checks": [asdict(c) for c in self.checks]}

    def text(self) -> str:
        return "\n".join([f"verification of {self.instance}"]
                         + [c.line() for c in self.checks])

# }}}


# {{{ slabs

@dataclass
class Slab:
    """Concatenated space-time arrays of an evolve run (window ends shared)."""

    times: np.ndarray
    rho: np.ndarray   # (T, k, N)
    r: np.ndarray     # (T, N)


def stitch(result: EvolveResult) -> Slab:
    times, rho, r = [], [], []
    for i, w in enumerate(result.slabs):
        s = slice(0 if i == 0 else 1, None)
        times.append(w.times[s])
        rho.append(w.rho[s])
        r.append(w.r[s])
    return Slab(np.concatenate(times), np.concatenate(rho), np.concatenate(r))


def run(cfg: RunConfig, horizon: float | None = None, state0: State | None = None,
        picard: PicardConfig | None = None, keep_slabs: bool = False) -> EvolveResult:
    return evolve(cfg.state0 if state0 is None else state0,
                  cfg.horizon if horizon is None else horizon,
                  cfg.picard if picard is None else picard, cfg.model, keep_slabs)

# }}}


# {{{ individual diagnostics

def tv_growth_bound(grid: Grid1D, slab: Slab, law: LocalSpeedLaw):
    """Measured TV(r(t)) and the a-priori envelope

        TV(r_o) e^{k t} + R_L int_0^t e^{k (t - s)}
            int (|v''| (S_x)^2 + |v'| |S_xx|) dx ds,

    with S the summed nonlocal density and
    k = 3 (|v'|_inf + R_L |v''|_inf) sup |S_x|, everything measured on the
    slab.  Returns (tv, bound, kappa).
    """
    s = slab.rho.sum(axis=1)
    dx = grid.dx
    sx = np.array([derivative(grid, row) for row in s])
    sxx = np.diff(sx, axis=1) / dx
    d1, d2, R = law.sup_d1(), law.sup_d2(), law.R_L
    kappa = 3.0 * (d1 + R * d2) * float(np.max(np.abs(sx)))
    density = R * dx * (d2 * np.sum(sx ** 2, axis=1) + d1 * np.sum(np.abs(sxx), axis=1))
    t = slab.times - slab.times[0]
    tvs = np.array([tv(row) for row in slab.r])
    bound = np.empty_like(t)
    for m in range(t.size):
        dts = np.diff(t[:m + 1])
        src = float(np.sum(dts * np.exp(kappa * (t[m] - t[:m])) * density[:m]))
        bound[m] = tvs[0] * math.exp(kappa * t[m]) + src
    return tvs, bound, kappa


def cross_solver(grid: Grid1D, model: Model, rho0, r_history, dt: float):
    """FV and characteristics solutions for the same local-density history.
    Returns (L1 distance at the last level summed over classes, FV slab,
    characteristics result)."""
    fv = fv_solve(grid, rho0, r_history, model.kernels, model.v_nl, dt)
    ch = characteristics_solve(grid, rho0, r_history, model.kernels, model.v_nl, dt)
    dist = sum(l1_norm(grid, u) for u in fv[-1] - ch.rho[-1])
    return dist, fv, ch


def uniform_r_history(slab: Slab) -> tuple[np.ndarray, float]:
    """The r slab with its (uniform) step; raises if windows used different steps."""
    dts = np.diff(slab.times)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise ValueError("windows used different time steps")
    return slab.r, float(dts[0])


def refinement_distance(cfg: RunConfig, horizon: float, factor: int = 2,
                        mode: str = "average") -> float:
    """L1 distance between the final state on cfg's grid and the final state
    on the grid refined by ``factor``, restricted back."""
    coarse = run(cfg, horizon).final
    fine_cfg = cfg.with_grid(cfg.grid.refine(factor))
    fine = run(fine_cfg, horizon).final
    return _restricted_distance(coarse, fine, factor, mode)


def _restricted_distance(coarse: State, fine: State, factor: int, mode: str) -> float:
    g = coarse.grid
    rho_f = restrict(fine.rho, factor, mode)
    r_f = restrict(fine.r, factor, mode)
    return (sum(l1_norm(g, u) for u in coarse.rho - rho_f)
            + l1_norm(g, coarse.r - r_f))


def semigroup_gap(cfg: RunConfig, t1: float, t2: float) -> float:
    direct = run(cfg, t1 + t2).final
    mid = run(cfg, t1).final
    composed = run(cfg, t2, state0=mid).final
    return state_distance(direct, composed, rho_norm="l1")


def shift_state(state: State, cells: int = 1) -> State:
    """Translate every nonlocal density by whole cells (zero fill)."""
    rho = np.zeros_like(state.rho)
    if cells >= 0:
        rho[:, cells:] = state.rho[:, :state.rho.shape[1] - cells]
    else:
        rho[:, :cells] = state.rho[:, -cells:]
    return State(state.grid, rho, state.r, state.time)


def random_fields(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    """Test fields mixing white noise and random walks."""
    rough = rng.normal(size=(count, n))
    walk = np.cumsum(rng.normal(size=(count, n)), axis=1)
    pick = rng.random(count) < 0.5
    return np.where(pick[:, None], rough, walk)

# }}}


# {{{ verify

def cmd_verify(cfg: RunConfig, nonconservative: bool | None = None) -> VerificationSummary:
    """Run the invariant suite on the configured instance.

    Solver failures mark the affected checks failed; the summary is always
    returned.
    """
    opts = cfg.section("verify")
    picard = cfg.picard
    if nonconservative is not None:
        picard = PicardConfig(**{**asdict(picard), "nonconservative": nonconservative})
    summary = VerificationSummary(cfg.doc.get("name", cfg.model.name))
    g = cfg.grid
    s0 = cfg.state0
    R = cfg.model.v_l.R_L

    try:
        res = run(cfg, picard=picard, keep_slabs=True)
        slab = stitch(res)
    except SOLVER_ERRORS as exc:
        summary.add("evolve", False, None, "completes", f"{type(exc).__name__}: {exc}")
        return summary

    # mass
    m0 = s0.rho_mass()
    m = g.dx * slab.rho.sum(axis=2)
    rel = np.max(np.abs(m - m0) / np.where(m0 > 0, m0, 1.0))
    summary.add("rho mass conserved", bool(rel <= 1e-12), float(rel), "relative 1e-12")
    r0 = l1_norm(g, s0.r)
    rm = np.array([l1_norm(g, u) for u in slab.r])
    physical = bool(np.all(s0.rho >= 0) and np.all(s0.r >= 0) and np.all(s0.r <= R))
    if physical:
        dev = float(np.max(np.abs(rm - r0))) / max(r0, 1e-300) if r0 > 0 else float(np.max(rm))
        summary.add("r mass conserved", dev <= 1e-10, dev, "relative 1e-10")
    else:
        over = float(np.max(rm - r0))
        summary.add("r mass non-increasing", over <= 1e-10, over, "absolute 1e-10")

    # invariant region
    lo_r = float(slab.r.min())
    hi_r = float(slab.r.max())
    lo_rho = float(slab.rho.min())
    summary.add("r >= 0", lo_r >= -1e-12, lo_r, ">= -1e-12")
    summary.add("r <= R_L", hi_r <= R + 1e-12, hi_r, f"<= {R} + 1e-12")
    summary.add("rho >= 0", lo_rho >= -1e-12, lo_rho, ">= -1e-12")

    # half-TV inequality on random fields and on the computed states
    rng = np.random.default_rng(cfg.seed)
    fields = random_fields(rng, int(opts.get("random_fields", 10000)), 50)
    bad = sum(not half_tv_bound_check(f) for f in fields)
    bad += sum(not half_tv_bound_check(f) for f in slab.r)
    bad += sum(not half_tv_bound_check(f) for f in slab.rho.reshape(-1, g.n_cells))
    summary.add("half-TV inequality", bad == 0, float(bad), "0 violations (slack 1e-12)")

    # TV growth
    tvs, bound, kappa = tv_growth_bound(g, slab, cfg.model.v_l)
    later = slice(1, None) if tvs.size > 1 else slice(None)
    ratio = float(np.max(tvs[later] / np.maximum(2 * bound[later], 1e-300)))
    summary.add("TV growth bound", bool(np.all(tvs <= 2 * bound + 1e-12)), ratio,
                "TV(r) <= 2 x envelope", f"kappa={kappa:.4g}")

    # semigroup against the refinement distance
    try:
        half = cfg.horizon / 2
        gap = semigroup_gap(cfg, half, half)
        ref = refinement_distance(cfg, cfg.horizon)
        summary.add("semigroup composition", gap <= 2 * ref + 1e-12, gap,
                    f"<= 2 x refinement distance ({ref:.3g})")
    except SOLVER_ERRORS as exc:
        summary.add("semigroup composition", False, None, "completes", str(exc))

    # cross-solver on the whole run
    if opts.get("cross_solver", True):
        try:
            r_hist, dt = uniform_r_history(slab)
            dist, _, ch = cross_solver(g, cfg.model, s0.rho, r_hist, dt)
            mass = float(np.sum(m0))
            tol = 0.05 * mass
            summary.add("cross-solver agreement", dist <= tol + 1e-14, dist,
                        "<= 0.05 x ||rho_o||_L1")
            summary.add("Jacobian bound", ch.jacobian_bound_holds(0.1),
                        ch.max_log_jacobian, "max |log E| <= sup|dv| t + 0.1",
                        f"sup|dv|={ch.sup_dv:.4g}")
        except (SOLVER_ERRORS + (ValueError,)) as exc:
            summary.add("cross-solver agreement", False, None, "completes", str(exc))

    # Lipschitz probe
    try:
        probe_t = float(opts.get("probe_horizon", min(0.5, cfg.horizon)))
        pert = shift_state(s0, 1)
        if state_distance(s0, pert) == 0:
            pert = State(g, s0.rho, np.roll(s0.r, 1), 0.0)
        curve = lipschitz_probe(s0, pert, probe_t, cfg.picard, cfg.model)
        c = curve.constant
        summary.add("Lipschitz probe", c is not None and c <= 100, c,
                    "alpha(t) <= 1 + C t with C <= 100")
    except SOLVER_ERRORS as exc:
        summary.add("Lipschitz probe", False, None, "completes", str(exc))
    return summary

# }}}


# {{{ stationary pair sweep

@dataclass
class Example1Row:
    n: int
    initial_distance: float
    expected_initial: float
    final_distance: float
    stationary_drift: float


@dataclass
class Example1Report:
    horizon: float
    dx: float
    rows: list
    # distance between the evolved limit datum (0, chi) and itself at t = 0,
    # from the exact Riemann solution of the decoupled local equation
    limit_displacement: float

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "dx": self.dx,
                "limit_displacement": self.limit_displacement,
                "rows": [asdict(r) for r in self.rows]}


def example1_states(grid: Grid1D, n: int) -> tuple[State, State]:
    x = grid.centers
    pair = State(grid, [example1_rho(x, n)], example1_r(x, n))
    limit = State(grid, [np.zeros_like(x)], indicator(x, 0.0, 1.0))
    return pair, limit


def example1_limit_displacement(law: LocalSpeedLaw, t: float, grid: Grid1D) -> float:
    """||r(t) - chi_[0,1]||_L1 for the local equation alone started from the
    indicator: a standing shock at 0 and a rarefaction centred at 1."""
    x = grid.centers
    r = np.where(x < 0.5, riemann_oracle(0.0, 1.0, law, t, x),
                 riemann_oracle(1.0, 0.0, law, t, x - 1.0))
    return l1_norm(grid, r - indicator(x, 0.0, 1.0))


def cmd_example1(cfg: RunConfig, n_list=None, horizon: float | None = None) -> Example1Report:
    opts = cfg.section("example1")
    n_list = list(n_list or opts.get("n_list", [4, 8, 16, 32]))
    horizon = float(horizon if horizon is not None else opts.get("horizon", 0.5))
    g = cfg.grid
    if 1.0 / max(n_list) < 8 * g.dx * (1 - 1e-9):
        raise ModelError(f"grid under-resolves 1/n for n={max(n_list)} "
                         f"(needs dx <= {1 / (8 * max(n_list)):.4g})")
    x = g.centers
    for n in n_list:
        for p in (0.0, 1.0 - 1.0 / n, 1.0, 1.0 + 1.0 / n):
            if np.min(np.abs(x - p)) > 1e-6 * g.dx:
                raise ModelError(f"the kinks of the n={n} datum must be cell centres "
                                 "(use an aligned grid)")
    rows = []
    _, limit = example1_states(g, n_list[0])
    limit_final = run(cfg, horizon, state0=limit).final
    for n in n_list:
        pair, _ = example1_states(g, n)
        d0 = state_distance(pair, limit, rho_norm="l1")
        fin = run(cfg, horizon, state0=pair).final
        rows.append(Example1Row(n, d0, 3.0 / (2 * n),
                                state_distance(fin, limit_final, rho_norm="l1"),
                                state_distance(fin, pair, rho_norm="l1")))
    disp = example1_limit_displacement(cfg.model.v_l, horizon, g)
    return Example1Report(horizon, g.dx, rows, disp)

# }}}


# {{{ convergence

@dataclass
class ConvergenceTable:
    cells: list
    fields: list
    distances: list          # per level pair: {field: distance}
    orders: list             # per consecutive pair of distances: {field: order or None}
    non_monotone: list       # fields whose distance grew under refinement

    def to_dict(self) -> dict:
        return asdict(self)

    def text(self) -> str:
        lines = ["cells  " + "  ".join(f"{f:>12}" for f in self.fields)]
        for c, d in zip(self.cells, self.distances):
            lines.append(f"{c:<6} " + "  ".join(f"{d[f]:12.4e}" for f in self.fields))
        for i, o in enumerate(self.orders):
            lines.append(f"order{i:<2} " + "  ".join(
                f"{'-' if o[f] is None else format(o[f], '.3f'):>12}" for f in self.fields))
        if self.non_monotone:
            lines.append("non-monotone: " + ", ".join(self.non_monotone))
        return "\n".join(lines)


def cmd_converge(cfg: RunConfig, levels: int | None = None, factor: int | None = None,
                 mode: str | None = None) -> ConvergenceTable:
    """Self-distances between successive refinements of cfg's grid.

    Odd factors default to injection (so grid-exact steady states compare
    exactly), even factors to cell averaging.
    """
    opts = cfg.section("converge")
    levels = int(levels or opts.get("levels", 3))
    factor = int(factor or opts.get("factor", 2))
    mode = mode or opts.get("mode", "inject" if factor % 2 else "average")
    if levels < 3:
        raise ValueError("need at least 3 levels")
    finals, cells = [], []
    grid = cfg.grid
    for _ in range(levels):
        c = cfg.with_grid(grid)
        finals.append(run(c).final)
        cells.append(grid.n_cells)
        grid = grid.refine(factor)
    names = [f"rho_{i + 1}" for i in range(cfg.model.k)] + ["r"]
    dists = []
    for a, b in zip(finals[:-1], finals[1:]):
        g = a.grid
        rho_f = restrict(b.rho, factor, mode)
        r_f = restrict(b.r, factor, mode)
        d = {names[i]: l1_norm(g, a.rho[i] - rho_f[i]) for i in range(cfg.model.k)}
        d["r"] = l1_norm(g, a.r - r_f)
        dists.append(d)
    orders, growing = [], []
    for d0, d1 in zip(dists[:-1], dists[1:]):
        o = {}
        for f in names:
            o[f] = (math.log(d0[f] / d1[f]) / math.log(factor)
                    if d0[f] > 0 and d1[f] > 0 else None)
            if d1[f] > d0[f] and f not in growing:
                growing.append(f)
        orders.append(o)
    return ConvergenceTable(cells[:-1], names, dists, orders, growing)

# }}}


# {{{ simulate

def cmd_simulate(cfg: RunConfig, out_dir: Path | None = None) -> EvolveResult:
    """Run evolve and write state CSVs plus the Picard report."""
    out = Path(out_dir or cfg.out_dir)
    res = run(cfg)
    out.mkdir(parents=True, exist_ok=True)
    for i, st in enumerate(res.outputs):
        write_state_csv(st, out / f"state_{i:04d}.csv")
    write_state_csv(res.final, out / "final.csv")
    with open(out / "report.json", "w") as fh:
        json.dump(res.report.to_dict(), fh, indent=2)
    return res

# }}}
