"""Picard coupling of the nonlocal and local solvers on time windows, and
the global time-marching built on top of it."""

from __future__ import annotations

import json
import math
import time as _time
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import Grid1D, State, state_distance
from .local_solver import LocalFlux, local_dt_bound, local_solve
from .model import Model
from .nonlocal_solver import fv_solve, nonlocal_dt_bound


class CouplingError(RuntimeError):
    pass


class ShrinkWindow(CouplingError):
    """The Picard iteration failed to contract on the current window."""

    def __init__(self, msg, residuals):
        super().__init__(msg)
        self.residuals = residuals


class WindowUnderflow(CouplingError):
    def __init__(self, msg, factors):
        super().__init__(msg)
        self.factors = factors


class DomainTooSmall(CouplingError):
    pass


@dataclass
class PicardConfig:
    window: float = 0.25
    tol: float = 1e-10
    max_iter: int = 25
    min_window: float = 1e-3
    contraction_target: float = 0.9
    stride: int = 0                  # extra outputs every `stride` steps (0: window ends only)
    boundary_mass_tol: float = 1e-12
    nonconservative: bool = False    # test hook, see fv_step

    def __post_init__(self):
        if not 0 < self.contraction_target < 1:
            raise ValueError("contraction_target must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0 < self.min_window <= self.window:
            raise ValueError("need 0 < min_window <= window")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class WindowReport:
    t0: float
    len: float
    iters: int
    residuals: list
    dt: float
    steps: int

    @property
    def ratios(self) -> list:
        r = self.residuals
        return [r[i + 1] / r[i] for i in range(len(r) - 1) if r[i] > 0]

    @property
    def contraction(self) -> float | None:
        q = self.ratios
        return max(q) if q else None


@dataclass
class PicardReport:
    windows: list = field(default_factory=list)
    shrinks: list = field(default_factory=list)   # (t0, rejected length, residuals)
    solves: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        wins = []
        for w in self.windows:
            d = asdict(w)
            d["contraction"] = w.contraction
            wins.append(d)
        return {"windows": wins, "shrinks": self.shrinks, "solves": self.solves,
                "wall_time": self.wall_time}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass
class WindowResult:
    times: np.ndarray
    rho: np.ndarray   # (M+1, k, N)
    r: np.ndarray     # (M+1, N)


def time_step(model: Model, grid: Grid1D, state: State) -> float:
    """Largest admissible step for both sub-solvers."""
    mass = float(np.sum(np.abs(state.rho)) + np.sum(np.abs(state.r))) * grid.dx
    return min(nonlocal_dt_bound(model.v_nl, model.kernels, mass, grid.dx),
               local_dt_bound(model.v_l, grid.dx))


def solve_window(state0: State, window: float, config: PicardConfig, model: Model,
                 dt_max: float | None = None):
    """Picard iteration on [t0, t0 + window] seeded with r frozen at r(t0)."""
    grid = state0.grid
    if dt_max is None:
        dt_max = time_step(model, grid, state0)
    steps = max(1, math.ceil(window / dt_max - 1e-12))
    dt = window / steps
    r_prev = np.broadcast_to(state0.r, (steps + 1, grid.n_cells))
    residuals: list[float] = []
    bad = 0
    for it in range(1, config.max_iter + 1):
        rho = fv_solve(grid, state0.rho, r_prev, model.kernels, model.v_nl, dt,
                       config.nonconservative)
        r = local_solve(state0.r, LocalFlux(rho.sum(axis=1), model.v_l), dt, grid.dx)
        res = grid.dx * float(np.max(np.sum(np.abs(r - r_prev), axis=1)))
        residuals.append(res)
        r_prev = r
        if res <= config.tol:
            times = state0.time + dt * np.arange(steps + 1)
            rep = WindowReport(state0.time, window, it, residuals, dt, steps)
            return WindowResult(times, rho, r), rep
        if len(residuals) >= 2 and residuals[-1] > config.contraction_target * residuals[-2]:
            bad += 1
            if bad >= 2:
                raise ShrinkWindow("Picard residuals not contracting", residuals)
        else:
            bad = 0
    raise ShrinkWindow(f"no convergence in {config.max_iter} iterations", residuals)


def boundary_guard(state: State, model: Model, remaining: float, tol: float) -> None:
    """Abort when mass sits closer to an edge than it can travel."""
    g = state.grid
    x = g.centers
    reach_rho = model.v_nl.speed_bound() * remaining + g.dx
    reach_r = model.v_l.flux_speed_bound() * remaining + g.dx
    total = float(np.sum(np.abs(state.rho)) + np.sum(np.abs(state.r))) * g.dx
    if total == 0:
        return
    near = lambda reach: (x - g.x_min < reach) | (g.x_max - x < reach)
    edge = g.dx * (float(np.sum(np.abs(state.rho[:, near(reach_rho)])))
                   + float(np.sum(np.abs(state.r[near(reach_r)]))))
    if edge > tol * total:
        raise DomainTooSmall(f"domain too small: {edge / total:.3g} of the mass "
                             f"can reach the boundary before the horizon")


@dataclass
class EvolveResult:
    final: State
    outputs: list
    report: PicardReport
    slabs: list = field(default_factory=list)


def evolve(state0: State, horizon: float, config: PicardConfig, model: Model,
           keep_slabs: bool = False) -> EvolveResult:
    """Chain Picard windows over [t0, t0 + horizon], halving the window
    whenever the iteration stalls."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    clock = _time.perf_counter()
    report = PicardReport()
    outputs = [state0]
    if horizon == 0:
        return EvolveResult(state0, outputs, report)
    if state0.k != model.k:
        raise ValueError(f"state has {state0.k} classes, model {model.k}")
    grid = state0.grid
    t_end = state0.time + horizon
    state = state0
    window = config.window
    slabs = []
    while t_end - state.time > 1e-12 * max(1.0, horizon):
        remaining = t_end - state.time
        boundary_guard(state, model, remaining, config.boundary_mass_tol)
        w = min(window, remaining)
        try:
            res, rep = solve_window(state, w, config, model)
        except ShrinkWindow as exc:
            report.solves += len(exc.residuals)
            report.shrinks.append((state.time, w, exc.residuals))
            window = w / 2
            if window < config.min_window:
                factors = [s[2][i + 1] / s[2][i] for s in report.shrinks
                           for i in range(len(s[2]) - 1) if s[2][i] > 0]
                raise WindowUnderflow(
                    f"window below min_window {config.min_window}; "
                    f"observed contraction factors {factors}", factors) from exc
            continue
        report.solves += rep.iters
        report.windows.append(rep)
        if keep_slabs:
            slabs.append(res)
        last = len(res.times) - 1
        if config.stride > 0:
            for m in range(config.stride, last, config.stride):
                outputs.append(State(grid, res.rho[m], res.r[m], float(res.times[m])))
        end_time = t_end if w == remaining else float(res.times[-1])
        state = State(grid, res.rho[-1], res.r[-1], end_time)
        outputs.append(state)
    report.wall_time = _time.perf_counter() - clock
    return EvolveResult(state, outputs, report, slabs)


@dataclass
class LipschitzCurve:
    times: np.ndarray
    alpha: np.ndarray
    constant: float | None
    degenerate: bool = False
    initial_distance: float = 0.0


class ZeroDistance(ValueError):
    pass


def lipschitz_probe(state0: State, perturbed0: State, horizon: float,
                    config: PicardConfig, model: Model, rho_norm: str = "w11",
                    allow_degenerate: bool = True) -> LipschitzCurve:
    """Amplification alpha(t) = ||S_t u - S_t u'|| / ||u - u'|| and the
    smallest C with alpha(t) <= 1 + C t on the output times."""
    d0 = state_distance(state0, perturbed0, rho_norm)
    if d0 == 0:
        if not allow_degenerate:
            raise ZeroDistance("zero initial distance")
        return LipschitzCurve(np.array([0.0]), np.array([1.0]), None, True, 0.0)
    a = evolve(state0, horizon, config, model).outputs
    b = evolve(perturbed0, horizon, config, model).outputs
    times, alpha = [], []
    for sa, sb in zip(a, b):
        if not math.isclose(sa.time, sb.time, rel_tol=0, abs_tol=1e-12):
            raise CouplingError("probe runs produced different output times")
        times.append(sa.time - state0.time)
        alpha.append(state_distance(sa, sb, rho_norm) / d0)
    times = np.array(times)
    alpha = np.array(alpha)
    pos = times > 0
    c = float(max(0.0, np.max((alpha[pos] - 1.0) / times[pos]))) if pos.any() else 0.0
    return LipschitzCurve(times, alpha, c, False, d0)


def mass_history(outputs) -> tuple[np.ndarray, np.ndarray]:
    """Per-class rho masses (T, k) and r masses (T,) along the outputs."""
    rho = np.array([s.rho_mass() for s in outputs])
    r = np.array([s.r_mass() for s in outputs])
    return rho, r


def l1_distance(a: State, b: State) -> float:
    return state_distance(a, b, rho_norm="l1")


__all__ = [
    "PicardConfig", "PicardReport", "WindowReport", "WindowResult", "EvolveResult",
    "LipschitzCurve", "CouplingError", "ShrinkWindow", "WindowUnderflow",
    "DomainTooSmall", "ZeroDistance", "solve_window", "evolve", "lipschitz_probe",
    "boundary_guard", "time_step", "mass_history", "l1_distance",
]
