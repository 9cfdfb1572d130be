"""Uniform 1-D grid, states, and the discrete norms.

Fields are sampled at cell centers and implicitly zero outside the grid, so
the total variation counts the jumps to zero at both ends.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 8:
            raise ValueError("need at least 8 cells")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    def refine(self, factor: int = 2) -> "Grid1D":
        return Grid1D(self.x_min, self.x_max, self.n_cells * factor)

    @classmethod
    def aligned(cls, lo: float, hi: float, dx: float) -> "Grid1D":
        """Grid whose cell centers sit on the lattice ``lo + j dx``.

        Needed when kinks of the initial datum must fall on sample points.
        """
        n = int(round((hi - lo) / dx)) + 1
        return cls(lo - 0.5 * dx, lo + (n - 0.5) * dx, n)


def _as_array(u) -> np.ndarray:
    return np.asarray(u, dtype=float)


def l1_norm(grid: Grid1D, u) -> float:
    return grid.dx * float(np.sum(np.abs(_as_array(u))))


def linf_norm(u) -> float:
    u = _as_array(u)
    return float(np.max(np.abs(u))) if u.size else 0.0


def tv(u) -> float:
    """Total variation of the zero-extended samples."""
    u = _as_array(u)
    if u.size == 0:
        return 0.0
    return float(np.sum(np.abs(np.diff(u))) + abs(u[0]) + abs(u[-1]))


def derivative(grid: Grid1D, u) -> np.ndarray:
    """Forward differences (u_{j+1} - u_j) / dx with zero beyond the last cell.

    The result has one extra entry for the jump into the left ghost cell, so
    that ``l1_norm(derivative(u)) == tv(u)`` exactly.
    """
    u = _as_array(u)
    padded = np.concatenate(([0.0], u, [0.0]))
    return np.diff(padded) / grid.dx


def w11_norm(grid: Grid1D, u) -> float:
    return l1_norm(grid, u) + l1_norm(grid, derivative(grid, u))


def cbv1_norm(grid: Grid1D, u) -> float:
    return w11_norm(grid, u) + tv(derivative(grid, u))


def half_tv_bound_check(u) -> bool:
    return linf_norm(u) <= 0.5 * tv(u) + 1e-12


@dataclass
class NormReport:
    l1: float
    linf: float
    w11: float
    tv: float
    cbv1: float


def norm_report(grid: Grid1D, u) -> NormReport:
    return NormReport(l1_norm(grid, u), linf_norm(u), w11_norm(grid, u),
                      tv(u), cbv1_norm(grid, u))


@dataclass(frozen=True, eq=False)
class State:
    grid: Grid1D
    rho: np.ndarray  # (k, N)
    r: np.ndarray    # (N,)
    time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rho = np.atleast_2d(np.array(self.rho, dtype=float))
        r = np.array(self.r, dtype=float)
        if rho.shape[1] != self.grid.n_cells or r.shape != (self.grid.n_cells,):
            raise ValueError("field lengths must equal n_cells")
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(r))):
            raise ValueError("state contains non-finite values")
        rho.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "r", r)

    @property
    def k(self) -> int:
        return self.rho.shape[0]

    def rho_mass(self) -> np.ndarray:
        return self.grid.dx * np.sum(self.rho, axis=1)

    def r_mass(self) -> float:
        return self.grid.dx * float(np.sum(self.r))

    def at(self, time: float) -> "State":
        return State(self.grid, self.rho, self.r, time)


def state_distance(a: State, b: State, rho_norm: str = "w11") -> float:
    """Distance in W11 x L1 (or L1 x L1 with ``rho_norm='l1'``)."""
    g = a.grid
    dr = a.rho - b.rho
    if rho_norm == "w11":
        d = sum(w11_norm(g, u) for u in dr)
    elif rho_norm == "l1":
        d = sum(l1_norm(g, u) for u in dr)
    else:
        raise ValueError(rho_norm)
    return d + l1_norm(g, a.r - b.r)


def restrict(fine: np.ndarray, factor: int, mode: str = "average") -> np.ndarray:
    """Map fine-grid samples onto the grid coarser by ``factor``.

    ``average`` takes the mean of the fine cells inside each coarse cell;
    ``inject`` picks the fine cell sharing the coarse center (odd factors).
    """
    fine = _as_array(fine)
    n = fine.shape[-1] // factor
    blocks = fine[..., : n * factor].reshape(fine.shape[:-1] + (n, factor))
    if mode == "average":
        return blocks.mean(axis=-1)
    if mode == "inject":
        if factor % 2 == 0:
            raise ValueError("injection needs an odd refinement factor")
        return blocks[..., factor // 2]
    raise ValueError(mode)


# {{{ CSV

def state_to_csv(state: State) -> str:
    g = state.grid
    buf = io.StringIO()
    buf.write(f"# time={state.time!r}\n")
    buf.write(f"# x_min={g.x_min!r} x_max={g.x_max!r} n_cells={g.n_cells} k={state.k}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x"] + [f"rho_{i + 1}" for i in range(state.k)] + ["r"])
    for j, x in enumerate(g.centers):
        w.writerow([repr(float(x))] + [repr(float(v)) for v in state.rho[:, j]]
                   + [repr(float(state.r[j]))])
    return buf.getvalue()


def write_state_csv(state: State, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(state_to_csv(state))


def read_state_csv(path) -> State:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    meta[key] = val
            elif line.strip():
                rows.append(line.strip().split(","))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    k = sum(1 for h in header if h.startswith("rho_"))
    grid = Grid1D(float(meta["x_min"]), float(meta["x_max"]), int(meta["n_cells"]))
    return State(grid, data[:, 1:1 + k].T, data[:, 1 + k], float(meta["time"]))

# }}}
