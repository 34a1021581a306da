"""Fast sweeping solver for ``|grad S| = F`` and the slice-wise phase equations.

The solver uses the Godunov upwind discretization on a uniform grid

    sum_a max((u - min(u_{a-}, u_{a+})) / h_a, 0)^2 = F^2

and Gauss-Seidel sweeps over all ``2^d`` axis orderings until a full round
changes no node by more than the tolerance (Zhao-style fast sweeping).
Nodes where ``F = 0`` take the smallest upwind neighbor value.
"""

from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numba
import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .grid_field import GridError, GridSpec, ScalarField, VectorField, gradient

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from .potentials import PhysicalConstants

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_SWEEPS = 200


class EikonalConvergenceError(RuntimeError):
    """Sweeping did not reach the tolerance within the sweep budget."""

    def __init__(self, message: str, residual: float, sweeps: int, slice_index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps
        self.slice_index = slice_index


@numba.njit(cache=True, nogil=True)
def _local_solve(u, f, idx, coord, shape, strides, spacing, a_buf, h_buf):
    d = shape.shape[0]
    for ax in range(d):
        c = coord[ax]
        best = np.inf
        if c > 0:
            best = u[idx - strides[ax]]
        if c < shape[ax] - 1:
            nb = u[idx + strides[ax]]
            if nb < best:
                best = nb
        a_buf[ax] = best
        h_buf[ax] = spacing[ax]
    # insertion sort by upwind value
    for i in range(1, d):
        av = a_buf[i]
        hv = h_buf[i]
        j = i - 1
        while j >= 0 and a_buf[j] > av:
            a_buf[j + 1] = a_buf[j]
            h_buf[j + 1] = h_buf[j]
            j -= 1
        a_buf[j + 1] = av
        h_buf[j + 1] = hv
    if a_buf[0] == np.inf:
        return np.inf
    F = f[idx]
    if F == 0.0:
        return a_buf[0]
    cand = a_buf[0] + F * h_buf[0]
    sa = 0.0
    sb = 0.0
    sc = 0.0
    for m in range(d):
        if m > 0 and cand <= a_buf[m]:
            break
        w = 1.0 / (h_buf[m] * h_buf[m])
        sa += w
        sb += a_buf[m] * w
        sc += a_buf[m] * a_buf[m] * w
        disc = sb * sb - sa * (sc - F * F)
        if disc < 0.0:
            break
        cand = (sb + np.sqrt(disc)) / sa
    return cand


@numba.njit(cache=True, nogil=True)
def _fast_sweep(u, f, fixed, shape, spacing, tol, max_rounds):
    d = shape.shape[0]
    size = u.shape[0]
    strides = np.ones(d, dtype=np.int64)
    for ax in range(d - 2, -1, -1):
        strides[ax] = strides[ax + 1] * shape[ax + 1]
    coord = np.zeros(d, dtype=np.int64)
    a_buf = np.empty(d)
    h_buf = np.empty(d)
    change = np.inf
    for rnd in range(max_rounds):
        change = 0.0
        for ordering in range(2**d):
            for t in range(size):
                rem = t
                idx = 0
                for ax in range(d - 1, -1, -1):
                    c = rem % shape[ax]
                    rem //= shape[ax]
                    if (ordering >> ax) & 1:
                        c = shape[ax] - 1 - c
                    coord[ax] = c
                    idx += c * strides[ax]
                if fixed[idx]:
                    continue
                cand = _local_solve(u, f, idx, coord, shape, strides, spacing, a_buf, h_buf)
                old = u[idx]
                if cand < old:
                    delta = cand - old
                    if old == np.inf:
                        change = np.inf
                    elif -delta > change:
                        change = -delta
                    u[idx] = cand
        if change <= tol:
            return rnd + 1, change
    return max_rounds, change


@numba.njit(cache=True, nogil=True)
def _godunov_residual(u, f, fixed, shape, spacing):
    d = shape.shape[0]
    size = u.shape[0]
    strides = np.ones(d, dtype=np.int64)
    for ax in range(d - 2, -1, -1):
        strides[ax] = strides[ax + 1] * shape[ax + 1]
    coord = np.zeros(d, dtype=np.int64)
    a_buf = np.empty(d)
    h_buf = np.empty(d)
    worst = 0.0
    for idx in range(size):
        if fixed[idx]:
            continue
        rem = idx
        for ax in range(d - 1, -1, -1):
            coord[ax] = rem % shape[ax]
            rem //= shape[ax]
        cand = _local_solve(u, f, idx, coord, shape, strides, spacing, a_buf, h_buf)
        r = abs(cand - u[idx])
        if r > worst:
            worst = r
    return worst


@dataclass(frozen=True)
class Source:
    """Pinned phase value at a point of the solve grid.

    With ``radius == 0`` the node nearest to ``point`` is pinned to ``value``.
    With ``radius > 0`` every node within that distance of ``point`` is pinned
    to the straight-ray value ``value + |x - point| * (F(point) + F(x)) / 2``,
    which removes the point-source singularity from the first-order error.
    """

    point: tuple[float, ...]
    value: float = 0.0
    radius: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", tuple(float(x) for x in np.atleast_1d(self.point)))
        if not np.isfinite(self.value):
            raise ValueError("source value must be finite")
        if not (np.isfinite(self.radius) and self.radius >= 0):
            raise ValueError(f"source radius must be >= 0, got {self.radius}")

    def nodes(self, grid: GridSpec, speed: NDArray[np.float64]) -> list[tuple[tuple[int, ...], float]]:
        """Pinned ``(node, value)`` pairs on ``grid`` for speed ``F`` (not squared)."""
        center = grid.nearest_index(self.point)
        if self.radius == 0:
            return [(center, float(self.value))]
        dist = np.sqrt(sum((x - c) ** 2 for x, c in zip(grid.meshgrid(), self.point)))
        f0 = float(speed[center])
        inside = dist <= self.radius * (1 + 1e-12)
        inside[center] = True
        values = self.value + dist * 0.5 * (f0 + speed)
        return [(tuple(int(i) for i in index), float(values[tuple(index)])) for index in np.argwhere(inside)]


@dataclass(frozen=True)
class EikonalProblem:
    """``|grad S|^2 = speed_sq`` on a single-particle grid with pinned sources.

    ``max_sweeps`` counts rounds; each round is one sweep in every one of the
    ``2^d`` axis orderings.
    """

    speed_sq: ScalarField
    sources: tuple[Source, ...]
    tol: float = DEFAULT_TOL
    max_sweeps: int = DEFAULT_MAX_SWEEPS

    def __post_init__(self) -> None:
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ValueError("an eikonal problem needs at least one source")
        if np.any(self.speed_sq.values < 0):
            raise ValueError("speed_sq must be nonnegative")
        if not self.tol > 0 or self.max_sweeps < 1:
            raise ValueError("tol must be positive and max_sweeps >= 1")

    @property
    def grid(self) -> GridSpec:
        return self.speed_sq.grid



@dataclass(frozen=True)
class SolveInfo:
    sweeps: int
    change: float
    residual: float


def _prepare(grid: GridSpec, sources: Sequence[Source], speed: NDArray[np.float64]):
    # overlapping sources keep the smaller pinned value
    u = np.full(grid.size, np.inf)
    fixed = np.zeros(grid.size, dtype=np.bool_)
    for src in sources:
        for index, value in src.nodes(grid, speed):
            flat = np.ravel_multi_index(index, grid.shape)
            u[flat] = min(u[flat], value)
            fixed[flat] = True
    return u, fixed


def _solve_array(
    speed: NDArray[np.float64],
    grid: GridSpec,
    sources: Sequence[Source],
    tol: float,
    max_sweeps: int,
) -> tuple[NDArray[np.float64], SolveInfo]:
    u, fixed = _prepare(grid, sources, speed)
    shape = np.array(grid.shape, dtype=np.int64)
    spacing = np.array(grid.spacing, dtype=np.float64)
    f = np.ascontiguousarray(speed.ravel(), dtype=np.float64)
    rounds, change = _fast_sweep(u, f, fixed, shape, spacing, tol, max_sweeps)
    residual = _godunov_residual(u, f, fixed, shape, spacing) if np.all(np.isfinite(u)) else np.inf
    return u.reshape(grid.shape), SolveInfo(int(rounds), float(change), float(residual))


def solve_eikonal(problem: EikonalProblem, return_info: bool = False):
    """Viscosity solution of the eikonal problem by fast sweeping.

    Raises:
        EikonalConvergenceError: a full round still changed some node by more
            than ``problem.tol`` after ``problem.max_sweeps`` rounds.
    """
    grid = problem.grid
    speed = np.sqrt(problem.speed_sq.values)
    S, info = _solve_array(speed, grid, problem.sources, problem.tol, problem.max_sweeps)
    if info.change > problem.tol:
        raise EikonalConvergenceError(
            f"fast sweeping not converged after {info.sweeps} rounds (last change {info.change:.3e})",
            info.change,
            info.sweeps,
        )
    out = ScalarField(grid, S)
    return (out, info) if return_info else out


def godunov_residual(S: ScalarField, speed_sq: ScalarField, sources: Sequence[Source]) -> float:
    """Largest change one Godunov local solve would make to ``S`` off the sources."""
    grid = S.grid
    speed = np.sqrt(speed_sq.values)
    _, fixed = _prepare(grid, sources, speed)
    shape = np.array(grid.shape, dtype=np.int64)
    spacing = np.array(grid.spacing, dtype=np.float64)
    f = np.ascontiguousarray(speed.ravel())
    return float(_godunov_residual(np.ascontiguousarray(S.values.ravel()), f, fixed, shape, spacing))


def upwind_gradient_sq(S: ScalarField, axes: Sequence[int]) -> NDArray[np.float64]:
    """Godunov upwind ``|grad S|^2`` restricted to ``axes``.

    Per axis this is ``max(D^- S, -D^+ S, 0)^2``, the discrete Hamiltonian the
    sweeping solver satisfies, so it reproduces the solver's right-hand side.
    """
    grid = S.grid
    total = np.zeros(grid.shape)
    for a in grid.check_axes(axes):
        h = grid.axes[a].spacing
        v = np.moveaxis(S.values, a, 0)
        back = np.full(v.shape, -np.inf)
        fwd = np.full(v.shape, -np.inf)
        back[1:] = (v[1:] - v[:-1]) / h
        fwd[:-1] = (v[:-1] - v[1:]) / h
        g = np.maximum(np.maximum(back, fwd), 0.0)
        total = total + np.moveaxis(g, 0, a) ** 2
    return total


@dataclass(frozen=True, eq=False)
class PhaseField:
    """The phase ``S`` over ``Omega^M`` and its provenance.

    Attributes:
        S: the phase values.
        equations: 1-based indices of the equations solved into ``S`` so far.
        symmetrized: whether ``S`` has been projected onto symmetric functions.
    """

    S: ScalarField
    equations: tuple[int, ...] = ()
    symmetrized: bool = False

    @property
    def grid(self) -> GridSpec:
        return self.S.grid


@dataclass
class SliceRecord:
    slice_index: tuple[int, ...]
    sweeps: int
    residual: float


def _slice_grid(grid: GridSpec) -> GridSpec:
    return grid.particle_grid()


def solve_equation_k(
    rhs: ScalarField,
    k: int,
    sources: Sequence[Source],
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    previous: PhaseField | None = None,
    workers: int = 1,
    log: list[SliceRecord] | None = None,
) -> PhaseField:
    """Solve ``|grad_{r_k} S|^2 = rhs`` on every slice of fixed other particles.

    For each combination of the other particles' node coordinates the
    ``d``-dimensional slice of ``rhs`` over particle ``k`` is solved with the
    given single-particle ``sources``.  No additive function of the other
    coordinates is constructed.

    Args:
        rhs: nonnegative squared-gradient target over ``Omega^M``.
        k: 0-based particle index.
        sources: pinned values, coordinates in ``Omega``.
        previous: phase whose equation history is extended.
        workers: slices solved concurrently; results do not depend on it.
        log: if given, one :class:`SliceRecord` per slice is appended.
    """
    grid = rhs.grid
    own = grid.particle_axes(k)
    if np.any(rhs.values < 0):
        raise ValueError("rhs must be nonnegative; clamp it first")
    others = [a for a in range(grid.ndim) if a not in own]
    sgrid = _slice_grid(grid)
    sources = tuple(sources)
    if not sources:
        raise ValueError("solve_equation_k needs at least one source")
    for s in sources:
        sgrid.nearest_index(s.point)
    speed = np.sqrt(np.transpose(rhs.values, others + list(own)))
    other_shape = tuple(grid.shape[a] for a in others)
    out = np.empty_like(speed)
    slices = list(itertools.product(*(range(n) for n in other_shape)))

    def run(index: tuple[int, ...]):
        S, info = _solve_array(speed[index], sgrid, sources, tol, max_sweeps)
        return index, S, info

    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, slices))
    else:
        results = [run(index) for index in slices]
    for index, S, info in results:
        if info.change > tol:
            raise EikonalConvergenceError(
                f"equation {k + 1}, slice {index}: not converged after {info.sweeps} rounds "
                f"(last change {info.change:.3e})",
                info.change,
                info.sweeps,
                index,
            )
        out[index] = S
        if log is not None:
            log.append(SliceRecord(index, info.sweeps, info.residual))
    inverse = np.argsort(others + list(own))
    values = np.transpose(out, inverse)
    equations = (previous.equations if previous is not None else ()) + (k + 1,)
    return PhaseField(ScalarField(grid, values), equations, False)


def write_slice_log(records: Sequence[SliceRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice", "sweeps", "residual"])
        for r in records:
            writer.writerow([":".join(map(str, r.slice_index)), r.sweeps, repr(r.residual)])
    return path


def velocity_field(S: PhaseField | ScalarField, constants: PhysicalConstants) -> VectorField:
    """Bohmian velocity ``v = grad S / m`` for every particle axis."""
    field_ = S.S if isinstance(S, PhaseField) else S
    g = gradient(field_)
    comps = tuple(ScalarField(c.grid, c.values / constants.mass) for c in g.components)
    return VectorField(g.grid, comps, g.axes)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: NDArray[np.float64]
    points: NDArray[np.float64]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.times)


def integrate_trajectory(v: VectorField, start: Sequence[float], dt: float, steps: int) -> Trajectory:
    """Explicit midpoint integration of ``dx/dt = v(x)`` with multilinear interpolation.

    Integration stops early, with ``truncated=True``, when a stage point leaves
    the grid box.
    """
    grid = v.grid
    if len(v.axes) != grid.ndim:
        raise GridError("trajectory integration needs a full velocity field")
    x = np.asarray(start, dtype=np.float64)
    lower = np.array([a.lower for a in grid.axes])
    upper = np.array([a.upper for a in grid.axes])
    if x.shape != (grid.ndim,) or np.any(x < lower) or np.any(x > upper):
        raise GridError(f"start point {tuple(x)} not inside the grid box")
    interp = RegularGridInterpolator(tuple(a.coords for a in grid.axes), v.stack(), method="linear")

    def inside(p: NDArray[np.float64]) -> bool:
        return bool(np.all(p >= lower) and np.all(p <= upper))

    points = [x.copy()]
    truncated = False
    for _ in range(steps):
        k1 = interp(x)[0]
        mid = x + 0.5 * dt * k1
        if not inside(mid):
            truncated = True
            break
        nxt = x + dt * interp(mid)[0]
        if not inside(nxt):
            truncated = True
            break
        x = nxt
        points.append(x.copy())
    pts = np.array(points)
    return Trajectory(dt * np.arange(len(pts)), pts, truncated)
