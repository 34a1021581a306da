"""Uniform tensor-product grids over configuration space and discrete calculus.

A configuration-space grid discretizes ``Omega^M``: ``M`` identical particles,
each living in the same ``d``-dimensional box.  Axes are ordered particle by
particle, ``(x_1, y_1, ..., x_2, y_2, ...)``, and field values are stored as
row-major arrays of shape ``grid.shape`` (the last axis varies fastest).

Derivatives are second-order central differences in the interior and
second-order one-sided stencils on the boundary.  Integrals use the composite
trapezoidal rule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.integrate import trapezoid

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Sequence

    from numpy.typing import ArrayLike, NDArray

MAX_CONFIG_DIM = 6
"""Upper bound on ``M * d``; larger configuration spaces are intractable on dense grids."""


class GridError(ValueError):
    """Invalid grid, axis selection, or grid/field mismatch."""


class EvaluationError(ValueError):
    """A sampled function returned a non-finite value."""


@dataclass(frozen=True)
class AxisSpec:
    """One uniformly discretized axis ``[lower, upper]`` with ``points`` nodes."""

    lower: float
    upper: float
    points: int

    def __post_init__(self) -> None:
        if int(self.points) != self.points or self.points < 3:
            raise GridError(f"axis needs at least 3 points, got {self.points!r}")
        if not np.isfinite(self.lower) or not np.isfinite(self.upper):
            raise GridError("axis bounds must be finite")
        if self.upper <= self.lower:
            raise GridError(f"upper bound {self.upper} must exceed lower bound {self.lower}")
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        object.__setattr__(self, "points", int(self.points))

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.points - 1)

    @property
    def coords(self) -> NDArray[np.float64]:
        return np.linspace(self.lower, self.upper, self.points)


@dataclass(frozen=True)
class GridSpec:
    """Grid over ``Omega^M``.

    Attributes:
        axes: per-axis specs, ``M * d`` of them, particle blocks in order.
        d: spatial dimension of one particle.
        M: number of explicitly treated particles.
    """

    axes: tuple[AxisSpec, ...]
    d: int = 1
    M: int = 1

    def __post_init__(self) -> None:
        axes = tuple(self.axes)
        object.__setattr__(self, "axes", axes)
        if self.d < 1 or self.M < 1:
            raise GridError(f"d and M must be positive, got d={self.d}, M={self.M}")
        if len(axes) != self.d * self.M:
            raise GridError(f"expected M*d = {self.M * self.d} axes, got {len(axes)}")
        if self.d * self.M > MAX_CONFIG_DIM:
            raise GridError(
                f"dimension bound exceeded: M*d = {self.M * self.d} > {MAX_CONFIG_DIM}"
            )
        first = axes[: self.d]
        for k in range(1, self.M):
            if axes[k * self.d : (k + 1) * self.d] != first:
                raise GridError("identical particles must share the same per-particle axes")

    @classmethod
    def uniform(
        cls, lower: float, upper: float, points: int, d: int = 1, M: int = 1
    ) -> GridSpec:
        """Cube ``[lower, upper]^d`` per particle, ``points`` nodes per axis."""
        return cls((AxisSpec(lower, upper, points),) * (d * M), d=d, M=M)

    @classmethod
    def from_particle_axes(cls, particle_axes: Sequence[AxisSpec], M: int = 1) -> GridSpec:
        particle_axes = tuple(particle_axes)
        return cls(particle_axes * M, d=len(particle_axes), M=M)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.points for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(a.spacing for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def coords(self, axis: int) -> NDArray[np.float64]:
        return self.axes[self.check_axis(axis)].coords

    def particle_axes(self, k: int) -> tuple[int, ...]:
        """Axis indices belonging to particle ``k`` (0-based)."""
        if not 0 <= k < self.M:
            raise GridError(f"particle index {k} out of range for M={self.M}")
        return tuple(range(k * self.d, (k + 1) * self.d))

    def particle_grid(self) -> GridSpec:
        """The single-particle grid over ``Omega``."""
        return GridSpec(self.axes[: self.d], d=self.d, M=1)

    def with_particles(self, M: int) -> GridSpec:
        return GridSpec(self.axes[: self.d] * M, d=self.d, M=M)

    def meshgrid(self) -> tuple[NDArray[np.float64], ...]:
        return tuple(np.meshgrid(*(a.coords for a in self.axes), indexing="ij"))

    def node_coords(self, index: Sequence[int]) -> tuple[float, ...]:
        return tuple(float(self.axes[a].coords[i]) for a, i in enumerate(index))

    def nearest_index(self, point: Sequence[float], axes: Sequence[int] | None = None) -> tuple[int, ...]:
        """Multi-index of the node nearest to ``point`` along ``axes`` (all axes by default)."""
        axes = range(self.ndim) if axes is None else axes
        point = list(point)
        if len(point) != len(axes):
            raise GridError(f"point has {len(point)} coordinates, expected {len(axes)}")
        index = []
        for a, x in zip(axes, point):
            ax = self.axes[a]
            if not ax.lower - 0.5 * ax.spacing <= x <= ax.upper + 0.5 * ax.spacing:
                raise GridError(f"coordinate {x} outside axis {a} [{ax.lower}, {ax.upper}]")
            index.append(int(np.clip(np.rint((x - ax.lower) / ax.spacing), 0, ax.points - 1)))
        return tuple(index)

    def check_axis(self, axis: int) -> int:
        if not -self.ndim <= axis < self.ndim:
            raise GridError(f"axis {axis} out of range for a {self.ndim}-axis grid")
        return axis % self.ndim

    def check_axes(self, axes: Iterable[int] | None) -> tuple[int, ...]:
        if axes is None:
            return tuple(range(self.ndim))
        out = tuple(sorted({self.check_axis(a) for a in axes}))
        if not out:
            raise GridError("axis selection must be nonempty")
        return out

    def sub_grid(self, keep_axes: Sequence[int]) -> GridSpec:
        """Grid over the kept axes; whole particle blocks keep their particle structure."""
        keep = tuple(sorted(keep_axes))
        blocks = [self.particle_axes(k) for k in range(self.M)]
        kept_blocks = [b for b in blocks if set(b) <= set(keep)]
        if sum(len(b) for b in kept_blocks) == len(keep):
            return GridSpec(tuple(self.axes[a] for a in keep), d=self.d, M=len(kept_blocks))
        return GridSpec(tuple(self.axes[a] for a in keep), d=len(keep), M=1)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real field sampled on every node of ``grid``.

    ``values`` has shape ``grid.shape`` (row-major node order).  ``flags`` is an
    optional boolean mask of the same shape marking nodes where a guarded
    operation (floored division, clamping) was applied.
    """

    grid: GridSpec
    values: NDArray[np.float64]
    flags: NDArray[np.bool_] | None = field(default=None)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.size != self.grid.size:
            raise GridError(f"field has {values.size} values, grid has {self.grid.size} nodes")
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise EvaluationError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.flags is not None:
            flags = np.broadcast_to(np.asarray(self.flags, dtype=bool), self.grid.shape).copy()
            flags.setflags(write=False)
            object.__setattr__(self, "flags", flags)

    @property
    def flat(self) -> NDArray[np.float64]:
        return self.values.ravel()

    @property
    def flagged_count(self) -> int:
        return 0 if self.flags is None else int(self.flags.sum())

    @property
    def flagged_fraction(self) -> float:
        return self.flagged_count / self.grid.size

    def with_values(self, values: ArrayLike, flags: ArrayLike | None = None) -> ScalarField:
        return ScalarField(self.grid, values, flags)

    def __repr__(self) -> str:
        return f"ScalarField(shape={self.grid.shape}, d={self.grid.d}, M={self.grid.M})"


@dataclass(frozen=True, eq=False)
class VectorField:
    """Components of a vector field, one ScalarField per listed axis."""

    grid: GridSpec
    components: tuple[ScalarField, ...]
    axes: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        axes = tuple(range(self.grid.ndim)) if self.axes is None else tuple(self.axes)
        if len(comps) != len(axes):
            raise GridError(f"{len(comps)} components for {len(axes)} axes")
        for c in comps:
            if c.grid != self.grid:
                raise GridError("component grid mismatch")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "axes", axes)

    def stack(self) -> NDArray[np.float64]:
        """Components stacked on a trailing axis, shape ``grid.shape + (ncomp,)``."""
        return np.stack([c.values for c in self.components], axis=-1)

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(sum(c.values**2 for c in self.components)))

    def __getitem__(self, i: int) -> ScalarField:
        return self.components[i]

    def __len__(self) -> int:
        return len(self.components)


def eval_on_grid(
    f: Callable[..., ArrayLike], grid: GridSpec, vectorized: bool = True
) -> ScalarField:
    """Sample ``f(x0, x1, ...)`` at every node of ``grid``.

    With ``vectorized=True`` ``f`` receives broadcastable coordinate arrays;
    otherwise it is called once per node with floats.
    """
    if vectorized:
        values = np.broadcast_to(np.asarray(f(*grid.meshgrid()), dtype=np.float64), grid.shape)
    else:
        coords = [a.coords for a in grid.axes]
        values = np.empty(grid.shape)
        for index in itertools.product(*(range(n) for n in grid.shape)):
            values[index] = f(*(float(coords[a][i]) for a, i in enumerate(index)))
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        index = tuple(int(i) for i in bad[0])
        raise EvaluationError(
            f"non-finite value at node {index}, coordinates {grid.node_coords(index)}"
        )
    return ScalarField(grid, values)


def second_derivative(values: NDArray[np.float64], h: float, axis: int) -> NDArray[np.float64]:
    """``d^2 f / dx^2`` along ``axis`` of a plain array."""
    f = np.moveaxis(values, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[:-2] - 2.0 * f[1:-1] + f[2:]) / h**2
    if f.shape[0] >= 4:
        # 2f0 - 5f1 + 4f2 - f3 in difference form, so constants give exactly 0
        out[0] = (2.0 * (f[0] - f[1]) - 3.0 * (f[1] - f[2]) + (f[2] - f[3])) / h**2
        out[-1] = (2.0 * (f[-1] - f[-2]) - 3.0 * (f[-2] - f[-3]) + (f[-3] - f[-4])) / h**2
    else:
        # three nodes: only the first-order boundary stencil exists
        out[0] = out[1]
        out[-1] = out[1]
    return np.moveaxis(out, 0, axis)


def laplacian(field: ScalarField, axes: Iterable[int] | None = None) -> ScalarField:
    """Sum of second derivatives of ``field`` over ``axes`` (all axes by default)."""
    grid = field.grid
    axes = grid.check_axes(axes)
    total = np.zeros(grid.shape)
    for a in axes:
        total = total + second_derivative(field.values, grid.axes[a].spacing, a)
    return ScalarField(grid, total)


def gradient(field: ScalarField, axes: Iterable[int] | None = None) -> VectorField:
    """First derivatives of ``field`` along each of ``axes``."""
    grid = field.grid
    axes = grid.check_axes(axes)
    comps = tuple(
        ScalarField(grid, np.gradient(field.values, grid.axes[a].spacing, axis=a, edge_order=2))
        for a in axes
    )
    return VectorField(grid, comps, axes)


def marginalize(field: ScalarField, integrate_axes: Iterable[int]) -> ScalarField:
    """Trapezoidal integral of ``field`` over ``integrate_axes``.

    The result lives on the remaining axes.  Integration proceeds from the last
    axis to the first, so the summation order is fixed.
    """
    grid = field.grid
    axes = grid.check_axes(integrate_axes)
    if len(axes) == grid.ndim:
        raise GridError("integrating over every axis leaves no field; use total_integral")
    values = field.values
    for a in sorted(axes, reverse=True):
        values = trapezoid(values, dx=grid.axes[a].spacing, axis=a)
    keep = [a for a in range(grid.ndim) if a not in axes]
    return ScalarField(grid.sub_grid(keep), values)


def total_integral(field: ScalarField) -> float:
    """Trapezoidal integral of ``field`` over the whole grid."""
    values = field.values
    for a in reversed(range(field.grid.ndim)):
        values = trapezoid(values, dx=field.grid.axes[a].spacing, axis=a)
    return float(values)


def trapezoid_weights(grid: GridSpec, axes: Iterable[int] | None = None) -> NDArray[np.float64]:
    """Tensor-product trapezoid weights over ``axes``, broadcastable against ``grid.shape``."""
    axes = grid.check_axes(axes)
    w = np.ones([1] * grid.ndim)
    for a in axes:
        ax = grid.axes[a]
        w1 = np.full(ax.points, ax.spacing)
        w1[[0, -1]] *= 0.5
        shape = [1] * grid.ndim
        shape[a] = ax.points
        w = w * w1.reshape(shape)
    return w


def broadcast_particle(values: NDArray[np.float64], grid: GridSpec, k: int) -> NDArray[np.float64]:
    """Reshape a single-particle array so it broadcasts along particle ``k``'s axes of ``grid``."""
    shape = [1] * grid.ndim
    for a, n in zip(grid.particle_axes(k), values.shape):
        shape[a] = n
    return np.asarray(values).reshape(shape)
