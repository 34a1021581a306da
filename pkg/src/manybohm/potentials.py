"""Bohm quantum potentials and the per-particle electrostatic potential.

All quantum-potential forms share the prefactor ``hbar^2 / 2m``::

    Q = -(hbar^2 / 2m) * sum_i lap_i(phi) / phi

The division is guarded: ``|phi|`` is replaced by ``floor * max|phi|`` where it
falls below that level (keeping the sign of ``phi``) and those nodes are
flagged.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import signal

from .grid_field import GridError, ScalarField, broadcast_particle, laplacian, trapezoid_weights

if TYPE_CHECKING:
    from collections.abc import Iterable

    from numpy.typing import NDArray

NODAL_FLAG_WARN_FRACTION = 0.10


class NodalWarning(UserWarning):
    """Many nodes of an amplitude fell below the division floor."""


class ClassicallyForbiddenError(ValueError):
    """The squared-gradient target is negative at every node."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Units of the problem.

    Attributes:
        hbar: reduced Planck constant.
        mass: particle mass, shared by all identical particles.
        softening: length ``a`` of the 1D softened Coulomb kernel ``1/sqrt(x^2 + a^2)``.
        energy_offset: total energy ``E`` added to the phase equation's right-hand side.
    """

    hbar: float = 1.0
    mass: float = 1.0
    softening: float = 1.0
    energy_offset: float = 0.0

    def __post_init__(self) -> None:
        for name in ("hbar", "mass", "softening"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        if not np.isfinite(self.energy_offset):
            raise ValueError("energy_offset must be finite")

    @property
    def kinetic_prefactor(self) -> float:
        """``hbar^2 / 2m``."""
        return self.hbar**2 / (2.0 * self.mass)


def _guarded_quotient(
    numerator: NDArray[np.float64], amplitude: NDArray[np.float64], floor: float
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    magnitude = np.abs(amplitude)
    level = floor * float(magnitude.max()) if magnitude.size else 0.0
    flagged = magnitude < level
    sign = np.where(amplitude < 0, -1.0, 1.0)
    denom = sign * np.maximum(magnitude, level)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(denom != 0, numerator / np.where(denom != 0, denom, 1.0), 0.0)
    return q, flagged | (denom == 0)


def bohm_potential(
    amplitude: ScalarField,
    constants: PhysicalConstants,
    floor: float = 1e-8,
    axes: Iterable[int] | None = None,
) -> ScalarField:
    """Quantum potential ``-(hbar^2/2m) lap(phi)/phi`` of a sampled real amplitude.

    Args:
        amplitude: ``phi`` (or ``sqrt(rho)``) on a configuration grid.
        constants: supplies ``hbar`` and ``mass``.
        floor: relative division floor; nodes with ``|phi| < floor * max|phi|``
            are divided by the floor instead and flagged.
        axes: axes of the Laplacian, all particle axes by default.

    Returns:
        ``Q`` with ``flags`` marking guarded nodes.  Emits a
        :class:`NodalWarning` when more than 10% of nodes are flagged.
    """
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    lap = laplacian(amplitude, axes)
    ratio, flagged = _guarded_quotient(lap.values, amplitude.values, floor)
    if amplitude.flags is not None:
        flagged = flagged | amplitude.flags
    frac = flagged.mean()
    if frac > NODAL_FLAG_WARN_FRACTION:
        warnings.warn(
            f"{100 * frac:.1f}% of nodes below the division floor; the amplitude is likely nodal",
            NodalWarning,
            stacklevel=2,
        )
    return ScalarField(amplitude.grid, -constants.kinetic_prefactor * ratio, flagged)


def conditional_potential(
    beta: ScalarField, constants: PhysicalConstants, floor: float = 1e-8
) -> ScalarField:
    """``Q_cond = -(hbar^2/2m) sum_i lap_i(beta) / beta`` over all particle axes."""
    return bohm_potential(beta, constants, floor)


def _cell_integral_inv_r(h: tuple[float, ...]) -> float:
    """Exact ``int 1/|u| du`` over the cell ``prod [-h_a/2, h_a/2]``."""
    half = [x / 2 for x in h]
    if len(h) == 2:
        a, b = half
        return 4.0 * (a * math.asinh(b / a) + b * math.asinh(a / b))
    if len(h) == 3:

        def antiderivative(x: float, y: float, z: float) -> float:
            r = math.sqrt(x * x + y * y + z * z)
            t = 0.0
            if y and z:
                t += y * z * math.log(x + r)
            if x and z:
                t += x * z * math.log(y + r)
            if x and y:
                t += x * y * math.log(z + r)
            if x:
                t -= 0.5 * x * x * math.atan(y * z / (x * r))
            if y:
                t -= 0.5 * y * y * math.atan(x * z / (y * r))
            if z:
                t -= 0.5 * z * z * math.atan(x * y / (z * r))
            return t

        octant = 0.0
        for corner in itertools.product((0, 1), repeat=3):
            sign = (-1) ** (3 - sum(corner))
            octant += sign * antiderivative(*(c * x for c, x in zip(corner, half)))
        return 8.0 * octant
    raise GridError(f"Coulomb self-cell integral implemented for d = 2, 3, got d = {len(h)}")


def coulomb_offsets_kernel(
    spacing: tuple[float, ...], points: tuple[int, ...], softening: float
) -> NDArray[np.float64]:
    """Kernel ``K(r - w)`` on all node offsets, shape ``(2n_a - 1, ...)``.

    ``d = 1`` uses the softened kernel.  For ``d >= 2`` the zero offset holds the
    cell-averaged ``1/|u|``.
    """
    d = len(spacing)
    offsets = np.meshgrid(
        *(np.arange(-(n - 1), n) * h for n, h in zip(points, spacing)), indexing="ij"
    )
    r2 = sum(o**2 for o in offsets)
    if d == 1:
        return 1.0 / np.sqrt(r2 + softening**2)
    center = tuple(n - 1 for n in points)
    r2[center] = 1.0
    kernel = 1.0 / np.sqrt(r2)
    kernel[center] = _cell_integral_inv_r(spacing) / float(np.prod(spacing))
    return kernel


def hartree_potential(
    rho_one: ScalarField, N: int, constants: PhysicalConstants, direct_limit: int = 40_000_000
) -> ScalarField:
    """Average electrostatic potential per particle, ``(1/N) (1/2) int rho(w) K(r - w) dw``.

    The integral is the trapezoid-weighted sum over grid nodes ``w``.  When the
    node-pair count exceeds ``direct_limit`` the same sum is evaluated as an FFT
    convolution.
    """
    grid = rho_one.grid
    if grid.M != 1:
        raise GridError("hartree_potential takes a single-particle density")
    if np.any(rho_one.values < 0):
        raise ValueError("density must be nonnegative")
    weighted = rho_one.values * trapezoid_weights(grid)
    kernel = coulomb_offsets_kernel(grid.spacing, grid.shape, constants.softening)
    if grid.size**2 <= direct_limit:
        out = np.zeros(grid.shape)
        shape = grid.shape
        for w in itertools.product(*(range(n) for n in shape)):
            if weighted[w] == 0.0:
                continue
            window = tuple(slice(n - 1 - i, 2 * n - 1 - i) for n, i in zip(shape, w))
            out += weighted[w] * kernel[window]
    else:
        out = signal.fftconvolve(weighted, kernel, mode="valid")
    return ScalarField(grid, 0.5 * out / N)


def split_potential(v_single: ScalarField, M: int) -> ScalarField:
    """Tensor sum ``V(r_1) + ... + V(r_M)`` over ``Omega^M``."""
    pgrid = v_single.grid
    if pgrid.M != 1:
        raise GridError("split_potential takes a single-particle potential")
    grid = pgrid.with_particles(M)
    total = np.zeros(grid.shape)
    for k in range(M):
        total = total + broadcast_particle(v_single.values, grid, k)
    return ScalarField(grid, total)


def particle_potential(v_single: ScalarField | None, grid, k: int) -> NDArray[np.float64]:
    """``V(r_k)`` broadcast over a configuration grid (zero when ``v_single`` is None)."""
    if v_single is None:
        return np.zeros(grid.shape)
    if v_single.grid.axes != grid.axes[: grid.d] or v_single.grid.M != 1:
        raise GridError("single-particle potential does not match the configuration grid")
    return np.broadcast_to(broadcast_particle(v_single.values, grid, k), grid.shape)


def per_particle_rhs(
    v_single: ScalarField | None, Q: ScalarField, k: int, constants: PhysicalConstants
) -> ScalarField:
    """Squared-gradient target of equation ``k``: ``2m (E/M - V(r_k) - Q/M)``.

    Negative values (classically forbidden nodes) are clamped to zero and
    flagged in the result.

    Raises:
        ClassicallyForbiddenError: every node had to be clamped.
    """
    grid = Q.grid
    M = grid.M
    grid.particle_axes(k)
    V = particle_potential(v_single, grid, k)
    raw = 2.0 * constants.mass * (constants.energy_offset / M - V - Q.values / M)
    clamped = raw < 0
    if clamped.all():
        raise ClassicallyForbiddenError(
            f"equation {k + 1}: classically forbidden everywhere; raise energy_offset"
        )
    return ScalarField(grid, np.where(clamped, 0.0, raw), clamped)
