"""Particle permutations acting on configuration-space fields.

A permutation ``p`` of ``{0, ..., M-1}`` acts on a field by relabeling the
particle blocks of its arguments::

    (P_p f)(x_1, ..., x_M) = f(y_1, ..., y_M),   y_j = x_{p^-1(j)}

so ``P_p P_q = P_{q p}`` (with ``(q p)(i) = q(p(i))``): the relabeling
composes in reverse order.  Because every particle shares the same axes this is
an exact index remapping (an axis transpose), never an interpolation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .grid_field import GridError, ScalarField, broadcast_particle

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from numpy.typing import ArrayLike, NDArray

    from .wavefunction import DensityModel


@dataclass(frozen=True)
class ParticlePermutation:
    """Bijection on particle slots, stored as the image tuple ``(p(0), ..., p(M-1))``."""

    mapping: tuple[int, ...]

    def __post_init__(self) -> None:
        mapping = tuple(int(i) for i in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"{mapping} is not a permutation of 0..{len(mapping) - 1}")
        object.__setattr__(self, "mapping", mapping)

    @classmethod
    def identity(cls, M: int) -> ParticlePermutation:
        return cls(tuple(range(M)))

    @classmethod
    def transposition(cls, M: int, i: int, j: int) -> ParticlePermutation:
        m = list(range(M))
        m[i], m[j] = m[j], m[i]
        return cls(tuple(m))

    @property
    def M(self) -> int:
        return len(self.mapping)

    def __call__(self, i: int) -> int:
        return self.mapping[i]

    def __matmul__(self, other: ParticlePermutation) -> ParticlePermutation:
        """Composition ``(self @ other)(i) = self(other(i))``."""
        if other.M != self.M:
            raise ValueError("cannot compose permutations of different size")
        return ParticlePermutation(tuple(self.mapping[other.mapping[i]] for i in range(self.M)))

    def inverse(self) -> ParticlePermutation:
        inv = [0] * self.M
        for i, j in enumerate(self.mapping):
            inv[j] = i
        return ParticlePermutation(tuple(inv))

    @property
    def sign(self) -> int:
        seen = [False] * self.M
        parity = 0
        for i in range(self.M):
            if seen[i]:
                continue
            length = 0
            j = i
            while not seen[j]:
                seen[j] = True
                j = self.mapping[j]
                length += 1
            parity += length - 1
        return -1 if parity % 2 else 1


def all_permutations(M: int) -> Iterator[ParticlePermutation]:
    """Every element of the symmetric group, in lexicographic order."""
    for perm in itertools.permutations(range(M)):
        yield ParticlePermutation(perm)


def transpositions(M: int) -> Iterator[ParticlePermutation]:
    for i, j in itertools.combinations(range(M), 2):
        yield ParticlePermutation.transposition(M, i, j)


def _axis_order(p: ParticlePermutation, d: int) -> list[int]:
    # output block i reads input block p(i)
    return [p(i) * d + a for i in range(p.M) for a in range(d)]


def permute_array(values: NDArray[np.float64], p: ParticlePermutation, d: int) -> NDArray[np.float64]:
    """Apply ``P_p`` to a plain array whose axes are ``M`` blocks of ``d``."""
    return np.transpose(values, _axis_order(p, d))


def permute_field(field: ScalarField, p: ParticlePermutation) -> ScalarField:
    """``P_p f``; flags are permuted along with the values."""
    grid = field.grid
    if p.M != grid.M:
        raise GridError(f"permutation of {p.M} particles applied to an M={grid.M} field")
    values = permute_array(field.values, p, grid.d)
    flags = None if field.flags is None else permute_array(field.flags, p, grid.d)
    return ScalarField(grid, values, flags)


def symmetrize_array(values: NDArray[np.float64], M: int, d: int) -> NDArray[np.float64]:
    total = np.zeros(values.shape)
    for p in all_permutations(M):
        total = total + permute_array(values, p, d)
    return total / math.factorial(M)


def symmetrize(field: ScalarField) -> ScalarField:
    """Average of ``P_p f`` over all ``M!`` permutations (summed in a fixed order).

    A node's flag survives if it is flagged in any permuted copy.
    """
    grid = field.grid
    values = symmetrize_array(field.values, grid.M, grid.d)
    flags = None
    if field.flags is not None:
        flags = np.zeros(grid.shape, dtype=bool)
        for p in all_permutations(grid.M):
            flags |= permute_array(field.flags, p, grid.d)
    return ScalarField(grid, values, flags)


def asymmetry(field: ScalarField) -> float:
    """Largest ``|P f - f|`` over all permutations."""
    return max(
        (float(np.max(np.abs(permute_field(field, p).values - field.values))) for p in all_permutations(field.grid.M)),
        default=0.0,
    )


@dataclass(frozen=True)
class AntisymmetryReport:
    max_deviation: float
    n_points: int
    n_transpositions: int

    @property
    def antisymmetric(self) -> bool:
        return self.max_deviation == 0.0


def check_antisymmetry(model: DensityModel, points: ArrayLike) -> AntisymmetryReport:
    """Max of ``|phi(P x) - sign(P) phi(x)|`` over transpositions ``P`` and sample points.

    ``points`` has shape ``(n, M, d)`` (or ``(n, M*d)``).  A product model is
    not antisymmetric; its deviation is reported, not raised.
    """
    x = np.asarray(points, dtype=np.float64).reshape(-1, model.M, model.d)
    base = model.amplitude(x)
    worst = 0.0
    count = 0
    for t in transpositions(model.M):
        swapped = x[:, list(t.mapping), :]
        dev = np.abs(model.amplitude(swapped) - t.sign * base)
        worst = max(worst, float(dev.max()) if dev.size else 0.0)
        count += 1
    return AntisymmetryReport(worst, len(x), count)


@dataclass(frozen=True, eq=False)
class ReconstructionReport:
    """Outcome of symmetrizing ``f(r, r') = g(r, r') + h(r)``.

    ``symmetrized`` should equal ``g_fin + h_fin`` with
    ``g_fin = (g(r,r') + g(r',r)) / 2`` and ``h_fin = (h(r) + h(r')) / 2``.
    """

    symmetrized: ScalarField
    g_fin: ScalarField
    h_fin: ScalarField
    reconstruction_error: float
    g_fin_error: float
    g_symmetric: bool
    completion_error: float


def appendix_reconstruction_check(g: ScalarField, h: ScalarField) -> ReconstructionReport:
    """Check that symmetrization supplies the missing ``l(r') = h(r')`` term.

    Builds ``f = g(r, r') + h(r)``, symmetrizes it, and compares against
    ``g_fin + h_fin`` computed directly from the swap of ``g`` and the sum of
    ``h`` on both slots.  ``completion_error`` compares
    ``2 (sym(f) - sym(g))`` against ``h(r) + h(r')``: the completion implied
    by symmetrization has ``l = h``.
    """
    grid = g.grid
    if grid.M != 2:
        raise GridError("the reconstruction check is stated for two particles")
    if h.grid.M != 1 or h.grid.axes != grid.axes[: grid.d]:
        raise GridError("h must live on the single-particle grid of g")
    h1 = broadcast_particle(h.values, grid, 0)
    h2 = broadcast_particle(h.values, grid, 1)
    f = ScalarField(grid, g.values + h1)
    sym = symmetrize(f)
    swap = ParticlePermutation((1, 0))
    g_fin = (g.values + permute_array(g.values, swap, grid.d)) / 2
    h_fin = np.broadcast_to((h1 + h2) / 2, grid.shape)
    expected = g_fin + h_fin
    sym_g = symmetrize(g).values
    implied_l_plus_h = 2 * (sym.values - sym_g)
    return ReconstructionReport(
        symmetrized=sym,
        g_fin=ScalarField(grid, g_fin),
        h_fin=ScalarField(grid, h_fin),
        reconstruction_error=float(np.max(np.abs(sym.values - expected))),
        g_fin_error=float(np.max(np.abs(sym_g - g_fin))),
        g_symmetric=bool(np.array_equal(g.values, permute_array(g.values, swap, grid.d))),
        completion_error=float(np.max(np.abs(implied_l_plus_h - (h1 + h2)))),
    )
