"""Analytic M-particle amplitudes and the marginal/conditional factorization.

The amplitude ``phi(r_1, ..., r_M)`` is either a normalized Slater determinant
of ``M`` real orbitals or, for reference calculations, the plain product
``o_1(r_1) ... o_M(r_M)``.  From it we derive

* the M-particle density ``rho_M = N |phi|^2``,
* the one-particle density ``rho(r)`` (``rho_M`` integrated over particles 2..M),
* the marginal function ``phi(r) = sqrt(rho(r) / N)``,
* the conditional function ``beta(r'|r) = phi(r, r') / phi(r)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import integrate, special

from .grid_field import GridError, GridSpec, ScalarField, marginalize

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from numpy.typing import ArrayLike, NDArray

ORBITAL_KINDS = ("gaussian", "exponential", "harmonic", "plane_wave", "uniform")
NORMALIZATION_TOL = 1e-6


class OrbitalError(ValueError):
    """Malformed or unnormalized orbital."""


def _hermite_function(n: int, u: NDArray[np.float64]) -> NDArray[np.float64]:
    # physicists' Hermite function normalized in u
    norm = 1.0 / math.sqrt(2.0**n * math.factorial(n) * math.sqrt(math.pi))
    return norm * special.eval_hermite(n, u) * np.exp(-0.5 * u**2)


@dataclass(frozen=True)
class Orbital:
    """A real, normalized single-particle orbital in ``d`` dimensions.

    Kinds and their parameters:

    ``gaussian``
        ``(pi w^2)^(-d/4) exp(-|r - c|^2 / 2w^2)``; needs ``center``, ``width``.
    ``exponential``
        ``C exp(-z |r - c|)``; needs ``center``, ``decay``.
    ``harmonic``
        product of Hermite functions of widths ``width`` and per-axis quantum
        numbers ``index`` (>= 0); needs ``center``, ``width``, ``index``.
    ``plane_wave``
        real standing wave ``prod sqrt(2/L) sin(n pi (x - lo) / L)`` on ``box``;
        needs ``box`` and ``index`` (>= 1).
    ``uniform``
        constant ``1 / sqrt(|box|)``; needs ``box``.

    If ``box`` is given, normalization on the box is checked by quadrature at
    construction.
    """

    kind: str
    center: tuple[float, ...] | None = None
    width: float | None = None
    decay: float | None = None
    index: tuple[int, ...] | None = None
    box: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ORBITAL_KINDS:
            raise OrbitalError(f"unknown orbital kind {self.kind!r}; choose from {ORBITAL_KINDS}")
        if self.box is not None:
            object.__setattr__(self, "box", tuple((float(lo), float(hi)) for lo, hi in self.box))
        if self.kind in ("plane_wave", "uniform"):
            if self.box is None:
                raise OrbitalError(f"{self.kind} orbital needs a box")
            d = len(self.box)
        else:
            if self.center is None:
                raise OrbitalError(f"{self.kind} orbital missing center")
            d = len(tuple(np.atleast_1d(self.center)))
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if self.kind in ("gaussian", "harmonic"):
            if self.width is None:
                raise OrbitalError(f"{self.kind} orbital missing width")
            if not self.width > 0:
                raise OrbitalError(f"orbital width must be positive, got {self.width}")
        if self.kind == "exponential":
            if self.decay is None:
                raise OrbitalError("exponential orbital missing decay")
            if not self.decay > 0:
                raise OrbitalError(f"orbital decay must be positive, got {self.decay}")
        if self.kind in ("harmonic", "plane_wave"):
            if self.index is None:
                raise OrbitalError(f"{self.kind} orbital missing index")
            index = tuple(int(i) for i in np.atleast_1d(self.index))
            if len(index) == 1 and d > 1:
                index = index * d
            if len(index) != d:
                raise OrbitalError(f"orbital index has {len(index)} entries for d={d}")
            lowest = 1 if self.kind == "plane_wave" else 0
            if min(index) < lowest:
                raise OrbitalError(f"{self.kind} quantum numbers must be >= {lowest}")
            object.__setattr__(self, "index", index)
        if self.box is not None:
            if len(self.box) != d:
                raise OrbitalError(f"box has {len(self.box)} axes for d={d}")
            mass = self.norm_on_box(self.box)
            if abs(mass - 1.0) > NORMALIZATION_TOL:
                raise OrbitalError(
                    f"{self.kind} orbital not normalized on box {self.box}: integral {mass:.9f}"
                )

    @property
    def d(self) -> int:
        return len(self.box) if self.kind in ("plane_wave", "uniform") else len(self.center)

    @property
    def separable(self) -> bool:
        return self.kind != "exponential" or self.d == 1

    def with_box(self, box: Sequence[tuple[float, float]]) -> Orbital:
        return Orbital(self.kind, self.center, self.width, self.decay, self.index, tuple(box))

    # ---- per-axis factors (separable kinds) ----

    def axis_factor(self, a: int) -> Callable[[ArrayLike], NDArray[np.float64]]:
        """The 1D factor along axis ``a``; the orbital is the product over axes."""
        if not self.separable:
            raise OrbitalError("exponential orbital in d > 1 does not factor over axes")
        if self.kind == "gaussian":
            c, w = self.center[a], self.width
            return lambda x: _hermite_function(0, (np.asarray(x, float) - c) / w) / math.sqrt(w)
        if self.kind == "harmonic":
            c, w, n = self.center[a], self.width, self.index[a]
            return lambda x: _hermite_function(n, (np.asarray(x, float) - c) / w) / math.sqrt(w)
        if self.kind == "plane_wave":
            lo, hi = self.box[a]
            k = self.index[a] * math.pi / (hi - lo)
            amp = math.sqrt(2.0 / (hi - lo))
            return lambda x: amp * np.sin(k * (np.asarray(x, float) - lo))
        if self.kind == "uniform":
            lo, hi = self.box[a]
            return lambda x: np.full(np.shape(x), 1.0 / math.sqrt(hi - lo))
        c, z = self.center[0], self.decay
        return lambda x: math.sqrt(z) * np.exp(-z * np.abs(np.asarray(x, float) - c))

    # ---- pointwise evaluation; x has shape (..., d) ----

    def _radius(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.sqrt(np.sum((x - np.asarray(self.center)) ** 2, axis=-1))

    def _exp_norm(self) -> float:
        d, z = self.d, self.decay
        return math.sqrt((2 * z) ** d * math.gamma(d / 2) / (2 * math.pi ** (d / 2) * math.gamma(d)))

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d:
            raise OrbitalError(f"points have {x.shape[-1]} coordinates, orbital has d={self.d}")
        if self.kind == "exponential":
            return self._exp_norm() * np.exp(-self.decay * self._radius(x))
        out = np.ones(x.shape[:-1])
        for a in range(self.d):
            out = out * self.axis_factor(a)(x[..., a])
        return out

    def gradient(self, x: ArrayLike) -> NDArray[np.float64]:
        """Analytic gradient, shape ``x.shape``."""
        x = np.asarray(x, dtype=np.float64)
        psi = self(x)
        if self.kind == "gaussian":
            return -(x - np.asarray(self.center)) / self.width**2 * psi[..., None]
        if self.kind == "exponential":
            r = self._radius(x)[..., None]
            unit = np.divide(x - np.asarray(self.center), r, out=np.zeros_like(x), where=r > 0)
            return -self.decay * unit * psi[..., None]
        if self.kind == "uniform":
            return np.zeros_like(x)
        factors = [self.axis_factor(a)(x[..., a]) for a in range(self.d)]
        out = np.empty_like(x)
        for a in range(self.d):
            if self.kind == "harmonic":
                c, w, n = self.center[a], self.width, self.index[a]
                u = (x[..., a] - c) / w
                lower = _hermite_function(n - 1, u) if n > 0 else 0.0
                deriv = (math.sqrt(n / 2) * lower - math.sqrt((n + 1) / 2) * _hermite_function(n + 1, u))
                deriv = deriv / (w * math.sqrt(w))
            else:
                lo, hi = self.box[a]
                k = self.index[a] * math.pi / (hi - lo)
                deriv = math.sqrt(2.0 / (hi - lo)) * k * np.cos(k * (x[..., a] - lo))
            others = np.prod([f for b, f in enumerate(factors) if b != a], axis=0) if self.d > 1 else 1.0
            out[..., a] = deriv * others
        return out

    def laplacian(self, x: ArrayLike) -> NDArray[np.float64]:
        """Analytic Laplacian (the exponential cusp at the center is excluded)."""
        x = np.asarray(x, dtype=np.float64)
        psi = self(x)
        if self.kind == "gaussian":
            r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
            return (r2 / self.width**4 - self.d / self.width**2) * psi
        if self.kind == "harmonic":
            u2 = ((x - np.asarray(self.center)) / self.width) ** 2
            n = np.asarray(self.index)
            return np.sum(u2 - (2 * n + 1), axis=-1) / self.width**2 * psi
        if self.kind == "plane_wave":
            k2 = sum((n * math.pi / (hi - lo)) ** 2 for n, (lo, hi) in zip(self.index, self.box))
            return -k2 * psi
        if self.kind == "uniform":
            return np.zeros_like(psi)
        z = self.decay
        if self.d == 1:
            return z**2 * psi
        r = self._radius(x)
        with np.errstate(divide="ignore"):
            return (z**2 - z * (self.d - 1) / r) * psi

    # ---- quadrature ----

    def norm_on_box(self, box: Sequence[tuple[float, float]]) -> float:
        """``int_box |o|^2`` by adaptive quadrature."""
        if self.kind == "exponential" and self.d > 1:
            # mass inside the largest inscribed ball around the center bounds the box mass
            # from below; fall back to cubature when the bound is inconclusive
            c = np.asarray(self.center)
            radius = min(min(c[a] - lo, hi - c[a]) for a, (lo, hi) in enumerate(box))
            if radius > 0:
                inside = special.gammainc(self.d, 2 * self.decay * radius)
                if 1.0 - inside <= 0.1 * NORMALIZATION_TOL:
                    return float(inside)
        return overlap(self, self, box)


def overlap(a: Orbital, b: Orbital, box: Sequence[tuple[float, float]]) -> float:
    """``int_box a(r) b(r) dr`` by adaptive quadrature (per axis when both factor)."""
    if a.d != b.d or a.d != len(box):
        raise OrbitalError("overlap needs orbitals and box of the same dimension")
    if a.separable and b.separable:
        total = 1.0
        for ax, (lo, hi) in enumerate(box):
            fa, fb = a.axis_factor(ax), b.axis_factor(ax)
            pts = [p for o in (a, b) if o.center is not None for p in [o.center[ax]] if lo < p < hi]
            val, _ = integrate.quad(
                lambda x: float(fa(x) * fb(x)), lo, hi, points=pts or None, limit=400,
                epsabs=1e-13, epsrel=1e-12,
            )
            total *= val
        return total
    func = lambda *x: float(a(np.array(x)) * b(np.array(x)))  # noqa: E731
    val, _ = integrate.nquad(func, list(box), opts={"limit": 100, "epsabs": 1e-10, "epsrel": 1e-9})
    return float(val)


def box_of(grid: GridSpec) -> tuple[tuple[float, float], ...]:
    """Per-particle box ``Omega`` of a configuration grid."""
    return tuple((ax.lower, ax.upper) for ax in grid.axes[: grid.d])


def _permutation_parity(order: NDArray[np.intp]) -> NDArray[np.float64]:
    """+1/-1 sign of each permutation along the last axis of ``order``."""
    M = order.shape[-1]
    inversions = np.zeros(order.shape[:-1], dtype=np.int64)
    for i in range(M):
        for j in range(i + 1, M):
            inversions += order[..., i] > order[..., j]
    return np.where(inversions % 2 == 0, 1.0, -1.0)


_LEIBNIZ_CACHE: dict[int, list[tuple[float, tuple[int, ...]]]] = {}


def _leibniz_terms(M: int) -> list[tuple[float, tuple[int, ...]]]:
    if M not in _LEIBNIZ_CACHE:
        terms = []
        for perm in itertools.permutations(range(M)):
            terms.append((float(_permutation_parity(np.array(perm))), perm))
        _LEIBNIZ_CACHE[M] = terms
    return _LEIBNIZ_CACHE[M]


def _canonical_det(A: NDArray[np.float64], keys: NDArray[np.float64]) -> NDArray[np.float64]:
    """Determinant of ``A[..., k, j] = o_j(r_k)`` that is exactly antisymmetric.

    Rows are first sorted into a canonical particle order (lexicographic in
    ``keys[..., k, :]``), the sorted matrix is expanded in a fixed term order,
    and the sign of the sorting permutation is applied.  Exchanging two
    particles therefore flips the sign bit and nothing else.  Coincident
    particles give exactly zero.
    """
    M = A.shape[-1]
    order = np.broadcast_to(np.arange(M), keys.shape[:-1]).copy()
    for c in reversed(range(keys.shape[-1])):
        col = np.take_along_axis(keys[..., c], order, axis=-1)
        idx = np.argsort(col, axis=-1, kind="stable")
        order = np.take_along_axis(order, idx, axis=-1)
    B = np.take_along_axis(A, order[..., :, None], axis=-2)
    det = np.zeros(A.shape[:-2])
    for sign, perm in _leibniz_terms(M):
        term = B[..., 0, perm[0]]
        for i in range(1, M):
            term = term * B[..., i, perm[i]]
        det = det + term if sign > 0 else det - term
    sorted_keys = np.take_along_axis(keys, order[..., :, None], axis=-2)
    coincident = np.any(np.all(sorted_keys[..., 1:, :] == sorted_keys[..., :-1, :], axis=-1), axis=-1)
    return np.where(coincident, 0.0, _permutation_parity(order) * det)


@dataclass(frozen=True)
class DensityModel:
    """Antisymmetric (``slater``) or independent-particle (``product``) amplitude.

    Attributes:
        orbitals: one orbital per explicit particle, ``M = len(orbitals)``.
        N: total number of particles in the system; scales the densities.
        mode: ``"slater"`` or ``"product"``.
        box: per-particle domain; orbitals are checked for normalization on it.
    """

    orbitals: tuple[Orbital, ...]
    N: int
    box: tuple[tuple[float, float], ...]
    mode: str = "slater"

    def __post_init__(self) -> None:
        orbitals = tuple(self.orbitals)
        if not orbitals:
            raise OrbitalError("a density model needs at least one orbital")
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "orbitals", tuple(o if o.box == box else o.with_box(box) for o in orbitals))
        if self.mode not in ("slater", "product"):
            raise OrbitalError(f"mode must be 'slater' or 'product', got {self.mode!r}")
        if int(self.N) != self.N or self.N < len(orbitals):
            raise OrbitalError(f"need N >= M, got N={self.N}, M={len(orbitals)}")
        if len({o.d for o in self.orbitals}) != 1:
            raise OrbitalError("all orbitals must share the spatial dimension")
        norm2 = 1.0
        if self.mode == "slater" and self.M > 1:
            if len(set(self.orbitals)) != len(self.orbitals):
                raise OrbitalError("slater mode needs M distinct orbitals (determinant vanishes)")
            S = np.array([[overlap(a, b, box) for b in self.orbitals] for a in self.orbitals])
            norm2 = float(np.linalg.det(S))
            if norm2 < 1e-10:
                raise OrbitalError(f"orbitals are linearly dependent on the box (Gram det {norm2:.3e})")
            norm2 *= math.factorial(self.M)
        object.__setattr__(self, "_scale", 1.0 / math.sqrt(norm2))

    @property
    def M(self) -> int:
        return len(self.orbitals)

    @property
    def d(self) -> int:
        return self.orbitals[0].d

    def check_grid(self, grid: GridSpec) -> None:
        if grid.M != self.M or grid.d != self.d:
            raise GridError(
                f"grid has M={grid.M}, d={grid.d} but model has M={self.M}, d={self.d}"
            )

    def amplitude(self, coords: ArrayLike) -> NDArray[np.float64] | float:
        """``phi(r_1, ..., r_M)`` at points of shape ``(..., M, d)`` or a flat ``M*d`` vector."""
        x = np.asarray(coords, dtype=np.float64)
        scalar = x.ndim == 1
        if scalar:
            x = x.reshape(self.M, self.d)
        if x.shape[-2:] != (self.M, self.d):
            raise GridError(f"coordinates must end in shape ({self.M}, {self.d}), got {x.shape}")
        for a, (lo, hi) in enumerate(self.box):
            if np.any(x[..., a] < lo) or np.any(x[..., a] > hi):
                raise GridError(f"coordinates outside the box along axis {a}")
        A = np.stack([o(x) for o in self.orbitals], axis=-1)
        out = self._combine(A, x)
        return float(out) if scalar else out

    def _combine(self, A: NDArray[np.float64], keys: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.mode == "product" or self.M == 1:
            out = A[..., 0, 0]
            for k in range(1, self.M):
                out = out * A[..., k, k]
            return out
        return self._scale * _canonical_det(A, keys)

    def amplitude_field(self, grid: GridSpec) -> ScalarField:
        """The amplitude sampled on a configuration grid."""
        self.check_grid(grid)
        pgrid = grid.particle_grid()
        pcoords = np.stack(pgrid.meshgrid(), axis=-1).reshape(-1, self.d)
        table = np.stack([o(pcoords) for o in self.orbitals], axis=-1)  # (n_particle_nodes, M)
        pshape = pgrid.shape
        node = np.indices(grid.shape)
        flat_k = []
        for k in range(self.M):
            idx = node[list(grid.particle_axes(k))]
            flat_k.append(np.ravel_multi_index(tuple(idx), pshape))
        flat = np.stack(flat_k, axis=-1)  # (*grid.shape, M)
        A = table[flat]  # (*grid.shape, M, M)
        keys = pcoords[flat]  # (*grid.shape, M, d)
        return ScalarField(grid, self._combine(A, keys))


def m_particle_density(model: DensityModel, grid: GridSpec) -> ScalarField:
    """``rho(r_1..r_M) = N |phi(r_1..r_M)|^2`` on ``grid``."""
    amp = model.amplitude_field(grid)
    return ScalarField(grid, model.N * amp.values**2)


def one_particle_density(model: DensityModel, grid: GridSpec) -> ScalarField:
    """``rho(r)``: the M-particle density integrated over particles 2..M."""
    rho = m_particle_density(model, grid)
    if model.M == 1:
        return rho
    return marginalize(rho, range(grid.d, grid.ndim))


def marginal_function(model: DensityModel, grid: GridSpec) -> ScalarField:
    """``phi(r) = sqrt(rho(r) / N)``; negative quadrature noise is clamped and flagged."""
    rho = one_particle_density(model, grid)
    p = rho.values / model.N
    negative = p < 0
    return ScalarField(rho.grid, np.sqrt(np.maximum(p, 0.0)), negative)


def conditional_function(
    model: DensityModel, grid: GridSpec, floor: float | None = None
) -> ScalarField:
    """``beta(r'|r) = phi(r, r') / phi(r)`` over ``Omega^M``.

    The division uses ``max(phi(r), floor)``; ``floor`` defaults to
    ``1e-8 * max(phi)``.  Nodes whose ``r`` falls below the floor are flagged.
    """
    amp = model.amplitude_field(grid)
    marg = marginal_function(model, grid)
    if floor is None:
        floor = 1e-8 * float(marg.values.max())
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    if model.M == 1:
        return ScalarField(grid, np.where(amp.values < 0, -1.0, 1.0), marg.values < floor)
    shape = grid.shape[: grid.d] + (1,) * (grid.ndim - grid.d)
    phi_r = marg.values.reshape(shape)
    beta = amp.values / np.maximum(phi_r, floor)
    flags = np.broadcast_to(phi_r < floor, grid.shape)
    return ScalarField(grid, beta, flags)
