"""Self-consistent iteration for the M-particle quantum potential.

Starting from ``Q0 = -(hbar^2/2m) lap(phi)/phi`` the driver walks through the
M coupled phase equations

    |grad_{r_k} S|^2 / 2m = E/M - V(r_k) - Q/M,      k = 1..M

alternating two actions, one per equation:

* S-stage: solve equation ``k`` for ``S`` slice by slice (fast sweeping);
* Q-stage: substitute ``S`` into equation ``k`` and solve it for ``Q``.

The action alternates with every stage, also across STEP boundaries, and each
STEP restarts at equation 1.  ``S`` and ``Q`` are symmetrized after every
stage.  A STEP is one pass through all M equations; the run converges when the
relative sup-norm change of ``Q`` between consecutive STEPs drops below the
tolerance.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .eikonal import (
    DEFAULT_MAX_SWEEPS,
    DEFAULT_TOL,
    EikonalConvergenceError,
    EikonalProblem,
    PhaseField,
    SliceRecord,
    Source,
    _fast_sweep,
    solve_eikonal,
    solve_equation_k,
    upwind_gradient_sq,
)
from .fieldio import read_binary, write_binary
from .grid_field import GridError, GridSpec, ScalarField, broadcast_particle, gradient, trapezoid_weights
from .potentials import (
    ClassicallyForbiddenError,
    PhysicalConstants,
    bohm_potential,
    hartree_potential,
    particle_potential,
    per_particle_rhs,
)
from .symmetry import symmetrize
from .wavefunction import DensityModel, one_particle_density

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

logger = logging.getLogger(__name__)


class ScfError(RuntimeError):
    """A stage failed; ``step`` and ``equation`` identify it (1-based)."""

    def __init__(self, message: str, step: int, equation: int):
        super().__init__(f"STEP {step}, equation {equation}: {message}")
        self.step = step
        self.equation = equation


class SeparabilityError(ValueError):
    """A field is not a sum of per-axis (or per-particle) functions."""


@dataclass(frozen=True)
class ScfConfig:
    """Controls of the self-consistent loop.

    Attributes:
        tolerance: relative sup-norm change of ``Q`` between STEPs that counts as converged.
        max_steps: STEP budget; 0 returns the initial guess unconverged.
        symmetrize_each_stage: project ``S`` and ``Q`` onto symmetric functions after every stage.
        mixing: linear mixing factor for ``Q`` updates (1.0 = direct substitution).
        gradient: ``"upwind"`` (Godunov, consistent with the sweeping solver) or
            ``"central"`` differences for the Q-stage ``|grad_k S|^2``.
        solver: ``"sweep"`` solves equation ``k`` slice by slice over the other
            particles; ``"separable"`` splits ``Q`` into per-particle additive
            parts and solves one single-particle equation per particle (only
            valid while ``Q`` stays additive).
        floor: relative division floor of the initial Bohm potential.
        eikonal_tol, eikonal_max_sweeps: per-slice fast-sweeping controls.
        workers: slices solved concurrently.
    """

    tolerance: float = 1e-6
    max_steps: int = 50
    symmetrize_each_stage: bool = True
    mixing: float = 1.0
    gradient: str = "upwind"
    solver: str = "sweep"
    floor: float = 1e-8
    eikonal_tol: float = DEFAULT_TOL
    eikonal_max_sweeps: int = DEFAULT_MAX_SWEEPS
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 0:
            raise ValueError(f"max_steps must be a nonnegative integer, got {self.max_steps}")
        if not 0 < self.mixing <= 1:
            raise ValueError(f"mixing must lie in (0, 1], got {self.mixing}")
        if self.gradient not in ("upwind", "central"):
            raise ValueError(f"gradient must be 'upwind' or 'central', got {self.gradient!r}")
        if self.solver not in ("sweep", "separable"):
            raise ValueError(f"solver must be 'sweep' or 'separable', got {self.solver!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class StageRecord:
    step: int
    equation: int
    action: str
    residual: float
    clamped_fraction: float
    flagged_fraction: float


@dataclass
class ScfState:
    """Bookkeeping of a run.

    ``step`` counts completed STEPs (``j``), ``equation`` the equations already
    handled in the current STEP (``i``; 0 at a STEP boundary).
    """

    Q: ScalarField
    S: PhaseField | None = None
    step: int = 0
    equation: int = 0
    stages: int = 0
    history: list[StageRecord] = field(default_factory=list)
    step_residuals: list[float] = field(default_factory=list)
    Q_step_start: ScalarField | None = None
    slice_log: list[SliceRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.Q_step_start is None:
            self.Q_step_start = self.Q

    @property
    def M(self) -> int:
        return self.Q.grid.M

    @property
    def next_action(self) -> str:
        return "S" if self.stages % 2 == 0 else "Q"


def relative_change(new: NDArray[np.float64], old: NDArray[np.float64]) -> float:
    """``max|new - old| / max|new|`` (0 when both vanish)."""
    diff = float(np.max(np.abs(new - old)))
    scale = float(np.max(np.abs(new)))
    if diff == 0.0:
        return 0.0
    return diff / scale if scale > 0 else float("inf")


def electrostatic_potential(model: DensityModel, grid: GridSpec, constants: PhysicalConstants) -> ScalarField:
    """Per-particle electrostatic potential of the model's one-particle density."""
    return hartree_potential(one_particle_density(model, grid), model.N, constants)


def scf_init(
    model: DensityModel, grid: GridSpec, constants: PhysicalConstants, config: ScfConfig | None = None
) -> ScfState:
    """State holding the initial guess ``Q0`` from the model amplitude."""
    config = config or ScfConfig()
    model.check_grid(grid)
    Q0 = bohm_potential(model.amplitude_field(grid), constants, config.floor)
    return ScfState(Q=Q0)


def _source_kink_gradient_sq(
    S: ScalarField, k: int, sources: Sequence[Source], g2: NDArray[np.float64]
) -> NDArray[np.float64]:
    # At a source node S has a kink and the upwind slope is 0; use the smaller
    # one-sided slope per axis instead.
    grid = S.grid
    axes = grid.particle_axes(k)
    pgrid = grid.particle_grid()
    g2 = np.array(g2, copy=True)
    for src in sources:
        node = pgrid.nearest_index(src.point)
        index: list[int | slice] = [slice(None)] * grid.ndim
        for a, i in zip(axes, node):
            index[a] = i
        total = np.zeros(g2[tuple(index)].shape)
        for a, i in zip(axes, node):
            h = grid.axes[a].spacing
            slopes = []
            for j in (i - 1, i + 1):
                if 0 <= j < grid.shape[a]:
                    other = list(index)
                    other[a] = j
                    slopes.append(np.abs(S.values[tuple(other)] - S.values[tuple(index)]) / h)
            total = total + np.minimum.reduce(slopes) ** 2
        g2[tuple(index)] = total
    return g2


def recover_potential(
    S: ScalarField,
    v_single: ScalarField | None,
    k: int,
    constants: PhysicalConstants,
    gradient_kind: str = "upwind",
    sources: Sequence[Source] = (),
) -> NDArray[np.float64]:
    """Solve equation ``k`` for ``Q``: ``E - M V(r_k) - M |grad_k S|^2 / 2m``.

    With ``sources`` given, the upwind gradient at each source node (where the
    phase has a kink) is replaced by the smaller one-sided slope.
    """
    grid = S.grid
    axes = grid.particle_axes(k)
    if gradient_kind == "upwind":
        g2 = upwind_gradient_sq(S, axes)
        if sources:
            g2 = _source_kink_gradient_sq(S, k, sources, g2)
    else:
        g2 = sum(c.values**2 for c in gradient(S, axes).components)
    V = particle_potential(v_single, grid, k)
    M = grid.M
    return constants.energy_offset - M * V - M * g2 / (2.0 * constants.mass)


def additive_components(Q: ScalarField, tol: float = 1e-9) -> list[NDArray[np.float64]]:
    """Split ``Q = sum_j q_j(r_j)`` into single-particle parts.

    The parts are read off the lines through the central grid node; the
    constant is shared equally.  Flagged nodes are not checked.

    Raises:
        SeparabilityError: on unflagged nodes ``Q`` deviates from the additive
            reconstruction by more than ``tol`` relative to ``max|Q|``.
    """
    grid = Q.grid
    M = grid.M
    center = tuple(n // 2 for n in grid.shape)
    ref = float(Q.values[center])
    parts = []
    recon = np.zeros(grid.shape)
    for j in range(M):
        index: list[int | slice] = list(center)
        for a in grid.particle_axes(j):
            index[a] = slice(None)
        q = Q.values[tuple(index)] - ref * (M - 1) / M
        parts.append(q)
        recon = recon + broadcast_particle(q, grid, j)
    checked = np.abs(recon - Q.values)
    if Q.flags is not None:
        checked = np.where(Q.flags, 0.0, checked)
    scale = max(float(np.max(np.abs(Q.values))), 1.0)
    defect = float(np.max(checked))
    if defect > tol * scale:
        raise SeparabilityError(f"Q is not additive over particles (defect {defect:.3e})")
    return parts


def _separable_phase(
    Q: ScalarField,
    v_single: ScalarField | None,
    sources: Sequence[Source],
    constants: PhysicalConstants,
    config: ScfConfig,
) -> tuple[ScalarField, float]:
    grid = Q.grid
    pgrid = grid.particle_grid()
    V = np.zeros(pgrid.shape) if v_single is None else v_single.values
    total = np.zeros(grid.shape)
    clamped = 0.0
    for j, q in enumerate(additive_components(Q)):
        raw = 2.0 * constants.mass * (constants.energy_offset / grid.M - V - q)
        neg = raw < 0
        if neg.all():
            raise ClassicallyForbiddenError(f"particle {j + 1}: classically forbidden everywhere")
        clamped += float(neg.mean()) / grid.M
        problem = EikonalProblem(
            ScalarField(pgrid, np.where(neg, 0.0, raw)), tuple(sources),
            config.eikonal_tol, config.eikonal_max_sweeps,
        )
        total = total + broadcast_particle(solve_eikonal(problem).values, grid, j)
    return ScalarField(grid, total), clamped


def scf_solve_stage(
    state: ScfState,
    k: int,
    v_single: ScalarField | None,
    sources: Sequence[Source],
    constants: PhysicalConstants,
    config: ScfConfig | None = None,
    action: str | None = None,
) -> ScfState:
    """Run one stage on equation ``k`` (0-based) and advance the counters.

    ``action`` defaults to the alternation rule (``state.next_action``);
    passing ``"S"`` or ``"Q"`` overrides it.  The state is updated in place and
    returned.
    """
    config = config or ScfConfig()
    action = action or state.next_action
    grid = state.Q.grid
    step_no, eq_no = state.step + 1, k + 1
    if action == "S":
        try:
            if config.solver == "separable":
                S, clamped = _separable_phase(state.Q, v_single, sources, constants, config)
                equations = tuple(range(1, grid.M + 1))
            else:
                rhs = per_particle_rhs(v_single, state.Q, k, constants)
                phase = solve_equation_k(
                    rhs, k, sources, config.eikonal_tol, config.eikonal_max_sweeps,
                    previous=state.S, workers=config.workers, log=state.slice_log,
                )
                S, clamped, equations = phase.S, rhs.flagged_fraction, phase.equations
        except (EikonalConvergenceError, ValueError) as exc:
            raise ScfError(str(exc), step_no, eq_no) from exc
        if config.symmetrize_each_stage:
            S = symmetrize(S)
        old = state.S.S.values if state.S is not None else None
        residual = relative_change(S.values, old) if old is not None else float("inf")
        state.S = PhaseField(S, equations, config.symmetrize_each_stage)
    elif action == "Q":
        if state.S is None:
            raise ScfError("Q-stage needs a phase; run an S-stage first", step_no, eq_no)
        Q_new = recover_potential(state.S.S, v_single, k, constants, config.gradient, sources)
        if config.mixing != 1.0:
            Q_new = config.mixing * Q_new + (1.0 - config.mixing) * state.Q.values
        if not np.all(np.isfinite(Q_new)):
            raise ScfError("non-finite quantum potential", step_no, eq_no)
        Q = ScalarField(grid, Q_new)
        if config.symmetrize_each_stage:
            Q = symmetrize(Q)
        residual = relative_change(Q.values, state.Q.values)
        state.Q = Q
        clamped = 0.0
    else:
        raise ValueError(f"action must be 'S' or 'Q', got {action!r}")
    state.history.append(
        StageRecord(step_no, eq_no, action, residual, clamped, state.Q.flagged_fraction)
    )
    state.stages += 1
    state.equation += 1
    if state.equation == grid.M:
        state.equation = 0
        state.step += 1
        state.step_residuals.append(relative_change(state.Q.values, state.Q_step_start.values))
        state.Q_step_start = state.Q
    logger.debug("STEP %d eq %d %s residual %.3e", step_no, eq_no, action, residual)
    return state


def scf_run(
    model: DensityModel,
    grid: GridSpec,
    constants: PhysicalConstants,
    sources: Sequence[Source],
    config: ScfConfig | None = None,
    v_single: ScalarField | str | None = "hartree",
    initial: ScfState | None = None,
) -> tuple[ScfState, bool]:
    """Iterate STEPs until the relative change of ``Q`` falls below the tolerance.

    Args:
        v_single: single-particle potential ``V(r)``; ``"hartree"`` (default)
            uses the electrostatic potential of the model density, ``None``
            means ``V = 0``.
        initial: state to continue from (e.g. a loaded checkpoint) instead of ``Q0``.

    Returns:
        The final state and whether the last STEP met the tolerance.
    """
    config = config or ScfConfig()
    if isinstance(v_single, str):
        if v_single != "hartree":
            raise ValueError(f"unknown potential {v_single!r}")
        v_single = electrostatic_potential(model, grid, constants)
    state = initial if initial is not None else scf_init(model, grid, constants, config)
    for _ in range(config.max_steps):
        for k in range(grid.M):
            scf_solve_stage(state, k, v_single, sources, constants, config)
        if state.step_residuals[-1] < config.tolerance:
            return state, True
    return state, False


def reduce_potential(Q: ScalarField, beta: ScalarField) -> ScalarField:
    """Average ``Q`` over particles 2..M with conditional weight ``|beta(r'|r)|^2``.

    ``Q_red(r) = sum_w Q |beta|^2 / sum_w |beta|^2`` with trapezoid weights
    ``w`` over ``r'``; flagged ``Q`` nodes are left out of both sums.  A node
    ``r`` is flagged in the result if ``beta`` is flagged there or no weight
    remains.
    """
    grid = Q.grid
    if beta.grid != grid:
        raise GridError("Q and beta must share the configuration grid")
    pgrid = grid.particle_grid()
    if grid.M == 1:
        return ScalarField(pgrid, Q.values, Q.flags)
    rest = tuple(range(grid.d, grid.ndim))
    w = beta.values**2 * trapezoid_weights(grid, rest)
    if Q.flags is not None:
        w = np.where(Q.flags, 0.0, w)
    num = np.sum(w * Q.values, axis=rest)
    den = np.sum(w, axis=rest)
    empty = den <= 0
    reduced = np.where(empty, 0.0, num / np.where(empty, 1.0, den))
    flags = empty
    if beta.flags is not None:
        flags = flags | np.any(beta.flags, axis=rest)
    return ScalarField(pgrid, reduced, flags)


@dataclass(frozen=True, eq=False)
class SeparableProblem:
    """``sum_a (dS/dx_a)^2 = sum_a rhs_a(x_a)`` with one point source.

    Attributes:
        grid: grid of the full problem (any ``M``, ``d``).
        axis_rhs: one nonnegative 1D array per grid axis.
        source: source point, one coordinate per axis.
        value: phase at the source.
    """

    grid: GridSpec
    axis_rhs: tuple[NDArray[np.float64], ...]
    source: tuple[float, ...]
    value: float = 0.0

    def __post_init__(self) -> None:
        rhs = tuple(np.asarray(r, dtype=np.float64) for r in self.axis_rhs)
        if len(rhs) != self.grid.ndim:
            raise SeparabilityError(f"{len(rhs)} axis terms for a {self.grid.ndim}-axis grid")
        for a, r in enumerate(rhs):
            if r.shape != (self.grid.shape[a],):
                raise SeparabilityError(f"axis {a} term has shape {r.shape}")
            if np.any(r < 0) or not np.all(np.isfinite(r)):
                raise SeparabilityError(f"axis {a} term must be finite and nonnegative")
        object.__setattr__(self, "axis_rhs", rhs)
        object.__setattr__(self, "source", tuple(float(x) for x in self.source))
        self.grid.nearest_index(self.source)

    @classmethod
    def from_field(
        cls, rhs: ScalarField, source: Sequence[float], value: float = 0.0, tol: float = 1e-10
    ) -> SeparableProblem:
        """Split an additive field into per-axis terms.

        The terms are read off the lines through the source node; the constant
        ``rhs(source)`` is shared equally between axes.
        """
        grid = rhs.grid
        src = grid.nearest_index(source)
        base = float(rhs.values[src])
        terms = []
        recon = np.full(grid.shape, base)
        for a in range(grid.ndim):
            line = list(src)
            line[a] = slice(None)
            t = rhs.values[tuple(line)] - base
            shape = [1] * grid.ndim
            shape[a] = grid.shape[a]
            recon = recon + t.reshape(shape)
            terms.append(t + base / grid.ndim)
        scale = max(float(np.max(np.abs(rhs.values))), 1.0)
        err = float(np.max(np.abs(recon - rhs.values)))
        if err > tol * scale:
            raise SeparabilityError(f"rhs is not additively separable (defect {err:.3e})")
        return cls(grid, tuple(terms), tuple(source), value)

    def total_rhs(self) -> NDArray[np.float64]:
        total = np.zeros(self.grid.shape)
        for a, r in enumerate(self.axis_rhs):
            shape = [1] * self.grid.ndim
            shape[a] = r.size
            total = total + r.reshape(shape)
        return total


def separable_solve(problem: SeparableProblem) -> PhaseField:
    """Additive phase ``S = value + sum_a |int_{src_a}^{x_a} sqrt(rhs_a)|``.

    Each term is the viscosity solution of the 1D equation along its axis,
    integrated with the trapezoid rule from the source node outward.
    """
    grid = problem.grid
    src = grid.nearest_index(problem.source)
    total = np.full(grid.shape, float(problem.value))
    for a, r in enumerate(problem.axis_rhs):
        h = grid.axes[a].spacing
        F = np.sqrt(r)
        cum = cumulative_trapezoid(F, dx=h, initial=0.0)
        S_a = np.abs(cum - cum[src[a]])
        shape = [1] * grid.ndim
        shape[a] = S_a.size
        total = total + S_a.reshape(shape)
    return PhaseField(ScalarField(grid, total), tuple(range(1, grid.M + 1)), False)


def sweep_separable(problem: SeparableProblem, tol: float = DEFAULT_TOL, max_sweeps: int = DEFAULT_MAX_SWEEPS) -> ScalarField:
    """Fast-sweeping solution of the full separable equation on the whole grid.

    The coordinate hyperplanes through the source carry the data of the
    lower-dimensional problems (solved recursively, also by sweeping); the
    remaining nodes are swept with ``F = sqrt(sum_a rhs_a)``.  Independent of
    the quadrature in :func:`separable_solve`.
    """
    grid = problem.grid
    src = grid.nearest_index(problem.source)
    values = _sweep_separable(
        list(problem.axis_rhs),
        list(grid.spacing),
        list(src),
        float(problem.value),
        tol,
        max_sweeps,
    )
    return ScalarField(grid, values)


def _sweep_separable(axis_rhs, spacing, src, value, tol, max_sweeps) -> NDArray[np.float64]:
    ndim = len(axis_rhs)
    shape = tuple(r.size for r in axis_rhs)
    u = np.full(shape, np.inf)
    fixed = np.zeros(shape, dtype=np.bool_)
    if ndim == 1:
        u[src[0]] = value
        fixed[src[0]] = True
    else:
        for a in range(ndim):
            keep = [b for b in range(ndim) if b != a]
            sub = _sweep_separable(
                [axis_rhs[b] for b in keep], [spacing[b] for b in keep], [src[b] for b in keep],
                value, tol, max_sweeps,
            )
            index = [slice(None)] * ndim
            index[a] = src[a]
            u[tuple(index)] = sub
            fixed[tuple(index)] = True
    total = np.zeros(shape)
    for a, r in enumerate(axis_rhs):
        s = [1] * ndim
        s[a] = r.size
        total = total + r.reshape(s)
    flat = u.ravel()
    rounds, change = _fast_sweep(
        flat, np.sqrt(total).ravel(), fixed.ravel(), np.array(shape, dtype=np.int64),
        np.array(spacing, dtype=np.float64), tol, max_sweeps,
    )
    if change > tol:
        raise EikonalConvergenceError("separable sweep not converged", change, rounds)
    return flat.reshape(shape)


# ---- run artifacts ----

def write_residual_history(state: ScfState, path: str | Path, comments: Sequence[str] = ()) -> Path:
    """CSV with columns ``step,equation,residual,clamped_fraction,flagged_fraction``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh)
        writer.writerow(["step", "equation", "residual", "clamped_fraction", "flagged_fraction"])
        for r in state.history:
            values = (r.residual, r.clamped_fraction, r.flagged_fraction)
            writer.writerow([r.step, r.equation, *(repr(float(v)) for v in values)])
    return path


def save_checkpoint(state: ScfState, directory: str | Path, comment: str | None = None) -> tuple[Path, Path | None]:
    """Write ``Q`` and (if present) ``S`` as binary fields; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    q_path = write_binary(state.Q, directory / "checkpoint_Q.bqf", comment)
    s_path = None
    if state.S is not None:
        s_path = write_binary(state.S.S, directory / "checkpoint_S.bqf", comment)
    return q_path, s_path


def load_checkpoint(directory: str | Path) -> ScfState:
    """Rebuild a state from :func:`save_checkpoint` files (history is not restored)."""
    directory = Path(directory)
    Q, _ = read_binary(directory / "checkpoint_Q.bqf")
    s_path = directory / "checkpoint_S.bqf"
    S = None
    if s_path.exists():
        S = PhaseField(read_binary(s_path)[0], (), True)
    return ScfState(Q=Q, S=S)
