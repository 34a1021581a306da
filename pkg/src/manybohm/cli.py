"""Command-line driver.

    manybohm validate RUN.ini
    manybohm qpot RUN.ini
    manybohm scf RUN.ini [--resume]
    manybohm trajectories RUN.ini --starts STARTS.csv

Exit codes: 0 success, 2 configuration error, 3 not converged, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .eikonal import EikonalConvergenceError, integrate_trajectory, velocity_field
from .fieldio import FieldFormatError, read_binary, write_binary, write_csv
from .grid_field import GridError, ScalarField, marginalize, total_integral
from .potentials import ClassicallyForbiddenError, NodalWarning, bohm_potential
from .scf import (
    ScfError,
    electrostatic_potential,
    load_checkpoint,
    reduce_potential,
    save_checkpoint,
    scf_run,
    write_residual_history,
)
from .symmetry import asymmetry
from .wavefunction import (
    conditional_function,
    m_particle_density,
    marginal_function,
    one_particle_density,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_NUMERICAL = 4

logger = logging.getLogger("manybohm")


def _emit(cfg: RunConfig, field: ScalarField, stem: str, extra: Sequence[str] = ()) -> list[Path]:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    comments = cfg.provenance() + list(extra)
    written = []
    if "csv" in cfg.formats:
        written.append(write_csv(field, cfg.output_dir / f"{stem}.csv", comments))
    if "binary" in cfg.formats:
        written.append(write_binary(field, cfg.output_dir / f"{stem}.bqf", "; ".join(comments)))
    return written


def _write_text(cfg: RunConfig, name: str, lines: Sequence[str]) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / name
    body = [f"# {c}" for c in cfg.provenance()] + list(lines)
    path.write_text("\n".join(body) + "\n", encoding="utf-8")
    return path


def _normalization_report(cfg: RunConfig) -> tuple[list[str], ScalarField]:
    model = cfg.model()
    grid = cfg.grid
    rho_M = m_particle_density(model, grid)
    rho = one_particle_density(model, grid)
    marg = marginal_function(model, grid)
    beta = conditional_function(model, grid)
    if grid.M > 1:
        norm = marginalize(ScalarField(grid, beta.values**2), range(grid.d, grid.ndim))
        unflagged = ~np.any(beta.flags, axis=tuple(range(grid.d, grid.ndim)))
    else:
        norm = ScalarField(grid, np.ones(grid.shape))
        unflagged = ~beta.flags
    dev = float(np.max(np.abs(norm.values[unflagged] - 1.0))) if unflagged.any() else float("nan")
    lines = [
        f"m_particle_density_integral={total_integral(rho_M)!r} expected={cfg.N}",
        f"one_particle_density_integral={total_integral(rho)!r} expected={cfg.N}",
        f"marginal_norm={total_integral(ScalarField(marg.grid, marg.values**2))!r} expected=1",
        f"conditional_norm_max_deviation={dev!r} unflagged_nodes={int(unflagged.sum())}",
    ]
    return lines, ScalarField(norm.grid, norm.values, ~unflagged)


def cmd_validate(cfg: RunConfig) -> int:
    lines, _ = _normalization_report(cfg)
    print(f"config {cfg.path} ok (sha256 {cfg.sha256})")
    print(f"grid: M={cfg.M} d={cfg.d} shape={cfg.grid.shape}")
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_qpot(cfg: RunConfig) -> int:
    model = cfg.model()
    grid = cfg.grid
    Q0 = bohm_potential(model.amplitude_field(grid), cfg.constants, cfg.scf.floor)
    lines, norm = _normalization_report(cfg)
    _emit(cfg, Q0, "Q0", [f"flagged_nodes={Q0.flagged_count}"])
    _emit(cfg, one_particle_density(model, grid), "density")
    _emit(cfg, marginal_function(model, grid), "marginal")
    _emit(cfg, norm, "conditional_norm")
    _write_text(cfg, "normalization.txt", lines)
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_scf(cfg: RunConfig, workers: int = 1, resume: bool = False) -> int:
    model = cfg.model()
    grid = cfg.grid
    config = replace(cfg.scf, workers=workers)
    v_single = electrostatic_potential(model, grid, cfg.constants) if cfg.electrostatic else None
    initial = None
    if resume:
        try:
            initial = load_checkpoint(cfg.output_dir)
        except (OSError, FieldFormatError) as exc:
            raise ConfigError(f"cannot resume: {exc}", cfg.path) from None
        if initial.Q.grid != grid:
            raise ConfigError("checkpoint grid does not match the configuration", cfg.path)
    state, converged = scf_run(model, grid, cfg.constants, cfg.sources, config, v_single, initial)
    _emit(cfg, state.Q, "Q_final")
    if state.S is not None:
        _emit(cfg, state.S.S, "S_final")
    beta = conditional_function(model, grid)
    _emit(cfg, reduce_potential(state.Q, beta), "Q_reduced")
    write_residual_history(state, cfg.output_dir / "residuals.csv", cfg.provenance())
    save_checkpoint(state, cfg.output_dir, "; ".join(cfg.provenance()))
    last = state.step_residuals[-1] if state.step_residuals else float("nan")
    clamped = max((r.clamped_fraction for r in state.history), default=0.0)
    _write_text(
        cfg,
        "diagnostics.txt",
        [
            f"converged={converged}",
            f"steps={state.step}",
            f"stages={state.stages}",
            f"last_step_residual={last!r}",
            f"max_clamped_fraction={clamped!r}",
            f"final_flagged_fraction={state.Q.flagged_fraction!r}",
            f"Q_asymmetry={asymmetry(state.Q)!r}",
        ],
    )
    print(f"{'converged' if converged else 'not converged'} after {state.step} STEPs, residual {last:.3e}")
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_trajectories(cfg: RunConfig, starts_path: Path) -> int:
    s_path = cfg.output_dir / "checkpoint_S.bqf"
    try:
        S, _ = read_binary(s_path)
    except (OSError, FieldFormatError) as exc:
        raise ConfigError(f"cannot load phase checkpoint {s_path}: {exc}", cfg.path) from None
    if S.grid != cfg.grid:
        raise ConfigError("phase checkpoint grid does not match the configuration", cfg.path)
    try:
        starts = np.loadtxt(starts_path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read starts file: {exc}", starts_path) from None
    if starts.shape[1] != cfg.grid.ndim:
        raise ConfigError(f"start points need {cfg.grid.ndim} coordinates", starts_path)
    v = velocity_field(S, cfg.constants)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    header = ",".join(["t"] + [f"x{a}" for a in range(cfg.grid.ndim)])
    for i, start in enumerate(starts):
        try:
            traj = integrate_trajectory(v, start, cfg.trajectory_dt, cfg.trajectory_steps)
        except GridError as exc:
            raise ConfigError(f"start {i}: {exc}", starts_path) from None
        path = cfg.output_dir / f"trajectory_{i:03d}.csv"
        comments = cfg.provenance() + [f"truncated={traj.truncated}"]
        with path.open("w", encoding="utf-8") as fh:
            for c in comments:
                fh.write(f"# {c}\n")
            fh.write(header + "\n")
            for t, p in zip(traj.times, traj.points):
                fh.write(",".join([repr(float(t))] + [repr(float(x)) for x in p]) + "\n")
    print(f"wrote {len(starts)} trajectories to {cfg.output_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manybohm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("--threads", type=int, default=1, help="cap on concurrent slice solves")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("validate", "parse the config and print normalization checks"),
        ("qpot", "write the initial quantum potential and densities"),
        ("scf", "run the self-consistent loop"),
        ("trajectories", "integrate trajectories in the final phase"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", type=Path)
        if name == "scf":
            p.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")
        if name == "trajectories":
            p.add_argument("--starts", type=Path, required=True, help="CSV of start points, one per line")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        with warnings.catch_warnings():
            warnings.simplefilter("always", NodalWarning)
            if args.command == "validate":
                return cmd_validate(cfg)
            if args.command == "qpot":
                return cmd_qpot(cfg)
            if args.command == "scf":
                return cmd_scf(cfg, args.threads, args.resume)
            return cmd_trajectories(cfg, args.starts)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScfError, EikonalConvergenceError, ClassicallyForbiddenError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FieldFormatError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
