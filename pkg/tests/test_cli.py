import csv
import textwrap
from pathlib import Path

import numpy as np
import pytest

from manybohm.cli import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_NUMERICAL, EXIT_OK, main
from manybohm.config import load_config
from manybohm.fieldio import read_binary, read_csv, write_binary
from manybohm.grid_field import ScalarField

from .oracles import gaussian_bohm

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def single_gaussian(points=601, lower=-6.0, upper=6.0, extra=""):
    return f"""\
[problem]
name = single
N = 1
M = 1
d = 1
mode = product

[grid]
lower = {lower}
upper = {upper}
points = {points}

[constants]
energy = 5

[orbital.1]
kind = gaussian
center = 0
width = 1

[sources]
points = 0

[potential]
electrostatic = none

[output]
directory = out
formats = csv, binary
{extra}"""


def separable(points=81, extra=""):
    return f"""\
[problem]
name = separable
N = 2
M = 2
d = 1
mode = product

[grid]
lower = -5
upper = 5
points = {points}

[constants]
energy = 40

[orbital.1]
kind = gaussian
center = 0
width = 1

[orbital.2]
kind = gaussian
center = 0
width = 1

[sources]
points = 0

[potential]
electrostatic = none

[scf]
solver = separable
{extra}
[output]
directory = out
formats = csv, binary
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def hash_line(path):
    return f"config_sha256={load_config(path).sha256}"


class TestValidate:
    def test_reference_ok(self, capsys):
        assert main(["validate", str(CONFIGS / "two_gaussians_slater.ini")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "m_particle_density_integral" in out and "conditional_norm_max_deviation" in out

    def test_dimension_bound(self, tmp_path, capsys):
        text = separable().replace("d = 1", "d = 4")
        assert main(["validate", str(write(tmp_path, text))]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "dimension bound" in err and "run.ini:4:" in err

    def test_missing_width(self, tmp_path, capsys):
        text = separable().replace("center = 0\nwidth = 1\n\n[sources]", "center = 0\n\n[sources]")
        assert main(["validate", str(write(tmp_path, text))]) == EXIT_CONFIG
        assert "missing width" in capsys.readouterr().err

    def test_bad_threads(self):
        assert main(["--threads", "0", "validate", str(CONFIGS / "uniform_box.ini")]) == EXIT_CONFIG

    def test_all_shipped_configs_validate(self):
        for path in sorted(CONFIGS.glob("*.ini")):
            assert main(["validate", str(path)]) == EXIT_OK


class TestQpot:
    def test_gaussian_oracle(self, tmp_path):
        path = write(tmp_path, single_gaussian(2001))
        assert main(["qpot", str(path)]) == EXIT_OK
        Q, comments = read_csv(tmp_path / "out" / "Q0.csv")
        x = Q.grid.coords(0)
        inner = np.abs(x) <= 4
        assert np.max(np.abs(Q.values - gaussian_bohm(x))[inner]) <= 1e-3
        assert hash_line(path) in comments
        for name in ("density", "marginal", "conditional_norm"):
            assert (tmp_path / "out" / f"{name}.csv").exists()
            assert (tmp_path / "out" / f"{name}.bqf").exists()
        assert (tmp_path / "out" / "normalization.txt").read_text().startswith(f"# {hash_line(path)}")

    def test_uniform_zero(self, tmp_path):
        text = (CONFIGS / "uniform_box.ini").read_text()
        path = write(tmp_path, text)
        assert main(["qpot", str(path)]) == EXIT_OK
        Q, _ = read_csv(tmp_path / "out" / "uniform_box" / "Q0.csv")
        assert np.all(Q.values == 0.0)

    def test_rerun_bitwise(self, tmp_path):
        path = write(tmp_path, separable(41))
        out = tmp_path / "out"
        assert main(["qpot", str(path)]) == EXIT_OK
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert main(["qpot", str(path)]) == EXIT_OK
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second


class TestScf:
    def test_single_particle(self, tmp_path, capsys):
        path = write(tmp_path, single_gaussian(101))
        assert main(["scf", str(path)]) == EXIT_OK
        assert "after 1 STEPs" in capsys.readouterr().out

    def test_separable_reference(self, tmp_path):
        path = write(tmp_path, separable(201))
        assert main(["scf", str(path)]) == EXIT_OK
        out = tmp_path / "out"
        with (out / "residuals.csv").open() as fh:
            rows = list(csv.reader(line for line in fh if not line.startswith("#")))
        assert rows[0] == ["step", "equation", "residual", "clamped_fraction", "flagged_fraction"]
        assert float(rows[-1][2]) < 1e-6
        for name in ("Q_final", "S_final", "Q_reduced"):
            field, comments = read_csv(out / f"{name}.csv")
            assert hash_line(path) in comments
        assert "converged=True" in (out / "diagnostics.txt").read_text()
        assert hash_line(path) in (out / "residuals.csv").read_text()

    def test_max_steps_zero(self, tmp_path):
        path = write(tmp_path, separable(41, "max_steps = 0\n"))
        assert main(["scf", str(path)]) == EXIT_NOT_CONVERGED
        assert main(["qpot", str(path)]) == EXIT_OK
        out = tmp_path / "out"
        Q, _ = read_csv(out / "Q_final.csv")
        Q0, _ = read_csv(out / "Q0.csv")
        assert np.array_equal(Q.values, Q0.values)
        assert not (out / "S_final.csv").exists()

    def test_not_converged_writes_outputs(self, tmp_path):
        text = separable(41, "max_steps = 2\n").replace("solver = separable", "solver = sweep")
        path = write(tmp_path, text)
        assert main(["scf", str(path)]) == EXIT_NOT_CONVERGED
        assert "converged=False" in (tmp_path / "out" / "diagnostics.txt").read_text()

    def test_resume(self, tmp_path):
        path = write(tmp_path, separable(41, "max_steps = 1\n"))
        assert main(["scf", str(path)]) == EXIT_NOT_CONVERGED
        path.write_text(separable(41))
        assert main(["scf", str(path), "--resume"]) == EXIT_OK

    def test_resume_without_checkpoint(self, tmp_path):
        path = write(tmp_path, separable(41))
        assert main(["scf", str(path), "--resume"]) == EXIT_CONFIG

    def test_numerical_failure(self, tmp_path, capsys):
        text = separable(41).replace("energy = 40", "energy = -40")
        assert main(["scf", str(write(tmp_path, text))]) == EXIT_NUMERICAL
        assert "numerical failure" in capsys.readouterr().err


class TestTrajectories:
    def setup_phase(self, tmp_path, values_fn, starts):
        text = single_gaussian(41, -2.0, 2.0).replace("d = 1", "d = 2").replace("center = 0", "center = 0, 0")
        text = text.replace("width = 1", "width = 0.5")
        text = text.replace("points = 0\n", "points = 0, 0\n")
        text += "\n[trajectories]\ndt = 0.05\nsteps = 20\n"
        path = write(tmp_path, text)
        cfg = load_config(path)
        x, y = cfg.grid.meshgrid()
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        write_binary(ScalarField(cfg.grid, values_fn(x, y)), cfg.output_dir / "checkpoint_S.bqf")
        starts_path = tmp_path / "starts.csv"
        starts_path.write_text("\n".join(",".join(map(str, s)) for s in starts) + "\n")
        return path, starts_path, cfg

    def read(self, path):
        lines = [line for line in path.read_text().splitlines() if not line.startswith("#")]
        assert lines[0] == "t,x0,x1"
        return np.array([[float(v) for v in line.split(",")] for line in lines[1:]])

    def test_straight_line(self, tmp_path):
        path, starts, cfg = self.setup_phase(tmp_path, lambda x, y: 0.5 * x, [(-1.0, 0.3), (0.0, -0.5)])
        assert main(["trajectories", str(path), "--starts", str(starts)]) == EXIT_OK
        for i, (x0, y0) in enumerate([(-1.0, 0.3), (0.0, -0.5)]):
            data = self.read(cfg.output_dir / f"trajectory_{i:03d}.csv")
            assert np.allclose(data[:, 1], x0 + 0.5 * data[:, 0], atol=1e-12)
            assert np.allclose(data[:, 2], y0, atol=1e-12)

    def test_stationary(self, tmp_path):
        path, starts, cfg = self.setup_phase(tmp_path, lambda x, y: np.zeros_like(x), [(0.2, 0.2)])
        assert main(["trajectories", str(path), "--starts", str(starts)]) == EXIT_OK
        data = self.read(cfg.output_dir / "trajectory_000.csv")
        assert len(data) == 21 and np.all(data[:, 1:] == 0.2)
        text = (cfg.output_dir / "trajectory_000.csv").read_text()
        assert hash_line(path) in text and "truncated=False" in text

    def test_point_source_monotone_radius(self, tmp_path):
        path, starts, cfg = self.setup_phase(tmp_path, lambda x, y: np.hypot(x, y), [(0.3, 0.2), (-0.5, 0.1)])
        assert main(["trajectories", str(path), "--starts", str(starts)]) == EXIT_OK
        for i in range(2):
            data = self.read(cfg.output_dir / f"trajectory_{i:03d}.csv")
            r = np.hypot(data[:, 1], data[:, 2])
            assert np.all(np.diff(r) > 0)

    def test_after_scf(self, tmp_path):
        path = write(tmp_path, single_gaussian(101))
        assert main(["scf", str(path)]) == EXIT_OK
        starts = tmp_path / "starts.csv"
        starts.write_text("0.5\n")
        assert main(["trajectories", str(path), "--starts", str(starts)]) == EXIT_OK
        S, _ = read_binary(tmp_path / "out" / "checkpoint_S.bqf")
        assert S.grid.shape == (101,)

    def test_missing_checkpoint(self, tmp_path):
        path = write(tmp_path, single_gaussian(41))
        starts = tmp_path / "starts.csv"
        starts.write_text("0.5\n")
        assert main(["trajectories", str(path), "--starts", str(starts)]) == EXIT_CONFIG

    def test_bad_starts(self, tmp_path):
        path, _, _ = self.setup_phase(tmp_path, lambda x, y: x, [(0.0, 0.0)])
        bad = tmp_path / "bad.csv"
        bad.write_text("0.1\n")
        assert main(["trajectories", str(path), "--starts", str(bad)]) == EXIT_CONFIG
        outside = tmp_path / "outside.csv"
        outside.write_text("9,9\n")
        assert main(["trajectories", str(path), "--starts", str(outside)]) == EXIT_CONFIG


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "manybohm.cli", "validate", str(CONFIGS / "uniform_box.ini")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == EXIT_OK and "ok" in proc.stdout
