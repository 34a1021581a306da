"""Run configuration: an INI file describing one experiment.

Example::

    [problem]
    name = two-gaussians
    N = 2
    M = 2
    d = 1
    mode = slater

    [grid]
    lower = -5
    upper = 5
    points = 101

    [constants]
    energy = 20

    [orbital.1]
    kind = gaussian
    center = -1
    width = 1

    [orbital.2]
    kind = gaussian
    center = 1
    width = 1

    [sources]
    points = 0

    [scf]
    tolerance = 1e-6
    max_steps = 50

    [output]
    directory = out
    formats = csv, binary

Vectors are comma separated; several source points are separated by ``;``.
Without ``[sources] points`` a single source sits at the node of maximum
one-particle density.
Grid bounds may be scalars (shared by all axes) or one value per axis.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eikonal import Source
from .grid_field import MAX_CONFIG_DIM, AxisSpec, GridError, GridSpec
from .potentials import PhysicalConstants
from .scf import ScfConfig
from .wavefunction import DensityModel, Orbital, OrbitalError, one_particle_density

OUTPUT_FORMATS = ("csv", "binary")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line of the offending entry, if known."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.message = message
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


@dataclass(frozen=True, eq=False)
class RunConfig:
    path: Path
    sha256: str
    name: str
    N: int
    M: int
    d: int
    mode: str
    grid: GridSpec
    constants: PhysicalConstants
    orbitals: tuple[Orbital, ...]
    sources: tuple[Source, ...]
    scf: ScfConfig
    electrostatic: bool
    output_dir: Path
    formats: tuple[str, ...]
    trajectory_dt: float = 0.01
    trajectory_steps: int = 100

    def model(self) -> DensityModel:
        box = tuple((ax.lower, ax.upper) for ax in self.grid.axes[: self.d])
        return DensityModel(self.orbitals, self.N, box, self.mode)

    def provenance(self) -> list[str]:
        """Header comment lines carried by every output file."""
        return [f"config_sha256={self.sha256}", f"problem={self.name}"]


class _Locator:
    """Maps ``(section, key)`` to line numbers of the raw file."""

    def __init__(self, text: str):
        self.sections: dict[str, int] = {}
        self.keys: dict[tuple[str, str], int] = {}
        section = None
        for no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            m = re.match(r"^\[([^\]]+)\]", line)
            if m:
                section = m.group(1).strip()
                self.sections.setdefault(section, no)
                continue
            m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", line)
            if m and section is not None:
                self.keys.setdefault((section, m.group(1).strip().lower()), no)

    def line(self, section: str, key: str | None = None) -> int | None:
        if key is not None and (section, key) in self.keys:
            return self.keys[(section, key)]
        return self.sections.get(section)


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, where: _Locator, path: Path):
        self.parser = parser
        self.where = where
        self.path = path

    def fail(self, message: str, section: str, key: str | None = None) -> ConfigError:
        return ConfigError(message, self.path, self.where.line(section, key))

    def raw(self, section: str, key: str, default: str | None = None) -> str:
        if not self.parser.has_section(section):
            if default is not None:
                return default
            raise ConfigError(f"missing section [{section}]", self.path)
        if not self.parser.has_option(section, key):
            if default is not None:
                return default
            raise self.fail(f"missing key '{key}' in [{section}]", section)
        return self.parser.get(section, key).strip()

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_section(section) and self.parser.has_option(section, key)

    def integer(self, section: str, key: str, default: int | None = None) -> int:
        text = self.raw(section, key, None if default is None else str(default))
        try:
            return int(text)
        except ValueError:
            raise self.fail(f"{key} must be an integer, got {text!r}", section, key) from None

    def real(self, section: str, key: str, default: float | None = None) -> float:
        text = self.raw(section, key, None if default is None else repr(default))
        try:
            return float(text)
        except ValueError:
            raise self.fail(f"{key} must be a number, got {text!r}", section, key) from None

    def reals(self, section: str, key: str) -> tuple[float, ...]:
        text = self.raw(section, key)
        try:
            return tuple(float(t) for t in text.split(",") if t.strip())
        except ValueError:
            raise self.fail(f"{key} must be a comma separated list of numbers", section, key) from None

    def flag(self, section: str, key: str, default: bool) -> bool:
        if not self.has(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise self.fail(f"{key} must be true or false", section, key) from None


def _per_axis(values: tuple[float, ...], d: int, what: str, reader: _Reader, key: str) -> tuple[float, ...]:
    if len(values) == 1:
        return values * d
    if len(values) != d:
        raise reader.fail(f"{what} needs 1 or {d} values, got {len(values)}", "grid", key)
    return values


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a run configuration.

    Raises:
        ConfigError: with the file line of the offending entry where known.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path) from None
    text = data.decode("utf-8")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"parse error: {exc.message.splitlines()[0]}", path, line) from None
    r = _Reader(parser, _Locator(text), path)

    name = r.raw("problem", "name", path.stem)
    N = r.integer("problem", "n")
    M = r.integer("problem", "m")
    d = r.integer("problem", "d")
    mode = r.raw("problem", "mode", "slater")
    if d < 1:
        raise r.fail(f"d must be >= 1, got {d}", "problem", "d")
    if M < 1:
        raise r.fail(f"M must be >= 1, got {M}", "problem", "m")
    if N < M:
        raise r.fail(f"need N >= M, got N={N}, M={M}", "problem", "n")
    if M * d > MAX_CONFIG_DIM:
        raise r.fail(
            f"M*d = {M * d} exceeds the dimension bound {MAX_CONFIG_DIM}", "problem", "m"
        )
    if mode not in ("slater", "product"):
        raise r.fail(f"mode must be slater or product, got {mode!r}", "problem", "mode")

    lower = _per_axis(r.reals("grid", "lower"), d, "lower", r, "lower")
    upper = _per_axis(r.reals("grid", "upper"), d, "upper", r, "upper")
    points_text = r.reals("grid", "points")
    if any(p != int(p) for p in points_text):
        raise r.fail("points must be integers", "grid", "points")
    points = _per_axis(tuple(float(p) for p in points_text), d, "points", r, "points")
    try:
        axes = [AxisSpec(lo, hi, int(n)) for lo, hi, n in zip(lower, upper, points)]
        grid = GridSpec.from_particle_axes(axes, M)
    except GridError as exc:
        raise r.fail(str(exc), "grid") from None

    try:
        constants = PhysicalConstants(
            hbar=r.real("constants", "hbar", 1.0),
            mass=r.real("constants", "mass", 1.0),
            softening=r.real("constants", "softening", 1.0),
            energy_offset=r.real("constants", "energy", 0.0),
        )
    except ValueError as exc:
        raise r.fail(str(exc), "constants") from None

    box = tuple(zip(lower, upper))
    orbital_sections = sorted(
        (s for s in parser.sections() if s.startswith("orbital")),
        key=lambda s: (len(s), s),
    )
    if len(orbital_sections) != M:
        line = r.where.line(orbital_sections[-1]) if orbital_sections else r.where.line("problem", "m")
        raise ConfigError(f"M = {M} but {len(orbital_sections)} [orbital.*] sections", path, line)
    orbitals = []
    for sec in orbital_sections:
        kw: dict[str, object] = {"kind": r.raw(sec, "kind")}
        if r.has(sec, "center"):
            kw["center"] = r.reals(sec, "center")
        if r.has(sec, "width"):
            kw["width"] = r.real(sec, "width")
        if r.has(sec, "decay"):
            kw["decay"] = r.real(sec, "decay")
        if r.has(sec, "index"):
            kw["index"] = tuple(int(v) for v in r.reals(sec, "index"))
        try:
            orb = Orbital(box=box, **kw)
        except OrbitalError as exc:
            raise r.fail(f"[{sec}] {exc}", sec) from None
        if orb.d != d:
            raise r.fail(f"[{sec}] orbital has d={orb.d}, problem has d={d}", sec)
        orbitals.append(orb)
    try:
        DensityModel(tuple(orbitals), N, box, mode)
    except (OrbitalError, GridError) as exc:
        raise r.fail(str(exc), orbital_sections[0]) from None

    sources = []
    value = r.real("sources", "value", 0.0)
    radius = r.real("sources", "radius", 0.0)
    if r.has("sources", "points"):
        chunks = [c for c in r.raw("sources", "points").split(";") if c.strip()]
    else:
        # default phase reference: the node of maximum one-particle density
        rho = one_particle_density(DensityModel(tuple(orbitals), N, box, mode), grid)
        node = np.unravel_index(int(np.argmax(rho.values)), rho.grid.shape)
        chunks = [",".join(repr(float(x)) for x in rho.grid.node_coords(node))]
    for chunk in chunks:
        try:
            point = tuple(float(t) for t in chunk.split(","))
        except ValueError:
            raise r.fail(f"bad source point {chunk.strip()!r}", "sources", "points") from None
        if len(point) != d:
            raise r.fail(f"source point {point} needs {d} coordinates", "sources", "points")
        if any(not lo <= x <= hi for x, (lo, hi) in zip(point, box)):
            raise r.fail(f"source point {point} outside the box", "sources", "points")
        try:
            sources.append(Source(point, value, radius))
        except ValueError as exc:
            raise r.fail(str(exc), "sources") from None
    if not sources:
        raise r.fail("at least one source point is required", "sources", "points")

    try:
        scf = ScfConfig(
            tolerance=r.real("scf", "tolerance", 1e-6),
            max_steps=r.integer("scf", "max_steps", 50),
            symmetrize_each_stage=r.flag("scf", "symmetrize", True),
            mixing=r.real("scf", "mixing", 1.0),
            gradient=r.raw("scf", "gradient", "upwind"),
            solver=r.raw("scf", "solver", "sweep"),
            floor=r.real("scf", "floor", 1e-8),
            eikonal_tol=r.real("scf", "eikonal_tol", 1e-10),
            eikonal_max_sweeps=r.integer("scf", "eikonal_max_sweeps", 200),
        )
    except ValueError as exc:
        raise r.fail(str(exc), "scf") from None

    electrostatic = r.raw("potential", "electrostatic", "hartree")
    if electrostatic not in ("hartree", "none"):
        raise r.fail(f"electrostatic must be hartree or none, got {electrostatic!r}", "potential", "electrostatic")

    out = Path(r.raw("output", "directory", "output"))
    if not out.is_absolute():
        out = path.parent / out
    formats = tuple(f.strip() for f in r.raw("output", "formats", "csv").split(",") if f.strip())
    bad = [f for f in formats if f not in OUTPUT_FORMATS]
    if bad or not formats:
        raise r.fail(f"formats must be drawn from {OUTPUT_FORMATS}, got {formats}", "output", "formats")

    dt = r.real("trajectories", "dt", 0.01)
    steps = r.integer("trajectories", "steps", 100)
    if not dt > 0 or steps < 0:
        raise r.fail("trajectory dt must be > 0 and steps >= 0", "trajectories")

    return RunConfig(
        path=path,
        sha256=hashlib.sha256(data).hexdigest(),
        name=name,
        N=N,
        M=M,
        d=d,
        mode=mode,
        grid=grid,
        constants=constants,
        orbitals=tuple(orbitals),
        sources=tuple(sources),
        scf=scf,
        electrostatic=electrostatic == "hartree",
        output_dir=out,
        formats=formats,
        trajectory_dt=dt,
        trajectory_steps=steps,
    )
