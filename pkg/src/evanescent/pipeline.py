"""Staged, restartable reproduction of the evanescent-speed workflow.

Stages communicate only through files in the output directory::

    calibrate   -> potential.json
    eigen       -> spectrum.json, eigen_manifest.csv, states/psi_NNNN.f2d
    speeds      -> speeds.csv                      (eigenstate series)
    pulses      -> pulses/manifest.csv, pulses/pulse_NNN.json, pulses/speeds.csv
    export-fig3 -> fig3.csv

Every CSV is written with 12 significant digits and every output is a pure
function of the configuration, whatever the worker count.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, dynamics
from .fieldio import FieldStack, fmt, read_csv, write_csv, write_field
from .grid import GHZ_TO_PER_PS, Grid2D, ScalarField2D, UnitSystem, per_ps_to_ghz
from .potential import PotentialParams, calibrate, smooth_potential, y_slice
from .spectral import BoundSpectrum, ModeLabel, bound_spectrum


class ConfigError(ValueError):
    """Invalid or unreadable configuration (exit code 2)."""


class MissingArtifact(FileNotFoundError):
    """An earlier stage's output is absent (exit code 4)."""


# -- configuration ----------------------------------------------------------------

@dataclass
class GridConfig:
    x_min: float = -900.0
    x_max: float = 700.0
    y_min: float = -40.0
    y_max: float = 40.0
    h_x: float = 0.5
    h_y: float = 0.1


@dataclass
class PotentialConfig:
    V_s: float = 0.1581
    h0: float = 3.587
    blend_halfwidth: float = 2.0


@dataclass
class CalibrationConfig:
    target_J0_GHz: float = 6.34
    target_V0_meV: float = 0.538
    J0_rtol: float = 1e-3
    V0_atol: float = 5e-4
    h0_max: float = 10.0


@dataclass
class EigenConfig:
    method: str = "auto"
    margin_meV: float = 0.01
    residual_tol: float = 1e-8
    slice_size: int = 40
    max_windows: int = 200
    separable_threshold: float = 0.9


@dataclass
class PulseConfig:
    count: int = 42
    spacing_meV: float = 0.01
    top_gap_meV: float = 0.04
    sigma_x: float = dynamics.SIGMA_X
    sigma_y: float = dynamics.SIGMA_Y
    y_c: float = 8.0
    min_fidelity: float = dynamics.MIN_FIDELITY
    fidelity_flag: float = 0.9


@dataclass
class FitConfig:
    x_min: float = analysis.FIT_RANGE[0]
    x_max: float = analysis.FIT_RANGE[1]
    x_eval: float = 3.0
    y_eval: float = 8.0
    series: list[int] = field(default_factory=lambda: [0])


@dataclass
class PipelineConfig:
    """Everything a run depends on.  Every field defaults to the reference setup."""

    grid: GridConfig = field(default_factory=GridConfig)
    mass_kg: float = 6.95e-36
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    eigen: EigenConfig = field(default_factory=EigenConfig)
    pulses: PulseConfig = field(default_factory=PulseConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    output_dir: str = "evanescent-run"
    workers: int = 1
    mesh_scale: float = 1.0

    # serialisation
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        cfg = _build(cls, data, "config")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    # derived objects
    def grid2d(self) -> Grid2D:
        g = self.grid
        base = Grid2D(g.x_min, g.x_max, g.y_min, g.y_max, g.h_x, g.h_y)
        return base if self.mesh_scale == 1 else base.scaled(self.mesh_scale)

    def units(self) -> UnitSystem:
        return UnitSystem.from_kg(self.mass_kg)

    def potential_params(self) -> PotentialParams:
        p = self.potential
        return PotentialParams(p.V_s, p.h0, p.blend_halfwidth)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        try:
            grid = self.grid2d()
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from exc
        need(grid.x_min <= -600 and grid.x_max >= 10, "grid must contain the ramp and the step edge")
        need(self.mass_kg > 0, "mass_kg must be positive")
        need(self.mesh_scale > 0, "mesh_scale must be positive")
        need(self.workers >= 1, "workers must be at least 1")
        try:
            self.potential_params().check_blend_zones()
        except ValueError as exc:
            raise ConfigError(f"potential: {exc}") from exc
        c = self.calibration
        need(c.target_J0_GHz > 0 and c.target_V0_meV > 0, "calibration targets must be positive")
        need(c.J0_rtol > 0 and c.V0_atol > 0 and c.h0_max > 0, "calibration tolerances must be positive")
        e = self.eigen
        need(e.method in ("auto", "blocks", "splu"), f"unknown eigen.method {e.method!r}")
        need(0 < e.residual_tol < 1e-3, "eigen.residual_tol must lie in (0, 1e-3)")
        need(e.margin_meV >= 0, "eigen.margin_meV must be non-negative")
        need(e.slice_size >= 4 and e.max_windows >= 1, "eigen.slice_size >= 4 and max_windows >= 1")
        need(0.5 < e.separable_threshold <= 1, "eigen.separable_threshold must lie in (0.5, 1]")
        pu = self.pulses
        need(pu.count >= 1, "pulses.count must be at least 1")
        need(pu.spacing_meV > 0 and pu.top_gap_meV >= 0, "pulse spacing must be positive")
        need(pu.sigma_x > 0 and pu.sigma_y > 0, "pulse widths must be positive")
        need(0 < pu.min_fidelity <= 1 and 0 < pu.fidelity_flag <= 1, "fidelities must lie in (0, 1]")
        f = self.fit
        need(0 <= f.x_min < f.x_max, "fit range must satisfy 0 <= x_min < x_max")
        need(f.x_eval > 0, "fit.x_eval must lie inside the step (x > 0)")
        need(all(s in (0, 1) for s in f.series), "fit.series may only contain 0 and 1")


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{name} must be a list")
            kwargs[name] = [int(v) for v in value]
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{where}.{name} must be a string")
            kwargs[name] = value
        elif isinstance(default, bool) or isinstance(default, int) and not isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
                raise ConfigError(f"{where}.{name} must be an integer")
            kwargs[name] = int(value)
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{name} must be a number")
            kwargs[name] = float(value)
    return cls(**kwargs)


def _ensure_writable(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc}") from exc


def _dump_json(path: Path, data: dict) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


_PRODUCER = {"potential.json": "calibrate", "spectrum.json": "eigen"}


def _load_json(path: Path) -> dict:
    if not path.exists():
        stage = _PRODUCER.get(path.name, "earlier")
        raise MissingArtifact(f"missing artifact {path}; run the {stage} stage first")
    return json.loads(path.read_text(encoding="utf-8"))


# -- stages ---------------------------------------------------------------------------

def cmd_calibrate(cfg: PipelineConfig, echo=print) -> dict:
    """Tune V_s and h0 to the J0 and V0 targets; writes potential.json."""
    _ensure_writable(cfg.out)
    grid = cfg.grid2d()
    m = cfg.units().mass
    c = cfg.calibration
    target_J0 = 2 * math.pi * c.target_J0_GHz * GHZ_TO_PER_PS
    result = calibrate(target_J0, c.target_V0_meV, grid.y_axis, m,
                       initial=cfg.potential_params(), h0_bracket=(0.0, c.h0_max),
                       J0_rtol=c.J0_rtol, V0_atol=c.V0_atol)
    lv = result.levels
    p = result.params
    report = {
        "V_s": p.V_s, "h0": p.h0, "blend_halfwidth": p.blend_halfwidth,
        "iterations": result.iterations,
        "E_well_y0": lv.E_well_y0, "E_step_y0": lv.E_step_y0, "E_step_y1": lv.E_step_y1,
        "J0_per_ps": lv.J0, "J0_GHz": per_ps_to_ghz(lv.J0 / (2 * math.pi)), "V0": lv.V0,
    }
    _dump_json(cfg.out / "potential.json", report)
    echo(f"calibrated in {result.iterations} iteration(s): V_s = {fmt(p.V_s)} meV, h0 = {fmt(p.h0)}")
    echo(f"  E_well_y0 = {lv.E_well_y0:.6f} meV")
    echo(f"  E_step_y0 = {lv.E_step_y0:.6f} meV")
    echo(f"  E_step_y1 = {lv.E_step_y1:.6f} meV")
    echo(f"  J0 = 2 pi x {report['J0_GHz']:.4f} GHz, V0 = {lv.V0:.6f} meV")
    return report


def _params_for_run(cfg: PipelineConfig) -> PotentialParams:
    path = cfg.out / "potential.json"
    if path.exists():
        d = _load_json(path)
        return PotentialParams(d["V_s"], d["h0"], d["blend_halfwidth"])
    return cfg.potential_params()


EIGEN_COLUMNS = ["n", "E_meV", "E_x_meV", "n_x", "n_y", "overlap", "separable", "residual",
                 "label_error", "file"]


def cmd_eigen(cfg: PipelineConfig, echo=print) -> BoundSpectrum:
    """Solve for every bound state and persist it."""
    _ensure_writable(cfg.out)
    grid = cfg.grid2d()
    m = cfg.units().mass
    params = _params_for_run(cfg)
    e = cfg.eigen
    V = smooth_potential(params, grid)
    states_dir = cfg.out / "states"
    if states_dir.exists():
        shutil.rmtree(states_dir)
    states_dir.mkdir()
    scratch = cfg.out / ".eigenvectors.npy"
    t0 = time.perf_counter()
    try:
        spec = bound_spectrum(grid, V, m, y_slice(params, "well"), y_slice(params, "step"),
                              margin=e.margin_meV, threshold=e.separable_threshold,
                              method=e.method, storage=scratch if grid.size > 200_000 else None,
                              slice_size=e.slice_size)
        rows = []
        for n in range(len(spec)):
            name = f"psi_{n:04d}.f2d"
            write_field(states_dir / name, ScalarField2D(grid, np.asarray(spec.states[n])))
            lb = spec.labels[n]
            rows.append({"n": n, "E_meV": spec.energies[n],
                         "E_x_meV": spec.energies[n] - spec.E_well_y0,
                         "n_x": lb.n_x, "n_y": lb.n_y, "overlap": lb.overlap,
                         "separable": lb.separable, "residual": spec.residuals[n],
                         "label_error": lb.error, "file": f"states/{name}"})
    finally:
        if scratch.exists():
            scratch.unlink()
    write_csv(cfg.out / "eigen_manifest.csv", EIGEN_COLUMNS, rows)
    counts = spec.counts()
    _dump_json(cfg.out / "spectrum.json", {
        "grid": {"n_x": grid.n_x_pts, "n_y": grid.n_y_pts, "x_min": grid.x_min,
                 "y_min": grid.y_min, "h_x": grid.h_x, "h_y": grid.h_y},
        "mass": m, "potential": dataclasses.asdict(params),
        "E_well_y0": spec.E_well_y0, "E_well_y1": spec.E_well_y1,
        "E_step_y0": spec.E_step_y0, "E_step_y1": spec.E_step_y1,
        "J0_per_ps": spec.J0, "V0": spec.V0,
        "count": len(spec), "inertia_count": spec.inertia_count,
        "series_counts": {str(k): v for k, v in sorted(counts.items())},
    })
    echo(f"{len(spec)} bound states below {spec.cutoff:.6f} meV "
         f"({time.perf_counter() - t0:.1f} s)")
    for k, v in sorted(counts.items()):
        echo(f"  n_y = {k}: {v} states")
    flagged = [f"{lb.n_x}/{lb.n_y}" for lb in spec.labels if not lb.separable]
    if flagged:
        echo(f"  poorly separable (n_x/n_y): {', '.join(flagged)}")
    return load_spectrum(cfg.out)


def _opt_int(s: str):
    return int(s) if s != "" else None


def load_spectrum(out) -> BoundSpectrum:
    """Rebuild a BoundSpectrum from the eigen stage's files (states memory-mapped)."""
    out = Path(out)
    meta = _load_json(out / "spectrum.json")
    manifest = out / "eigen_manifest.csv"
    if not manifest.exists():
        raise MissingArtifact(f"missing artifact {manifest}; run the eigen stage first")
    rows = read_csv(manifest)
    paths = [out / r["file"] for r in rows]
    for p in paths:
        if not p.exists():
            raise MissingArtifact(f"missing artifact {p}; rerun the eigen stage")
    stack = FieldStack(paths)
    g = meta["grid"]
    grid = Grid2D.from_counts(g["n_x"], g["n_y"], g["x_min"], g["y_min"], g["h_x"], g["h_y"])
    if len(stack) and stack.grid != grid:
        raise ValueError("state files do not match the grid in spectrum.json")
    labels = [ModeLabel(_opt_int(r["n_x"]), _opt_int(r["n_y"]), float(r["overlap"] or "nan"),
                        r["separable"] == "1", r["label_error"] or None) for r in rows]
    return BoundSpectrum(grid, meta["mass"], np.array([float(r["E_meV"]) for r in rows]), stack,
                         labels, meta["E_well_y0"], meta["E_step_y0"], meta["E_step_y1"],
                         meta["E_well_y1"], np.array([float(r["residual"]) for r in rows]),
                         meta["inertia_count"])


def cmd_speeds(cfg: PipelineConfig, echo=print) -> list[analysis.SpeedRecord]:
    """Eigenstate speed table for the configured n_y series; writes speeds.csv."""
    spec = load_spectrum(cfg.out)
    f = cfg.fit
    records = []
    for n_y in f.series:
        table = analysis.eigenstate_speed_table(spec, n_y, f.x_eval, f.y_eval, (f.x_min, f.x_max),
                                                cfg.workers)
        if not table:
            echo(f"no eigenstates in the n_y = {n_y} series; its table is empty")
        records += table
    write_csv(cfg.out / "speeds.csv", analysis.SPEED_COLUMNS, [r.row() for r in records])
    echo(f"{len(records)} eigenstate speed records")
    return records


PULSE_COLUMNS = ["pulse_index", "x0", "target_E_x_meV", "fidelity", "mean_E_meV", "mean_E_x_meV",
                 "T_ps", "status"]


def cmd_pulses(cfg: PipelineConfig, echo=print) -> list[analysis.SpeedRecord]:
    """Pulse sweep: project, average over the reflection window, fit."""
    spec = load_spectrum(cfg.out)
    params = PotentialParams(**_load_json(cfg.out / "spectrum.json")["potential"])
    pu = cfg.pulses
    specs = dynamics.pulse_series(spec, params, pu.count, pu.spacing_meV, pu.top_gap_meV,
                                  pu.sigma_x, pu.sigma_y, pu.y_c)
    states = dynamics.project_series(specs, spec, pu.min_fidelity)
    windows = []
    for st in states:
        try:
            windows.append(dynamics.default_window(st, spec.mass) if not isinstance(st, Exception)
                           else math.nan)
        except ValueError:
            windows.append(math.nan)
    states = [st if isinstance(st, Exception) or math.isfinite(T)
              else dynamics.ProjectionError("no positive x-energy") for st, T in zip(states, windows)]
    f = cfg.fit
    records = analysis.pulse_speed_table(states, spec, windows, (f.x_min, f.x_max), cfg.workers,
                                         pu.fidelity_flag)
    pdir = cfg.out / "pulses"
    pdir.mkdir(exist_ok=True)
    rows = []
    for j, (sp, st, T) in enumerate(zip(specs, states, windows)):
        ok = not isinstance(st, Exception)
        rows.append({"pulse_index": j, "x0": sp.x0, "target_E_x_meV": sp.target_mean_Ex,
                     "fidelity": st.fidelity if ok else None, "mean_E_meV": st.mean_E if ok else None,
                     "mean_E_x_meV": st.mean_Ex if ok else None, "T_ps": T if ok else None,
                     "status": "ok" if ok else f"failed: {st}"})
        detail = dict(rows[-1], sigma_x=sp.sigma_x, sigma_y=sp.sigma_y, y_c=sp.y_c,
                      warnings=list(st.warnings) if ok else [],
                      coefficients=[fmt(c) for c in st.coefficients] if ok else [])
        _dump_json(pdir / f"pulse_{j:03d}.json",
                   {k: (fmt(v) if isinstance(v, float) else v) for k, v in detail.items()})
    write_csv(pdir / "manifest.csv", PULSE_COLUMNS, rows)
    write_csv(pdir / "speeds.csv", analysis.SPEED_COLUMNS, [r.row() for r in records])
    failed = sum(isinstance(s, Exception) for s in states)
    fids = [s.fidelity for s in states if not isinstance(s, Exception)]
    echo(f"{len(records)} pulse records ({failed} failed)")
    if fids:
        echo(f"  fidelity from {fids[0]:.4f} (highest energy) to {fids[-1]:.4f} (lowest)")
    return records


def cmd_export_fig3(cfg: PipelineConfig, echo=print) -> int:
    """Merge both speed tables, sorted by E_x, into fig3.csv."""
    paths = [cfg.out / "speeds.csv", cfg.out / "pulses" / "speeds.csv"]
    rows = []
    for p in paths:
        if not p.exists():
            raise MissingArtifact(f"missing artifact {p}; run the speeds and pulses stages first")
        rows += read_csv(p)

    def key(r):
        e = float(r["E_x_meV"]) if r["E_x_meV"] else math.inf
        idx = r["n"] or r["pulse_index"]
        return (e, r["source_type"], int(idx))

    rows.sort(key=key)
    path = cfg.out / "fig3.csv"
    write_csv(path, analysis.SPEED_COLUMNS, rows)
    echo(f"{len(rows)} rows written to {path}")
    return len(rows)


STAGES = {
    "calibrate": cmd_calibrate,
    "eigen": cmd_eigen,
    "speeds": cmd_speeds,
    "pulses": cmd_pulses,
    "export-fig3": cmd_export_fig3,
}
