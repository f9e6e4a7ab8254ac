"""Experiment configuration files and result exports.

Config files are plain text, one ``section.key = value`` assignment per
line, ``#`` comments allowed; an empty file yields the full benchmark
defaults. Exports are CSV with a units-bearing header row (floats printed
with 6 significant digits) plus an ASCII portable graymap for the
space-time density field. See the README for the complete key schema.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from platoonctl.baselines import MpcConfig, PiConfig
from platoonctl.dynamics import FundamentalDiagram, Grid
from platoonctl.lqr import LqrConfig, LqrWeights
from platoonctl.runner import Metrics, PlatoonTrace, RunResult
from platoonctl.scenario import ControllerSpec, Scenario, benchmark_scenario

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "ExportBundle",
    "export_density_csv",
    "load_density_csv",
    "export_trajectories_csv",
    "export_metrics_csv",
    "export_heatmap_pgm",
    "write_bundle",
]

FLOAT_FORMAT = "%.6g"


class ConfigError(ValueError):
    """Raised for unparsable or invalid experiment configuration."""


_KNOWN_KEYS = {
    "scenario.variant": str,
    "scenario.n_segments": int,
    "scenario.seg_length": float,
    "scenario.dt_seconds": float,
    "scenario.n_steps": int,
    "scenario.initial_density": float,
    "scenario.s_min": float,
    "fd.rho_c": float,
    "fd.rho_m": float,
    "fd.v_f": float,
    "fd.w_c": float,
    "fd.q_cap": float,
    "fd.alpha": float,
    "controller.name": str,
    "lqr.horizon": int,
    "lqr.iterations": int,
    "lqr.tol": float,
    "lqr.eq_density": float,
    "lqr.eq_speed": float,
    "lqr.w_q": float,
    "lqr.w_r": float,
    "lqr.w_rprime": float,
    "pi.kp": float,
    "pi.ki": float,
    "pi.set_point": float,
    "pi.threshold": float,
    "pi.lower_bound": str,  # number or "none"
    "mpc.horizon": int,
    "mpc.beta1": float,
    "mpc.beta2": float,
    "mpc.beta3": float,
    "mpc.u_min": float,
    "mpc.u_max": float,
    "mpc.eval_budget": int,
    "mpc.literal_sign": bool,
    "sweep.parameter": str,
    "sweep.values": str,  # comma-separated numbers
    "output.dir": str,
}


@dataclass
class ExperimentConfig:
    """A fully validated scenario plus orchestration settings."""

    scenario: Scenario
    sweep_parameter: Optional[str] = None
    sweep_values: Optional[list[float]] = None
    output_dir: str = "out"


def _convert(key: str, raw: str, lineno: int):
    kind = _KNOWN_KEYS[key]
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(
            f"line {lineno}: cannot parse value {raw!r} for key {key!r}"
        ) from exc


def parse_config_text(text: str) -> dict:
    """Parse ``section.key = value`` lines into a flat dict of typed values."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, lineno)
    return values


def apply_overrides(values: dict, overrides: list[str]) -> dict:
    """Fold ``key=value`` strings (from the command line) into parsed values."""
    out = dict(values)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown override key {key!r}")
        out[key] = _convert(key, raw, 0)
    return out


def build_config(values: dict) -> ExperimentConfig:
    """Construct the validated experiment from parsed key/value pairs."""
    fd_kwargs = dict(rho_c=60.0, rho_m=320.0, v_f=100.0, w_c=38.0, q_cap=6000.0, alpha=0.83)
    for name in fd_kwargs:
        key = f"fd.{name}"
        if key in values:
            fd_kwargs[name] = values[key]
    try:
        fd = FundamentalDiagram(**fd_kwargs)
    except ValueError as exc:
        raise ConfigError(f"fundamental diagram: {exc}") from exc

    grid_kwargs = dict(
        n_segments=values.get("scenario.n_segments", 16),
        seg_length=values.get("scenario.seg_length", 0.5),
        dt=values.get("scenario.dt_seconds", 10.0) / 3600.0,
        n_steps=values.get("scenario.n_steps", 720),
    )
    try:
        grid = Grid(**grid_kwargs)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc

    lower_raw = values.get("pi.lower_bound", "60")
    try:
        lower_bound = None if str(lower_raw).lower() == "none" else float(lower_raw)
    except ValueError as exc:
        raise ConfigError(f"pi.lower_bound: expected a number or 'none', got {lower_raw!r}") from exc
    try:
        controller = ControllerSpec(
            name=values.get("controller.name", "none"),
            lqr=LqrConfig(
                horizon=values.get("lqr.horizon", 3),
                max_iters=values.get("lqr.iterations", 1),
                tol=values.get("lqr.tol", 1e-3),
                eq_density=values.get("lqr.eq_density", 59.0),
                eq_speed=values.get("lqr.eq_speed", 99.0),
                weights=LqrWeights(
                    q_weight=values.get("lqr.w_q", 100.0),
                    r_weight=values.get("lqr.w_r", 1.0),
                    rprime_weight=values.get("lqr.w_rprime", 30.0),
                ),
            ),
            pi=PiConfig(
                kp=values.get("pi.kp", 0.8),
                ki=values.get("pi.ki", 1.6),
                set_point=values.get("pi.set_point", 60.0),
                threshold=values.get("pi.threshold", 60.0),
                lower_bound=lower_bound,
            ),
            mpc=MpcConfig(
                horizon=values.get("mpc.horizon", 20),
                betas=(
                    values.get("mpc.beta1", 0.1),
                    values.get("mpc.beta2", 0.1),
                    values.get("mpc.beta3", 0.8),
                ),
                u_min=values.get("mpc.u_min", 60.0),
                u_max=values.get("mpc.u_max", 100.0),
                eval_budget=values.get("mpc.eval_budget", 200),
                literal_sign=values.get("mpc.literal_sign", False),
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"controller: {exc}") from exc

    try:
        scenario = benchmark_scenario(
            variant=values.get("scenario.variant", "bottleneck"),
            controller=controller,
            fd=fd,
            grid=grid,
            initial_density=values.get("scenario.initial_density", 20.0),
            s_min=values.get("scenario.s_min", 10.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sweep_parameter = values.get("sweep.parameter")
    sweep_values = None
    if "sweep.values" in values:
        try:
            sweep_values = [float(v) for v in str(values["sweep.values"]).split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"sweep.values: cannot parse {values['sweep.values']!r}") from exc
    return ExperimentConfig(
        scenario=scenario,
        sweep_parameter=sweep_parameter,
        sweep_values=sweep_values,
        output_dir=values.get("output.dir", "out"),
    )


def load_config(path: str | Path, overrides: Optional[list[str]] = None) -> ExperimentConfig:
    """Read, parse and validate a config file; missing keys take defaults."""
    text = Path(path).read_text()
    values = parse_config_text(text)
    if overrides:
        values = apply_overrides(values, overrides)
    return build_config(values)


@dataclass
class ExportBundle:
    """Paths of the files exported for one run."""

    density_csv: Path
    trajectories_csv: Path
    metrics_csv: Path
    heatmap_pgm: Optional[Path] = None


def export_density_csv(path: str | Path, density_history: np.ndarray) -> Path:
    """Density matrix, rows = time steps, columns = segments [veh/km]."""
    path = Path(path)
    n_seg = density_history.shape[1]
    header = "time_step," + ",".join(
        f"seg_{i + 1}_density_veh_per_km" for i in range(n_seg)
    )
    with path.open("w") as fh:
        fh.write(header + "\n")
        for k, row in enumerate(density_history):
            fh.write(str(k) + "," + ",".join(FLOAT_FORMAT % v for v in row) + "\n")
    return path


def load_density_csv(path: str | Path) -> np.ndarray:
    """Inverse of :func:`export_density_csv` at the stored precision."""
    rows = []
    with Path(path).open() as fh:
        next(fh)  # header
        for line in fh:
            parts = line.strip().split(",")
            rows.append([float(v) for v in parts[1:]])
    return np.asarray(rows)


def export_trajectories_csv(path: str | Path, traces: list[PlatoonTrace]) -> Path:
    """Per-step platoon log: step, id, position and speeds."""
    path = Path(path)
    header = "step,platoon_id,position_km,commanded_km_per_hr,realized_km_per_hr"
    with path.open("w") as fh:
        fh.write(header + "\n")
        for tr in traces:
            for step, p, c, r in zip(tr.steps, tr.positions, tr.commanded, tr.realized):
                fh.write(
                    f"{step},{tr.id},{FLOAT_FORMAT % p},{FLOAT_FORMAT % c},{FLOAT_FORMAT % r}\n"
                )
    return path


def export_metrics_csv(path: str | Path, rows: list[tuple[str, Metrics]]) -> Path:
    """Metric summary; one row per (label, metrics) pair."""
    path = Path(path)
    header = "scenario,ttt_veh_hr,ttd_veh_km,ms_km_per_hr,act_s"
    with path.open("w") as fh:
        fh.write(header + "\n")
        for label, m in rows:
            ms = FLOAT_FORMAT % m.ms if m.ms is not None else ""
            act = FLOAT_FORMAT % m.act if m.act is not None else ""
            fh.write(f"{label},{FLOAT_FORMAT % m.ttt},{FLOAT_FORMAT % m.ttd},{ms},{act}\n")
    return path


def export_heatmap_pgm(
    path: str | Path, density_history: np.ndarray, rho_m: float
) -> Path:
    """Space-time density heatmap as an ASCII portable graymap.

    Image rows are segments (top row = segment 1), columns are time steps;
    gray levels map [0, rho_m] linearly onto 0..255.
    """
    if density_history.size == 0:
        raise ValueError("empty density matrix")
    path = Path(path)
    img = density_history.T  # (n_segments, n_steps)
    levels = np.clip(np.rint(img / rho_m * 255.0), 0, 255).astype(int)
    with path.open("w") as fh:
        fh.write("P2\n")
        fh.write(f"{levels.shape[1]} {levels.shape[0]}\n255\n")
        for row in levels:
            fh.write(" ".join(str(v) for v in row) + "\n")
    return path


def load_heatmap_pgm(path: str | Path) -> np.ndarray:
    """Read back an ASCII graymap written by :func:`export_heatmap_pgm`."""
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError(f"{path} is not an ASCII PGM")
    width, height = int(tokens[1]), int(tokens[2])
    data = np.array([int(t) for t in tokens[4:]])
    return data.reshape(height, width)


def write_bundle(
    out_dir: str | Path,
    result: RunResult,
    rho_m: float,
    prefix: str = "",
    heatmap: bool = True,
) -> ExportBundle:
    """Export one run's density, trajectories, metrics and heatmap files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = prefix or f"{result.scenario_name}_{result.controller_name}"
    bundle = ExportBundle(
        density_csv=export_density_csv(out / f"{name}_density.csv", result.density_history),
        trajectories_csv=export_trajectories_csv(
            out / f"{name}_trajectories.csv", result.traces
        ),
        metrics_csv=export_metrics_csv(
            out / f"{name}_metrics.csv", [(name, result.metrics)]
        ),
    )
    if heatmap:
        bundle.heatmap_pgm = export_heatmap_pgm(
            out / f"{name}_heatmap.pgm", result.density_history, rho_m
        )
    return bundle
