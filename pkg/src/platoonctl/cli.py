"""Command-line entry points: run, sweep, compare and fit-pi.

Examples:

    platoonctl run --controller gn_lqr --out results/
    platoonctl sweep --set sweep.parameter=iterations --set sweep.values=1,2,3
    platoonctl compare --out results/
    platoonctl fit-pi --set pi.lower_bound=none

Every command accepts --config <path> (key = value text file), --out <dir>,
--controller <name> and repeated --set key=value overrides; see the README
for the config schema. Exit status is 0 on success and 1 on any error, with
a diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from platoonctl.baselines import pi_gain_fit
from platoonctl.io import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    build_config,
    export_metrics_csv,
    parse_config_text,
    write_bundle,
)
from platoonctl.runner import Metrics, run, sweep
from platoonctl.scenario import CONTROLLER_NAMES


def _metrics_line(label: str, m: Metrics) -> str:
    ms = f"{m.ms:.1f}" if m.ms is not None else "-"
    act = f"{m.act:.4f}" if m.act is not None else "-"
    return f"{label}: TTT={m.ttt:.1f} veh*hr TTD={m.ttd:.1f} veh*km MS={ms} km/hr ACT={act} s"


def _load(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if args.controller:
        overrides.append(f"controller.name={args.controller}")
    if args.config:
        text = Path(args.config).read_text()
    else:
        text = ""
    values = parse_config_text(text)
    values = apply_overrides(values, overrides)
    config = build_config(values)
    if args.out:
        config.output_dir = args.out
    return config


def cmd_run(args) -> int:
    config = _load(args)
    result = run(config.scenario)
    bundle = write_bundle(config.output_dir, result, config.scenario.fd.rho_m)
    print(_metrics_line(f"{result.scenario_name}/{result.controller_name}", result.metrics))
    print(f"exports written to {Path(config.output_dir).resolve()}")
    return 0


def cmd_sweep(args) -> int:
    config = _load(args)
    if not config.sweep_parameter or not config.sweep_values:
        raise ConfigError("sweep requires sweep.parameter and sweep.values")
    rows = sweep(config.scenario, config.sweep_parameter, config.sweep_values)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{config.sweep_parameter}.csv"
    export_metrics_csv(
        path, [(f"{config.sweep_parameter}={v}", m) for v, m in rows]
    )
    for value, m in rows:
        print(_metrics_line(f"{config.sweep_parameter}={value}", m))
    print(f"sweep table written to {path.resolve()}")
    return 0


def cmd_compare(args) -> int:
    """Rebuild the controller comparison table on the bottleneck scenario.

    PI rows fit their gains offline first; their time column reports the
    offline fit time, while MPC/LQR rows report the average per-invocation
    controller time.
    """
    config = _load(args)
    base = config.scenario
    rows: list[tuple[str, Metrics, Optional[float]]] = []

    result = run(base.with_controller(replace(base.controller, name="none")))
    rows.append(("no_control", result.metrics, None))

    for label, lower in (("pi_lower_bound_60", 60.0), ("pi_no_lower_bound", None)):
        spec = replace(
            base.controller, name="pi", pi=replace(base.controller.pi, lower_bound=lower)
        )
        scenario = base.with_controller(spec)
        fit = pi_gain_fit(scenario)
        fitted = replace(spec, pi=replace(spec.pi, kp=fit.kp, ki=fit.ki))
        result = run(base.with_controller(fitted))
        rows.append((label, result.metrics, fit.seconds))
        print(f"{label}: fitted gains kp={fit.kp:.4f} ki={fit.ki:.4f}")

    for label, u_min in (("mpc_lower_bound_60", 60.0), ("mpc_no_lower_bound", 0.0)):
        spec = replace(
            base.controller, name="mpc", mpc=replace(base.controller.mpc, u_min=u_min)
        )
        result = run(base.with_controller(spec))
        rows.append((label, result.metrics, result.metrics.act))

    spec = replace(base.controller, name="gn_lqr")
    result = run(base.with_controller(spec))
    rows.append(("gn_lqr_n3", result.metrics, result.metrics.act))

    spec = replace(
        base.controller,
        name="gn_lqrp",
        lqr=replace(base.controller.lqr, horizon=50),
    )
    result = run(base.with_controller(spec))
    rows.append(("gn_lqrp_rprime30_n50", result.metrics, result.metrics.act))

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "compare.csv"
    with path.open("w") as fh:
        fh.write("scenario,ttt_veh_hr,ttd_veh_km,ms_km_per_hr,ct_s\n")
        for label, m, ct in rows:
            ms = f"{m.ms:.6g}" if m.ms is not None else ""
            ct_s = f"{ct:.6g}" if ct is not None else ""
            fh.write(f"{label},{m.ttt:.6g},{m.ttd:.6g},{ms},{ct_s}\n")
    print(f"{'scenario':24s} {'TTT':>8s} {'TTD':>9s} {'MS':>6s} {'CT':>9s}")
    for label, m, ct in rows:
        ms = f"{m.ms:.1f}" if m.ms is not None else "-"
        ct_s = f"{ct:.4f}" if ct is not None else "-"
        print(f"{label:24s} {m.ttt:8.1f} {m.ttd:9.1f} {ms:>6s} {ct_s:>9s}")
    print(f"comparison table written to {path.resolve()}")
    return 0


def cmd_fit_pi(args) -> int:
    config = _load(args)
    base = config.scenario
    spec = replace(base.controller, name="pi")
    fit = pi_gain_fit(base.with_controller(spec))
    print(
        f"fitted gains: kp={fit.kp:.4f} ki={fit.ki:.4f} "
        f"(MS={fit.mean_speed:.2f} km/hr, {fit.n_evals} runs, {fit.seconds:.1f} s offline)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="platoonctl",
        description="Macroscopic traffic simulation with platoon speed control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in (
        ("run", cmd_run, "simulate one scenario and export results"),
        ("sweep", cmd_sweep, "run a controller parameter sweep"),
        ("compare", cmd_compare, "rebuild the controller comparison table"),
        ("fit-pi", cmd_fit_pi, "fit PI controller gains offline"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--controller", choices=CONTROLLER_NAMES, help="controller override")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="config override, repeatable (e.g. --set lqr.horizon=5)",
        )
        p.set_defaults(func=fn)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
