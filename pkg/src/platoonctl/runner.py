"""Closed-loop simulation driver and evaluation metrics.

Runs a scenario step by step: inject scheduled platoons at the upstream end,
ask the configured controller for speeds (free flow when uncontrolled),
advance the dynamics, record histories, and summarize with

    TTT = dt * L * sum_k sum_i rho_i[k]        total travel time  [veh hr]
    TTD = dt * L * sum_k sum_i phi_i[k]        total travel distance [veh km]
    MS  = TTD / TTT                            mean speed [km/hr]
    ACT = mean controller wall time per invocation [s]

where phi_i ranges over the segment outflows (interfaces 1..n_segments) and
both sums cover time indices 1..n_steps: densities are the post-step states
and fluxes are evaluated at those same states (the flux history carries one
row per state 0..n_steps, so its first row drives the first transition and
its last row is a terminal evaluation).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from platoonctl.baselines import MpcController, PiController
from platoonctl.dynamics import TrafficModel
from platoonctl.lqr import GnLqrController, GnLqrpController
from platoonctl.scenario import Scenario

__all__ = [
    "Metrics",
    "PlatoonTrace",
    "RunResult",
    "StepView",
    "make_controller",
    "compute_metrics",
    "run",
    "sweep",
    "SWEEP_PARAMETERS",
]


@dataclass
class Metrics:
    """Aggregate run metrics; ``ms``/``act`` are None when undefined."""

    ttt: float
    ttd: float
    ms: Optional[float]
    act: Optional[float]


@dataclass
class PlatoonTrace:
    """Per-step record of one platoon while it was on the stretch."""

    id: int
    entry_step: int
    steps: list[int] = field(default_factory=list)
    positions: list[float] = field(default_factory=list)
    commanded: list[float] = field(default_factory=list)
    realized: list[float] = field(default_factory=list)


@dataclass
class RunResult:
    """Histories and metrics of one closed-loop run."""

    density_history: np.ndarray  # (n_steps, n_segments), post-step states
    flux_history: np.ndarray  # (n_steps + 1, n_segments + 1), per state
    queue_history: np.ndarray  # (n_steps,)
    traces: list[PlatoonTrace]
    metrics: Metrics
    controller_timings: list[float]
    scenario_name: str
    controller_name: str
    min_p_eigenvalue: Optional[float] = None  # set when run with track_psd


@dataclass
class StepView:
    """Read-only view of the live state handed to controllers each step."""

    k: int
    densities: np.ndarray
    ids: tuple[int, ...]
    positions: np.ndarray
    queue: float
    u_prev: np.ndarray
    vbar_prev: np.ndarray


def make_controller(scenario: Scenario, model: TrafficModel, track_psd: bool = False):
    """Instantiate the controller selected by the scenario, or None."""
    spec = scenario.controller
    if spec.name == "none":
        return None
    if spec.name == "gn_lqr":
        return GnLqrController(model, spec.lqr, track_psd=track_psd)
    if spec.name == "gn_lqrp":
        return GnLqrpController(model, spec.lqr, track_psd=track_psd)
    if spec.name == "pi":
        bseg = scenario.bottleneck_segment
        if bseg is None:
            bseg = scenario.grid.n_segments - 1
        return PiController(model, spec.pi, bseg)
    if spec.name == "mpc":
        mpc_cfg = spec.mpc
        if scenario.bottleneck_segment is not None:
            mpc_cfg = replace(mpc_cfg, bottleneck_segment=scenario.bottleneck_segment)
        return MpcController(model, mpc_cfg)
    raise ValueError(f"unknown controller {spec.name!r}")


def compute_metrics(
    density_history: np.ndarray,
    flux_history: np.ndarray,
    grid,
    timings: Optional[list[float]] = None,
) -> Metrics:
    """Metrics from complete histories; fluxes counted over segment outflows.

    When the flux history carries the extra per-state row (n_steps + 1 rows)
    the sum starts at time index 1, aligning distance with the recorded
    post-step densities; a plain transition history is summed as is.
    """
    cell = grid.dt * grid.seg_length
    ttt = cell * float(density_history.sum())
    fluxes = flux_history[1:] if flux_history.shape[0] == density_history.shape[0] + 1 else flux_history
    ttd = cell * float(fluxes[:, 1:].sum())
    ms = ttd / ttt if ttt > 0.0 else None
    act = float(np.mean(timings)) if timings else None
    return Metrics(ttt=ttt, ttd=ttd, ms=ms, act=act)


def run(scenario: Scenario, track_psd: bool = False) -> RunResult:
    """Simulate the scenario over its full horizon and compute metrics."""
    grid = scenario.grid
    fd = scenario.fd
    model = TrafficModel(fd=fd, grid=grid, bc=scenario.bc, s_min=scenario.s_min)
    controller = make_controller(scenario, model, track_psd=track_psd)

    rho = np.full(grid.n_segments, float(scenario.initial_density))
    queue = 0.0
    ids: list[int] = []
    pos = np.empty(0)
    u_prev = np.empty(0)
    vbar_prev = np.empty(0)
    entry_iter = iter(enumerate(scenario.platoon_schedule))
    pending = next(entry_iter, None)

    traces: dict[int, PlatoonTrace] = {}
    density_history = np.empty((grid.n_steps, grid.n_segments))
    flux_history = np.empty((grid.n_steps + 1, grid.n_segments + 1))
    queue_history = np.empty(grid.n_steps)
    timings: list[float] = []

    for k in range(grid.n_steps):
        while pending is not None and pending[1] == k:
            pid = pending[0]
            ids.append(pid)
            pos = np.append(pos, 0.0)
            u_prev = np.append(u_prev, fd.v_f)
            vbar_prev = np.append(vbar_prev, fd.v_f)
            traces[pid] = PlatoonTrace(id=pid, entry_step=k)
            pending = next(entry_iter, None)

        if controller is not None and ids:
            view = StepView(
                k=k,
                densities=rho,
                ids=tuple(ids),
                positions=pos,
                queue=queue,
                u_prev=u_prev,
                vbar_prev=vbar_prev,
            )
            t0 = time.perf_counter()
            try:
                u = np.asarray(controller.control(view), dtype=float)
            except Exception as exc:
                raise RuntimeError(f"controller failed at step {k}: {exc}") from exc
            timings.append(time.perf_counter() - t0)
            if len(u) != len(ids):
                raise RuntimeError(
                    f"controller returned {len(u)} speeds for {len(ids)} platoons "
                    f"at step {k}"
                )
        else:
            u = np.full(len(ids), fd.v_f)

        active = np.ones(len(ids), dtype=bool)
        rho2, pos2, vbar, queue2, phi = model.step_arrays(rho, pos, active, u, queue, k)

        for j, pid in enumerate(ids):
            tr = traces[pid]
            tr.steps.append(k)
            tr.positions.append(float(pos[j]))
            tr.commanded.append(float(u[j]))
            tr.realized.append(float(vbar[j]))

        keep = pos2 < grid.length
        ids = [pid for j, pid in enumerate(ids) if keep[j]]
        pos = pos2[keep]
        u_prev = u[keep]
        vbar_prev = vbar[keep]
        rho = rho2
        queue = queue2

        density_history[k] = rho
        flux_history[k] = phi
        queue_history[k] = queue

    # Terminal flux evaluation at the final state under the last commands.
    from platoonctl.dynamics import _fluxes, _max_speeds

    v_max = _max_speeds(pos, np.ones(len(ids), dtype=bool), u_prev, fd, grid)
    phi_end, _, _, _ = _fluxes(rho, v_max, queue, grid.n_steps, fd, grid, scenario.bc)
    flux_history[grid.n_steps] = phi_end

    metrics = compute_metrics(density_history, flux_history, grid, timings)
    eigenvalues = getattr(controller, "min_p_eigenvalues", None)
    return RunResult(
        density_history=density_history,
        flux_history=flux_history,
        queue_history=queue_history,
        traces=[traces[pid] for pid in sorted(traces)],
        metrics=metrics,
        controller_timings=timings,
        scenario_name=scenario.name,
        controller_name=scenario.controller.name,
        min_p_eigenvalue=min(eigenvalues) if eigenvalues else None,
    )


SWEEP_PARAMETERS = ("horizon", "iterations", "w_Q", "w_R", "w_Rprime")


def sweep(scenario: Scenario, parameter: str, values) -> list[tuple[float, Metrics]]:
    """One full run per parameter value; returns (value, metrics) rows in order."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; use {SWEEP_PARAMETERS}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for value in values:
        lqr = scenario.controller.lqr
        weights = lqr.weights
        if parameter == "horizon":
            lqr = replace(lqr, horizon=int(value))
        elif parameter == "iterations":
            lqr = replace(lqr, max_iters=int(value))
        elif parameter == "w_Q":
            lqr = replace(lqr, weights=replace(weights, q_weight=float(value)))
        elif parameter == "w_R":
            lqr = replace(lqr, weights=replace(weights, r_weight=float(value)))
        elif parameter == "w_Rprime":
            lqr = replace(lqr, weights=replace(weights, rprime_weight=float(value)))
        spec = replace(scenario.controller, lqr=lqr)
        result = run(scenario.with_controller(spec))
        rows.append((value, result.metrics))
    return rows
