"""PI and MPC platoon speed controllers used as comparison baselines.

The PI controller adjusts each platoon's speed from the average density of
the congested segments between the platoon and a fixed bottleneck; its two
gains can be fitted offline by maximizing the mean speed of a full simulated
run. The MPC controller picks speeds by rolling the nonlinear dynamics over
a prediction horizon and minimizing a weighted objective of total vehicles,
bottleneck outflow and bottleneck density deviation, within box speed
bounds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from platoonctl.dynamics import TrafficModel, segment_index

__all__ = [
    "PiConfig",
    "PiState",
    "pi_error",
    "pi_control",
    "PiController",
    "PiFitResult",
    "pi_gain_fit",
    "MpcConfig",
    "mpc_objective",
    "MpcController",
]


@dataclass(frozen=True)
class PiConfig:
    """Gains and density targets of the PI speed controller.

    ``set_point`` is the desired average density ahead of the platoon and
    ``threshold`` the density above which a segment counts as congested;
    both default to the critical density of the benchmark diagram.
    ``lower_bound`` floors the commanded speed when present.
    """

    kp: float = 0.8
    ki: float = 1.6
    set_point: float = 60.0
    threshold: float = 60.0
    lower_bound: Optional[float] = 60.0


@dataclass
class PiState:
    """Per-platoon memory: previous error and previous realized speed."""

    e_prev: float = 0.0
    vbar_prev: float = 100.0


def pi_error(
    platoon_segment: int,
    densities: np.ndarray,
    set_point: float,
    threshold: float,
    bottleneck_segment: int,
) -> Optional[float]:
    """Set-point error from the congested densities ahead of a platoon.

    Averages densities over segments strictly downstream of the platoon's
    segment up to and including the bottleneck segment, keeping only
    segments above ``threshold``. Returns None when no segment qualifies,
    in which case the caller holds the previous speed.
    """
    lo = platoon_segment + 1
    if lo > bottleneck_segment:
        return None
    window = densities[lo : bottleneck_segment + 1]
    congested = window[window > threshold]
    if congested.size == 0:
        return None
    return float(set_point - congested.mean())


def pi_control(
    error: Optional[float], state: PiState, cfg: PiConfig, v_f: float
) -> float:
    """One PI update for one platoon; mutates ``state`` in place.

    u = vbar_prev + kp (e - e_prev) + ki e, projected into
    [lower_bound or 0, v_f]. An undefined error leaves the previous speed
    and the stored error untouched.
    """
    if error is None:
        u = state.vbar_prev
    else:
        u = state.vbar_prev + cfg.kp * (error - state.e_prev) + cfg.ki * error
        state.e_prev = error
    lo = cfg.lower_bound if cfg.lower_bound is not None else 0.0
    return float(min(max(u, lo), v_f))


class PiController:
    """Roster-level PI controller, stateful per platoon id."""

    def __init__(self, model: TrafficModel, cfg: PiConfig, bottleneck_segment: int):
        if not 0.0 < cfg.set_point <= model.fd.rho_m:
            raise ValueError("set_point must lie in (0, rho_m]")
        if cfg.lower_bound is not None and not 0.0 <= cfg.lower_bound <= model.fd.v_f:
            raise ValueError("lower_bound must lie in [0, v_f]")
        self.model = model
        self.cfg = cfg
        self.bottleneck_segment = bottleneck_segment
        self._states: dict[int, PiState] = {}

    def control(self, view) -> np.ndarray:
        grid = self.model.grid
        v_f = self.model.fd.v_f
        self._states = {
            pid: st for pid, st in self._states.items() if pid in view.ids
        }
        u = np.empty(len(view.ids))
        for j, pid in enumerate(view.ids):
            st = self._states.setdefault(pid, PiState(vbar_prev=v_f))
            st.vbar_prev = float(view.vbar_prev[j])
            seg = segment_index(view.positions[j], grid.seg_length, grid.n_segments)
            e = pi_error(
                seg,
                view.densities,
                self.cfg.set_point,
                self.cfg.threshold,
                self.bottleneck_segment,
            )
            u[j] = pi_control(e, st, self.cfg, v_f)
        return u


@dataclass
class PiFitResult:
    kp: float
    ki: float
    mean_speed: float
    n_evals: int
    seconds: float


# Coarse gain pairs probed before the simplex refinement; the mean-speed
# surface over the gains is multimodal and a simplex started at the
# literature pair alone stalls in a shallow basin.
_SEED_KP = (0.5, 2.0, 3.5, 5.0, 8.0)
_SEED_KI = (0.01, 0.03, 0.08, 0.3, 1.0)


def pi_gain_fit(
    scenario,
    bounds: tuple[float, float] = (-10.0, 10.0),
    init: tuple[float, float] = (0.8, 1.6),
    budget: int = 200,
) -> PiFitResult:
    """Fit PI gains offline by maximizing the mean speed of a full run.

    Evaluates the initial pair, probes a fixed coarse grid of gain pairs,
    then refines from the best point with a derivative-free simplex, all
    within ``budget`` simulated runs. A failed simulation scores minus
    infinity; the returned gains never score worse than the initial pair.
    """
    from platoonctl.runner import run  # deferred: runner imports this module
    from dataclasses import replace as dc_replace

    best: dict = {"gains": init, "ms": -np.inf, "evals": 0}
    t0 = time.perf_counter()

    def negative_ms(gains: np.ndarray) -> float:
        best["evals"] += 1
        pi_cfg = dc_replace(scenario.controller.pi, kp=float(gains[0]), ki=float(gains[1]))
        ctrl = dc_replace(scenario.controller, name="pi", pi=pi_cfg)
        try:
            result = run(dc_replace(scenario, controller=ctrl))
            ms = result.metrics.ms if result.metrics.ms is not None else -np.inf
        except Exception:
            ms = -np.inf
        if ms > best["ms"]:
            best["ms"] = ms
            best["gains"] = (float(gains[0]), float(gains[1]))
        return -ms

    negative_ms(np.asarray(init, float))
    lo, hi = bounds
    for kp in _SEED_KP:
        for ki in _SEED_KI:
            if best["evals"] >= budget:
                break
            negative_ms(np.clip(np.array([kp, ki]), lo, hi))
    remaining = budget - best["evals"]
    if remaining > 2:
        optimize.minimize(
            negative_ms,
            x0=np.asarray(best["gains"], float),
            method="Nelder-Mead",
            bounds=[bounds, bounds],
            options={"maxfev": remaining, "xatol": 1e-4, "fatol": 1e-6},
        )
    kp, ki = best["gains"]
    return PiFitResult(
        kp=kp,
        ki=ki,
        mean_speed=float(best["ms"]),
        n_evals=best["evals"],
        seconds=time.perf_counter() - t0,
    )


@dataclass(frozen=True)
class MpcConfig:
    """Prediction horizon, objective weights and speed bounds for the MPC."""

    horizon: int = 20
    betas: tuple[float, float, float] = (0.1, 0.1, 0.8)
    u_min: float = 60.0
    u_max: float = 100.0
    bottleneck_segment: int = 12
    eval_budget: int = 200
    literal_sign: bool = False

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if any(b < 0.0 for b in self.betas):
            raise ValueError("betas must be >= 0")
        if self.u_min > self.u_max:
            raise ValueError("u_min must not exceed u_max")


def mpc_objective(
    model: TrafficModel,
    rho: np.ndarray,
    pos: np.ndarray,
    active: np.ndarray,
    queue: float,
    k: int,
    u_seq: np.ndarray,
    cfg: MpcConfig,
) -> float:
    """Rolling-horizon cost of a candidate speed sequence (n_platoons, horizon).

    beta1 * dt * L * sum of all densities over the horizon, minus beta2 times
    the bottleneck outflow sum, plus beta3 times the absolute deviation of
    the bottleneck density from the critical density (a penalty keeping the
    bottleneck near its flow-maximizing density; ``literal_sign`` flips the
    beta3 term to a reward instead).

    Density and bottleneck terms cover the current state plus the horizon
    states; the terminal outflow is evaluated at the final state under the
    last speed column.
    """
    grid = model.grid
    b1, b2, b3 = cfg.betas
    bseg = cfg.bottleneck_segment
    record: dict = {}
    rho_end, pos_end, act_end, q_end = model.roll(
        rho, pos, active, u_seq, queue, k, record=record
    )
    rhos = np.asarray(record["rho"])  # (horizon+1, n)
    phis = np.asarray(record["phi"]) if record["phi"] else np.empty((0, grid.n_segments + 1))

    last_u = u_seq[:, -1] if u_seq.size else np.empty(0)
    from platoonctl.dynamics import _fluxes, _max_speeds

    v_max = _max_speeds(pos_end, act_end, last_u, model.fd, grid)
    phi_end, _, _, _ = _fluxes(rho_end, v_max, q_end, k + u_seq.shape[1], model.fd, grid, model.bc)

    total_density = b1 * grid.dt * grid.seg_length * rhos.sum()
    outflow = b2 * (phis[:, bseg + 1].sum() + phi_end[bseg + 1])
    deviation = b3 * np.abs(rhos[:, bseg] - model.fd.rho_c).sum()
    if cfg.literal_sign:
        deviation = -deviation
    return float(total_density - outflow + deviation)


class MpcController:
    """Box-constrained derivative-free MPC over platoon speeds.

    Searches constant-per-platoon speed profiles over the horizon by cyclic
    coordinate descent with a coarse-to-fine line search, warm-started from
    the previous step's solution and an all-free-flow candidate, within a
    fixed rollout budget. Only the first-step speeds are applied.
    """

    def __init__(self, model: TrafficModel, cfg: MpcConfig):
        self.model = model
        self.cfg = cfg
        self._warm: dict[int, float] = {}

    def control(self, view) -> np.ndarray:
        n_u = len(view.ids)
        if n_u == 0:
            return np.empty(0)
        cfg = self.cfg
        lo, hi = cfg.u_min, cfg.u_max
        baseline = min(self.model.fd.v_f, hi)
        active = np.ones(n_u, dtype=bool)
        evals = {"n": 0}

        def score(c: np.ndarray) -> float:
            evals["n"] += 1
            u_seq = np.tile(c[:, None], (1, cfg.horizon))
            return mpc_objective(
                self.model, view.densities, view.positions, active,
                view.queue, view.k, u_seq, cfg,
            )

        warm = np.array(
            [self._warm.get(pid, baseline) for pid in view.ids]
        ).clip(lo, hi)
        vf_cand = np.full(n_u, baseline)

        best_c = vf_cand
        best_val = score(vf_cand)
        if not np.array_equal(warm, vf_cand) and evals["n"] < cfg.eval_budget:
            val = score(warm)
            if val < best_val:
                best_c, best_val = warm, val

        improved = True
        while improved and evals["n"] < cfg.eval_budget:
            improved = False
            for j in range(n_u):
                width = hi - lo
                center = best_c[j]
                for _ in range(3):  # coarse-to-fine line search on coordinate j
                    trial_vals = np.clip(
                        np.array([center - width / 2, center, center + width / 2]),
                        lo, hi,
                    )
                    for s in np.unique(trial_vals):
                        if evals["n"] >= cfg.eval_budget:
                            break
                        if s == best_c[j]:
                            continue
                        cand = best_c.copy()
                        cand[j] = s
                        val = score(cand)
                        if val < best_val - 1e-12:
                            best_c, best_val = cand, val
                            improved = True
                    center = best_c[j]
                    width /= 2
                    if evals["n"] >= cfg.eval_budget:
                        break
                if evals["n"] >= cfg.eval_budget:
                    break

        self._warm = {pid: float(best_c[j]) for j, pid in enumerate(view.ids)}
        return best_c.copy()
