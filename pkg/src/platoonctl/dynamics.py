"""First-order macroscopic traffic dynamics with platoon moving bottlenecks.

Implements a Godunov/cell-transmission discretization of the kinematic-wave
(LWR) model on a single highway stretch of ``n_segments`` equal cells, with
two extensions:

* a capacity drop: once a segment's density exceeds the critical density the
  segment's maximum discharge flow decays linearly, scaled by ``alpha``;
* controlled vehicle platoons that block the full roadway at their position,
  capping the maximum speed of traffic in the segment they occupy.

Core update per time step (dt in hours, seg_length in km):

    rho_i[k+1] = rho_i[k] + (dt/L) * (phi_{i-1}[k] - phi_i[k])
    phi_i      = min(D_i, S_{i+1})                  interface flux, veh/hr
    D_i        = min(v_i * rho_i, q_max(rho_i))     demand of segment i
    S_i        = w_c * (rho_m - rho_i)              supply of segment i
    q_max(rho) = q_cap * min(1, 1 + (alpha-1)(rho-rho_c)/(rho_m-rho_c))

where v_i is the free-flow speed unless one or more platoons occupy the
segment, in which case it is the minimum of their commanded speeds.

Platoon positions advance by dt * vbar_j, where the realized speed vbar_j
equals the commanded speed unless the platoon would cross into a congested
segment during the step; see :func:`advance_platoon`.

Units throughout: densities veh/km, speeds km/hr, flows veh/hr, positions and
lengths km, time in hours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

__all__ = [
    "FundamentalDiagram",
    "Grid",
    "Platoon",
    "TrafficState",
    "BoundaryConditions",
    "TrafficModel",
    "q_max",
    "traffic_demand",
    "traffic_supply",
    "segment_max_speed",
    "interface_flux",
    "advance_platoon",
    "step",
    "eval_f",
    "input_scaling_matrix",
]


@dataclass(frozen=True)
class FundamentalDiagram:
    """Triangular fundamental diagram plus capacity-drop coefficient.

    Attributes:
        rho_c: critical density [veh/km]
        rho_m: maximum (jam) density [veh/km]
        v_f: free-flow speed [km/hr]
        w_c: congestion wave speed [km/hr]
        q_cap: base segment capacity [veh/hr]
        alpha: capacity-drop coefficient in [0, 1]; 1 means no drop
    """

    rho_c: float
    rho_m: float
    v_f: float
    w_c: float
    q_cap: float
    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 < self.rho_c < self.rho_m:
            raise ValueError("require 0 < rho_c < rho_m")
        if self.v_f <= 0.0 or self.w_c <= 0.0:
            raise ValueError("free-flow and wave speeds must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.q_cap <= 0.0:
            raise ValueError("q_cap must be positive")


@dataclass(frozen=True)
class Grid:
    """Space/time discretization of the stretch.

    Attributes:
        n_segments: number of equal-length segments
        seg_length: segment length [km]
        dt: time step [hr]
        n_steps: number of simulation steps
    """

    n_segments: int
    seg_length: float
    dt: float
    n_steps: int

    def __post_init__(self) -> None:
        if self.n_segments < 1 or self.n_steps < 1:
            raise ValueError("n_segments and n_steps must be >= 1")
        if self.seg_length <= 0.0 or self.dt <= 0.0:
            raise ValueError("seg_length and dt must be positive")

    @property
    def length(self) -> float:
        """Total stretch length [km]."""
        return self.n_segments * self.seg_length

    def check_cfl(self, v_f: float) -> None:
        """Reject time steps that violate the CFL stability bound dt <= L/v_f."""
        limit = self.seg_length / v_f
        if self.dt > limit + 1e-15:
            raise ValueError(
                f"CFL violation: dt={self.dt * 3600:.3f} s exceeds "
                f"seg_length/v_f={limit * 3600:.3f} s"
            )


@dataclass
class Platoon:
    """A controlled vehicle platoon blocking the full roadway at its position.

    The position is the platoon front, measured from the upstream end [km].
    ``length`` is only used to reason about occupancy; it is assumed much
    smaller than a segment, so a platoon occupies exactly the segment that
    contains its front.
    """

    id: int
    position: float
    length: float = 0.0045
    active: bool = True
    entry_step: int = 0


@dataclass
class TrafficState:
    """Densities, platoons and the upstream point queue at one time index."""

    densities: np.ndarray
    platoons: list[Platoon] = field(default_factory=list)
    upstream_queue: float = 0.0

    def active_platoons(self) -> list[Platoon]:
        return [p for p in self.platoons if p.active]

    def copy(self) -> "TrafficState":
        return TrafficState(
            densities=self.densities.copy(),
            platoons=[replace(p) for p in self.platoons],
            upstream_queue=self.upstream_queue,
        )


@dataclass
class BoundaryConditions:
    """Exogenous boundary data, all indexed by time step.

    Attributes:
        upstream_demand: step -> demand wanting to enter upstream [veh/hr]
        downstream_supply: step -> available supply at the downstream exit [veh/hr]
        capacity_schedule: step -> per-segment effective capacity overriding
            the diagram's q_cap, or None when no override is active. Hosts
            fixed bottlenecks as time-limited capacity reductions.
    """

    upstream_demand: Callable[[int], float]
    downstream_supply: Callable[[int], float]
    capacity_schedule: Optional[Callable[[int], Optional[np.ndarray]]] = None

    def effective_capacity(self, k: int) -> Optional[np.ndarray]:
        if self.capacity_schedule is None:
            return None
        return self.capacity_schedule(k)


def q_max(
    rho: float | np.ndarray,
    fd: FundamentalDiagram,
    cap_override: float | np.ndarray | None = None,
) -> float | np.ndarray:
    """Maximum discharge flow of a segment at density ``rho`` [veh/hr].

    Equals the (possibly overridden) capacity below the critical density and
    decays linearly above it down to alpha * capacity at jam density.

    Raises ValueError if rho lies outside [0, rho_m].
    """
    arr = np.asarray(rho, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > fd.rho_m):
        raise ValueError(f"density {rho} outside [0, {fd.rho_m}]")
    out = _q_max_raw(arr, fd, cap_override)
    return float(out) if np.isscalar(rho) else out


def _q_max_raw(rho, fd: FundamentalDiagram, cap_override=None):
    cap = fd.q_cap if cap_override is None else cap_override
    factor = np.minimum(
        1.0, 1.0 + (fd.alpha - 1.0) * (rho - fd.rho_c) / (fd.rho_m - fd.rho_c)
    )
    return cap * factor


def traffic_demand(
    rho: float | np.ndarray,
    v_max: float | np.ndarray,
    fd: FundamentalDiagram,
    cap_override: float | np.ndarray | None = None,
) -> float | np.ndarray:
    """Sending flow of a segment: min(v_max * rho, q_max(rho)) [veh/hr]."""
    qm = q_max(rho, fd, cap_override)
    out = np.minimum(np.asarray(v_max, dtype=float) * np.asarray(rho, dtype=float), qm)
    return float(out) if np.isscalar(rho) and np.isscalar(v_max) else out


def traffic_supply(rho: float | np.ndarray, fd: FundamentalDiagram) -> float | np.ndarray:
    """Receiving flow of a segment: w_c * (rho_m - rho) [veh/hr]."""
    out = fd.w_c * (fd.rho_m - np.asarray(rho, dtype=float))
    return float(out) if np.isscalar(rho) else out


def segment_index(position: float, seg_length: float, n_segments: int) -> int:
    """0-based segment containing a platoon front.

    A position exactly on a segment boundary belongs to the upstream segment,
    so a platoon halted at a boundary keeps governing the segment it is
    leaving until it actually crosses.
    """
    idx = math.ceil(position / seg_length) - 1
    return min(max(idx, 0), n_segments - 1)


def _max_speeds(
    pos: np.ndarray,
    active: np.ndarray,
    u: np.ndarray,
    fd: FundamentalDiagram,
    grid: Grid,
) -> np.ndarray:
    """Per-segment maximum traffic speed given the platoons present."""
    v = np.full(grid.n_segments, fd.v_f)
    for j in range(len(pos)):
        if active[j]:
            i = segment_index(pos[j], grid.seg_length, grid.n_segments)
            if u[j] < v[i]:
                v[i] = u[j]
    return v


def segment_max_speed(
    i: int, state: TrafficState, u: np.ndarray, fd: FundamentalDiagram, grid: Grid
) -> float:
    """Maximum speed of traffic in segment ``i`` (0-based).

    Returns the minimum commanded speed over platoons occupying the segment,
    or the free-flow speed if none does.
    """
    if not 0 <= i < grid.n_segments:
        raise ValueError(f"segment index {i} out of range")
    act = state.active_platoons()
    pos = np.array([p.position for p in act])
    return float(
        _max_speeds(pos, np.ones(len(act), dtype=bool), np.asarray(u, float), fd, grid)[i]
    )


def _fluxes(
    rho: np.ndarray,
    v_max: np.ndarray,
    queue: float,
    k: int,
    fd: FundamentalDiagram,
    grid: Grid,
    bc: BoundaryConditions,
):
    """All interface fluxes plus the demand/supply/q_max vectors behind them.

    Interface i sits downstream of segment i, so phi[0] is the boundary
    inflow and phi[n_segments] the boundary outflow. Fluxes are clamped to
    be non-negative, which keeps densities inside [0, rho_m] under the CFL
    condition without breaking conservation.
    """
    caps = bc.effective_capacity(k)
    qm = _q_max_raw(rho, fd, caps)
    dem = np.minimum(v_max * rho, qm)
    np.maximum(dem, 0.0, out=dem)
    sup = fd.w_c * (fd.rho_m - rho)
    np.maximum(sup, 0.0, out=sup)

    phi = np.empty(grid.n_segments + 1)
    phi[0] = min(bc.upstream_demand(k) + queue / grid.dt, sup[0])
    np.minimum(dem[:-1], sup[1:], out=phi[1:-1])
    phi[-1] = min(dem[-1], bc.downstream_supply(k))
    np.maximum(phi, 0.0, out=phi)
    return phi, dem, sup, qm


def interface_flux(
    i: int,
    state: TrafficState,
    u: np.ndarray,
    fd: FundamentalDiagram,
    grid: Grid,
    bc: BoundaryConditions,
    k: int,
) -> float:
    """Flux [veh/hr] through interface ``i`` in 0..n_segments at step ``k``."""
    if not 0 <= i <= grid.n_segments:
        raise ValueError(f"interface index {i} out of range")
    act = state.active_platoons()
    pos = np.array([p.position for p in act])
    v_max = _max_speeds(pos, np.ones(len(act), dtype=bool), np.asarray(u, float), fd, grid)
    phi, _, _, _ = _fluxes(state.densities, v_max, state.upstream_queue, k, fd, grid, bc)
    return float(phi[i])


def _advance(
    pos: np.ndarray,
    active: np.ndarray,
    u: np.ndarray,
    dem: np.ndarray,
    sup: np.ndarray,
    qm: np.ndarray,
    k: int,
    fd: FundamentalDiagram,
    grid: Grid,
    bc: BoundaryConditions,
    s_min: float,
):
    """Realized platoon speeds for one step. Returns (new_pos, vbar)."""
    n = grid.n_segments
    new_pos = pos.copy()
    vbar = np.zeros(len(pos))
    for j in range(len(pos)):
        if not active[j]:
            continue
        i = segment_index(pos[j], grid.seg_length, n)
        boundary = (i + 1) * grid.seg_length
        down_sup = sup[i + 1] if i + 1 < n else bc.downstream_supply(k)
        if pos[j] + grid.dt * u[j] <= boundary or dem[i] <= down_sup:
            v = u[j]
        elif i + 1 >= n:
            # The stretch boundary does not gate platoon exit.
            v = u[j]
        elif down_sup >= s_min:
            v = min(u[j], fd.v_f * down_sup / qm[i + 1]) if qm[i + 1] > 0.0 else 0.0
        else:
            v = (boundary - pos[j]) / grid.dt
        vbar[j] = v
        new_pos[j] = pos[j] + grid.dt * v
    return new_pos, vbar


def advance_platoon(
    platoon: Platoon,
    state: TrafficState,
    u: np.ndarray,
    fd: FundamentalDiagram,
    grid: Grid,
    bc: BoundaryConditions,
    k: int,
    s_min: float,
) -> tuple[float, float]:
    """New position and realized speed of one platoon over step ``k``.

    The realized speed equals the commanded speed when the platoon stays in
    its segment or the segment's outflow is unrestricted. When it would cross
    into a flow-restricted segment, it crosses at the supply-limited speed
    min(u, v_f * S_next / q_max_next) if the downstream supply is at least
    ``s_min``, and otherwise halts exactly at the boundary.
    """
    act = state.active_platoons()
    idx = next(n for n, p in enumerate(act) if p.id == platoon.id)
    pos = np.array([p.position for p in act])
    u = np.asarray(u, float)
    v_max = _max_speeds(pos, np.ones(len(act), dtype=bool), u, fd, grid)
    _, dem, sup, qm = _fluxes(state.densities, v_max, state.upstream_queue, k, fd, grid, bc)
    new_pos, vbar = _advance(
        pos, np.ones(len(act), dtype=bool), u, dem, sup, qm, k, fd, grid, bc, s_min
    )
    return float(new_pos[idx]), float(vbar[idx])


def step_arrays(
    rho: np.ndarray,
    pos: np.ndarray,
    active: np.ndarray,
    u: np.ndarray,
    queue: float,
    k: int,
    fd: FundamentalDiagram,
    grid: Grid,
    bc: BoundaryConditions,
    s_min: float,
):
    """One transition of the full dynamics on plain arrays.

    This is the hot path shared by the simulator and all controller
    rollouts. Platoons keep their roster slot; exiting platoons are flagged
    inactive by the caller based on the returned positions.

    Returns (rho_next, pos_next, vbar, queue_next, phi).
    """
    v_max = _max_speeds(pos, active, u, fd, grid)
    phi, dem, sup, qm = _fluxes(rho, v_max, queue, k, fd, grid, bc)
    rho_next = rho + (grid.dt / grid.seg_length) * (phi[:-1] - phi[1:])
    pos_next, vbar = _advance(pos, active, u, dem, sup, qm, k, fd, grid, bc, s_min)
    queue_next = max(queue + grid.dt * (bc.upstream_demand(k) - phi[0]), 0.0)
    return rho_next, pos_next, vbar, queue_next, phi


def step(
    state: TrafficState,
    u: np.ndarray,
    fd: FundamentalDiagram,
    grid: Grid,
    bc: BoundaryConditions,
    k: int,
    s_min: float,
) -> TrafficState:
    """Advance the traffic state by one time step.

    ``u`` holds one commanded speed per *active* platoon, in roster order.
    Platoons whose new position reaches the end of the stretch are
    deactivated (their position is kept, frozen).
    """
    act = state.active_platoons()
    u = np.asarray(u, dtype=float)
    if len(u) != len(act):
        raise ValueError(f"got {len(u)} speeds for {len(act)} active platoons")
    pos = np.array([p.position for p in act])
    mask = np.ones(len(act), dtype=bool)
    rho2, pos2, _, queue2, _ = step_arrays(
        state.densities, pos, mask, u, state.upstream_queue, k, fd, grid, bc, s_min
    )
    new_platoons: list[Platoon] = []
    it = iter(range(len(act)))
    for p in state.platoons:
        if not p.active:
            new_platoons.append(replace(p))
            continue
        j = next(it)
        stays = pos2[j] < grid.length
        new_platoons.append(replace(p, position=float(pos2[j]), active=bool(stays)))
    return TrafficState(densities=rho2, platoons=new_platoons, upstream_queue=queue2)


def eval_f(
    state: TrafficState,
    u: np.ndarray,
    fd: FundamentalDiagram,
    grid: Grid,
    bc: BoundaryConditions,
    k: int,
    s_min: float,
) -> np.ndarray:
    """Nonlinear transition vector f(x, u): flux differences then platoon speeds.

    The state vector x stacks segment densities and active platoon positions;
    one step of the dynamics equals x + G f(x, u) with G given by
    :func:`input_scaling_matrix`.
    """
    act = state.active_platoons()
    u = np.asarray(u, dtype=float)
    pos = np.array([p.position for p in act])
    mask = np.ones(len(act), dtype=bool)
    v_max = _max_speeds(pos, mask, u, fd, grid)
    phi, dem, sup, qm = _fluxes(state.densities, v_max, state.upstream_queue, k, fd, grid, bc)
    _, vbar = _advance(pos, mask, u, dem, sup, qm, k, fd, grid, bc, s_min)
    return np.concatenate([phi[:-1] - phi[1:], vbar])


def input_scaling_matrix(grid: Grid, n_platoons: int) -> np.ndarray:
    """Diagonal scaling G = dt * diag(I/L on density rows, I on position rows)."""
    d = np.concatenate(
        [
            np.full(grid.n_segments, grid.dt / grid.seg_length),
            np.full(n_platoons, grid.dt),
        ]
    )
    return np.diag(d)


@dataclass
class TrafficModel:
    """Bundle of diagram, grid and boundary data plus rollout helpers.

    Controllers use this as their model of the plant: the same transition
    function the simulator integrates, exposed over fixed-roster arrays so
    the state dimension stays constant over a lookahead horizon even when
    platoons exit (their position freezes and their influence vanishes).
    """

    fd: FundamentalDiagram
    grid: Grid
    bc: BoundaryConditions
    s_min: float

    def step_arrays(self, rho, pos, active, u, queue, k):
        return step_arrays(
            rho, pos, active, u, queue, k, self.fd, self.grid, self.bc, self.s_min
        )

    def roll(self, rho, pos, active, u_seq, queue, k0, record=None):
        """Roll the dynamics ``u_seq.shape[1]`` steps from (rho, pos, queue).

        ``u_seq`` is (n_platoons, n_steps). Exited platoons go inactive and
        freeze. When ``record`` is a dict it is filled with per-step arrays
        'rho' (n_steps+1, n), 'phi' (n_steps, n+1) and 'vbar'.
        """
        rho = rho.copy()
        pos = pos.copy()
        active = active.copy()
        n_steps = u_seq.shape[1]
        if record is not None:
            record["rho"] = [rho.copy()]
            record["phi"] = []
            record["vbar"] = []
        for s in range(n_steps):
            rho, pos, vbar, queue, phi = self.step_arrays(
                rho, pos, active, u_seq[:, s], queue, k0 + s
            )
            active = active & (pos < self.grid.length)
            if record is not None:
                record["rho"].append(rho.copy())
                record["phi"].append(phi)
                record["vbar"].append(vbar)
        return rho, pos, active, queue

    def f_arrays(self, rho, pos, active, u, queue, k) -> np.ndarray:
        """Fixed-roster f(x, u); inactive platoons contribute zero speed rows."""
        v_max = _max_speeds(pos, active, u, self.fd, self.grid)
        phi, dem, sup, qm = _fluxes(rho, v_max, queue, k, self.fd, self.grid, self.bc)
        _, vbar = _advance(
            pos, active, u, dem, sup, qm, k, self.fd, self.grid, self.bc, self.s_min
        )
        return np.concatenate([phi[:-1] - phi[1:], vbar])
