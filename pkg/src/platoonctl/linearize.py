"""Numerical linearization of the traffic dynamics around an equilibrium.

Jacobians of the transition vector f(x, u) are taken by central finite
differences, one coordinate at a time. The dynamics are built from nested
minimum functions, so f is piecewise smooth; on a smooth branch the central
difference of a (piecewise) linear branch is exact up to rounding, and at a
branch switch inside the stencil it returns the two-sided average, which is
accepted as-is.

The perturbation steps are fixed per coordinate kind. They are chosen
smaller than the 1-unit margin the benchmark equilibrium keeps from the
kinks of the diagram (critical density, free-flow speed), so the stencil
normally stays on one branch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from platoonctl.dynamics import FundamentalDiagram, Grid

__all__ = [
    "EquilibriumPoint",
    "LinearizedDynamics",
    "DENSITY_STEP",
    "POSITION_STEP",
    "SPEED_STEP",
    "jacobian_state",
    "jacobian_input",
    "assemble",
]

# Central-difference half steps: veh/km, km, km/hr.
DENSITY_STEP = 0.5
POSITION_STEP = 0.0005
SPEED_STEP = 0.5

FEvaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class EquilibriumPoint:
    """State/input pair the dynamics are linearized around.

    ``x_star`` stacks segment densities and platoon positions; ``u_star``
    holds one speed per platoon. Densities must sit strictly inside
    (0, rho_m) and speeds strictly inside (0, v_f) so that perturbed points
    stay in the model domain.
    """

    x_star: np.ndarray
    u_star: np.ndarray


@dataclass
class LinearizedDynamics:
    """One step of the linear time-varying model: dx[k+1] = a_hat dx + b_hat du."""

    a_hat: np.ndarray
    b_hat: np.ndarray


def _stencil(value: float, h: float, lo: float, hi: float) -> tuple[float, float]:
    """Offsets (h_plus, h_minus) of a difference stencil inside [lo, hi].

    Tries the centered stencil, then once with the step shrunk by 10x; when
    the value sits on a domain edge (iterated controllers clamp equilibrium
    speeds to exactly 0 or v_f) it degrades to a one-sided difference, which
    is still exact on the piecewise-linear branches of the dynamics.
    """
    if lo <= value - h and value + h <= hi:
        return h, h
    small = h / 10.0
    if lo <= value - small and value + small <= hi:
        return small, small
    hp = min(h, hi - value)
    hm = min(h, value - lo)
    if hp + hm <= 0.0:
        raise ValueError(
            f"domain [{lo}, {hi}] too narrow around {value} for a difference stencil"
        )
    return max(hp, 0.0), max(hm, 0.0)


def jacobian_state(
    f_eval: FEvaluator,
    eq: EquilibriumPoint,
    n_segments: int,
    fd: FundamentalDiagram,
) -> np.ndarray:
    """Derivative matrix of f w.r.t. the state, column by column.

    Density coordinates are perturbed by +-DENSITY_STEP (shrunk once near the
    domain edge), position coordinates by +-POSITION_STEP. Positions are not
    domain-bounded: a platoon nudged past the end of the stretch simply stops
    influencing the flow.
    """
    x0 = np.asarray(eq.x_star, dtype=float)
    u0 = np.asarray(eq.u_star, dtype=float)
    n_x = len(x0)
    a_f = np.empty((n_x, n_x))
    for m in range(n_x):
        if m < n_segments:
            hp, hm = _stencil(x0[m], DENSITY_STEP, 0.0, fd.rho_m)
        else:
            hp = hm = POSITION_STEP
        xp = x0.copy()
        xm = x0.copy()
        xp[m] += hp
        xm[m] -= hm
        a_f[:, m] = (f_eval(xp, u0) - f_eval(xm, u0)) / (hp + hm)
    return a_f


def jacobian_input(
    f_eval: FEvaluator,
    eq: EquilibriumPoint,
    fd: FundamentalDiagram,
) -> np.ndarray:
    """Derivative matrix of f w.r.t. the input speeds."""
    x0 = np.asarray(eq.x_star, dtype=float)
    u0 = np.asarray(eq.u_star, dtype=float)
    n_u = len(u0)
    cols = []
    for m in range(n_u):
        hp, hm = _stencil(u0[m], SPEED_STEP, 0.0, fd.v_f)
        up = u0.copy()
        um = u0.copy()
        up[m] += hp
        um[m] -= hm
        cols.append((f_eval(x0, up) - f_eval(x0, um)) / (hp + hm))
    return np.column_stack(cols) if cols else np.empty((len(x0), 0))


def assemble(a_f: np.ndarray, b_f: np.ndarray, grid: Grid) -> LinearizedDynamics:
    """Discrete-time matrices A_hat = I + G A_f and B_hat = G B_f.

    G is the diagonal step scaling: dt/seg_length on density rows, dt on
    position rows.
    """
    n_x = a_f.shape[0]
    if a_f.shape != (n_x, n_x) or b_f.shape[0] != n_x:
        raise ValueError(f"dimension mismatch: A_f {a_f.shape}, B_f {b_f.shape}")
    if n_x < grid.n_segments:
        raise ValueError("state dimension smaller than segment count")
    g = np.concatenate(
        [
            np.full(grid.n_segments, grid.dt / grid.seg_length),
            np.full(n_x - grid.n_segments, grid.dt),
        ]
    )
    a_hat = np.eye(n_x) + g[:, None] * a_f
    b_hat = g[:, None] * b_f
    return LinearizedDynamics(a_hat=a_hat, b_hat=b_hat)
