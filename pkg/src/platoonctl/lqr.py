"""Iterative LQR speed controllers for platoon moving bottlenecks.

Two receding-horizon controllers sharing one machinery:

* ``GnLqrController`` linearizes the nonlinear traffic dynamics along an
  equilibrium trajectory, solves a finite-horizon time-varying Riccati
  recursion for feedback gains, applies the gains to the deviation state,
  folds the resulting speed corrections back into the equilibrium inputs
  (clamped to [0, v_f]) and repeats up to a fixed iteration budget. Only the
  first-step speeds are applied; the controller runs again next step.

* ``GnLqrpController`` does the same on a state-augmented system whose input
  is the speed *change* per step, penalized by an extra weight. Large
  penalties suppress abrupt speed jumps; the commanded trajectory is
  recovered by cumulative summation starting from the previously applied
  speeds.

The Riccati recursion here seeds the terminal value with the state weight so
that the cost covers the states reached at steps 1..N. Seeding with zero
instead would make a one-step horizon produce identically zero gains and no
control at all, which contradicts the observed effectiveness of short
horizons on the benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from dataclasses import replace as dc_replace
from typing import Optional, Sequence

import numpy as np

from platoonctl.dynamics import TrafficModel
from platoonctl.linearize import (
    EquilibriumPoint,
    LinearizedDynamics,
    assemble,
    jacobian_input,
    jacobian_state,
)

__all__ = [
    "LqrWeights",
    "LqrConfig",
    "GainSchedule",
    "riccati_backward",
    "feedback",
    "augment",
    "GnLqrController",
    "GnLqrpController",
]


@dataclass(frozen=True)
class LqrWeights:
    """Scalar weights expanded to diagonal matrices at controller run time.

    ``q_weight`` weights density deviations (platoon position states carry
    zero weight), ``r_weight`` weights speed deviations, ``rprime_weight``
    weights per-step speed changes (penalty variant only).
    """

    q_weight: float = 100.0
    r_weight: float = 1.0
    rprime_weight: float = 30.0

    def __post_init__(self) -> None:
        if self.q_weight < 0.0:
            raise ValueError("q_weight must be >= 0")
        if self.r_weight <= 0.0:
            raise ValueError("r_weight must be > 0")
        if self.rprime_weight < 0.0:
            raise ValueError("rprime_weight must be >= 0")


@dataclass(frozen=True)
class LqrConfig:
    """Horizon, iteration budget and equilibrium targets for both LQR variants."""

    horizon: int = 3
    max_iters: int = 1
    tol: float = 1e-3
    eq_density: float = 59.0
    eq_speed: float = 99.0
    weights: LqrWeights = field(default_factory=LqrWeights)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0.0:
            raise ValueError("tol must be > 0")


@dataclass
class GainSchedule:
    """Feedback gains K[0..N-1] and value matrices P[0..N] from one solve."""

    k_mats: list[np.ndarray]
    p_mats: list[np.ndarray]


def riccati_backward(
    lin: Sequence[LinearizedDynamics],
    q: np.ndarray,
    r: np.ndarray,
    terminal: Optional[np.ndarray] = None,
) -> GainSchedule:
    """Finite-horizon Riccati recursion over a linear time-varying system.

    With N = len(lin): P[N] = terminal (zero when omitted), then for
    l = N..1

        P[l-1] = Q + A'P[l]A - A'P[l]B (R + B'P[l]B)^-1 B'P[l]A

    and K[k] = (R + B'P[k+1]B)^-1 B'P[k+1]A. Each P is symmetrized after its
    recursion step, which keeps the schedule positive semidefinite given
    Q >= 0 and R > 0.
    """
    n = len(lin)
    n_x = q.shape[0]
    p_mats: list[np.ndarray] = [None] * (n + 1)  # type: ignore[list-item]
    p_mats[n] = np.zeros((n_x, n_x)) if terminal is None else 0.5 * (terminal + terminal.T)
    for l in range(n, 0, -1):
        a = lin[l - 1].a_hat
        b = lin[l - 1].b_hat
        pa = p_mats[l] @ a
        pb = p_mats[l] @ b
        gain_lhs = r + b.T @ pb
        p = q + a.T @ pa - (b.T @ pa).T @ np.linalg.solve(gain_lhs, b.T @ pa)
        p_mats[l - 1] = 0.5 * (p + p.T)
    k_mats = []
    for k in range(n):
        a = lin[k].a_hat
        b = lin[k].b_hat
        pa = p_mats[k + 1] @ a
        pb = p_mats[k + 1] @ b
        k_mats.append(np.linalg.solve(r + b.T @ pb, b.T @ pa))
    return GainSchedule(k_mats=k_mats, p_mats=p_mats)


def feedback(
    k0: np.ndarray,
    x: np.ndarray,
    x_star: np.ndarray,
    u_star: np.ndarray,
    v_f: float,
) -> np.ndarray:
    """State-feedback law u = u* - K (x - x*), clamped to [0, v_f]."""
    u = u_star - k0 @ (np.asarray(x, float) - np.asarray(x_star, float))
    return np.clip(u, 0.0, v_f)


def augment(
    lin: LinearizedDynamics, q: np.ndarray, r: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Augmented matrices for the speed-change-penalty variant.

    The augmented state stacks [x; u_prev] and the augmented input is the
    speed change, giving

        A' = [[A_hat, B_hat], [0, I]],  B' = [[B_hat], [I]],  Q' = diag(Q, R).
    """
    a, b = lin.a_hat, lin.b_hat
    n_x, n_u = b.shape
    a_aug = np.block(
        [[a, b], [np.zeros((n_u, n_x)), np.eye(n_u)]]
    )
    b_aug = np.vstack([b, np.eye(n_u)])
    q_aug = np.zeros((n_x + n_u, n_x + n_u))
    q_aug[:n_x, :n_x] = q
    q_aug[n_x:, n_x:] = r
    return a_aug, b_aug, q_aug


class _LqrBase:
    """Shared forward pass: equilibrium rollout plus per-step linearization."""

    def __init__(self, model: TrafficModel, cfg: LqrConfig, track_psd: bool = False):
        fd = model.fd
        if not 0.0 < cfg.eq_density < fd.rho_c:
            raise ValueError(
                f"eq_density {cfg.eq_density} must lie strictly inside (0, rho_c)"
            )
        if not 0.0 < cfg.eq_speed < fd.v_f:
            raise ValueError(f"eq_speed {cfg.eq_speed} must lie strictly inside (0, v_f)")
        self.model = model
        # The equilibrium trajectory is the desired operating pattern, so it
        # is rolled through the idealized stretch: no time-limited capacity
        # reductions and no live entrance queue. Rolling it through the
        # restricted plant instead lets the reference itself congest over a
        # long horizon, and the regulator then drags the real state into
        # that congested pattern (platoons end up parked at zero speed).
        self.eq_model = TrafficModel(
            fd=model.fd,
            grid=model.grid,
            bc=dc_replace(model.bc, capacity_schedule=None),
            s_min=model.s_min,
        )
        self.cfg = cfg
        self.track_psd = track_psd
        self.min_p_eigenvalues: list[float] = []

    def _weight_matrices(self, n_u: int) -> tuple[np.ndarray, np.ndarray]:
        n = self.model.grid.n_segments
        q = np.diag(
            np.concatenate(
                [np.full(n, self.cfg.weights.q_weight), np.zeros(n_u)]
            )
        )
        r = self.cfg.weights.r_weight * np.eye(n_u)
        return q, r

    def _forward_pass(self, x0, x_star0, u_star, d_u, k0):
        """Linearize along the equilibrium trajectory and propagate deviations.

        The Jacobians differentiate the real dynamics (active capacity
        reductions included) at the equilibrium points, while the
        equilibrium recursion itself runs on the idealized plant. Returns
        (lin list, dx list, eq states list). The platoon roster is held
        fixed over the horizon; platoons that exit inside the lookahead go
        inactive, freeze, and their Jacobian columns vanish.
        """
        model = self.model
        n = model.grid.n_segments
        horizon = u_star.shape[1]
        lin: list[LinearizedDynamics] = []
        dx = [x0 - x_star0]
        eq_states = [x_star0]
        x_eq = x_star0
        active = np.ones(u_star.shape[0], dtype=bool)
        q_eq = 0.0
        for k in range(horizon):
            act_k = active.copy()
            step_k = k0 + k

            def f_eval(xx, uu, _a=act_k, _s=step_k):
                return model.f_arrays(xx[:n], xx[n:], _a, uu, 0.0, _s)

            eq = EquilibriumPoint(x_star=x_eq, u_star=u_star[:, k])
            a_f = jacobian_state(f_eval, eq, n, model.fd)
            b_f = jacobian_input(f_eval, eq, model.fd)
            lin_k = assemble(a_f, b_f, model.grid)
            lin.append(lin_k)
            dx.append(lin_k.a_hat @ dx[k] + lin_k.b_hat @ d_u[:, k])

            rho_eq, pos_eq, _, q_eq, _ = self.eq_model.step_arrays(
                x_eq[:n], x_eq[n:], active, u_star[:, k], q_eq, step_k
            )
            active = active & (pos_eq < model.grid.length)
            x_eq = np.concatenate([rho_eq, pos_eq])
            eq_states.append(x_eq)
        return lin, dx, eq_states

    def _record_psd(self, gains: GainSchedule) -> None:
        if self.track_psd:
            for p in gains.p_mats:
                self.min_p_eigenvalues.append(float(np.linalg.eigvalsh(p)[0]))


class GnLqrController(_LqrBase):
    """Iterative Gauss-Newton LQR over the nonlinear traffic dynamics."""

    def control(self, view) -> np.ndarray:
        n_u = len(view.ids)
        if n_u == 0:
            return np.empty(0)
        cfg = self.cfg
        model = self.model
        v_f = model.fd.v_f
        n = model.grid.n_segments
        horizon = cfg.horizon

        x0 = np.concatenate([view.densities, view.positions])
        # Position entries of the equilibrium carry zero state weight, so they
        # are pinned to the live positions and start with zero deviation.
        x_star0 = np.concatenate([np.full(n, cfg.eq_density), view.positions])
        u_star = np.full((n_u, horizon), cfg.eq_speed)
        d_u = np.zeros((n_u, horizon))
        q, r = self._weight_matrices(n_u)

        for _ in range(cfg.max_iters):
            lin, dx, _ = self._forward_pass(x0, x_star0, u_star, d_u, view.k)
            gains = riccati_backward(lin, q, r, terminal=q)
            self._record_psd(gains)
            for k in range(horizon):
                d_u[:, k] = -gains.k_mats[k] @ dx[k]
            u_star = np.clip(u_star + d_u, 0.0, v_f)
            if np.linalg.norm(d_u) < cfg.tol:
                break
        return u_star[:, 0].copy()


class GnLqrpController(_LqrBase):
    """Gauss-Newton LQR with a penalty on speed changes between steps.

    Expects ``view.u_prev`` to carry the previously applied speeds (the
    free-flow speed for platoons on their first controlled step).
    """

    def control(self, view) -> np.ndarray:
        n_u = len(view.ids)
        if n_u == 0:
            return np.empty(0)
        cfg = self.cfg
        model = self.model
        v_f = model.fd.v_f
        n = model.grid.n_segments
        horizon = cfg.horizon

        x0 = np.concatenate([view.densities, view.positions])
        x_star0 = np.concatenate([np.full(n, cfg.eq_density), view.positions])
        u_o = np.asarray(view.u_prev, dtype=float)
        u_star = np.full((n_u, horizon), cfg.eq_speed)
        d_u = np.zeros((n_u, horizon))
        q, r = self._weight_matrices(n_u)
        r_prime = cfg.weights.rprime_weight * np.eye(n_u)

        for _ in range(cfg.max_iters):
            lin, dx, _ = self._forward_pass(x0, x_star0, u_star, d_u, view.k)
            aug = [augment(lin_k, q, r) for lin_k in lin]
            aug_lin = [LinearizedDynamics(a_hat=a, b_hat=b) for a, b, _ in aug]
            q_aug = aug[0][2]
            try:
                gains = riccati_backward(aug_lin, q_aug, r_prime, terminal=q_aug)
            except np.linalg.LinAlgError as exc:
                raise ValueError(
                    "singular gain system in the speed-change-penalty recursion; "
                    "set rprime_weight > 0"
                ) from exc
            self._record_psd(gains)

            # Augmented deviation: [dx[k]; u[k-1] - u*[k-1]], where the
            # equilibrium input before the window start is taken to be
            # u*[0], so the penalty acts on actual speed changes.
            d_u_prime = np.empty((n_u, horizon))
            for k in range(horizon):
                prev_dev = (u_o - u_star[:, 0]) if k == 0 else d_u[:, k - 1]
                dx_aug = np.concatenate([dx[k], prev_dev])
                d_u_prime[:, k] = -gains.k_mats[k] @ dx_aug

            # Equilibrium speed changes: zero before the window, differences
            # of the equilibrium inputs inside it.
            u_star_prime = np.diff(u_star, axis=1, prepend=u_star[:, :1])
            u_prime = u_star_prime + d_u_prime

            u_abs = np.empty_like(u_prime)
            u_abs[:, 0] = u_o + u_prime[:, 0]
            for k in range(1, horizon):
                u_abs[:, k] = u_abs[:, k - 1] + u_prime[:, k]
            u_new = np.clip(u_abs, 0.0, v_f)
            d_u = u_new - u_star
            u_star = u_new
            if np.linalg.norm(d_u) < cfg.tol:
                break
        return u_star[:, 0].copy()
