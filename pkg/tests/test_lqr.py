"""Riccati recursion, feedback law, augmentation and the LQR controllers."""

import numpy as np
import pytest

from platoonctl.dynamics import BoundaryConditions, FundamentalDiagram, Grid, TrafficModel
from platoonctl.linearize import LinearizedDynamics
from platoonctl.lqr import (
    GnLqrController,
    GnLqrpController,
    LqrConfig,
    LqrWeights,
    augment,
    feedback,
    riccati_backward,
)
from platoonctl.runner import StepView

FD = FundamentalDiagram(rho_c=60.0, rho_m=320.0, v_f=100.0, w_c=38.0, q_cap=6000.0, alpha=0.83)
GRID = Grid(n_segments=16, seg_length=0.5, dt=10.0 / 3600.0, n_steps=720)


def scalar_lin(a, b, n):
    return [LinearizedDynamics(a_hat=np.array([[a]]), b_hat=np.array([[b]])) for _ in range(n)]


def make_model(demand=5000.0):
    bc = BoundaryConditions(upstream_demand=lambda k: demand, downstream_supply=lambda k: FD.q_cap)
    return TrafficModel(fd=FD, grid=GRID, bc=bc, s_min=10.0)


class TestRiccati:
    def test_one_step_zero_terminal_gives_zero_gain(self):
        gains = riccati_backward(scalar_lin(1.0, 1.0, 1), np.eye(1), np.eye(1))
        assert gains.k_mats[0][0, 0] == 0.0
        np.testing.assert_array_equal(gains.p_mats[1], 0.0)

    def test_two_step_scalar_recursion_by_hand(self):
        gains = riccati_backward(scalar_lin(1.0, 1.0, 2), np.eye(1), np.eye(1))
        assert gains.p_mats[1][0, 0] == pytest.approx(1.0)
        assert gains.k_mats[0][0, 0] == pytest.approx(0.5)

    def test_zero_input_matrix_gives_zero_gains(self):
        gains = riccati_backward(scalar_lin(0.9, 0.0, 5), np.eye(1), np.eye(1))
        for k_mat in gains.k_mats:
            np.testing.assert_array_equal(k_mat, 0.0)

    def test_p_matrices_positive_semidefinite(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            n_x, n_u, horizon = 4, 2, 6
            lin = [
                LinearizedDynamics(
                    a_hat=rng.normal(size=(n_x, n_x)) * 0.6,
                    b_hat=rng.normal(size=(n_x, n_u)),
                )
                for _ in range(horizon)
            ]
            c = rng.normal(size=(n_x, n_x))
            q = c @ c.T
            r = np.eye(n_u) * rng.uniform(0.1, 2.0)
            gains = riccati_backward(lin, q, r, terminal=q)
            for p in gains.p_mats:
                assert np.linalg.eigvalsh(p)[0] >= -1e-8
                np.testing.assert_allclose(p, p.T)

    def test_singular_gain_system_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            riccati_backward(scalar_lin(1.0, 1.0, 2), np.eye(1), np.zeros((1, 1)))


def brute_force_open_loop(a, b, q, r, terminal, dx0, horizon):
    """Exact unconstrained minimizer of the quadratic cost over input sequences.

    Cost: sum_{k=0}^{horizon-1} (dx_k' Q dx_k + du_k' R du_k) + dx_N' P_N dx_N,
    with dx_{k+1} = A dx_k + B du_k. Independent of the Riccati machinery:
    builds the lifted quadratic in the stacked inputs and solves its normal
    equations directly.
    """
    n_x, n_u = b.shape
    n_var = horizon * n_u
    # dx_k = A^k dx0 + F_k @ dU with F_k assembled column-block-wise
    powers = [np.eye(n_x)]
    for _ in range(horizon):
        powers.append(a @ powers[-1])
    f_blocks = []
    for k in range(horizon + 1):
        f_k = np.zeros((n_x, n_var))
        for j in range(min(k, horizon)):
            f_k[:, j * n_u : (j + 1) * n_u] = powers[k - 1 - j] @ b
        f_blocks.append(f_k)
    h = np.kron(np.eye(horizon), r).astype(float)
    g = np.zeros(n_var)
    for k in range(horizon + 1):
        w = q if k < horizon else terminal
        bias = powers[k] @ dx0
        h += f_blocks[k].T @ w @ f_blocks[k]
        g += f_blocks[k].T @ w @ bias
    return np.linalg.solve(h, -g).reshape(horizon, n_u)


class TestFiniteHorizonOptimality:
    def setup_method(self):
        self.a = np.array([[1.0, 0.3], [-0.2, 0.9]])
        self.b = np.array([[0.5], [1.0]])
        self.q = np.diag([2.0, 0.5])
        self.r = np.array([[1.0]])
        self.dx0 = np.array([1.0, -2.0])
        self.horizon = 3

    def closed_loop(self, terminal):
        lin = [LinearizedDynamics(a_hat=self.a, b_hat=self.b) for _ in range(self.horizon)]
        gains = riccati_backward(lin, self.q, self.r, terminal=terminal)
        dx = self.dx0.copy()
        us = []
        for k in range(self.horizon):
            du = -gains.k_mats[k] @ dx
            us.append(du)
            dx = self.a @ dx + self.b @ du
        return np.array(us)

    def test_gains_match_brute_force_with_terminal_weight(self):
        expected = brute_force_open_loop(
            self.a, self.b, self.q, self.r, self.q, self.dx0, self.horizon
        )
        np.testing.assert_allclose(self.closed_loop(self.q), expected, atol=1e-8)

    def test_gains_match_brute_force_with_zero_terminal(self):
        expected = brute_force_open_loop(
            self.a, self.b, self.q, self.r, np.zeros((2, 2)), self.dx0, self.horizon
        )
        np.testing.assert_allclose(self.closed_loop(None), expected, atol=1e-8)


class TestFeedback:
    def test_zero_gain_returns_equilibrium_input(self):
        u = feedback(np.zeros((2, 3)), np.ones(3), np.zeros(3), np.array([40.0, 70.0]), 100.0)
        np.testing.assert_array_equal(u, [40.0, 70.0])

    def test_at_equilibrium_returns_equilibrium_input(self):
        k0 = np.arange(6, dtype=float).reshape(2, 3)
        x = np.array([1.0, 2.0, 3.0])
        u = feedback(k0, x, x, np.array([55.0, 66.0]), 100.0)
        np.testing.assert_array_equal(u, [55.0, 66.0])

    def test_scalar_arithmetic(self):
        u = feedback(np.array([[2.0]]), np.array([61.0]), np.array([59.0]), np.array([99.0]), 100.0)
        assert u[0] == pytest.approx(95.0)

    def test_clamped_to_speed_box(self):
        u = feedback(np.array([[50.0]]), np.array([61.0]), np.array([59.0]), np.array([99.0]), 100.0)
        assert u[0] == 0.0
        u = feedback(np.array([[-50.0]]), np.array([61.0]), np.array([59.0]), np.array([99.0]), 100.0)
        assert u[0] == 100.0


class TestAugment:
    def test_scalar_blocks(self):
        lin = LinearizedDynamics(a_hat=np.array([[1.0]]), b_hat=np.array([[1.0]]))
        a_aug, b_aug, q_aug = augment(lin, np.array([[3.0]]), np.array([[4.0]]))
        np.testing.assert_array_equal(a_aug, [[1.0, 1.0], [0.0, 1.0]])
        np.testing.assert_array_equal(b_aug, [[1.0], [1.0]])
        np.testing.assert_array_equal(q_aug, [[3.0, 0.0], [0.0, 4.0]])

    def test_zero_input_matrix_gives_block_diagonal(self):
        lin = LinearizedDynamics(a_hat=np.eye(3) * 0.5, b_hat=np.zeros((3, 2)))
        a_aug, _, _ = augment(lin, np.eye(3), np.eye(2))
        np.testing.assert_array_equal(a_aug[:3, 3:], 0.0)
        np.testing.assert_array_equal(a_aug[3:, :3], 0.0)

    def test_stage_cost_identity_exact(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            n_x, n_u = 5, 2
            q = np.diag(rng.uniform(0.0, 10.0, n_x))
            r = np.diag(rng.uniform(0.1, 10.0, n_u))
            r_prime = np.diag(rng.uniform(0.0, 10.0, n_u))
            lin = LinearizedDynamics(
                a_hat=rng.normal(size=(n_x, n_x)), b_hat=rng.normal(size=(n_x, n_u))
            )
            _, _, q_aug = augment(lin, q, r)
            x = rng.normal(size=n_x)
            u_prev = rng.normal(size=n_u)
            du = rng.normal(size=n_u)
            x_aug = np.concatenate([x, u_prev])
            lhs = x_aug @ q_aug @ x_aug + du @ r_prime @ du
            rhs = x @ q @ x + u_prev @ r @ u_prev + du @ r_prime @ du
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


def congested_view(k=250, position=5.2, u_prev=80.0):
    """A live view taken from the uncontrolled congested benchmark run."""
    from platoonctl import benchmark_scenario, run

    res = run(benchmark_scenario("bottleneck"))
    rho = res.density_history[k - 1].copy()
    return StepView(
        k=k,
        densities=rho,
        ids=(0,),
        positions=np.array([position]),
        queue=0.0,
        u_prev=np.array([u_prev]),
        vbar_prev=np.array([u_prev]),
    )


class TestControllers:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            LqrConfig(horizon=0)
        with pytest.raises(ValueError):
            LqrConfig(max_iters=0)
        with pytest.raises(ValueError):
            LqrConfig(tol=0.0)
        with pytest.raises(ValueError):
            LqrWeights(r_weight=0.0)
        with pytest.raises(ValueError):
            GnLqrController(make_model(), LqrConfig(eq_density=60.0))
        with pytest.raises(ValueError):
            GnLqrController(make_model(), LqrConfig(eq_speed=100.0))

    def test_empty_roster_is_noop(self):
        ctrl = GnLqrController(make_model(), LqrConfig())
        view = StepView(
            k=0,
            densities=np.full(16, 20.0),
            ids=(),
            positions=np.empty(0),
            queue=0.0,
            u_prev=np.empty(0),
            vbar_prev=np.empty(0),
        )
        assert ctrl.control(view).size == 0

    def test_speeds_stay_in_box(self):
        view = congested_view()
        for cls in (GnLqrController, GnLqrpController):
            ctrl = cls(make_model(), LqrConfig(horizon=5))
            u = ctrl.control(view)
            assert np.all(u >= 0.0) and np.all(u <= FD.v_f)

    def test_psd_tracking(self):
        ctrl = GnLqrController(make_model(), LqrConfig(), track_psd=True)
        ctrl.control(congested_view())
        assert ctrl.min_p_eigenvalues
        assert min(ctrl.min_p_eigenvalues) >= -1e-8

    def test_large_change_penalty_suppresses_speed_change(self):
        view = congested_view()
        model = make_model()
        changes = []
        for w in [1.0, 10.0, 30.0, 100.0, 1e4, 1e6]:
            cfg = LqrConfig(horizon=5, weights=LqrWeights(rprime_weight=w))
            u = GnLqrpController(model, cfg).control(view)
            changes.append(abs(u[0] - view.u_prev[0]))
        for earlier, later in zip(changes, changes[1:]):
            assert later <= earlier + 1e-9
        assert changes[-1] < 0.05

    def test_penalty_variant_follows_previous_input_not_equilibrium(self):
        # With an overwhelming change penalty the command must track the
        # previously applied speed, not the equilibrium speed.
        view = congested_view(u_prev=70.0)
        cfg = LqrConfig(horizon=5, weights=LqrWeights(rprime_weight=1e8))
        u = GnLqrpController(make_model(), cfg).control(view)
        assert u[0] == pytest.approx(70.0, abs=0.1)
