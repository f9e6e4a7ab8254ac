"""Unit tests of the traffic dynamics: flux pieces, platoon motion, stepping."""

import numpy as np
import pytest

from platoonctl.dynamics import (
    BoundaryConditions,
    FundamentalDiagram,
    Grid,
    Platoon,
    TrafficModel,
    TrafficState,
    advance_platoon,
    eval_f,
    input_scaling_matrix,
    interface_flux,
    q_max,
    segment_index,
    segment_max_speed,
    step,
    traffic_demand,
    traffic_supply,
)

FD = FundamentalDiagram(rho_c=60.0, rho_m=320.0, v_f=100.0, w_c=38.0, q_cap=6000.0, alpha=0.83)
GRID = Grid(n_segments=16, seg_length=0.5, dt=10.0 / 3600.0, n_steps=720)
S_MIN = 10.0


def const_bc(demand=2000.0, supply=6000.0, caps=None):
    schedule = None
    if caps is not None:
        caps = np.asarray(caps, dtype=float)

        def schedule(k, _c=caps):
            return _c

    return BoundaryConditions(
        upstream_demand=lambda k: demand,
        downstream_supply=lambda k: supply,
        capacity_schedule=schedule,
    )


def make_state(densities, platoons=(), queue=0.0):
    return TrafficState(
        densities=np.asarray(densities, dtype=float),
        platoons=list(platoons),
        upstream_queue=queue,
    )


class TestDiagramPieces:
    def test_q_max_at_critical_density_is_capacity(self):
        assert q_max(60.0, FD) == pytest.approx(6000.0)

    def test_q_max_at_jam_density_is_dropped_capacity(self):
        # 6000 * alpha = 6000 * 0.83
        assert q_max(320.0, FD) == pytest.approx(4980.0)

    def test_q_max_on_drop_branch(self):
        # factor 1 - 0.17 * 130 / 260 = 0.915
        assert q_max(190.0, FD) == pytest.approx(5490.0)

    def test_q_max_equals_capacity_below_critical(self):
        rho = np.linspace(0.0, FD.rho_c, 25)
        np.testing.assert_allclose(q_max(rho, FD), FD.q_cap)

    def test_q_max_continuous(self):
        rho = np.linspace(0.0, FD.rho_m, 2001)
        vals = q_max(rho, FD)
        jumps = np.abs(np.diff(vals))
        assert jumps.max() < 10.0 * (FD.rho_m / 2000.0) * FD.q_cap / (FD.rho_m - FD.rho_c)

    def test_q_max_respects_override(self):
        assert q_max(30.0, FD, cap_override=5400.0) == pytest.approx(5400.0)
        assert q_max(190.0, FD, cap_override=5400.0) == pytest.approx(5400.0 * 0.915)

    @pytest.mark.parametrize("rho", [-1.0, 320.5])
    def test_q_max_domain_error(self, rho):
        with pytest.raises(ValueError):
            q_max(rho, FD)

    def test_demand_free_flow(self):
        assert traffic_demand(20.0, 100.0, FD) == pytest.approx(2000.0)

    def test_demand_zero_density(self):
        assert traffic_demand(0.0, 73.0, FD) == pytest.approx(0.0)

    def test_demand_at_critical(self):
        assert traffic_demand(60.0, 100.0, FD) == pytest.approx(6000.0)

    def test_supply_at_jam_is_zero(self):
        assert traffic_supply(320.0, FD) == pytest.approx(0.0)

    def test_supply_values(self):
        assert traffic_supply(20.0, FD) == pytest.approx(11400.0)
        assert traffic_supply(60.0, FD) == pytest.approx(9880.0)


class TestSegmentSpeed:
    def test_no_platoon_gives_free_flow(self):
        state = make_state(np.full(16, 20.0))
        assert segment_max_speed(3, state, np.empty(0), FD, GRID) == pytest.approx(100.0)

    def test_single_platoon_caps_speed(self):
        state = make_state(np.full(16, 20.0), [Platoon(id=0, position=1.6)])
        assert segment_max_speed(3, state, np.array([60.0]), FD, GRID) == pytest.approx(60.0)

    def test_two_platoons_slowest_governs(self):
        plats = [Platoon(id=0, position=1.6), Platoon(id=1, position=1.9)]
        state = make_state(np.full(16, 20.0), plats)
        assert segment_max_speed(3, state, np.array([60.0, 40.0]), FD, GRID) == pytest.approx(40.0)

    def test_boundary_position_belongs_to_upstream_segment(self):
        assert segment_index(0.5, 0.5, 16) == 0
        assert segment_index(0.5000001, 0.5, 16) == 1
        assert segment_index(0.0, 0.5, 16) == 0
        assert segment_index(8.0, 0.5, 16) == 15


class TestFlux:
    def test_interior_flux_is_min_of_demand_and_supply(self):
        rho = np.full(16, 20.0)
        state = make_state(rho)
        # D=2000, S=11400
        assert interface_flux(3, state, np.empty(0), FD, GRID, const_bc(), 0) == pytest.approx(2000.0)

    def test_congested_downstream_limits_flux(self):
        rho = np.full(16, 100.0)
        rho[5] = 300.0
        state = make_state(rho)
        # D = min(10000, q_max(100) = 5843.08) ; S = 38 * 20 = 760
        flux = interface_flux(5, state, np.empty(0), FD, GRID, const_bc(), 0)
        assert flux == pytest.approx(760.0)

    def test_capacity_override_caps_outflow(self):
        caps = np.full(16, 6000.0)
        caps[12] = 5400.0
        rho = np.full(16, 59.0)
        state = make_state(rho)
        flux = interface_flux(13, state, np.empty(0), FD, GRID, const_bc(caps=caps), 0)
        assert flux <= 5400.0 + 1e-9

    def test_upstream_flux_releases_queue(self):
        state = make_state(np.full(16, 20.0), queue=5.0)
        bc = const_bc(demand=1000.0)
        flux = interface_flux(0, state, np.empty(0), FD, GRID, bc, 0)
        assert flux == pytest.approx(min(1000.0 + 5.0 / GRID.dt, 11400.0))

    def test_downstream_flux_capped_by_boundary_supply(self):
        state = make_state(np.full(16, 59.0))
        flux = interface_flux(16, state, np.empty(0), FD, GRID, const_bc(supply=1234.0), 0)
        assert flux == pytest.approx(1234.0)

    def test_interior_fluxes_bounded_by_demand_and_supply(self):
        rng = np.random.default_rng(21)
        bc = const_bc(demand=5000.0)
        for _ in range(30):
            rho = rng.uniform(0.0, 320.0, size=16)
            plats = [Platoon(id=0, position=float(rng.uniform(0.0, 7.9)))]
            u = rng.uniform(0.0, 100.0, size=1)
            state = make_state(rho, plats)
            for i in range(1, 16):
                phi = interface_flux(i, state, u, FD, GRID, bc, 0)
                v_up = segment_max_speed(i - 1, state, u, FD, GRID)
                dem = traffic_demand(rho[i - 1], v_up, FD)
                sup = traffic_supply(rho[i], FD)
                assert 0.0 <= phi <= dem + 1e-9
                assert phi <= sup + 1e-9


class TestAdvancePlatoon:
    def test_free_flow_moves_at_commanded_speed(self):
        state = make_state(np.full(16, 20.0), [Platoon(id=0, position=1.0)])
        pos, vbar = advance_platoon(
            state.platoons[0], state, np.array([100.0]), FD, GRID, const_bc(), 0, S_MIN
        )
        assert vbar == pytest.approx(100.0)
        assert pos - 1.0 == pytest.approx(0.27778, abs=1e-5)

    def test_zero_speed_stays_put(self):
        state = make_state(np.full(16, 20.0), [Platoon(id=0, position=1.0)])
        pos, vbar = advance_platoon(
            state.platoons[0], state, np.array([0.0]), FD, GRID, const_bc(), 0, S_MIN
        )
        assert vbar == 0.0
        assert pos == 1.0

    def test_blocked_downstream_halts_at_boundary(self):
        # Downstream supply 38*(320-319.9) = 3.8 < s_min and D_i > S_{i+1}.
        rho = np.full(16, 100.0)
        rho[4] = 319.9
        plat = Platoon(id=0, position=1.95)
        state = make_state(rho, [plat])
        pos, vbar = advance_platoon(plat, state, np.array([90.0]), FD, GRID, const_bc(), 0, S_MIN)
        assert pos == pytest.approx(2.0)
        assert vbar == pytest.approx((2.0 - 1.95) / GRID.dt)

    def test_never_crosses_blocked_boundary(self):
        # Brute force over start positions and speeds: the front never
        # passes the boundary of a supply-starved segment.
        rho = np.full(16, 100.0)
        rho[4] = 319.9
        for start in np.linspace(1.55, 2.0, 23):
            for u in np.linspace(0.0, 100.0, 11):
                plat = Platoon(id=0, position=float(start))
                state = make_state(rho, [plat])
                pos, vbar = advance_platoon(
                    plat, state, np.array([u]), FD, GRID, const_bc(), 0, S_MIN
                )
                assert pos <= 2.0 + 1e-12
                assert vbar <= u + 1e-12

    def test_supply_limited_crossing_speed(self):
        # Downstream congested but supply above s_min: crossing speed is
        # v_f * S / q_max of the downstream segment, capped by the command.
        rho = np.full(16, 100.0)
        rho[4] = 300.0
        plat = Platoon(id=0, position=1.99)
        state = make_state(rho, [plat])
        pos, vbar = advance_platoon(plat, state, np.array([90.0]), FD, GRID, const_bc(), 0, S_MIN)
        expected = min(90.0, 100.0 * 760.0 / q_max(300.0, FD))
        assert vbar == pytest.approx(expected)
        assert pos == pytest.approx(1.99 + GRID.dt * expected)


class TestStep:
    def test_uniform_steady_state_is_invariant(self):
        state = make_state(np.full(16, 20.0))
        nxt = step(state, np.empty(0), FD, GRID, const_bc(demand=2000.0), 0, S_MIN)
        np.testing.assert_array_equal(nxt.densities, state.densities)

    def test_jam_density_never_exceeded(self):
        rho = np.full(4, 20.0)
        rho[-1] = 320.0
        grid = Grid(n_segments=4, seg_length=0.5, dt=10.0 / 3600.0, n_steps=10)
        state = make_state(rho)
        bc = const_bc(demand=6000.0, supply=0.0)
        for k in range(200):
            state = step(state, np.empty(0), FD, grid, bc, k, S_MIN)
            assert np.all(state.densities <= 320.0 + 1e-12)
            assert np.all(state.densities >= 0.0)
        assert state.densities[-1] <= 320.0 + 1e-12

    def test_platoon_deactivates_at_stretch_end(self):
        state = make_state(np.full(16, 20.0), [Platoon(id=0, position=7.95)])
        nxt = step(state, np.array([100.0]), FD, GRID, const_bc(), 0, S_MIN)
        assert not nxt.platoons[0].active
        assert nxt.platoons[0].position >= 8.0

    def test_wrong_input_length_rejected(self):
        state = make_state(np.full(16, 20.0), [Platoon(id=0, position=1.0)])
        with pytest.raises(ValueError):
            step(state, np.empty(0), FD, GRID, const_bc(), 0, S_MIN)

    def test_queue_accumulates_unserved_demand(self):
        rho = np.full(16, 20.0)
        rho[0] = 315.0  # small supply at the entrance
        state = make_state(rho)
        bc = const_bc(demand=5000.0)
        nxt = step(state, np.empty(0), FD, GRID, bc, 0, S_MIN)
        served = min(5000.0, 38.0 * (320.0 - 315.0))
        assert nxt.upstream_queue == pytest.approx((5000.0 - served) * GRID.dt)

    def test_vehicle_conservation_over_random_runs(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(3, 12))
            grid = Grid(n_segments=n, seg_length=0.5, dt=10.0 / 3600.0, n_steps=60)
            rho0 = rng.uniform(0.0, 310.0, size=n)
            demand = rng.uniform(0.0, 8000.0)
            supply = rng.uniform(0.0, 8000.0)
            bc = const_bc(demand=demand, supply=supply)
            plats = [
                Platoon(id=j, position=float(rng.uniform(0.0, n * 0.5)))
                for j in range(int(rng.integers(0, 3)))
            ]
            state = make_state(rho0.copy(), plats)
            inflow = outflow = 0.0
            model = TrafficModel(FD, grid, bc, S_MIN)
            rho, pos = state.densities, np.array([p.position for p in plats])
            active = np.ones(len(plats), dtype=bool)
            queue = 0.0
            for k in range(grid.n_steps):
                u = rng.uniform(0.0, 100.0, size=len(plats))
                rho, pos, _, queue, phi = model.step_arrays(rho, pos, active, u, queue, k)
                active = active & (pos < grid.length)
                inflow += phi[0] * grid.dt
                outflow += phi[-1] * grid.dt
            start_veh = rho0.sum() * grid.seg_length
            end_veh = rho.sum() * grid.seg_length
            total = max(start_veh + inflow, 1.0)
            assert abs(end_veh + outflow - inflow - start_veh) <= 1e-9 * total

    def test_platoon_transparency_at_free_flow(self):
        # Platoons commanded at v_f leave the density field bitwise unchanged
        # when no crossing is flow-restricted.
        grid = Grid(n_segments=16, seg_length=0.5, dt=10.0 / 3600.0, n_steps=120)
        bc = const_bc(demand=3000.0)
        with_p = make_state(np.full(16, 25.0), [Platoon(id=0, position=0.4)])
        without = make_state(np.full(16, 25.0))
        for k in range(grid.n_steps):
            with_p = step(with_p, np.full(len(with_p.active_platoons()), 100.0), FD, grid, bc, k, S_MIN)
            without = step(without, np.empty(0), FD, grid, bc, k, S_MIN)
            np.testing.assert_array_equal(with_p.densities, without.densities)

    def test_platoon_motion_monotone(self):
        rng = np.random.default_rng(3)
        state = make_state(
            rng.uniform(10.0, 250.0, size=16), [Platoon(id=0, position=0.2), Platoon(id=1, position=4.1)]
        )
        bc = const_bc(demand=4000.0)
        prev = [p.position for p in state.platoons]
        for k in range(150):
            u = rng.uniform(0.0, 100.0, size=len(state.active_platoons()))
            state = step(state, u, FD, GRID, bc, k, S_MIN)
            for p, before in zip(state.platoons, prev):
                assert p.position >= before - 1e-12
            prev = [p.position for p in state.platoons]


class TestEvalF:
    def test_steady_state_density_rows_are_zero(self):
        state = make_state(np.full(16, 20.0))
        f = eval_f(state, np.empty(0), FD, GRID, const_bc(demand=2000.0), 0, S_MIN)
        np.testing.assert_allclose(f, 0.0, atol=1e-12)

    def test_platoon_rows_equal_commanded_speed_at_free_flow(self):
        state = make_state(np.full(16, 20.0), [Platoon(id=0, position=1.0)])
        f = eval_f(state, np.array([87.0]), FD, GRID, const_bc(), 0, S_MIN)
        assert f.shape == (17,)
        assert f[-1] == pytest.approx(87.0)

    def test_step_equals_state_plus_scaled_f(self):
        rng = np.random.default_rng(11)
        bc = const_bc(demand=4500.0, supply=5000.0)
        for _ in range(25):
            rho = rng.uniform(0.0, 315.0, size=16)
            plats = [
                Platoon(id=j, position=float(rng.uniform(0.0, 7.9)))
                for j in range(int(rng.integers(0, 4)))
            ]
            u = rng.uniform(0.0, 100.0, size=len(plats))
            state = make_state(rho, plats, queue=float(rng.uniform(0.0, 3.0)))
            k = int(rng.integers(0, 700))
            f = eval_f(state, u, FD, GRID, bc, k, S_MIN)
            g = input_scaling_matrix(GRID, len(plats))
            x = np.concatenate([rho, [p.position for p in plats]])
            nxt = step(state, u, FD, GRID, bc, k, S_MIN)
            x_next = np.concatenate([nxt.densities, [p.position for p in nxt.platoons]])
            np.testing.assert_array_equal(x_next, x + g @ f)


class TestValidation:
    def test_grid_cfl(self):
        grid = Grid(n_segments=16, seg_length=0.5, dt=20.0 / 3600.0, n_steps=10)
        with pytest.raises(ValueError, match="CFL"):
            grid.check_cfl(100.0)
        Grid(n_segments=16, seg_length=0.5, dt=18.0 / 3600.0, n_steps=10).check_cfl(100.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(rho_c=0.0, rho_m=320.0, v_f=100.0, w_c=38.0, q_cap=6000.0, alpha=0.83),
            dict(rho_c=60.0, rho_m=50.0, v_f=100.0, w_c=38.0, q_cap=6000.0, alpha=0.83),
            dict(rho_c=60.0, rho_m=320.0, v_f=-1.0, w_c=38.0, q_cap=6000.0, alpha=0.83),
            dict(rho_c=60.0, rho_m=320.0, v_f=100.0, w_c=38.0, q_cap=6000.0, alpha=1.2),
            dict(rho_c=60.0, rho_m=320.0, v_f=100.0, w_c=38.0, q_cap=0.0, alpha=0.83),
        ],
    )
    def test_diagram_invariants(self, kwargs):
        with pytest.raises(ValueError):
            FundamentalDiagram(**kwargs)
