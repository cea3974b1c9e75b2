import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsls.cartpole import (
    CartPoleParams,
    IntegrationError,
    NoiseConfig,
    ReferenceTrajectory,
    build_tracking_model,
    cartpole_plant,
    continuous_dynamics,
    discretize,
    energy,
    heuristic_swingup_reference,
    jacobian,
    linearize_zoh,
    load_reference_csv,
    manipulator_residual,
    run_tracking_experiment,
    trajectory_error,
    zoh_flow,
)
from nlsls.ltv import synthesize_h2_fir, verify_subspace
from nlsls.operators import Sequence

P = CartPoleParams()
DOWN = np.zeros(4)
UP = np.array([0.0, np.pi, 0.0, 0.0])

states = st.tuples(
    st.floats(-2, 2), st.floats(-7, 7), st.floats(-3, 3), st.floats(-8, 8)
).map(np.array)


@pytest.fixture(scope="module")
def short_setup():
    ref = heuristic_swingup_reference(P, duration=2.0)
    model = build_tracking_model(P, ref)
    return ref, model, synthesize_h2_fir(model, 20)


class TestParams:
    def test_defaults(self):
        assert (P.m_c, P.m_p, P.l, P.g, P.tau_s) == (1.0, 0.1, 0.5, 9.81, 0.033)

    @pytest.mark.parametrize("name", ["m_c", "m_p", "l", "g", "tau_s"])
    def test_positive(self, name):
        with pytest.raises(ValueError):
            CartPoleParams(**{name: 0.0})


class TestDynamics:
    @pytest.mark.parametrize("x", [DOWN, UP])
    def test_equilibria(self, x):
        # sin(pi) is 1.2e-16 in floating point
        assert np.allclose(continuous_dynamics(P, x, 0.0), 0.0, atol=1e-14)

    def test_unit_push_at_rest(self):
        d = continuous_dynamics(P, DOWN, 1.0)
        assert d[2] == pytest.approx(1.0, abs=1e-15)
        assert d[3] == pytest.approx(-2.0, abs=1e-15)
        assert np.all(np.abs(manipulator_residual(P, DOWN, 1.0, d)) <= 1e-12)

    @settings(max_examples=50)
    @given(x=states, u=st.floats(-20, 20))
    def test_solves_manipulator_equations(self, x, u):
        d = continuous_dynamics(P, x, u)
        assert np.all(np.abs(manipulator_residual(P, x, u, d)) <= 1e-11)

    @settings(max_examples=30)
    @given(x=states, u=st.floats(-20, 20))
    def test_jacobian_matches_finite_differences(self, x, u):
        J, g = jacobian(P, x, u)
        eps = 1e-6
        fd = np.column_stack([
            (continuous_dynamics(P, x + eps * e, u) - continuous_dynamics(P, x - eps * e, u)) / (2 * eps)
            for e in np.eye(4)
        ])
        assert np.allclose(J, fd, atol=1e-6 * (1 + np.abs(fd).max()))
        dg = (continuous_dynamics(P, x, u + 1.0) - continuous_dynamics(P, x, u))
        assert np.allclose(g, dg, atol=1e-12)


class TestZohFlow:
    @pytest.mark.parametrize("x", [DOWN, UP, np.array([3.0, np.pi, 0.0, 0.0])])
    def test_fixed_points(self, x):
        assert np.max(np.abs(zoh_flow(P, x, 0.0) - x)) <= 1e-12

    def test_fourth_order(self):
        x = np.array([0.1, 1.0, 0.5, 2.0])
        phis = [zoh_flow(P, x, 3.0, n) for n in (1, 2, 4, 8)]
        errs = [np.linalg.norm(a - b) for a, b in zip(phis, phis[1:])]
        for a, b in zip(errs, errs[1:]):
            assert 16 * 0.7 <= a / b <= 16 * 1.3

    def test_energy_conserved_without_force(self):
        ref = heuristic_swingup_reference(P, duration=3.0)
        for x in ref.x_d.values[::7]:
            assert abs(energy(P, zoh_flow(P, x, 0.0)) - energy(P, x)) <= 1e-8

    def test_invalid_substeps(self):
        with pytest.raises(ValueError):
            zoh_flow(P, DOWN, 0.0, substeps=0)

    def test_blowup_raises(self):
        with pytest.raises(IntegrationError):
            zoh_flow(P, np.array([0.0, 0.0, 0.0, 1e200]), 0.0)


class TestLinearization:
    def test_nilpotent(self):
        A, B = discretize(np.zeros((2, 2)), [1.0, 0.0], 0.1)
        assert np.array_equal(A, np.eye(2))
        assert np.allclose(B.ravel(), [0.1, 0.0], atol=1e-17)

    def test_scalar_exponential(self):
        tau = 0.033
        A, B = discretize([[1.0]], [1.0], tau)
        assert A.item() == pytest.approx(np.exp(tau), rel=1e-14)
        assert B.item() == pytest.approx(np.expm1(tau), rel=1e-12)

    def test_upright_matches_flow_jacobian(self):
        A, B = linearize_zoh(P, UP, 0.0)
        eps = 1e-6
        FA = np.column_stack([
            (zoh_flow(P, UP + eps * e, 0.0) - zoh_flow(P, UP - eps * e, 0.0)) / (2 * eps)
            for e in np.eye(4)
        ])
        FB = (zoh_flow(P, UP, eps) - zoh_flow(P, UP, -eps)) / (2 * eps)
        assert np.max(np.abs(FA - A)) <= 5e-3
        assert np.max(np.abs(FB - B.ravel())) <= 5e-3

    def test_constant_reference_gives_constant_model(self):
        ref = ReferenceTrajectory(Sequence(np.zeros((6, 4))), Sequence(np.zeros((6, 1))))
        model = build_tracking_model(P, ref)
        assert all(np.array_equal(model.A[t], model.A[0]) for t in range(5))
        assert model.x_ref == ref.x_d and model.u_ref == ref.u_d


class TestReference:
    def test_heuristic_is_discretization_consistent(self):
        ref = heuristic_swingup_reference(P, duration=3.0)
        assert ref.horizon == round(3.0 / P.tau_s)
        assert trajectory_error(P, ref).max_abs() <= 1e-12

    def test_heuristic_swings_up(self):
        ref = heuristic_swingup_reference(P, duration=6.0)
        assert abs(np.cos(ref.x_d.values[-1, 1]) + 1.0) <= 1e-3

    def test_multirate_reference_is_inconsistent(self):
        ref = heuristic_swingup_reference(P, duration=2.0, control_substeps=4)
        assert trajectory_error(P, ref).max_abs() > 1e-6

    def test_csv_round_trip(self, tmp_path):
        ref = heuristic_swingup_reference(P, duration=0.5)
        back = load_reference_csv(ref.to_csv(tmp_path / "ref.csv", tau_s=P.tau_s))
        assert back.x_d == ref.x_d and back.u_d == ref.u_d and back.source == "file"

    def test_csv_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_reference_csv(tmp_path / "missing.csv")
        bad = tmp_path / "bad.csv"
        bad.write_text("t,x_c,theta\n0,0,0\n1,0,0\n")
        with pytest.raises(ValueError):
            load_reference_csv(bad)

    def test_horizon_mismatch(self):
        with pytest.raises(ValueError):
            ReferenceTrajectory(Sequence(np.zeros((3, 4))), Sequence(np.zeros((2, 1))))


class TestTracking:
    def test_synthesis_feasible(self, short_setup):
        _, model, clm = short_setup
        assert verify_subspace(clm, model) <= 1e-8

    def test_exact_model_recovers_disturbance(self, short_setup):
        ref, model, clm = short_setup
        noise = NoiseConfig(w_std=1e-3, initial_offset=(0.0, 0.1, 0.0, 0.0))
        res = run_tracking_experiment(P, ref, clm, noise, seed=1, plant="ltv", model=model)
        assert np.max(np.abs(res.trace.w_hat.values - res.trace.w.values)) <= 1e-12

    def test_noise_free_tracking_is_exact(self, short_setup):
        ref, model, clm = short_setup
        res = run_tracking_experiment(P, ref, clm, model=model)
        assert res.w_hat_inf <= 1e-8 and not res.diverged
        assert np.max(np.abs(res.trace.x.values - ref.x_d.values)) <= 1e-8

    def test_input_structure(self, short_setup):
        ref, model, clm = short_setup
        noise = NoiseConfig(w_std=1e-3, v_std=1e-3, d_std=1e-2)
        tr = run_tracking_experiment(P, ref, clm, noise, seed=2, model=model).trace
        expected = ref.u_d.values + clm.M.apply(tr.w_hat).values + tr.d.values
        assert np.max(np.abs(tr.u.values - expected)) <= 1e-12

    def test_initial_offset_decays(self, short_setup):
        ref, model, clm = short_setup
        noise = NoiseConfig(initial_offset=(0.0, np.radians(20.0), 0.0, 0.0))
        res = run_tracking_experiment(P, ref, clm, noise, model=model)
        w_hat = np.max(np.abs(res.trace.w_hat.values), axis=1)
        assert not res.diverged
        assert np.max(w_hat[-15:]) < 0.05 * np.max(w_hat)

    def test_deterministic(self, short_setup, tmp_path):
        ref, model, clm = short_setup
        noise = NoiseConfig(w_std=1e-3)
        a = run_tracking_experiment(P, ref, clm, noise, seed=5, model=model)
        b = run_tracking_experiment(P, ref, clm, noise, seed=5, model=model)
        assert a.to_csv(tmp_path / "a.csv").read_bytes() == b.to_csv(tmp_path / "b.csv").read_bytes()

    def test_divergence_reported(self, short_setup, tmp_path):
        ref, model, clm = short_setup
        noise = NoiseConfig(initial_offset=(0.0, 2.5, 0.0, 0.0))
        res = run_tracking_experiment(P, ref, clm, noise, model=model, blowup=5.0)
        assert res.diverged and res.diverged_at is not None
        assert "diverged = True" in res.summary()
        lines = res.to_csv(tmp_path / "trace.csv").read_text().splitlines()
        assert len(lines) == res.diverged_at + 1

    def test_plant_wrapper_matches_flow(self):
        plant = cartpole_plant(P, 3)
        z = np.array([[0.0, 0.3, 0.1, -0.2, 1.0]])
        assert np.array_equal(plant.dynamics.component(1, np.vstack([z, z])), zoh_flow(P, z[0, :4], 1.0))
