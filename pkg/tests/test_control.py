import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phast.autodiff import ParamStore
from phast.control import (
    IC_REGIMES,
    ControlGains,
    ControllerState,
    ControlSettings,
    FiniteDifferenceEstimator,
    LearnedObserverEstimator,
    MapSmootherEstimator,
    OracleEstimator,
    aggregate_trials,
    casimir_drift,
    closed_loop_energy,
    control_step,
    gains_hash,
    map_objective,
    map_smoother,
    map_smoother_velocity,
    model_based_port,
    run_control_batch,
    run_control_trial,
    sample_regime_states,
)
from phast.envs import env_rhs, get_env
from phast.errors import ContractViolation, ControlFault
from phast.hamiltonian import KNOWN, HamiltonianModel
from phast.integrators import rk4_step
from phast.linalg import ConstantDiagLowRank, DampingField
from phast.observer import ObserverNet
from phast.potentials import Cosine
from phast.rng import stream

PLANT = get_env("pendulum_cons")


class TestControlStep:
    def test_at_target(self):
        ctrl = ControllerState(xi=np.array(0.3), gains=ControlGains(q_star=0.3))
        u, xi = control_step(ctrl, 0.0, 0.3, 0.01)
        assert u == 0.0 and xi == 0.3

    def test_arithmetic(self):
        ctrl = ControllerState(xi=np.array(1.0), gains=ControlGains(k_c=1.0, d_inj=0.5, k_xi=0.0))
        u, _ = control_step(ctrl, 2.0, 1.0, 0.01)
        assert u == pytest.approx(-2.0)

    def test_forward_euler_without_correction(self):
        ctrl = ControllerState(xi=np.array(0.4), gains=ControlGains(k_xi=0.0))
        _, xi = control_step(ctrl, 1.5, -3.0, 0.02)
        assert xi == pytest.approx(0.4 + 0.02 * 1.5, abs=1e-15)

    def test_measurement_correction(self):
        ctrl = ControllerState(xi=np.array(0.0), gains=ControlGains(k_xi=5.0))
        _, xi = control_step(ctrl, 0.0, 0.2, 0.01)
        assert xi == pytest.approx(0.01 * 5.0 * 0.2)

    def test_forcing_signal(self):
        ctrl = ControllerState(xi=np.array(0.0), v_ext=lambda step: 0.1 * step)
        u, _ = control_step(ctrl, 0.0, 0.0, 0.01, step=3)
        assert u == pytest.approx(0.3)

    def test_nonfinite_estimate(self):
        with pytest.raises(ControlFault):
            control_step(ControllerState(xi=np.zeros(2)), np.array([0.0, np.nan]), np.zeros(2), 0.01)

    def test_negative_gain(self):
        with pytest.raises(ContractViolation):
            ControlGains(d_inj=-1.0)


class TestCasimirDrift:
    def test_zero_dynamics(self):
        rec = run_control_trial(PLANT, ControlGains(k_xi=0.0), OracleEstimator(PLANT), 0.0, 0.0, 0.0,
                                settings=ControlSettings(T_ctl=1.0))
        assert rec["casimir_drift"] == 0.0
        assert casimir_drift(np.ones(5), np.ones(5)) == 0.0

    def test_halves_with_dt(self):
        drifts = []
        for dt in (0.01, 0.005):
            rec = run_control_trial(PLANT, ControlGains(k_xi=0.0), OracleEstimator(PLANT), 0.0, 1.0, 0.5,
                                    settings=ControlSettings(dt=dt, T_ctl=2.0))
            drifts.append(rec["casimir_drift"])
        assert drifts[0] / drifts[1] == pytest.approx(2.0, rel=0.25)

    def test_noisy_fd_drifts_more(self):
        q0, p0 = sample_regime_states(PLANT, "moderate", 5, 0)
        seeds = list(range(5))
        s = ControlSettings(T_ctl=2.0)
        oracle = run_control_batch(PLANT, ControlGains(), OracleEstimator(PLANT), 0.01, q0, p0, seeds, s)
        fd = run_control_batch(PLANT, ControlGains(), FiniteDifferenceEstimator(s.dt), 0.01, q0, p0, seeds, s)
        for a, b in zip(oracle, fd):
            assert b["casimir_drift"] > a["casimir_drift"]

    def test_shape_check(self):
        with pytest.raises(ContractViolation):
            casimir_drift(np.zeros(3), np.zeros(4))


class TestMapSmoother:
    @pytest.mark.parametrize("w", [3, 4, 10, 16])
    def test_ramp_exact(self, w):
        dt, slope = 0.01, 1.7
        ramp = 0.2 + slope * dt * np.arange(w)
        assert map_smoother_velocity(ramp, dt, 0.05) == pytest.approx(slope, abs=1e-10)

    def test_tiny_sigma_gives_backward_difference(self, rng):
        window = rng.normal(scale=0.1, size=8)
        v = map_smoother_velocity(window, 0.01, 1e-9)
        assert v == pytest.approx((window[-1] - window[-2]) / 0.01, rel=1e-6)

    def test_two_samples(self):
        assert map_smoother_velocity(np.array([0.1, 0.13]), 0.01, 0.5) == pytest.approx(3.0)

    def test_window_too_short(self):
        with pytest.raises(ContractViolation):
            map_smoother(np.array([0.1]), 0.01, 0.1)
        with pytest.raises(ContractViolation):
            MapSmootherEstimator(0.01, 0.1, window=1)

    def test_unwraps_window(self):
        dt = 0.01
        raw = np.pi - 0.02 + 1.0 * dt * np.arange(6)
        wrapped = np.angle(np.exp(1j * raw))
        assert map_smoother_velocity(wrapped, dt, 0.01) == pytest.approx(1.0, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), w=st.integers(3, 16), sigma=st.floats(1e-3, 0.1))
    def test_objective_optimal(self, seed, w, sigma):
        rng = np.random.default_rng(seed)
        meas = np.cumsum(rng.normal(scale=0.02, size=w))
        s = map_smoother(meas, 0.01, sigma, angular=False)
        f = map_objective(s, meas, 0.01, sigma)
        assert f <= map_objective(meas, meas, 0.01, sigma) * (1 + 1e-12)
        for _ in range(5):
            assert f <= map_objective(s + rng.normal(scale=1e-4, size=w), meas, 0.01, sigma) * (1 + 1e-12)


class TestEstimators:
    def test_fd_first_step_zero(self):
        est = FiniteDifferenceEstimator(0.01)
        assert np.array_equal(est([np.array([0.3])], np.array([0.3]), np.array([1.0])), [0.0])

    def test_zero_observer_matches_fd(self, rng):
        net = ObserverNet(ParamStore(), "obs", [True], stream(0))
        history = [rng.normal(size=3) for _ in range(12)]
        obs = LearnedObserverEstimator(net, 0.01)(history, None, None)
        fd = FiniteDifferenceEstimator(0.01)(history, None, None)
        np.testing.assert_allclose(obs, fd, rtol=1e-12)

    def test_model_based_port(self):
        model = HamiltonianModel(Cosine([9.81]), ConstantDiagLowRank(np.array([2.0])), DampingField(1), KNOWN)
        np.testing.assert_allclose(model_based_port(model, [[0.4]], [[3.0]]), [[1.5]])
        np.testing.assert_array_equal(model_based_port(model, [[0.4]], [[0.0]]), [[0.0]])


class TestTrials:
    def test_oracle_noiseless_converges(self):
        q0, p0 = sample_regime_states(PLANT, "large", 4, 1)
        recs = run_control_batch(PLANT, ControlGains(), OracleEstimator(PLANT), 0.0, q0, p0, range(4))
        assert all(r["success"] for r in recs)

    def test_open_loop_degenerate(self):
        s = ControlSettings(T_ctl=0.5)
        rec, tr = run_control_trial(PLANT, ControlGains(k_c=0.0, d_inj=0.0), OracleEstimator(PLANT), 0.0, 0.8, 0.2,
                                    settings=s, record_trace=True)
        assert rec["effort"] == 0.0 and np.all(tr["u"] == 0.0)
        x = np.array([[0.8, 0.2]])
        for k in range(s.steps):
            assert tr["q"][k] == x[0, 0]
            x = rk4_step(lambda z: env_rhs(PLANT, z, np.zeros((1, 1))), x, s.dt)

    def test_forced_passivity_with_oracle(self):
        """H_cl = H_p + k_c/2 (xi - q*)^2 decays; zero-order-hold increases vanish as dt^2 per step."""
        gains = ControlGains(k_xi=0.0)
        rises = []
        for dt in (0.01, 0.005):
            s = ControlSettings(dt=dt, T_ctl=3.0)
            _, tr = run_control_trial(PLANT, gains, OracleEstimator(PLANT), 0.0, 2.0, 1.0, settings=s,
                                      record_trace=True)
            H = closed_loop_energy(PLANT, tr["q"], tr["p"], tr["xi"], gains)
            rises.append(np.diff(H).max())
            assert rises[-1] <= 0.1 * H[0] * dt
            assert H[-1] < 0.01 * H[0]
        assert rises[0] / rises[1] == pytest.approx(4.0, rel=0.2)

    def test_batch_matches_single(self):
        q0, p0 = sample_regime_states(PLANT, "moderate", 3, 0)
        s = ControlSettings(T_ctl=1.0)
        est = MapSmootherEstimator(s.dt, 0.01)
        batch = run_control_batch(PLANT, ControlGains(), est, 0.01, q0, p0, [10, 11, 12], s)
        for i in range(3):
            single = run_control_trial(PLANT, ControlGains(), est, 0.01, q0[i], p0[i], seed=10 + i, settings=s)
            assert single == batch[i]

    def test_deterministic(self):
        s = ControlSettings(T_ctl=1.0)
        a = run_control_trial(PLANT, ControlGains(), FiniteDifferenceEstimator(s.dt), 0.01, 1.0, 0.0, 3, s)
        b = run_control_trial(PLANT, ControlGains(), FiniteDifferenceEstimator(s.dt), 0.01, 1.0, 0.0, 3, s)
        assert a == b

    def test_noise_seed_count(self):
        with pytest.raises(ContractViolation):
            run_control_batch(PLANT, ControlGains(), OracleEstimator(PLANT), 0.0, [0.1, 0.2], [0.0, 0.0], [1])


class TestRegimesAndAggregation:
    @pytest.mark.parametrize("regime", list(IC_REGIMES))
    def test_regime_bands(self, regime):
        (lo, hi), wmax = IC_REGIMES[regime]
        q0, p0 = sample_regime_states(PLANT, regime, 20, 0)
        assert np.all((np.abs(q0) >= lo) & (np.abs(q0) <= hi))
        assert np.all(np.abs(p0) <= wmax)

    def test_regime_sampling_deterministic(self):
        a = sample_regime_states(PLANT, "small", 5, 2)
        b = sample_regime_states(PLANT, "small", 5, 2)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_unknown_regime(self):
        with pytest.raises(ContractViolation):
            sample_regime_states(PLANT, "upside_down", 1, 0)

    def test_aggregate_is_mean(self):
        recs = [{"success": True, "final_error": 0.01, "effort": 10.0, "velocity_error": 0.1},
                {"success": False, "final_error": 0.5, "effort": 30.0, "velocity_error": 0.3}]
        agg = aggregate_trials(recs)
        assert agg == {"success": 0.5, "final_error": 0.255, "effort": 20.0, "velocity_error": 0.2, "n_trials": 2}

    def test_gains_hash(self):
        s = ControlSettings()
        h = gains_hash(ControlGains(), s, PLANT, 0)
        assert h == gains_hash(ControlGains(), s, PLANT, 0)
        assert h != gains_hash(ControlGains(k_c=11.0), s, PLANT, 0)
        assert h != gains_hash(ControlGains(), s, PLANT, 1)
