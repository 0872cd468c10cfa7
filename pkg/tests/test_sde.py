import math

import numpy as np
import pytest

from sffilter import (
    NumericalBlowupError,
    ParameterError,
    UnsupportedModelError,
    SlowFastModel,
    euler_maruyama_step,
    generate_noise_grid,
    make_trig_model,
    ou_exact_step,
    simulate_full_system,
    validate_hypotheses,
)

def constant_model(epsilon=0.01, a=0.0, b=-1.0, sigma1=0.0, sigma2=0.0, f_val=0.0, g_val=0.0):
    """Scalar model with constant interaction functions, for closed-form checks."""
    return SlowFastModel(
        n=1,
        m=1,
        A=np.array([[a]]),
        B=np.array([[b]]),
        sigma1=sigma1,
        sigma2=sigma2,
        epsilon=epsilon,
        f=lambda x, y: np.full_like(x, f_val),
        g=lambda x, y: np.full_like(y, g_val),
        gamma1=max(abs(a), 0.0),
        gamma2=abs(b),
        L=0.25,
        C_f=max(abs(f_val), 1e-12),
        C_g=max(abs(g_val), 1e-12),
    )


class TestNoiseGrid:
    def test_paper_grid_dimensions(self):
        # Delta t = 0.02 split into 400 substeps over [0, 8] -> 160000 steps
        dt = 0.02 / 400
        grid = generate_noise_grid(1, 1, t_end=8.0, dt_fine=dt, future_ext=0, seed=1)
        assert grid.n_steps == 160000
        assert grid.dV.shape == (160000, 1)
        assert grid.dW.shape == (160000, 1)
        assert grid.dU.shape == (160000,)
        assert grid.times[0] == 0.0
        assert grid.times[-1] == pytest.approx(8.0)

    def test_determinism(self):
        g1 = generate_noise_grid(2, 3, 1.0, 0.001, 10, seed=42)
        g2 = generate_noise_grid(2, 3, 1.0, 0.001, 10, seed=42)
        assert np.array_equal(g1.dV, g2.dV)
        assert np.array_equal(g1.dW, g2.dW)
        assert np.array_equal(g1.dU, g2.dU)
        g3 = generate_noise_grid(2, 3, 1.0, 0.001, 10, seed=43)
        assert not np.array_equal(g1.dV, g3.dV)

    def test_increment_variance_within_four_standard_errors(self):
        dt = 5e-5
        grid = generate_noise_grid(1, 1, 4.0, dt, 0, seed=7)
        n = grid.n_steps
        se = math.sqrt(2.0 / n) * dt
        for arr in (grid.dV[:, 0], grid.dW[:, 0], grid.dU):
            assert abs(np.var(arr) - dt) < 4 * se
            assert abs(np.mean(arr)) < 4 * math.sqrt(dt / n)

    def test_streams_uncorrelated(self):
        grid = generate_noise_grid(1, 1, 4.0, 5e-5, 0, seed=11)
        n = grid.n_steps
        bound = 4.0 / math.sqrt(n)
        v, w, u = grid.dV[:, 0], grid.dW[:, 0], grid.dU
        for a, b in ((v, w), (v, u), (w, u)):
            rho = np.corrcoef(a, b)[0, 1]
            assert abs(rho) < bound

    def test_negative_start_and_extension(self):
        grid = generate_noise_grid(1, 1, 1.0, 0.01, future_ext=50, seed=3, t_start=-0.5)
        assert grid.t0 == -0.5
        assert grid.t_end == pytest.approx(1.0)
        assert grid.n_steps == 150 + 50
        assert grid.index_at(-0.5) == 0
        assert grid.index_at(1.0) == 150

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            generate_noise_grid(1, 1, t_end=1.0, dt_fine=-0.1, future_ext=0, seed=0)
        with pytest.raises(ParameterError):
            generate_noise_grid(1, 1, t_end=0.0, dt_fine=0.1, future_ext=0, seed=0)
        with pytest.raises(ParameterError):
            generate_noise_grid(1, 1, t_end=1.0, dt_fine=0.3, future_ext=0, seed=0)


class TestValidateHypotheses:
    def test_benchmark_model_all_pass(self):
        report = validate_hypotheses(make_trig_model(0.01), probe_count=500, rng_seed=1)
        assert report.all_passed, report.summary()

    def test_spectral_gap_failure(self):
        model = make_trig_model(0.01)
        bad = SlowFastModel(
            **{**model.__dict__, "L": 2.0},
        )
        report = validate_hypotheses(bad, probe_count=50, rng_seed=1)
        names = {c.name: c.passed for c in report.checks}
        assert names["H4_spectral_gap"] is False

    def test_anti_dissipative_B_fails_every_probe(self):
        model = constant_model(b=+1.0)
        report = validate_hypotheses(model, probe_count=100, rng_seed=2)
        names = {c.name: c for c in report.checks}
        assert names["H2_dissipative"].passed is False


class TestEulerStep:
    def test_identity_with_zero_drift_and_noise(self):
        model = constant_model(a=0.0, b=0.0)
        x, y = euler_maruyama_step((np.array([1.5]), np.array([-0.5])), model, 0.0, 0.0, 0.01 / 100)
        assert x == pytest.approx(1.5)
        assert y == pytest.approx(-0.5)

    def test_benchmark_drift_at_origin(self):
        # f(0,0) = 0 and g(0,0) = 1/4, so x is unchanged and y gains dt/(4 eps)
        eps = 0.01
        model = make_trig_model(eps)
        dt = 1e-4
        x, y = euler_maruyama_step((np.zeros(1), np.zeros(1)), model, np.zeros(1), np.zeros(1), dt)
        assert x[0] == pytest.approx(0.0)
        assert y[0] == pytest.approx(0.25 * dt / eps)

    def test_first_order_consistency(self):
        # smooth noiseless drift: one step vs two half-steps differ at O(dt^2),
        # and the defect against a dt/10 reference shrinks ~2x when dt halves
        model = make_trig_model(0.5, sigma1=0.0, sigma2=0.0)

        def integrate(dt, n_steps, state=(np.array([0.3]), np.array([0.7]))):
            x, y = state
            for _ in range(n_steps):
                x, y = euler_maruyama_step((x, y), model, 0.0, 0.0, dt)
            return np.hstack([x, y])

        dt = 0.01
        ref = integrate(dt / 10, 20)
        err_full = np.linalg.norm(integrate(dt, 2) - ref)
        err_half = np.linalg.norm(integrate(dt / 2, 4) - ref)
        assert err_full / err_half >= 1.8

        one = integrate(dt, 1)
        two = integrate(dt / 2, 2)
        assert np.linalg.norm(one - two) < 5 * dt**2

    def test_rejects_nonpositive_dt(self):
        model = constant_model()
        with pytest.raises(ParameterError):
            euler_maruyama_step((np.zeros(1), np.zeros(1)), model, 0.0, 0.0, 0.0)


class TestSimulateFullSystem:
    def test_scalar_linear_decay(self):
        # sigma = 0, f = g = 0, A = -1: x(t) = e^{-t}, rel. err <= 2 dt at t = 1
        dt = 1e-3
        model = constant_model(epsilon=0.05, a=-1.0)
        grid = generate_noise_grid(1, 1, 1.0, dt, 0, seed=0)
        traj = simulate_full_system(model, grid, (np.array([1.0]), np.array([0.0])))
        rel_err = abs(traj.x[-1, 0] - math.exp(-1.0)) / math.exp(-1.0)
        assert rel_err <= 2 * dt

    def test_fast_transient_reaches_quasi_equilibrium(self):
        # deterministic benchmark drift: y relaxes to ~ g(x)/|B| within ~5 eps,
        # verified against a stiff reference at dt/100
        eps = 0.01
        model = make_trig_model(eps, sigma1=0.0, sigma2=0.0)
        dt = eps / 20
        grid = generate_noise_grid(1, 1, 10 * eps, dt, 0, seed=0)
        traj = simulate_full_system(model, grid, (np.array([1.0]), np.array([1.0])))
        k7 = int(round(7 * eps / dt))
        quasi = 0.25 * math.cos(traj.x[k7, 0])
        assert abs(traj.y[k7, 0] - quasi) < 0.05

        grid_ref = generate_noise_grid(1, 1, 10 * eps, dt / 100, 0, seed=0)
        ref = simulate_full_system(model, grid_ref, (np.array([1.0]), np.array([1.0])))
        assert abs(traj.y[-1, 0] - ref.y[-1, 0]) < 5e-3

    def test_determinism_same_grid(self):
        model = make_trig_model(0.01)
        grid = generate_noise_grid(1, 1, 0.5, 5e-4, 0, seed=5)
        t1 = simulate_full_system(model, grid, (np.ones(1), np.ones(1)))
        t2 = simulate_full_system(model, grid, (np.ones(1), np.ones(1)))
        assert np.array_equal(t1.x, t2.x) and np.array_equal(t1.y, t2.y)

    def test_stiffness_guard(self):
        model = make_trig_model(0.001)
        grid = generate_noise_grid(1, 1, 0.1, 5e-4, 0, seed=0)
        with pytest.raises(ParameterError, match="dt_fine"):
            simulate_full_system(model, grid, (np.zeros(1), np.zeros(1)))

    def test_blowup_reports_step_index(self):
        model = SlowFastModel(
            n=1, m=1, A=np.array([[0.0]]), B=np.array([[-1.0]]),
            sigma1=0.0, sigma2=0.0, epsilon=0.1,
            f=lambda x, y: x * 1e40,
            g=lambda x, y: np.zeros_like(y),
        )
        grid = generate_noise_grid(1, 1, 0.2, 0.01, 0, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericalBlowupError) as exc:
                simulate_full_system(model, grid, (np.ones(1), np.zeros(1)))
        assert exc.value.step_index is not None

    def test_window_must_avoid_future_extension(self):
        model = make_trig_model(0.1)
        grid = generate_noise_grid(1, 1, 0.5, 5e-3, future_ext=10, seed=0)
        traj = simulate_full_system(model, grid, (np.zeros(1), np.zeros(1)))
        assert traj.times[-1] == pytest.approx(0.5)


class TestOUExactStep:
    def test_zero_dt_is_identity(self):
        model = make_trig_model(0.1)
        xi = np.array([0.7])
        out = ou_exact_step(xi, 0.0, model, np.array([1.3]))
        assert out[0] == pytest.approx(0.7)

    def test_decay_factor_plugin(self):
        # B = -1, sigma2 = 1, eps = 0.1, dt = 0.02 -> decay e^{-0.2}
        model = make_trig_model(0.1)
        out = ou_exact_step(np.array([1.0]), 0.02, model, np.array([0.0]))
        assert out[0] == pytest.approx(math.exp(-0.2))

    def test_stationary_variance_long_run(self):
        # Lyapunov value sigma2^2 / (2|B|) = 1/2 for the benchmark constants
        model = make_trig_model(0.01)
        gen = np.random.default_rng(123)
        n = 200_000
        dt = 0.002
        xi = np.zeros(1)
        samples = np.empty(n)
        draws = gen.standard_normal(n)
        for k in range(n):
            xi = ou_exact_step(xi, dt, model, draws[k : k + 1])
            samples[k] = xi[0]
        assert abs(np.var(samples) - 0.5) < 0.05

    def test_matches_euler_auxiliary_sde(self):
        # distribution of exact steps vs Euler at dt = eps/100, 1e4 samples
        eps = 0.04
        model = make_trig_model(eps)
        gen = np.random.default_rng(7)
        n_samp = 10_000
        dt = 0.01
        n_sub = 100
        dt_sub = dt / n_sub  # = eps/400 <= eps/100
        xi0 = gen.standard_normal(n_samp) * math.sqrt(0.5)

        exact = np.array(
            [ou_exact_step(np.array([x0]), dt, model, gen.standard_normal(1))[0] for x0 in xi0[:, None]]
        )
        euler = xi0.copy()
        for _ in range(n_sub):
            dw = gen.standard_normal(n_samp) * math.sqrt(dt_sub)
            euler = euler + (-euler / eps) * dt_sub + dw / math.sqrt(eps)

        se_mean = np.std(euler) / math.sqrt(n_samp)
        assert abs(np.mean(exact) - np.mean(euler)) < 3 * se_mean
        se_var = np.var(euler) * math.sqrt(2.0 / n_samp)
        assert abs(np.var(exact) - np.var(euler)) < 3 * se_var

    def test_requires_diagonal_negative_B(self):
        model = SlowFastModel(
            n=1, m=2, A=np.array([[1.0]]), B=np.array([[-1.0, 0.5], [0.0, -1.0]]),
            sigma1=0.0, sigma2=1.0, epsilon=0.1,
            f=lambda x, y: np.zeros_like(x),
            g=lambda x, y: np.zeros_like(y),
        )
        with pytest.raises(UnsupportedModelError):
            ou_exact_step(np.zeros(2), 0.01, model, np.zeros(2))
        model2 = constant_model(b=+0.5)
        with pytest.raises(UnsupportedModelError):
            ou_exact_step(np.zeros(1), 0.01, model2, np.zeros(1))
