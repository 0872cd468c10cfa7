import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sffilter import (
    DegenerateEnsembleError,
    ParameterError,
    SlowFastModel,
    generate_noise_grid,
    make_trig_model,
    simulate_full_system,
)
from sffilter.filtering import (
    FilterParams,
    ParticleEnsemble,
    PropagationStreams,
    deterministic_resample,
    dirac_prior,
    estimate,
    gaussian_prior,
    generate_observations,
    kalman_bucy_reference,
    make_reduced_context,
    metric_family,
    pf_init,
    pf_propagate,
    pf_weight_update,
    prob_metric_d,
    run_filter,
)
from sffilter.manifold import ManifoldConfig
from sffilter import rng as _rng

ARCTAN = lambda x, y: np.arctan(x[..., 0])
PHI_BUMP = lambda x: 10.0 * x[..., 0] / (1.0 + x[..., 0] ** 2)


def ensemble(xs, log_w=None, flavor="full", ys=None):
    xs = np.atleast_2d(np.asarray(xs, float).reshape(-1, 1))
    if ys is None:
        ys = np.zeros_like(xs)
    lw = np.zeros(len(xs)) if log_w is None else np.asarray(log_w, float)
    return ParticleEnsemble(x=xs, y=ys, log_weights=lw, flavor=flavor)


class TestObservations:
    def _truth(self, n_steps=100, dt=0.01, x_const=None):
        times = dt * np.arange(n_steps + 1)
        if x_const is None:
            x = np.linspace(0, 1, n_steps + 1)[:, None]
        else:
            x = np.full((n_steps + 1, 1), x_const)
        from sffilter.sde import Trajectory

        return Trajectory(times=times, x=x, y=np.zeros((n_steps + 1, 1)))

    def test_zero_h_gives_pure_brownian(self):
        truth = self._truth()
        gen = np.random.default_rng(0)
        dU = gen.standard_normal(100) * 0.1
        obs = generate_observations(truth, lambda x, y: np.zeros(x.shape[:-1]), dU)
        assert obs.r[0] == 0.0
        assert np.allclose(obs.r[1:], np.cumsum(dU))
        assert np.allclose(np.diff(obs.r), obs.dr)

    def test_deterministic_drift(self):
        # dU = 0, x = 1: r_t = arctan(1) t = (pi/4) t
        truth = self._truth(x_const=1.0)
        obs = generate_observations(truth, ARCTAN, np.zeros(100))
        assert obs.r[-1] == pytest.approx(math.pi / 4 * truth.times[-1])

    def test_bounded_h_keeps_r_near_U(self):
        # |arctan| < pi/2 so |r_t - U_t| <= (pi/2) t always
        model = make_trig_model(0.02)
        grid = generate_noise_grid(1, 1, 1.0, 1e-3, 0, seed=3)
        truth = simulate_full_system(model, grid, (np.ones(1), np.ones(1)))
        obs = generate_observations(truth, ARCTAN, grid.dU)
        U = np.concatenate([[0.0], np.cumsum(grid.dU)])
        assert np.all(np.abs(obs.r - U) <= (math.pi / 2) * truth.times + 1e-12)

    def test_short_dU_rejected(self):
        truth = self._truth()
        with pytest.raises(ParameterError):
            generate_observations(truth, ARCTAN, np.zeros(10))


class TestInit:
    def test_unit_weights_and_count(self):
        gen = np.random.default_rng(1)
        ens = pf_init(200, dirac_prior(1.0, 1.0), "full", gen)
        assert ens.n_particles == 200
        assert np.all(ens.log_weights == 0.0)

    def test_dirac_prior_identical_particles(self):
        gen = np.random.default_rng(1)
        ens = pf_init(50, dirac_prior(0.3, -0.2), "full", gen)
        assert np.all(ens.x == 0.3)
        assert np.all(ens.y == -0.2)

    def test_gaussian_prior_mean_clt(self):
        gen = np.random.default_rng(2)
        n = 4000
        ens = pf_init(n, gaussian_prior(2.0, 0.5, 0.0), "full", gen)
        assert abs(ens.x.mean() - 2.0) < 4 * 0.5 / math.sqrt(n)


class TestWeightUpdate:
    def test_zero_h_no_change(self):
        ens = ensemble([0.0, 1.0, 2.0])
        out = pf_weight_update(ens, np.zeros(3), dr_k=0.37, dt_sub=0.01)
        assert np.array_equal(out.log_weights, ens.log_weights)

    def test_scalar_girsanov_increment(self):
        c, dr, dt = 0.8, 0.05, 0.01
        ens = ensemble([0.0])
        out = pf_weight_update(ens, np.array([c]), dr, dt)
        assert out.log_weights[0] == pytest.approx(c * dr - 0.5 * c * c * dt)

    def test_log_space_handles_huge_exponents(self):
        ens = ensemble([0.0, 1.0])
        out = pf_weight_update(ens, np.array([500.0, -500.0]), dr_k=10.0, dt_sub=0.0)
        # raw exp would overflow; normalized weights stay finite and positive
        w = out.normalized_weights()
        assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=-300, max_value=300),  # h value
                st.floats(min_value=-5, max_value=5),      # observation increment
            ),
            min_size=1,
            max_size=30,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_weights_stay_positive_under_any_update_sequence(self, updates):
        ens = ensemble([0.0, 1.0, -1.0])
        for h_val, dr in updates:
            ens = pf_weight_update(ens, np.full(3, h_val), dr, dt_sub=0.01)
        w = ens.normalized_weights()
        assert np.all(np.isfinite(ens.log_weights))
        assert np.all(w >= 0) and w.max() > 0

    def test_inverse_martingale_identity(self):
        # h == c with observations generated from the same truth:
        # E[Lambda^{-1}] = 1 over replications of the one-step update
        gen = np.random.default_rng(5)
        c, dt, t = 0.5, 0.01, 1.0
        n_rep, n_steps = 4000, 100
        inv = np.empty(n_rep)
        for r in range(n_rep):
            dU = gen.standard_normal(n_steps) * math.sqrt(dt)
            dr = c * dt + dU
            log_lambda = np.sum(c * dr - 0.5 * c * c * dt)
            inv[r] = math.exp(-log_lambda)
        se = inv.std() / math.sqrt(n_rep)
        assert abs(inv.mean() - 1.0) < 3 * se


class TestResampling:
    def test_uniform_weights_identity(self):
        ens = ensemble([5.0, 6.0, 7.0, 8.0])
        out = deterministic_resample(ens)
        assert np.array_equal(out.x, ens.x)
        assert np.array_equal(out.ancestry, np.arange(4))
        assert np.all(out.log_weights == 0.0)

    def test_hand_enumerated_strata(self):
        # two particles with weights (3, 1): keeping n = 2 strata gives
        # u = {0.25, 0.75}, c = {0.75, 1.0} -> selections (0, 1)
        ens = ParticleEnsemble(
            x=np.array([[10.0], [20.0]]),
            y=np.zeros((2, 1)),
            log_weights=np.log(np.array([3.0, 1.0])),
            flavor="full",
        )
        out = deterministic_resample(ens)
        assert np.array_equal(out.ancestry, np.array([0, 1]))

        # the same weights spread over 4 strata: u = {.125, .375, .625, .875}
        # with the cutoff at 0.75 -> copies (3, 1)
        w = np.array([0.75, 0.25])
        c = np.cumsum(w)
        u = (np.arange(1, 5) - 0.5) / 4
        idx = np.searchsorted(c, u, side="right")
        assert np.array_equal(idx, np.array([0, 0, 0, 1]))

    def test_degenerate_rejected(self):
        ens = ensemble([1.0, 2.0], log_w=np.array([-np.inf, -np.inf]))
        with pytest.raises(DegenerateEnsembleError):
            deterministic_resample(ens)

    def test_cdf_guarantee_exhaustive_small_grid(self):
        # all weight vectors on the 0.2-grid simplex with <= 4 particles
        for n in range(1, 5):
            for combo in itertools.product(range(6), repeat=n):
                if sum(combo) != 5:
                    continue
                w = np.array(combo, dtype=float) / 5.0
                pos = np.arange(1, n + 1, dtype=float)
                ens = ParticleEnsemble(
                    x=pos[:, None],
                    y=np.zeros((n, 1)),
                    log_weights=np.log(np.maximum(w, 1e-300)),
                    flavor="full",
                )
                out = deterministic_resample(ens)
                for j in range(n):
                    weighted_cdf = w[: j + 1].sum()
                    resampled_cdf = np.mean(out.x[:, 0] <= pos[j])
                    assert abs(weighted_cdf - resampled_cdf) <= 1.0 / n + 1e-12

    @given(
        st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=12).filter(
            lambda ws: sum(ws) > 1e-6
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_cdf_guarantee_property(self, ws):
        w = np.array(ws)
        n = len(w)
        pos = np.arange(1, n + 1, dtype=float)
        ens = ParticleEnsemble(
            x=pos[:, None],
            y=np.zeros((n, 1)),
            log_weights=np.log(np.maximum(w, 1e-300)),
            flavor="full",
        )
        out = deterministic_resample(ens)
        wn = w / w.sum()
        for j in range(n):
            assert abs(wn[: j + 1].sum() - np.mean(out.x[:, 0] <= pos[j])) <= 1.0 / n + 1e-12


class TestEstimate:
    def test_constant_function_normalises_to_one(self):
        ens = ensemble([1.0, 2.0, 3.0], log_w=np.array([0.0, 5.0, -3.0]))
        assert estimate(ens, lambda x: np.ones(x.shape[:-1])) == pytest.approx(1.0)

    def test_bump_at_unit_particles(self):
        # phi(x) = 10 x / (1 + x^2) at x = 1 equals 5
        ens = ensemble([1.0, 1.0, 1.0], log_w=np.array([0.3, -0.2, 1.0]))
        assert estimate(ens, PHI_BUMP) == pytest.approx(5.0)

    def test_uniform_weights_sample_mean(self):
        xs = np.array([0.5, 1.5, -2.0, 0.2])
        ens = ensemble(xs)
        assert estimate(ens, lambda x: x[..., 0]) == pytest.approx(xs.mean())

    @given(st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=20))
    @settings(max_examples=100, deadline=None)
    def test_normalisation_property(self, xs):
        ens = ensemble(np.array(xs))
        assert estimate(ens, lambda x: np.ones(x.shape[:-1])) == pytest.approx(1.0)


class TestPropagate:
    def test_static_model_leaves_ensemble_unchanged(self):
        model = SlowFastModel(
            n=1, m=1, A=np.array([[0.0]]), B=np.array([[0.0]]),
            sigma1=0.0, sigma2=0.0, epsilon=0.1,
            f=lambda x, y: np.zeros_like(x), g=lambda x, y: np.zeros_like(y),
        )
        ens = ensemble([1.0, 2.0], ys=np.array([[3.0], [4.0]]))
        streams = PropagationStreams(
            gen_V=np.random.default_rng(0), gen_W=np.random.default_rng(1)
        )
        out = pf_propagate(ens, model, None, 0.01, streams)
        assert np.array_equal(out.x, ens.x)
        assert np.array_equal(out.y, ens.y)

    def test_single_particle_reproduces_truth_recursion(self):
        # one particle fed the truth's own streams equals the truth trajectory
        model = make_trig_model(0.02)
        dt = 1e-3
        n_steps = 200
        seed = 99
        gen_V = _rng.stream(seed, _rng.ROLE_PF_V)
        gen_W = _rng.stream(seed, _rng.ROLE_PF_W)
        dV = gen_V.standard_normal((n_steps, 1)) * math.sqrt(dt)
        dW = gen_W.standard_normal((n_steps, 1)) * math.sqrt(dt)
        from sffilter.sde import NoiseGrid

        grid = NoiseGrid(
            t0=0.0, dt_fine=dt, n_steps=n_steps, dV=dV, dW=dW,
            dU=np.zeros(n_steps), seed=seed, future_extension=0,
        )
        truth = simulate_full_system(model, grid, (np.ones(1), np.ones(1)))

        ens = pf_init(1, dirac_prior(1.0, 1.0), "full", np.random.default_rng(0))
        streams = PropagationStreams(
            gen_V=_rng.stream(seed, _rng.ROLE_PF_V),
            gen_W=_rng.stream(seed, _rng.ROLE_PF_W),
        )
        for k in range(n_steps):
            ens = pf_propagate(ens, model, None, dt, streams)
        assert ens.x[0, 0] == pytest.approx(truth.x[-1, 0], abs=1e-12)
        assert ens.y[0, 0] == pytest.approx(truth.y[-1, 0], abs=1e-12)

    def test_one_step_mean_against_direct_monte_carlo(self):
        # ensemble mean after one step vs 1e5-sample brute-force propagation
        model = make_trig_model(0.05)
        dt = 1e-3
        n = 100_000
        gen = np.random.default_rng(11)
        x0 = gen.standard_normal(n) * 0.3 + 1.0
        y0 = gen.standard_normal(n) * 0.3

        prior = lambda g, size: (
            (g.standard_normal((size, 1)) * 0.3 + 1.0),
            g.standard_normal((size, 1)) * 0.3,
        )
        ens = pf_init(n, prior, "full", np.random.default_rng(11))
        streams = PropagationStreams(
            gen_V=np.random.default_rng(1), gen_W=np.random.default_rng(2)
        )
        out = pf_propagate(ens, model, None, dt, streams)

        # direct MC with its own draws
        dV = np.random.default_rng(3).standard_normal(n) * math.sqrt(dt)
        dW = np.random.default_rng(4).standard_normal(n) * math.sqrt(dt)
        x1 = x0 + (x0 + 0.25 * np.sin(y0)) * dt + model.sigma1 * dV
        y1 = y0 + (-y0 + 0.25 * np.cos(x0)) * (dt / model.epsilon) + dW / math.sqrt(model.epsilon)

        se_x = x1.std() / math.sqrt(n)
        se_y = y1.std() / math.sqrt(n)
        # both ensembles have their own prior draws: allow both MC errors
        assert abs(out.x.mean() - x1.mean()) < 8 * se_x
        assert abs(out.y.mean() - y1.mean()) < 8 * se_y


class TestRunFilter:
    def test_zero_information_equals_prior_monte_carlo(self):
        # h == 0: weights stay 1, resampling is the identity, so the filter
        # ensemble equals an unweighted simulation with the same streams
        model = make_trig_model(0.02)
        params = FilterParams(n_particles=30, m_sub=20, dt_coarse=0.02, t_end=0.2, seed=7)
        dt = params.dt_sub
        n_steps = params.n_coarse * params.m_sub
        times = dt * np.arange(n_steps + 1)
        from sffilter.sde import Trajectory

        truth = Trajectory(times=times, x=np.zeros((n_steps + 1, 1)), y=np.zeros((n_steps + 1, 1)))
        obs = generate_observations(truth, lambda x, y: np.zeros(x.shape[:-1]), np.zeros(n_steps))

        h0 = lambda x, y: np.zeros(x.shape[:-1])
        phi = lambda x: x[..., 0]
        series = run_filter("full", model, obs, params, h0, phi, dirac_prior(1.0, 1.0))

        # unweighted reference with identical streams
        streams = PropagationStreams(
            gen_V=_rng.stream(params.seed, _rng.ROLE_PF_V),
            gen_W=_rng.stream(params.seed, _rng.ROLE_PF_W),
        )
        ens = pf_init(params.n_particles, dirac_prior(1.0, 1.0), "full", np.random.default_rng(0))
        ref = [ens.x[:, 0].mean()]
        for c in range(params.n_coarse):
            for _ in range(params.m_sub):
                ens = pf_propagate(ens, model, None, dt, streams)
            ref.append(ens.x[:, 0].mean())
        assert np.allclose(series.estimates, ref, atol=1e-12)
        assert np.allclose(series.normalizers, params.n_particles)

    def test_reduced_flavor_runs_and_normalises(self):
        model = make_trig_model(0.01)
        params = FilterParams(n_particles=25, m_sub=40, dt_coarse=0.02, t_end=0.1, seed=3)
        dt = params.dt_sub
        n_steps = params.n_coarse * params.m_sub
        grid = generate_noise_grid(1, 1, params.t_end, dt, 0, seed=1)
        truth = simulate_full_system(model, grid, (np.ones(1), np.ones(1)))
        obs = generate_observations(truth, ARCTAN, grid.dU)
        series = run_filter(
            "reduced", model, obs, params, ARCTAN, PHI_BUMP, dirac_prior(1.0),
            mconfig=ManifoldConfig(),
        )
        assert len(series.times) == params.n_coarse + 1
        assert np.all(np.isfinite(series.estimates))

    def test_reduced_engines_agree_on_short_run(self):
        model = make_trig_model(0.01)
        params = FilterParams(n_particles=6, m_sub=40, dt_coarse=0.02, t_end=0.06, seed=5)
        dt = params.dt_sub
        n_steps = params.n_coarse * params.m_sub
        grid = generate_noise_grid(1, 1, params.t_end, dt, 0, seed=2)
        truth = simulate_full_system(model, grid, (np.ones(1), np.ones(1)))
        obs = generate_observations(truth, ARCTAN, grid.dU)
        cfg = ManifoldConfig()

        out = {}
        for engine in ("tables", "quadrature"):
            ctx = make_reduced_context(
                model, cfg, params.t_end, dt, params.seed, params.n_particles, engine=engine
            )
            out[engine] = run_filter(
                "reduced", model, obs, params, ARCTAN, PHI_BUMP, dirac_prior(1.0),
                mconfig=cfg, context=ctx,
            )
        assert np.allclose(
            out["tables"].estimates, out["quadrature"].estimates, atol=2e-3
        )

    def test_matches_kalman_bucy_oracle(self):
        # scalar linear-Gaussian model: a = -1, sigma = 0.5, c = 1
        a, sigma, c = -1.0, 0.5, 1.0
        eps = 0.1
        model = SlowFastModel(
            n=1, m=1, A=np.array([[a]]), B=np.array([[-1.0]]),
            sigma1=sigma, sigma2=0.0, epsilon=eps,
            f=lambda x, y: np.zeros_like(x), g=lambda x, y: np.zeros_like(y),
        )
        h_lin = lambda x, y: c * x[..., 0]
        params = FilterParams(n_particles=2000, m_sub=20, dt_coarse=0.02, t_end=0.5, seed=17)
        dt = params.dt_sub
        grid = generate_noise_grid(1, 1, params.t_end, dt, 0, seed=31)
        truth = simulate_full_system(model, grid, (np.array([0.5]), np.zeros(1)))
        obs = generate_observations(truth, h_lin, grid.dU)

        prior_mean, prior_std = 0.0, 1.0
        series = run_filter(
            "full", model, obs, params, h_lin, lambda x: x[..., 0],
            gaussian_prior(prior_mean, prior_std, 0.0),
        )
        kb = kalman_bucy_reference(a, sigma, c, prior_mean, prior_std**2, obs)
        for i, t in enumerate(series.times):
            if i == 0:
                continue
            k = obs.index_at(t)
            se = math.sqrt(kb.var[k] / params.n_particles)
            assert abs(series.estimates[i] - kb.mean[k]) < 4 * se

    def test_snapshot_capture(self):
        model = make_trig_model(0.02)
        params = FilterParams(
            n_particles=10, m_sub=10, dt_coarse=0.02, t_end=0.06, seed=1,
            snapshot_times=(0.04,),
        )
        dt = params.dt_sub
        grid = generate_noise_grid(1, 1, params.t_end, dt, 0, seed=4)
        truth = simulate_full_system(model, grid, (np.ones(1), np.ones(1)))
        obs = generate_observations(truth, ARCTAN, grid.dU)
        series = run_filter("full", model, obs, params, ARCTAN, PHI_BUMP, dirac_prior(1.0, 1.0))
        assert 0.04 in series.snapshots
        pos, w = series.snapshots[0.04]
        assert len(pos) == 10 and w.sum() == pytest.approx(1.0)


class TestKalmanBucy:
    def test_no_observation_lyapunov_ode(self):
        # c = 0: variance solves P' = 2aP + sigma^2
        a, sigma = -0.5, 0.8
        dt = 1e-4
        n = 5000
        times = dt * np.arange(n + 1)
        obs = type("O", (), {})()
        from sffilter.filtering import ObservationPath

        obs = ObservationPath(times=times, r=np.zeros(n + 1), dr=np.zeros(n))
        kb = kalman_bucy_reference(a, sigma, 0.0, 0.0, 0.3, obs)
        p_exact = (0.3 - sigma**2 / (-2 * a)) * np.exp(2 * a * times) + sigma**2 / (-2 * a)
        assert np.max(np.abs(kb.var - p_exact)) < 5e-3

    def test_pure_observation_riccati(self):
        # sigma = 0, a = 0, c = 1: P_t = P0 / (1 + P0 t)
        dt = 1e-4
        n = 10000
        times = dt * np.arange(n + 1)
        from sffilter.filtering import ObservationPath

        obs = ObservationPath(times=times, r=np.zeros(n + 1), dr=np.zeros(n))
        p0 = 2.0
        kb = kalman_bucy_reference(0.0, 0.0, 1.0, 0.0, p0, obs)
        assert np.max(np.abs(kb.var - p0 / (1 + p0 * times))) < 1e-3

    def test_stationary_riccati_root(self):
        # a < 0: P_inf solves 2 a P + sigma^2 - c^2 P^2 = 0
        a, sigma, c = -1.0, 0.5, 1.0
        dt = 1e-3
        n = 20000
        times = dt * np.arange(n + 1)
        from sffilter.filtering import ObservationPath

        gen = np.random.default_rng(0)
        dr = gen.standard_normal(n) * math.sqrt(dt)
        obs = ObservationPath(times=times, r=np.concatenate([[0], np.cumsum(dr)]), dr=dr)
        kb = kalman_bucy_reference(a, sigma, c, 0.0, 1.0, obs)
        p_inf = (2 * a + math.sqrt(4 * a * a + 4 * c * c * sigma * sigma)) / (2 * c * c)
        assert kb.var[-1] == pytest.approx(p_inf, rel=1e-2)


class TestProbMetric:
    def test_identical_measures(self):
        mu = (np.array([0.0, 1.0]), np.array([0.5, 0.5]))
        res = prob_metric_d(mu, mu)
        assert res.value == 0.0
        assert res.tail_bound == pytest.approx(2.0 * 2.0**-20)

    def test_continuity_in_point_mass_location(self):
        base = (np.array([0.0]), np.array([1.0]))
        vals = [
            prob_metric_d(base, (np.array([x]), np.array([1.0]))).value
            for x in (1.0, 0.1, 0.01, 0.001)
        ]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-3

    def test_three_point_measures_direct_sum(self):
        mu = (np.array([-1.0, 0.0, 2.0]), np.array([0.2, 0.5, 0.3]))
        tau = (np.array([-0.5, 1.0, 3.0]), np.array([0.3, 0.3, 0.4]))
        res = prob_metric_d(mu, tau, family_size=12)

        expected = 0.0
        for i, phi in enumerate(metric_family(12), start=1):
            m1 = np.dot(mu[1], phi(mu[0]))
            m2 = np.dot(tau[1], phi(tau[0]))
            expected += abs(m1 - m2) / 2.0**i
        assert res.value == pytest.approx(expected, abs=1e-15)

    def test_family_norm_bound(self):
        xs = np.linspace(-10, 10, 10001)
        for k, phi in enumerate(metric_family(10), start=1):
            vals = phi(xs)
            deriv = np.gradient(vals, xs)
            assert np.max(np.abs(vals)) + np.max(np.abs(deriv)) <= 1.0 + 1e-3
