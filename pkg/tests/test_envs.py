"""Market simulators: exact transitions, bookkeeping, and statistics."""

import math

import numpy as np
import pytest

from dynrisk.envs import (
    ConstantCostEnv,
    DeterministicPolicy,
    PortfolioEnv,
    PortfolioSpec,
    StatArbEnv,
    StatArbSpec,
    TreeEnv,
    VecmEnv,
    VecmSpec,
    episode,
    load_bundled_tree,
    load_vecm_spec,
    ou_stationary_std,
    ou_step,
    simulate_batch,
    vecm_step,
)
from dynrisk.envs.vecm import VecmConfigError


class TestOuStep:
    def test_deterministic_decay(self):
        spec = StatArbSpec(T=2, kappa=2.0, mu=1.0, sigma=0.0, dt=math.log(2) / 2)
        assert ou_step(2.0, spec, 0.0) == pytest.approx(1.5)

    def test_fixed_point_at_mean(self):
        spec = StatArbSpec(T=4, sigma=0.0, dt=0.37)
        assert ou_step(1.0, spec, 0.0) == pytest.approx(1.0)

    def test_monte_carlo_mean(self):
        spec = StatArbSpec(T=5)
        rng = np.random.default_rng(0)
        z = rng.standard_normal(10**6)
        out = ou_step(np.full(10**6, 2.0), spec, z)
        want = spec.mu + (2.0 - spec.mu) * math.exp(-spec.kappa * spec.dt)
        tol = 3.0 * ou_stationary_std(spec) / 1e3
        assert abs(out.mean() - want) < tol

    def test_stationary_variance(self):
        # 10^4 chains of 100 steps started from the stationary law stay
        # stationary, so pooled samples estimate sigma^2 / (2 kappa).
        spec = StatArbSpec(T=5)
        rng = np.random.default_rng(1)
        sd = ou_stationary_std(spec)
        s = spec.mu + sd * rng.standard_normal(10_000)
        samples = []
        for _ in range(100):
            s = ou_step(s, spec, rng.standard_normal(s.size))
            samples.append(s.copy())
        var = np.var(np.concatenate(samples))
        assert abs(var - spec.sigma**2 / (2 * spec.kappa)) < 0.02 * sd**2


class TestStatArbEnv:
    def test_zero_trade_zero_inventory_costs_vanish(self):
        spec = StatArbSpec(T=4, sigma=0.0)
        env = StatArbEnv(spec)
        batch = episode(env, DeterministicPolicy([0.0]), np.random.default_rng(0))
        np.testing.assert_allclose(batch.costs, 0.0, atol=1e-15)

    def test_buy_one_then_hold_hand_trace(self):
        # Deterministic price pinned at 1: buying one unit costs 1.005,
        # liquidation at the horizon recovers 1 minus the 0.5 penalty.
        spec = StatArbSpec(T=2, sigma=0.0, mu=1.0)
        env = StatArbEnv(spec)

        class BuyOnce:
            def raw_actions(self, states, z):
                states = np.atleast_2d(states)
                trade = np.where(states[:, 0] == 0.0, 1.0, 0.0)
                # invert the sigmoid squash so the executed trade is exact
                frac = (trade - spec.a_min) / (spec.a_max - spec.a_min)
                return np.log(frac / (1 - frac))[:, None]

        batch = episode(env, BuyOnce(), np.random.default_rng(0))
        assert batch.costs[0, 0] == pytest.approx(1.005, abs=1e-12)
        assert batch.costs[0, 1] == pytest.approx(-0.5, abs=1e-12)

    def test_costs_telescope_to_terminal_wealth(self):
        spec = StatArbSpec(T=5, q0="uniform")
        env = StatArbEnv(spec)
        policy = DeterministicPolicy([0.7])
        batch = simulate_batch(env, policy, 32, seed=4)
        # Recompute wealth from the recursion directly.
        for b in range(batch.B):
            y = 0.0
            for t in range(batch.T):
                price = batch.states[b, t, 1]
                q_now, q_next = batch.states[b, t, 2], batch.states[b, t + 1, 2]
                executed = q_next - q_now
                y = y - executed * price - executed**2 * spec.phi1
            q_T = batch.states[b, -1, 2]
            y = y + q_T * batch.states[b, -1, 1] - q_T**2 * spec.phi2
            assert batch.costs[b].sum() == pytest.approx(-y, abs=1e-10)

    def test_actions_and_inventory_stay_bounded(self):
        spec = StatArbSpec(T=6, q0="uniform")
        env = StatArbEnv(spec)

        class Wild:
            def raw_actions(self, states, z):
                return 100.0 * np.atleast_2d(z)[:, :1]

        batch = simulate_batch(env, Wild(), 64, seed=9)
        # sigmoid saturates to the closed endpoints in floating point
        assert (batch.actions >= spec.a_min).all() and (batch.actions <= spec.a_max).all()
        inv = batch.states[:, :, 2]
        assert (inv >= spec.q_min).all() and (inv <= spec.q_max).all()

    def test_initial_state_modes(self):
        env0 = StatArbEnv(StatArbSpec(T=2, q0="zero"))
        env1 = StatArbEnv(StatArbSpec(T=2, q0="uniform"))
        rng = np.random.default_rng(0)
        q0s = [env0.draw_initial(rng)[2] for _ in range(50)]
        assert set(q0s) == {0.0}
        rng = np.random.default_rng(0)
        q1s = np.array([env1.draw_initial(rng)[2] for _ in range(200)])
        assert q1s.min() < -3 and q1s.max() > 3

    def test_invalid_spec(self):
        with pytest.raises(ValueError, match="kappa"):
            StatArbSpec(kappa=0.0)
        with pytest.raises(ValueError, match="q_min"):
            StatArbSpec(q_min=2.0, q_max=-2.0)


class TestPortfolioEnv:
    def test_riskless_flat_asset(self):
        spec = PortfolioSpec(T=4, dynamics=("gbm",), mu=(0.0,), sigma=(0.0,))
        env = PortfolioEnv(spec)
        batch = episode(env, DeterministicPolicy([0.0]), np.random.default_rng(0))
        np.testing.assert_allclose(batch.states[0, :, -1], 1.0, atol=1e-14)
        np.testing.assert_allclose(batch.costs, 0.0, atol=1e-14)

    @pytest.mark.parametrize("tag", ["gbm", "exp_ou"])
    def test_mean_price_matches_exponential_drift(self, tag):
        spec = PortfolioSpec(
            T=12, dynamics=(tag,) * 3, mu=(0.03, 0.06, 0.09), sigma=(0.06, 0.12, 0.18)
        )
        env = PortfolioEnv(spec)
        batch = simulate_batch(env, DeterministicPolicy([0.0, 0.0, 0.0]), 100_000, seed=2)
        prices_T = batch.states[:, -1, 1:4]
        want = np.exp(np.asarray(spec.mu) * spec.T * spec.dt)
        se = prices_T.std(axis=0) / math.sqrt(batch.B)
        assert (np.abs(prices_T.mean(axis=0) - want) < 3 * se).all()

    def test_weights_on_simplex(self):
        spec = PortfolioSpec(T=3)
        env = PortfolioEnv(spec)

        class Noisy:
            def raw_actions(self, states, z):
                return 3.0 * np.atleast_2d(z)

        batch = simulate_batch(env, Noisy(), 128, seed=3)
        w = batch.actions
        assert (w >= 0).all()
        np.testing.assert_allclose(w.sum(axis=2), 1.0, atol=1e-12)

    def test_wealth_positive_without_leverage(self):
        spec = PortfolioSpec(T=12)
        env = PortfolioEnv(spec)

        class Noisy:
            def raw_actions(self, states, z):
                return 2.0 * np.atleast_2d(z)

        batch = simulate_batch(env, Noisy(), 500, seed=5)
        assert (batch.states[:, :, -1] > 0).all()

    def test_correlated_shock_correlation(self):
        spec = PortfolioSpec(T=1, dt=1.0 / 252)
        env = PortfolioEnv(spec)
        batch = simulate_batch(env, DeterministicPolicy([0.0] * 3), 200_000, seed=6)
        logret = np.log(batch.states[:, 1, 1:4] / batch.states[:, 0, 1:4])
        corr = np.corrcoef(logret.T)
        off = corr[np.triu_indices(3, k=1)]
        assert (np.abs(off - 0.2) < 0.02).all()

    def test_riskfree_slot(self):
        spec = PortfolioSpec(T=2, include_riskfree=True)
        env = PortfolioEnv(spec)
        assert env.action_dim == 4
        # All weight in the risk-free slot freezes wealth.
        policy = DeterministicPolicy([-30.0, -30.0, -30.0, 30.0])
        batch = episode(env, policy, np.random.default_rng(0))
        np.testing.assert_allclose(batch.states[0, :, -1], 1.0, atol=1e-9)

    def test_rho_validation(self):
        with pytest.raises(ValueError, match="positive semi-definite"):
            PortfolioSpec(dynamics=("gbm",) * 3, mu=(0,) * 3, sigma=(0.1,) * 3, rho=-0.9)


class TestVecm:
    def test_zero_dynamics_fixed_point(self):
        spec = VecmSpec(Pi=np.zeros((2, 2)), Sigma_u=np.zeros((2, 2)),
                        C_det=np.zeros(2), T=3, steps_per_period=2)
        y = vecm_step(np.array([0.3, -0.1]), spec, np.random.default_rng(0))
        np.testing.assert_allclose(y, [0.3, -0.1], atol=1e-15)

    def test_deterministic_drift_accumulates(self):
        c = np.array([0.01, -0.02])
        spec = VecmSpec(Pi=np.zeros((2, 2)), Sigma_u=np.zeros((2, 2)),
                        C_det=c, T=3, steps_per_period=2)
        y = np.zeros(2)
        rng = np.random.default_rng(0)
        for _ in range(5):
            y = vecm_step(y, spec, rng)
        np.testing.assert_allclose(y, 5 * c, atol=1e-14)

    def test_bundled_estimates_load_and_are_psd(self):
        spec = load_vecm_spec()
        assert spec.d == 8
        w = np.linalg.eigvalsh(spec.Sigma_u)
        assert w.min() >= -1e-15
        # Symmetrisation changed the printed matrix only marginally.
        assert abs(spec.Sigma_u[6, 5] - spec.Sigma_u[5, 6]) < 1e-15

    def test_one_step_noise_covariance(self):
        spec = load_vecm_spec()
        env = VecmEnv(spec)
        rng = np.random.default_rng(0)
        eps = rng.standard_normal((10**6, spec.d))
        u = eps @ env._L.T
        cov = np.cov(u.T)
        rel = np.abs(cov - spec.Sigma_u) / np.abs(spec.Sigma_u)
        assert rel.max() < 0.05

    def test_paths_stay_bounded(self):
        spec = load_vecm_spec()
        rng = np.random.default_rng(3)
        y = np.zeros((2000, 8))
        L = np.linalg.cholesky(spec.Sigma_u + 1e-12 * np.eye(8))
        m = 0.0
        for _ in range(252):
            u = rng.standard_normal((2000, 8)) @ L.T
            y = y + y @ spec.Pi.T + spec.C_det + u
            m = max(m, np.abs(y).max())
        assert m < 5.0

    def test_asymmetric_sigma_rejected(self):
        sig = np.eye(2)
        sig[0, 1] = 0.5
        with pytest.raises(VecmConfigError, match="symmetric"):
            VecmSpec(Pi=np.zeros((2, 2)), Sigma_u=sig, C_det=np.zeros(2))


class TestSimulateBatch:
    def test_same_seed_identical(self):
        env = StatArbEnv(StatArbSpec(T=3, q0="uniform"))
        policy = DeterministicPolicy([0.3])
        a = simulate_batch(env, policy, 8, seed=7)
        b = simulate_batch(env, policy, 8, seed=7)
        assert (a.states == b.states).all()
        assert (a.costs == b.costs).all()

    def test_single_episode_is_substream_zero(self):
        env = StatArbEnv(StatArbSpec(T=3, q0="uniform"))
        policy = DeterministicPolicy([0.3])
        batch = simulate_batch(env, policy, 1, seed=7)
        single = episode(env, policy, np.random.default_rng((7, 0)))
        assert (batch.states == single.states).all()
        assert (batch.costs == single.costs).all()

    def test_constant_cost_batch(self):
        env = ConstantCostEnv(T=2, cost=1.3)
        batch = simulate_batch(env, DeterministicPolicy([0.0]), 5, seed=0)
        np.testing.assert_allclose(batch.costs, 1.3)

    def test_transition_counter(self):
        env = ConstantCostEnv(T=4)
        simulate_batch(env, DeterministicPolicy([0.0]), 10, seed=0)
        assert env.transition_count == 40

    def test_batch_size_validation(self):
        env = ConstantCostEnv()
        with pytest.raises(ValueError, match="B must be"):
            simulate_batch(env, DeterministicPolicy([0.0]), 0, seed=0)


class TestTreeEnv:
    def test_up_up_distribution(self):
        env = TreeEnv(load_bundled_tree())
        policy = DeterministicPolicy([0.0])  # action 0 = up everywhere
        batch = simulate_batch(env, policy, 4000, seed=1)
        totals = batch.costs.sum(axis=1)
        # Terminal cost -2 w.p. 0.9, 0 w.p. 0.1.
        assert set(np.round(np.unique(totals), 9)) == {-2.0, 0.0}
        assert abs((totals == -2.0).mean() - 0.9) < 0.02
