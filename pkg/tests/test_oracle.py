"""Brute-force reference estimators and the finite-tree DP."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynrisk.envs import (
    ConstantCostEnv,
    DeterministicPolicy,
    StatArbEnv,
    StatArbSpec,
    load_bundled_tree,
)
from dynrisk.oracle import (
    FiniteTreeMdp,
    TreeError,
    discrete_cvar,
    empirical_cvar,
    empirical_cvar_axis,
    empirical_spectral,
    empirical_var,
    empirical_var_axis,
    nested_dynamic_risk,
    tree_dynamic_risk,
    tree_static_precommitment,
)
from dynrisk.risk import Spectrum


class TestEmpiricalVar:
    def test_uniform_deck(self):
        assert empirical_var(np.arange(1, 11), 0.8) == 8.0

    def test_constant_samples(self):
        assert empirical_var([3.3] * 7, 0.5) == 3.3

    def test_left_continuous_at_exact_mass(self):
        # Cumulative mass reaches 0.9 exactly at -2, so the smallest y
        # with F(y) >= 0.9 is -2 under the left-continuous convention.
        samples = [-2.0] * 90 + [-1.0] * 9 + [2.0]
        assert empirical_var(samples, 0.9) == -2.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            empirical_var([], 0.5)


class TestEmpiricalCvar:
    def test_known_tail_average(self):
        samples = [-2.0] * 90 + [-1.0] * 9 + [2.0]
        assert empirical_cvar(samples, 0.9) == pytest.approx(-0.7, abs=1e-12)

    def test_constant(self):
        assert empirical_cvar([2.5] * 4, 0.8) == pytest.approx(2.5)

    def test_uniform_deck_fractional_weighting(self):
        assert empirical_cvar(np.arange(1, 11), 0.8) == pytest.approx(9.5)

    def test_not_a_topk_mean(self):
        # alpha=0.75 on 10 points straddles an atom: exact integral gives
        # 0.5 weight to the 8th order statistic, not a plain top-3 mean.
        got = empirical_cvar(np.arange(1, 11), 0.75)
        assert got == pytest.approx((0.5 * 8 + 9 + 10) / 2.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            empirical_cvar([], 0.5)

    def test_axis_version_matches(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(11, 57))
        out = empirical_cvar_axis(a, 0.8)
        ref = [empirical_cvar(row, 0.8) for row in a]
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_var_axis_version_matches(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(9, 41))
        out = empirical_var_axis(a, 0.7)
        ref = [empirical_var(row, 0.7) for row in a]
        np.testing.assert_allclose(out, ref, atol=0)


class TestEmpiricalSpectral:
    def test_one_atom_equals_cvar(self):
        y = np.random.default_rng(0).normal(size=40)
        s = Spectrum.cvar(0.8)
        assert empirical_spectral(y, s) == pytest.approx(empirical_cvar(y, 0.8))

    def test_two_atom_combination(self):
        samples = [-2.0] * 90 + [-1.0] * 9 + [2.0]
        s = Spectrum((0.5, 0.9), (0.5, 0.5))
        want = 0.5 * empirical_cvar(samples, 0.5) + 0.5 * (-0.7)
        assert empirical_spectral(samples, s) == pytest.approx(want, abs=1e-12)

    def test_constant(self):
        s = Spectrum((0.5, 0.9), (0.4, 0.6))
        assert empirical_spectral([1.5] * 8, s) == pytest.approx(1.5)


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    alpha=st.floats(0.05, 0.95),
    gamma=st.floats(-10, 10),
    beta=st.floats(0.1, 5.0),
)
def test_cvar_coherence_properties(seed, alpha, gamma, beta):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 80))
    x = rng.normal(size=n) * rng.uniform(0.5, 2.0)
    y = rng.normal(size=n)
    assert empirical_cvar(x, alpha) >= empirical_var(x, alpha) - 1e-12
    assert empirical_cvar(x + gamma, alpha) == pytest.approx(
        empirical_cvar(x, alpha) + gamma, abs=1e-9
    )
    assert empirical_cvar(beta * x, alpha) == pytest.approx(
        beta * empirical_cvar(x, alpha), rel=1e-9, abs=1e-9
    )
    # Subadditivity for paired (not comonotone by construction) samples.
    assert empirical_cvar(x + y, alpha) <= (
        empirical_cvar(x, alpha) + empirical_cvar(y, alpha) + 1e-9
    )


class TestTreeDp:
    def test_bundled_tree_dynamic_plan_is_up_up(self):
        tree = load_bundled_tree()
        for alpha in (0.7, 0.75, 0.85, 0.99):
            _, policy = tree_dynamic_risk(tree, Spectrum.cvar(alpha))
            assert policy[0] == 0 and policy[2] == 0

    def test_static_precommitment_picks_up_down(self):
        tree = load_bundled_tree()
        plan, risk, risks = tree_static_precommitment(tree, 0.9)
        assert plan == (0, 1)
        assert risk == pytest.approx(-0.7, abs=1e-12)
        assert risks[(0, 0)] == pytest.approx(0.0, abs=1e-12)

    def test_time_consistency_witness(self):
        # The static optimum (up, down) disagrees with the dynamic DP
        # optimum (up, up); both facts asserted together.
        tree = load_bundled_tree()
        plan, _, _ = tree_static_precommitment(tree, 0.9)
        vals, policy = tree_dynamic_risk(tree, Spectrum.cvar(0.9))
        assert plan == (0, 1)
        assert (policy[0], policy[2]) == (0, 0)
        assert vals[0] == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_spectrum_matches_expectation_dp(self):
        tree = load_bundled_tree()
        vals, _ = tree_dynamic_risk(tree, Spectrum((1e-6,), (1.0,)))
        # Expectation DP by hand: up' continuation min(0, -0.7) = -0.7,
        # root = 0.9 * (-2) + 0.1 * (-0.7).
        assert vals[0] == pytest.approx(-1.87, abs=1e-3)

    def test_depth_one_deterministic_edge(self):
        mdp = FiniteTreeMdp(
            depth={0: 0, 1: 1},
            actions={0: [[(1.0, 1, 2.5)]], 1: []},
        )
        vals, policy = tree_dynamic_risk(mdp, Spectrum.cvar(0.5))
        assert vals[0] == pytest.approx(2.5)
        assert policy[0] == 0

    def test_bad_probabilities_rejected(self):
        with pytest.raises(TreeError, match="probabilities"):
            FiniteTreeMdp(
                depth={0: 0, 1: 1},
                actions={0: [[(0.5, 1, 0.0)]], 1: []},
            )

    def test_mixed_leaf_depths_rejected(self):
        with pytest.raises(TreeError, match="mixed depths"):
            FiniteTreeMdp(
                depth={0: 0, 1: 1, 2: 2},
                actions={0: [[(1.0, 1, 0.0)], [(1.0, 2, 0.0)]], 1: [], 2: []},
            )

    def test_file_roundtrip(self, tmp_path):
        src = load_bundled_tree()
        path = tmp_path / "tree.txt"
        lines = []
        for node, depth in sorted(src.depth.items()):
            lines.append(f"node {node} {depth}")
        for node, acts in sorted(src.actions.items()):
            for a, edges in enumerate(acts):
                for p, child, cost in edges:
                    lines.append(f"edge {node} {a} {child} {p} {cost}")
        path.write_text("\n".join(lines), encoding="utf-8")
        again = FiniteTreeMdp.from_file(path)
        assert again.T == src.T
        assert tree_dynamic_risk(again, Spectrum.cvar(0.9))[0][0] == pytest.approx(
            tree_dynamic_risk(src, Spectrum.cvar(0.9))[0][0]
        )


class TestDiscreteCvar:
    def test_matches_paper_example(self):
        got = discrete_cvar([-2.0, -1.0, 2.0], [0.9, 0.09, 0.01], 0.9)
        assert got == pytest.approx(-0.7, abs=1e-12)

    def test_probabilities_must_sum(self):
        with pytest.raises(ValueError, match="sum to 1"):
            discrete_cvar([1.0, 2.0], [0.5, 0.4], 0.5)


class TestNestedDynamicRisk:
    def test_constant_cost_env(self):
        env = ConstantCostEnv(T=3, cost=0.4)
        policy = DeterministicPolicy([0.0])
        states = np.array([[0.0, 0.0]])
        val = nested_dynamic_risk(
            env, policy, states, period=0, inner_M=50, s=Spectrum.cvar(0.8), seed=0
        )
        assert val[0] == pytest.approx(3 * 0.4, abs=1e-9)

    def test_single_period_equals_empirical_spectral(self):
        # T=1 and a matching rng stream: the estimate is exactly the
        # empirical spectral risk of the direct cost draws.
        spec = StatArbSpec(T=1, q0="uniform")
        env = StatArbEnv(spec)
        policy = DeterministicPolicy([0.0])
        state = np.array([[0.0, 1.1, 2.0]])
        spectrum = Spectrum.cvar(0.8)
        M, seed = 4001, 9
        val = nested_dynamic_risk(env, policy, state, period=0, inner_M=M,
                                  s=spectrum, seed=seed)
        rng = np.random.default_rng((seed, 0))
        rep = np.repeat(state, M, axis=0)
        z = rng.standard_normal((M, env.action_dim))
        eps = rng.standard_normal((M, env.noise_dim))
        raw = policy.raw_actions(rep, z)
        _, costs = env.step_vec(0, rep, raw, eps)
        assert val[0] == pytest.approx(empirical_spectral(costs, spectrum), abs=1e-12)

    def test_deterministic_given_seed(self):
        spec = StatArbSpec(T=2, q0="uniform")
        env = StatArbEnv(spec)
        policy = DeterministicPolicy([0.0])
        states = np.array([[0.0, 1.0, 3.0]])
        a = nested_dynamic_risk(env, policy, states, 0, 64, Spectrum.cvar(0.8), seed=5)
        b = nested_dynamic_risk(env, policy, states, 0, 64, Spectrum.cvar(0.8), seed=5)
        assert a[0] == b[0]

    def test_inner_m_validation(self):
        env = ConstantCostEnv()
        with pytest.raises(ValueError, match="inner_M"):
            nested_dynamic_risk(env, DeterministicPolicy([0.0]),
                                np.array([[0.0, 0.0]]), 0, 1, Spectrum.cvar(0.5), 0)
