"""Tests for the exact MDP tier: solvers, empirical models, corrections."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from scaslab.tabular import (
    EmpiricalModels,
    InstanceTooLargeError,
    RegularizerSpec,
    TabularDataset,
    TabularMdp,
    TabularPolicy,
    ValueTable,
    brute_force_maximizer,
    closed_form_policy,
    empirical_models,
    kl_divergence,
    optimal_values,
    policy_evaluation,
    random_instance,
    regularizer_value,
    support_violation,
    value_aware_transition,
    verify_propositions,
)


def random_mdp(rng, n_states, n_actions, discount=0.9):
    return TabularMdp(
        transition=rng.dirichlet(np.ones(n_states), size=(n_states, n_actions)),
        reward=rng.normal(size=(n_states, n_actions)),
        discount=discount,
        initial_dist=np.full(n_states, 1.0 / n_states),
    )


def random_policy(rng, n_states, n_actions):
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))


class TestMdpValidation:
    def test_rows_must_sum_to_one(self):
        P = np.zeros((2, 1, 2))
        P[:, :, 0] = 0.9
        with pytest.raises(ValueError):
            TabularMdp(P, np.zeros((2, 1)), 0.9, np.array([1.0, 0.0]))

    def test_negative_probs_rejected(self):
        P = np.zeros((2, 1, 2))
        P[:, :, 0] = 1.5
        P[:, :, 1] = -0.5
        with pytest.raises(ValueError):
            TabularMdp(P, np.zeros((2, 1)), 0.9, np.array([1.0, 0.0]))

    def test_discount_must_be_below_one(self):
        P = np.ones((1, 1, 1))
        with pytest.raises(ValueError):
            TabularMdp(P, np.zeros((1, 1)), 1.0, np.array([1.0]))

    def test_initial_dist_checked(self):
        P = np.ones((1, 1, 1))
        with pytest.raises(ValueError):
            TabularMdp(P, np.zeros((1, 1)), 0.9, np.array([0.7]))

    def test_json_round_trip(self):
        mdp = random_mdp(np.random.default_rng(0), 4, 3)
        clone = TabularMdp.from_json(json.loads(json.dumps(mdp.to_json())))
        assert_array_equal(clone.transition, mdp.transition)
        assert_array_equal(clone.reward, mdp.reward)
        assert clone.discount == mdp.discount

    def test_dataset_round_trip(self):
        data = TabularDataset.from_transitions([(0, 1, 0.5, 2), (2, 0, -1.0, 0)])
        clone = TabularDataset.from_json(json.loads(json.dumps(data.to_json())))
        assert_array_equal(clone.states, data.states)
        assert_array_equal(clone.rewards, data.rewards)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            TabularDataset.from_transitions([])


class TestPolicyEvaluation:
    def test_single_state_geometric_series(self):
        mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.9, np.array([1.0]))
        pi = TabularPolicy(np.ones((1, 1)))
        assert_allclose(policy_evaluation(mdp, pi).v, [10.0], rtol=1e-12)

    def test_gamma_zero_is_expected_reward(self):
        rng = np.random.default_rng(4)
        mdp = random_mdp(rng, 5, 3, discount=0.0)
        pi = random_policy(rng, 5, 3)
        expected = (pi.probs * mdp.reward).sum(axis=1)
        assert_allclose(policy_evaluation(mdp, pi).v, expected, atol=1e-12)

    def test_matches_monte_carlo_rollouts(self):
        rng = np.random.default_rng(7)
        mdp = random_mdp(rng, 5, 2)
        pi = random_policy(rng, 5, 2)
        v = policy_evaluation(mdp, pi).v
        # 10,000 seeded rollouts from state 0; truncation bias ~ 0.9^200
        n_ep, horizon, s0 = 10_000, 200, 0
        returns = np.empty(n_ep)
        sim = np.random.default_rng(1234)
        for ep in range(n_ep):
            s, total, disc = s0, 0.0, 1.0
            for _ in range(horizon):
                a = sim.choice(2, p=pi.probs[s])
                total += disc * mdp.reward[s, a]
                disc *= mdp.discount
                s = sim.choice(5, p=mdp.transition[s, a])
            returns[ep] = total
        stderr = returns.std(ddof=1) / np.sqrt(n_ep)
        assert abs(returns.mean() - v[s0]) <= 3.0 * stderr

    def test_bellman_fixed_point_residual(self):
        rng = np.random.default_rng(11)
        mdp = random_mdp(rng, 30, 4)
        pi = random_policy(rng, 30, 4)
        v = policy_evaluation(mdp, pi, tol=1e-10).v
        backup = (pi.probs * (mdp.reward + mdp.discount * (mdp.transition @ v))).sum(axis=1)
        assert np.max(np.abs(v - backup)) <= 1e-10

    def test_nonstochastic_policy_rejected(self):
        mdp = random_mdp(np.random.default_rng(0), 3, 2)
        pi = TabularPolicy(np.full((3, 2), 0.5))
        pi.probs[0, 0] = 0.9  # break normalization behind the validator's back
        with pytest.raises(ValueError):
            policy_evaluation(mdp, pi)


class TestOptimalValues:
    def test_two_state_chain_hand_solve(self):
        # state 0 -> state 1 with reward 0; state 1 self-loops with reward 1
        P = np.zeros((2, 1, 2))
        P[0, 0, 1] = 1.0
        P[1, 0, 1] = 1.0
        mdp = TabularMdp(P, np.array([[0.0], [1.0]]), 0.5, np.array([1.0, 0.0]))
        # V*[1] = 1/(1-0.5) = 2, V*[0] = 0 + 0.5 * 2 = 1
        assert_allclose(optimal_values(mdp).v, [1.0, 2.0], atol=1e-9)

    def test_gamma_zero_is_myopic_max(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp(rng, 6, 4, discount=0.0)
        assert_allclose(optimal_values(mdp).v, mdp.reward.max(axis=1), atol=1e-12)

    def test_dominates_any_policy(self):
        rng = np.random.default_rng(9)
        mdp = random_mdp(rng, 8, 3)
        v_star = optimal_values(mdp).v
        for seed in range(5):
            pi = random_policy(np.random.default_rng(seed), 8, 3)
            assert np.all(v_star >= policy_evaluation(mdp, pi).v - 1e-8)


class TestKlDivergence:
    def test_identical_is_zero(self):
        assert kl_divergence(np.array([0.3, 0.7]), np.array([0.3, 0.7])) == 0.0

    def test_disjoint_support_is_infinite(self):
        assert kl_divergence(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == np.inf

    def test_half_quarter_example(self):
        got = kl_divergence(np.array([0.5, 0.5]), np.array([0.25, 0.75]))
        expected = 0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0)
        assert_allclose(got, expected, rtol=1e-14)
        assert_allclose(got, 0.14384103622589045, rtol=1e-12)

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError):
            kl_divergence(np.array([0.5, 0.6]), np.array([0.5, 0.5]))

    def test_zero_in_p_where_q_zero_is_fine(self):
        got = kl_divergence(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        assert got == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative_and_zero_on_self(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)
        assert kl_divergence(p, q) >= 0.0


class TestEmpiricalModels:
    def test_single_observed_pair(self):
        data = TabularDataset.from_transitions([(0, 0, 0.0, 1), (0, 0, 0.0, 1)])
        m = empirical_models((2, 1), data)
        assert m.dyn[0, 0, 1] == 1.0
        assert m.beta[0, 0] == 1.0

    def test_count_normalization(self):
        data = TabularDataset.from_transitions([(0, 0, 0.0, 1), (0, 1, 0.0, 2)])
        m = empirical_models((3, 2), data)
        assert_allclose(m.beta[0], [0.5, 0.5])
        assert m.state_trans[0, 1] == 0.5 and m.state_trans[0, 2] == 0.5

    def test_recovers_true_dynamics_with_enough_samples(self):
        rng = np.random.default_rng(21)
        mdp = random_mdp(rng, 4, 2)
        n = 10_000
        s = rng.integers(0, 4, size=n)
        a = rng.integers(0, 2, size=n)
        cdf = mdp.transition.cumsum(axis=2)
        s2 = (rng.random(n)[:, None] > cdf[s, a]).sum(axis=1)
        data = TabularDataset(s, a, np.zeros(n), s2)
        m = empirical_models((4, 2), data)
        counts = np.zeros((4, 2))
        np.add.at(counts, (s, a), 1.0)
        for si in range(4):
            for ai in range(2):
                if counts[si, ai] >= 200:
                    gap = np.max(np.abs(m.dyn[si, ai] - mdp.transition[si, ai]))
                    assert gap < 0.05

    def test_n_consistency_with_beta_dyn(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            inst = random_instance(rng, 5, 3, stochastic=True)
            m = inst.models
            for s in m.visited_states:
                recomposed = m.beta[s] @ m.dyn[s]
                assert np.max(np.abs(m.state_trans[s] - recomposed)) <= 1e-12

    def test_unvisited_rows_refuse_access(self):
        data = TabularDataset.from_transitions([(0, 0, 0.0, 1)])
        m = empirical_models((3, 2), data)
        assert list(m.visited_states) == [0]
        with pytest.raises(KeyError):
            m.beta_row(1)
        with pytest.raises(KeyError):
            m.state_trans_row(2)
        with pytest.raises(KeyError):
            m.dyn_row(0, 1)
        # undefined raw rows are NaN so silent reads poison downstream math
        assert np.all(np.isnan(m.beta[1]))

    def test_rebuild_is_identical(self):
        rng = np.random.default_rng(5)
        inst = random_instance(rng, 4, 3, stochastic=True)
        again = empirical_models((4, 3), inst.data)
        assert_array_equal(again.beta[again.visited], inst.models.beta[inst.models.visited])
        assert_array_equal(again.dyn, inst.models.dyn)

    def test_out_of_bounds_dataset_rejected(self):
        data = TabularDataset.from_transitions([(0, 0, 0.0, 5)])
        with pytest.raises(ValueError):
            empirical_models((3, 2), data)


def two_state_half_half():
    """Visited state 0 with N[0] = [0.5, 0.5] and V = (0, 1)."""
    data = TabularDataset.from_transitions([(0, 0, 0.0, 0), (0, 1, 0.0, 1)])
    models = empirical_models((2, 2), data)
    values = ValueTable(np.array([0.0, 1.0]))
    return data, models, values


class TestValueAwareTransition:
    def test_alpha_zero_reproduces_n(self):
        rng = np.random.default_rng(8)
        for stochastic in (False, True):
            inst = random_instance(rng, 5, 3, stochastic=stochastic)
            nstar = value_aware_transition(inst.models, inst.values, 0.0)
            vis = inst.models.visited
            assert np.max(np.abs(nstar.probs[vis] - inst.models.state_trans[vis])) <= 1e-14

    def test_sigmoid_worked_example(self):
        _, models, values = two_state_half_half()
        nstar = value_aware_transition(models, values, 1.0)
        e = np.e
        assert_allclose(nstar.row(0), [1.0 / (1.0 + e), e / (1.0 + e)], rtol=1e-12)
        assert_allclose(nstar.row(0), [0.26894, 0.73106], atol=5e-6)

    def test_z_matches_definition(self):
        rng = np.random.default_rng(13)
        inst = random_instance(rng, 6, 3, stochastic=True)
        alpha = 2.0
        nstar = value_aware_transition(inst.models, inst.values, alpha)
        for s in inst.models.visited_states:
            direct = np.dot(np.exp(alpha * inst.values.v), inst.models.state_trans[s])
            assert abs(nstar.z[s] - direct) <= 1e-12 * max(1.0, abs(direct))

    def test_support_preserved_exactly(self):
        rng = np.random.default_rng(17)
        inst = random_instance(rng, 6, 4, stochastic=True)
        nstar = value_aware_transition(inst.models, inst.values, 5.0)
        for s in inst.models.visited_states:
            assert_array_equal(nstar.row(s) > 0.0, inst.models.state_trans[s] > 0.0)

    def test_alpha_monotone_expected_value(self):
        rng = np.random.default_rng(19)
        inst = random_instance(rng, 6, 3, stochastic=True)
        v = inst.values.v
        for s in inst.models.visited_states:
            means = []
            for alpha in (0.0, 1.0, 2.0, 5.0, 10.0):
                nstar = value_aware_transition(inst.models, inst.values, alpha)
                means.append(float(nstar.row(s) @ v))
            assert all(b >= a - 1e-12 for a, b in zip(means, means[1:]))

    def test_maximizes_value_kl_tradeoff(self):
        # N* should maximize E_nu[V] - (1/alpha) KL(nu || N) over the simplex
        rng = np.random.default_rng(23)
        inst = random_instance(rng, 5, 3, stochastic=True)
        alpha = 3.0
        nstar = value_aware_transition(inst.models, inst.values, alpha)
        v = inst.values.v

        def objective(nu, n_row):
            mask = nu > 0.0
            kl = np.sum(nu[mask] * np.log(nu[mask] / n_row[mask]))
            return float(nu @ v - kl / alpha)

        for s in inst.models.visited_states:
            n_row = inst.models.state_trans[s]
            support = np.flatnonzero(n_row)
            best = objective(nstar.row(s), n_row)
            for _ in range(2000):
                nu = np.zeros_like(n_row)
                nu[support] = rng.dirichlet(np.ones(support.size))
                assert objective(nu, n_row) <= best + 1e-9


class TestClosedFormPolicy:
    def test_alpha_zero_is_behavior(self):
        rng = np.random.default_rng(29)
        inst = random_instance(rng, 5, 3, stochastic=False)
        pi = closed_form_policy(inst.models, inst.values, 0.0)
        vis = inst.models.visited
        assert_allclose(pi.probs[vis], inst.models.beta[vis], atol=1e-15)

    def test_sigmoid_worked_example(self):
        data = TabularDataset.from_transitions([(0, 0, 0.0, 0), (0, 1, 0.0, 1)])
        models = empirical_models((2, 2), data)
        values = ValueTable(np.array([0.0, 1.0]))
        pi = closed_form_policy(models, values, 1.0)
        e = np.e
        assert_allclose(pi.probs[0], [1.0 / (1.0 + e), e / (1.0 + e)], rtol=1e-12)

    def test_induces_the_corrected_transition(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            inst = random_instance(rng, 6, 4, stochastic=False)
            alpha = float(rng.uniform(0.0, 6.0))
            pi = closed_form_policy(inst.models, inst.values, alpha)
            nstar = value_aware_transition(inst.models, inst.values, alpha)
            for s in inst.models.visited_states:
                induced = pi.probs[s] @ inst.models.dyn[s]
                assert np.max(np.abs(induced - nstar.row(s))) <= 1e-10

    def test_requires_deterministic_dynamics(self):
        rng = np.random.default_rng(37)
        inst = random_instance(rng, 5, 3, stochastic=True)
        if inst.models.is_deterministic():  # pragma: no cover - samples are stochastic
            pytest.skip("sampled dataset happened to be deterministic")
        with pytest.raises(ValueError):
            closed_form_policy(inst.models, inst.values, 1.0)

    def test_support_never_leaves_behavior(self):
        rng = np.random.default_rng(41)
        inst = random_instance(rng, 6, 4, stochastic=False)
        pi = closed_form_policy(inst.models, inst.values, 5.0)
        assert support_violation(pi, inst.models) == 0.0


class TestRegularizerValue:
    def test_disjoint_support_is_minus_infinity(self):
        data = TabularDataset.from_transitions([(0, 0, 0.0, 1)])
        models = empirical_models((2, 2), data)
        values = ValueTable(np.zeros(2))
        spec = RegularizerSpec("rbar", 1.0, values)
        pi = TabularPolicy(np.array([[0.0, 1.0], [0.5, 0.5]]))  # all mass off-behavior
        assert regularizer_value(spec, pi, models, data) == -np.inf

    def test_alpha_zero_rbar_is_plain_likelihood(self):
        # independent hand summation on a 3-state instance
        rng = np.random.default_rng(43)
        inst = random_instance(rng, 3, 2, stochastic=True)
        pi = TabularPolicy(rng.dirichlet(np.ones(2), size=3))
        spec = RegularizerSpec("rbar", 0.0, inst.values)
        got = regularizer_value(spec, pi, inst.models, inst.data)
        total = 0.0
        for s, a, r, s2 in zip(
            inst.data.states, inst.data.actions, inst.data.rewards, inst.data.next_states
        ):
            like = sum(pi.probs[s, b] * inst.models.dyn[s, b, s2] for b in range(2))
            total += np.log(like)
        assert_allclose(got, total / len(inst.data), rtol=1e-12)

    def test_closed_form_attains_brute_force_value(self):
        rng = np.random.default_rng(47)
        for variant in ("rbar", "rbar1"):
            inst = random_instance(rng, 5, 3, stochastic=False)
            spec = RegularizerSpec(variant, 2.0, inst.values)
            pi_star = closed_form_policy(inst.models, inst.values, 2.0)
            pi_hat = brute_force_maximizer(spec, inst.models, inst.data, grid=50)
            v_star = regularizer_value(spec, pi_star, inst.models, inst.data)
            v_hat = regularizer_value(spec, pi_hat, inst.models, inst.data)
            assert abs(v_star - v_hat) <= 1e-9

    def test_rbar_weights_match_normalizer_definition(self):
        rng = np.random.default_rng(53)
        inst = random_instance(rng, 4, 2, stochastic=True)
        alpha = 1.5
        pi = TabularPolicy(rng.dirichlet(np.ones(2), size=4))
        spec = RegularizerSpec("rbar", alpha, inst.values)
        got = regularizer_value(spec, pi, inst.models, inst.data)
        z = value_aware_transition(inst.models, inst.values, alpha).z
        total = 0.0
        for s, s2 in zip(inst.data.states, inst.data.next_states):
            like = float(pi.probs[s] @ inst.models.dyn[s, :, s2])
            weight = np.exp(alpha * inst.values.v[s2]) / z[s]
            total += weight * np.log(like)
        assert_allclose(got, total / len(inst.data), rtol=1e-10)


class TestBruteForceMaximizer:
    def test_matches_closed_form_deterministic(self):
        rng = np.random.default_rng(59)
        for variant in ("rbar", "rbar1"):
            inst = random_instance(rng, 6, 4, stochastic=False)
            spec = RegularizerSpec(variant, 5.0, inst.values)
            pi_hat = brute_force_maximizer(spec, inst.models, inst.data, grid=50)
            pi_star = closed_form_policy(inst.models, inst.values, 5.0)
            vis = inst.models.visited
            assert np.max(np.abs(pi_hat.probs[vis] - pi_star.probs[vis])) <= 2.0 / 50.0

    def test_variants_agree_deterministic(self):
        rng = np.random.default_rng(61)
        inst = random_instance(rng, 5, 3, stochastic=False)
        a = brute_force_maximizer(RegularizerSpec("rbar", 3.0, inst.values), inst.models, inst.data)
        b = brute_force_maximizer(RegularizerSpec("rbar1", 3.0, inst.values), inst.models, inst.data)
        vis = inst.models.visited
        assert np.max(np.abs(a.probs[vis] - b.probs[vis])) <= 2.0 / 50.0

    def test_stochastic_stays_in_support(self):
        rng = np.random.default_rng(67)
        for variant in ("rbar", "rbar1"):
            inst = random_instance(rng, 6, 3, stochastic=True)
            spec = RegularizerSpec(variant, 5.0, inst.values)
            pi_hat = brute_force_maximizer(spec, inst.models, inst.data, grid=50)
            assert support_violation(pi_hat, inst.models) <= 1e-6

    def test_size_preconditions(self):
        rng = np.random.default_rng(71)
        inst = random_instance(rng, 5, 3, stochastic=True)
        spec = RegularizerSpec("rbar", 1.0, inst.values)
        with pytest.raises(InstanceTooLargeError):
            brute_force_maximizer(spec, inst.models, inst.data, grid=500)
        big = random_instance(rng, 9, 3, stochastic=True)
        with pytest.raises(InstanceTooLargeError):
            brute_force_maximizer(RegularizerSpec("rbar", 1.0, big.values), big.models, big.data)


class TestSupportViolation:
    def test_behavior_itself_is_zero(self):
        rng = np.random.default_rng(73)
        inst = random_instance(rng, 5, 3, stochastic=False)
        vis = inst.models.visited
        probs = np.full_like(inst.models.beta, 1.0 / 3.0)
        probs[vis] = inst.models.beta[vis]
        assert support_violation(TabularPolicy(probs), inst.models) == 0.0

    def test_uniform_against_two_of_four(self):
        data = TabularDataset.from_transitions([(0, 0, 0.0, 0), (0, 1, 0.0, 0)])
        models = empirical_models((1, 4), data)
        pi = TabularPolicy(np.full((1, 4), 0.25))
        assert support_violation(pi, models) == 0.5


class TestVerifyPropositions:
    def test_deterministic_suite_passes(self):
        rep = verify_propositions(8, 6, 4, grid=50, alphas=(0.0, 1.0, 5.0), seed=101)
        assert rep.ok
        assert rep.max_argmax_gap <= 2.0 / 50.0
        assert rep.max_alignment_kl <= 1e-10
        assert rep.max_alpha_zero_gap <= 1e-14
        assert len(rep.lines) == 24

    def test_stochastic_suite_passes(self):
        rep = verify_propositions(8, 6, 4, alphas=(1.0, 5.0), stochastic=True, seed=103)
        assert rep.ok
        assert rep.max_support_violation <= 1e-6

    def test_oversized_request_rejected(self):
        with pytest.raises(InstanceTooLargeError):
            verify_propositions(1, 20, 3)

    def test_json_summary_shape(self):
        rep = verify_propositions(2, 4, 2, alphas=(1.0,), seed=5)
        doc = rep.to_json()
        assert set(doc) == {
            "instances",
            "max_support_violation",
            "max_alignment_kl",
            "max_argmax_gap",
        }

    def test_instances_vary_in_size(self):
        rng = np.random.default_rng(0)
        sizes = set()
        for _ in range(10):
            inst = random_instance(rng, int(rng.integers(3, 7)), 3, stochastic=False)
            sizes.add(inst.mdp.n_states)
        assert len(sizes) > 1
