import itertools
import math
import unittest
import warnings

import numpy as np

from congestexp.errors import InvariantViolation, SchemaError
from congestexp.factored_policy import ActionLevelPolicy, FactoredPolicy
from congestexp.game_model import (
    expected_round_values,
    game_from_tables,
    random_game,
    sample_stochastic_rewards,
)
from congestexp.learners import (
    FULL_INFO_EXPECTED,
    SEMI_BANDIT,
    SEMI_BANDIT_ACTION_LEVEL,
    ConstantSchedule,
    EstimateVector,
    Learner,
    LearnerConfig,
    LearnerState,
    NashConvergenceMonitor,
    PowerDecaySchedule,
    ScheduleConfig,
    TheoremHypothesisWarning,
    action_level_estimate,
    build_schedule,
    estimate_action_level,
    estimate_fullinfo_expected,
    estimate_fullinfo_stochastic,
    estimate_semibandit,
    init_near_equilibrium,
    quadratic_term,
    quadratic_term_action_level,
    theorem5_beta,
    uniform_state,
    update,
)

G1_TABLES = [[1.0, 0.2], [0.8, 0.3]]


class TestEstimates(unittest.TestCase):
    def test_semibandit_examples(self):
        est = estimate_semibandit((0,), {0: 0.7}, [0.5, 0.5])
        np.testing.assert_allclose(est.values, [0.4, 1.0])

        est = estimate_semibandit((0, 2), {0: 1.0, 2: 0.0}, [0.8, 0.6, 0.6])
        np.testing.assert_allclose(est.values, [1.0, 1.0, 1.0 - 1.0 / 0.6])

    def test_semibandit_zero_probability(self):
        with self.assertRaises(InvariantViolation):
            estimate_semibandit((1,), {1: 0.5}, [1.0, 0.0])

    def test_semibandit_bounded_by_one(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            q = rng.uniform(0.05, 1.0, size=4)
            observed = rng.uniform(0.0, 1.0, size=4)
            est = estimate_semibandit((1, 3), observed, q)
            self.assertTrue(np.all(est.values <= 1.0))

    def test_fullinfo_estimates(self):
        game = game_from_tables(G1_TABLES, k=1)
        q = np.array([[0.5, 0.5], [0.5, 0.5]])
        est = estimate_fullinfo_expected(game, 0, q)
        np.testing.assert_allclose(est.values, [0.6, 0.55])
        est = estimate_fullinfo_stochastic([1.0, 0.0])
        self.assertEqual(est.values.tolist(), [1.0, 0.0])
        with self.assertRaises(InvariantViolation):
            estimate_fullinfo_stochastic([1.2, 0.0])

    def test_action_level_estimate(self):
        policy = ActionLevelPolicy.uniform(3, 1, [(0,), (1,), (2,)])
        est = estimate_action_level(policy, (1,), [0.0, 0.4, 0.0])
        np.testing.assert_allclose(est.values, [1.0, 1.0 - 0.6 * 3.0, 1.0])
        self.assertEqual(est.played, (1,))
        with self.assertRaises(InvariantViolation):
            EstimateVector([1.0, 0.5, 2.0], SEMI_BANDIT_ACTION_LEVEL, played=(1,)).check()

    def test_estimates_are_frozen(self):
        est = EstimateVector([0.5, 0.5], FULL_INFO_EXPECTED)
        with self.assertRaises(ValueError):
            est.values[0] = 1.0

    def test_semibandit_unbiased(self):
        rng = np.random.Generator(np.random.Philox(21))
        game = random_game(3, 4, 2, np.random.default_rng(5), kernel="deterministic")
        policies = [FactoredPolicy(np.random.default_rng(6 + i).normal(scale=0.5, size=4), 2) for i in range(3)]
        q = np.stack([p.marginals() for p in policies])
        truth = expected_round_values(game, q)[0]
        rounds = 20000
        samples = np.zeros((rounds, 4))
        for t in range(rounds):
            joint = tuple(p.sample_action(rng) for p in policies)
            realized = sample_stochastic_rewards(game, joint, rng)
            samples[t] = estimate_semibandit(joint[0], realized, q[0]).values
        mean = samples.mean(axis=0)
        sigma = samples.std(axis=0, ddof=1) / math.sqrt(rounds)
        for f in range(4):
            self.assertLessEqual(abs(mean[f] - truth[f]), 4.0 * sigma[f] + 1e-9, f"facility {f}")


class TestUpdates(unittest.TestCase):
    def test_softmax_step(self):
        state = LearnerState(0, FactoredPolicy.uniform(3, 1), ConstantSchedule(1.0), SEMI_BANDIT)
        state = update(state, EstimateVector([1.0, 0.0, 0.0], FULL_INFO_EXPECTED))
        e = math.e
        np.testing.assert_allclose(state.policy.marginals(), [e / (e + 2), 1 / (e + 2), 1 / (e + 2)])
        self.assertEqual(state.t, 1)

    def test_constant_estimate_changes_nothing(self):
        rng = np.random.default_rng(1)
        policy = FactoredPolicy(rng.normal(size=5), 2)
        state = LearnerState(0, policy, ConstantSchedule(0.3), SEMI_BANDIT)
        state = update(state, EstimateVector(np.full(5, 0.7), FULL_INFO_EXPECTED))
        np.testing.assert_allclose(state.policy.marginals(), policy.marginals(), atol=1e-12)

    def test_updates_add(self):
        rng = np.random.default_rng(2)
        state = LearnerState(0, FactoredPolicy.uniform(4, 2), ConstantSchedule(0.25), SEMI_BANDIT)
        ys = [rng.uniform(size=4) for _ in range(5)]
        for y in ys:
            state = update(state, EstimateVector(y, FULL_INFO_EXPECTED))
        np.testing.assert_allclose(state.policy.scores, 0.25 * np.sum(ys, axis=0))
        np.testing.assert_allclose(state.learned, state.policy.scores)

    def test_learner_step_modes(self):
        game = game_from_tables(G1_TABLES, k=1)
        schedule = ConstantSchedule(0.5)
        bandit = Learner(game, uniform_state(game, 0, schedule, SEMI_BANDIT))
        est = bandit.step(joint_action=((0,), (1,)), realized=np.array([1.0, 0.8]))
        np.testing.assert_allclose(est.values, [1.0, 1.0])

        expected = Learner(game, uniform_state(game, 1, schedule, FULL_INFO_EXPECTED))
        q = np.array([[1.0, 0.0], [0.5, 0.5]])
        est = expected.step(marginals=q)
        np.testing.assert_allclose(est.values, [0.2, 0.8])
        np.testing.assert_allclose(expected.policy.scores, [0.1, 0.4])

    def test_action_level_step(self):
        game = game_from_tables(G1_TABLES, k=1)
        learner = Learner(game, uniform_state(game, 0, ConstantSchedule(0.5), SEMI_BANDIT_ACTION_LEVEL))
        self.assertIsInstance(learner.policy, ActionLevelPolicy)
        est = learner.step(joint_action=((0,), (1,)), realized=np.array([0.6, 0.8]))
        np.testing.assert_allclose(est.values, [0.2, 1.0])
        np.testing.assert_allclose(learner.policy.action_scores, [0.1, 0.5])
        np.testing.assert_allclose(learner.state.learned, [0.1, 0.5])


class TestSchedules(unittest.TestCase):
    def test_default_constant_rate(self):
        s = build_schedule(ScheduleConfig({}), 10000, 2, 3, 4, SEMI_BANDIT)
        self.assertAlmostEqual(s.rate(0), 0.01)
        s = build_schedule(ScheduleConfig({}), 4, 3, 3, 4, SEMI_BANDIT)
        self.assertAlmostEqual(s.rate(0), 1.0 / 3.0)

    def test_action_level_default_rate(self):
        s = build_schedule(ScheduleConfig({}), 100, 2, 3, 4, SEMI_BANDIT_ACTION_LEVEL)
        self.assertAlmostEqual(s.rate(0), math.sqrt(2.0 * math.log(6) / 600.0) / 2.0)
        s = build_schedule(ScheduleConfig({}), 100, 2, 3, 4, SEMI_BANDIT_ACTION_LEVEL, num_actions=3)
        self.assertAlmostEqual(s.rate(0), math.sqrt(2.0 * math.log(3) / 300.0) / 2.0)
        with self.assertRaises(SchemaError):
            build_schedule(ScheduleConfig({"eta": 0.9}), 100, 2, 3, 4, SEMI_BANDIT_ACTION_LEVEL)

    def test_semibandit_rate_cap(self):
        with self.assertRaises(SchemaError):
            build_schedule(ScheduleConfig({"eta": 0.9}), 100, 2, 3, 4, SEMI_BANDIT)
        s = build_schedule(ScheduleConfig({"eta": 0.9}), 100, 2, 3, 4, FULL_INFO_EXPECTED)
        self.assertEqual(s.rate(5), 0.9)

    def test_power_decay(self):
        s = PowerDecaySchedule(0.5, 0.75)
        self.assertAlmostEqual(s.rate(0), 0.5)
        self.assertAlmostEqual(s.rate(15), 0.5 * 16 ** -0.75)
        self.assertAlmostEqual(s.cumulative(10), sum(s.rate(t) for t in range(10)))
        self.assertAlmostEqual(s.cumulative(3), sum(s.rate(t) for t in range(3)))
        self.assertEqual(s.cumulative(0), 0.0)
        self.assertLessEqual(sum(s.rate(t) ** 2 for t in range(100000)), s.square_sum_bound())

    def test_power_decay_config(self):
        with self.assertRaises(SchemaError):
            ScheduleConfig({"variant": "power_decay", "alpha": 0.75})
        with self.assertRaises(SchemaError):
            ScheduleConfig({"variant": "power_decay", "beta": 0.1})
        with self.assertRaises(SchemaError):
            ScheduleConfig({"variant": "power_decay", "alpha": 0.4, "beta": 0.1})
        cfg = ScheduleConfig({"variant": "power_decay", "alpha": 0.75, "auto_beta": {"delta": 0.1, "M": 5}})
        s = build_schedule(cfg, 100, 1, 2, 2, "full_info_stochastic")
        self.assertAlmostEqual(s.beta, theorem5_beta(0.1, 5.0, 1, 2, 2, 0.75))

    def test_theorem_beta(self):
        beta = theorem5_beta(0.1, 5.0, 1, 2, 2, 0.75)
        self.assertAlmostEqual(beta, math.sqrt(2.5 / 16 / 3), places=12)
        self.assertAlmostEqual(beta, 0.2282, places=4)
        self.assertAlmostEqual(theorem5_beta(0.1, 10.0, 1, 2, 2, 0.75), 2 * beta)
        with self.assertRaises(ValueError):
            theorem5_beta(0.1, 5.0, 1, 2, 1, 0.75)

    def test_learner_config_defaults(self):
        cfg = LearnerConfig({})
        self.assertEqual(cfg.mode, SEMI_BANDIT)
        self.assertEqual(cfg.schedule.variant, "constant")
        self.assertEqual(cfg.init.kind, "uniform")
        with self.assertRaises(SchemaError) as ctx:
            LearnerConfig({"mode": "bandit", "schedule": {"alpha": 2.0}})
        paths = [p for p, _ in ctx.exception.errors]
        self.assertIn("mode", paths)
        self.assertIn("schedule.alpha", paths)


class TestNearEquilibrium(unittest.TestCase):
    def setUp(self):
        self.game = game_from_tables(G1_TABLES, k=1)
        self.schedule = ConstantSchedule(0.1)

    def test_margin_five(self):
        states = init_near_equilibrium(self.game, ((0,), (1,)), 5.0, self.schedule)
        w = states[0].policy.action_probability((0,))
        self.assertAlmostEqual(w, math.exp(5) / (math.exp(5) + 1))
        self.assertAlmostEqual(w, 0.99331, places=5)
        self.assertGreaterEqual(w, 1 - 2 * math.exp(-5))
        np.testing.assert_allclose(states[1].offsets, [0.0, 5.0])
        np.testing.assert_allclose(states[1].learned, [0.0, 0.0])

    def test_action_level_point_mass(self):
        star = ((0,), (1,))
        states = init_near_equilibrium(self.game, star, 5.0, self.schedule, SEMI_BANDIT_ACTION_LEVEL)
        self.assertAlmostEqual(states[0].policy.action_probability((0,)), math.exp(5) / (math.exp(5) + 1))
        np.testing.assert_allclose(states[0].offsets, [5.0, 0.0])
        np.testing.assert_allclose(states[1].learned, [0.0, 0.0])
        monitor = NashConvergenceMonitor(self.game, star, 5.0)
        self.assertAlmostEqual(monitor.max_gap(states[1].policy, 1), -5.0)
        self.assertTrue(monitor.in_UM(states))

    def test_margin_zero_is_uniform(self):
        states = init_near_equilibrium(self.game, ((0,), (1,)), 0.0, self.schedule)
        np.testing.assert_allclose(states[0].policy.marginals(), [0.5, 0.5])

    def test_full_subset(self):
        game = game_from_tables([[0.5, 0.2]] * 2, k=2)
        states = init_near_equilibrium(game, ((0, 1), (0, 1)), 3.0, self.schedule)
        self.assertAlmostEqual(states[0].policy.action_probability((0, 1)), 1.0)

    def test_non_strict_warns(self):
        game = game_from_tables([[0.5, 0.5], [0.5, 0.5]], k=1)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            init_near_equilibrium(game, ((0,), (1,)), 2.0, self.schedule)
        self.assertTrue(any(issubclass(w.category, TheoremHypothesisWarning) for w in caught))

    def test_explicit_lists_warn(self):
        game = game_from_tables([[0.9, 0.1], [0.2, 0.1], [0.5, 0.3]], k=2,
                                action_lists=[[[0, 1], [1, 2]], [[0, 2], [1, 2]]])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            states = init_near_equilibrium(game, ((0, 1), (0, 2)), 4.0, self.schedule, check_strict=False)
        self.assertTrue(any("explicit action lists" in str(w.message) for w in caught))
        self.assertEqual(len(states), 2)


class TestMonitor(unittest.TestCase):
    def test_max_gap_against_enumeration(self):
        rng = np.random.default_rng(31)
        game = game_from_tables(np.full((5, 2), 0.5).tolist(), k=2)
        star = ((0, 3), (1, 2))
        monitor = NashConvergenceMonitor(game, star, 2.0)
        for _ in range(20):
            policy = FactoredPolicy(rng.normal(scale=3.0, size=5), 2)
            for player in range(2):
                base = sum(policy.scores[list(star[player])])
                brute = max(sum(policy.scores[list(a)]) - base
                            for a in itertools.combinations(range(5), 2) if a != star[player])
                self.assertAlmostEqual(monitor.max_gap(policy, player), brute)
                gaps = monitor.swap_gaps(policy, player)
                self.assertEqual(gaps.shape, (2, 3))

    def test_explicit_lists(self):
        game = game_from_tables([[0.5, 0.5]] * 4, k=2, action_lists=[[[0, 1], [2, 3], [0, 2]], [[1, 3]]])
        monitor = NashConvergenceMonitor(game, ((0, 1), (1, 3)), 1.0)
        policy = FactoredPolicy([2.0, 1.0, 0.5, -1.0], 2, game.actions(0))
        self.assertAlmostEqual(monitor.max_gap(policy, 0), 2.5 - 3.0)
        lone = FactoredPolicy([0.0, 0.0, 0.0, 0.0], 2, game.actions(1))
        self.assertEqual(monitor.max_gap(lone, 1), -math.inf)

    def test_in_um(self):
        game = game_from_tables(G1_TABLES, k=1)
        states = init_near_equilibrium(game, ((0,), (1,)), 4.0, ConstantSchedule(0.1))
        monitor = NashConvergenceMonitor(game, ((0,), (1,)), 4.0)
        self.assertTrue(monitor.in_UM(states))
        monitor = NashConvergenceMonitor(game, ((0,), (1,)), 4.5)
        self.assertFalse(monitor.in_UM(states))


class TestQuadraticTerms(unittest.TestCase):
    def test_factored_term_matches_enumeration(self):
        rng = np.random.default_rng(41)
        policy = FactoredPolicy(rng.normal(size=5), 2)
        est = EstimateVector(rng.uniform(-2.0, 1.0, size=5), SEMI_BANDIT)
        acts, probs = policy.probability_table()
        brute = sum(p * sum(est.values[list(a)]) ** 2 for a, p in zip(acts, probs))
        self.assertAlmostEqual(quadratic_term(policy, est), brute)

    def test_action_level_term_matches_enumeration(self):
        rng = np.random.default_rng(42)
        policy = FactoredPolicy(rng.normal(size=5), 2)
        observed = rng.uniform(size=5)
        acts, est = action_level_estimate(policy, (1, 4), observed)
        _, probs = policy.probability_table()
        brute = float(np.dot(probs, est ** 2))
        self.assertAlmostEqual(quadratic_term_action_level(policy, (1, 4), observed), brute)

    def test_factored_term_expectation_bound(self):
        rng = np.random.Generator(np.random.Philox(43))
        F, k = 6, 2
        game = random_game(2, F, k, np.random.default_rng(44), kernel="bernoulli")
        policies = [FactoredPolicy(np.random.default_rng(45 + i).normal(scale=0.5, size=F), k) for i in range(2)]
        q = policies[0].marginals()
        rounds = 5000
        values = np.zeros(rounds)
        for t in range(rounds):
            joint = tuple(p.sample_action(rng) for p in policies)
            realized = sample_stochastic_rewards(game, joint, rng)
            values[t] = quadratic_term(policies[0], estimate_semibandit(joint[0], realized, q))
        sigma = values.std(ddof=1) / math.sqrt(rounds)
        self.assertLessEqual(values.mean(), k + k * F + 3.0 * sigma)


if __name__ == "__main__":
    unittest.main()
