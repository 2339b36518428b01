import json
import math
import os
import shutil
import unittest
import warnings

import numpy as np

from congestexp.errors import SchemaError
from congestexp.events.models import HYPOTHESIS_WARNING, RUN_FINISHED, RUN_STARTED
from congestexp.events.ndjson_events import NDJSONReader, NDJSONWriter
from congestexp.game_model import expected_welfare, game_from_tables
from congestexp.harness import (
    ExperimentConfig,
    analyze,
    load_experiment,
    make_streams,
    record_joint_actions,
    replay_regret,
    run,
    run_convergence_study,
    simulate,
)
from congestexp.learners import TheoremHypothesisWarning
from congestexp.tracefile import SNAPSHOT_FILE, SUMMARY_FILE, TRACE_FILE, emit, parse_record

G1_SPEC = {"n": 2, "F": 2, "k": 1, "rewards": [[1.0, 0.2], [0.8, 0.3]]}
GOLDEN_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "testdata", "g1_t3_seed0")


def g1_config(T: int, mode: str = "semi_bandit", **extra) -> dict:
    cfg = {"T": T, "game": dict(G1_SPEC), "learner": {"mode": mode}}
    cfg.update(extra)
    return cfg


class HarnessCase(unittest.TestCase):
    data_dir = "./test_data_harness"

    def setUp(self):
        try:
            shutil.rmtree(self.data_dir)
        except FileNotFoundError:
            pass
        os.makedirs(self.data_dir, exist_ok=True)


class TestRuns(HarnessCase):
    def test_single_round(self):
        record = run(g1_config(1), seed=0)
        self.assertEqual(record.rows, 1)
        np.testing.assert_allclose(record.marginals[0], [[0.5, 0.5], [0.5, 0.5]])
        self.assertTrue(np.all(record.final_regrets() <= 1.0 + 1e-12))
        emit(record, self.data_dir)
        with open(os.path.join(self.data_dir, TRACE_FILE)) as f:
            self.assertEqual(len(f.read().splitlines()), 1 + 2)

    def test_same_seed_same_bytes(self):
        cfg = g1_config(40, "semi_bandit")
        a, b = os.path.join(self.data_dir, "a"), os.path.join(self.data_dir, "b")
        emit(run(cfg, seed=7), a)
        emit(run(cfg, seed=7), b)
        for name in (TRACE_FILE, SNAPSHOT_FILE, SUMMARY_FILE):
            with open(os.path.join(a, name), "rb") as fa, open(os.path.join(b, name), "rb") as fb:
                self.assertEqual(fa.read(), fb.read(), name)

    def test_matches_frozen_run(self):
        # CONGESTEXP_UPDATE_GOLDEN=1 rewrites the frozen directory after an intended format change
        fresh = os.path.join(self.data_dir, "fresh")
        emit(run(g1_config(3), seed=0), fresh)
        if os.environ.get("CONGESTEXP_UPDATE_GOLDEN") == "1" or not os.path.exists(GOLDEN_DIR):
            os.makedirs(GOLDEN_DIR, exist_ok=True)
            for name in (TRACE_FILE, SNAPSHOT_FILE, SUMMARY_FILE):
                shutil.copyfile(os.path.join(fresh, name), os.path.join(GOLDEN_DIR, name))
            self.skipTest(f"wrote {GOLDEN_DIR}; commit it")
        for name in (TRACE_FILE, SNAPSHOT_FILE, SUMMARY_FILE):
            with open(os.path.join(GOLDEN_DIR, name), "rb") as fg, open(os.path.join(fresh, name), "rb") as ff:
                self.assertEqual(ff.read(), fg.read(), name)

    def test_different_seeds_differ(self):
        cfg = g1_config(40)
        self.assertNotEqual(run(cfg, seed=1), run(cfg, seed=2))

    def test_streams_are_independent_children(self):
        actions, shared, counterfactual = make_streams(3, 0, 2)
        self.assertEqual(len(actions), 2)
        self.assertEqual(len(counterfactual), 2)
        again, _, _ = make_streams(3, 0, 2)
        self.assertEqual(actions[1].random(), again[1].random())
        self.assertNotEqual(actions[0].random(), shared.random())

    def test_parse_of_emit(self):
        record = run(g1_config(25, "full_info_stochastic"), seed=3)
        emit(record, self.data_dir)
        self.assertEqual(parse_record(self.data_dir), record)

    def test_regret_replay(self):
        record = run(g1_config(60), seed=5)
        np.testing.assert_allclose(replay_regret(record), record.final_regrets(), atol=1e-9)
        self.assertEqual(len(record_joint_actions(record)), 60)

    def test_welfare_trace(self):
        game = game_from_tables(G1_SPEC["rewards"], k=1)
        record = run(g1_config(30, "full_info_expected"), seed=0)
        for r in range(record.rows):
            self.assertAlmostEqual(record.welfare[r], expected_welfare(game, record.marginals[r]), places=9)

    def test_regret_grows_slowly(self):
        T = 2000
        record = run(g1_config(T), seed=0)
        self.assertLessEqual(float(np.max(record.final_regrets())), 1 * 2 * math.sqrt(T))

    def test_action_level_run(self):
        T = 300
        record = run(g1_config(T, "semi_bandit_action_level"), seed=0)
        self.assertEqual(record.summary.modes, ["semi_bandit_action_level"] * 2)
        np.testing.assert_allclose(record.marginals.sum(axis=2), 1.0)
        np.testing.assert_allclose(replay_regret(record), record.final_regrets(), atol=1e-9)
        self.assertLessEqual(float(np.max(record.final_regrets())), 2.0 * math.sqrt(2.0 * T * 2 * math.log(2)))
        emit(record, self.data_dir)
        self.assertEqual(parse_record(self.data_dir), record)

    def test_thinned_rows(self):
        record = run(g1_config(10, outputs={"every": 3}), seed=0)
        self.assertEqual(record.t.tolist(), [1, 4, 7, 10])

    def test_long_horizon(self):
        record = run(g1_config(501, "full_info_expected"), seed=0)
        self.assertEqual(record.rows, 501)
        self.assertEqual(record.summary.T, 501)
        self.assertEqual(record.t[-1], 501)

    def test_events(self):
        events = NDJSONWriter(os.path.join(self.data_dir, "events.ndjson"))
        run(g1_config(5), seed=2, events=events)
        reader = NDJSONReader(events.path)
        self.assertEqual(len(reader.search(RUN_STARTED, seed=2)), 1)
        finished = reader.search(RUN_FINISHED, seed=2)
        self.assertEqual(len(finished), 1)
        self.assertIn("rss_bytes", finished[0].content)


class TestConfig(HarnessCase):
    def test_errors_collected(self):
        with self.assertRaises(SchemaError) as ctx:
            ExperimentConfig({"T": 0, "seeds": [], "game": dict(G1_SPEC)})
        paths = [p for p, _ in ctx.exception.errors]
        self.assertIn("T", paths)
        self.assertIn("seeds", paths)

    def test_game_errors_prefixed(self):
        bad = dict(G1_SPEC, k=3)
        with self.assertRaises(SchemaError) as ctx:
            ExperimentConfig({"T": 5, "game": bad})
        self.assertIn("game.k", [p for p, _ in ctx.exception.errors])

    def test_game_xor_file(self):
        with self.assertRaises(SchemaError):
            ExperimentConfig({"T": 5})
        with self.assertRaises(SchemaError):
            ExperimentConfig({"T": 5, "game": dict(G1_SPEC), "game_file": "g.json"})

    def test_learner_errors_prefixed(self):
        with self.assertRaises(SchemaError) as ctx:
            ExperimentConfig({"T": 5, "game": dict(G1_SPEC), "learner": {"mode": "oracle"}})
        self.assertIn("learner.mode", [p for p, _ in ctx.exception.errors])

    def test_semibandit_rate_cap(self):
        with self.assertRaises(SchemaError):
            run(g1_config(5, learner={"mode": "semi_bandit", "schedule": {"eta": 2.0}}), seed=0)

    def test_game_file_resolves_beside_config(self):
        with open(os.path.join(self.data_dir, "g1.json"), "w") as f:
            json.dump(G1_SPEC, f)
        path = os.path.join(self.data_dir, "experiment.json")
        with open(path, "w") as f:
            json.dump({"T": 3, "game_file": "g1.json"}, f)
        cfg = load_experiment(path)
        self.assertTrue(os.path.isabs(cfg.game_file))
        self.assertEqual(run(cfg, seed=0).rows, 3)

        with open(path, "w") as f:
            json.dump({"T": 3, "game_file": "missing.json"}, f)
        with self.assertRaises(SchemaError):
            load_experiment(path)

    def test_per_player_learners(self):
        cfg = {"T": 4, "game": dict(G1_SPEC),
               "learners": [{"mode": "semi_bandit"}, {"mode": "full_info_expected"}]}
        record = run(cfg, seed=0)
        self.assertEqual(record.summary.modes, ["semi_bandit", "full_info_expected"])
        with self.assertRaises(SchemaError):
            run({"T": 4, "game": dict(G1_SPEC), "learners": [{"mode": "semi_bandit"}]}, seed=0)


class TestConvergence(HarnessCase):
    def setUp(self):
        super().setUp()
        self.game = game_from_tables(G1_SPEC["rewards"], k=1)

    def test_expected_mode_stays_inside_bound(self):
        study, records = run_convergence_study(self.game, "expected", seeds=(0,), T=200, workers=1)
        self.assertEqual(study.reference, [[0], [1]])
        self.assertAlmostEqual(study.epsilon, 0.3)
        self.assertEqual(study.margin, 4.0)
        self.assertTrue(study.margin_ok)
        row = study.rows[0]
        self.assertEqual(row.violations_minus, 0)
        self.assertEqual(row.z_violations, 0)
        self.assertEqual(row.um_failures, 0)
        self.assertLess(row.final_distance, row.initial_distance)
        self.assertEqual(records[0].rows, 200)

    def test_stochastic_mode_meets_target(self):
        study, _ = run_convergence_study(self.game, "stochastic", seeds=range(5), T=200, delta=0.2, workers=1)
        self.assertGreaterEqual(study.clean_fraction, 0.8)
        self.assertTrue(study.meets_target)

    def test_near_equilibrium_run_records_bounds(self):
        cfg = g1_config(20, "full_info_expected",
                        learner={"mode": "full_info_expected", "init": {"kind": "near_ne"}})
        record = run(cfg, seed=0)
        conv = record.summary.convergence
        self.assertIsNotNone(conv)
        self.assertEqual(conv.margin, 4.0)
        self.assertTrue(np.all(record.in_um == 1))
        self.assertTrue(np.all(record.nash_distance <= record.bound_minus[:, None] + 1e-12))

    def test_action_level_near_equilibrium(self):
        cfg = g1_config(10, learner={"mode": "semi_bandit_action_level", "init": {"kind": "near_ne"}})
        record = run(cfg, seed=0)
        self.assertEqual(record.summary.convergence.margin, 4.0)
        self.assertEqual(int(record.in_um[0]), 1)
        np.testing.assert_allclose(record.zmax[0], [-4.0, -4.0])

    def test_unbounded_values_written_as_null(self):
        cfg = {"T": 3, "game": {"n": 2, "F": 2, "k": 2, "rewards": [[0.5, 0.2], [0.5, 0.2]]},
               "reference": [[0, 1], [0, 1]]}
        record = run(cfg, seed=0)
        self.assertEqual(record.summary.convergence.gap, math.inf)
        emit(record, self.data_dir)
        with open(os.path.join(self.data_dir, SUMMARY_FILE)) as f:
            text = f.read()
        self.assertNotIn("Infinity", text)
        convergence = json.loads(text)["convergence"]
        self.assertIsNone(convergence["gap"])
        self.assertIsNone(convergence["epsilon"])
        self.assertEqual(convergence["threshold"], 0.0)
        self.assertEqual(parse_record(self.data_dir), record)

    def test_weak_reference_warns(self):
        cfg = {"T": 3, "game": {"n": 2, "F": 2, "k": 1, "rewards": [[0.5, 0.5], [0.5, 0.5]]},
               "reference": [[0], [1]]}
        events = NDJSONWriter(os.path.join(self.data_dir, "events.ndjson"))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            record = run(cfg, seed=0, events=events)
        self.assertTrue(any(issubclass(w.category, TheoremHypothesisWarning) for w in caught))
        self.assertTrue(np.all(np.isnan(record.bound_minus)))
        self.assertEqual(len(NDJSONReader(events.path).search(HYPOTHESIS_WARNING)), 1)


class TestSimulateAndAnalyze(HarnessCase):
    def test_simulate_many_seeds(self):
        cfg = g1_config(10, seeds=[0, 1])
        summaries = simulate(cfg, out_dir=self.data_dir, workers=1)
        self.assertEqual([s.seed for s in summaries], [0, 1])
        for seed in (0, 1):
            self.assertTrue(os.path.exists(os.path.join(self.data_dir, f"seed_{seed}", TRACE_FILE)))

    def test_analyze(self):
        record = run(g1_config(200), seed=0)
        emit(record, self.data_dir)
        report = analyze(self.data_dir)
        self.assertLess(report.replay_max_error, 1e-9)
        self.assertAlmostEqual(report.welfare["lam"], 1.0 / 3.0)
        self.assertTrue(report.welfare["holds"])
        self.assertTrue(os.path.exists(os.path.join(self.data_dir, "analysis.json")))


if __name__ == "__main__":
    unittest.main()
