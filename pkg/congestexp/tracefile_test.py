import os
import shutil
import unittest

import numpy as np

from congestexp.errors import TraceIOError
from congestexp.tracefile import (
    SNAPSHOT_FILE,
    TRACE_COLUMNS,
    TRACE_FILE,
    RunRecord,
    RunSummary,
    action_bitmask,
    bitmask_action,
    emit,
    fmt,
    parse_record,
    read_table,
    snapshot_columns,
    write_table,
)


def small_record(rows: int = 2) -> RunRecord:
    n, F = 2, 3
    summary = RunSummary({
        RunSummary.seed: 4,
        RunSummary.run_index: 0,
        RunSummary.T: rows,
        RunSummary.every: 1,
        RunSummary.game: {"n": n, "F": F, "k": 1, "rewards": [[1.0, 0.5]] * F},
        RunSummary.modes: ["semi_bandit"] * n,
        RunSummary.schedules: ["ConstantSchedule(eta=0.5)"] * n,
        RunSummary.regrets: [0.1, 1.0 / 3.0],
        RunSummary.realized_regrets: [0.0, 0.2],
        RunSummary.regret_traces: [],
        RunSummary.average_welfare: 1.25,
    })
    rng = np.random.default_rng(0)
    return RunRecord(
        summary,
        t=np.arange(1, rows + 1),
        actions=np.array([[1, 4]] * rows),
        regret=rng.uniform(size=(rows, n)),
        nash_distance=np.full((rows, n), np.nan),
        welfare=rng.uniform(size=rows),
        in_um=np.full(rows, -1),
        scores=rng.normal(size=(rows, n, F)),
        marginals=rng.uniform(size=(rows, n, F)),
        observed=rng.uniform(size=(rows, n, F)),
        zmax=np.full((rows, n), np.nan),
        bound_minus=np.full(rows, np.nan),
        bound_plus=np.full(rows, np.nan),
    )


class TestTraceFiles(unittest.TestCase):
    def setUp(self):
        self.data_dir = "./test_data_trace"
        try:
            shutil.rmtree(self.data_dir)
        except FileNotFoundError:
            pass

    def test_fmt_round_trips_floats(self):
        for x in [0.1, 1.0 / 3.0, 2.0 ** -40, 123456.789, -0.0]:
            self.assertEqual(float(fmt(x)), x)
        self.assertEqual(fmt(np.int64(7)), "7")
        self.assertEqual(fmt(True), "1")

    def test_bitmasks(self):
        self.assertEqual(action_bitmask((0, 2)), 5)
        self.assertEqual(bitmask_action(5, 4), (0, 2))
        self.assertEqual(bitmask_action(action_bitmask((1, 3, 4)), 6), (1, 3, 4))

    def test_empty_table_has_header(self):
        path = os.path.join(self.data_dir, "empty.csv")
        write_table(path, [], columns=["T", "F", "k"])
        with open(path) as f:
            self.assertEqual(f.read(), "T,F,k\n")
        self.assertEqual(read_table(path), [])

    def test_record_round_trip(self):
        record = small_record()
        paths = emit(record, self.data_dir)
        self.assertTrue(os.path.exists(paths["summary"]))
        back = parse_record(self.data_dir)
        self.assertEqual(back, record)

        rows = read_table(os.path.join(self.data_dir, TRACE_FILE))
        self.assertEqual(len(rows), 4)
        self.assertEqual(list(rows[0].keys()), TRACE_COLUMNS)
        self.assertEqual(rows[0]["in_UM"], "")
        self.assertEqual(rows[1]["action_bitmask"], "4")

        rows = read_table(os.path.join(self.data_dir, SNAPSHOT_FILE))
        self.assertEqual(list(rows[0].keys()), snapshot_columns(3))

    def test_bad_header(self):
        emit(small_record(), self.data_dir)
        path = os.path.join(self.data_dir, TRACE_FILE)
        with open(path) as f:
            body = f.read()
        with open(path, "w") as f:
            f.write(body.replace("regret_so_far", "regret"))
        with self.assertRaises(TraceIOError):
            parse_record(self.data_dir)

    def test_missing_directory(self):
        with self.assertRaises(TraceIOError):
            parse_record(os.path.join(self.data_dir, "nope"))


if __name__ == "__main__":
    unittest.main()
