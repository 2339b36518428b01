"""
Run records and their on-disk form.

A run directory holds:
  trace.csv      t, player, action_bitmask, regret_so_far, nash_distance, welfare, in_UM
  snapshots.csv  t, player, score_*, q_*, obs_*, zmax, bound_minus, bound_plus
  summary.json   RunSummary
Floats are written with 17 significant digits so parse(emit(x)) == x.
"""
import csv
import json
import os
from typing import Any, Dict, List, Sequence

import numpy as np

from congestexp.dependencies.BaseData import BaseData
from congestexp.errors import TraceIOError

TRACE_FILE = "trace.csv"
SNAPSHOT_FILE = "snapshots.csv"
SUMMARY_FILE = "summary.json"
EVENTS_FILE = "events.ndjson"

TRACE_COLUMNS = ["t", "player", "action_bitmask", "regret_so_far", "nash_distance", "welfare", "in_UM"]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def action_bitmask(action: Sequence[int]) -> int:
    mask = 0
    for f in action:
        mask |= 1 << int(f)
    return mask


def bitmask_action(mask: int, F: int) -> tuple:
    return tuple(f for f in range(F) if (int(mask) >> f) & 1)


class ConvergenceSummary(BaseData):
    reference: List[List[int]]
    gap: float
    epsilon: float
    threshold: float
    margin: float
    init_margin: float
    strict: bool
    margin_ok: bool
    all_k_subsets: bool
    violations_minus: int
    violations_plus: int
    z_violations: int
    um_failures: int
    initial_distance: float
    final_distance: float

    NULL_IS_INF = ("gap", "epsilon", "threshold")

    @property
    def clean(self) -> bool:
        return self.violations_minus == 0


class RunSummary(BaseData):
    seed: int
    run_index: int
    T: int
    every: int
    game: dict
    modes: List[str]
    schedules: List[str]
    regrets: List[float]
    realized_regrets: List[float]
    regret_traces: list
    average_welfare: float
    convergence: (ConvergenceSummary, None)


class RunRecord:
    """
    One seeded trajectory. Row r covers round t[r]; scores and marginals are
    those of the policy played in that round, regret is the running value
    after it.
    """

    ARRAYS = ("t", "actions", "regret", "nash_distance", "welfare", "in_um",
              "scores", "marginals", "observed", "zmax", "bound_minus", "bound_plus")

    def __init__(self, summary: RunSummary, t, actions, regret, nash_distance, welfare, in_um,
                 scores, marginals, observed, zmax, bound_minus, bound_plus):
        self.summary = RunSummary(summary)
        self.t = np.asarray(t, dtype=np.int64)
        self.actions = np.asarray(actions, dtype=np.int64)
        self.regret = np.asarray(regret, dtype=float)
        self.nash_distance = np.asarray(nash_distance, dtype=float)
        self.welfare = np.asarray(welfare, dtype=float)
        self.in_um = np.asarray(in_um, dtype=np.int8)
        self.scores = np.asarray(scores, dtype=float)
        self.marginals = np.asarray(marginals, dtype=float)
        self.observed = np.asarray(observed, dtype=float)
        self.zmax = np.asarray(zmax, dtype=float)
        self.bound_minus = np.asarray(bound_minus, dtype=float)
        self.bound_plus = np.asarray(bound_plus, dtype=float)

    @property
    def rows(self) -> int:
        return int(self.t.size)

    @property
    def n(self) -> int:
        return int(self.summary.game["n"])

    @property
    def F(self) -> int:
        return int(self.summary.game["F"])

    def final_regrets(self) -> np.ndarray:
        return np.array(self.summary.regrets, dtype=float)

    def __eq__(self, other):
        if not isinstance(other, RunRecord):
            return NotImplemented
        if self.summary.to_json() != other.summary.to_json():
            return False
        return all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True) for a in self.ARRAYS)

    def __repr__(self):
        return f"RunRecord(seed={self.summary.seed}, T={self.summary.T}, rows={self.rows})"


# --- writers ---------------------------------------------------------------------

def _write_csv(path: str, header: List[str], rows) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(x) for x in row])
    except OSError as e:
        raise TraceIOError(path, e)


def _read_csv(path: str):
    try:
        with open(path, "r", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            return header or [], [row for row in reader]
    except OSError as e:
        raise TraceIOError(path, e)


def write_json(path: str, data: BaseData) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            f.write(data.to_json())
            f.write("\n")
    except OSError as e:
        raise TraceIOError(path, e)


def read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise TraceIOError(path, e)


def snapshot_columns(F: int) -> List[str]:
    return (["t", "player"]
            + [f"score_{f}" for f in range(F)]
            + [f"q_{f}" for f in range(F)]
            + [f"obs_{f}" for f in range(F)]
            + ["zmax", "bound_minus", "bound_plus"])


def write_table(path: str, rows: Sequence[BaseData], columns: List[str] = None) -> None:
    """Rows of records as CSV; an empty table still gets its header and None cells are blank."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    _write_csv(path, columns, (["" if row.get(c) is None else row.get(c) for c in columns] for row in rows))


def emit_record(record: RunRecord, out_dir: str) -> Dict[str, str]:
    n, F = record.n, record.F

    def trace_rows():
        for r in range(record.rows):
            um = int(record.in_um[r])
            for i in range(n):
                yield [int(record.t[r]), i, int(record.actions[r, i]), float(record.regret[r, i]),
                       float(record.nash_distance[r, i]), float(record.welfare[r]), "" if um < 0 else um]

    def snapshot_rows():
        for r in range(record.rows):
            for i in range(n):
                yield ([int(record.t[r]), i]
                       + [float(x) for x in record.scores[r, i]]
                       + [float(x) for x in record.marginals[r, i]]
                       + [float(x) for x in record.observed[r, i]]
                       + [float(record.zmax[r, i]), float(record.bound_minus[r]), float(record.bound_plus[r])])

    paths = {
        "trace": os.path.join(out_dir, TRACE_FILE),
        "snapshots": os.path.join(out_dir, SNAPSHOT_FILE),
        "summary": os.path.join(out_dir, SUMMARY_FILE),
    }
    _write_csv(paths["trace"], TRACE_COLUMNS, trace_rows())
    _write_csv(paths["snapshots"], snapshot_columns(F), snapshot_rows())
    write_json(paths["summary"], record.summary)
    return paths


def emit(obj, out_path: str):
    """RunRecord -> run directory; list of records -> CSV table; record -> JSON file."""
    if isinstance(obj, RunRecord):
        return emit_record(obj, out_path)
    if isinstance(obj, BaseData):
        write_json(out_path, obj)
        return {"json": out_path}
    write_table(out_path, list(obj))
    return {"table": out_path}


# --- readers ---------------------------------------------------------------------

def parse_record(run_dir: str) -> RunRecord:
    summary = RunSummary(read_json(os.path.join(run_dir, SUMMARY_FILE)))
    n, F = int(summary.game["n"]), int(summary.game["F"])

    header, rows = _read_csv(os.path.join(run_dir, TRACE_FILE))
    if header != TRACE_COLUMNS:
        raise TraceIOError(os.path.join(run_dir, TRACE_FILE), ValueError(f"unexpected header {header}"))
    R = len(rows) // n
    t = np.zeros(R, dtype=np.int64)
    actions = np.zeros((R, n), dtype=np.int64)
    regret = np.zeros((R, n))
    distance = np.zeros((R, n))
    welfare = np.zeros(R)
    in_um = np.zeros(R, dtype=np.int8)
    for j, row in enumerate(rows):
        r, i = divmod(j, n)
        t[r] = int(row[0])
        actions[r, i] = int(row[2])
        regret[r, i] = float(row[3])
        distance[r, i] = float(row[4])
        welfare[r] = float(row[5])
        in_um[r] = -1 if row[6] == "" else int(row[6])

    header, rows = _read_csv(os.path.join(run_dir, SNAPSHOT_FILE))
    if header != snapshot_columns(F):
        raise TraceIOError(os.path.join(run_dir, SNAPSHOT_FILE), ValueError(f"unexpected header {header}"))
    scores = np.zeros((R, n, F))
    marginals = np.zeros((R, n, F))
    observed = np.zeros((R, n, F))
    zmax = np.zeros((R, n))
    bound_minus = np.zeros(R)
    bound_plus = np.zeros(R)
    for j, row in enumerate(rows):
        r, i = divmod(j, n)
        vals = [float(x) for x in row[2:]]
        scores[r, i] = vals[:F]
        marginals[r, i] = vals[F:2 * F]
        observed[r, i] = vals[2 * F:3 * F]
        zmax[r, i] = vals[3 * F]
        bound_minus[r] = vals[3 * F + 1]
        bound_plus[r] = vals[3 * F + 2]

    return RunRecord(summary, t, actions, regret, distance, welfare, in_um,
                     scores, marginals, observed, zmax, bound_minus, bound_plus)


def read_table(path: str) -> List[Dict[str, str]]:
    header, rows = _read_csv(path)
    return [dict(zip(header, row)) for row in rows]
