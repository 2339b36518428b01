"""
Process-parallel execution of independent runs.

Each run owns its RNG streams (seed, run_index), so the pool size never
changes results; outputs are collected in submission order.
"""
import math
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence

import numpy as np
import psutil

from congestexp.dependencies.BaseData import BaseData
from congestexp.errors import SchemaError
from congestexp.events.models import SWEEP_POINT, make_event
from congestexp.events.ndjson_events import NDJSONWriter
from congestexp.game_model import CongestionGame, game_from_spec, random_affine_game, random_game
from congestexp.harness import ExperimentConfig, OutputConfig, run
from congestexp.learners import SEMI_BANDIT_ACTION_LEVEL, LearnerConfig
from congestexp.tracefile import RunRecord, RunSummary


def default_workers(tasks: int, workers: Optional[int] = None) -> int:
    cores = psutil.cpu_count(logical=False) or 1
    if workers is not None:
        cores = min(cores, int(workers))
    return max(1, min(cores, tasks))


def _to_payload(record: RunRecord):
    return record.summary.to_safe_dict(), {a: getattr(record, a) for a in RunRecord.ARRAYS}


def _from_payload(payload) -> RunRecord:
    summary, arrays = payload
    return RunRecord(RunSummary(summary), **arrays)


def _run_task(args):
    config, game_spec, seed, run_index, events_path = args
    events = NDJSONWriter(events_path) if events_path else None
    game = game_from_spec(game_spec) if game_spec is not None else None
    return _to_payload(run(config, seed, run_index, events=events, game=game))


def map_runs(tasks: Sequence[tuple], workers: Optional[int] = None) -> List[RunRecord]:
    """tasks: (config dict, game spec or None, seed, run_index, events path or None)."""
    tasks = list(tasks)
    if not tasks:
        return []
    size = default_workers(len(tasks), workers)
    if size == 1:
        return [_from_payload(_run_task(t)) for t in tasks]
    with ProcessPoolExecutor(max_workers=size) as pool:
        futures = [pool.submit(_run_task, t) for t in tasks]
        return [_from_payload(f.result()) for f in futures]


def run_many(config, seeds: Sequence[int], workers: Optional[int] = None, events_path: Optional[str] = None,
             game: Optional[CongestionGame] = None) -> List[RunRecord]:
    """One run per seed; run_index is the seed's position in ``seeds``."""
    config = ExperimentConfig(config)
    raw = config.to_safe_dict()
    spec = game.to_spec().to_safe_dict() if game is not None else None
    return map_runs([(raw, spec, int(s), j, events_path) for j, s in enumerate(seeds)], workers)


# --- regret scaling sweep ----------------------------------------------------------

class SweepGameConfig(BaseData):
    kind: (str, "random")
    seed: (int, 0)

    def do_validation(self, key, value):
        if key == SweepGameConfig.kind and value not in ("random", "affine"):
            return value, "game kind must be 'random' or 'affine'"
        return value, ""


class SweepGrid(BaseData):
    T: List[int]
    F: List[int]
    k: List[int]
    n: (int, 4)
    seeds: (List[int], None)
    game: (SweepGameConfig, None)
    workers: (int, None)
    compare_action_level: (bool, False)

    def get_defaults(self):
        return {
            SweepGrid.seeds: list(range(20)),
            SweepGrid.game: SweepGameConfig({}),
        }

    def do_validation(self, key, value):
        if key in (SweepGrid.T, SweepGrid.F, SweepGrid.k) and isinstance(value, list):
            if not value:
                return value, "must list at least one value"
            if any(not isinstance(v, int) or v < 1 for v in value):
                return value, "values must be integers >= 1"
        if key == SweepGrid.n and isinstance(value, int) and value < 1:
            return value, "n must be >= 1"
        if key == SweepGrid.seeds and isinstance(value, list) and not value:
            return value, "seeds must be non-empty"
        return value, ""

    def __init__(self, in_dict=None, trim=False, **kwargs):
        super().__init__(in_dict, trim, **kwargs)
        if max(self.k) > min(self.F):
            raise SchemaError([(SweepGrid.k, f"every k must be <= every F (k up to {max(self.k)}, F from {min(self.F)})")],
                              "SweepGrid")


class SweepPoint(BaseData):
    T: int
    F: int
    k: int
    n: int
    seeds: int
    mean: float
    stderr: float
    max: float
    constant: float
    baseline_mean: (float, None)
    baseline_stderr: (float, None)


class ExponentFit(BaseData):
    F: int
    k: int
    exponent: float
    intercept: float


class SweepSummary(BaseData):
    points: List[SweepPoint]
    exponents: List[ExponentFit]
    max_constant: float


def sweep_game(kind: str, n: int, F: int, k: int, game_seed: int) -> CongestionGame:
    """The same game for every T and seed at one (F, k)."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(game_seed), F, k])))
    if kind == "affine":
        return random_affine_game(n, F, k, rng)
    return random_game(n, F, k, rng, name=f"G_rand(n={n},F={F},k={k})")


def _regret_stats(vals: np.ndarray):
    stderr = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return float(np.mean(vals)), stderr


def fit_exponent(T_values: Sequence[int], regrets: Sequence[float]):
    """Least-squares slope and intercept of log regret against log T."""
    x = np.log(np.asarray(T_values, dtype=float))
    y = np.log(np.maximum(np.asarray(regrets, dtype=float), 1e-300))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def sweep_regret_scaling(base_config, T_values: Sequence[int], F_values: Sequence[int], k_values: Sequence[int],
                         seeds: Sequence[int], n: int = 4, game_kind: str = "random", game_seed: int = 0,
                         workers: Optional[int] = None, events_path: Optional[str] = None,
                         verbose: bool = False, compare_action_level: bool = False) -> SweepSummary:
    """
    Max-player final regret over seeds at every (T, F, k); only the last round
    is recorded. Only the ``learner`` block of ``base_config`` is used.
    ``compare_action_level`` reruns every point with semi_bandit_action_level
    learners (default rate) on the same seeds and fills the baseline columns.
    """
    base = dict(base_config or {})
    learner = LearnerConfig(base.get(ExperimentConfig.learner) or {}).to_safe_dict()
    tasks, keys = [], []
    run_index = 0
    for F in F_values:
        for k in k_values:
            game = sweep_game(game_kind, n, F, k, game_seed)
            spec = game.to_spec().to_safe_dict()
            for T in T_values:
                cfg = ExperimentConfig({
                    ExperimentConfig.T: int(T),
                    ExperimentConfig.game: spec,
                    ExperimentConfig.learner: learner,
                    ExperimentConfig.outputs: {OutputConfig.every: int(T)},
                }).to_safe_dict()
                for s in seeds:
                    tasks.append((cfg, None, int(s), run_index, events_path))
                    keys.append((False, (T, F, k)))
                    run_index += 1
    if compare_action_level:
        # baseline runs reuse each main run's (seed, run_index) streams
        action_level = LearnerConfig({LearnerConfig.mode: SEMI_BANDIT_ACTION_LEVEL}).to_safe_dict()
        for (cfg, _, s, j, path), (_, key) in list(zip(tasks, keys)):
            tasks.append((dict(cfg, learner=action_level), None, s, j, path))
            keys.append((True, key))
    records = map_runs(tasks, workers)

    by_point, by_baseline = {}, {}
    for (baseline, key), rec in zip(keys, records):
        target = by_baseline if baseline else by_point
        target.setdefault(key, []).append(float(np.max(rec.final_regrets())))
    events = NDJSONWriter(events_path) if events_path else None
    points = []
    for (T, F, k), vals in by_point.items():
        vals = np.array(vals)
        mean, stderr = _regret_stats(vals)
        raw = {
            SweepPoint.T: int(T), SweepPoint.F: int(F), SweepPoint.k: int(k), SweepPoint.n: int(n),
            SweepPoint.seeds: int(vals.size),
            SweepPoint.mean: mean,
            SweepPoint.stderr: stderr,
            SweepPoint.max: float(np.max(vals)),
            SweepPoint.constant: float(np.max(vals) / (k * F * math.sqrt(T))),
        }
        if (T, F, k) in by_baseline:
            raw[SweepPoint.baseline_mean], raw[SweepPoint.baseline_stderr] = _regret_stats(np.array(by_baseline[(T, F, k)]))
        point = SweepPoint(raw)
        points.append(point)
        if verbose:
            line = f"[sweep] T={T} F={F} k={k}: regret {point.mean:.4g} +- {point.stderr:.2g}, constant {point.constant:.3g}"
            if point.baseline_mean is not None:
                line += f", action-level {point.baseline_mean:.4g}"
            print(line)
        if events is not None:
            events.append(make_event(SWEEP_POINT, point.to_safe_dict(), T=int(T), F=int(F), k=int(k)))

    exponents = []
    if len(set(T_values)) >= 2:
        for F in F_values:
            for k in k_values:
                rows = [p for p in points if p.F == F and p.k == k]
                slope, intercept = fit_exponent([p.T for p in rows], [p.mean for p in rows])
                exponents.append(ExponentFit({
                    ExponentFit.F: int(F), ExponentFit.k: int(k),
                    ExponentFit.exponent: slope, ExponentFit.intercept: intercept,
                }))
    return SweepSummary({
        SweepSummary.points: points,
        SweepSummary.exponents: exponents,
        SweepSummary.max_constant: max(p.constant for p in points),
    })


def sweep_from_grid(base_config, grid, workers: Optional[int] = None, events_path: Optional[str] = None,
                    verbose: bool = False) -> SweepSummary:
    grid = SweepGrid(grid)
    return sweep_regret_scaling(
        base_config, grid.T, grid.F, grid.k, grid.seeds, n=grid.n,
        game_kind=grid.game.kind, game_seed=grid.game.seed,
        workers=grid.workers if workers is None else workers,
        events_path=events_path, verbose=verbose, compare_action_level=grid.compare_action_level,
    )
