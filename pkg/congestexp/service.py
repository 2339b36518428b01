"""
congestexp command line.

  simulate  --config <file> [--seed <u64>] [--out <dir>] [--workers <n>]
  sweep     --config <file> --grid <file> [--out <dir>] [--workers <n>]
  find-nash --game <file> [--budget <n>]
  analyze   --trace <dir|trace.csv> [--lambda <x> --mu <y>]

Exit codes: 0 ok, 1 other, 2 usage, 3 schema, 4 budget, 5 I/O, 6 invariant.
"""
import json
import os
import sys

from congestexp.dependencies.BaseService import BaseService, UsageError
from congestexp.equilibrium import find_pure_nash
from congestexp.game_model import DEFAULT_ENUMERATION_BUDGET, load_game
from congestexp.harness import ExperimentConfig, analyze, load_experiment, simulate
from congestexp.sweeps import SweepGrid, SweepPoint, sweep_from_grid
from congestexp.tracefile import EVENTS_FILE, read_json, write_json, write_table


def _typed(value):
    """Inline values are JSON when they parse as JSON (numbers, lists), strings otherwise."""
    if isinstance(value, dict):
        return {k: _typed(v) for k, v in value.items()}
    if isinstance(value, str):
        try:
            return json.loads(value)
        except ValueError:
            return value
    return value


def _as_int(name: str, value):
    if value is None:
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise UsageError(f"--{name} expects an integer, got {value!r}")


def _as_float(name: str, value):
    if value is None:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"--{name} expects a number, got {value!r}")


class CongestService(BaseService):
    """Online congestion game simulator."""

    @classmethod
    def get_cli_options(cls):
        return ["config", "seed", "out", "workers", "grid", "game", "budget", "trace", "lambda", "mu"]

    @classmethod
    def get_command_map(cls):
        return {
            "simulate": {"required_args": ["config"], "method": cls.simulate},
            "sweep": {"required_args": ["config", "grid"], "method": cls.sweep},
            "find-nash": {"required_args": ["game"], "method": cls.find_nash},
            "analyze": {"required_args": ["trace"], "method": cls.analyze},
        }

    @classmethod
    def simulate(cls, config, seed=None, out=None, workers=None, verbose=False, **kwargs):
        overrides = {k: _typed(v) for k, v in kwargs.items() if k in ExperimentConfig.get_annotations()}
        cfg = load_experiment(config, overrides)
        if verbose:
            cfg.verbose = True
        seeds = None if seed is None else [_as_int("seed", seed)]
        summaries = simulate(cfg, out_dir=out, seeds=seeds, workers=_as_int("workers", workers))
        return [s.to_safe_dict() for s in summaries]

    @classmethod
    def sweep(cls, config, grid, out=None, workers=None, verbose=False, **kwargs):
        base = read_json(config)
        sweep_grid = SweepGrid(read_json(grid))
        out = out or "sweep_out"
        os.makedirs(out, exist_ok=True)
        summary = sweep_from_grid(base, sweep_grid, workers=_as_int("workers", workers),
                                  events_path=os.path.join(out, EVENTS_FILE), verbose=bool(verbose))
        write_json(os.path.join(out, "sweep_summary.json"), summary)
        write_table(os.path.join(out, "sweep.csv"), summary.points, columns=list(SweepPoint.get_annotations()))
        return summary.to_safe_dict()

    @classmethod
    def find_nash(cls, game, budget=None, **kwargs):
        g = load_game(game)
        budget = _as_int("budget", budget) or DEFAULT_ENUMERATION_BUDGET
        return [c.to_safe_dict() for c in find_pure_nash(g, budget)]

    @classmethod
    def analyze(cls, trace, mu=None, **kwargs):
        lam = _as_float("lambda", kwargs.get("lambda"))
        report = analyze(trace, lam, _as_float("mu", mu))
        return report.to_safe_dict()


def main(argv=None) -> int:
    return CongestService.run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
