"""
Seeded experiment driver.

Every round is a barrier: all players sample from the policy of the previous
round, rewards are realized once, then every learner estimates and updates.
Row t of a record describes round t: the policy played, the action drawn, and
the running regret after the round.
"""
import json
import math
import os
import time
import warnings
from typing import List, Optional, Sequence

import numpy as np
import psutil

from congestexp.dependencies.BaseData import BaseData
from congestexp.equilibrium import (
    RegretAccumulator,
    certify,
    default_margin,
    max_smooth_lambda,
    nash_threshold_margin,
    strict_equilibrium,
    verify_smoothness,
    welfare_report,
)
from congestexp.errors import BudgetExceededError, NoStrictEquilibriumError, SchemaError, TraceIOError
from congestexp.events.models import (
    BOUND_VIOLATION,
    HYPOTHESIS_WARNING,
    RUN_FINISHED,
    RUN_STARTED,
    make_event,
)
from congestexp.events.ndjson_events import NDJSONWriter
from congestexp.game_model import (
    DEFAULT_ENUMERATION_BUDGET,
    CongestionGame,
    expected_round_values,
    expected_welfare,
    game_from_spec,
    load_game,
    sample_counterfactual_rewards,
    sample_stochastic_rewards,
)
from congestexp.learners import (
    BANDIT_MODES,
    CONSTANT,
    FULL_INFO_EXPECTED,
    FULL_INFO_STOCHASTIC,
    POWER_DECAY,
    InitConfig,
    Learner,
    LearnerConfig,
    NashConvergenceMonitor,
    TheoremHypothesisWarning,
    build_schedule,
    init_near_equilibrium,
    uniform_state,
)
from congestexp.tracefile import (
    EVENTS_FILE,
    ConvergenceSummary,
    RunRecord,
    RunSummary,
    action_bitmask,
    bitmask_action,
    emit_record,
    parse_record,
    write_json,
)

NEAR_NE = "near_ne"


class OutputConfig(BaseData):
    every: (int, 1)
    dir: (str, None)

    def do_validation(self, key, value):
        if key == OutputConfig.every and isinstance(value, int) and value < 1:
            return value, "every must be >= 1"
        return value, ""


class ExperimentConfig(BaseData):
    T: int
    game: (dict, None)
    game_file: (str, None)
    learner: (LearnerConfig, None)
    learners: (List[LearnerConfig], None)
    seeds: (List[int], None)
    reference: (list, None)
    outputs: (OutputConfig, None)
    budget: (int, DEFAULT_ENUMERATION_BUDGET)
    verbose: (bool, False)

    def get_defaults(self):
        return {
            ExperimentConfig.seeds: [0],
            ExperimentConfig.outputs: OutputConfig({}),
        }

    def do_validation(self, key, value):
        if key == ExperimentConfig.T and isinstance(value, int) and value < 1:
            return value, "T must be >= 1"
        if key == ExperimentConfig.seeds and isinstance(value, list) and not value:
            return value, "seeds must be non-empty"
        if key == ExperimentConfig.budget and isinstance(value, int) and value < 1:
            return value, "budget must be >= 1"
        return value, ""

    def __init__(self, in_dict=None, trim=False, **kwargs):
        super().__init__(in_dict, trim, **kwargs)
        if (self.game is None) == (self.game_file is None):
            raise SchemaError([(ExperimentConfig.game, "give exactly one of game or game_file")], "ExperimentConfig")
        if self.game is not None:
            try:
                game_from_spec(self.game)
            except SchemaError as e:
                raise SchemaError(e.prefixed(ExperimentConfig.game).errors, "ExperimentConfig")


def _merge(base: dict, overrides: dict) -> dict:
    out = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_experiment(path: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """
    Read an experiment file; ``game_file`` resolves against the file's directory.
    ``overrides`` (nested dict, e.g. from ``learner.mode=...`` on the command line) is merged in first.
    """
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except (OSError, ValueError) as e:
        raise TraceIOError(path, e)
    if not isinstance(raw, dict):
        raise SchemaError([("", "experiment file must hold a JSON object")], "ExperimentConfig")
    if overrides:
        raw = _merge(raw, overrides)
    gf = raw.get(ExperimentConfig.game_file)
    if isinstance(gf, str):
        if not os.path.isabs(gf):
            gf = os.path.join(os.path.dirname(os.path.abspath(path)), gf)
        if not os.path.exists(gf):
            raise SchemaError([(ExperimentConfig.game_file, f"{gf} does not exist")], "ExperimentConfig")
        raw[ExperimentConfig.game_file] = gf
    return ExperimentConfig(raw)


def experiment_game(config: ExperimentConfig) -> CongestionGame:
    if config.game is not None:
        return game_from_spec(config.game)
    try:
        return load_game(config.game_file)
    except SchemaError as e:
        raise SchemaError(e.prefixed(ExperimentConfig.game_file).errors, "ExperimentConfig")


def learner_configs(config: ExperimentConfig, n: int) -> List[LearnerConfig]:
    if config.learners is not None:
        if len(config.learners) != n:
            raise SchemaError([(ExperimentConfig.learners, f"expected {n} learner blocks, got {len(config.learners)}")],
                              "ExperimentConfig")
        return list(config.learners)
    shared = config.learner if config.learner is not None else LearnerConfig({})
    return [shared] * n


def make_streams(seed: int, run_index: int, n: int):
    """
    Philox streams keyed by SeedSequence([seed, run_index]); children in fixed
    order: n action streams, one shared realization stream, n counterfactual
    streams.
    """
    root = np.random.SeedSequence([int(seed), int(run_index)])
    children = root.spawn(2 * n + 1)
    gens = [np.random.Generator(np.random.Philox(c)) for c in children]
    return gens[:n], gens[n], gens[n + 1:]


def _emit_event(events: Optional[NDJSONWriter], kind: str, content: dict = None, **labels) -> None:
    if events is not None:
        events.append(make_event(kind, content, **labels))


def _resolve_reference(config: ExperimentConfig, game: CongestionGame, cfgs: Sequence[LearnerConfig]):
    if config.reference is not None:
        return game.validate_joint(config.reference)
    for c in cfgs:
        if c.init.kind == NEAR_NE and c.init.equilibrium is not None:
            return game.validate_joint(c.init.equilibrium)
    if any(c.init.kind == NEAR_NE for c in cfgs):
        return strict_equilibrium(game, config.budget).joint()
    return None


class _Monitoring:
    """Reference equilibrium bookkeeping for distance, U_M and bound checks."""

    def __init__(self, game: CongestionGame, reference, margin: Optional[float], schedule):
        self.game = game
        self.reference = reference
        self.gap = certify(game, reference).gap
        self.epsilon = self.gap / 2.0
        self.has_bound = self.gap > 0.0
        self.threshold = nash_threshold_margin(self.epsilon, game.k, game.F) if self.has_bound else math.inf
        if margin is None:
            margin = default_margin(self.epsilon, game.k, game.F) if self.has_bound else 0.0
        self.margin = float(margin)
        self.monitor = NashConvergenceMonitor(game, reference, self.margin)
        self.schedule = schedule
        self.scale = 2.0 * game.k * game.F

    def bounds(self, updates: int):
        if not self.has_bound:
            return math.nan, math.nan
        if math.isinf(self.epsilon):
            return 0.0, 0.0
        drift = self.epsilon * self.schedule.cumulative(updates)
        return (self.scale * math.exp(-self.margin - drift),
                self.scale * math.exp(-self.margin + drift))

    def z_limit(self, updates: int) -> float:
        if math.isinf(self.epsilon):
            return -math.inf
        return -self.margin - self.epsilon * self.schedule.cumulative(updates)


def _init_states(game, cfgs, schedules, reference, margin, emit_warning):
    states = [None] * game.n
    for i, c in enumerate(cfgs):
        if c.init.kind != NEAR_NE:
            states[i] = uniform_state(game, i, schedules[i], c.mode)
            continue
        M = margin if c.init.M is None else c.init.M
        if c.mode == FULL_INFO_STOCHASTIC:
            M = 2.0 * M
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            near = init_near_equilibrium(game, reference, M, schedules[i], c.mode)
        for w in caught:
            emit_warning(str(w.message))
        states[i] = near[i]
    return states


def run(config, seed: int, run_index: int = 0, events: Optional[NDJSONWriter] = None,
        game: Optional[CongestionGame] = None) -> RunRecord:
    config = ExperimentConfig(config)
    if game is None:
        game = experiment_game(config)
    T = config.T
    every = config.outputs.every
    cfgs = learner_configs(config, game.n)
    verbose = config.verbose
    started = time.time()
    _emit_event(events, RUN_STARTED, {"T": T, "modes": [c.mode for c in cfgs], "game": game.name or repr(game)},
                seed=int(seed), run_index=int(run_index))

    seen_warnings = set()

    def emit_warning(message):
        if message in seen_warnings:
            return
        seen_warnings.add(message)
        warnings.warn(message, TheoremHypothesisWarning)
        _emit_event(events, HYPOTHESIS_WARNING, {"message": message}, seed=int(seed), run_index=int(run_index))

    reference = _resolve_reference(config, game, cfgs)
    near_margins = [c.init.M for c in cfgs if c.init.kind == NEAR_NE and c.init.M is not None]
    watch = None
    margin = near_margins[0] if near_margins else None
    if reference is not None:
        gap = certify(game, reference).gap
        if margin is None and gap > 0.0:
            margin = default_margin(gap / 2.0, game.k, game.F)
    if margin is None:
        margin = 0.0
    schedules = [build_schedule(c.schedule, T, game.k, game.n, game.F, c.mode, margin=margin,
                                num_actions=game.num_actions(i)) for i, c in enumerate(cfgs)]
    if reference is not None:
        watch = _Monitoring(game, reference, margin, schedules[0])
        if not watch.has_bound:
            emit_warning(f"reference {reference} is not a strict equilibrium; bounds are not checked")
        elif watch.margin < watch.threshold:
            emit_warning(f"margin {watch.margin:.6g} below threshold {watch.threshold:.6g}; bounds are out-of-theorem")
        if not game.all_k_subsets:
            emit_warning("explicit action lists: convergence guarantees assume every k-subset is an action")
    states = _init_states(game, cfgs, schedules, reference, margin, emit_warning)
    learners = [Learner(game, s) for s in states]
    action_rngs, shared_rng, cf_rngs = make_streams(seed, run_index, game.n)

    n, F = game.n, game.F
    R = (T + every - 1) // every
    rec = {
        "t": np.zeros(R, dtype=np.int64),
        "actions": np.zeros((R, n), dtype=np.int64),
        "regret": np.zeros((R, n)),
        "nash_distance": np.full((R, n), np.nan),
        "welfare": np.zeros(R),
        "in_um": np.full(R, -1, dtype=np.int8),
        "scores": np.zeros((R, n, F)),
        "marginals": np.zeros((R, n, F)),
        "observed": np.zeros((R, n, F)),
        "zmax": np.full((R, n), np.nan),
        "bound_minus": np.full(R, np.nan),
        "bound_plus": np.full(R, np.nan),
    }
    acc = RegretAccumulator(game)
    welfare_sum = 0.0
    counts = {"minus": 0, "plus": 0, "z": 0, "um": 0}
    first_distance = last_distance = math.nan
    reported = set()

    for t in range(1, T + 1):
        policies = [L.policy for L in learners]
        q = np.stack([p.marginals() for p in policies])
        joint = tuple(p.sample_action(action_rngs[i]) for i, p in enumerate(policies))
        realized = sample_stochastic_rewards(game, joint, shared_rng)
        values = expected_round_values(game, q)
        acc.add_round(q, joint, values)
        welfare = expected_welfare(game, q)
        welfare_sum += welfare

        distances = zmax = None
        inside = -1
        b_minus = b_plus = math.nan
        if watch is not None:
            distances = np.array([p.l1_distance_to_pure(watch.reference[i]) for i, p in enumerate(policies)])
            zmax = np.array([watch.monitor.max_gap(p, i) for i, p in enumerate(policies)])
            inside = int(np.all(zmax <= -watch.margin + 1e-9))
            b_minus, b_plus = watch.bounds(t - 1)
            if watch.has_bound:
                over = distances > b_minus + 1e-12
                counts["minus"] += int(np.sum(over))
                counts["plus"] += int(np.sum(distances > b_plus + 1e-12))
                counts["z"] += int(np.sum(zmax > watch.z_limit(t - 1) + 1e-9))
                for i in np.flatnonzero(over):
                    if int(i) not in reported:
                        reported.add(int(i))
                        _emit_event(events, BOUND_VIOLATION,
                                    {"t": t, "distance": float(distances[i]), "bound": b_minus},
                                    seed=int(seed), run_index=int(run_index), player=int(i))
            counts["um"] += int(inside == 0)
            last_distance = float(np.max(distances))
            if t == 1:
                first_distance = last_distance

        observed = np.zeros((n, F))
        for i, L in enumerate(learners):
            mode = L.state.mode
            if mode in BANDIT_MODES:
                observed[i] = realized
                L.step(joint_action=joint, realized=realized)
            elif mode == FULL_INFO_EXPECTED:
                observed[i] = values[i]
                L.step(marginals=q, round_values=values)
            else:
                draws = sample_counterfactual_rewards(game, joint, i, cf_rngs[i])
                observed[i] = draws
                L.step(counterfactual=draws)

        if (t - 1) % every == 0:
            r = (t - 1) // every
            rec["t"][r] = t
            rec["actions"][r] = [action_bitmask(a) for a in joint]
            rec["regret"][r] = acc.regrets()
            rec["welfare"][r] = welfare
            rec["in_um"][r] = inside
            rec["scores"][r] = np.stack([p.scores for p in policies])
            rec["marginals"][r] = q
            rec["observed"][r] = observed
            rec["bound_minus"][r] = b_minus
            rec["bound_plus"][r] = b_plus
            if distances is not None:
                rec["nash_distance"][r] = distances
                rec["zmax"][r] = zmax
        if verbose and (t % max(T // 10, 1) == 0 or t == T):
            print(f"[run] seed={seed} t={t}/{T} max regret={float(np.max(acc.regrets())):.6g}")

    convergence = None
    if watch is not None:
        convergence = ConvergenceSummary({
            ConvergenceSummary.reference: [list(a) for a in watch.reference],
            ConvergenceSummary.gap: float(watch.gap),
            ConvergenceSummary.epsilon: float(watch.epsilon),
            ConvergenceSummary.threshold: float(watch.threshold),
            ConvergenceSummary.margin: watch.margin,
            ConvergenceSummary.init_margin: float(2.0 * watch.margin if any(c.mode == FULL_INFO_STOCHASTIC for c in cfgs) else watch.margin),
            ConvergenceSummary.strict: bool(watch.gap > 0.0),
            ConvergenceSummary.margin_ok: bool(watch.margin >= watch.threshold),
            ConvergenceSummary.all_k_subsets: game.all_k_subsets,
            ConvergenceSummary.violations_minus: counts["minus"],
            ConvergenceSummary.violations_plus: counts["plus"],
            ConvergenceSummary.z_violations: counts["z"],
            ConvergenceSummary.um_failures: counts["um"],
            ConvergenceSummary.initial_distance: float(first_distance),
            ConvergenceSummary.final_distance: float(last_distance),
        })
    traces = [acc.trace(i) for i in range(n)]
    summary = RunSummary({
        RunSummary.seed: int(seed),
        RunSummary.run_index: int(run_index),
        RunSummary.T: T,
        RunSummary.every: every,
        RunSummary.game: game.to_spec().to_safe_dict(),
        RunSummary.modes: [c.mode for c in cfgs],
        RunSummary.schedules: [repr(s) for s in schedules],
        RunSummary.regrets: [float(tr.regret) for tr in traces],
        RunSummary.realized_regrets: [float(tr.realized_regret) for tr in traces],
        RunSummary.regret_traces: [tr.to_safe_dict() for tr in traces],
        RunSummary.average_welfare: welfare_sum / T,
        RunSummary.convergence: convergence,
    })
    _emit_event(events, RUN_FINISHED, {
        "wall_s": time.time() - started,
        "rss_bytes": psutil.Process().memory_info().rss,
        "regrets": summary.regrets,
    }, seed=int(seed), run_index=int(run_index))
    return RunRecord(summary, **rec)


# --- studies ---------------------------------------------------------------------

class ConvergenceRow(BaseData):
    seed: int
    violations_minus: int
    violations_plus: int
    z_violations: int
    um_failures: int
    initial_distance: float
    final_distance: float
    clean: bool


class ConvergenceStudy(BaseData):
    game: str
    mode: str
    reference: List[List[int]]
    gap: float
    epsilon: float
    margin: float
    threshold: float
    strict: bool
    margin_ok: bool
    all_k_subsets: bool
    T: int
    rows: List[ConvergenceRow]
    clean_fraction: float
    plus_clean_fraction: float
    delta: (float, None)
    target: (float, None)
    meets_target: (bool, None)

    NULL_IS_INF = ("gap", "epsilon", "threshold")


_STUDY_MODES = {"expected": FULL_INFO_EXPECTED, "stochastic": FULL_INFO_STOCHASTIC}


def convergence_config(game: CongestionGame, mode: str, T: int, seeds: Sequence[int], reference,
                       margin: float, schedule: Optional[dict] = None, delta: float = 0.2) -> ExperimentConfig:
    if schedule is None:
        if mode == FULL_INFO_STOCHASTIC:
            schedule = {"variant": POWER_DECAY, "alpha": 0.75, "auto_beta": {"delta": delta, "M": margin}}
        else:
            schedule = {"variant": CONSTANT}
    init = {InitConfig.kind: NEAR_NE, InitConfig.M: margin, InitConfig.equilibrium: [list(a) for a in reference]}
    return ExperimentConfig({
        ExperimentConfig.T: T,
        ExperimentConfig.game: game.to_spec().to_safe_dict(),
        ExperimentConfig.learner: {LearnerConfig.mode: mode, LearnerConfig.schedule: schedule, LearnerConfig.init: init},
        ExperimentConfig.seeds: [int(s) for s in seeds],
        ExperimentConfig.reference: [list(a) for a in reference],
    })


def run_convergence_study(game: CongestionGame, mode: str, M: Optional[float] = None, schedule: Optional[dict] = None,
                          seeds: Sequence[int] = (0,), T: int = 500, equilibrium=None, delta: Optional[float] = None,
                          workers: Optional[int] = None, events_path: Optional[str] = None,
                          budget: int = DEFAULT_ENUMERATION_BUDGET):
    """
    Runs near-equilibrium full-information learners from a strict equilibrium
    and checks the distance-to-equilibrium bound every round. Returns
    (ConvergenceStudy, records).
    """
    from congestexp.sweeps import run_many

    mode = _STUDY_MODES.get(mode, mode)
    if mode not in (FULL_INFO_EXPECTED, FULL_INFO_STOCHASTIC):
        raise SchemaError([("mode", f"convergence studies use 'expected' or 'stochastic', got {mode!r}")], "ConvergenceStudy")
    if equilibrium is None:
        cert = strict_equilibrium(game, budget)
    else:
        cert = certify(game, equilibrium)
        if not cert.strict:
            raise NoStrictEquilibriumError(f"{cert.joint()} is not a strict equilibrium (gap {cert.gap})")
    reference = cert.joint()
    eps = cert.theorem_epsilon
    margin = default_margin(eps, game.k, game.F) if M is None else float(M)
    config = convergence_config(game, mode, T, seeds, reference, margin, schedule, 0.2 if delta is None else delta)
    records = run_many(config, list(seeds), workers=workers, events_path=events_path, game=game)
    rows = []
    for rec in records:
        c = rec.summary.convergence
        rows.append(ConvergenceRow({
            ConvergenceRow.seed: rec.summary.seed,
            ConvergenceRow.violations_minus: c.violations_minus,
            ConvergenceRow.violations_plus: c.violations_plus,
            ConvergenceRow.z_violations: c.z_violations,
            ConvergenceRow.um_failures: c.um_failures,
            ConvergenceRow.initial_distance: c.initial_distance,
            ConvergenceRow.final_distance: c.final_distance,
            ConvergenceRow.clean: c.violations_minus == 0,
        }))
    clean = float(np.mean([r.clean for r in rows]))
    plus_clean = float(np.mean([r.violations_plus == 0 for r in rows]))
    threshold = nash_threshold_margin(eps, game.k, game.F)
    raw = {
        ConvergenceStudy.game: game.name or repr(game),
        ConvergenceStudy.mode: mode,
        ConvergenceStudy.reference: [list(a) for a in reference],
        ConvergenceStudy.gap: float(cert.gap),
        ConvergenceStudy.epsilon: float(eps),
        ConvergenceStudy.margin: margin,
        ConvergenceStudy.threshold: threshold,
        ConvergenceStudy.strict: True,
        ConvergenceStudy.margin_ok: bool(margin >= threshold),
        ConvergenceStudy.all_k_subsets: game.all_k_subsets,
        ConvergenceStudy.T: int(T),
        ConvergenceStudy.rows: rows,
        ConvergenceStudy.clean_fraction: clean,
        ConvergenceStudy.plus_clean_fraction: plus_clean,
    }
    if delta is not None:
        raw[ConvergenceStudy.delta] = float(delta)
        raw[ConvergenceStudy.target] = 1.0 - float(delta)
        raw[ConvergenceStudy.meets_target] = bool(clean >= 1.0 - float(delta))
    return ConvergenceStudy(raw), records


# --- replay and analysis ---------------------------------------------------------

def record_game(record: RunRecord) -> CongestionGame:
    return game_from_spec(record.summary.game)


def record_joint_actions(record: RunRecord) -> List[tuple]:
    F = record.F
    return [tuple(bitmask_action(m, F) for m in row) for row in record.actions]


def replay_regret(record: RunRecord, game: Optional[CongestionGame] = None) -> np.ndarray:
    """Recompute every player's final regret from the stored marginals."""
    if record.summary.every != 1:
        raise ValueError("replay needs a full trace (every = 1)")
    game = record_game(record) if game is None else game
    acc = RegretAccumulator(game)
    for q in record.marginals:
        acc.add_round(q)
    return acc.regrets()


class AnalysisReport(BaseData):
    T: int
    k: int
    F: int
    regrets: List[float]
    realized_regrets: List[float]
    regret_constant: float
    replayed: bool
    replay_max_error: (float, None)
    welfare: (dict, None)
    smooth_verified: (bool, None)
    convergence: (dict, None)


def analyze(run_dir: str, lam: Optional[float] = None, mu: Optional[float] = None,
            budget: int = DEFAULT_ENUMERATION_BUDGET) -> AnalysisReport:
    """Welfare bound, regret constants and convergence flags of one run directory; writes analysis.json."""
    if os.path.isfile(run_dir):
        run_dir = os.path.dirname(os.path.abspath(run_dir))
    record = parse_record(run_dir)
    game = record_game(record)
    T = record.summary.T
    regrets = record.final_regrets()
    raw = {
        AnalysisReport.T: T,
        AnalysisReport.k: game.k,
        AnalysisReport.F: game.F,
        AnalysisReport.regrets: regrets.tolist(),
        AnalysisReport.realized_regrets: list(record.summary.realized_regrets),
        AnalysisReport.regret_constant: float(np.max(regrets) / (game.k * game.F * math.sqrt(T))),
        AnalysisReport.replayed: record.summary.every == 1,
    }
    if record.summary.every == 1:
        raw[AnalysisReport.replay_max_error] = float(np.max(np.abs(replay_regret(record, game) - regrets)))
    mu = 0.0 if mu is None else float(mu)
    try:
        if lam is None:
            lam, _ = max_smooth_lambda(game, mu, budget)
            raw[AnalysisReport.smooth_verified] = True
        else:
            raw[AnalysisReport.smooth_verified] = bool(verify_smoothness(game, float(lam), mu, budget)[0])
    except BudgetExceededError:
        lam = None
    if lam is not None and math.isfinite(lam):
        if record.summary.every == 1:
            trajectory = record.welfare
        else:
            trajectory = np.full(T, record.summary.average_welfare)
        try:
            report = welfare_report(game, trajectory, float(lam), mu, regrets, budget=budget)
            raw[AnalysisReport.welfare] = report.to_safe_dict()
        except BudgetExceededError:
            pass
    if record.summary.convergence is not None:
        raw[AnalysisReport.convergence] = record.summary.convergence.to_safe_dict()
    report = AnalysisReport(raw)
    write_json(os.path.join(run_dir, "analysis.json"), report)
    return report


def simulate(config: ExperimentConfig, out_dir: Optional[str] = None, seeds: Optional[Sequence[int]] = None,
             workers: Optional[int] = None) -> List[RunSummary]:
    """Run every seed and write one run directory per seed (a single seed writes into ``out_dir``)."""
    from congestexp.sweeps import run_many

    config = ExperimentConfig(config)
    seeds = list(config.seeds if seeds is None else seeds)
    out_dir = out_dir or config.outputs.dir or "out"
    os.makedirs(out_dir, exist_ok=True)
    events_path = os.path.join(out_dir, EVENTS_FILE)
    records = run_many(config, seeds, workers=workers, events_path=events_path)
    summaries = []
    for seed, record in zip(seeds, records):
        target = out_dir if len(seeds) == 1 else os.path.join(out_dir, f"seed_{seed}")
        emit_record(record, target)
        summaries.append(record.summary)
    return summaries
