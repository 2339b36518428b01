"""
CongestEXP learners: facility-level estimates plus factored exponential weights.

Scores absorb the learning rate: G(f) = G0(f) + sum_t eta_t * y_t(f), where
G0 is the initialization offset (round 0).
"""
import math
import warnings
from typing import List, Optional, Sequence

import numpy as np

from congestexp.dependencies.BaseData import BaseData
from congestexp.equilibrium import deviation_gap
from congestexp.errors import InvariantViolation, SchemaError
from congestexp.factored_policy import ActionLevelPolicy, FactoredPolicy
from congestexp.game_model import CongestionGame, expected_round_values

SEMI_BANDIT = "semi_bandit"
FULL_INFO_EXPECTED = "full_info_expected"
FULL_INFO_STOCHASTIC = "full_info_stochastic"
SEMI_BANDIT_ACTION_LEVEL = "semi_bandit_action_level"
MODES = (SEMI_BANDIT, FULL_INFO_EXPECTED, FULL_INFO_STOCHASTIC, SEMI_BANDIT_ACTION_LEVEL)
BANDIT_MODES = (SEMI_BANDIT, SEMI_BANDIT_ACTION_LEVEL)

CONSTANT = "constant"
POWER_DECAY = "power_decay"


class TheoremHypothesisWarning(UserWarning):
    """A convergence guarantee's preconditions are not met; results are out-of-theorem."""


# --- config records ---------------------------------------------------------------

class AutoBetaConfig(BaseData):
    delta: float
    M: (float, None)

    def do_validation(self, key, value):
        if key == AutoBetaConfig.delta and isinstance(value, float) and not (0.0 < value < 1.0):
            return value, "delta must lie in (0, 1)"
        if key == AutoBetaConfig.M and isinstance(value, float) and value <= 0.0:
            return value, "M must be > 0"
        return value, ""


class ScheduleConfig(BaseData):
    variant: (str, CONSTANT)
    eta: (float, None)
    beta: (float, None)
    alpha: (float, None)
    auto_beta: (AutoBetaConfig, None)

    def do_validation(self, key, value):
        if key == ScheduleConfig.variant and value not in (CONSTANT, POWER_DECAY):
            return value, f"variant must be '{CONSTANT}' or '{POWER_DECAY}'"
        if key == ScheduleConfig.eta and isinstance(value, float) and value <= 0.0:
            return value, "eta must be > 0"
        if key == ScheduleConfig.beta and isinstance(value, float) and value <= 0.0:
            return value, "beta must be > 0"
        if key == ScheduleConfig.alpha and isinstance(value, float) and not (0.5 < value < 1.0):
            return value, "alpha must lie in (1/2, 1)"
        return value, ""

    def __init__(self, in_dict=None, trim=False, **kwargs):
        super().__init__(in_dict, trim, **kwargs)
        if self.variant == POWER_DECAY:
            errors = []
            if self.alpha is None:
                errors.append((ScheduleConfig.alpha, "power_decay needs alpha"))
            if (self.beta is None) == (self.auto_beta is None):
                errors.append((ScheduleConfig.beta, "power_decay needs exactly one of beta or auto_beta"))
            if errors:
                raise SchemaError(errors, "ScheduleConfig")


class InitConfig(BaseData):
    kind: (str, "uniform")
    M: (float, None)
    equilibrium: (list, None)

    def do_validation(self, key, value):
        if key == InitConfig.kind and value not in ("uniform", "near_ne"):
            return value, "init kind must be 'uniform' or 'near_ne'"
        if key == InitConfig.M and isinstance(value, float) and value < 0.0:
            return value, "M must be >= 0"
        return value, ""


class LearnerConfig(BaseData):
    mode: (str, SEMI_BANDIT)
    schedule: (ScheduleConfig, None)
    init: (InitConfig, None)

    def get_defaults(self):
        return {
            LearnerConfig.schedule: ScheduleConfig({}),
            LearnerConfig.init: InitConfig({}),
        }

    def do_validation(self, key, value):
        if key == LearnerConfig.mode and value not in MODES:
            return value, f"mode must be one of {MODES}"
        return value, ""


# --- schedules -----------------------------------------------------------------

class ConstantSchedule:
    def __init__(self, eta: float):
        self.eta = float(eta)

    def rate(self, t: int) -> float:
        """Rate applied at update number t (0-indexed)."""
        return self.eta

    def cumulative(self, t: int) -> float:
        """Sum of the first t rates."""
        return self.eta * t

    def square_sum_bound(self, horizon: Optional[int] = None) -> float:
        return math.inf if horizon is None else self.eta ** 2 * horizon

    def __repr__(self):
        return f"ConstantSchedule(eta={self.eta:.6g})"


class PowerDecaySchedule:
    """eta_t = beta * (t + 1) ** -alpha."""

    def __init__(self, beta: float, alpha: float):
        if not (0.5 < alpha < 1.0):
            raise ValueError("alpha must lie in (1/2, 1)")
        self.beta = float(beta)
        self.alpha = float(alpha)
        self._prefix = [0.0]

    def rate(self, t: int) -> float:
        return self.beta * (t + 1) ** (-self.alpha)

    def cumulative(self, t: int) -> float:
        while len(self._prefix) <= t:
            j = len(self._prefix) - 1
            self._prefix.append(self._prefix[-1] + self.rate(j))
        return self._prefix[t]

    def square_sum_bound(self, horizon: Optional[int] = None) -> float:
        # sum_{t>=0} (t+1)^{-2 alpha} <= 1 + 1/(2 alpha - 1)
        return self.beta ** 2 * (1.0 + 1.0 / (2.0 * self.alpha - 1.0))

    def __repr__(self):
        return f"PowerDecaySchedule(beta={self.beta:.6g}, alpha={self.alpha:.6g})"


def theorem5_beta(delta: float, M: float, k: int, n: int, F: int, alpha: float) -> float:
    """
    Largest beta with sum_t eta_t^2 <= delta M^2 / (8 n k^2 (F - 1)), bounding the
    square sum by beta^2 (1 + 1/(2 alpha - 1)).
    """
    if F <= 1:
        raise ValueError("F = 1 leaves no choice; the learning-rate condition is undefined")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if not (0.5 < alpha < 1.0):
        raise ValueError("alpha must lie in (1/2, 1)")
    if M <= 0:
        raise ValueError("M must be > 0")
    budget = delta * M * M / (8.0 * n * k * k * (F - 1))
    return math.sqrt(budget / (1.0 + 1.0 / (2.0 * alpha - 1.0)))


def build_schedule(config: ScheduleConfig, horizon: int, k: int, n: int, F: int, mode: str,
                   margin: Optional[float] = None, num_actions: Optional[int] = None):
    """
    Default constant rate is min(1/sqrt(T), 1/k); action-level learners default to
    sqrt(2 ln N / (T N)) / k over their N actions.
    """
    config = ScheduleConfig(config)
    if config.variant == CONSTANT:
        if config.eta is not None:
            eta = config.eta
        elif mode == SEMI_BANDIT_ACTION_LEVEL:
            N = math.comb(F, k) if num_actions is None else int(num_actions)
            eta = min(math.sqrt(2.0 * math.log(max(N, 2)) / (horizon * N)) / k, 1.0 / k)
        else:
            eta = min(1.0 / math.sqrt(horizon), 1.0 / k)
        if mode in BANDIT_MODES and eta > 1.0 / k + 1e-15:
            raise SchemaError([(ScheduleConfig.eta, f"semi-bandit regret guarantee needs eta <= 1/k = {1.0 / k:.6g}, got {eta}")],
                              "ScheduleConfig")
        return ConstantSchedule(eta)
    if config.beta is not None:
        return PowerDecaySchedule(config.beta, config.alpha)
    auto = config.auto_beta
    M = auto.M if auto.M is not None else margin
    if M is None:
        raise SchemaError([("auto_beta.M", "no margin given and no near_ne init margin to borrow")], "ScheduleConfig")
    return PowerDecaySchedule(theorem5_beta(auto.delta, M, k, n, F, config.alpha), config.alpha)


# --- estimates -------------------------------------------------------------------

class EstimateVector:
    def __init__(self, values, mode: str, played=None):
        values = np.array(values, dtype=float)
        values.setflags(write=False)
        self.values = values
        self.mode = mode
        self.played = None if played is None else tuple(played)

    def check(self) -> "EstimateVector":
        if self.mode == SEMI_BANDIT:
            if np.any(self.values > 1.0 + 1e-12):
                raise InvariantViolation("semi-bandit estimates never exceed 1")
            if self.played is not None:
                off = np.ones(self.values.size, dtype=bool)
                off[list(self.played)] = False
                if np.any(self.values[off] != 1.0):
                    raise InvariantViolation("semi-bandit estimates are 1 off the played action")
        elif self.mode == SEMI_BANDIT_ACTION_LEVEL:
            if self.played is not None:
                off = np.delete(self.values, list(self.played))
                if off.size and (np.any(off != off[0]) or np.any(self.values[list(self.played)] > off[0] + 1e-12)):
                    raise InvariantViolation("action-level estimates are constant off the played action and no larger on it")
        elif np.any(self.values < -1e-12) or np.any(self.values > 1.0 + 1e-12):
            raise InvariantViolation("full-information estimates lie in [0, 1]")
        return self

    def __repr__(self):
        return f"EstimateVector({self.mode}, {np.array2string(self.values, precision=4)})"


def estimate_semibandit(action: Sequence[int], observed, marginals) -> EstimateVector:
    """y(f) = 1 - 1{f in a}(1 - R^f)/q(f). ``observed`` maps (or indexes) facility -> R^f."""
    q = np.asarray(marginals, dtype=float)
    y = np.ones(q.size)
    for f in action:
        if q[f] <= 0.0:
            raise InvariantViolation(f"played facility {f} has zero inclusion probability")
        y[f] = 1.0 - (1.0 - float(observed[f])) / q[f]
    return EstimateVector(y, SEMI_BANDIT, played=action).check()


def estimate_fullinfo_expected(game: CongestionGame, player: int, marginals, round_values=None) -> EstimateVector:
    """
    y(f) = E_{a_{-i}~w_{-i}}[r^f(a_i, a_{-i})] for every facility. Row ``player`` of
    ``marginals`` is ignored; ``round_values`` may carry the (n, F) table already
    computed from the same marginals.
    """
    if round_values is None:
        round_values = expected_round_values(game, marginals)
    values = np.asarray(round_values, dtype=float)[player]
    return EstimateVector(values, FULL_INFO_EXPECTED).check()


def estimate_fullinfo_stochastic(sampled_rewards) -> EstimateVector:
    """y(f) = R^f drawn at the counterfactual load n_f(a_{-i}) + 1."""
    return EstimateVector(sampled_rewards, FULL_INFO_STOCHASTIC).check()


def quadratic_term(policy: FactoredPolicy, estimate: EstimateVector) -> float:
    """sum_a w(a) (sum_{f in a} y(f))^2 = y^T Q y with Q the pairwise inclusion matrix."""
    y = estimate.values
    return float(y @ policy.pairwise_marginals() @ y)


def action_level_estimate(policy: FactoredPolicy, played, observed):
    """
    Naive importance estimate over whole actions:
    y(a) = k - 1{a = a_t}(k - sum_{f in a_t} R^f)/w(a).
    Returns (actions, estimates) over the enumerated action space.
    """
    played = policy.check_action(played)
    actions, probs = policy.probability_table()
    k = policy.k
    loss = k - float(sum(observed[f] for f in played))
    est = np.full(len(actions), float(k))
    j = actions.index(played)
    est[j] = k - loss / probs[j]
    return actions, est


def estimate_action_level(policy: ActionLevelPolicy, played, observed) -> EstimateVector:
    """action_level_estimate as an update vector over ``policy.actions``; ``played`` holds the played index."""
    actions, est = action_level_estimate(policy, played, observed)
    return EstimateVector(est, SEMI_BANDIT_ACTION_LEVEL, played=(actions.index(policy.check_action(played)),)).check()


def quadratic_term_action_level(policy: FactoredPolicy, played, observed) -> float:
    """
    Same quantity for the action-level importance estimator
    y(a) = k - 1{a = a_t}(k - sum_{f in a_t} R^f)/w(a): every a != a_t scores k.
    """
    k = policy.k
    w = policy.action_probability(played)
    loss = k - float(sum(observed[f] for f in played))
    return k * k * (1.0 - w) + w * (k - loss / w) ** 2


# --- learner state -------------------------------------------------------------------

def _raw_scores(policy) -> np.ndarray:
    """The vector updates are added to: per action for action-level policies, per facility otherwise."""
    return policy.action_scores if isinstance(policy, ActionLevelPolicy) else policy.scores


class LearnerState:
    def __init__(self, player: int, policy: FactoredPolicy, schedule, mode: str,
                 t: int = 0, offsets=None):
        if mode not in MODES:
            raise ValueError(f"unknown feedback mode {mode}")
        self.player = player
        self.policy = policy
        self.schedule = schedule
        self.mode = mode
        self.t = int(t)
        self.offsets = np.zeros(_raw_scores(policy).size) if offsets is None else np.array(offsets, dtype=float)

    @property
    def learned(self) -> np.ndarray:
        """Scores accumulated from updates, excluding the round-0 offsets."""
        return _raw_scores(self.policy) - self.offsets

    def __repr__(self):
        return f"LearnerState(player={self.player}, t={self.t}, mode={self.mode}, {self.policy!r})"


def update(state: LearnerState, estimate: EstimateVector) -> LearnerState:
    eta = state.schedule.rate(state.t)
    policy = state.policy.add(eta * estimate.values)
    return LearnerState(state.player, policy, state.schedule, state.mode, state.t + 1, state.offsets)


def uniform_state(game: CongestionGame, player: int, schedule, mode: str) -> LearnerState:
    if mode == SEMI_BANDIT_ACTION_LEVEL:
        return LearnerState(player, ActionLevelPolicy.uniform(game.F, game.k, game.actions(player)), schedule, mode)
    lists = None if game.all_k_subsets else game.actions(player)
    return LearnerState(player, FactoredPolicy.uniform(game.F, game.k, lists), schedule, mode)


def init_near_equilibrium(game: CongestionGame, equilibrium, margin: float, schedule, mode: str = FULL_INFO_EXPECTED,
                          check_strict: bool = True) -> List[LearnerState]:
    """
    G0(f) = M on a*_i and 0 elsewhere, so every deviating action trades at least one
    M-scored facility for a zero-scored one.
    """
    joint = game.validate_joint(equilibrium)
    if check_strict:
        gap = deviation_gap(game, joint)
        if not gap > 0.0:
            warnings.warn(f"{joint} is not a strict Nash equilibrium (gap {gap}); convergence bounds do not apply",
                          TheoremHypothesisWarning)
    if not game.all_k_subsets:
        warnings.warn("explicit action lists: convergence guarantees assume every k-subset is an action",
                      TheoremHypothesisWarning)
    states = []
    for i, a in enumerate(joint):
        if mode == SEMI_BANDIT_ACTION_LEVEL:
            policy = ActionLevelPolicy.point_mass(game.F, game.k, game.actions(i), a, margin)
            states.append(LearnerState(i, policy, schedule, mode, 0, policy.action_scores.copy()))
            continue
        lists = None if game.all_k_subsets else game.actions(i)
        policy = FactoredPolicy.point_mass(game.F, game.k, a, margin, lists)
        floor = 1.0 - game.k * game.F * math.exp(-margin)
        if policy.action_probability(a) < floor - 1e-12:
            raise InvariantViolation(f"player {i}: w0(a*) below 1 - kF exp(-M)")
        states.append(LearnerState(i, policy, schedule, mode, 0, policy.scores.copy()))
    return states


class NashConvergenceMonitor:
    """
    Tracks z(a) = sum_{f in a} G(f) - sum_{f in a*} G(f) in score units.
    In U_M iff z(a) <= -M for every player and every a != a*_i.
    """

    def __init__(self, game: CongestionGame, equilibrium, margin: float):
        self.game = game
        self.equilibrium = game.validate_joint(equilibrium)
        self.margin = float(margin)

    def swap_gaps(self, policy: FactoredPolicy, player: int) -> np.ndarray:
        """(k, F-k) matrix: G(out) - G(in) for swapping facility in a* for one outside it."""
        a = list(self.equilibrium[player])
        inside = policy.scores[a]
        outside = np.delete(policy.scores, a)
        return outside[None, :] - inside[:, None]

    def max_gap(self, policy: FactoredPolicy, player: int) -> float:
        """max over a != a*_i of z(a); -inf when a*_i is the only action."""
        if isinstance(policy, ActionLevelPolicy):
            return policy.max_gap(self.equilibrium[player])
        a = list(self.equilibrium[player])
        G = policy.scores
        if not self.game.all_k_subsets:
            X = self.game.incidence(player)
            base = float(np.sum(G[a]))
            star = self.game.action_index(player, a)
            z = X @ G - base
            z[star] = -np.inf
            return float(np.max(z)) if z.size > 1 else -np.inf
        if self.game.k == self.game.F:
            return -np.inf
        # j swaps: best pairs the j largest outside scores with the j smallest inside ones
        inside = np.sort(G[a])
        outside = -np.sort(-np.delete(G, a))
        m = min(inside.size, outside.size)
        return float(np.max(np.cumsum(outside[:m] - inside[:m])))

    def in_UM(self, states: Sequence[LearnerState]) -> bool:
        return all(self.max_gap(s.policy, s.player) <= -self.margin + 1e-12 for s in states)


class Learner:
    """
    One player's CongestEXP loop state. ``step`` builds the estimate for the
    configured feedback mode from one round's observations and applies it.
    """

    def __init__(self, game: CongestionGame, state: LearnerState):
        self.game = game
        self.state = state

    @property
    def policy(self) -> FactoredPolicy:
        return self.state.policy

    def step(self, joint_action=None, realized=None, marginals=None, counterfactual=None,
             round_values=None) -> EstimateVector:
        """
        semi_bandit, semi_bandit_action_level: need joint_action and realized facility rewards.
        full_info_expected: needs the (n, F) marginals of every player.
        full_info_stochastic: needs this player's counterfactual draws.
        """
        mode = self.state.mode
        if mode == SEMI_BANDIT:
            own = joint_action[self.state.player]
            est = estimate_semibandit(own, realized, self.state.policy.marginals())
        elif mode == SEMI_BANDIT_ACTION_LEVEL:
            est = estimate_action_level(self.state.policy, joint_action[self.state.player], realized)
        elif mode == FULL_INFO_EXPECTED:
            est = estimate_fullinfo_expected(self.game, self.state.player, marginals, round_values)
        else:
            est = estimate_fullinfo_stochastic(counterfactual)
        self.state = update(self.state, est)
        return est
