"""
Ground-truth oracles over pure profiles: Nash enumeration, Rosenthal potential,
best-response dynamics, best-in-hindsight regret, welfare optimum and
(lambda, mu)-smoothness checks.

Enumeration follows the lexicographic profile order of
``game_model.enumerate_profiles``, so every tie-break below is reproducible.
"""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from congestexp.dependencies.BaseData import BaseData
from congestexp.errors import BudgetExceededError, InvariantViolation, NoStrictEquilibriumError
from congestexp.game_model import (
    DEFAULT_ENUMERATION_BUDGET,
    CongestionGame,
    enumerate_profiles,
    expected_round_values,
    expected_welfare,
    facility_loads,
    joint_from_indices,
    profile_loads,
    profile_rewards,
)

_TOL = 1e-12


class NashCertificate(BaseData):
    joint_action: List[List[int]]
    strict: bool
    gap: float
    theorem_epsilon: float
    potential: (float, None)

    # a profile where no player has an alternative action has gap +inf
    NULL_IS_INF = ("gap", "theorem_epsilon")

    def joint(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(tuple(a) for a in self.joint_action)


class RegretTrace(BaseData):
    player: int
    T: int
    cumulative: float
    facility_values: List[float]
    best_value: float
    best_action: List[int]
    regret: float
    realized_cumulative: (float, None)
    realized_best: (float, None)
    realized_regret: (float, None)


class WelfareReport(BaseData):
    opt: float
    lam: float
    mu: float
    T: int
    average_welfare: float
    regret_sum: float
    bound: float
    slack: float
    holds: bool

    NULL_IS_INF = ("lam",)


def _certificate(game: CongestionGame, joint, gap: float) -> NashCertificate:
    return NashCertificate({
        NashCertificate.joint_action: [list(a) for a in joint],
        NashCertificate.strict: bool(gap > 0.0),
        NashCertificate.gap: float(gap),
        NashCertificate.theorem_epsilon: float(gap) / 2.0,
        NashCertificate.potential: rosenthal_potential(game, joint),
    })


# --- single-profile quantities ---------------------------------------------------

def rosenthal_potential(game: CongestionGame, joint_action) -> float:
    """Phi(a) = sum_f sum_{m <= n_f(a)} r^f(m)."""
    loads = facility_loads(game, joint_action)
    return float(np.sum(game.cumulative[np.arange(game.F), loads]))


def _others_loads(game: CongestionGame, joint, player: int) -> np.ndarray:
    loads = np.zeros(game.F, dtype=int)
    for j, a in enumerate(joint):
        if j != player:
            loads[list(a)] += 1
    return loads


def deviation_rewards(game: CongestionGame, joint_action, player: int) -> np.ndarray:
    """Reward of every action of ``player`` against the fixed others in ``joint_action``."""
    joint = game.validate_joint(joint_action)
    others = _others_loads(game, joint, player)
    values = game.tables[np.arange(game.F), others]
    return game.incidence(player) @ values


def deviation_gap(game: CongestionGame, joint_action) -> float:
    """
    min over players and deviations of r_i(a*) - r_i(a_i', a*_{-i}).
    inf when no player has an alternative action.
    """
    joint = game.validate_joint(joint_action)
    gap = math.inf
    for i, a in enumerate(joint):
        if game.num_actions(i) < 2:
            continue
        rewards = deviation_rewards(game, joint, i)
        own = game.action_index(i, a)
        others = np.delete(rewards, own)
        gap = min(gap, float(rewards[own] - np.max(others)))
    return gap


def certify(game: CongestionGame, joint_action) -> NashCertificate:
    """Certificate for a given profile; a negative gap means it is not an equilibrium."""
    joint = game.validate_joint(joint_action)
    return _certificate(game, joint, deviation_gap(game, joint))


# --- enumeration oracles ------------------------------------------------------------

def _profile_tensor(game: CongestionGame, budget: int):
    profiles = enumerate_profiles(game, budget)
    loads = profile_loads(game, profiles)
    rewards = profile_rewards(game, profiles, loads)
    shape = tuple(game.num_actions(i) for i in range(game.n))
    return profiles, loads, rewards, shape


def find_pure_nash(game: CongestionGame, budget: int = DEFAULT_ENUMERATION_BUDGET) -> List[NashCertificate]:
    """Every pure Nash equilibrium, in lexicographic profile order."""
    profiles, _, rewards, shape = _profile_tensor(game, budget)
    P = profiles.shape[0]
    is_ne = np.ones(P, dtype=bool)
    gap = np.full(P, np.inf)
    for i in range(game.n):
        if shape[i] < 2:
            continue
        R = rewards[:, i].reshape(shape)
        ordered = np.sort(R, axis=i)
        top1 = np.take(ordered, -1, axis=i)
        top2 = np.take(ordered, -2, axis=i)
        best = np.broadcast_to(np.expand_dims(top1, i), shape).reshape(P)
        second = np.broadcast_to(np.expand_dims(top2, i), shape).reshape(P)
        own = R.reshape(P)
        is_ne &= own >= best - _TOL
        # own == best: the gap is to the runner-up, 0 under a tie
        gap = np.minimum(gap, np.where(own >= best - _TOL, own - second, own - best))
    found = [
        _certificate(game, joint_from_indices(game, profiles[p]), max(float(gap[p]), 0.0) if np.isfinite(gap[p]) else math.inf)
        for p in np.flatnonzero(is_ne)
    ]
    if not found:
        raise InvariantViolation(f"{game!r}: no pure Nash equilibrium found; every congestion game has one")
    return found


def strict_equilibrium(game: CongestionGame, budget: int = DEFAULT_ENUMERATION_BUDGET) -> NashCertificate:
    """The strict equilibrium with the largest gap; first in profile order on ties."""
    best = None
    for cert in find_pure_nash(game, budget):
        if cert.strict and (best is None or cert.gap > best.gap):
            best = cert
    if best is None:
        raise NoStrictEquilibriumError(f"{game!r} has no strict pure Nash equilibrium; convergence bounds need one")
    return best


def best_response(game: CongestionGame, joint_action, player: int) -> Tuple[int, ...]:
    rewards = deviation_rewards(game, joint_action, player)
    return game.actions(player)[int(np.argmax(rewards))]


def _has_improving_move(game: CongestionGame, joint) -> bool:
    for i in range(game.n):
        rewards = deviation_rewards(game, joint, i)
        if rewards.max() > rewards[game.action_index(i, joint[i])] + _TOL:
            return True
    return False


def best_response_dynamics(game: CongestionGame, start, max_iters: int = 10000, verbose: bool = False):
    """
    Round-robin strict improvements until no player can gain; Phi never decreases.
    At most ``max_iters`` moves; a profile reached by the last allowed move is returned if it is settled.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    joint = list(game.validate_joint(start))
    potential = rosenthal_potential(game, joint)
    moves = 0
    while True:
        improved = False
        for i in range(game.n):
            rewards = deviation_rewards(game, joint, i)
            own = rewards[game.action_index(i, joint[i])]
            j = int(np.argmax(rewards))
            if rewards[j] > own + _TOL:
                joint[i] = game.actions(i)[j]
                moves += 1
                nxt = rosenthal_potential(game, joint)
                if nxt < potential - 1e-9:
                    raise InvariantViolation(f"potential decreased from {potential} to {nxt}")
                potential = nxt
                improved = True
                if verbose:
                    print(f"[brd] move {moves}: player {i} -> {joint[i]} (potential {potential:.6g})")
                if moves >= max_iters:
                    break
        if not improved:
            return tuple(joint)
        if moves >= max_iters:
            if not _has_improving_move(game, joint):
                return tuple(joint)
            raise InvariantViolation(f"best-response dynamics did not settle in {max_iters} moves")


def optimal_welfare(game: CongestionGame, budget: int = DEFAULT_ENUMERATION_BUDGET):
    """(OPT, first welfare-maximizing profile)."""
    profiles, _, rewards, _ = _profile_tensor(game, budget)
    welfare = rewards.sum(axis=1)
    p = int(np.argmax(welfare))
    return float(welfare[p]), joint_from_indices(game, profiles[p])


def _smoothness_tables(game: CongestionGame, budget: int):
    """
    W(a) for every profile and, per player, M_i[a, b] = r_i(b, a_{-i}) for every
    profile a and action index b.
    """
    profiles, loads, rewards, _ = _profile_tensor(game, budget)
    P = profiles.shape[0]
    if P * P > budget:
        raise BudgetExceededError("smoothness check (profiles squared)", P * P, budget)
    welfare = rewards.sum(axis=1)
    cols = np.arange(game.F)[None, :]
    per_player = []
    for i in range(game.n):
        X = game.incidence(i)
        others = loads - X[profiles[:, i]].astype(np.int64)
        values = game.tables[cols, others]
        per_player.append(values @ X.T)
    return profiles, welfare, per_player


def _candidate_order(welfare: np.ndarray) -> np.ndarray:
    # welfare argmax first, then profile order
    first = int(np.argmax(welfare))
    rest = [p for p in range(welfare.size) if p != first]
    return np.array([first] + rest, dtype=np.int64)


def verify_smoothness(game: CongestionGame, lam: float, mu: float, budget: int = DEFAULT_ENUMERATION_BUDGET):
    """
    (True, a*) if some a* has sum_i r_i(a*_i, a_{-i}) >= lam OPT - mu W(a) for
    every profile a, else (False, None).
    """
    profiles, welfare, per_player = _smoothness_tables(game, budget)
    target = lam * float(np.max(welfare))
    for s in _candidate_order(welfare):
        lhs = sum(per_player[i][:, profiles[s, i]] for i in range(game.n))
        if np.all(lhs + mu * welfare >= target - 1e-12):
            return True, joint_from_indices(game, profiles[s])
    return False, None


def max_smooth_lambda(game: CongestionGame, mu: float, budget: int = DEFAULT_ENUMERATION_BUDGET):
    """Largest lam with the game (lam, mu)-smooth, and its witness. inf when OPT is 0."""
    profiles, welfare, per_player = _smoothness_tables(game, budget)
    opt = float(np.max(welfare))
    order = _candidate_order(welfare)
    if opt <= 0.0:
        return math.inf, joint_from_indices(game, profiles[order[0]])
    best, witness = -math.inf, None
    for s in order:
        lhs = sum(per_player[i][:, profiles[s, i]] for i in range(game.n))
        lam = float(np.min(lhs + mu * welfare)) / opt
        if lam > best:
            best, witness = lam, s
    return best, joint_from_indices(game, profiles[witness])


# --- regret --------------------------------------------------------------------

class RegretAccumulator:
    """
    Running best-in-hindsight regret for every player.

    Expected form: per round, v_i(f) = E[r^f(others on f + 1)] under the
    marginals, the learner earns sum_f q_i(f) v_i(f), and the best fixed
    action collects the top-k of sum_t v_i(f). Realized form uses the played
    profile instead of the marginals.
    """

    def __init__(self, game: CongestionGame):
        self.game = game
        self.T = 0
        self.values = np.zeros((game.n, game.F))
        self.cumulative = np.zeros(game.n)
        self.realized_values = np.zeros((game.n, game.F))
        self.realized_cumulative = np.zeros(game.n)
        self.has_realized = False

    def add_round(self, marginals, joint_action=None, round_values=None) -> None:
        q = np.asarray(marginals, dtype=float)
        v = expected_round_values(self.game, q) if round_values is None else np.asarray(round_values, dtype=float)
        self.values += v
        self.cumulative += np.sum(q * v, axis=1)
        if joint_action is not None:
            joint = self.game.validate_joint(joint_action)
            loads = facility_loads(self.game, joint)
            for i, a in enumerate(joint):
                others = loads.copy()
                others[list(a)] -= 1
                rv = self.game.tables[np.arange(self.game.F), others]
                self.realized_values[i] += rv
                self.realized_cumulative[i] += float(np.sum(rv[list(a)]))
            self.has_realized = True
        self.T += 1

    def _best(self, player: int, values: np.ndarray):
        game = self.game
        if game.all_k_subsets:
            # top-k, lowest index first among ties
            order = np.argsort(-values, kind="stable")[:game.k]
            action = tuple(sorted(int(f) for f in order))
            return float(np.sum(values[list(action)])), action
        totals = game.incidence(player) @ values
        j = int(np.argmax(totals))
        return float(totals[j]), game.actions(player)[j]

    def regrets(self) -> np.ndarray:
        return np.array([self._best(i, self.values[i])[0] - self.cumulative[i] for i in range(self.game.n)])

    def trace(self, player: int) -> RegretTrace:
        best, action = self._best(player, self.values[player])
        raw = {
            RegretTrace.player: player,
            RegretTrace.T: self.T,
            RegretTrace.cumulative: float(self.cumulative[player]),
            RegretTrace.facility_values: self.values[player].tolist(),
            RegretTrace.best_value: best,
            RegretTrace.best_action: list(action),
            RegretTrace.regret: best - float(self.cumulative[player]),
        }
        if self.has_realized:
            rbest, _ = self._best(player, self.realized_values[player])
            raw[RegretTrace.realized_cumulative] = float(self.realized_cumulative[player])
            raw[RegretTrace.realized_best] = rbest
            raw[RegretTrace.realized_regret] = rbest - float(self.realized_cumulative[player])
        return RegretTrace(raw)


def best_in_hindsight_regret(game: CongestionGame, snapshots, player: int,
                             joint_actions: Optional[Sequence] = None) -> RegretTrace:
    """
    ``snapshots`` holds the (n, F) marginals played at each round. Optional
    ``joint_actions`` adds the realized-sample variant.
    """
    acc = RegretAccumulator(game)
    for t, q in enumerate(snapshots):
        acc.add_round(q, None if joint_actions is None else joint_actions[t])
    return acc.trace(player)


def enumerated_best_in_hindsight(game: CongestionGame, snapshots, player: int) -> Tuple[float, Tuple[int, ...]]:
    """Best fixed action by scoring every action of ``player``; the oracle behind the top-k shortcut."""
    X = game.incidence(player)
    totals = np.zeros(X.shape[0])
    for q in snapshots:
        totals += X @ expected_round_values(game, q)[player]
    j = int(np.argmax(totals))
    return float(totals[j]), game.actions(player)[j]


# --- welfare ---------------------------------------------------------------------

def welfare_report(game: CongestionGame, trajectory, lam: float, mu: float, regrets,
                   opt: Optional[float] = None, budget: int = DEFAULT_ENUMERATION_BUDGET) -> WelfareReport:
    """
    Average welfare against lam/(1+mu) OPT - sum_i Regret_i / (T (1+mu)).
    ``trajectory`` is either per-round welfare values or per-round (n, F) marginals.
    """
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim == 1:
        welfare = traj
    else:
        welfare = np.array([expected_welfare(game, q) for q in traj])
    if opt is None:
        opt, _ = optimal_welfare(game, budget)
    T = int(welfare.size)
    regret_sum = float(np.sum(regrets))
    avg = float(np.mean(welfare)) if T else 0.0
    bound = lam / (1.0 + mu) * opt
    if T:
        bound -= regret_sum / (T * (1.0 + mu))
    return WelfareReport({
        WelfareReport.opt: float(opt),
        WelfareReport.lam: float(lam),
        WelfareReport.mu: float(mu),
        WelfareReport.T: T,
        WelfareReport.average_welfare: avg,
        WelfareReport.regret_sum: regret_sum,
        WelfareReport.bound: float(bound),
        WelfareReport.slack: avg - float(bound),
        WelfareReport.holds: bool(avg >= bound - 1e-9),
    })


# --- convergence constants ------------------------------------------------------

def nash_threshold_margin(epsilon: float, k: int, F: int) -> float:
    """|log(eps / (2kF))|: the smallest margin with U_M inside the eps-neighborhood."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be > 0 (strict equilibrium)")
    if math.isinf(epsilon):
        return 0.0
    return abs(math.log(epsilon / (2.0 * k * F)))


def default_margin(epsilon: float, k: int, F: int) -> float:
    return float(math.ceil(nash_threshold_margin(epsilon, k, F)) + 1)
