"""
Product-form exponential weights over k-subsets.

A policy is a score vector G (one real per facility); the implied
distribution is w(a) proportional to exp(sum_{f in a} G(f)). For the
all-k-subsets space every quantity comes from elementary symmetric
polynomials of the weights exp(G), evaluated in the log domain. Explicit
action lists are enumerated.
"""
import itertools
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from congestexp.dependencies.BaseData import BaseData
from congestexp.errors import InvalidActionError

Action = Tuple[int, ...]
_NEG_INF = -np.inf


class SubsetDistributionStats(BaseData):
    log_normalizer: float
    marginals: List[float]
    table: (List[float], None)


def log_esp(log_weights: np.ndarray, k: int) -> np.ndarray:
    """log e_j(w) for j = 0..k, computed by the one-item-at-a-time recursion."""
    E = np.full(k + 1, _NEG_INF)
    E[0] = 0.0
    for lw in log_weights:
        E[1:] = np.logaddexp(E[1:], E[:-1] + lw)
    return E


def _suffix_tables(log_weights: np.ndarray, k: int) -> np.ndarray:
    """S[f, j] = log e_j(w_f, ..., w_{F-1}); row F is the empty suffix."""
    F = log_weights.size
    S = np.full((F + 1, k + 1), _NEG_INF)
    S[F, 0] = 0.0
    for f in range(F - 1, -1, -1):
        S[f] = S[f + 1]
        S[f, 1:] = np.logaddexp(S[f + 1, 1:], S[f + 1, :-1] + log_weights[f])
    return S


def _prefix_tables(log_weights: np.ndarray, k: int) -> np.ndarray:
    """P[f, j] = log e_j(w_0, ..., w_{f-1}); row 0 is the empty prefix."""
    F = log_weights.size
    P = np.full((F + 1, k + 1), _NEG_INF)
    P[0, 0] = 0.0
    for f in range(F):
        P[f + 1] = P[f]
        P[f + 1, 1:] = np.logaddexp(P[f, 1:], P[f, :-1] + log_weights[f])
    return P


class FactoredPolicy:
    """Immutable value; updates return a new policy."""

    def __init__(self, scores, k: int, action_list: Optional[Sequence[Sequence[int]]] = None):
        scores = np.array(scores, dtype=float)
        if scores.ndim != 1:
            raise ValueError("scores must be a vector with one entry per facility")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        self.F = scores.size
        self.k = int(k)
        if not (1 <= self.k <= self.F):
            raise ValueError(f"need 1 <= k <= F, got k={k}, F={self.F}")
        scores.setflags(write=False)
        self.scores = scores
        if action_list is None:
            self.action_list = None
            self._incidence = None
        else:
            self.action_list = [tuple(sorted(int(f) for f in a)) for a in action_list]
            X = np.zeros((len(self.action_list), self.F))
            for j, a in enumerate(self.action_list):
                X[j, list(a)] = 1.0
            self._incidence = X
        self._cache = {}

    @property
    def all_k_subsets(self) -> bool:
        return self.action_list is None

    @classmethod
    def uniform(cls, F: int, k: int, action_list=None) -> "FactoredPolicy":
        return cls(np.zeros(F), k, action_list)

    @classmethod
    def point_mass(cls, F: int, k: int, action: Sequence[int], margin: float, action_list=None) -> "FactoredPolicy":
        scores = np.zeros(F)
        scores[list(action)] = float(margin)
        return cls(scores, k, action_list)

    def with_scores(self, scores) -> "FactoredPolicy":
        return FactoredPolicy(scores, self.k, self.action_list)

    def add(self, delta) -> "FactoredPolicy":
        return self.with_scores(self.scores + np.asarray(delta, dtype=float))

    def shifted(self) -> "FactoredPolicy":
        """Same distribution with max score moved to 0."""
        return self.with_scores(self.scores - np.max(self.scores))

    # --- normalization ---------------------------------------------------------

    def _centered(self) -> Tuple[np.ndarray, float]:
        shift = float(np.max(self.scores))
        return self.scores - shift, shift

    def _action_log_weights(self) -> np.ndarray:
        return self._incidence @ self.scores

    def _suffix(self) -> np.ndarray:
        if "suffix" not in self._cache:
            lw, _ = self._centered()
            self._cache["suffix"] = _suffix_tables(lw, self.k)
        return self._cache["suffix"]

    def log_normalizer(self) -> float:
        if "log_z" not in self._cache:
            if self.all_k_subsets:
                _, shift = self._centered()
                self._cache["log_z"] = float(self._suffix()[0, self.k] + self.k * shift)
            else:
                self._cache["log_z"] = float(logsumexp(self._action_log_weights()))
        return self._cache["log_z"]

    def marginals(self) -> np.ndarray:
        if "q" not in self._cache:
            if self.all_k_subsets:
                lw, _ = self._centered()
                S = self._suffix()
                P = _prefix_tables(lw, self.k)
                log_ek = S[0, self.k]
                q = np.zeros(self.F)
                for f in range(self.F):
                    # log e_{k-1}(w without f), split into prefix/suffix parts
                    parts = [P[f, j] + S[f + 1, self.k - 1 - j] for j in range(self.k)]
                    log_rest = np.logaddexp.reduce(parts)
                    q[f] = np.exp(lw[f] + log_rest - log_ek)
                q = np.clip(q, 0.0, 1.0)
            else:
                q = self._incidence.T @ self.probabilities()
            q.setflags(write=False)
            self._cache["q"] = q
        return self._cache["q"]

    def marginal(self, facility: int) -> float:
        if not (0 <= facility < self.F):
            raise InvalidActionError(f"facility {facility} outside [0, {self.F})")
        return float(self.marginals()[facility])

    def probabilities(self) -> np.ndarray:
        """Probability of each listed action (explicit lists only)."""
        if self.all_k_subsets:
            raise ValueError("probabilities() is defined over explicit action lists; use probability_table()")
        lw = self._action_log_weights()
        return np.exp(lw - logsumexp(lw))

    def pairwise_marginals(self) -> np.ndarray:
        """Q[f, g] = P(f and g both selected); diagonal holds q(f)."""
        if "pairs" in self._cache:
            return self._cache["pairs"]
        if not self.all_k_subsets:
            p = self.probabilities()
            Q = (self._incidence * p[:, None]).T @ self._incidence
        else:
            q = self.marginals()
            Q = np.diag(q).astype(float)
            if self.k >= 2:
                lw, _ = self._centered()
                log_ek = self._suffix()[0, self.k]
                for f in range(self.F):
                    for g in range(f + 1, self.F):
                        rest = np.delete(lw, [f, g])
                        val = np.exp(lw[f] + lw[g] + log_esp(rest, self.k - 2)[self.k - 2] - log_ek)
                        Q[f, g] = Q[g, f] = val
        self._cache["pairs"] = Q
        return Q

    # --- single-action queries ---------------------------------------------------

    def check_action(self, action) -> Action:
        a = tuple(sorted(int(f) for f in action))
        if len(a) != self.k or len(set(a)) != self.k or (a and (a[0] < 0 or a[-1] >= self.F)):
            raise InvalidActionError(f"{tuple(action)} is not {self.k} distinct facilities in [0, {self.F})")
        if not self.all_k_subsets and a not in self.action_list:
            raise InvalidActionError(f"{a} is not a listed action")
        return a

    def action_probability(self, action) -> float:
        a = self.check_action(action)
        return float(np.exp(np.sum(self.scores[list(a)]) - self.log_normalizer()))

    def l1_distance_to_pure(self, action) -> float:
        return 2.0 * (1.0 - self.action_probability(action))

    def sample_action(self, rng: np.random.Generator) -> Action:
        """
        Exact draw. All-k-subsets: walk facilities in ascending index order and
        include f with probability w_f e_{r-1}(rest) / e_r(f and rest).
        """
        if not self.all_k_subsets:
            p = self.probabilities()
            u = rng.random()
            idx = int(np.searchsorted(np.cumsum(p), u * np.sum(p), side="right"))
            return self.action_list[min(idx, len(self.action_list) - 1)]
        lw, _ = self._centered()
        S = self._suffix()
        chosen = []
        r = self.k
        for f in range(self.F):
            if r == 0:
                break
            if self.F - f == r:
                chosen.extend(range(f, self.F))
                break
            p_incl = np.exp(lw[f] + S[f + 1, r - 1] - S[f, r])
            if rng.random() < p_incl:
                chosen.append(f)
                r -= 1
        return tuple(chosen)

    # --- tables ------------------------------------------------------------------

    def probability_table(self) -> Tuple[List[Action], np.ndarray]:
        """Every action with its probability (enumerates C(F, k) subsets when needed)."""
        if not self.all_k_subsets:
            return list(self.action_list), self.probabilities()
        acts = list(itertools.combinations(range(self.F), self.k))
        lw = np.array([np.sum(self.scores[list(a)]) for a in acts])
        return acts, np.exp(lw - self.log_normalizer())

    def stats(self, with_table: bool = False) -> SubsetDistributionStats:
        raw = {
            SubsetDistributionStats.log_normalizer: self.log_normalizer(),
            SubsetDistributionStats.marginals: self.marginals().tolist(),
        }
        if with_table:
            raw[SubsetDistributionStats.table] = self.probability_table()[1].tolist()
        return SubsetDistributionStats(raw)

    def expected_action_value(self, values) -> float:
        """E_{a~w}[sum_{f in a} v(f)] = sum_f q(f) v(f)."""
        return float(np.dot(self.marginals(), np.asarray(values, dtype=float)))

    def __repr__(self):
        return f"FactoredPolicy(F={self.F}, k={self.k}, scores={np.array2string(self.scores, precision=4)})"


class ActionLevelPolicy:
    """
    Exponential weights with one score per enumerated action, w(a) proportional
    to exp(S(a)). Same query surface as FactoredPolicy; ``scores`` is the
    facility view log q(f), the per-action scores live in ``action_scores``.
    """

    def __init__(self, action_scores, F: int, k: int, actions: Sequence[Sequence[int]]):
        action_scores = np.array(action_scores, dtype=float)
        self.actions = [tuple(sorted(int(f) for f in a)) for a in actions]
        if action_scores.shape != (len(self.actions),):
            raise ValueError(f"need one score per action ({len(self.actions)}), got shape {action_scores.shape}")
        if not np.all(np.isfinite(action_scores)):
            raise ValueError("scores must be finite")
        self.F = int(F)
        self.k = int(k)
        action_scores.setflags(write=False)
        self.action_scores = action_scores
        self._index = {a: j for j, a in enumerate(self.actions)}
        X = np.zeros((len(self.actions), self.F))
        for j, a in enumerate(self.actions):
            X[j, list(a)] = 1.0
        self._incidence = X
        self._cache = {}

    @classmethod
    def uniform(cls, F: int, k: int, actions) -> "ActionLevelPolicy":
        return cls(np.zeros(len(actions)), F, k, actions)

    @classmethod
    def point_mass(cls, F: int, k: int, actions, action: Sequence[int], margin: float) -> "ActionLevelPolicy":
        policy = cls.uniform(F, k, actions)
        scores = np.zeros(len(policy.actions))
        scores[policy._index[policy.check_action(action)]] = float(margin)
        return policy.with_scores(scores)

    def with_scores(self, action_scores) -> "ActionLevelPolicy":
        return ActionLevelPolicy(action_scores, self.F, self.k, self.actions)

    def add(self, delta) -> "ActionLevelPolicy":
        return self.with_scores(self.action_scores + np.asarray(delta, dtype=float))

    @property
    def all_k_subsets(self) -> bool:
        return False

    def log_normalizer(self) -> float:
        return float(logsumexp(self.action_scores))

    def probabilities(self) -> np.ndarray:
        if "p" not in self._cache:
            p = np.exp(self.action_scores - self.log_normalizer())
            p.setflags(write=False)
            self._cache["p"] = p
        return self._cache["p"]

    def marginals(self) -> np.ndarray:
        if "q" not in self._cache:
            q = np.clip(self._incidence.T @ self.probabilities(), 0.0, 1.0)
            q.setflags(write=False)
            self._cache["q"] = q
        return self._cache["q"]

    @property
    def scores(self) -> np.ndarray:
        return np.log(np.maximum(self.marginals(), 1e-300))

    def check_action(self, action) -> Action:
        a = tuple(sorted(int(f) for f in action))
        if a not in self._index:
            raise InvalidActionError(f"{tuple(action)} is not one of the {len(self.actions)} enumerated actions")
        return a

    def action_probability(self, action) -> float:
        return float(self.probabilities()[self._index[self.check_action(action)]])

    def l1_distance_to_pure(self, action) -> float:
        return 2.0 * (1.0 - self.action_probability(action))

    def sample_action(self, rng: np.random.Generator) -> Action:
        p = self.probabilities()
        idx = int(np.searchsorted(np.cumsum(p), rng.random() * np.sum(p), side="right"))
        return self.actions[min(idx, len(self.actions) - 1)]

    def probability_table(self) -> Tuple[List[Action], np.ndarray]:
        return list(self.actions), np.array(self.probabilities())

    def max_gap(self, action) -> float:
        """max over a != action of S(a) - S(action); -inf when there is no other action."""
        j = self._index[self.check_action(action)]
        if len(self.actions) == 1:
            return -np.inf
        others = np.delete(self.action_scores, j)
        return float(np.max(others) - self.action_scores[j])

    def __repr__(self):
        return f"ActionLevelPolicy(F={self.F}, k={self.k}, actions={len(self.actions)})"


# Module-level forms of the policy operations.

def log_normalizer(policy: FactoredPolicy) -> float:
    return policy.log_normalizer()


def marginal(policy: FactoredPolicy, facility: int) -> float:
    return policy.marginal(facility)


def sample_action(policy: FactoredPolicy, rng: np.random.Generator) -> Action:
    return policy.sample_action(rng)


def action_probability(policy: FactoredPolicy, action) -> float:
    return policy.action_probability(action)


def l1_distance_to_pure(policy: FactoredPolicy, action) -> float:
    return policy.l1_distance_to_pure(action)
