"""
Congestion games: facilities, k-subset actions, count-dependent reward tables.

Reward tables are dense: ``tables[f, m - 1] = r^f(m)`` for loads m = 1..n.
Facilities with load 0 report 0 as an unused marker.
"""
import itertools
import json
import math
import os
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from congestexp.dependencies.BaseData import BaseData
from congestexp.errors import BudgetExceededError, InvalidActionError, SchemaError, TraceIOError

Action = Tuple[int, ...]
JointAction = Tuple[Action, ...]

ALL_K_SUBSETS = "all_k_subsets"
DEFAULT_ENUMERATION_BUDGET = 10 ** 7


class FacilityRewardTable(BaseData):
    facility: int
    rewards: List[float]

    def do_validation(self, key, value):
        if key == FacilityRewardTable.rewards and isinstance(value, list):
            for m, r in enumerate(value, start=1):
                if not isinstance(r, float) or not (0.0 <= r <= 1.0):
                    return value, f"r^f({m}) = {r} outside [0, 1]"
        if key == FacilityRewardTable.facility and isinstance(value, int) and value < 0:
            return value, "facility index must be >= 0"
        return value, ""


class AffineRewardSpec(BaseData):
    """r^f(m) = clamp(c_f - d_f * (m - 1), 0, 1)."""
    c: List[float]
    d: List[float]

    def do_validation(self, key, value):
        if key == AffineRewardSpec.c and isinstance(value, list):
            if any(not (0.0 <= x <= 1.0) for x in value):
                return value, "every c_f must lie in [0, 1]"
        if key == AffineRewardSpec.d and isinstance(value, list):
            if any(x < 0.0 for x in value):
                return value, "every d_f must be >= 0"
        return value, ""

    def tables(self, n: int) -> np.ndarray:
        c = np.asarray(self.c, dtype=float)
        d = np.asarray(self.d, dtype=float)
        if c.shape != d.shape:
            raise SchemaError([("d", f"length {d.size} differs from c length {c.size}")], "AffineRewardSpec")
        loads = np.arange(n, dtype=float)
        return np.clip(c[:, None] - d[:, None] * loads[None, :], 0.0, 1.0)


class GameSpec(BaseData):
    """Game definition file. Exactly one of ``rewards`` or (``c``, ``d``) is given."""
    n: int
    F: int
    k: int
    action_space: (Union[str, list], ALL_K_SUBSETS)
    rewards: (List[List[float]], None)
    c: (List[float], None)
    d: (List[float], None)
    kernel: (str, "deterministic")
    kernel_params: (dict, None)
    name: (str, None)

    def __init__(self, in_dict=None, trim=False, **kwargs):
        super().__init__(in_dict, trim, **kwargs)
        errors = []
        n, F, k = self.n, self.F, self.k
        if n < 1:
            errors.append((GameSpec.n, "need at least one player"))
        if not (1 <= k <= F):
            errors.append((GameSpec.k, f"need 1 <= k <= F, got k={k}, F={F}"))
        has_table = self.rewards is not None
        has_affine = self.c is not None or self.d is not None
        if has_table == has_affine:
            errors.append((GameSpec.rewards, "give either rewards or affine c/d, not both or neither"))
        if has_table:
            if len(self.rewards) != F:
                errors.append((GameSpec.rewards, f"expected {F} facility tables, got {len(self.rewards)}"))
            for f, row in enumerate(self.rewards):
                try:
                    FacilityRewardTable({FacilityRewardTable.facility: f, FacilityRewardTable.rewards: row})
                except SchemaError as e:
                    errors.extend(e.prefixed(f"rewards[{f}]").errors)
                    continue
                if len(row) != n:
                    errors.append((f"rewards[{f}]", f"table length {len(row)} differs from n={n}"))
        if has_affine:
            try:
                affine = AffineRewardSpec({AffineRewardSpec.c: self.c, AffineRewardSpec.d: self.d})
                if len(affine.c) != F or len(affine.d) != F:
                    errors.append((GameSpec.c, f"affine c and d need {F} entries"))
            except SchemaError as e:
                errors.extend(e.errors)
        if self.kernel not in REWARD_KERNELS:
            errors.append((GameSpec.kernel, f"unknown kernel '{self.kernel}', have {sorted(REWARD_KERNELS)}"))
        space = self.action_space
        if isinstance(space, str):
            if space != ALL_K_SUBSETS:
                errors.append((GameSpec.action_space, f"expected '{ALL_K_SUBSETS}' or explicit lists"))
        else:
            if len(space) != n:
                errors.append((GameSpec.action_space, f"need one action list per player ({n})"))
            for i, acts in enumerate(space):
                if not isinstance(acts, list) or len(acts) == 0:
                    errors.append((f"action_space[{i}]", "need a non-empty list of actions"))
                    continue
                for j, a in enumerate(acts):
                    ok = (
                        isinstance(a, list)
                        and len(a) == k
                        and len(set(a)) == k
                        and all(isinstance(f, int) and 0 <= f < F for f in a)
                    )
                    if not ok:
                        errors.append((f"action_space[{i}][{j}]", f"{a} is not {k} distinct facilities in [0, {F})"))
        if errors:
            raise SchemaError(errors, "GameSpec")


# --- reward kernels ---------------------------------------------------------
# A kernel maps per-facility means in [0, 1] to one draw per facility in [0, 1].
# Every kernel consumes a fixed amount of the rng stream per call.

def _deterministic_kernel(means: np.ndarray, rng: np.random.Generator, params: dict) -> np.ndarray:
    return np.array(means, dtype=float)


def _bernoulli_kernel(means: np.ndarray, rng: np.random.Generator, params: dict) -> np.ndarray:
    u = rng.random(means.shape)
    return (u < means).astype(float)


def _beta_kernel(means: np.ndarray, rng: np.random.Generator, params: dict) -> np.ndarray:
    conc = float(params.get("concentration", 10.0))
    inner = (means > 0.0) & (means < 1.0)
    safe = np.where(inner, means, 0.5)
    draws = rng.beta(conc * safe, conc * (1.0 - safe))
    return np.where(inner, draws, means)


REWARD_KERNELS: Dict[str, Callable] = {
    "deterministic": _deterministic_kernel,
    "bernoulli": _bernoulli_kernel,
    "beta": _beta_kernel,
}


def register_kernel(name: str, kernel: Callable) -> None:
    REWARD_KERNELS[name] = kernel


class CongestionGame:
    def __init__(
        self,
        n: int,
        F: int,
        k: int,
        tables,
        action_lists: Optional[Sequence[Sequence[Sequence[int]]]] = None,
        kernel: str = "deterministic",
        kernel_params: Optional[dict] = None,
        name: Optional[str] = None,
        affine: Optional[AffineRewardSpec] = None,
    ):
        self.n = int(n)
        self.F = int(F)
        self.k = int(k)
        self.tables = np.array(tables, dtype=float).reshape(self.F, self.n)
        self.tables.setflags(write=False)
        self.kernel = kernel
        self.kernel_params = dict(kernel_params or {})
        self.name = name
        self.affine = affine
        if action_lists is None:
            self.action_lists = None
            shared = [tuple(c) for c in itertools.combinations(range(self.F), self.k)]
            self._actions = [shared] * self.n
        else:
            self.action_lists = [[tuple(sorted(a)) for a in acts] for acts in action_lists]
            self._actions = self.action_lists
        self._action_index = [{a: j for j, a in enumerate(acts)} for acts in self._actions]
        self._incidence = []
        for acts in self._actions:
            X = np.zeros((len(acts), self.F), dtype=float)
            for j, a in enumerate(acts):
                X[j, list(a)] = 1.0
            X.setflags(write=False)
            self._incidence.append(X)
        # potential increments: cumulative[f, m] = sum_{l<=m} r^f(l), cumulative[f, 0] = 0
        self.cumulative = np.concatenate([np.zeros((self.F, 1)), np.cumsum(self.tables, axis=1)], axis=1)

    @property
    def all_k_subsets(self) -> bool:
        return self.action_lists is None

    def num_actions(self, player: int = 0) -> int:
        return len(self._actions[player])

    def actions(self, player: int = 0) -> List[Action]:
        return list(self._actions[player])

    def action_index(self, player: int, action) -> int:
        a = self.validate_action(player, action)
        return self._action_index[player][a]

    def incidence(self, player: int = 0) -> np.ndarray:
        """(A_i, F) 0/1 matrix: row j marks the facilities of action j."""
        return self._incidence[player]

    def validate_action(self, player: int, action) -> Action:
        if not (0 <= player < self.n):
            raise InvalidActionError(f"player {player} outside [0, {self.n})")
        a = tuple(sorted(int(f) for f in action))
        if len(a) != self.k or len(set(a)) != self.k or (a and (a[0] < 0 or a[-1] >= self.F)):
            raise InvalidActionError(f"player {player}: {tuple(action)} is not {self.k} distinct facilities in [0, {self.F})")
        if a not in self._action_index[player]:
            raise InvalidActionError(f"player {player}: {a} is not in the player's action list")
        return a

    def validate_joint(self, joint_action) -> JointAction:
        if len(joint_action) != self.n:
            raise InvalidActionError(f"joint action has {len(joint_action)} entries, game has {self.n} players")
        return tuple(self.validate_action(i, a) for i, a in enumerate(joint_action))

    def reward_at(self, facility: int, load: int) -> float:
        if load <= 0:
            return 0.0
        return float(self.tables[facility, load - 1])

    def to_spec(self) -> GameSpec:
        raw = {
            GameSpec.n: self.n,
            GameSpec.F: self.F,
            GameSpec.k: self.k,
            GameSpec.kernel: self.kernel,
        }
        if self.affine is not None:
            raw[GameSpec.c] = list(self.affine.c)
            raw[GameSpec.d] = list(self.affine.d)
        else:
            raw[GameSpec.rewards] = self.tables.tolist()
        if self.action_lists is not None:
            raw[GameSpec.action_space] = [[list(a) for a in acts] for acts in self.action_lists]
        else:
            raw[GameSpec.action_space] = ALL_K_SUBSETS
        if self.kernel_params:
            raw[GameSpec.kernel_params] = dict(self.kernel_params)
        if self.name:
            raw[GameSpec.name] = self.name
        return GameSpec(raw)

    def __repr__(self):
        mode = "all_k_subsets" if self.all_k_subsets else "explicit"
        return f"CongestionGame(n={self.n}, F={self.F}, k={self.k}, {mode}, kernel={self.kernel})"


def game_from_spec(spec) -> CongestionGame:
    spec = GameSpec(spec)
    affine = None
    if spec.rewards is not None:
        tables = np.array(spec.rewards, dtype=float)
    else:
        affine = AffineRewardSpec({AffineRewardSpec.c: spec.c, AffineRewardSpec.d: spec.d})
        tables = affine.tables(spec.n)
    lists = None if isinstance(spec.action_space, str) else spec.action_space
    return CongestionGame(
        spec.n, spec.F, spec.k, tables,
        action_lists=lists,
        kernel=spec.kernel,
        kernel_params=spec.kernel_params,
        name=spec.name,
        affine=affine,
    )


def game_from_tables(tables, k: int, kernel: str = "deterministic", action_lists=None, name=None) -> CongestionGame:
    tables = [list(map(float, row)) for row in tables]
    spec = {
        GameSpec.n: len(tables[0]),
        GameSpec.F: len(tables),
        GameSpec.k: k,
        GameSpec.rewards: tables,
        GameSpec.kernel: kernel,
    }
    if action_lists is not None:
        spec[GameSpec.action_space] = [[list(a) for a in acts] for acts in action_lists]
    if name:
        spec[GameSpec.name] = name
    return game_from_spec(spec)


def affine_game(n: int, F: int, k: int, c, d, kernel: str = "deterministic", name=None) -> CongestionGame:
    spec = {
        GameSpec.n: n, GameSpec.F: F, GameSpec.k: k,
        GameSpec.c: [float(x) for x in c], GameSpec.d: [float(x) for x in d],
        GameSpec.kernel: kernel,
    }
    if name:
        spec[GameSpec.name] = name
    return game_from_spec(spec)


def random_game(n: int, F: int, k: int, rng: np.random.Generator, kernel: str = "bernoulli", name=None) -> CongestionGame:
    """Uniform tables, sorted so reward never increases with load."""
    raw = rng.uniform(0.0, 1.0, size=(F, n))
    tables = -np.sort(-raw, axis=1)
    return game_from_tables(tables.tolist(), k, kernel=kernel, name=name)


def random_affine_game(n: int, F: int, k: int, rng: np.random.Generator, kernel: str = "bernoulli") -> CongestionGame:
    c = rng.uniform(0.5, 1.0, size=F)
    d = rng.uniform(0.0, 0.5 / max(n - 1, 1), size=F)
    return affine_game(n, F, k, c.tolist(), d.tolist(), kernel=kernel)


def load_game(path: str) -> CongestionGame:
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise TraceIOError(path, e)
    return game_from_spec(raw)


def save_game(game: CongestionGame, path: str) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            f.write(game.to_spec().to_json())
    except OSError as e:
        raise TraceIOError(path, e)


# --- deterministic evaluation -----------------------------------------------

def facility_loads(game: CongestionGame, joint_action) -> np.ndarray:
    joint = game.validate_joint(joint_action)
    loads = np.zeros(game.F, dtype=int)
    for a in joint:
        loads[list(a)] += 1
    return loads


def _rewards_at_loads(game: CongestionGame, loads: np.ndarray) -> np.ndarray:
    idx = np.clip(loads - 1, 0, game.n - 1)
    vals = game.tables[np.arange(game.F), idx]
    return np.where(loads > 0, vals, 0.0)


def facility_rewards(game: CongestionGame, joint_action) -> np.ndarray:
    return _rewards_at_loads(game, facility_loads(game, joint_action))


def player_reward(game: CongestionGame, player: int, joint_action) -> float:
    joint = game.validate_joint(joint_action)
    rewards = facility_rewards(game, joint)
    return float(sum(rewards[f] for f in joint[player]))


def sample_stochastic_rewards(game: CongestionGame, joint_action, rng: np.random.Generator) -> np.ndarray:
    """One realization R^f per facility at the realized loads; unused facilities report 0."""
    loads = facility_loads(game, joint_action)
    means = _rewards_at_loads(game, loads)
    draws = REWARD_KERNELS[game.kernel](means, rng, game.kernel_params)
    return np.where(loads > 0, draws, 0.0)


def sample_counterfactual_rewards(game: CongestionGame, joint_action, player: int, rng: np.random.Generator) -> np.ndarray:
    """Draw R^f for every facility at load n_f(a_{-i}) + 1, as seen by ``player``."""
    joint = game.validate_joint(joint_action)
    loads = np.zeros(game.F, dtype=int)
    for j, a in enumerate(joint):
        if j != player:
            loads[list(a)] += 1
    means = game.tables[np.arange(game.F), loads]
    return REWARD_KERNELS[game.kernel](means, rng, game.kernel_params)


# --- exact expectations under product policies --------------------------------

def poisson_binomial_pmf(probabilities: Sequence[float]) -> np.ndarray:
    """pmf of a sum of independent Bernoulli(p_j): coefficients of prod_j (1 - p_j + p_j x)."""
    pmf = np.array([1.0])
    for p in probabilities:
        nxt = np.zeros(len(pmf) + 1)
        nxt[:-1] = pmf * (1.0 - p)
        nxt[1:] += pmf * p
        pmf = nxt
    return pmf


def _check_marginals(game: CongestionGame, marginals) -> np.ndarray:
    q = np.asarray(marginals, dtype=float)
    if q.shape != (game.n, game.F):
        raise ValueError(f"marginals must have shape ({game.n}, {game.F}), got {q.shape}")
    if np.any(q < -1e-12) or np.any(q > 1.0 + 1e-12):
        raise ValueError("marginal inclusion probabilities must lie in [0, 1]")
    return np.clip(q, 0.0, 1.0)


def _load_pmfs(q: np.ndarray, exclude_self: bool) -> np.ndarray:
    """
    Vectorized Poisson-binomial DP over players.

    exclude_self=False: (F, n+1) law of the total load on each facility.
    exclude_self=True:  (n, F, n) law of the load of the others, one slab per player.
    """
    n, F = q.shape
    if not exclude_self:
        pmf = np.zeros((F, n + 1))
        pmf[:, 0] = 1.0
        for j in range(n):
            p = q[j][:, None]
            shifted = np.zeros_like(pmf)
            shifted[:, 1:] = pmf[:, :-1]
            pmf = pmf * (1.0 - p) + shifted * p
        return pmf
    pmf = np.zeros((n, F, n))
    pmf[:, :, 0] = 1.0
    for j in range(n):
        p = np.broadcast_to(q[j], (n, F)).copy()
        p[j] = 0.0
        p = p[:, :, None]
        shifted = np.zeros_like(pmf)
        shifted[:, :, 1:] = pmf[:, :, :-1]
        pmf = pmf * (1.0 - p) + shifted * p
    return pmf


def expected_round_values(game: CongestionGame, marginals) -> np.ndarray:
    """v[i, f] = E[r^f(load of others on f + 1)] for every player and facility."""
    q = _check_marginals(game, marginals)
    pmf = _load_pmfs(q, exclude_self=True)
    return np.einsum("ifm,fm->if", pmf, game.tables)


def expected_facility_reward(game: CongestionGame, player: int, facility: int, marginals) -> float:
    q = _check_marginals(game, marginals)
    others = [q[j, facility] for j in range(game.n) if j != player]
    pmf = poisson_binomial_pmf(others)
    return float(np.dot(pmf, game.tables[facility]))


def expected_welfare(game: CongestionGame, marginals) -> float:
    """sum_f E[n_f r^f(n_f)] with n_f Poisson-binomial over all players."""
    q = _check_marginals(game, marginals)
    pmf = _load_pmfs(q, exclude_self=False)
    loads = np.arange(1, game.n + 1, dtype=float)
    return float(np.sum(pmf[:, 1:] * loads[None, :] * game.tables))


def pure_marginals(game: CongestionGame, joint_action) -> np.ndarray:
    joint = game.validate_joint(joint_action)
    q = np.zeros((game.n, game.F))
    for i, a in enumerate(joint):
        q[i, list(a)] = 1.0
    return q


# --- enumeration ----------------------------------------------------------------

def profile_count(game: CongestionGame) -> int:
    return int(math.prod(game.num_actions(i) for i in range(game.n)))


def enumerate_profiles(game: CongestionGame, budget: int = DEFAULT_ENUMERATION_BUDGET) -> np.ndarray:
    """(P, n) array of action indices for every pure profile, in lexicographic order."""
    total = profile_count(game)
    if total > budget:
        raise BudgetExceededError("pure profile enumeration", total, budget)
    grids = np.indices([game.num_actions(i) for i in range(game.n)]).reshape(game.n, -1).T
    return grids.astype(np.int64)


def profile_loads(game: CongestionGame, profiles: np.ndarray) -> np.ndarray:
    """(P, F) facility loads for each row of a profile index array."""
    loads = np.zeros((profiles.shape[0], game.F))
    for i in range(game.n):
        loads += game.incidence(i)[profiles[:, i]]
    return loads.astype(np.int64)


def profile_rewards(game: CongestionGame, profiles: np.ndarray, loads: Optional[np.ndarray] = None) -> np.ndarray:
    """(P, n) reward of each player under each profile."""
    if loads is None:
        loads = profile_loads(game, profiles)
    fac = np.where(loads > 0, game.tables[np.arange(game.F)[None, :], np.clip(loads - 1, 0, game.n - 1)], 0.0)
    out = np.zeros((profiles.shape[0], game.n))
    for i in range(game.n):
        out[:, i] = np.sum(game.incidence(i)[profiles[:, i]] * fac, axis=1)
    return out


def joint_from_indices(game: CongestionGame, indices: Sequence[int]) -> JointAction:
    return tuple(game.actions(i)[int(j)] for i, j in enumerate(indices))
