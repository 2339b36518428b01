from congestexp.factored_policy import FactoredPolicy
from congestexp.game_model import CongestionGame, game_from_spec, game_from_tables, load_game
from congestexp.harness import ExperimentConfig, run

__all__ = ["CongestionGame", "ExperimentConfig", "FactoredPolicy", "game_from_spec", "game_from_tables", "load_game", "run"]
