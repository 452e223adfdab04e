"""Synthetic gridworld households standing in for an embodied benchmark."""

from .dataset import FOLDS, DatasetSplit, build_split, read_fold, read_split, write_split
from .executor import execute_subgoal, goal_holds, goals_satisfied
from .generator import Episode, Scene, UnsatisfiableTask, generate_episode, generate_scene
from .state import WorldObject, WorldState
from .vocab import Vocab

__all__ = [
    "FOLDS",
    "DatasetSplit",
    "Episode",
    "Scene",
    "UnsatisfiableTask",
    "Vocab",
    "WorldObject",
    "WorldState",
    "build_split",
    "execute_subgoal",
    "generate_episode",
    "generate_scene",
    "goal_holds",
    "goals_satisfied",
    "read_fold",
    "read_split",
    "write_split",
]
