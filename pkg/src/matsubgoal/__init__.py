"""Moment-based adversarial training for hierarchical subgoal prediction."""

__version__ = "0.1.0"
