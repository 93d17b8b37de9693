"""Desk-scale offline RL laboratory: value-aware OOD state correction
unified with OOD action suppression, plus the exact tabular oracles that
machine-check its closed forms."""

from .agent import METRICS_COLUMNS, PolicySnapshot, ScasAgent
from .dynamics import DynamicsModel, train_dynamics
from .evaluation import EvalReport, evaluate_policy

__version__ = "0.1.0"

__all__ = [
    "ScasAgent",
    "PolicySnapshot",
    "METRICS_COLUMNS",
    "DynamicsModel",
    "train_dynamics",
    "EvalReport",
    "evaluate_policy",
    "__version__",
]
