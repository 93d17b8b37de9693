from .pointnav import (
    Rect,
    PointNavConfig,
    PerturbProtocol,
    EpisodeTrace,
    ScriptedBehavior,
    RandomBehavior,
    env_reset,
    env_step,
    run_episode,
    steps_out_of_ood,
)
from .dataset import ContinuousDataset, collect_dataset, env_config_from_metadata

__all__ = [
    "Rect",
    "PointNavConfig",
    "PerturbProtocol",
    "EpisodeTrace",
    "ScriptedBehavior",
    "RandomBehavior",
    "env_reset",
    "env_step",
    "run_episode",
    "steps_out_of_ood",
    "ContinuousDataset",
    "collect_dataset",
    "env_config_from_metadata",
]
