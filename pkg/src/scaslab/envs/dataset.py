"""Offline continuous datasets: collection, normalization stats, JSONL IO.

File format: one JSON metadata line (generator config, seed, statistics),
then one transition per line with fixed field names s, a, r, s2, done.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .pointnav import PointNavConfig, RandomBehavior, Rect, ScriptedBehavior, env_reset, env_step

__all__ = ["ContinuousDataset", "collect_dataset", "env_config_from_metadata"]

STD_FLOOR = 1e-3

Behavior = Union[ScriptedBehavior, RandomBehavior]


@dataclass(frozen=True)
class ContinuousDataset:
    """Transition arrays plus the state normalization statistics.

    done marks genuine terminals only (goal reached); step-budget timeouts
    are not terminals, so bootstrapping through them stays valid.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    done: np.ndarray
    state_mean: np.ndarray
    state_std: np.ndarray
    metadata: dict[str, Any]

    def __post_init__(self):
        n = self.states.shape[0]
        if n == 0:
            raise ValueError("dataset must be nonempty")
        shapes = {
            "states": self.states.shape,
            "actions": self.actions.shape,
            "next_states": self.next_states.shape,
        }
        for name, shape in shapes.items():
            if len(shape) != 2 or shape[0] != n:
                raise ValueError(f"{name} must be (n, dim), got {shape}")
        if self.rewards.shape != (n,) or self.done.shape != (n,):
            raise ValueError("rewards and done must be length-n vectors")
        if np.any(self.state_std < STD_FLOOR):
            raise ValueError(f"state_std must be floored at {STD_FLOOR}")
        if np.any(np.abs(self.actions) > 1.0 + 1e-12):
            raise ValueError("actions must lie in the unit box")
        for arr in (self.states, self.actions, self.rewards, self.next_states):
            if not np.all(np.isfinite(arr)):
                raise ValueError("dataset entries must be finite")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def content_hash(self) -> str:
        """SHA-256 over the transition arrays and statistics."""
        digest = hashlib.sha256()
        for arr in (self.states, self.actions, self.rewards, self.next_states,
                    self.done, self.state_mean, self.state_std):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()

    def normalize(self, s: np.ndarray) -> np.ndarray:
        return (np.asarray(s) - self.state_mean) / self.state_std

    def denormalize(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(s) * self.state_std + self.state_mean

    def save_jsonl(self, path: str | Path) -> None:
        meta = dict(self.metadata)
        meta["state_mean"] = self.state_mean.tolist()
        meta["state_std"] = self.state_std.tolist()
        meta["n_transitions"] = len(self)
        lines = [json.dumps(meta)]
        for i in range(len(self)):
            lines.append(
                json.dumps(
                    {
                        "s": self.states[i].tolist(),
                        "a": self.actions[i].tolist(),
                        "r": float(self.rewards[i]),
                        "s2": self.next_states[i].tolist(),
                        "done": bool(self.done[i]),
                    }
                )
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "ContinuousDataset":
        text = Path(path).read_text().strip().split("\n")
        if len(text) < 2:
            raise ValueError(f"{path}: need a metadata line plus at least one transition")
        meta = json.loads(text[0])
        rows = [json.loads(line) for line in text[1:]]
        missing = [i for i, row in enumerate(rows) if set(row) != {"s", "a", "r", "s2", "done"}]
        if missing:
            raise ValueError(f"{path}: line {missing[0] + 2} has wrong fields")
        mean = np.asarray(meta.pop("state_mean"), dtype=np.float64)
        std = np.asarray(meta.pop("state_std"), dtype=np.float64)
        meta.pop("n_transitions", None)
        return cls(
            states=np.asarray([r["s"] for r in rows], dtype=np.float64),
            actions=np.asarray([r["a"] for r in rows], dtype=np.float64),
            rewards=np.asarray([r["r"] for r in rows], dtype=np.float64),
            next_states=np.asarray([r["s2"] for r in rows], dtype=np.float64),
            done=np.asarray([r["done"] for r in rows], dtype=bool),
            state_mean=mean,
            state_std=std,
            metadata=meta,
        )


def _stats(states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = states.mean(axis=0)
    std = np.maximum(states.std(axis=0), STD_FLOOR)
    return mean, std


def collect_dataset(
    config: PointNavConfig,
    behavior: Behavior,
    n_transitions: int,
    exclude_hole: bool,
    rng: np.random.Generator,
    seed: Optional[int] = None,
) -> ContinuousDataset:
    """Roll behavior episodes from in-distribution resets until n kept.

    With exclude_hole, any transition whose endpoint lies in the hole is
    dropped before it is counted, so the retained state set never touches
    the hole. Collection is truncated to exactly n_transitions.
    """
    if n_transitions <= 0:
        raise ValueError("n_transitions must be positive")
    hole = config.ood_hole
    s_rows, a_rows, r_rows, s2_rows, d_rows = [], [], [], [], []
    kept = 0
    dropped = 0
    episode = 0
    while kept < n_transitions:
        s = env_reset(config, "IN_DIST", rng)
        for _ in range(config.max_steps):
            a = behavior.act(config, s, episode, rng)
            s2, r, done = env_step(config, s, a, rng)
            drop = exclude_hole and hole is not None and (hole.contains(s) or hole.contains(s2))
            if drop:
                dropped += 1
            else:
                s_rows.append(s)
                a_rows.append(a)
                r_rows.append(r)
                s2_rows.append(s2)
                d_rows.append(done)
                kept += 1
            s = s2
            if done or kept >= n_transitions:
                break
        episode += 1
    states = np.asarray(s_rows)
    mean, std = _stats(states)
    if isinstance(behavior, ScriptedBehavior):
        behavior_desc: dict[str, Any] = {
            "kind": "scripted",
            "noise_levels": list(behavior.noise_levels),
        }
    else:
        behavior_desc = {"kind": "random"}
    metadata = {
        "env": {
            "arena": [list(config.arena.low), list(config.arena.high)],
            "goal": list(config.goal),
            "goal_radius": config.goal_radius,
            "max_steps": config.max_steps,
            "action_scale": config.action_scale,
            "dynamics_noise_std": config.dynamics_noise_std,
            "ood_hole": None
            if config.ood_hole is None
            else [list(config.ood_hole.low), list(config.ood_hole.high)],
        },
        "behavior": behavior_desc,
        "exclude_hole": exclude_hole,
        "seed": seed,
        "episodes": episode,
        "dropped_in_hole": dropped,
    }
    return ContinuousDataset(
        states=states,
        actions=np.asarray(a_rows),
        rewards=np.asarray(r_rows),
        next_states=np.asarray(s2_rows),
        done=np.asarray(d_rows, dtype=bool),
        state_mean=mean,
        state_std=std,
        metadata=metadata,
    )


def env_config_from_metadata(meta: dict[str, Any]) -> PointNavConfig:
    """Rebuild the generating environment from a dataset's metadata."""
    env = meta["env"]
    hole = env.get("ood_hole")
    return PointNavConfig(
        arena=Rect(tuple(env["arena"][0]), tuple(env["arena"][1])),
        goal=tuple(env["goal"]),
        goal_radius=env["goal_radius"],
        max_steps=env["max_steps"],
        action_scale=env["action_scale"],
        dynamics_noise_std=env["dynamics_noise_std"],
        ood_hole=None if hole is None else Rect(tuple(hole[0]), tuple(hole[1])),
    )
