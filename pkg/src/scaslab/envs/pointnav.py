"""Point-mass navigation arena with an excluded rectangular region.

The task: reach a goal disc inside a rectangular arena under per-step
displacement bounded by action_scale. A sub-rectangle (the "hole") can be
carved out of datasets, making it out-of-distribution territory that
evaluation episodes may deliberately start inside. Reward is the negative
Euclidean distance to the goal plus a terminal bonus, so returns are dense
and the steps-out-of-OOD metric stays reward-independent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np

logger = logging.getLogger("scaslab.envs")

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
]

EvalMode = Literal["IN_DIST", "OOD_HOLE"]
GOAL_BONUS = 10.0


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by low/high corners."""

    low: tuple[float, float]
    high: tuple[float, float]

    def __post_init__(self):
        if len(self.low) != 2 or len(self.high) != 2:
            raise ValueError("corners must be 2-D points")
        if any(lo > hi for lo, hi in zip(self.low, self.high)):
            raise ValueError(f"low corner must not exceed high corner: {self.low} vs {self.high}")

    @property
    def low_arr(self) -> np.ndarray:
        return np.asarray(self.low)

    @property
    def high_arr(self) -> np.ndarray:
        return np.asarray(self.high)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership test; accepts one point or a batch, inclusive bounds."""
        pts = np.asarray(points)
        inside = np.logical_and(pts >= self.low_arr, pts <= self.high_arr).all(axis=-1)
        return inside

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        shape = (2,) if size is None else (size, 2)
        return rng.uniform(self.low_arr, self.high_arr, size=shape)

    def covers(self, other: "Rect") -> bool:
        return bool(
            np.all(self.low_arr <= other.low_arr) and np.all(other.high_arr <= self.high_arr)
        )


@dataclass(frozen=True)
class PointNavConfig:
    """Arena geometry, goal, and step dynamics of the navigation task."""

    arena: Rect = Rect((0.0, 0.0), (3.0, 5.0))
    goal: tuple[float, float] = (2.0, 3.0)
    goal_radius: float = 0.2
    max_steps: int = 120
    action_scale: float = 0.15
    dynamics_noise_std: float = 0.0
    ood_hole: Optional[Rect] = Rect((0.0, 0.0), (1.5, 2.5))

    def __post_init__(self):
        goal = np.asarray(self.goal)
        if not self.arena.contains(goal):
            raise ValueError(f"goal {self.goal} lies outside the arena")
        if self.ood_hole is not None and not self.arena.covers(self.ood_hole):
            raise ValueError("ood_hole must lie inside the arena")
        if self.action_scale <= 0.0:
            raise ValueError("action_scale must be positive")
        if self.goal_radius < 0.0 or self.dynamics_noise_std < 0.0:
            raise ValueError("goal_radius and dynamics_noise_std must be nonnegative")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")

    @property
    def goal_arr(self) -> np.ndarray:
        return np.asarray(self.goal)

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def action_dim(self) -> int:
        return 2


def env_reset(config: PointNavConfig, mode: EvalMode, rng: np.random.Generator) -> np.ndarray:
    """Uniform start state: inside arena minus hole, or inside the hole."""
    if mode == "OOD_HOLE":
        if config.ood_hole is None:
            raise ValueError("OOD_HOLE reset requires a configured hole")
        return config.ood_hole.sample(rng)
    if mode != "IN_DIST":
        raise ValueError(f"unknown reset mode {mode!r}")
    hole = config.ood_hole
    for _ in range(10_000):
        s = config.arena.sample(rng)
        if hole is None or not hole.contains(s):
            return s
    raise ValueError("arena minus hole has (numerically) no room to sample from")


def env_step(
    config: PointNavConfig,
    state: np.ndarray,
    action: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, float, bool]:
    """One displacement step; returns (next_state, reward, done)."""
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if np.any(np.abs(action) > 1.0):
        logger.warning("action %s outside [-1, 1]; clipping", action)
        action = np.clip(action, -1.0, 1.0)
    nxt = state + config.action_scale * action
    if config.dynamics_noise_std > 0.0:
        if rng is None:
            raise ValueError("stochastic dynamics need an rng")
        nxt = nxt + rng.normal(0.0, config.dynamics_noise_std, size=2)
    nxt = np.clip(nxt, config.arena.low_arr, config.arena.high_arr)
    dist = float(np.linalg.norm(nxt - config.goal_arr))
    reward = -dist
    done = dist <= config.goal_radius
    if done:
        reward += GOAL_BONUS
    return nxt, reward, done


@dataclass(frozen=True)
class ScriptedBehavior:
    """Proportional controller toward the goal plus Gaussian action noise.

    Multiple noise levels model a mixed-quality dataset; episodes cycle
    through them round-robin.
    """

    noise_levels: tuple[float, ...] = (0.1,)

    def __post_init__(self):
        if not self.noise_levels or any(n < 0.0 for n in self.noise_levels):
            raise ValueError("noise levels must be a nonempty tuple of nonnegative reals")

    def act(
        self, config: PointNavConfig, state: np.ndarray, episode: int, rng: np.random.Generator
    ) -> np.ndarray:
        d = config.goal_arr - state
        dist = float(np.linalg.norm(d))
        if dist >= config.action_scale:
            a = d / dist  # full-speed straight line
        else:
            a = d / config.action_scale  # exact arrival
        noise = self.noise_levels[episode % len(self.noise_levels)]
        if noise > 0.0:
            a = a + rng.normal(0.0, noise, size=2)
        return np.clip(a, -1.0, 1.0)


@dataclass(frozen=True)
class RandomBehavior:
    """Uniform actions over the whole box."""

    def act(
        self, config: PointNavConfig, state: np.ndarray, episode: int, rng: np.random.Generator
    ) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=2)


@dataclass(frozen=True)
class PerturbProtocol:
    """Evaluation-time action corruption at uniformly chosen step indices."""

    perturb_steps: int
    noise_magnitude: float = 0.5

    def __post_init__(self):
        if self.perturb_steps < 0:
            raise ValueError("perturb_steps must be nonnegative")
        if self.noise_magnitude < 0.0:
            raise ValueError("noise_magnitude must be nonnegative")


def steps_out_of_ood(states: np.ndarray, hole: Optional[Rect]) -> float:
    """Initial consecutive states inside the hole; inf when never leaving.

    0 when the trajectory starts outside, so in-distribution episodes score
    0 by construction.
    """
    if hole is None:
        return 0.0
    inside = hole.contains(states)
    if not inside[0]:
        return 0.0
    if inside.all():
        return np.inf
    return float(np.argmin(inside))


@dataclass(frozen=True)
class EpisodeTrace:
    """States s_0..s_T, executed actions/rewards, and the OOD exit time."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    perturbed_steps: np.ndarray
    mode: str
    steps_out_of_ood: float

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    @property
    def length(self) -> int:
        return int(self.rewards.size)


def run_episode(
    config: PointNavConfig,
    policy: Callable[[np.ndarray], np.ndarray],
    protocol: Optional[PerturbProtocol],
    mode: EvalMode,
    rng: np.random.Generator,
) -> EpisodeTrace:
    """One evaluation episode, optionally with perturbed action steps.

    Perturbed indices are drawn without replacement over the whole step
    budget up front, so early termination simply uses fewer of them.
    """
    if protocol is not None and protocol.perturb_steps > config.max_steps:
        raise ValueError("perturb_steps cannot exceed max_steps")
    noisy_steps = np.array([], dtype=np.int64)
    if protocol is not None and protocol.perturb_steps > 0:
        noisy_steps = np.sort(
            rng.choice(config.max_steps, size=protocol.perturb_steps, replace=False)
        )
    s = env_reset(config, mode, rng)
    states = [s]
    actions = []
    rewards = []
    noisy_set = set(int(t) for t in noisy_steps)
    for t in range(config.max_steps):
        a = np.asarray(policy(s), dtype=np.float64)
        if t in noisy_set:
            a = a + rng.normal(0.0, protocol.noise_magnitude, size=2)
            a = np.clip(a, -1.0, 1.0)
        s, r, done = env_step(config, s, a, rng)
        states.append(s)
        actions.append(a)
        rewards.append(r)
        if done:
            break
    state_arr = np.asarray(states)
    return EpisodeTrace(
        states=state_arr,
        actions=np.asarray(actions),
        rewards=np.asarray(rewards),
        perturbed_steps=noisy_steps,
        mode=mode,
        steps_out_of_ood=steps_out_of_ood(state_arr, config.ood_hole),
    )
