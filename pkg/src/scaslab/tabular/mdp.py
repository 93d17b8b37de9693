"""Exact finite-MDP types, value solvers, and KL divergence.

Everything here is small and exact on purpose: these objects are the
oracle tier that the closed-form transition/policy results are checked
against, so solvers favor direct linear algebra over sampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np

__all__ = [
    "TabularMdp",
    "TabularPolicy",
    "TabularDataset",
    "ValueTable",
    "policy_evaluation",
    "optimal_values",
    "kl_divergence",
]

_ROW_SUM_TOL = 1e-12
# direct linear solve below this many states, iterative sweeps above
_DIRECT_SOLVE_MAX_STATES = 512


def _check_stochastic_rows(arr: np.ndarray, what: str) -> None:
    if np.any(arr < 0.0):
        raise ValueError(f"{what} has negative entries")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"{what} rows must sum to 1 (worst deviation {worst:.3e})")


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP: transition tensor P[s, a, s'], rewards R[s, a], discount."""

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=np.float64)
        R = np.asarray(self.reward, dtype=np.float64)
        d0 = np.asarray(self.initial_dist, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must be (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"reward must be (S, A) = {P.shape[:2]}, got {R.shape}")
        if d0.shape != (P.shape[0],):
            raise ValueError(f"initial_dist must have length {P.shape[0]}")
        if not np.all(np.isfinite(R)):
            raise ValueError("rewards must be finite")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must be in [0, 1), got {self.discount}")
        _check_stochastic_rows(P, "transition")
        _check_stochastic_rows(d0[None, :], "initial_dist")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "initial_dist", d0)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_json(self) -> dict[str, Any]:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "discount": self.discount,
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "TabularMdp":
        mdp = cls(
            transition=np.asarray(doc["transition"], dtype=np.float64),
            reward=np.asarray(doc["reward"], dtype=np.float64),
            discount=float(doc["discount"]),
            initial_dist=np.asarray(doc["initial_dist"], dtype=np.float64),
        )
        if mdp.n_states != doc["n_states"] or mdp.n_actions != doc["n_actions"]:
            raise ValueError("declared sizes disagree with array shapes")
        return mdp

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "TabularMdp":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TabularPolicy:
    """Row-stochastic action distribution pi[s, a]."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"policy must be (S, A), got shape {p.shape}")
        _check_stochastic_rows(p, "policy")
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class TabularDataset:
    """Offline transitions (s, a, r, s') over state/action indices."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64)
        a = np.asarray(self.actions, dtype=np.int64)
        r = np.asarray(self.rewards, dtype=np.float64)
        s2 = np.asarray(self.next_states, dtype=np.int64)
        if not (s.shape == a.shape == r.shape == s2.shape) or s.ndim != 1:
            raise ValueError("states/actions/rewards/next_states must be equal-length vectors")
        if s.size == 0:
            raise ValueError("dataset must be nonempty")
        if np.any(s < 0) or np.any(a < 0) or np.any(s2 < 0):
            raise ValueError("indices must be nonnegative")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "next_states", s2)

    def __len__(self) -> int:
        return self.states.size

    @classmethod
    def from_transitions(cls, transitions: Iterable[tuple[int, int, float, int]]) -> "TabularDataset":
        rows = list(transitions)
        if not rows:
            raise ValueError("dataset must be nonempty")
        s, a, r, s2 = zip(*rows)
        return cls(np.array(s), np.array(a), np.array(r, dtype=np.float64), np.array(s2))

    def check_bounds(self, n_states: int, n_actions: int) -> None:
        if (
            np.any(self.states >= n_states)
            or np.any(self.next_states >= n_states)
            or np.any(self.actions >= n_actions)
        ):
            raise ValueError(f"dataset indices exceed MDP shape ({n_states}, {n_actions})")

    def to_json(self) -> dict[str, Any]:
        rows = [
            [int(s), int(a), float(r), int(s2)]
            for s, a, r, s2 in zip(self.states, self.actions, self.rewards, self.next_states)
        ]
        return {"transitions": rows}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "TabularDataset":
        return cls.from_transitions((int(s), int(a), float(r), int(s2)) for s, a, r, s2 in doc["transitions"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "TabularDataset":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ValueTable:
    """State values V[s]."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("values must be a vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "v", v)


def policy_evaluation(mdp: TabularMdp, pi: TabularPolicy, tol: float = 1e-10) -> ValueTable:
    """Solve V = R_pi + gamma * P_pi V to within tol (sup-norm residual).

    Direct linear solve up to 512 states, iterative sweeps beyond.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if pi.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match MDP")
    _check_stochastic_rows(pi.probs, "policy")
    r_pi = np.einsum("sa,sa->s", pi.probs, mdp.reward)
    p_pi = np.einsum("sa,sat->st", pi.probs, mdp.transition)
    gamma = mdp.discount
    n = mdp.n_states
    if n <= _DIRECT_SOLVE_MAX_STATES:
        v = np.linalg.solve(np.eye(n) - gamma * p_pi, r_pi)
        return ValueTable(v)
    v = np.zeros(n)
    for _ in range(5_000_000):
        tv = r_pi + gamma * (p_pi @ v)
        # residual of tv is at most gamma * ||tv - v||, so stopping at tol
        # leaves tv itself within tol of the fixed-point equation
        if np.max(np.abs(tv - v)) <= tol:
            return ValueTable(tv)
        v = tv
    raise RuntimeError("policy evaluation failed to converge")


def optimal_values(mdp: TabularMdp, tol: float = 1e-10) -> ValueTable:
    """Value iteration to within tol of the Bellman-optimality fixed point."""
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    gamma = mdp.discount
    v = np.zeros(mdp.n_states)
    for _ in range(5_000_000):
        q = mdp.reward + gamma * (mdp.transition @ v)
        tv = q.max(axis=1)
        gap = np.max(np.abs(tv - v))
        # sup-norm contraction bound: ||tv - v*|| <= gamma/(1-gamma) * gap
        if gamma * gap <= tol * (1.0 - gamma):
            return ValueTable(tv)
        v = tv
    raise RuntimeError("value iteration failed to converge")


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with 0 log(0/.) = 0; np.inf when supp(p) is not in supp(q)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("p and q must be vectors of equal length")
    for name, vec in (("p", p), ("q", q)):
        if np.any(vec < 0.0) or abs(vec.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability vector")
    mask = p > 0.0
    if np.any(q[mask] == 0.0):
        return np.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
