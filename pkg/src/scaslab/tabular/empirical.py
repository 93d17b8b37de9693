"""Empirical behavior policy, dynamics, and state-transition models.

All three are normalized count estimates from an offline dataset. Rows of
beta and state_trans for states never visited in the data are undefined:
they are stored as NaN so accidental raw reads propagate loudly, and the
row accessors refuse them outright. Dynamics rows for unseen (s, a) pairs
are zero, which encodes "likelihood zero" for unseen behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import TabularDataset

__all__ = ["EmpiricalModels", "empirical_models"]


@dataclass(frozen=True)
class EmpiricalModels:
    """beta[s, a], dyn M[s, a, s'], state_trans N[s, s'] from counts."""

    beta: np.ndarray
    dyn: np.ndarray
    state_trans: np.ndarray
    visited: np.ndarray  # bool per state: appears as s in the data
    pair_seen: np.ndarray  # bool per (s, a): appears in the data

    @property
    def n_states(self) -> int:
        return self.beta.shape[0]

    @property
    def n_actions(self) -> int:
        return self.beta.shape[1]

    @property
    def visited_states(self) -> np.ndarray:
        return np.flatnonzero(self.visited)

    def _require_visited(self, s: int) -> None:
        if not self.visited[s]:
            raise KeyError(f"state {s} never appears in the dataset; its row is undefined")

    def beta_row(self, s: int) -> np.ndarray:
        self._require_visited(s)
        return self.beta[s]

    def dyn_row(self, s: int, a: int) -> np.ndarray:
        if not self.pair_seen[s, a]:
            raise KeyError(f"pair ({s}, {a}) never appears in the dataset; its row is undefined")
        return self.dyn[s, a]

    def state_trans_row(self, s: int) -> np.ndarray:
        self._require_visited(s)
        return self.state_trans[s]

    def is_deterministic(self) -> bool:
        """True when every observed (s, a) row of M is one-hot."""
        rows = self.dyn[self.pair_seen]
        return bool(np.all(np.count_nonzero(rows, axis=1) == 1))


def empirical_models(mdp_shape: tuple[int, int], data: TabularDataset) -> EmpiricalModels:
    """Normalized-count estimates of beta, M, and N from a dataset.

    N comes from raw (s, s') pair counts, which coincides with
    sum_a beta(a|s) M(s'|s, a) up to float rounding.
    """
    n_states, n_actions = mdp_shape
    data.check_bounds(n_states, n_actions)

    sa_counts = np.zeros((n_states, n_actions))
    sas_counts = np.zeros((n_states, n_actions, n_states))
    ss_counts = np.zeros((n_states, n_states))
    np.add.at(sa_counts, (data.states, data.actions), 1.0)
    np.add.at(sas_counts, (data.states, data.actions, data.next_states), 1.0)
    np.add.at(ss_counts, (data.states, data.next_states), 1.0)

    state_counts = sa_counts.sum(axis=1)
    visited = state_counts > 0
    pair_seen = sa_counts > 0

    beta = np.full((n_states, n_actions), np.nan)
    beta[visited] = sa_counts[visited] / state_counts[visited, None]

    dyn = np.zeros_like(sas_counts)
    dyn[pair_seen] = sas_counts[pair_seen] / sa_counts[pair_seen, None]

    state_trans = np.full((n_states, n_states), np.nan)
    state_trans[visited] = ss_counts[visited] / state_counts[visited, None]

    return EmpiricalModels(
        beta=beta,
        dyn=dyn,
        state_trans=state_trans,
        visited=visited,
        pair_seen=pair_seen,
    )
