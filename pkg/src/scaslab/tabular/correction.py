"""Value-aware transition correction, its closed-form policy, and oracles.

The closed forms live here: N*(s'|s) = exp(alpha V(s')) N(s'|s) / Z(s) and
pi*(a|s) proportional to exp(alpha V(succ(s,a))) beta(a|s). The brute-force
simplex maximizer is deliberately independent of both: it enumerates a grid
over each state's action simplex and refines by projected coordinate
ascent, so agreement between the two paths is evidence, not construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Literal

import numpy as np

from .empirical import EmpiricalModels
from .mdp import TabularDataset, TabularPolicy, ValueTable

__all__ = [
    "ValueAwareTransition",
    "RegularizerSpec",
    "InstanceTooLargeError",
    "value_aware_transition",
    "closed_form_policy",
    "regularizer_value",
    "brute_force_maximizer",
    "support_violation",
]


class InstanceTooLargeError(ValueError):
    """Raised when an instance exceeds the brute-force search preconditions."""


@dataclass(frozen=True)
class ValueAwareTransition:
    """Corrected state transition N*[s, s'] with normalizers Z[s].

    Rows (and z entries) are defined only at states visited in the data;
    undefined rows hold NaN, mirroring the empirical-model convention.
    """

    probs: np.ndarray
    alpha: float
    z: np.ndarray
    visited: np.ndarray

    def __post_init__(self):
        rows = self.probs[self.visited]
        if np.any(rows < 0.0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("defined rows of N* must be probability distributions")

    def row(self, s: int) -> np.ndarray:
        if not self.visited[s]:
            raise KeyError(f"state {s} never appears in the dataset; its row is undefined")
        return self.probs[s]


@dataclass(frozen=True)
class RegularizerSpec:
    """Which dataset-expectation regularizer to evaluate, and with what V.

    "rbar" weights each (s, s') pair by exp(alpha V(s')) / Z(s); "rbar1"
    swaps the normalizer for exp(alpha V(s)).
    """

    variant: Literal["rbar", "rbar1"]
    alpha: float
    values: ValueTable

    def __post_init__(self):
        if self.variant not in ("rbar", "rbar1"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.alpha < 0.0:
            raise ValueError("alpha must be nonnegative")


def value_aware_transition(
    models: EmpiricalModels, values: ValueTable, alpha: float
) -> ValueAwareTransition:
    """N*(s'|s) = exp(alpha V(s')) N(s'|s) / Z(s) over visited states.

    Exponentials are max-shifted per row, so the probabilities stay exact
    for large alpha V; Z is also reported unshifted to match its
    definition directly.
    """
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    v = values.v
    if v.shape != (models.n_states,):
        raise ValueError("value table length must equal n_states")
    probs = np.full_like(models.state_trans, np.nan)
    z = np.full(models.n_states, np.nan)
    for s in models.visited_states:
        n_row = models.state_trans[s]
        support = n_row > 0.0
        shift = np.max(alpha * v[support])
        w = np.zeros_like(n_row)
        w[support] = np.exp(alpha * v[support] - shift) * n_row[support]
        probs[s] = w / w.sum()
        z[s] = float(np.dot(np.exp(alpha * v), n_row))
    return ValueAwareTransition(probs=probs, alpha=alpha, z=z, visited=models.visited.copy())


def closed_form_policy(
    models: EmpiricalModels, values: ValueTable, alpha: float
) -> TabularPolicy:
    """pi*(a|s) proportional to exp(alpha V(succ(s, a))) beta(a|s).

    Requires deterministic observed dynamics (every seen (s, a) row of M
    one-hot). Rows at unvisited states are filled uniform by convention;
    nothing downstream reads them.
    """
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    if not models.is_deterministic():
        raise ValueError("closed-form policy requires deterministic observed dynamics")
    v = values.v
    n_states, n_actions = models.beta.shape
    probs = np.full((n_states, n_actions), 1.0 / n_actions)
    for s in models.visited_states:
        beta_row = models.beta[s]
        kept = beta_row > 0.0
        succ = np.argmax(models.dyn[s], axis=1)
        shift = np.max(alpha * v[succ[kept]])
        w = np.zeros(n_actions)
        w[kept] = beta_row[kept] * np.exp(alpha * v[succ[kept]] - shift)
        probs[s] = w / w.sum()
    return TabularPolicy(probs)


def _pair_weights(spec: RegularizerSpec, models: EmpiricalModels) -> np.ndarray:
    """Weight attached to each dataset pair (s, s'), NaN at unvisited rows."""
    v = spec.values.v
    alpha = spec.alpha
    weights = np.full((models.n_states, models.n_states), np.nan)
    for s in models.visited_states:
        if spec.variant == "rbar":
            n_row = models.state_trans[s]
            support = n_row > 0.0
            shift = np.max(alpha * v[support])
            z_shifted = float(np.dot(np.exp(alpha * v[support] - shift), n_row[support]))
            weights[s] = np.exp(alpha * v - shift) / z_shifted
        else:
            weights[s] = np.exp(alpha * (v - v[s]))
    return weights


def regularizer_value(
    spec: RegularizerSpec,
    pi: TabularPolicy,
    models: EmpiricalModels,
    data: TabularDataset,
) -> float:
    """Exact dataset expectation of weight(s, s') log M(s'|s, pi).

    M(s'|s, pi) expands to sum_a pi(a|s) M(s'|s, a); any dataset pair with
    zero likelihood under pi sends the whole expectation to -inf.
    """
    if pi.probs.shape != models.beta.shape:
        raise ValueError("policy shape does not match the models")
    weights = _pair_weights(spec, models)
    likelihood = np.einsum("na,nas->ns", pi.probs[data.states], models.dyn[data.states])
    like = likelihood[np.arange(len(data)), data.next_states]
    if np.any(like == 0.0):
        return -np.inf
    w = weights[data.states, data.next_states]
    return float(np.mean(w * np.log(like)))


def _weighted_pair_counts(
    spec: RegularizerSpec, models: EmpiricalModels, data: TabularDataset
) -> np.ndarray:
    """C[s, s'] = (1/n) sum of weight(s, s') over dataset transitions s -> s'."""
    weights = _pair_weights(spec, models)
    counts = np.zeros((models.n_states, models.n_states))
    np.add.at(counts, (data.states, data.next_states), 1.0)
    c = np.zeros_like(counts)
    seen = counts > 0.0
    c[seen] = counts[seen] * weights[seen] / len(data)
    return c


_COMPOSITION_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _simplex_grid(n_parts: int, total: int) -> np.ndarray:
    """All integer compositions of `total` into `n_parts` parts, divided out."""
    key = (n_parts, total)
    if key not in _COMPOSITION_CACHE:
        def rec(parts_left, remaining):
            if parts_left == 1:
                yield (remaining,)
                return
            for head in range(remaining + 1):
                for tail in rec(parts_left - 1, remaining - head):
                    yield (head,) + tail

        arr = np.array(list(rec(n_parts, total)), dtype=np.float64) / float(total)
        _COMPOSITION_CACHE[key] = arr
    return _COMPOSITION_CACHE[key]


def _state_objective(p: np.ndarray, dyn_s: np.ndarray, cols: np.ndarray, coef: np.ndarray) -> float:
    like = p @ dyn_s[:, cols]
    if np.any(like == 0.0):
        return -np.inf
    return float(np.dot(coef, np.log(like)))


def _refine_state(
    p: np.ndarray, dyn_s: np.ndarray, cols: np.ndarray, coef: np.ndarray, steps: int = 200
) -> np.ndarray:
    """Projected coordinate ascent over action-pair line segments.

    Each step reallocates the mass shared by one pair of actions via
    ternary search on the (concave) section, with the segment endpoints
    always among the candidates so exact zeros are reachable.
    """
    p = p.copy()
    n_actions = p.size
    if n_actions == 1:
        return p
    pairs = list(combinations(range(n_actions), 2))
    lm = dyn_s[:, cols]
    scratch = np.empty(n_actions)
    cycle_change = 0.0
    for step in range(steps):
        i, j = pairs[step % len(pairs)]
        if step % len(pairs) == 0:
            # converged once a whole sweep over the pairs stops moving p
            if step > 0 and cycle_change <= 1e-15:
                break
            cycle_change = 0.0
        mass = p[i] + p[j]
        if mass == 0.0:
            continue
        # likelihood contribution of the untouched actions, built without
        # subtraction so it cannot go negative by cancellation
        scratch[:] = p
        scratch[i] = scratch[j] = 0.0
        residual = scratch @ lm

        def section(t: float) -> float:
            like = residual + t * lm[i] + (mass - t) * lm[j]
            if np.any(like <= 0.0):
                return -np.inf
            return float(np.dot(coef, np.log(like)))

        lo, hi = 0.0, mass
        for _ in range(40):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            if section(m1) < section(m2):
                lo = m1
            else:
                hi = m2
        candidates = [0.0, mass, 0.5 * (lo + hi), p[i]]
        t_best = max(candidates, key=section)
        cycle_change = max(cycle_change, abs(t_best - p[i]))
        p[i], p[j] = t_best, mass - t_best
    return p


def brute_force_maximizer(
    spec: RegularizerSpec,
    models: EmpiricalModels,
    data: TabularDataset,
    grid: int = 50,
) -> TabularPolicy:
    """Per-state simplex search maximizing the dataset regularizer.

    The objective separates across states, so each visited state is
    maximized independently: enumerate the probability simplex at
    resolution 1/grid, then refine the best grid point with projected
    coordinate ascent. Guarded to small instances by precondition.
    """
    n_states, n_actions = models.beta.shape
    n_visited = int(models.visited.sum())
    if n_actions > 4 or n_visited > 8 or grid > 100 or grid < 1:
        raise InstanceTooLargeError(
            f"brute force supports n_actions <= 4, visited states <= 8, grid in [1, 100]; "
            f"got n_actions={n_actions}, visited={n_visited}, grid={grid}"
        )
    c = _weighted_pair_counts(spec, models, data)
    candidates = _simplex_grid(n_actions, grid)
    probs = np.full((n_states, n_actions), 1.0 / n_actions)
    for s in models.visited_states:
        cols = np.flatnonzero(c[s] > 0.0)
        coef = c[s, cols]
        dyn_s = models.dyn[s]
        like = candidates @ dyn_s[:, cols]
        with np.errstate(divide="ignore"):
            obj = np.log(like) @ coef
        best = candidates[int(np.argmax(obj))]
        best = _refine_state(best, dyn_s, cols, coef)
        probs[s] = best / best.sum()
    return TabularPolicy(probs)


def support_violation(pi: TabularPolicy, models: EmpiricalModels) -> float:
    """Largest per-state policy mass on actions the behavior never took."""
    worst = 0.0
    for s in models.visited_states:
        ood = models.beta[s] == 0.0
        worst = max(worst, float(pi.probs[s, ood].sum()))
    return worst
