"""Random tabular instances and the proposition verification loop.

Deterministic instances draw distinct successors for each state's actions,
which makes the regularizer maximizer unique, so the brute-force search
and the closed form must land on the same policy instead of on different
points of a tied optimum. Datasets keep a random nonempty subset of
actions per state, forcing genuine zeros into the behavior policy; support
checks are vacuous without them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .correction import (
    InstanceTooLargeError,
    RegularizerSpec,
    brute_force_maximizer,
    closed_form_policy,
    support_violation,
    value_aware_transition,
)
from .empirical import EmpiricalModels, empirical_models
from .mdp import TabularDataset, TabularMdp, ValueTable, kl_divergence, optimal_values

__all__ = ["TabularInstance", "VerificationReport", "random_instance", "verify_propositions"]

SUPPORT_TOL = 1e-6
ALIGNMENT_KL_TOL = 1e-10
ALPHA_ZERO_TOL = 1e-14


@dataclass(frozen=True)
class TabularInstance:
    mdp: TabularMdp
    data: TabularDataset
    models: EmpiricalModels
    values: ValueTable
    stochastic: bool


def _kept_action_sets(rng: np.random.Generator, n_states: int, n_actions: int) -> list[np.ndarray]:
    """Random nonempty action subset per state, at least one proper subset."""
    kept = []
    for _ in range(n_states):
        k = int(rng.integers(1, n_actions + 1))
        kept.append(np.sort(rng.choice(n_actions, size=k, replace=False)))
    if all(k.size == n_actions for k in kept):
        s = int(rng.integers(n_states))
        k = int(rng.integers(1, n_actions))
        kept[s] = np.sort(rng.choice(n_actions, size=k, replace=False))
    return kept


def random_instance(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    stochastic: bool,
) -> TabularInstance:
    """One MDP + offline dataset + fitted empirical models + optimal values."""
    if n_actions > n_states and not stochastic:
        raise ValueError("deterministic instances need n_actions <= n_states")
    reward = rng.normal(size=(n_states, n_actions))
    if stochastic:
        transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    else:
        transition = np.zeros((n_states, n_actions, n_states))
        for s in range(n_states):
            succ = rng.choice(n_states, size=n_actions, replace=False)
            transition[s, np.arange(n_actions), succ] = 1.0
    mdp = TabularMdp(
        transition=transition,
        reward=reward,
        discount=0.9,
        initial_dist=np.full(n_states, 1.0 / n_states),
    )

    rows = []
    for s, kept in enumerate(_kept_action_sets(rng, n_states, n_actions)):
        for a in kept:
            copies = int(rng.integers(1, 4))
            for _ in range(copies if not stochastic else int(rng.integers(3, 7))):
                s2 = int(rng.choice(n_states, p=transition[s, a]))
                rows.append((s, int(a), float(reward[s, a]), s2))
    data = TabularDataset.from_transitions(rows)
    models = empirical_models((n_states, n_actions), data)
    values = optimal_values(mdp)
    return TabularInstance(mdp=mdp, data=data, models=models, values=values, stochastic=stochastic)


@dataclass
class VerificationReport:
    """Aggregated oracle results over random instances."""

    instances: int
    grid: int
    max_support_violation: float = 0.0
    max_alignment_kl: float = 0.0
    max_argmax_gap: float = 0.0
    max_alpha_zero_gap: float = 0.0
    ok: bool = True
    lines: list[str] = field(default_factory=list)

    @property
    def argmax_gap_tol(self) -> float:
        return 2.0 / self.grid

    def to_json(self) -> dict:
        return {
            "instances": self.instances,
            "max_support_violation": self.max_support_violation,
            "max_alignment_kl": self.max_alignment_kl,
            "max_argmax_gap": self.max_argmax_gap,
        }


def verify_propositions(
    instances: int,
    n_states: int,
    n_actions: int,
    grid: int = 50,
    alphas: Sequence[float] = (0.0, 1.0, 5.0),
    stochastic: bool = False,
    seed: int = 0,
) -> VerificationReport:
    """Check the closed-form optimality claims on random instances.

    Deterministic mode: both regularizer variants' brute-force maximizers
    must match the closed-form policy within sup-norm 2/grid, and the
    corrected transition must align with the dynamics under that policy
    (KL at most 1e-10 per state). Stochastic mode: each maximizer must put
    at most 1e-6 mass outside the behavior support. alpha = 0, when
    present, must reproduce the uncorrected transition to 1e-14.
    """
    if n_actions > 4 or n_states > 8 or grid > 100:
        raise InstanceTooLargeError(
            f"verification instances need n_states <= 8, n_actions <= 4, grid <= 100; "
            f"got n_states={n_states}, n_actions={n_actions}, grid={grid}"
        )
    if n_states < 2 or n_actions < 2:
        raise ValueError("need at least 2 states and 2 actions for meaningful checks")
    report = VerificationReport(instances=instances, grid=grid)
    rng = np.random.default_rng(seed)
    for idx in range(instances):
        ns = int(rng.integers(min(3, n_states), n_states + 1))
        na = int(rng.integers(2, min(n_actions, ns) + 1))
        inst = random_instance(rng, ns, na, stochastic)
        for alpha in alphas:
            checks = _check_instance(inst, float(alpha), grid, report)
            status = "ok" if checks else "FAIL"
            if not checks:
                report.ok = False
            report.lines.append(
                f"instance {idx:03d} states={ns} actions={na} "
                f"{'stoch' if stochastic else 'det'} alpha={alpha:g} {status}"
            )
    return report


def _check_instance(
    inst: TabularInstance, alpha: float, grid: int, report: VerificationReport
) -> bool:
    ok = True
    visited = inst.models.visited
    nstar = value_aware_transition(inst.models, inst.values, alpha)
    if alpha == 0.0:
        gap0 = float(np.max(np.abs(nstar.probs[visited] - inst.models.state_trans[visited])))
        report.max_alpha_zero_gap = max(report.max_alpha_zero_gap, gap0)
        ok &= gap0 <= ALPHA_ZERO_TOL

    maximizers = {}
    for variant in ("rbar", "rbar1"):
        spec = RegularizerSpec(variant=variant, alpha=alpha, values=inst.values)
        pi_hat = brute_force_maximizer(spec, inst.models, inst.data, grid=grid)
        maximizers[variant] = pi_hat
        viol = support_violation(pi_hat, inst.models)
        report.max_support_violation = max(report.max_support_violation, viol)
        ok &= viol <= SUPPORT_TOL

    if not inst.stochastic:
        pi_star = closed_form_policy(inst.models, inst.values, alpha)
        for pi_hat in maximizers.values():
            gap = float(np.max(np.abs(pi_hat.probs[visited] - pi_star.probs[visited])))
            report.max_argmax_gap = max(report.max_argmax_gap, gap)
            ok &= gap <= report.argmax_gap_tol
        for s in inst.models.visited_states:
            induced = pi_star.probs[s] @ inst.models.dyn[s]
            kl = kl_divergence(nstar.row(s), induced)
            report.max_alignment_kl = max(report.max_alignment_kl, kl)
            ok &= kl <= ALIGNMENT_KL_TOL
    return bool(ok)
