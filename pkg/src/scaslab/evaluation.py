"""Policy evaluation: episode batches over seeds, aggregate statistics,
JSON report serialization.

Reports hold one row per episode; every aggregate is recomputed from the
rows on access, so serialized aggregates can always be checked against the
rows. Non-finite values (an episode that never leaves the OOD region has
steps_out_of_ood = inf) are serialized in Python's JSON dialect
(``Infinity``), which ``json.loads`` reads back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .envs import PerturbProtocol, PointNavConfig, run_episode

__all__ = ["EvalReport", "evaluate_policy"]

EPISODE_FIELDS = ("seed", "episode", "return", "length", "steps_out_of_ood", "perturb_steps")


@dataclass
class EvalReport:
    """Per-episode evaluation rows plus recomputable aggregates.

    Rows are dicts with keys in EPISODE_FIELDS: the evaluation seed, the
    episode index under that seed, undiscounted return, episode length,
    steps spent in the OOD region before first exit (inf when the episode
    never left), and the number of perturbation steps actually applied.
    """

    mode: str
    perturb_steps: int = 0
    noise_magnitude: float = 0.0
    episodes: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.episodes)

    def _column(self, key: str) -> np.ndarray:
        return np.asarray([row[key] for row in self.episodes], dtype=np.float64)

    @staticmethod
    def _mean_std(values: np.ndarray) -> tuple[float, float]:
        # population std; with infs the mean is inf and the std nan, which
        # is reported as-is rather than masked
        with np.errstate(invalid="ignore"):
            return float(values.mean()), float(values.std())

    def aggregates(self) -> dict:
        """Mean and std over all episodes, plus the OOD exit fraction."""
        if not self.episodes:
            return {"n_episodes": 0}
        out: dict = {"n_episodes": len(self.episodes)}
        for key in ("return", "length", "steps_out_of_ood"):
            mean, std = self._mean_std(self._column(key))
            out[f"{key}_mean"] = mean
            out[f"{key}_std"] = std
        ood = self._column("steps_out_of_ood")
        out["ood_exit_fraction"] = float(np.isfinite(ood).mean())
        return out

    def per_seed(self) -> dict[int, dict]:
        """The same aggregate statistics restricted to each seed."""
        out: dict[int, dict] = {}
        for seed in sorted({row["seed"] for row in self.episodes}):
            sub = EvalReport(self.mode, self.perturb_steps, self.noise_magnitude,
                             [r for r in self.episodes if r["seed"] == seed])
            out[seed] = sub.aggregates()
        return out

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "perturb_steps": self.perturb_steps,
            "noise_magnitude": self.noise_magnitude,
            "aggregates": self.aggregates(),
            "per_seed": {str(k): v for k, v in self.per_seed().items()},
            "episodes": self.episodes,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        doc = json.loads(Path(path).read_text())
        return cls(
            mode=doc["mode"],
            perturb_steps=doc["perturb_steps"],
            noise_magnitude=doc["noise_magnitude"],
            episodes=doc["episodes"],
        )

    def table(self) -> str:
        """Human-readable summary, one line per seed plus a total line."""
        header = (
            f"mode={self.mode} perturb_steps={self.perturb_steps} "
            f"episodes={len(self.episodes)}"
        )
        lines = [header]
        if not self.episodes:
            lines.append("(no episodes)")
            return "\n".join(lines)
        cols = f"{'seed':>6} {'n':>5} {'return':>16} {'length':>8} {'ood_steps':>10} {'exit%':>6}"
        lines.append(cols)

        def fmt(label: str, agg: dict) -> str:
            return (
                f"{label:>6} {agg['n_episodes']:>5d} "
                f"{agg['return_mean']:>8.2f}±{agg['return_std']:<7.2f} "
                f"{agg['length_mean']:>8.1f} {agg['steps_out_of_ood_mean']:>10.2f} "
                f"{100 * agg['ood_exit_fraction']:>6.1f}"
            )

        for seed, agg in self.per_seed().items():
            lines.append(fmt(str(seed), agg))
        lines.append(fmt("all", self.aggregates()))
        return "\n".join(lines)


def evaluate_policy(
    policy: Callable[[np.ndarray], np.ndarray],
    config: PointNavConfig,
    mode: str = "IN_DIST",
    episodes: int = 10,
    seeds: Sequence[int] = (0,),
    perturb_steps: int = 0,
    noise_magnitude: float = 0.5,
) -> EvalReport:
    """Run ``episodes`` episodes per seed and collect an EvalReport.

    Deterministic for a given seed list: each seed owns one generator and
    its episodes are drawn in order. perturb_steps=0 runs without any
    perturbation protocol.
    """
    if episodes < 0:
        raise ValueError("episodes must be nonnegative")
    protocol: Optional[PerturbProtocol] = None
    if perturb_steps > 0:
        protocol = PerturbProtocol(perturb_steps, noise_magnitude)
    report = EvalReport(mode=mode, perturb_steps=perturb_steps,
                        noise_magnitude=noise_magnitude if protocol else 0.0)
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        for episode in range(episodes):
            trace = run_episode(config, policy, protocol, mode, rng)
            report.episodes.append(
                {
                    "seed": int(seed),
                    "episode": episode,
                    "return": trace.episode_return,
                    "length": trace.length,
                    "steps_out_of_ood": trace.steps_out_of_ood,
                    "perturb_steps": int(len(trace.perturbed_steps)),
                }
            )
    return report
