"""SCAS actor-critic: critic ensemble Bellman updates plus a value-weighted
state-alignment regularizer on the policy.

The policy objective maximizes

    (1 - lam) * E[Q(s, pi(s))] / mean|Q|  -  lam * E[w * ||M(s_hat, pi(s_hat)) - s'||^2]

with per-sample weights w = min(exp(alpha * (V(s') - V(s))), weight_clip)
treated as constants (no gradient flows through V into the weights). V is
the critic-ensemble value at the detached policy action. States are
normalized with the dataset statistics everywhere inside the agent; only
``act`` accepts raw environment states.

Behavior cloning is the same machinery with the dynamics model swapped for
direct action regression (bc_mode), lam=1, alpha=0, sigma=0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import nn
from .dynamics import DynamicsModel
from .envs import ContinuousDataset

__all__ = ["ScasAgent", "PolicySnapshot", "METRICS_COLUMNS", "write_metrics_rows"]

METRICS_COLUMNS = (
    "step",
    "critic_loss",
    "policy_objective",
    "mean_q",
    "max_weight",
    "eval_return",
    "eval_steps_out_of_ood",
)

EvalHook = Callable[[int, "PolicySnapshot"], Optional[dict]]


class _FlatPack:
    """Duck-typed parameter holder: one flat vector spanning several nets."""

    __slots__ = ("flat",)

    def __init__(self, flat: np.ndarray):
        self.flat = flat


@dataclass(frozen=True)
class PolicySnapshot:
    """Frozen deterministic policy: raw environment state in, action out."""

    spec: nn.MlpSpec
    params: nn.MlpParams
    state_mean: np.ndarray
    state_std: np.ndarray

    def act(self, state: np.ndarray) -> np.ndarray:
        s = (np.asarray(state, dtype=np.float64) - self.state_mean) / self.state_std
        return np.asarray(nn.forward(self.spec, self.params, s), dtype=np.float64)

    __call__ = act


def write_metrics_rows(path: str | Path, rows: list[dict], append: bool = False) -> None:
    """Append-only CSV stream in the fixed metrics column order."""
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        if not append:
            writer.writeheader()
        for row in rows:
            writer.writerow({col: row.get(col, "") for col in METRICS_COLUMNS})


class ScasAgent(BaseEstimator):
    """Offline actor-critic with OOD action suppression via state alignment.

    lam is the balance coefficient between the Q term and the alignment
    term (the config files call it "lambda"); alpha is the inverse
    temperature of the value weighting; sigma the state-perturbation noise
    in normalized units.
    """

    def __init__(
        self,
        alpha: float = 5.0,
        lam: float = 0.25,
        sigma: float = 0.003,
        gamma: float = 0.99,
        tau: float = 0.005,
        critic_lr: float = 3e-4,
        actor_lr: float = 2e-4,
        batch_size: int = 256,
        policy_freq: int = 2,
        n_critics: int = 4,
        weight_clip: float = 50.0,
        gradient_steps: int = 100_000,
        hidden_width: int = 64,
        v_aggregate: str = "mean",
        bc_mode: bool = False,
        stop_on_q_divergence: bool = False,
        log_every: int = 500,
        eval_every: int = 0,
        dtype: str = "float32",
        random_state: int = 0,
    ):
        self.alpha = alpha
        self.lam = lam
        self.sigma = sigma
        self.gamma = gamma
        self.tau = tau
        self.critic_lr = critic_lr
        self.actor_lr = actor_lr
        self.batch_size = batch_size
        self.policy_freq = policy_freq
        self.n_critics = n_critics
        self.weight_clip = weight_clip
        self.gradient_steps = gradient_steps
        self.hidden_width = hidden_width
        self.v_aggregate = v_aggregate
        self.bc_mode = bc_mode
        self.stop_on_q_divergence = stop_on_q_divergence
        self.log_every = log_every
        self.eval_every = eval_every
        self.dtype = dtype
        self.random_state = random_state

    # ---------------------------------------------------------------- setup

    def _np_dtype(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be 'float32' or 'float64', got {self.dtype!r}")
        return np.float32 if self.dtype == "float32" else np.float64

    def _validate_config(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.weight_clip <= 0.0:
            raise ValueError(f"weight_clip must be positive, got {self.weight_clip}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.n_critics < 1 or self.policy_freq < 1 or self.batch_size < 1:
            raise ValueError("n_critics, policy_freq and batch_size must be >= 1")
        if self.gradient_steps < 0:
            raise ValueError("gradient_steps must be nonnegative")
        if self.v_aggregate not in ("mean", "min"):
            raise ValueError(f"v_aggregate must be 'mean' or 'min', got {self.v_aggregate!r}")
        self._np_dtype()

    def _setup(self, data: ContinuousDataset, dynamics: Optional[DynamicsModel]) -> None:
        self._validate_config()
        dt = self._np_dtype()
        if self.bc_mode:
            self._dynamics = None
        else:
            if dynamics is None:
                raise ValueError("a trained dynamics model is required unless bc_mode is set")
            if not hasattr(dynamics, "params_"):
                raise NotFittedError("dynamics model is not fitted")
            if dynamics.trained_steps_ <= 0 and self.gradient_steps > 0 and self.lam > 0.0:
                raise ValueError("dynamics model has zero trained steps; refusing to regularize against it")
            if not (
                np.allclose(dynamics.state_mean_, data.state_mean, rtol=1e-10, atol=1e-12)
                and np.allclose(dynamics.state_std_, data.state_std, rtol=1e-10, atol=1e-12)
            ):
                raise ValueError("dynamics model normalization statistics do not match the dataset")
            self._dynamics = dynamics
            self._dyn_params = nn.MlpParams(dynamics.params_.flat.astype(dt), dynamics.spec_)

        sdim, adim = data.state_dim, data.action_dim
        rng = np.random.default_rng(np.random.SeedSequence(self.random_state))
        self.actor_spec_ = nn.MlpSpec(
            (sdim, self.hidden_width, self.hidden_width, adim),
            "tanh_scaled",
            (1.0,) * adim,
        )
        critic_spec = nn.MlpSpec((sdim + adim, self.hidden_width, self.hidden_width, 1))
        self.critic_spec_ = critic_spec
        self.actor_params_ = nn.init_params(self.actor_spec_, rng, final_layer_scale=0.01, dtype=dt)
        # all critics (and all targets) live in one flat buffer so the Adam
        # and Polyak updates run once over the whole ensemble
        per_critic = nn.n_params(critic_spec)
        self._critic_flat = np.concatenate(
            [nn.init_params(critic_spec, rng, dtype=dt).flat for _ in range(self.n_critics)]
        )
        self._target_flat = self._critic_flat.copy()
        self.critic_params_ = [
            nn.MlpParams(self._critic_flat[i * per_critic : (i + 1) * per_critic], critic_spec)
            for i in range(self.n_critics)
        ]
        self.target_params_ = [
            nn.MlpParams(self._target_flat[i * per_critic : (i + 1) * per_critic], critic_spec)
            for i in range(self.n_critics)
        ]
        self._critic_pack = _FlatPack(self._critic_flat)
        self._target_pack = _FlatPack(self._target_flat)
        self._critic_grad = np.empty_like(self._critic_flat)
        self._per_critic = per_critic
        # batched (n_critics, ...) views over the same buffers: the hot loop
        # runs one matmul per layer for the whole ensemble
        self._critic_ens = nn.EnsembleParams(self._critic_flat, critic_spec, self.n_critics)
        self._target_ens = nn.EnsembleParams(self._target_flat, critic_spec, self.n_critics)
        self._actor_opt = nn.AdamState.for_params(self.actor_params_, lr=self.actor_lr)
        self._critic_opt = nn.AdamState.for_params(self._critic_pack, lr=self.critic_lr)
        self._rng = rng
        self._next_action_cache = None

        self.state_mean_ = data.state_mean.copy()
        self.state_std_ = data.state_std.copy()
        self._S = data.normalize(data.states).astype(dt)
        self._A = data.actions.astype(dt)
        self._R = data.rewards.astype(dt)
        self._S2 = data.normalize(data.next_states).astype(dt)
        self._D = data.done.astype(dt)
        self._rmax = float(np.abs(data.rewards).max())
        self.q_band_ = 2.0 * self._rmax / (1.0 - self.gamma) if self.gamma < 1.0 else np.inf

        self.trained_steps_ = 0
        self.max_weight_ = 0.0
        self.band_exit_step_ = None
        self.metrics_ = []
        self.dataset_hash_ = data.content_hash()

    # ------------------------------------------------------------- updates

    def critic_update(self, idx: np.ndarray) -> float:
        """One Bellman regression step for every critic; returns mean loss."""
        s, a, r, s2, d = self._S[idx], self._A[idx], self._R[idx], self._S2[idx], self._D[idx]
        a2 = nn.forward(self.actor_spec_, self.actor_params_, s2)
        self._next_action_cache = a2
        x2 = np.concatenate([s2, a2], axis=1)
        tq = nn.ensemble_forward(self.critic_spec_, self._target_ens, x2)[:, :, 0].min(axis=0)
        y = r + self.gamma * (1.0 - d) * tq
        # containment: |y| can never exceed r_max + gamma * max|target Q|;
        # skipped once a diverging run has already produced non-finite values
        if np.isfinite(y).all():
            assert np.abs(y).max() <= self._rmax + self.gamma * np.abs(tq).max() + 1e-4

        x = np.concatenate([s, a], axis=1)
        inv_b = 1.0 / len(idx)
        q, tape = nn.ensemble_forward_tape(self.critic_spec_, self._critic_ens, x)
        diff = q[:, :, 0] - y
        per_critic_loss = np.einsum("ij,ij->i", diff, diff) * inv_b
        nn.ensemble_backward(self.critic_spec_, self._critic_ens, tape,
                             (2.0 * inv_b) * diff[:, :, None], out=self._critic_grad)
        # ensemble Adam runs once on the stacked gradient, which is the same
        # elementwise update as one Adam per critic
        nn.adam_step(self._critic_opt, self._critic_pack, self._critic_grad)
        return float(per_critic_loss.mean())

    def _aggregate_q(self, qs: np.ndarray) -> np.ndarray:
        # qs has shape (n_critics, batch)
        return qs.mean(axis=0) if self.v_aggregate == "mean" else qs.min(axis=0)

    def _clipped_weights(self, dv: np.ndarray) -> np.ndarray:
        # cap the exponent just above ln(clip) so exp never overflows, then
        # clip the weight itself so the bound holds exactly; math.log keeps
        # the scalar weak so float32 batches stay float32
        arg = np.minimum(self.alpha * dv, math.log(self.weight_clip) + 1.0)
        return np.minimum(np.exp(arg), self.weight_clip)

    def compute_weights(self, idx: np.ndarray) -> np.ndarray:
        """Per-sample alignment weights min(exp(alpha dV), clip), as constants."""
        s, s2 = self._S[idx], self._S2[idx]
        a_pi = nn.forward(self.actor_spec_, self.actor_params_, s)
        a_pi2 = nn.forward(self.actor_spec_, self.actor_params_, s2)
        qs = nn.ensemble_forward(self.critic_spec_, self._critic_ens,
                                 np.concatenate([s, a_pi], axis=1))[:, :, 0]
        qs2 = nn.ensemble_forward(self.critic_spec_, self._critic_ens,
                                  np.concatenate([s2, a_pi2], axis=1))[:, :, 0]
        dv = self._aggregate_q(qs2) - self._aggregate_q(qs)
        return self._clipped_weights(dv)

    def policy_objective_and_grad(
        self,
        idx: np.ndarray,
        s_hat: np.ndarray,
        weights: Optional[np.ndarray] = None,
        with_grad: bool = True,
        next_actions: Optional[np.ndarray] = None,
        q_divisor: Optional[float] = None,
    ):
        """Objective (1-lam)*Qnorm - lam*weightedMSE and its actor gradient.

        ``weights`` overrides the value-based alignment weights; passing the
        precomputed array must not change the gradient, since weights are
        constants either way. The Q normalizer is likewise a constant of the
        optimization: ``q_divisor`` overrides the batch value (the one used
        is recorded in ``_last_q_divisor``). ``s_hat`` is the perturbed
        normalized state batch (equal to the state batch when sigma is 0).
        ``next_actions`` optionally carries pi(s') already computed for the
        same batch under the current actor parameters.
        """
        dt = self._np_dtype()
        b = len(idx)
        s, a_data, s2 = self._S[idx], self._A[idx], self._S2[idx]
        sdim = s.shape[1]
        x_actor = np.concatenate([s, s_hat], axis=0)
        out, actor_tape = nn.forward_tape(self.actor_spec_, self.actor_params_, x_actor)
        a_pi, a_hat = out[:b], out[b:]

        # Q term: ensemble mean at the policy action, normalized by the
        # detached batch mean magnitude
        need_q_grad = with_grad and self.lam < 1.0
        x_q = np.concatenate([s, a_pi], axis=1)
        q_tape = None
        if need_q_grad:
            q_out, q_tape = nn.ensemble_forward_tape(self.critic_spec_, self._critic_ens, x_q)
        else:
            q_out = nn.ensemble_forward(self.critic_spec_, self._critic_ens, x_q)
        qs = q_out[:, :, 0]
        q_vals = qs.mean(axis=0)
        divisor = q_divisor if q_divisor is not None else max(float(np.abs(q_vals).mean()), 1e-6)
        self._last_q_divisor = divisor
        self._last_mean_q = float(q_vals.mean())
        q_term = self._last_mean_q / divisor

        if weights is None and self.lam > 0.0 and not self.bc_mode and self.alpha > 0.0:
            if next_actions is None:
                next_actions = nn.forward(self.actor_spec_, self.actor_params_, s2)
            x_q2 = np.concatenate([s2, next_actions], axis=1)
            qs2 = nn.ensemble_forward(self.critic_spec_, self._critic_ens, x_q2)[:, :, 0]
            dv = self._aggregate_q(qs2) - self._aggregate_q(qs)
            weights = self._clipped_weights(dv)
        elif weights is None:
            weights = np.ones(b, dtype=dt)

        dyn_tape = None
        if self.lam > 0.0:
            if self.bc_mode:
                diff = a_hat - a_data
            else:
                x_dyn = np.concatenate([s_hat, a_hat], axis=1)
                if with_grad:
                    pred, dyn_tape = nn.forward_tape(self._dynamics.spec_, self._dyn_params, x_dyn)
                else:
                    pred = nn.forward(self._dynamics.spec_, self._dyn_params, x_dyn)
                diff = pred - s2
            mse_term = float(np.mean(weights * np.sum(diff * diff, axis=1)))
        else:
            diff = None
            mse_term = 0.0

        objective = (1.0 - self.lam) * q_term - self.lam * mse_term
        if not with_grad:
            return objective, None, weights

        upstream_actor = np.zeros((2 * b, self.actor_spec_.out_width), dtype=dt)
        if self.lam < 1.0:
            # d(loss)/d a_pi, loss = -objective
            coef = -(1.0 - self.lam) / (divisor * b * self.n_critics)
            ones = np.full((self.n_critics, b, 1), coef, dtype=dt)
            _, igrad = nn.ensemble_backward(self.critic_spec_, self._critic_ens, q_tape,
                                            ones, input_only=True)
            upstream_actor[:b] += igrad.sum(axis=0)[:, sdim:]
        if self.lam > 0.0:
            scale = self.lam * 2.0 / b
            up_mse = (scale * weights)[:, None] * diff
            if self.bc_mode:
                upstream_actor[b:] += up_mse.astype(dt)
            else:
                _, igrad_dyn = nn.backward(self._dynamics.spec_, self._dyn_params, dyn_tape,
                                           up_mse, input_only=True)
                upstream_actor[b:] += igrad_dyn[:, sdim:]

        actor_grad, _ = nn.backward(self.actor_spec_, self.actor_params_, actor_tape, upstream_actor)
        return objective, actor_grad, weights

    def policy_update(
        self,
        idx: np.ndarray,
        lr_multiplier: float = 1.0,
        next_actions: Optional[np.ndarray] = None,
    ) -> float:
        """One actor ascent step plus Polyak target refresh; returns objective."""
        dt = self._np_dtype()
        s = self._S[idx]
        if self.sigma > 0.0:
            s_hat = s + self.sigma * self._rng.standard_normal(s.shape).astype(dt)
        else:
            s_hat = s
        objective, grad, weights = self.policy_objective_and_grad(
            idx, s_hat, next_actions=next_actions
        )
        w_max = float(weights.max())
        self.max_weight_ = max(self.max_weight_, w_max)
        self._last_max_weight = w_max
        nn.adam_step(self._actor_opt, self.actor_params_, grad, lr_multiplier=lr_multiplier)
        nn.polyak_update(self._target_pack, self._critic_pack, self.tau)
        return objective

    # ------------------------------------------------------------ training

    def fit(
        self,
        data: ContinuousDataset,
        dynamics: Optional[DynamicsModel] = None,
        eval_hook: Optional[EvalHook] = None,
        metrics_path: Optional[str | Path] = None,
    ) -> "ScasAgent":
        """Offline training: critic update every step, policy update every
        policy_freq steps with cosine-decayed actor learning rate."""
        self._setup(data, dynamics)
        n = len(data)
        if metrics_path is not None:
            write_metrics_rows(metrics_path, [])

        window_loss = window_obj = 0.0
        window_loss_n = window_obj_n = 0
        window_max_w: float = np.nan
        pending_eval: dict = {}

        for step in range(self.gradient_steps):
            idx = self._rng.integers(0, n, size=self.batch_size)
            loss = self.critic_update(idx)
            window_loss += loss
            window_loss_n += 1
            t = step + 1
            if t % self.policy_freq == 0:
                mult = nn.cosine_lr_multiplier(step, self.gradient_steps)
                objective = self.policy_update(
                    idx, lr_multiplier=mult, next_actions=self._next_action_cache
                )
                window_obj += objective
                window_obj_n += 1
                if self.lam > 0.0:
                    w = self._last_max_weight
                    window_max_w = w if math.isnan(window_max_w) else max(window_max_w, w)
                if self.band_exit_step_ is None and not abs(self._last_mean_q) <= self.q_band_:
                    self.band_exit_step_ = t
            self.trained_steps_ = t

            if eval_hook is not None and self.eval_every > 0 and t % self.eval_every == 0:
                result = eval_hook(t, self.policy_snapshot())
                if result:
                    pending_eval = dict(result)
            if self.log_every > 0 and (t % self.log_every == 0 or t == self.gradient_steps):
                row = {
                    "step": t,
                    "critic_loss": window_loss / max(window_loss_n, 1),
                    "policy_objective": window_obj / max(window_obj_n, 1),
                    "mean_q": getattr(self, "_last_mean_q", 0.0),
                }
                if not math.isnan(window_max_w):
                    row["max_weight"] = window_max_w
                row.update(pending_eval)
                pending_eval = {}
                self.metrics_.append(row)
                if metrics_path is not None:
                    write_metrics_rows(metrics_path, [row], append=True)
                window_loss = window_obj = 0.0
                window_loss_n = window_obj_n = 0
                window_max_w = np.nan
                if (
                    self.stop_on_q_divergence
                    and self.band_exit_step_ is not None
                ):
                    break
        return self

    # ----------------------------------------------------------- inference

    def _require_fitted(self) -> None:
        if not hasattr(self, "actor_params_"):
            raise NotFittedError("this ScasAgent is not fitted yet; call fit first")

    def policy_snapshot(self) -> PolicySnapshot:
        self._require_fitted()
        frozen = nn.MlpParams(self.actor_params_.flat.astype(np.float64), self.actor_spec_)
        return PolicySnapshot(self.actor_spec_, frozen, self.state_mean_.copy(), self.state_std_.copy())

    def act(self, state: np.ndarray) -> np.ndarray:
        """Deterministic bounded action for a raw environment state."""
        self._require_fitted()
        s = (np.asarray(state, dtype=np.float64) - self.state_mean_) / self.state_std_
        return np.asarray(
            nn.forward(self.actor_spec_, self.actor_params_, s.astype(self._np_dtype())),
            dtype=np.float64,
        )

    # ----------------------------------------------------------- bundle IO

    def save_bundle(self, out_dir: str | Path) -> None:
        """Checkpoint directory: parameter files plus a JSON manifest."""
        self._require_fitted()
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        common = dict(seed=self.random_state, step=self.trained_steps_)
        nn.save_params(out / "actor.params", self.actor_spec_, self.actor_params_, **common)
        for i, (cp, tp) in enumerate(zip(self.critic_params_, self.target_params_)):
            nn.save_params(out / f"critic_{i}.params", self.critic_spec_, cp, **common)
            nn.save_params(out / f"target_{i}.params", self.critic_spec_, tp, **common)
        if self._dynamics is not None:
            self._dynamics.save(out / "dynamics.params")
        manifest = {
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "seed": self.random_state,
            "step": self.trained_steps_,
            "dataset_hash": self.dataset_hash_,
            "state_mean": self.state_mean_.tolist(),
            "state_std": self.state_std_.tolist(),
            "max_weight": self.max_weight_,
            "band_exit_step": self.band_exit_step_,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def load_bundle(cls, bundle_dir: str | Path) -> "ScasAgent":
        bundle = Path(bundle_dir)
        manifest = json.loads((bundle / "manifest.json").read_text())
        agent = cls(**manifest["config"])
        dt = agent._np_dtype()
        _, actor_spec, actor_params = nn.load_params(bundle / "actor.params")
        agent.actor_spec_ = actor_spec
        agent.actor_params_ = nn.MlpParams(actor_params.flat.astype(dt), actor_spec)
        agent.critic_params_ = []
        agent.target_params_ = []
        for i in range(agent.n_critics):
            _, critic_spec, cp = nn.load_params(bundle / f"critic_{i}.params")
            _, _, tp = nn.load_params(bundle / f"target_{i}.params")
            agent.critic_spec_ = critic_spec
            agent.critic_params_.append(nn.MlpParams(cp.flat.astype(dt), critic_spec))
            agent.target_params_.append(nn.MlpParams(tp.flat.astype(dt), critic_spec))
        dyn_path = bundle / "dynamics.params"
        agent._dynamics = DynamicsModel.load(dyn_path) if dyn_path.exists() else None
        if agent._dynamics is not None:
            agent._dyn_params = nn.MlpParams(agent._dynamics.params_.flat.astype(dt), agent._dynamics.spec_)
        agent.state_mean_ = np.asarray(manifest["state_mean"], dtype=np.float64)
        agent.state_std_ = np.asarray(manifest["state_std"], dtype=np.float64)
        agent.trained_steps_ = int(manifest["step"])
        agent.dataset_hash_ = manifest["dataset_hash"]
        agent.max_weight_ = float(manifest.get("max_weight", 0.0))
        raw_exit = manifest.get("band_exit_step")
        agent.band_exit_step_ = None if raw_exit is None else int(raw_exit)
        agent.metrics_ = []
        return agent
