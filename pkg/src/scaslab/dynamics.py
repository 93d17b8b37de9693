"""One-step deterministic dynamics model trained on offline transitions.

The model maps (normalized state, action) to the normalized next state
directly (no delta trick) and exposes exact input gradients, which the
policy regularizer differentiates through. float32 is the training
default for speed; pass dtype="float64" when gradient-precision tests
need it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import nn
from .envs import ContinuousDataset

__all__ = ["DynamicsModel", "train_dynamics"]


class DynamicsModel(BaseEstimator):
    """MLP regressor for s' = M(s, a) in normalized state space.

    Parameters mirror the training defaults: Adam at lr 1e-3, batch 256,
    1e5 gradient steps (a desk-scale stand-in for the full 5e5), four
    hidden layers.
    """

    def __init__(
        self,
        hidden_width: int = 64,
        n_hidden_layers: int = 4,
        lr: float = 1e-3,
        batch_size: int = 256,
        gradient_steps: int = 100_000,
        checkpoint_steps: tuple[int, ...] = (),
        dtype: str = "float32",
        random_state: int = 0,
    ):
        self.hidden_width = hidden_width
        self.n_hidden_layers = n_hidden_layers
        self.lr = lr
        self.batch_size = batch_size
        self.gradient_steps = gradient_steps
        self.checkpoint_steps = checkpoint_steps
        self.dtype = dtype
        self.random_state = random_state

    def _np_dtype(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be 'float32' or 'float64', got {self.dtype!r}")
        return np.float32 if self.dtype == "float32" else np.float64

    def fit(self, data: ContinuousDataset) -> "DynamicsModel":
        """Minimize mean squared next-state error over minibatches."""
        if len(data) == 0:
            raise ValueError("dataset must be nonempty")
        for step in self.checkpoint_steps:
            if not 0 <= step <= self.gradient_steps:
                raise ValueError(f"checkpoint step {step} outside [0, {self.gradient_steps}]")
        dtype = self._np_dtype()
        sdim, adim = data.state_dim, data.action_dim
        widths = (sdim + adim, *([self.hidden_width] * self.n_hidden_layers), sdim)
        spec = nn.MlpSpec(widths)
        rng = np.random.default_rng(np.random.SeedSequence(self.random_state))
        params = nn.init_params(spec, rng, dtype=dtype)
        opt = nn.AdamState.for_params(params, lr=self.lr)

        x_all = np.concatenate([data.normalize(data.states), data.actions], axis=1).astype(dtype)
        y_all = data.normalize(data.next_states).astype(dtype)
        n = len(data)

        snapshots: dict[int, nn.MlpParams] = {}
        loss_history: list[tuple[int, float]] = []

        def full_loss() -> float:
            total = 0.0
            for lo in range(0, n, 4096):
                pred = nn.forward(spec, params, x_all[lo : lo + 4096])
                diff = pred - y_all[lo : lo + 4096]
                total += float(np.sum(diff * diff))
            return total / n

        want = set(int(s) for s in self.checkpoint_steps)
        for step in range(self.gradient_steps + 1):
            if step in want:
                snapshots[step] = params.copy(spec)
            if step % 10_000 == 0:
                loss_history.append((step, full_loss()))
            if step == self.gradient_steps:
                break
            idx = rng.integers(0, n, size=self.batch_size)
            x, y = x_all[idx], y_all[idx]
            pred, tape = nn.forward_tape(spec, params, x)
            upstream = (2.0 / self.batch_size) * (pred - y)
            pgrad, _ = nn.backward(spec, params, tape, upstream)
            # cosine decay to zero: constant-rate Adam leaves parameter
            # jitter on the order of lr, which stalls the loss well above
            # its floor on small datasets
            nn.adam_step(opt, params, pgrad, lr_multiplier=nn.cosine_lr_multiplier(step, self.gradient_steps))
        if loss_history[-1][0] != self.gradient_steps:
            loss_history.append((self.gradient_steps, full_loss()))

        self.spec_ = spec
        self.params_ = params
        self.trained_steps_ = self.gradient_steps
        self.state_mean_ = data.state_mean.copy()
        self.state_std_ = data.state_std.copy()
        self.loss_history_ = loss_history
        self.checkpoints_ = [(s, snapshots[s]) for s in sorted(want)]
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError("this DynamicsModel is not fitted yet; call fit first")

    def predict(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Normalized next state for normalized s; deterministic."""
        self._require_fitted()
        s = np.asarray(s)
        a = np.asarray(a)
        if s.shape[-1:] != self.state_mean_.shape or a.ndim != s.ndim:
            raise ValueError(f"bad input shapes {s.shape} / {a.shape}")
        x = np.concatenate([s, a], axis=-1)
        return nn.forward(self.spec_, self.params_, x)

    def with_params(self, params: nn.MlpParams, trained_steps: int) -> "DynamicsModel":
        """Clone carrying a parameter snapshot (checkpoint materialization)."""
        self._require_fitted()
        clone = DynamicsModel(**self.get_params())
        clone.spec_ = self.spec_
        clone.params_ = params
        clone.trained_steps_ = trained_steps
        clone.state_mean_ = self.state_mean_
        clone.state_std_ = self.state_std_
        clone.loss_history_ = []
        clone.checkpoints_ = []
        return clone

    def save(self, path: str | Path) -> None:
        self._require_fitted()
        nn.save_params(
            path,
            self.spec_,
            self.params_,
            seed=self.random_state,
            step=self.trained_steps_,
            extra={
                "trained_steps": self.trained_steps_,
                "state_mean": self.state_mean_.tolist(),
                "state_std": self.state_std_.tolist(),
                "hyperparams": self.get_params(),
            },
        )

    @classmethod
    def load(cls, path: str | Path, dtype: Optional[str] = None) -> "DynamicsModel":
        header, spec, params = nn.load_params(path)
        hp = dict(header["hyperparams"])
        hp["checkpoint_steps"] = tuple(hp.get("checkpoint_steps", ()))
        if dtype is not None:
            hp["dtype"] = dtype
        model = cls(**hp)
        model.spec_ = spec
        model.params_ = nn.MlpParams(params.flat.astype(model._np_dtype()), spec)
        model.trained_steps_ = int(header["trained_steps"])
        model.state_mean_ = np.asarray(header["state_mean"], dtype=np.float64)
        model.state_std_ = np.asarray(header["state_std"], dtype=np.float64)
        model.loss_history_ = []
        model.checkpoints_ = []
        return model


def train_dynamics(
    data: ContinuousDataset,
    checkpoints: Sequence[int] = (),
    rng_seed: int = 0,
    **config,
) -> list[DynamicsModel]:
    """Single training run emitting one model per requested checkpoint.

    The final state is always included (as the last list entry) whether or
    not gradient_steps appears in `checkpoints`.
    """
    base = DynamicsModel(checkpoint_steps=tuple(checkpoints), random_state=rng_seed, **config)
    base.fit(data)
    models = [base.with_params(params, step) for step, params in base.checkpoints_]
    if not models or models[-1].trained_steps_ != base.gradient_steps:
        models.append(base)
    else:
        models[-1] = base
    return models
