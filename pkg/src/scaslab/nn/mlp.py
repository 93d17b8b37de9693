"""Minimal feedforward networks with analytic reverse-mode gradients.

Networks are ReLU MLPs with an identity or scaled-tanh output head. All
parameters live in one flat vector (float64 by default); per-layer
weight/bias arrays are views into it, so optimizer updates on the flat
vector are visible to the forward pass with no copying.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

__all__ = [
    "MlpSpec",
    "MlpParams",
    "EnsembleParams",
    "init_params",
    "n_params",
    "forward",
    "forward_tape",
    "backward",
    "grad",
    "ensemble_forward",
    "ensemble_forward_tape",
    "ensemble_backward",
]


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: layer widths input -> hidden... -> output.

    Hidden activations are always ReLU. The output head is either the raw
    affine map ("identity") or ``scale * tanh(z)`` ("tanh_scaled"), which
    bounds each output coordinate to (-scale_i, scale_i).
    """

    layer_widths: tuple[int, ...]
    output_activation: Literal["identity", "tanh_scaled"] = "identity"
    output_scale: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(w <= 0 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive: {self.layer_widths}")
        if self.output_activation == "tanh_scaled":
            if self.output_scale is None:
                raise ValueError("tanh_scaled output requires output_scale")
            if len(self.output_scale) != self.layer_widths[-1]:
                raise ValueError("output_scale length must match output width")
            if any(s <= 0 for s in self.output_scale):
                raise ValueError("output_scale must be strictly positive")
        elif self.output_scale is not None:
            raise ValueError("output_scale only valid with tanh_scaled")

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def scale_array(self) -> Optional[np.ndarray]:
        if self.output_scale is None:
            return None
        return np.asarray(self.output_scale, dtype=np.float64)


def n_params(spec: MlpSpec) -> int:
    widths = spec.layer_widths
    return sum((widths[i] + 1) * widths[i + 1] for i in range(len(widths) - 1))


class MlpParams:
    """Flat parameter vector plus per-layer (W, b) views into it.

    float64 by default; float32 is accepted for speed-critical training
    loops (checkpoints are always written as float64).
    """

    __slots__ = ("flat", "weights", "biases")

    def __init__(self, flat: np.ndarray, spec: MlpSpec):
        flat = np.asarray(flat)
        if flat.dtype not in (np.float64, np.float32):
            flat = flat.astype(np.float64)
        if flat.ndim != 1 or flat.size != n_params(spec):
            raise ValueError(
                f"flat vector has size {flat.size}, spec needs {n_params(spec)}"
            )
        if not np.all(np.isfinite(flat)):
            raise ValueError("parameters must be finite")
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        widths = spec.layer_widths
        offset = 0
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.weights.append(flat[offset : offset + fan_in * fan_out].reshape(fan_out, fan_in))
            offset += fan_in * fan_out
            self.biases.append(flat[offset : offset + fan_out])
            offset += fan_out

    def copy(self, spec: MlpSpec) -> "MlpParams":
        return MlpParams(self.flat.copy(), spec)


def init_params(
    spec: MlpSpec,
    rng: np.random.Generator,
    final_layer_scale: float = 1.0,
    dtype: type = np.float64,
) -> MlpParams:
    """Uniform init in +-1/sqrt(fan_in) per layer.

    ``final_layer_scale`` multiplies the last layer's weights and biases
    (0.01 for actors keeps initial outputs near zero). The draw itself is
    always float64 so the same seed yields the same network in either
    precision.
    """
    widths = spec.layer_widths
    chunks = []
    n_layers = len(widths) - 1
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        layer = rng.uniform(-bound, bound, size=(fan_in + 1) * fan_out)
        if i == n_layers - 1:
            layer *= final_layer_scale
        chunks.append(layer)
    return MlpParams(np.concatenate(chunks).astype(dtype, copy=False), spec)


class EnsembleParams:
    """n member networks of one spec in a single flat vector.

    Layout is the n members' flat vectors concatenated, so a member's
    parameters are also reachable through an ordinary MlpParams view on the
    corresponding slice. weights[l] is an (n, fan_out, fan_in) view and
    biases[l] an (n, fan_out) view into the same memory; elementwise
    optimizer steps on the flat vector are therefore equivalent to stepping
    each member separately.
    """

    __slots__ = ("flat", "n_members", "weights", "biases")

    def __init__(self, flat: np.ndarray, spec: MlpSpec, n_members: int):
        flat = np.asarray(flat)
        per = n_params(spec)
        if n_members < 1:
            raise ValueError("need at least one ensemble member")
        if flat.ndim != 1 or flat.size != n_members * per:
            raise ValueError(
                f"flat vector has size {flat.size}, spec needs {n_members} x {per}"
            )
        self.flat = flat
        self.n_members = n_members
        two_d = flat.reshape(n_members, per)
        widths = spec.layer_widths
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        offset = 0
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.weights.append(
                two_d[:, offset : offset + fan_in * fan_out].reshape(n_members, fan_out, fan_in)
            )
            offset += fan_in * fan_out
            self.biases.append(two_d[:, offset : offset + fan_out])
            offset += fan_out


def ensemble_forward(spec: MlpSpec, ens: EnsembleParams, x: np.ndarray) -> np.ndarray:
    """All members on one shared input batch: (b, in) -> (n, b, out)."""
    out = _ensemble_cached(spec, ens, x)[0]
    return out


def _ensemble_cached(spec: MlpSpec, ens: EnsembleParams, x: np.ndarray):
    """Batched-over-members forward pass; mirrors _forward_cached.

    The shared input batch is stored once (2-D); hidden activations are
    per-member (n, b, width) arrays. One np.matmul per layer replaces the
    n separate 2-D products, which is what makes ensemble training cheap.
    """
    n_layers = len(ens.weights)
    inputs: list[np.ndarray] = [x]
    h: np.ndarray = x
    for l in range(n_layers - 1):
        if l == 0:
            z = np.matmul(h[None, :, :], ens.weights[0].transpose(0, 2, 1))
        else:
            z = np.matmul(h, ens.weights[l].transpose(0, 2, 1))
        z += ens.biases[l][:, None, :]
        np.maximum(z, 0.0, out=z)
        h = z
        inputs.append(h)
    if n_layers == 1:
        z = np.matmul(h[None, :, :], ens.weights[-1].transpose(0, 2, 1))
    else:
        z = np.matmul(h, ens.weights[-1].transpose(0, 2, 1))
    z += ens.biases[-1][:, None, :]
    if spec.output_activation == "tanh_scaled":
        t = np.tanh(z)
        out = t * spec.scale_array().astype(z.dtype, copy=False)
    else:
        t = None
        out = z
    return out, inputs, t


def ensemble_forward_tape(spec: MlpSpec, ens: EnsembleParams, x: np.ndarray):
    """Batched forward pass returning (output, tape) for ensemble_backward."""
    out, inputs, t = _ensemble_cached(spec, ens, x)
    return out, (inputs, t)


def ensemble_backward(
    spec: MlpSpec,
    ens: EnsembleParams,
    tape,
    upstream: np.ndarray,
    out: Optional[np.ndarray] = None,
    input_only: bool = False,
) -> tuple[Optional[np.ndarray], np.ndarray]:
    """Per-member VJPs for the objective sum_{m,b} <upstream_mb, f_m(x_b)>.

    upstream has shape (n, b, out_width). Returns the flat parameter
    gradient (members concatenated, None with input_only) and the
    per-member per-sample input gradient of shape (n, b, in_width).
    """
    inputs, t = tape
    grads: Optional[EnsembleParams] = None
    if not input_only:
        if out is None:
            out = np.empty_like(ens.flat)
        grads = EnsembleParams(out, spec, ens.n_members)

    if spec.output_activation == "tanh_scaled":
        scale = spec.scale_array().astype(t.dtype, copy=False)
        delta = upstream * (scale * (1.0 - t * t))
    else:
        delta = upstream
    for l in range(len(ens.weights) - 1, -1, -1):
        if not input_only:
            if l == 0:
                np.matmul(delta.transpose(0, 2, 1), inputs[0][None, :, :],
                          out=grads.weights[0])
            else:
                np.matmul(delta.transpose(0, 2, 1), inputs[l], out=grads.weights[l])
            np.add.reduce(delta, axis=1, out=grads.biases[l])
        back = np.matmul(delta, ens.weights[l])
        if l > 0:
            back *= inputs[l] > 0.0
            delta = back
        else:
            input_grad = back
    return (None if input_only else out), input_grad


def _check_input(spec: MlpSpec, x: np.ndarray, dtype) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.in_width:
        raise ValueError(f"input has shape {x.shape}, expected (*, {spec.in_width})")
    return x, single


def forward(spec: MlpSpec, params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Deterministic feedforward evaluation; accepts a vector or a batch."""
    x, single = _check_input(spec, x, params.flat.dtype)
    out = _forward_cached(spec, params, x)[0]
    return out[0] if single else out


def _forward_cached(spec: MlpSpec, params: MlpParams, x: np.ndarray):
    """Batched forward pass keeping layer inputs and activation state.

    Hidden activations are stored post-ReLU; the backward pass recovers the
    ReLU mask from them (h > 0 iff z > 0), so no mask arrays are kept.
    """
    n_layers = len(params.weights)
    inputs = [x]
    h = x
    for l in range(n_layers - 1):
        z = h @ params.weights[l].T
        z += params.biases[l]
        np.maximum(z, 0.0, out=z)
        h = z
        inputs.append(h)
    z = h @ params.weights[-1].T
    z += params.biases[-1]
    if spec.output_activation == "tanh_scaled":
        t = np.tanh(z)
        out = t * spec.scale_array().astype(z.dtype, copy=False)
    else:
        t = None
        out = z
    return out, inputs, t


def _backward(
    spec: MlpSpec,
    params: MlpParams,
    inputs: list[np.ndarray],
    t: Optional[np.ndarray],
    upstream: np.ndarray,
    out: Optional[np.ndarray] = None,
    input_only: bool = False,
) -> tuple[Optional[np.ndarray], np.ndarray]:
    """Vector-Jacobian products for the batch objective sum_b <upstream_b, f(x_b)>.

    Returns (flat parameter gradient summed over the batch, per-sample input
    gradient). ``out`` optionally receives the parameter gradient in place.
    With ``input_only`` the parameter gradient is skipped entirely (returned
    as None), halving the work when only the input gradient is consumed.
    """
    pgrad = None
    if not input_only:
        if out is None:
            out = np.empty_like(params.flat)
        pgrad = MlpParams.__new__(MlpParams)
        pgrad.flat = out
        # reuse the view layout of params
        pgrad.weights = []
        pgrad.biases = []
        offset = 0
        for w, b in zip(params.weights, params.biases):
            pgrad.weights.append(out[offset : offset + w.size].reshape(w.shape))
            offset += w.size
            pgrad.biases.append(out[offset : offset + b.size])
            offset += b.size

    if spec.output_activation == "tanh_scaled":
        scale = spec.scale_array().astype(t.dtype, copy=False)
        delta = upstream * (scale * (1.0 - t * t))
    else:
        delta = upstream
    for l in range(len(params.weights) - 1, -1, -1):
        if not input_only:
            np.matmul(delta.T, inputs[l], out=pgrad.weights[l])
            np.add.reduce(delta, axis=0, out=pgrad.biases[l])
        back = delta @ params.weights[l]
        if l > 0:
            back *= inputs[l] > 0.0
            delta = back
        else:
            input_grad = back
    return (None if input_only else out), input_grad


def forward_tape(spec: MlpSpec, params: MlpParams, x: np.ndarray):
    """Batched forward pass returning (output, tape) for a later backward().

    Batch-only: x must be 2-D and already match the parameter dtype. This is
    the allocation-light path for training loops; use forward/grad elsewhere.
    """
    out, inputs, t = _forward_cached(spec, params, x)
    return out, (inputs, t)


def backward(
    spec: MlpSpec,
    params: MlpParams,
    tape,
    upstream: np.ndarray,
    out: Optional[np.ndarray] = None,
    input_only: bool = False,
) -> tuple[Optional[np.ndarray], np.ndarray]:
    """VJPs from a forward_tape cache: (summed parameter grad, per-sample input grad)."""
    inputs, t = tape
    return _backward(spec, params, inputs, t, upstream, out=out, input_only=input_only)


def grad(
    spec: MlpSpec,
    params: MlpParams,
    x: np.ndarray,
    upstream: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact reverse-mode VJPs for parameters and inputs.

    For a single sample, returns the gradients of <upstream, f(x)>. A 2-D
    input treats rows as samples and sums the parameter gradient over them
    (the input gradient stays per-sample).
    """
    x, single = _check_input(spec, x, params.flat.dtype)
    upstream = np.asarray(upstream, dtype=params.flat.dtype)
    if single:
        upstream = upstream[None, :]
    if upstream.shape != (x.shape[0], spec.out_width):
        raise ValueError(
            f"upstream has shape {upstream.shape}, expected {(x.shape[0], spec.out_width)}"
        )
    _, inputs, t = _forward_cached(spec, params, x)
    pgrad, igrad = _backward(spec, params, inputs, t, upstream)
    return (pgrad, igrad[0]) if single else (pgrad, igrad)
