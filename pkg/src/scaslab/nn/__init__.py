from .mlp import (
    EnsembleParams,
    MlpParams,
    MlpSpec,
    backward,
    ensemble_backward,
    ensemble_forward,
    ensemble_forward_tape,
    forward,
    forward_tape,
    grad,
    init_params,
    n_params,
)
from .optim import AdamState, adam_step, cosine_lr_multiplier, polyak_update
from .io import load_params, save_params, spec_from_dict, spec_to_dict

__all__ = [
    "MlpParams",
    "MlpSpec",
    "EnsembleParams",
    "forward",
    "forward_tape",
    "backward",
    "grad",
    "ensemble_forward",
    "ensemble_forward_tape",
    "ensemble_backward",
    "init_params",
    "n_params",
    "AdamState",
    "adam_step",
    "cosine_lr_multiplier",
    "polyak_update",
    "load_params",
    "save_params",
    "spec_from_dict",
    "spec_to_dict",
]
