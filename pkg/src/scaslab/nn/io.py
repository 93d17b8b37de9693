"""Parameter checkpoint files.

Layout: one UTF-8 JSON header line terminated by ``\\n``, then the raw
little-endian float64 parameter vector. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .mlp import MlpParams, MlpSpec, n_params

__all__ = ["save_params", "load_params", "spec_to_dict", "spec_from_dict"]


def spec_to_dict(spec: MlpSpec) -> dict[str, Any]:
    d: dict[str, Any] = {
        "layer_widths": list(spec.layer_widths),
        "output_activation": spec.output_activation,
    }
    if spec.output_scale is not None:
        d["output_scale"] = list(spec.output_scale)
    return d


def spec_from_dict(d: dict[str, Any]) -> MlpSpec:
    scale = d.get("output_scale")
    return MlpSpec(
        layer_widths=tuple(int(w) for w in d["layer_widths"]),
        output_activation=d["output_activation"],
        output_scale=tuple(float(s) for s in scale) if scale is not None else None,
    )


def save_params(
    path: str | Path,
    spec: MlpSpec,
    params: MlpParams,
    seed: Optional[int] = None,
    step: Optional[int] = None,
    extra: Optional[dict[str, Any]] = None,
) -> None:
    header = {"spec": spec_to_dict(spec), "seed": seed, "step": step}
    if extra:
        overlap = set(extra) & set(header)
        if overlap:
            raise ValueError(f"extra header keys collide with reserved ones: {sorted(overlap)}")
        header.update(extra)
    blob = json.dumps(header).encode("utf-8")
    if b"\n" in blob:
        raise ValueError("header must serialize to a single line")
    data = np.ascontiguousarray(params.flat, dtype="<f8")
    with open(path, "wb") as f:
        f.write(blob)
        f.write(b"\n")
        f.write(data.tobytes())


def load_params(path: str | Path) -> tuple[dict[str, Any], MlpSpec, MlpParams]:
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode("utf-8"))
    spec = spec_from_dict(header["spec"])
    flat = np.frombuffer(raw[newline + 1 :], dtype="<f8").astype(np.float64)
    if flat.size != n_params(spec):
        raise ValueError(
            f"{path}: payload holds {flat.size} floats, spec needs {n_params(spec)}"
        )
    return header, spec, MlpParams(flat, spec)
