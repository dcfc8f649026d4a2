"""Parameter checkpoints: a single binary document mapping name -> array.

Backed by numpy's ``.npz`` container, so float64 values round-trip
bitwise. Keys may contain dots (``encoder0.conv2.kernel``).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .tensor import Parameter


def save_params(path: str | Path, params: list[Parameter] | dict[str, np.ndarray]) -> None:
    if isinstance(params, dict):
        arrays = {name: np.asarray(a, dtype=np.float64) for name, a in params.items()}
    else:
        arrays = {p.name: p.data for p in params}
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(path) as npz:
        return {name: npz[name] for name in npz.files}


def restore_into(params: list[Parameter], values: dict[str, np.ndarray]) -> None:
    """Copy checkpoint values into existing parameters, validating shapes."""
    for p in params:
        if p.name not in values:
            raise KeyError(f"checkpoint is missing parameter {p.name!r}")
        v = values[p.name]
        if v.shape != p.shape:
            raise ValueError(
                f"checkpoint shape {v.shape} != parameter {p.name!r} shape {p.shape}"
            )
        p.data[...] = v
