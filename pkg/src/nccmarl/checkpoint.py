"""Checkpoint files: versioned text header plus a flat float64 dump.

Layout::

    nccmarl-checkpoint v1
    module <learner kind>
    seed <int>
    step <int>
    tensor <name> <dim0> <dim1> ...
    ...
    data
    <raw little-endian float64, tensors concatenated in header order>

Tensor names map onto a learner's named parameters; loading validates
every shape and names the offending tensor on mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = "nccmarl-checkpoint v1"


class CheckpointError(ValueError):
    """Malformed checkpoint file or parameter shape mismatch."""


@dataclass
class Checkpoint:
    module: str
    seed: int
    step: int
    tensors: dict[str, np.ndarray]


def save_checkpoint(
    path, module: str, seed: int, step: int, tensors: dict[str, np.ndarray]
) -> None:
    lines = [MAGIC, f"module {module}", f"seed {seed}", f"step {step}"]
    for name, arr in tensors.items():
        if " " in name:
            raise CheckpointError(f"tensor name '{name}' must not contain spaces")
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {dims}".rstrip())
    lines.append("data")
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in tensors.values()
    )
    Path(path).write_bytes("\n".join(lines).encode("utf-8") + b"\n" + blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    marker = b"\ndata\n"
    split = raw.find(marker)
    if split < 0:
        raise CheckpointError(f"{path}: missing data section")
    header = raw[:split].decode("utf-8").splitlines()
    blob = raw[split + len(marker):]
    if not header or header[0] != MAGIC:
        raise CheckpointError(f"{path}: bad magic line (expected '{MAGIC}')")

    fields: dict[str, str] = {}
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for line in header[1:]:
        key, _, rest = line.partition(" ")
        if key == "tensor":
            parts = rest.split()
            shapes.append((parts[0], tuple(int(d) for d in parts[1:])))
        elif key in ("module", "seed", "step"):
            fields[key] = rest
        else:
            raise CheckpointError(f"{path}: unknown header line '{line}'")
    for required in ("module", "seed", "step"):
        if required not in fields:
            raise CheckpointError(f"{path}: header missing '{required}'")

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: data section truncated at tensor '{name}'")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(
            shape
        ).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes in data section")
    return Checkpoint(
        module=fields["module"], seed=int(fields["seed"]), step=int(fields["step"]),
        tensors=tensors,
    )


def restore_into(named_params: dict[str, "np.ndarray"], tensors: dict[str, np.ndarray]) -> None:
    """Copy checkpoint tensors into live parameter arrays, validating shapes."""
    missing = set(named_params) - set(tensors)
    extra = set(tensors) - set(named_params)
    if missing or extra:
        raise CheckpointError(
            f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}"
        )
    for name, target in named_params.items():
        src = tensors[name]
        if src.shape != target.shape:
            raise CheckpointError(
                f"tensor '{name}': checkpoint shape {src.shape} != expected {target.shape}"
            )
        target[...] = src
