"""Checkpoint files.

Layout::

    PCNCKPT1\\n
    manifest <nbytes>\\n<utf-8 key = value text>
    block <name> <d0,d1,...> <nbytes>\\n<raw little-endian float32>
    ...

The manifest carries the model configuration in a ``[model]`` section and,
for training checkpoints, optimizer/loop state in ``[state]``.
"""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import numpy as np

from .config import format_sections, from_items, parse_sections, to_items
from .model import ModelConfig, ModelParams, param_shapes
from .tensor import Tensor

MAGIC = b"PCNCKPT1\n"


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, params: ModelParams, state: dict[str, str] | None = None,
                     extra: "OrderedDict[str, np.ndarray] | None" = None) -> None:
    sections = {"model": to_items(params.config)}
    if state:
        sections["state"] = dict(state)
    manifest = format_sections(sections).encode("utf-8")
    chunks = [MAGIC, f"manifest {len(manifest)}\n".encode("ascii"), manifest]
    blocks = list(params.arrays().items()) + list((extra or {}).items())
    for name, arr in blocks:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        shape = ",".join(str(d) for d in arr.shape)
        chunks.append(f"block {name} {shape} {len(raw)}\n".encode("ascii"))
        chunks.append(raw)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def read_checkpoint(path):
    """Return ``(params, state, extra)``; ``extra`` holds blocks that are not model parameters."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a PCNCKPT1 checkpoint")
    pos = len(MAGIC)

    def header_line():
        nonlocal pos
        end = raw.find(b"\n", pos)
        if end < 0:
            raise CheckpointError(f"{path}: truncated header at byte {pos}")
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        return line.split(" ")

    parts = header_line()
    if parts[0] != "manifest" or len(parts) != 2:
        raise CheckpointError(f"{path}: expected manifest header")
    n = int(parts[1])
    sections = parse_sections(raw[pos:pos + n].decode("utf-8"), f"{path}:manifest")
    pos += n
    if "model" not in sections:
        raise CheckpointError(f"{path}: manifest lacks a [model] section")
    config = from_items(ModelConfig, sections["model"], "model")

    blocks: "OrderedDict[str, np.ndarray]" = OrderedDict()
    while pos < len(raw):
        parts = header_line()
        if parts[0] != "block" or len(parts) != 4:
            raise CheckpointError(f"{path}: malformed block header {' '.join(parts)!r}")
        name, shape_s, nbytes = parts[1], parts[2], int(parts[3])
        shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: block {name!r} is truncated")
        arr = np.frombuffer(raw[pos:pos + nbytes], dtype="<f4").astype(np.float32).reshape(shape)
        pos += nbytes
        blocks[name] = arr

    tensors = OrderedDict()
    for name in param_shapes(config):
        if name not in blocks:
            raise CheckpointError(f"{path}: missing parameter block {name!r}")
        tensors[name] = Tensor(blocks.pop(name), requires_grad=True, name=name, dtype=np.float32)
    return ModelParams(config, tensors), sections.get("state", {}), blocks
