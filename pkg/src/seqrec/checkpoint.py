"""Self-describing checkpoint files.

Layout: a plain-text preamble (format tag, a JSON header with the model
configuration, one manifest line per parameter giving name, shape, and
byte offset) terminated by a ``payload`` line, followed by the raw
parameter values as little-endian 64-bit floats in manifest order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Parameter

_MAGIC = "seqrec-checkpoint v1"
CHECKPOINT_NAME = "model.ckpt"


def save_checkpoint(path, params: list[Parameter], header: dict) -> Path:
    """Write parameters and header; returns the checkpoint file path.

    ``path`` may be a directory (the standard ``model.ckpt`` is created
    inside) or an explicit file path.
    """
    path = Path(path)
    if path.is_dir() or not path.suffix:
        path.mkdir(parents=True, exist_ok=True)
        path = path / CHECKPOINT_NAME

    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ValueError("duplicate parameter names")

    lines = [_MAGIC, "header " + json.dumps(header, sort_keys=True)]
    blobs = []
    offset = 0
    for p in params:
        blob = np.ascontiguousarray(p.value.data, dtype="<f8").tobytes()
        shape = ",".join(str(d) for d in p.shape)
        lines.append(f"param {p.name} {shape} {offset}")
        blobs.append(blob)
        offset += len(blob)
    lines.append(f"payload {offset}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (header, {name: float64 array})."""
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_NAME
    raw = path.read_bytes()

    # the preamble is everything up to and including the payload line
    cursor = 0
    lines = []
    while True:
        nl = raw.index(b"\n", cursor)
        line = raw[cursor:nl].decode("utf-8")
        cursor = nl + 1
        lines.append(line)
        if line.startswith("payload "):
            break
    if not lines or lines[0] != _MAGIC:
        raise ValueError("not a seqrec checkpoint")
    payload = raw[cursor:]
    declared = int(lines[-1].split()[1])
    if len(payload) != declared:
        raise ValueError(f"payload size mismatch: {len(payload)} != {declared}")

    header = {}
    state: dict[str, np.ndarray] = {}
    for line in lines[1:-1]:
        kind, rest = line.split(" ", 1)
        if kind == "header":
            header = json.loads(rest)
        elif kind == "param":
            name, shape_s, offset_s = rest.rsplit(" ", 2)
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            offset = int(offset_s)
            arr = np.frombuffer(payload, dtype="<f8", count=count,
                                offset=offset).reshape(shape)
            state[name] = arr.astype(np.float64)
        else:
            raise ValueError(f"unknown manifest line {line!r}")
    return header, state
