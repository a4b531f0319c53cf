"""Named parameter store, Adam updates, and the on-disk checkpoint container."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import GraphError, Tensor, backward as _graph_backward

_MAGIC = b"FSQC"
_VERSION = 1


class ParamStore:
    """Named leaf tensors with stable iteration order and gradient slots."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(values, dtype=np.float64))
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def param_count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in values:
                raise KeyError(f"checkpoint is missing tensor {name!r}")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, expected {t.data.shape}"
                )
            t.data = arr


def backward(loss: Tensor, params: ParamStore) -> None:
    """Reverse-mode gradients for every registered parameter.

    Parameters the loss does not depend on receive zero gradients.
    """
    _graph_backward(loss)
    for _, t in params.items():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """Standard bias-corrected Adam update over all registered parameters."""
    for name, t in params.items():
        if t.grad is None:
            raise GraphError(f"adam_step: parameter {name!r} has no gradient")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, t in params.items():
        g = t.grad
        m = state.m.setdefault(name, np.zeros_like(t.data))
        v = state.v.setdefault(name, np.zeros_like(t.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        t.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoint container: JSON manifest + named float32 little-endian tensors


def save_checkpoint(path: str | Path, values: dict[str, np.ndarray], manifest: dict) -> None:
    """Atomic write (temp file + rename)."""
    path = Path(path)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(values)))
        for name, arr in values.items():
            data = np.asarray(arr, dtype="<f4")  # tobytes() emits C order
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (tensors as float64, manifest)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, manifest_len = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        manifest = json.loads(fh.read(manifest_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        values: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(4 * size), dtype="<f4").reshape(shape)
            values[name] = data.astype(np.float64)
    return values, manifest
