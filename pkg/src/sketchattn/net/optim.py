"""Model state, bias-corrected Adam, and deterministic checkpoint files.

Checkpoints are a single JSON document with base64-encoded little-endian
float64 tensor payloads. The format is deliberately timestamp-free so two
runs from the same seed write byte-identical files.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatchError, VersionMismatchError
from .autodiff import Tensor

CHECKPOINT_FORMAT = "sketchattn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelState:
    """Learnable parameters plus Adam moment buffers and the step counter."""

    params: dict[str, Tensor]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
            if name not in self.v:
                self.v[name] = np.zeros_like(p.data)

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Current gradients; parameters untouched by the tape give zeros."""
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.params.items()
        }


def adam_step(
    state: ModelState,
    gradients: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_opt: float = 1e-8,
) -> ModelState:
    """Standard bias-corrected Adam update; increments the step counter."""
    t = state.step + 1
    for name, p in state.params.items():
        g = np.asarray(gradients[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeMismatchError(f"gradient shape {g.shape} != parameter {name} shape {p.data.shape}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps_opt)
    state.step = t
    return state


def _encode(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(rec: dict) -> np.ndarray:
    raw = base64.b64decode(rec["data"])
    return np.frombuffer(raw, dtype=rec["dtype"]).reshape(rec["shape"]).astype(np.float64)


def save_checkpoint(state: ModelState, path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": state.seed,
        "step": state.step,
        "config": state.config,
        "params": {name: _encode(p.data) for name, p in state.params.items()},
        "adam_m": {name: _encode(a) for name, a in state.m.items()},
        "adam_v": {name: _encode(a) for name, a in state.v.items()},
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True)


def load_checkpoint(path) -> ModelState:
    with open(path) as f:
        payload = json.load(f)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise VersionMismatchError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"unsupported checkpoint version {payload.get('version')}")
    params = {name: Tensor(_decode(rec), requires_grad=True) for name, rec in payload["params"].items()}
    m = {name: _decode(rec) for name, rec in payload["adam_m"].items()}
    v = {name: _decode(rec) for name, rec in payload["adam_v"].items()}
    return ModelState(params=params, m=m, v=v, step=int(payload["step"]), seed=int(payload["seed"]), config=payload.get("config", {}))
