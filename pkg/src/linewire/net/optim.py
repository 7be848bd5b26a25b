"""First-order optimization with adaptive moments and gradient clipping."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam over a model's named parameters, updating arrays in place.

    Gradients are clipped to a global norm before the moment updates.
    """

    def __init__(self, params: list[tuple[str, np.ndarray]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float = 5.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {name: np.zeros_like(p) for name, p in self.params}
        self.v = {name: np.zeros_like(p) for name, p in self.params}

    def step(self, grads: dict[str, np.ndarray]) -> float:
        """One update; returns the pre-clip global gradient norm."""
        sq = 0.0
        for name, _ in self.params:
            g = grads[name]
            sq += float((g * g).sum())
        norm = float(np.sqrt(sq))
        scale = 1.0
        if self.clip_norm > 0 and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in self.params:
            g = grads[name] * scale
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
        return norm

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {"step": np.array(float(self.step_count))}
        for name, _ in self.params:
            out[f"m.{name}"] = self.m[name].copy()
            out[f"v.{name}"] = self.v[name].copy()
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        self.step_count = int(tensors["step"])
        for name, _ in self.params:
            self.m[name][...] = tensors[f"m.{name}"]
            self.v[name][...] = tensors[f"v.{name}"]
