"""AdamW with global-norm clipping and a cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import NonFiniteError, Parameter


def cosine_lr(e: float, E: float, lr_max: float = 1e-3, lr_min: float = 1e-5) -> float:
    if E <= 0:
        return lr_max
    frac = min(max(e / E, 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float):
    """Scale all gradients together so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


class AdamW:
    def __init__(self, params: list[Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0, clip_norm: float = 1.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.last_norm = 0.0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> float:
        """One update; returns the pre-clip global gradient norm."""
        lr = self.lr if lr is None else lr
        grads = []
        for i, p in enumerate(self.params):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}"
                                 f" for {p.name or i}")
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for parameter {p.name or i}")
            grads.append(g)
        grads, norm = clip_by_global_norm(grads, self.clip_norm)
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.last_norm = norm
        return norm

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_dict(self, d: dict[str, np.ndarray]) -> None:
        self.t = int(d["t"][0])
        for i in range(len(self.params)):
            if d[f"m{i}"].shape != self.m[i].shape:
                raise ValueError(f"optimizer moment {i} shape mismatch")
            self.m[i] = d[f"m{i}"].copy()
            self.v[i] = d[f"v{i}"].copy()
