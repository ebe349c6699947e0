"""AdamW with decoupled weight decay, plus a multi-step LR schedule.

State (first/second moments, step counter) is keyed by parameter name so
it can be checkpointed alongside the parameters and restored bit-exactly.
Updates iterate parameters in sorted-name order for determinism.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(self, params: dict[str, Tensor], lr: float,
                 weight_decay: float = 1e-2,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def step(self) -> None:
        """Apply one update from the accumulated gradients (missing or None
        gradients are treated as zero), then clear them."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - self.lr * (update + self.weight_decay * p.data)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_tensors(self) -> dict[str, Tensor]:
        """Optimizer moments as named tensors for checkpointing."""
        out = {}
        for name in self.params:
            out[f"opt.m.{name}"] = Tensor(self.m[name])
            out[f"opt.v.{name}"] = Tensor(self.v[name])
        return out

    def load_state_tensors(self, tensors: dict[str, Tensor]) -> None:
        for name in self.params:
            self.m[name] = tensors[f"opt.m.{name}"].data.copy()
            self.v[name] = tensors[f"opt.v.{name}"].data.copy()


class MultiStepLR:
    """Halve (or scale by ``factor``) the base LR at each milestone
    iteration; ``lr_at(i)`` is pure so schedules replay exactly."""

    def __init__(self, base_lr: float, milestones: list[int],
                 factor: float = 0.5):
        self.base_lr = base_lr
        self.milestones = sorted(milestones)
        self.factor = factor

    def lr_at(self, iteration: int) -> float:
        drops = sum(1 for m in self.milestones if iteration >= m)
        return self.base_lr * (self.factor ** drops)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most ``max_norm``;
    returns the pre-clip norm. No-op when max_norm <= 0."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
