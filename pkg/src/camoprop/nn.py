"""Small trainable building blocks on top of the tensor ops.

Layers are plain objects holding named parameter tensors; ``named_params``
gives a flat name->Tensor view so checkpoints and optimizers can treat the
whole model as one dict. Initialization is driven by an explicit
``numpy.random.Generator`` so any model is reproducible from its seed.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu}


class Linear:
    def __init__(self, rng: np.random.Generator, din: int, dout: int,
                 std: float | None = None):
        if std is None:
            std = 1.0 / np.sqrt(din)
        self.w = Tensor(rng.normal(0.0, std, size=(din, dout)), requires_grad=True)
        self.b = Tensor(np.zeros(dout), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class Mlp:
    """One-hidden-layer MLP; hidden width defaults to 2x the input."""

    def __init__(self, rng: np.random.Generator, din: int, dout: int,
                 hidden: int | None = None, activation: str = "gelu"):
        hidden = 2 * din if hidden is None else hidden
        self.fc1 = Linear(rng, din, hidden)
        self.fc2 = Linear(rng, hidden, dout)
        self.act = ACTIVATIONS[activation]

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(x)))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = self.fc1.named_params(f"{prefix}.fc1")
        out.update(self.fc2.named_params(f"{prefix}.fc2"))
        return out


class MixerBlock:
    """Token-mixing then channel-mixing MLP, each behind a pre-LayerNorm
    with a residual connection. ``tokens`` is fixed at construction, so the
    block is tied to one grid size."""

    def __init__(self, rng: np.random.Generator, tokens: int, dim: int,
                 activation: str = "gelu"):
        self.ln_tok = LayerNorm(dim)
        self.mlp_tok = Mlp(rng, tokens, tokens, activation=activation)
        self.ln_ch = LayerNorm(dim)
        self.mlp_ch = Mlp(rng, dim, dim, activation=activation)

    def __call__(self, x: Tensor) -> Tensor:
        # x: tokens x dim
        y = T.transpose(self.ln_tok(x), (1, 0))
        y = T.transpose(self.mlp_tok(y), (1, 0))
        x = T.add(x, y)
        return T.add(x, self.mlp_ch(self.ln_ch(x)))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = self.ln_tok.named_params(f"{prefix}.ln_tok")
        out.update(self.mlp_tok.named_params(f"{prefix}.mlp_tok"))
        out.update(self.ln_ch.named_params(f"{prefix}.ln_ch"))
        out.update(self.mlp_ch.named_params(f"{prefix}.mlp_ch"))
        return out


class ResidualMlpBlock:
    """Pre-LayerNorm channel MLP with residual (no token mixing)."""

    def __init__(self, rng: np.random.Generator, dim: int, activation: str = "gelu"):
        self.ln = LayerNorm(dim)
        self.mlp = Mlp(rng, dim, dim, activation=activation)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(x, self.mlp(self.ln(x)))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = self.ln.named_params(f"{prefix}.ln")
        out.update(self.mlp.named_params(f"{prefix}.mlp"))
        return out


def set_frozen(params: dict[str, Tensor], frozen: bool) -> None:
    for t in params.values():
        t.requires_grad = not frozen


def count_scalars(params: dict[str, Tensor]) -> int:
    return sum(t.size for t in params.values())


def interp_matrix(src: int, dst: int) -> np.ndarray:
    """Bilinear 1-D interpolation matrix (dst x src), half-pixel centers."""
    m = np.zeros((dst, src))
    if src == 1:
        m[:, 0] = 1.0
        return m
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1.0)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    m[np.arange(dst), lo] += 1.0 - frac
    m[np.arange(dst), hi] += frac
    return m


def pool_matrix(src: int, dst: int) -> np.ndarray:
    """Strided average-pool matrix (dst x src); src must divide evenly."""
    if src % dst != 0:
        raise ValueError(f"pool {src} -> {dst} is not an integer stride")
    k = src // dst
    m = np.zeros((dst, src))
    for i in range(dst):
        m[i, i * k:(i + 1) * k] = 1.0 / k
    return m


def resample2d(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply separable row/col resampling matrices to a 2-D tensor."""
    r = Tensor(rows)
    c = Tensor(cols)
    return T.matmul(T.matmul(r, x), T.transpose(c, (1, 0)))
