"""Trainable propagation module: temporal mask fusion plus memory affinity.

Two stages turn the memory bank into a dense prompt embedding for the
decoder. The fusion stage cross-attends from the current frame's image
tokens (queries) to memory image tokens (keys), reading out memory mask
tokens (values), which yields a mask embedding infused with temporal
context. The affinity stage then matches (current image, fused mask)
tokens against (memory image, memory mask) token pairs through learned
128-d heads and concatenates the affinity readout with a query passthrough
before projecting back to the embedding width.

Both stages carry their own learnable positional table with a scalar gate,
applied as ``x + gate * table``, so training regulates how much spatial
information enters the otherwise permutation-equivariant attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .memory import MemoryBank
from .stubs import grid_to_tokens, tokens_to_grid
from .tensor import ShapeError, Tensor


@dataclass
class PropagationConfig:
    embed_dim: int = 64
    attn_dim: int = 64
    affinity_dim: int = 128
    grid: int = 4
    activation: str = "gelu"
    use_affinity: bool = True   # ablation: False routes around the affinity stage
    train_pe: bool = True       # ablation: False zeroes and freezes both PE tables
    pe_gate_init: float = 0.1
    pe_table_std: float = 0.02


class PositionalEmbedding:
    """Learnable spatial table plus a scalar gate regulating its weight."""

    def __init__(self, rng: np.random.Generator, channels: int, grid: int,
                 gate_init: float = 0.1, table_std: float = 0.02,
                 trainable: bool = True):
        if trainable:
            table = rng.normal(0.0, table_std, size=(channels, grid, grid))
            gate = gate_init
        else:
            table = np.zeros((channels, grid, grid))
            gate = 0.0
        self.table = Tensor(table, requires_grad=trainable)
        self.gate = Tensor(gate, requires_grad=trainable)

    def contribution(self) -> Tensor:
        return T.mul(self.table, self.gate)

    def add_to(self, x: Tensor) -> Tensor:
        return T.add(x, self.contribution())

    def add_to_stack(self, x: Tensor, t: int) -> Tensor:
        """Add the table to each of the t frames of a t x c x h x w stack."""
        pe = self.contribution()
        return T.add(x, T.stack([pe] * t))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.table": self.table, f"{prefix}.gate": self.gate}


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         return_weights: bool = False):
    """softmax(q k^T / sqrt(dim)) v over rows of q; standard single head."""
    dim = q.shape[-1]
    logits = T.scale(T.matmul(q, T.transpose(k, (1, 0))), 1.0 / np.sqrt(dim))
    weights = T.softmax_rows(logits)
    out = T.matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def _stack_to_tokens(x: Tensor) -> Tensor:
    """t x c x h x w -> (t*h*w) x c, frames in stored (oldest-first) order."""
    t, c, h, w = x.shape
    flat = T.reshape(x, (t, c, h * w))
    return T.reshape(T.transpose(flat, (0, 2, 1)), (t * h * w, c))


class TemporalFusion:
    """Cross-attention from current image tokens to memory, reading masks."""

    def __init__(self, cfg: PropagationConfig, rng: np.random.Generator):
        d, a = cfg.embed_dim, cfg.attn_dim
        act = cfg.activation
        self.cfg = cfg
        self.pe = PositionalEmbedding(rng, d, cfg.grid, cfg.pe_gate_init,
                                      cfg.pe_table_std, cfg.train_pe)
        self.ln_q = nn.LayerNorm(d)
        self.ln_k = nn.LayerNorm(d)
        self.ln_v = nn.LayerNorm(d)
        self.proj_q = nn.Linear(rng, d, a)
        self.proj_k = nn.Linear(rng, d, a)
        self.proj_v = nn.Linear(rng, d, a)
        self.mlp = nn.Mlp(rng, a, a, activation=act)
        self.ln_out = nn.LayerNorm(a)
        self.out_proj = nn.Linear(rng, a, d)

    def __call__(self, cur_img_emb: Tensor, mem_img_embs: Tensor,
                 mem_mask_embs: Tensor, return_internals: bool = False):
        _check_memory_shapes(cur_img_emb, mem_img_embs, mem_mask_embs)
        t = mem_img_embs.shape[0]
        d, h, w = cur_img_emb.shape

        q_tok = grid_to_tokens(self.pe.add_to(cur_img_emb))
        k_tok = _stack_to_tokens(self.pe.add_to_stack(mem_img_embs, t))
        v_tok = _stack_to_tokens(mem_mask_embs)  # values carry no PE

        q = self.proj_q(self.ln_q(q_tok))
        k = self.proj_k(self.ln_k(k_tok))
        v = self.proj_v(self.ln_v(v_tok))
        readout, weights = scaled_dot_attention(q, k, v, return_weights=True)

        o = T.add(self.mlp(readout), readout)
        o = self.ln_out(o)
        out = tokens_to_grid(self.out_proj(o), h, w)
        if return_internals:
            return out, {"q": q, "k": k, "v": v, "weights": weights,
                         "readout": readout}
        return out

    def named_params(self, prefix: str = "fusion") -> dict[str, Tensor]:
        out = self.pe.named_params(f"{prefix}.pe")
        for name in ("ln_q", "ln_k", "ln_v", "proj_q", "proj_k", "proj_v",
                     "mlp", "ln_out", "out_proj"):
            out.update(getattr(self, name).named_params(f"{prefix}.{name}"))
        return out


class MemoryAffinity:
    """Affinity readout between fused-query and memory (image, mask) pairs."""

    def __init__(self, cfg: PropagationConfig, rng: np.random.Generator):
        d, m = cfg.embed_dim, cfg.affinity_dim
        act = cfg.activation
        self.cfg = cfg
        self.pe = PositionalEmbedding(rng, 2 * d, cfg.grid, cfg.pe_gate_init,
                                      cfg.pe_table_std, cfg.train_pe)
        self.ln_q = nn.LayerNorm(2 * d)
        self.ln_k = nn.LayerNorm(2 * d)
        self.lin_qk = nn.Linear(rng, 2 * d, m)
        self.lin_qv = nn.Linear(rng, 2 * d, m)
        self.lin_mk = nn.Linear(rng, 2 * d, m)
        self.lin_mv = nn.Linear(rng, 2 * d, m)
        self.mlp_out = nn.Mlp(rng, 2 * m, d, activation=act)

    def __call__(self, cur_img_emb: Tensor, fused_mask_emb: Tensor,
                 mem_img_embs: Tensor, mem_mask_embs: Tensor,
                 return_internals: bool = False):
        if fused_mask_emb.shape != cur_img_emb.shape:
            raise ShapeError(
                f"fused mask embedding {fused_mask_emb.shape} != current "
                f"image embedding {cur_img_emb.shape}")
        _check_memory_shapes(cur_img_emb, mem_img_embs, mem_mask_embs)
        t = mem_img_embs.shape[0]
        _, h, w = cur_img_emb.shape

        q_grid = T.concat([cur_img_emb, fused_mask_emb], axis=0)
        q_tok = grid_to_tokens(self.pe.add_to(q_grid))
        k_stack = T.concat([mem_img_embs, mem_mask_embs], axis=1)
        k_tok = _stack_to_tokens(self.pe.add_to_stack(k_stack, t))

        q = self.ln_q(q_tok)
        k = self.ln_k(k_tok)
        q_k, q_v = self.lin_qk(q), self.lin_qv(q)
        m_k, m_v = self.lin_mk(k), self.lin_mv(k)
        readout, weights = scaled_dot_attention(q_k, m_k, m_v,
                                                return_weights=True)
        v_cat = T.concat([q_v, readout], axis=1)
        dense = tokens_to_grid(self.mlp_out(v_cat), h, w)
        if return_internals:
            return dense, {"weights": weights, "readout": readout}
        return dense

    def named_params(self, prefix: str = "affinity") -> dict[str, Tensor]:
        out = self.pe.named_params(f"{prefix}.pe")
        for name in ("ln_q", "ln_k", "lin_qk", "lin_qv", "lin_mk", "lin_mv",
                     "mlp_out"):
            out.update(getattr(self, name).named_params(f"{prefix}.{name}"))
        return out


class FusionOnlyHead:
    """Ablation head: dense embedding straight from the fused tokens,
    skipping the affinity readout."""

    def __init__(self, cfg: PropagationConfig, rng: np.random.Generator):
        d = cfg.embed_dim
        self.mlp = nn.Mlp(rng, 2 * d, d, activation=cfg.activation)

    def __call__(self, cur_img_emb: Tensor, fused_mask_emb: Tensor) -> Tensor:
        _, h, w = cur_img_emb.shape
        cat = T.concat([cur_img_emb, fused_mask_emb], axis=0)
        return tokens_to_grid(self.mlp(grid_to_tokens(cat)), h, w)

    def named_params(self, prefix: str = "fusion_head") -> dict[str, Tensor]:
        return self.mlp.named_params(f"{prefix}.mlp")


class PropagationModule:
    """Fusion + affinity, producing the decoder's dense prompt embedding."""

    def __init__(self, cfg: PropagationConfig, seed: int):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.cfg = cfg
        self.fusion = TemporalFusion(cfg, rng)
        if cfg.use_affinity:
            self.affinity: MemoryAffinity | None = MemoryAffinity(cfg, rng)
            self.fusion_head = None
        else:
            self.affinity = None
            self.fusion_head = FusionOnlyHead(cfg, rng)

    def forward_parts(self, cur_img_emb: Tensor, mem_img_embs: Tensor,
                      mem_mask_embs: Tensor) -> tuple[Tensor, Tensor]:
        fused = self.fusion(cur_img_emb, mem_img_embs, mem_mask_embs)
        if self.affinity is not None:
            dense = self.affinity(cur_img_emb, fused, mem_img_embs, mem_mask_embs)
        else:
            dense = self.fusion_head(cur_img_emb, fused)
        return fused, dense

    def __call__(self, cur_img_emb: Tensor, bank: MemoryBank) -> Tensor:
        mem_img, mem_mask = bank.gather()
        return self.forward_parts(cur_img_emb, mem_img, mem_mask)[1]

    def named_params(self, prefix: str = "prop") -> dict[str, Tensor]:
        out = self.fusion.named_params(f"{prefix}.fusion")
        if self.affinity is not None:
            out.update(self.affinity.named_params(f"{prefix}.affinity"))
        else:
            out.update(self.fusion_head.named_params(f"{prefix}.fusion_head"))
        return out


def _check_memory_shapes(cur: Tensor, mem_img: Tensor, mem_mask: Tensor) -> None:
    if cur.ndim != 3:
        raise ShapeError(f"current embedding must be c x h x w, got {cur.shape}")
    if mem_img.ndim != 4 or mem_img.shape[0] < 1:
        raise ShapeError(f"memory stack must be t x c x h x w with t >= 1, "
                         f"got {mem_img.shape}")
    if mem_img.shape != mem_mask.shape:
        raise ShapeError(f"memory image stack {mem_img.shape} != mask stack "
                         f"{mem_mask.shape}")
    if mem_img.shape[1:] != cur.shape:
        raise ShapeError(f"memory frames {mem_img.shape[1:]} do not match "
                         f"current embedding {cur.shape}")


def count_parameters(params: dict[str, Tensor]) -> int:
    """Exact scalar count over a named parameter dict."""
    return sum(t.size for t in params.values())
