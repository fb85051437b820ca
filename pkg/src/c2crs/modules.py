"""Transformer building blocks and the self-attentive pooling layer.

Everything is written against (batch, seq, dim) tensors with boolean masks
where True marks a real (non-pad) position. Layers use the pre-norm
residual arrangement, so a sub-layer that outputs zeros leaves its input
unchanged.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

NEG_INF = float("-inf")


def sinusoidal_positions(n_positions: int, d_model: int,
                         dtype=torch.float32) -> torch.Tensor:
    position = torch.arange(n_positions, dtype=dtype).unsqueeze(1)
    half = torch.arange(0, d_model, 2, dtype=dtype)
    angles = position * torch.exp(-math.log(10000.0) * half / d_model)
    pe = torch.zeros(n_positions, d_model, dtype=dtype)
    pe[:, 0::2] = torch.sin(angles)
    pe[:, 1::2] = torch.cos(angles[:, : d_model // 2])
    return pe


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, query: torch.Tensor, key: torch.Tensor, value: torch.Tensor,
                key_mask: torch.Tensor | None = None,
                attn_mask: torch.Tensor | None = None) -> torch.Tensor:
        """query (B, Tq, D); key/value (B, Tk, D); key_mask (B, Tk) True=valid;
        attn_mask (Tq, Tk) True=allowed."""
        bsz, tq, _ = query.shape
        tk = key.shape[1]

        def split(x, proj):
            return proj(x).view(bsz, -1, self.n_heads, self.head_dim).transpose(1, 2)

        q = split(query, self.q_proj)
        k = split(key, self.k_proj)
        v = split(value, self.v_proj)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask.view(bsz, 1, 1, tk), NEG_INF)
        if attn_mask is not None:
            scores = scores.masked_fill(~attn_mask.view(1, 1, tq, tk), NEG_INF)
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bsz, tq, -1)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_width: int):
        super().__init__()
        self.lin1 = nn.Linear(d_model, ffn_width)
        self.lin2 = nn.Linear(ffn_width, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(F.relu(self.lin1(x)))


class TransformerEncoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int, ffn_width: int, dropout: float = 0.0):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads)
        self.ffn = FeedForward(d_model, ffn_width)
        self.norm_attn = nn.LayerNorm(d_model)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        h = self.norm_attn(x)
        x = x + self.dropout(self.self_attn(h, h, h, key_mask=mask))
        x = x + self.dropout(self.ffn(self.norm_ffn(x)))
        return x


class CrossAttentionBlock(nn.Module):
    """One pre-norm residual cross-attention sub-layer."""

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, n_heads)
        self.norm = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, memory: torch.Tensor,
                memory_mask: torch.Tensor | None) -> torch.Tensor:
        return x + self.dropout(self.attn(self.norm(x), memory, memory,
                                          key_mask=memory_mask))


class SelfAttentivePool(nn.Module):
    """Softmax-weighted combination of sequence positions.

    weights = softmax(b^T tanh(W_sa h)); the output is the weighted sum,
    a convex combination of the input positions.
    """

    def __init__(self, d_model: int):
        super().__init__()
        self.att = nn.Linear(d_model, d_model, bias=False)
        self.vec = nn.Parameter(torch.empty(d_model))
        nn.init.normal_(self.vec, std=d_model ** -0.5)

    def forward(self, h: torch.Tensor, mask: torch.Tensor | None = None,
                return_weights: bool = False):
        """h (B, L, D); mask (B, L) True=valid. Returns (B, D)."""
        scores = torch.tanh(self.att(h)) @ self.vec
        if mask is not None:
            scores = scores.masked_fill(~mask, NEG_INF)
        weights = torch.softmax(scores, dim=-1)
        pooled = torch.einsum("bl,bld->bd", weights, h)
        if return_weights:
            return pooled, weights
        return pooled


def causal_mask(length: int, device=None) -> torch.Tensor:
    return torch.ones(length, length, dtype=torch.bool,
                      device=device).tril()
