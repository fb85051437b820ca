"""Response decoder with cross-attention over the three context memories,
the review-copy fusion head, instance-weighted generation loss, decoding,
and Distinct-n."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig
from .modules import (
    CrossAttentionBlock,
    FeedForward,
    MultiHeadAttention,
    causal_mask,
    sinusoidal_positions,
)


class DecoderLayer(nn.Module):
    """Masked self-attention, then cross-attention to the conversation
    tokens, the graph nodes and the review sentences (in that order), then
    the feed-forward; all pre-norm residual."""

    def __init__(self, d_model: int, n_heads: int, ffn_width: int, dropout: float = 0.0):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads)
        self.norm_self = nn.LayerNorm(d_model)
        self.cross_conv = CrossAttentionBlock(d_model, n_heads, dropout)
        self.cross_graph = CrossAttentionBlock(d_model, n_heads, dropout)
        self.cross_review = CrossAttentionBlock(d_model, n_heads, dropout)
        self.ffn = FeedForward(d_model, ffn_width)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, conv_mem, conv_mask, graph_mem, graph_mask,
                review_mem, review_mask):
        if conv_mem.shape[-1] != x.shape[-1]:
            raise ValueError(f"memory width {conv_mem.shape[-1]} does not match "
                             f"decoder width {x.shape[-1]}")
        h = self.norm_self(x)
        x = x + self.dropout(self.self_attn(
            h, h, h, attn_mask=causal_mask(x.shape[1], device=x.device)))
        x = self.cross_conv(x, conv_mem, conv_mask)
        x = self.cross_graph(x, graph_mem, graph_mask)
        x = self.cross_review(x, review_mem, review_mask)
        x = x + self.dropout(self.ffn(self.norm_ffn(x)))
        return x


class ResponseDecoder(nn.Module):
    def __init__(self, vocab_size: int, config: ModelConfig, pad_id: int):
        super().__init__()
        self.d_model = config.d_conv
        self.embed = nn.Embedding(vocab_size, config.d_conv, padding_idx=pad_id)
        nn.init.normal_(self.embed.weight, std=config.d_conv ** -0.5)
        with torch.no_grad():
            self.embed.weight[pad_id].zero_()
        self.register_buffer(
            "positions", sinusoidal_positions(config.max_positions, config.d_conv),
            persistent=False)
        self.graph_proj = nn.Linear(config.d_rec, config.d_conv)
        self.layers = nn.ModuleList(
            DecoderLayer(config.d_conv, config.n_heads, config.ffn_width,
                         config.dropout)
            for _ in range(config.n_dec_layers))
        self.norm = nn.LayerNorm(config.d_conv)

    def forward(self, tokens, conv_mem, conv_mask, graph_mem, graph_mask,
                review_mem, review_mask):
        """tokens (B, T) prefix ids; graph_mem arrives in the entity width
        and is projected up to the decoder width."""
        pos = self.positions[: tokens.shape[1]].to(self.embed.weight.dtype)
        x = self.embed(tokens) * math.sqrt(self.d_model) + pos
        graph_mem = self.graph_proj(graph_mem)
        for layer in self.layers:
            x = layer(x, conv_mem, conv_mask, graph_mem, graph_mask,
                      review_mem, review_mask)
        return self.norm(x)


class FusionHead(nn.Module):
    """Vocabulary distribution conditioned on attended review sentences:
    attention of the decoder state over sentence columns, concatenation
    with the state, one output projection."""

    def __init__(self, vocab_size: int, config: ModelConfig):
        super().__init__()
        self.out = nn.Linear(2 * config.d_conv, vocab_size)

    def forward(self, hidden, review_mem, review_mask=None, log: bool = False):
        """hidden (B, T, D), review_mem (B, S, D) -> (B, T, |V|)."""
        scores = hidden @ review_mem.transpose(-2, -1)
        if review_mask is not None:
            scores = scores.masked_fill(~review_mask.unsqueeze(-2), float("-inf"))
        alpha = torch.softmax(scores, dim=-1)
        context = alpha @ review_mem
        logits = self.out(torch.cat([hidden, context], dim=-1))
        if log:
            return torch.log_softmax(logits, dim=-1)
        return torch.softmax(logits, dim=-1)


def fusion_head(decoder_state: torch.Tensor, E: torch.Tensor,
                head: FusionHead) -> torch.Tensor:
    """Single-step form: decoder_state (d,), E (d, n_sentences) -> (|V|,)
    probabilities."""
    probs = head(decoder_state.view(1, 1, -1), E.T.unsqueeze(0))
    return probs[0, 0]


def instance_weight(f_w: int, beta: float, gamma: float) -> float:
    """Down-weights frequent tokens: 1 below the threshold, then beta/f_w
    with floor gamma."""
    if f_w < 0:
        raise ValueError(f"token frequency must be >= 0, got {f_w}")
    if f_w < beta:
        return 1.0
    return max(gamma, beta / f_w)


def token_weights(frequencies: torch.Tensor, beta: float, gamma: float) -> torch.Tensor:
    """Vectorized instance weights for a tensor of token frequencies."""
    frequencies = frequencies.to(torch.float64)
    scaled = torch.clamp(beta / frequencies.clamp(min=1.0), min=gamma)
    return torch.where(frequencies < beta, torch.ones_like(scaled), scaled)


def weighted_nll(log_probs: torch.Tensor, targets: torch.Tensor,
                 weights: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over real target positions of weight * -log P(target); the
    weight stays outside the log so it scales each token's gradient."""
    nll = -log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    weighted = nll * weights.to(nll.dtype)
    if mask is None:
        return weighted.mean()
    mask = mask.to(nll.dtype)
    total = mask.sum()
    if total == 0:
        raise ValueError("no unmasked target positions")
    return (weighted * mask).sum() / total


def gen_loss(step_probs: torch.Tensor, targets: torch.Tensor,
             frequencies: torch.Tensor, beta: float, gamma: float,
             mask: torch.Tensor | None = None,
             log_input: bool = False) -> torch.Tensor:
    """Instance-weighted cross entropy for (T, |V|) or (B, T, |V|) step
    distributions; frequencies is the per-vocab-id corpus count table."""
    targets = targets.long()
    log_probs = step_probs if log_input else torch.log(step_probs)
    weights = token_weights(frequencies[targets], beta, gamma)
    return weighted_nll(log_probs, targets, weights, mask)


@dataclass
class GenerationOutput:
    token_ids: list[int]
    chosen_probs: list[float]
    finish_reason: str  # "eos" | "max_len"


def _step_distribution(decoder: ResponseDecoder, head: FusionHead, prefix,
                       memories) -> torch.Tensor:
    conv_mem, conv_mask, graph_mem, graph_mask, review_mem, review_mask = memories
    tokens = torch.tensor([prefix], dtype=torch.long)
    hidden = decoder(tokens, conv_mem, conv_mask, graph_mem, graph_mask,
                     review_mem, review_mask)
    return head(hidden, review_mem, review_mask)[0, -1]


def decode(decoder: ResponseDecoder, head: FusionHead, memories,
           bos_id: int, eos_id: int, pad_id: int,
           mode: str = "greedy", max_len: int = 30,
           beam_width: int | None = None, min_len: int = 0) -> GenerationOutput:
    """Autoregressive decoding against fixed memories.

    Greedy takes each step's argmax (ties resolve to the lowest token id);
    beam search keeps ``beam_width`` hypotheses by summed log-probability
    and finalizes with length normalization. Pad and bos are never emitted,
    and eos is suppressed until ``min_len`` tokens are out.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if mode not in ("greedy", "beam"):
        raise ValueError(f"unknown decode mode {mode!r}")

    blocked = [pad_id, bos_id]

    def masked_probs(prefix, produced):
        probs = _step_distribution(decoder, head, prefix, memories).clone()
        probs[blocked] = 0.0
        if produced < min_len:
            probs[eos_id] = 0.0
        return probs

    with torch.no_grad():
        if mode == "greedy" or (beam_width or 1) == 1:
            prefix = [bos_id]
            out_tokens, out_probs = [], []
            reason = "max_len"
            for _ in range(max_len):
                probs = masked_probs(prefix, len(out_tokens))
                nxt = int(torch.argmax(probs))
                out_probs.append(float(probs[nxt]))
                if nxt == eos_id:
                    reason = "eos"
                    break
                out_tokens.append(nxt)
                prefix.append(nxt)
            return GenerationOutput(out_tokens, out_probs, reason)

        if beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {beam_width}")
        # each hypothesis: (tokens, per-step chosen probs, logprob sum, finished)
        beams = [([], [], 0.0, False)]
        for _ in range(max_len):
            candidates = []
            for tokens, probs_hist, logp, finished in beams:
                if finished:
                    candidates.append((tokens, probs_hist, logp, True))
                    continue
                probs = masked_probs([bos_id] + tokens, len(tokens))
                top = torch.topk(probs, k=min(beam_width, probs.shape[0]))
                for value, idx in zip(top.values.tolist(), top.indices.tolist()):
                    if value <= 0.0:
                        continue
                    candidates.append((
                        tokens if idx == eos_id else tokens + [idx],
                        probs_hist + [value],
                        logp + math.log(value),
                        idx == eos_id,
                    ))
            if not candidates:
                break
            candidates.sort(key=lambda c: (-c[2], c[0]))
            beams = candidates[:beam_width]
            if all(c[3] for c in beams):
                break

        def final_score(c):
            return c[2] / max(1, len(c[1]))

        best = max(beams, key=final_score)
        return GenerationOutput(best[0], best[1],
                                "eos" if best[3] else "max_len")


def distinct_n(responses: list[list], n: int, per_sentence: bool = False) -> float:
    """Unique / total n-gram ratio over the generated set. ``per_sentence``
    averages the per-response ratio instead of pooling the corpus."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not responses:
        warnings.warn("distinct_n over an empty response set", stacklevel=2)
        return 0.0

    def grams(tokens):
        return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]

    if per_sentence:
        ratios = []
        for resp in responses:
            g = grams(resp)
            if g:
                ratios.append(len(set(g)) / len(g))
        if not ratios:
            warnings.warn("no response long enough for an n-gram", stacklevel=2)
            return 0.0
        return sum(ratios) / len(ratios)

    unique, total = set(), 0
    for resp in responses:
        g = grams(resp)
        total += len(g)
        unique.update(g)
    if total == 0:
        warnings.warn("no response long enough for an n-gram", stacklevel=2)
        return 0.0
    return len(unique) / total
