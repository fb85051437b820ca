"""Coarse- and fine-grained contrastive objectives with in-batch negatives.

The pairwise loss is standard InfoNCE over cosine similarity at temperature
tau: the positive sits on the diagonal and the denominator runs over the
whole batch row (positive included). The raw log-ratio form without the
negation, where the positive is absent from the denominator, is kept behind
``literal=True`` for comparison runs; it is unbounded below and never the
default.
"""

from __future__ import annotations

from collections import Counter

import torch

VIEW_PAIRS = (("conv", "graph"), ("conv", "review"), ("graph", "review"))


def _cosine_matrix(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    if x.ndim != 2 or y.ndim != 2 or x.shape != y.shape:
        raise ValueError(f"expected matching (b, d) matrices, got "
                         f"{tuple(x.shape)} and {tuple(y.shape)}")
    for name, m in (("x", x), ("y", y)):
        norms = m.norm(dim=1)
        if bool((norms == 0).any()):
            row = int((norms == 0).nonzero()[0, 0])
            raise ValueError(f"zero-norm row {row} in {name}: cosine undefined")
    return (x / x.norm(dim=1, keepdim=True)) @ (y / y.norm(dim=1, keepdim=True)).T


def _directed(logits: torch.Tensor, neg_mask: torch.Tensor,
              literal: bool) -> torch.Tensor:
    b = logits.shape[0]
    eye = torch.eye(b, dtype=torch.bool)
    pos = logits.diagonal()
    if literal:
        denom_mask = neg_mask & ~eye
        denom = logits.masked_fill(~denom_mask, float("-inf")).logsumexp(dim=1)
        return (pos - denom).mean()
    denom_mask = neg_mask | eye
    denom = logits.masked_fill(~denom_mask, float("-inf")).logsumexp(dim=1)
    return (denom - pos).mean()


def info_nce(x: torch.Tensor, y: torch.Tensor, tau: float,
             neg_mask: torch.Tensor | None = None,
             literal: bool = False, symmetric: bool = False) -> torch.Tensor:
    """Mean contrastive loss over b aligned rows; row i of x and y is a
    positive pair, other rows are negatives. ``neg_mask[i, j]`` False drops
    y_j from x_i's denominator (the positive is always kept)."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    logits = _cosine_matrix(x, y) / tau
    if neg_mask is None:
        neg_mask = torch.ones_like(logits, dtype=torch.bool)
    loss = _directed(logits, neg_mask, literal)
    if symmetric:
        loss = 0.5 * (loss + _directed(logits.T, neg_mask.T, literal))
    return loss


def coarse_terms(e_conv: torch.Tensor, e_graph: torch.Tensor, e_review: torch.Tensor,
                 tau: float, views: dict[str, bool] | None = None,
                 literal: bool = False, symmetric: bool = False,
                 ) -> dict[str, torch.Tensor]:
    """Pairwise losses between the enabled coarse views (projected to the
    shared width)."""
    views = views or {"conv": True, "graph": True, "review": True}
    vectors = {"conv": e_conv, "graph": e_graph, "review": e_review}
    terms = {}
    for a, b in VIEW_PAIRS:
        if views.get(a, True) and views.get(b, True):
            terms[f"{a}_{b}"] = info_nce(vectors[a], vectors[b], tau,
                                         literal=literal, symmetric=symmetric)
    return terms


def coarse_loss(e_conv, e_graph, e_review, tau, views=None,
                literal=False, symmetric=False) -> torch.Tensor:
    terms = coarse_terms(e_conv, e_graph, e_review, tau, views, literal, symmetric)
    if not terms:
        return torch.zeros((), dtype=e_conv.dtype)
    return sum(terms.values())


def conversation_neg_mask(conversation_ids: list[str]) -> torch.Tensor:
    """Negatives restricted to triples from other conversations."""
    b = len(conversation_ids)
    mask = torch.ones(b, b, dtype=torch.bool)
    for i in range(b):
        for j in range(b):
            if i != j and conversation_ids[i] == conversation_ids[j]:
                mask[i, j] = False
    return mask


def fine_terms(f_sel: torch.Tensor, n_sel: torch.Tensor, e_sel: torch.Tensor,
               tau: float, conversation_ids: list[str] | None = None,
               exclude_same_conversation: bool = True,
               views: dict[str, bool] | None = None,
               literal: bool = False, symmetric: bool = False,
               ) -> dict[str, torch.Tensor]:
    views = views or {"conv": True, "graph": True, "review": True}
    neg_mask = None
    if exclude_same_conversation and conversation_ids is not None:
        neg_mask = conversation_neg_mask(conversation_ids)
    vectors = {"conv": f_sel, "graph": n_sel, "review": e_sel}
    terms = {}
    for a, b in VIEW_PAIRS:
        if views.get(a, True) and views.get(b, True):
            terms[f"{a}_{b}"] = info_nce(vectors[a], vectors[b], tau,
                                         neg_mask=neg_mask, literal=literal,
                                         symmetric=symmetric)
    return terms


def fine_loss(f_sel, n_sel, e_sel, tau, conversation_ids=None,
              exclude_same_conversation=True, views=None,
              literal=False, symmetric=False,
              counters: Counter | None = None) -> torch.Tensor:
    """Word/entity/sentence alignment loss. Batches with fewer than two
    realized triples cannot form in-batch negatives; they contribute zero
    and are counted, not erred."""
    if not (f_sel.shape[0] == n_sel.shape[0] == e_sel.shape[0]):
        raise ValueError("selected word/entity/sentence counts differ")
    if f_sel.shape[0] < 2:
        if counters is not None:
            counters["degenerate_fine_batches"] += 1
        return torch.zeros((), dtype=f_sel.dtype)
    terms = fine_terms(f_sel, n_sel, e_sel, tau, conversation_ids,
                       exclude_same_conversation, views, literal, symmetric)
    if not terms:
        return torch.zeros((), dtype=f_sel.dtype)
    return sum(terms.values())


def pretrain_objective(stage: str, l_fine: torch.Tensor, l_coarse: torch.Tensor,
                       coarse_weight: float) -> torch.Tensor:
    """Stage objective: the coarse stage optimizes the coarse loss alone;
    the fine stage keeps the coarse loss with a small weight."""
    if stage == "coarse":
        return l_coarse
    if stage == "fine":
        return l_fine + coarse_weight * l_coarse
    raise ValueError(f"unknown pre-training stage {stage!r}")
