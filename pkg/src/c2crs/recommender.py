"""Item scoring over knowledge-graph representations and Recall@k."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .encoders import pool_entity_lists
from .modules import SelfAttentivePool

DEFAULT_KS = (1, 10, 50)


@dataclass
class RecommendationResult:
    ranked_items: list[int]
    scores: list[float]
    user_vector: torch.Tensor


@dataclass
class RecEvalReport:
    recall_at: dict[int, float]
    n_instances: int

    def as_dict(self) -> dict:
        out = {f"recall@{k}": v for k, v in sorted(self.recall_at.items())}
        out["n"] = self.n_instances
        return out


class RecommendationHead(nn.Module):
    """Pools the context entities' node representations into the user
    vector e_u; scoring is a softmax over dot products with item nodes."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.pool = SelfAttentivePool(config.d_rec)
        self.cold_user = nn.Parameter(torch.empty(config.d_rec))
        nn.init.normal_(self.cold_user, std=config.d_rec ** -0.5)

    def user_representation(self, node_reps: torch.Tensor,
                            entity_lists: list[list[int]]):
        return pool_entity_lists(node_reps, entity_lists, self.pool, self.cold_user)


def user_representation(context_entities: list[int], node_reps: torch.Tensor,
                        head: RecommendationHead) -> torch.Tensor:
    pooled, _ = head.user_representation(node_reps, [list(context_entities)])
    return pooled[0]


def item_logits(user_vectors: torch.Tensor, node_reps: torch.Tensor,
                item_ids: list[int]) -> torch.Tensor:
    """(B, d) user vectors against the item rows of N -> (B, |I|) logits."""
    if len(item_ids) < 2:
        raise ValueError(f"need at least 2 items to rank, got {len(item_ids)}")
    items = node_reps[torch.tensor(item_ids, dtype=torch.long)]
    return user_vectors @ items.T


def score_items(user_vector: torch.Tensor, node_reps: torch.Tensor,
                item_ids: list[int]) -> torch.Tensor:
    """Probability over the item set for one user vector."""
    logits = item_logits(user_vector.unsqueeze(0), node_reps, item_ids)
    return torch.softmax(logits, dim=-1)[0]


def rank_items(probs: torch.Tensor, item_ids: list[int]) -> tuple[list[int], list[float]]:
    """Descending probability; ties broken by ascending item id."""
    order = sorted(range(len(item_ids)), key=lambda i: (-float(probs[i]), item_ids[i]))
    return [item_ids[i] for i in order], [float(probs[i]) for i in order]


def recommend_top_k(user_vector: torch.Tensor, node_reps: torch.Tensor,
                    item_ids: list[int], k: int) -> RecommendationResult:
    probs = score_items(user_vector, node_reps, item_ids)
    ranked, scores = rank_items(probs, item_ids)
    k = min(k, len(item_ids))
    return RecommendationResult(ranked_items=ranked[:k], scores=scores[:k],
                                user_vector=user_vector)


def rec_loss(scores: torch.Tensor, target_items: list[int], item_ids: list[int],
             from_logits: bool = False) -> torch.Tensor:
    """Mean cross-entropy of the target items under the batch's item
    distributions; scores is (B, |I|) probabilities (or logits)."""
    index = {item: col for col, item in enumerate(item_ids)}
    try:
        cols = torch.tensor([index[t] for t in target_items], dtype=torch.long)
    except KeyError as exc:
        raise ValueError(f"target item {exc.args[0]} is not in the item set") from exc
    if from_logits:
        return F.cross_entropy(scores, cols)
    return -torch.log(scores[torch.arange(len(cols)), cols]).mean()


def recall_at_k(ranked_lists: list[list[int]], targets: list[int],
                ks=DEFAULT_KS) -> RecEvalReport:
    """Fraction of instances whose target appears in the top-k ranking."""
    if len(ranked_lists) != len(targets):
        raise ValueError("one target per ranking required")
    n = len(targets)
    recall = {}
    for k in ks:
        if n == 0:
            recall[k] = 0.0
            continue
        hits = sum(1 for ranking, target in zip(ranked_lists, targets)
                   if target in ranking[:k])
        recall[k] = hits / n
    return RecEvalReport(recall_at=recall, n_instances=n)
