import math
import random

import pytest
import torch

from c2crs.recommender import (
    RecommendationHead,
    item_logits,
    rank_items,
    rec_loss,
    recall_at_k,
    recommend_top_k,
    score_items,
    user_representation,
)
from conftest import tiny_model_config
from gradcheck import check_gradients

torch.manual_seed(0)


def head():
    torch.manual_seed(8)
    return RecommendationHead(tiny_model_config()).double()


class TestUserRepresentation:
    def test_single_entity_identity(self):
        h = head()
        N = torch.randn(6, 16, dtype=torch.float64)
        e_u = user_representation([4], N, h)
        assert torch.allclose(e_u, N[4], atol=1e-10)

    def test_identical_entities_identity(self):
        h = head()
        N = torch.randn(6, 16, dtype=torch.float64)
        N[1] = N[3] = N[5]
        e_u = user_representation([1, 3, 5], N, h)
        assert torch.allclose(e_u, N[5], atol=1e-10)

    def test_duplicate_mention_stays_in_hull(self):
        h = head()
        N = torch.randn(4, 16, dtype=torch.float64)
        e_u = user_representation([0, 1, 1], N, h)
        lo = torch.minimum(N[0], N[1])
        hi = torch.maximum(N[0], N[1])
        assert ((e_u >= lo - 1e-9) & (e_u <= hi + 1e-9)).all()

    def test_empty_context_cold_default(self):
        h = head()
        N = torch.randn(4, 16, dtype=torch.float64)
        pooled, cold = h.user_representation(N, [[]])
        assert bool(cold[0])
        assert torch.equal(pooled[0], h.cold_user)


class TestScoreItems:
    def test_probabilities_sum_to_one(self):
        N = torch.randn(9, 5, dtype=torch.float64)
        probs = score_items(torch.randn(5, dtype=torch.float64), N,
                            [0, 2, 4, 6, 8])
        assert float(probs.sum()) == pytest.approx(1.0, abs=1e-10)
        assert (probs >= 0).all()

    def test_dominant_dot_product_ranks_first(self):
        N = torch.zeros(8, 4, dtype=torch.float64)
        for i in range(8):
            N[i, i % 4] = 1.0
        e_u = 50.0 * N[7]
        probs = score_items(e_u, N, list(range(8)))
        ranked, scores = rank_items(probs, list(range(8)))
        assert ranked[0] in (3, 7)  # 3 and 7 share a direction; tie -> lower id
        assert ranked[0] == 3
        assert scores == sorted(scores, reverse=True)

    def test_zero_user_uniform(self):
        N = torch.randn(6, 4, dtype=torch.float64)
        probs = score_items(torch.zeros(4, dtype=torch.float64), N, [0, 1, 2, 3])
        assert torch.allclose(probs, torch.full((4,), 0.25, dtype=torch.float64),
                              atol=1e-10)

    def test_logit_shift_invariance(self):
        N = torch.randn(7, 4, dtype=torch.float64)
        e_u = torch.randn(4, dtype=torch.float64)
        items = list(range(7))
        logits = item_logits(e_u.unsqueeze(0), N, items)[0]
        base = rank_items(torch.softmax(logits, -1), items)[0]
        shifted = rank_items(torch.softmax(logits + 123.0, -1), items)[0]
        assert base == shifted

    def test_top_k_clamped(self):
        N = torch.randn(5, 4, dtype=torch.float64)
        result = recommend_top_k(torch.randn(4, dtype=torch.float64), N,
                                 [0, 1, 2], k=50)
        assert len(result.ranked_items) == 3

    def test_fewer_than_two_items_rejected(self):
        N = torch.randn(3, 4, dtype=torch.float64)
        with pytest.raises(ValueError, match="at least 2 items"):
            score_items(torch.randn(4, dtype=torch.float64), N, [0])


class TestRecLoss:
    def test_uniform_closed_form(self):
        probs = torch.full((3, 4), 0.25, dtype=torch.float64)
        value = rec_loss(probs, [10, 11, 12], [10, 11, 12, 13])
        assert float(value) == pytest.approx(math.log(4), abs=1e-9)

    def test_confident_model_near_zero(self):
        logits = torch.zeros(1, 4, dtype=torch.float64)
        logits[0, 2] = 30.0
        value = rec_loss(logits, [2], [0, 1, 2, 3], from_logits=True)
        assert float(value) <= 1e-6

    def test_batch_mean(self):
        probs = torch.tensor([[0.5, 0.5], [0.25, 0.75]], dtype=torch.float64)
        value = float(rec_loss(probs, [0, 1], [0, 1]))
        expected = (-math.log(0.5) - math.log(0.75)) / 2
        assert value == pytest.approx(expected, abs=1e-9)

    def test_unknown_target_rejected(self):
        probs = torch.full((1, 2), 0.5, dtype=torch.float64)
        with pytest.raises(ValueError, match="target item 9"):
            rec_loss(probs, [9], [0, 1])

    def test_gradcheck_through_pool_and_scoring(self):
        torch.manual_seed(41)
        h = head()
        N = torch.nn.Parameter(torch.randn(6, 16, dtype=torch.float64))
        params = list(h.parameters()) + [N]
        entity_lists = [[0, 2], [1], [3, 4, 5]]

        def loss():
            e_u, _ = h.user_representation(N, entity_lists)
            logits = item_logits(e_u, N, [0, 1, 2, 5])
            return rec_loss(logits, [0, 2, 5], [0, 1, 2, 5], from_logits=True)

        checked = check_gradients(loss, params, n_coords=60)
        assert checked >= 50


def brute_force_recall(ranked_lists, targets, k):
    hits = 0
    for ranking, target in zip(ranked_lists, targets):
        found = False
        for idx, item in enumerate(ranking):
            if idx >= k:
                break
            if item == target:
                found = True
                break
        hits += int(found)
    return hits / len(targets) if targets else 0.0


class TestRecallAtK:
    def test_rank_three_counts_for_ten_and_fifty(self):
        ranking = [5, 6, 7] + list(range(60))
        report = recall_at_k([ranking], [7])
        assert report.recall_at[1] == 0.0
        assert report.recall_at[10] == 1.0
        assert report.recall_at[50] == 1.0

    def test_all_rank_one(self):
        rankings = [[3, 1, 2] for _ in range(5)]
        report = recall_at_k(rankings, [3] * 5)
        assert all(v == 1.0 for v in report.recall_at.values())

    def test_worked_example(self):
        ranks = (1, 2, 11, 51, 4)
        rankings, targets = [], []
        for rank in ranks:
            target = 999
            ranking = [i for i in range(rank - 1)] + [target] + \
                      [1000 + i for i in range(60)]
            rankings.append(ranking)
            targets.append(target)
        report = recall_at_k(rankings, targets)
        assert report.recall_at[1] == pytest.approx(0.2)
        assert report.recall_at[10] == pytest.approx(0.6)
        assert report.recall_at[50] == pytest.approx(0.8)
        assert report.n_instances == 5

    def test_monotonicity_and_oracle_equivalence(self):
        rng = random.Random(9)
        for _ in range(100):
            n_items = rng.randint(3, 60)
            n_cases = rng.randint(1, 12)
            rankings, targets = [], []
            for _ in range(n_cases):
                ranking = list(range(n_items))
                rng.shuffle(ranking)
                rankings.append(ranking)
                targets.append(rng.randrange(n_items))
            report = recall_at_k(rankings, targets)
            assert report.recall_at[1] <= report.recall_at[10] \
                <= report.recall_at[50]
            for k in (1, 10, 50):
                assert report.recall_at[k] == pytest.approx(
                    brute_force_recall(rankings, targets, k))
