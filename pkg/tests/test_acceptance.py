"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they complete.
"""

import math
import random
import time

import pytest
import torch
from fastapi.testclient import TestClient

from c2crs.checkpoint import (
    apply_params,
    load_checkpoint,
    params_from_model,
    save_checkpoint,
)
from c2crs.contrastive import coarse_loss, fine_loss, info_nce
from c2crs.corpus import (
    collate,
    generate_synthetic_corpus,
    save_corpus,
    synthetic_entity_names,
)
from c2crs.generator import distinct_n, gen_loss
from c2crs.recommender import item_logits, rec_loss, recall_at_k
from c2crs.serve import create_app, load_service
from c2crs.trainer import (
    build_model,
    corpus_instances,
    evaluate_recommendation,
    manifest_for,
    run_schedule,
    run_stage,
    stage_instances,
)
from conftest import tiny_train_config
from gradcheck import check_gradients

torch.set_num_threads(1)


def report(number, name):
    print(f"\n[acceptance] criterion {number} ({name}): PASS")


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(8, 24, 16, seed=1)


# --------------------------------------------------------------------------
# 1. gradient suite
# --------------------------------------------------------------------------

def test_criterion_01_gradient_suite(corpus):
    started = time.monotonic()
    torch.manual_seed(101)
    config = tiny_train_config(
        model=__import__("conftest").tiny_model_config(
            d_conv=8, d_rec=4, d_cl=4, n_heads=2, ffn_width=8,
            n_enc_layers=1, n_dec_layers=1),
        batch_size=4, max_context_len=32, max_response_len=8)
    model = build_model(corpus, config).double()
    instances = stage_instances(corpus_instances(corpus, config), "pretrain_fine")
    batch = collate(instances[:4], pad_id=model.pad_id, reviews=corpus[2])
    rec_batch = collate(
        [i for i in corpus_instances(corpus, config) if i.target_item is not None][:4],
        pad_id=model.pad_id, reviews=corpus[2])

    conv_params = list(model.encoder.conv.parameters())
    graph_params = list(model.encoder.rgcn.parameters())
    review_params = list(model.encoder.review.parameters())
    proj_params = list(model.proj.parameters())

    def through_encoders_info_nce():
        ctx = model.encode_batch(batch)
        z_c, z_g, _ = model.projected_coarse(ctx)
        return info_nce(z_c, z_g, model.config.tau)

    def through_encoders_coarse():
        loss, _, _ = model.loss_coarse(batch)
        return loss

    def through_encoders_fine():
        loss, _, _ = model.loss_fine(batch)
        return loss

    def through_graph_rec():
        loss, _, _ = model.loss_rec(rec_batch)
        return loss

    def through_decoder_gen():
        loss, _, _ = model.loss_gen(batch)
        return loss

    cases = [
        ("info_nce", through_encoders_info_nce,
         conv_params + graph_params + proj_params),
        ("coarse_loss", through_encoders_coarse,
         conv_params + graph_params + review_params + proj_params),
        ("fine_loss", through_encoders_fine,
         conv_params + graph_params + review_params + proj_params),
        ("rec_loss", through_graph_rec,
         graph_params + list(model.rec.parameters())),
        ("gen_loss", through_decoder_gen,
         list(model.decoder.parameters()) + list(model.fusion.parameters())),
    ]
    for name, loss_fn, params in cases:
        checked = check_gradients(loss_fn, params, n_coords=55, h=1e-5,
                                  rtol=1e-4, seed=hash(name) % 1000)
        assert checked >= 50, f"{name}: only {checked} coordinates checked"

    elapsed = time.monotonic() - started
    assert elapsed < 120, f"gradient suite took {elapsed:.1f}s (budget 120s)"
    report(1, "gradient suite")


# --------------------------------------------------------------------------
# 2. closed-form loss values
# --------------------------------------------------------------------------

def test_criterion_02_closed_forms():
    g = torch.Generator().manual_seed(0)
    x1 = torch.randn(1, 6, generator=g, dtype=torch.float64)
    y1 = torch.randn(1, 6, generator=g, dtype=torch.float64)
    assert abs(float(info_nce(x1, y1, 0.07))) <= 1e-6

    uniform = torch.ones(4, 3, dtype=torch.float64)
    assert abs(float(info_nce(uniform, uniform, 0.07)) - math.log(4)) <= 1e-6

    separable = torch.tensor([[1.0, 0.0], [-1.0, 0.0]], dtype=torch.float64)
    expected = math.log(1 + math.exp(-2))
    assert abs(float(info_nce(separable, separable, 1.0)) - expected) <= 1e-6

    probs = torch.full((3, 4), 0.25, dtype=torch.float64)
    assert abs(float(rec_loss(probs, [0, 1, 2], [0, 1, 2, 3]))
               - math.log(4)) <= 1e-6

    vocab = 8
    step_probs = torch.full((5, vocab), 1.0 / vocab, dtype=torch.float64)
    value = gen_loss(step_probs, torch.tensor([1, 2, 3, 4, 5]),
                     torch.zeros(vocab), beta=100, gamma=0.1)
    assert abs(float(value) - math.log(vocab)) <= 1e-6
    report(2, "closed-form loss values")


# --------------------------------------------------------------------------
# 3. InfoNCE initialization sanity
# --------------------------------------------------------------------------

def test_criterion_03_infonce_initialization():
    b, d, tau = 32, 2048, 0.07
    per_pair = {"cg": [], "cr": [], "gr": []}
    for seed in range(10):
        g = torch.Generator().manual_seed(seed)

        def unit():
            v = torch.randn(b, d, generator=g, dtype=torch.float64)
            return v / v.norm(dim=1, keepdim=True)

        e_c, e_g, e_r = unit(), unit(), unit()
        per_pair["cg"].append(float(info_nce(e_c, e_g, tau)))
        per_pair["cr"].append(float(info_nce(e_c, e_r, tau)))
        per_pair["gr"].append(float(info_nce(e_g, e_r, tau)))
    for name, values in per_pair.items():
        mean = sum(values) / len(values)
        assert abs(mean - math.log(b)) <= 0.2, f"{name}: mean {mean:.4f}"
    report(3, "InfoNCE initialization sanity")


# --------------------------------------------------------------------------
# 4. contrastive alignment
# --------------------------------------------------------------------------

def test_criterion_04_contrastive_alignment(corpus):
    started = time.monotonic()
    config = tiny_train_config(coarse_steps=300, learning_rate=0.001,
                               seed=0, batch_size=8)
    result = run_stage("pretrain_coarse", corpus, config)
    first, last = result.history[0], result.history[-1]
    assert last["loss"] <= 0.5 * first["loss"], (
        f"coarse loss {first['loss']:.4f} -> {last['loss']:.4f}")
    gain = last["mean_pos_cos"] - first["mean_pos_cos"]
    assert gain >= 0.3, f"mean positive cosine rose only {gain:.3f}"
    elapsed = time.monotonic() - started
    assert elapsed < 180, f"alignment run took {elapsed:.1f}s (budget 180s)"
    report(4, "contrastive alignment")


# --------------------------------------------------------------------------
# 5. overfit memorization
# --------------------------------------------------------------------------

def test_criterion_05_overfit_memorization(corpus):
    started = time.monotonic()
    config = tiny_train_config(coarse_steps=100, fine_steps=100, rec_steps=500,
                               learning_rate=0.001, seed=0, batch_size=8)
    results = run_schedule(
        corpus, config,
        schedule=["pretrain_coarse", "pretrain_fine", "finetune_rec"])
    model = results[-1].model
    report_rec = evaluate_recommendation(model, corpus_instances(corpus, config))
    assert report_rec.recall_at[1] == 1.0, (
        f"training-set R@1 = {report_rec.recall_at[1]:.3f}")
    elapsed = time.monotonic() - started
    assert elapsed < 300, f"memorization run took {elapsed:.1f}s (budget 300s)"
    report(5, "overfit memorization")


# --------------------------------------------------------------------------
# 6. ablation direction
# --------------------------------------------------------------------------

def test_criterion_06_ablation_direction():
    wide = generate_synthetic_corpus(16, 48, 32, seed=1)
    wins = 0
    for seed in (0, 1, 2):
        config = tiny_train_config(coarse_steps=60, fine_steps=60, rec_steps=30,
                                   learning_rate=0.001, seed=seed, batch_size=8)
        full = run_schedule(
            wide, config,
            schedule=["pretrain_coarse", "pretrain_fine", "finetune_rec"])
        full_r10 = evaluate_recommendation(
            full[-1].model, corpus_instances(wide, config)).recall_at[10]
        ablated = run_schedule(wide, config, schedule=["finetune_rec"])
        ablated_r10 = evaluate_recommendation(
            ablated[-1].model, corpus_instances(wide, config)).recall_at[10]
        wins += int(full_r10 >= ablated_r10)
    assert wins >= 2, f"full >= w/o Coarse-Fine in only {wins}/3 seeds"
    report(6, "ablation direction")


# --------------------------------------------------------------------------
# 7. metric oracles
# --------------------------------------------------------------------------

def _oracle_recall(rankings, targets, k):
    hits = sum(1 for r, t in zip(rankings, targets) if t in r[:k])
    return hits / len(targets) if targets else 0.0


def _oracle_distinct(responses, n):
    grams, total = set(), 0
    for resp in responses:
        for i in range(len(resp) - n + 1):
            grams.add(tuple(resp[i:i + n]))
            total += 1
    return len(grams) / total if total else 0.0


def test_criterion_07_metric_oracles():
    rng = random.Random(7)
    for _ in range(100):
        n_items = rng.randint(3, 70)
        rankings, targets = [], []
        for _ in range(rng.randint(1, 10)):
            ranking = list(range(n_items))
            rng.shuffle(ranking)
            rankings.append(ranking)
            targets.append(rng.randrange(n_items))
        ours = recall_at_k(rankings, targets)
        for k in (1, 10, 50):
            assert ours.recall_at[k] == _oracle_recall(rankings, targets, k)

    import warnings as _warnings
    for _ in range(100):
        n = rng.choice([2, 3, 4])
        responses = [[rng.randint(0, 6) for _ in range(rng.randint(0, 10))]
                     for _ in range(rng.randint(1, 7))]
        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore")
            assert distinct_n(responses, n) == _oracle_distinct(responses, n)

    # worked examples, exact
    rankings, targets = [], []
    for rank in (1, 2, 11, 51, 4):
        rankings.append(list(range(rank - 1)) + [999] + list(range(100, 160)))
        targets.append(999)
    worked = recall_at_k(rankings, targets)
    assert worked.recall_at[1] == 0.2
    assert worked.recall_at[10] == 0.6
    assert worked.recall_at[50] == 0.8
    assert distinct_n([["a", "b", "a", "b"]], 2) == pytest.approx(2 / 3)
    report(7, "metric oracles")


# --------------------------------------------------------------------------
# 8. instance weighting
# --------------------------------------------------------------------------

def test_criterion_08_instance_weighting():
    torch.manual_seed(8)
    logits = torch.nn.Parameter(torch.randn(1, 16, dtype=torch.float64))
    target = torch.tensor([5])

    def grad_for_frequency(f_w):
        freqs = torch.full((16,), float(f_w))
        loss = gen_loss(torch.log_softmax(logits, -1), target, freqs,
                        beta=100, gamma=0.1, log_input=True)
        (grad,) = torch.autograd.grad(loss, [logits])
        return grad

    base = grad_for_frequency(1)          # f_w < beta: weight 1
    floored = grad_for_frequency(10000)   # weight max(0.1, 0.01) = 0.1
    ratio = floored.norm() / base.norm()
    assert abs(float(ratio) - 0.1) <= 1e-4

    below = grad_for_frequency(50)
    assert torch.allclose(below, base, atol=1e-12), \
        "tokens below the threshold must be unaffected"
    report(8, "instance weighting")


# --------------------------------------------------------------------------
# 9. determinism & persistence
# --------------------------------------------------------------------------

def test_criterion_09_determinism_and_persistence(corpus, tmp_path):
    config = tiny_train_config(coarse_steps=12, learning_rate=0.005, seed=13,
                               batch_size=8)
    first = run_stage("pretrain_coarse", corpus, config)
    second = run_stage("pretrain_coarse", corpus, config)
    assert [h["loss"] for h in first.history] == \
        [h["loss"] for h in second.history], "loss curves diverged"

    path = tmp_path / "model.ckpt"
    save_checkpoint(first.params, manifest_for(config, "pretrain_coarse", 12),
                    path)
    params, _ = load_checkpoint(path)
    clone = build_model(corpus, config)
    apply_params(clone, params)

    instances = corpus_instances(corpus, config)[:4]
    batch = collate(instances, pad_id=first.model.pad_id, reviews=corpus[2])
    with torch.no_grad():
        a = first.model.encode_batch(batch)
        b = clone.encode_batch(batch)
    assert torch.equal(a.conv_hidden, b.conv_hidden)
    assert torch.equal(a.node_reps, b.node_reps)
    assert torch.equal(a.e_review, b.e_review)
    report(9, "determinism & persistence")


# --------------------------------------------------------------------------
# 10. serve contract
# --------------------------------------------------------------------------

def test_criterion_10_serve_contract(tmp_path):
    wide = generate_synthetic_corpus(12, 36, 24, seed=2)
    data_dir = tmp_path / "data"
    save_corpus(wide, data_dir, entity_names=synthetic_entity_names(12, 36))
    config = tiny_train_config(coarse_steps=40, rec_steps=60, conv_steps=20,
                               learning_rate=0.003, seed=0, batch_size=8)
    results = run_schedule(
        wide, config,
        schedule=["pretrain_coarse", "finetune_rec", "finetune_conv"])
    ckpt = tmp_path / "model.ckpt"
    save_checkpoint(results[-1].params,
                    manifest_for(config, results[-1].stage, 20), ckpt)

    service = load_service(ckpt, data_dir)
    client = TestClient(create_app(service))

    transcripts = []
    for session in ("alpha", "beta"):
        rows = []
        for text in ("i want a movie about topic12 and topic13",
                     "something with topic14 maybe"):
            response = client.post("/api/converse", json={
                "session_id": session, "utterance": text, "k": 10})
            assert response.status_code == 200
            body = response.json()
            assert body["response"], "response must be non-empty"
            assert len(body["recommendations"]) == 10
            rows.append(body)
        transcripts.append(rows)
    assert transcripts[0] == transcripts[1], \
        "identical sessions must produce identical outputs"
    report(10, "serve contract")
