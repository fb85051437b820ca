"""Stage orchestration: coarse pretrain, fine pretrain, recommendation and
conversation fine-tuning (plus the joint multi-task variant), with Adam,
global-norm gradient clipping, JSONL metrics and deterministic seeding."""

from __future__ import annotations

import copy
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .checkpoint import apply_params, params_from_model
from .config import MULTI_TASK, STAGES, TrainConfig, dump_config
from .contrastive import pretrain_objective
from .corpus import (
    Batch,
    CorpusTuple,
    ReviewDoc,
    TrainingInstance,
    build_instances,
    collate,
    make_batches,
)
from .corpus.batching import _bundle_items
from .generator import distinct_n
from .model import C2CRSModel
from .recommender import DEFAULT_KS, RecEvalReport, recall_at_k

PRETRAIN_STAGES = ("pretrain_coarse", "pretrain_fine")

ABLATION_VARIANTS = (
    "w/o Coarse-Fine", "w/o Coarse", "w/o Fine", "Multi-task",
    "w/o CH", "w/o SD", "w/o UD",
)


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class StageResult:
    stage: str
    model: C2CRSModel
    params: dict[str, torch.Tensor]
    history: list[dict] = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)

    @property
    def first_loss(self) -> float:
        return self.history[0]["loss"]

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"]


def build_model(corpus: CorpusTuple, config: TrainConfig) -> C2CRSModel:
    """Seeded construction so two builds from the same config are identical."""
    _, kg, reviews, _, vocab = corpus
    torch.manual_seed(config.seed)
    return C2CRSModel(config.model, vocab, kg, reviews)


def corpus_instances(corpus: CorpusTuple, config: TrainConfig) -> list[TrainingInstance]:
    conversations, _, _, alignment, vocab = corpus
    out: list[TrainingInstance] = []
    for record in conversations:
        out.extend(build_instances(record, config.max_context_len,
                                   vocab.sep_id, alignment))
    return out


def stage_instances(instances: list[TrainingInstance], stage: str
                    ) -> list[TrainingInstance]:
    """Pretraining and generation dedupe per turn (multi-item turns clone
    the context); recommendation keeps one instance per ground-truth item."""
    if stage == "finetune_rec":
        return [i for i in instances if i.target_item is not None]
    if stage == MULTI_TASK:
        return instances
    seen, out = set(), []
    for inst in instances:
        key = (inst.conversation_id, inst.turn_index)
        if key not in seen:
            seen.add(key)
            out.append(inst)
    return out


def stage_parameters(model: C2CRSModel, stage: str,
                     freeze_encoders: bool) -> list[torch.nn.Parameter]:
    groups: list[torch.nn.Module]
    if stage in PRETRAIN_STAGES:
        groups = [model.encoder, model.proj]
    elif stage == "finetune_rec":
        groups = [model.rec] if freeze_encoders else [model.encoder.rgcn, model.rec]
    elif stage == "finetune_conv":
        groups = [model.decoder, model.fusion]
        if not freeze_encoders:
            groups.append(model.encoder)
    elif stage == MULTI_TASK:
        groups = [model]
    else:
        raise ValueError(f"unknown stage {stage!r}")
    params, seen = [], set()
    for module in groups:
        for p in module.parameters():
            if id(p) not in seen:
                seen.add(id(p))
                params.append(p)
    return params


def _check_finite(terms: dict[str, float], loss: torch.Tensor, stage: str, step: int):
    for name, value in terms.items():
        if not torch.isfinite(torch.as_tensor(value)):
            raise NonFiniteLossError(
                f"non-finite loss term {name!r} at {stage} step {step}")
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite total loss at {stage} step {step}")


def _stage_loss(model: C2CRSModel, stage: str, batch: Batch, counters: Counter):
    """Returns (loss, terms, extra-metrics)."""
    cfg = model.config
    if stage == "pretrain_coarse":
        loss, terms, ctx = model.loss_coarse(batch)
        return loss, terms, {"mean_pos_cos": model.mean_positive_cosine(ctx)}
    if stage == "pretrain_fine":
        l_fine, ft, ctx = model.loss_fine(batch, counters=counters)
        l_coarse, ct, _ = model.loss_coarse(batch, ctx)
        loss = pretrain_objective("fine", l_fine, l_coarse, cfg.coarse_weight)
        terms = {**ft, **ct, "coarse": float(l_coarse.detach())}
        return loss, terms, {"mean_pos_cos": model.mean_positive_cosine(ctx)}
    if stage == "finetune_rec":
        loss, terms, _ = model.loss_rec(batch)
        return loss, terms, {}
    if stage == "finetune_conv":
        loss, terms, _ = model.loss_gen(batch)
        return loss, terms, {}
    if stage == MULTI_TASK:
        l_coarse, ct, ctx = model.loss_coarse(batch)
        l_fine, ft, _ = model.loss_fine(batch, ctx, counters=counters)
        l_gen, gt, _ = model.loss_gen(batch, ctx)
        terms = {**ct, **ft, **gt, "coarse": float(l_coarse.detach())}
        loss = l_coarse + l_fine + l_gen
        rec_idx = [i for i, t in enumerate(batch.target_items) if t is not None]
        if rec_idx:
            l_rec, rt = model.loss_rec_subset(batch, ctx, rec_idx)
            loss = loss + l_rec
            terms.update(rt)
        return loss, terms, {}
    raise ValueError(f"unknown stage {stage!r}")


def _batch_stream(instances, config: TrainConfig, reviews, pad_id: int,
                  contrastive_mode: bool):
    epoch = 0
    while True:
        yield from make_batches(instances, config.batch_size,
                                seed=config.seed + epoch, shuffle=True,
                                pad_id=pad_id, reviews=reviews,
                                contrastive=contrastive_mode)
        epoch += 1


def run_stage(stage: str, corpus: CorpusTuple, config: TrainConfig,
              init_params: dict[str, torch.Tensor] | None = None,
              metrics_path: str | Path | None = None) -> StageResult:
    """Optimize one stage's objective; deterministic under the config seed
    (single-threaded numeric execution)."""
    if stage not in STAGES and stage != MULTI_TASK:
        raise ValueError(f"unknown stage {stage!r}")
    torch.set_num_threads(1)
    _, _, reviews, _, vocab = corpus

    model = build_model(corpus, config)
    if init_params is not None:
        apply_params(model, init_params)
    model.train()

    instances = stage_instances(corpus_instances(corpus, config), stage)
    if not instances:
        raise ValueError(f"no training instances for stage {stage}")
    steps = config.steps_for(stage)
    if steps is None:
        steps = (len(instances) + config.batch_size - 1) // config.batch_size

    contrastive_mode = stage in PRETRAIN_STAGES or stage == MULTI_TASK
    needs_reviews = contrastive_mode or stage == "finetune_conv"
    stream = _batch_stream(instances, config, reviews if needs_reviews else None,
                           vocab.pad_id, contrastive_mode)

    params = stage_parameters(model, stage, config.freeze_encoders)
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    counters: Counter = Counter()
    history: list[dict] = []
    sink = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        sink = Path(metrics_path).open("a", encoding="utf-8")
    try:
        for step in range(1, steps + 1):
            batch = next(stream)
            loss, terms, extra = _stage_loss(model, stage, batch, counters)
            _check_finite(terms, loss, stage, step)
            optimizer.zero_grad()
            loss.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(
                params, config.grad_clip_max_norm)
            optimizer.step()
            record = {"step": step, "stage": stage, "loss": float(loss.detach()),
                      "grad_norm": float(grad_norm), **terms, **extra}
            history.append(record)
            if sink is not None and (step % config.log_every == 0 or step == steps):
                sink.write(json.dumps(record) + "\n")
    finally:
        if sink is not None:
            sink.close()

    model.eval()
    return StageResult(stage=stage, model=model,
                       params=params_from_model(model),
                       history=history, counters=counters)


def run_schedule(corpus: CorpusTuple, config: TrainConfig,
                 schedule: list[str] | None = None,
                 init_params: dict[str, torch.Tensor] | None = None,
                 metrics_path: str | Path | None = None) -> list[StageResult]:
    results = []
    params = init_params
    for stage in (schedule if schedule is not None else config.schedule):
        result = run_stage(stage, corpus, config, init_params=params,
                           metrics_path=metrics_path)
        params = result.params
        results.append(result)
    return results


def manifest_for(config: TrainConfig, stage: str, step: int) -> dict:
    return {"config": dump_config(config), "stage": stage, "step": step}


def _normalize_variant(name: str) -> str:
    return "".join(c for c in name.lower() if c.isalnum())


def ablate(config: TrainConfig, variant: str) -> TrainConfig:
    """Config for one of the ablation variants: stage-schedule edits and
    data-view removals."""
    out = copy.deepcopy(config)
    key = _normalize_variant(variant)
    if key == _normalize_variant("w/o Coarse-Fine"):
        out.schedule = ["finetune_rec", "finetune_conv"]
    elif key == _normalize_variant("w/o Coarse"):
        out.schedule = ["pretrain_fine", "finetune_rec", "finetune_conv"]
        out.model.coarse_weight = 0.0
    elif key == _normalize_variant("w/o Fine"):
        out.schedule = ["pretrain_coarse", "finetune_rec", "finetune_conv"]
    elif key == _normalize_variant("Multi-task"):
        out.schedule = [MULTI_TASK]
    elif key == _normalize_variant("w/o CH"):
        out.model.use_conv_view = False
    elif key == _normalize_variant("w/o SD"):
        out.model.use_graph_view = False
    elif key == _normalize_variant("w/o UD"):
        out.model.use_review_view = False
    else:
        raise ValueError(f"unknown ablation variant {variant!r}; "
                         f"expected one of {ABLATION_VARIANTS}")
    return out


def _seen_items_by_turn(corpus: CorpusTuple) -> dict[tuple[str, int], set[int]]:
    seen: dict[tuple[str, int], set[int]] = {}
    for record in corpus[0]:
        acc: set[int] = set()
        for t, utt in enumerate(record.utterances):
            acc |= set(utt.recommended_items)
            seen[(record.conversation_id, t)] = set(acc)
    return seen


def evaluate_recommendation(model: C2CRSModel, instances: list[TrainingInstance],
                            batch_size: int = 64, ks=DEFAULT_KS,
                            mask_seen: bool = False,
                            corpus: CorpusTuple | None = None) -> RecEvalReport:
    """Recall@k over every instance that carries a ground-truth item.

    ``mask_seen`` drops items already recommended earlier in the same
    conversation from the candidate ranking (off by default).
    """
    targets, rankings = [], []
    eval_instances = [i for i in instances if i.target_item is not None]
    seen = None
    if mask_seen:
        if corpus is None:
            raise ValueError("mask_seen needs the corpus to locate prior items")
        seen = _seen_items_by_turn(corpus)
    model.eval()
    for start in range(0, len(eval_instances), batch_size):
        chunk = eval_instances[start:start + batch_size]
        batch = collate(chunk, pad_id=model.pad_id)
        for inst, (ranked, _) in zip(chunk, model.rank_for_batch(batch)):
            if seen is not None:
                prior = seen.get((inst.conversation_id, inst.turn_index), set())
                prior = prior - {inst.target_item}
                ranked = [i for i in ranked if i not in prior]
            rankings.append(ranked)
            targets.append(inst.target_item)
    return recall_at_k(rankings, targets, ks)


def generate_for_instance(model: C2CRSModel, instance: TrainingInstance,
                          reviews: dict[int, ReviewDoc], max_len: int = 30,
                          mode: str = "greedy", beam_width: int | None = None):
    sentences = [s for item in _bundle_items(instance, reviews)
                 for s in reviews[item].sentences]
    enc = model.encode_single(instance.context_token_ids,
                              instance.context_entities, sentences)
    return model.generate(enc, mode=mode, max_len=max_len, beam_width=beam_width)


def evaluate_generation(model: C2CRSModel, corpus: CorpusTuple,
                        instances: list[TrainingInstance], max_len: int = 30,
                        mode: str = "greedy", ns=(2, 3, 4),
                        per_sentence: bool = False):
    """Greedy-decode a response per turn and score corpus Distinct-n.

    Returns (metrics dict, transcript rows)."""
    _, _, reviews, _, vocab = corpus
    model.eval()
    rows, token_lists = [], []
    for inst in stage_instances(instances, "finetune_conv"):
        output = generate_for_instance(model, inst, reviews, max_len=max_len,
                                       mode=mode)
        token_lists.append(output.token_ids)
        rows.append({
            "context_id": f"{inst.conversation_id}:{inst.turn_index}",
            "response": " ".join(vocab.decode(output.token_ids)),
        })
    metrics = {f"distinct-{n}": distinct_n(token_lists, n, per_sentence)
               for n in ns}
    metrics["n_responses"] = len(token_lists)
    return metrics, rows
