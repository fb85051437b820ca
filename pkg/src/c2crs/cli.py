"""Command-line entry points: synthetic data, training, evaluation, serving."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .checkpoint import load_checkpoint, save_checkpoint
from .config import MULTI_TASK, TrainConfig, config_from_manifest, load_config
from .corpus import (
    generate_synthetic_corpus,
    load_corpus_dir,
    save_corpus,
    synthetic_entity_names,
)
from .model import C2CRSModel
from .trainer import (
    ablate,
    corpus_instances,
    evaluate_generation,
    evaluate_recommendation,
    manifest_for,
    run_schedule,
    run_stage,
)

STAGE_NAMES = {
    "coarse": "pretrain_coarse",
    "fine": "pretrain_fine",
    "rec": "finetune_rec",
    "conv": "finetune_conv",
    "multi-task": MULTI_TASK,
}


@click.group()
def main():
    """Conversational recommender with coarse-to-fine contrastive pre-training."""


@main.command("gen-synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--items", "n_items", default=8, show_default=True, type=int)
@click.option("--entities", "n_entities", default=24, show_default=True, type=int)
@click.option("--conversations", "n_conversations", default=16, show_default=True,
              type=int)
def gen_synth(out_dir, seed, n_items, n_entities, n_conversations):
    """Write a deterministic synthetic corpus to --out."""
    corpus = generate_synthetic_corpus(n_items, n_entities, n_conversations, seed)
    names = synthetic_entity_names(n_items, n_entities)
    save_corpus(corpus, out_dir, entity_names=names)
    click.echo(f"wrote synthetic corpus ({n_conversations} conversations, "
               f"{n_items} items) to {out_dir}")


def _load_train_config(config_path, seed, batch_size, learning_rate, steps,
                       stage_key) -> TrainConfig:
    if config_path:
        config, _ = load_config(config_path)
    else:
        config = TrainConfig()
    if seed is not None:
        config.seed = seed
    if batch_size is not None:
        config.batch_size = batch_size
    if learning_rate is not None:
        config.learning_rate = learning_rate
    if steps is not None:
        field = {
            "pretrain_coarse": "coarse_steps",
            "pretrain_fine": "fine_steps",
            "finetune_rec": "rec_steps",
            "finetune_conv": "conv_steps",
            MULTI_TASK: "multi_task_steps",
        }
        if stage_key == "all":
            for name in field.values():
                setattr(config, name, steps)
        else:
            setattr(config, field[stage_key], steps)
    return config


@main.command("train")
@click.option("--stage", type=click.Choice(list(STAGE_NAMES) + ["all"]),
              default="all", show_default=True)
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--init", "init_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--steps", type=int, help="Override the stage's step budget.")
@click.option("--seed", type=int)
@click.option("--batch-size", type=int)
@click.option("--lr", "learning_rate", type=float)
@click.option("--metrics", "metrics_path", type=click.Path(),
              help="JSONL metrics stream (default: alongside --out).")
def train(stage, data_dir, config_path, init_path, out_path, steps, seed,
          batch_size, learning_rate, metrics_path):
    """Run one training stage (or the full schedule) and save a checkpoint."""
    stage_name = None if stage == "all" else STAGE_NAMES[stage]
    config = _load_train_config(config_path, seed, batch_size, learning_rate,
                                steps, stage_name or "all")
    corpus = load_corpus_dir(data_dir)
    init_params = None
    if init_path:
        init_params, _ = load_checkpoint(init_path)
    if metrics_path is None:
        metrics_path = str(Path(out_path).with_suffix(".metrics.jsonl"))

    if stage_name is None:
        results = run_schedule(corpus, config, init_params=init_params,
                               metrics_path=metrics_path)
    else:
        results = [run_stage(stage_name, corpus, config,
                             init_params=init_params,
                             metrics_path=metrics_path)]
    last = results[-1]
    manifest = manifest_for(config, last.stage, len(last.history))
    save_checkpoint(last.params, manifest, out_path)
    for result in results:
        click.echo(f"{result.stage}: loss {result.first_loss:.4f} -> "
                   f"{result.final_loss:.4f} over {len(result.history)} steps")
    click.echo(f"checkpoint saved to {out_path}")


@main.command("ablate")
@click.option("--variant", required=True)
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--steps", type=int, help="Step budget applied to every stage.")
@click.option("--seed", type=int)
@click.option("--batch-size", type=int)
@click.option("--metrics", "metrics_path", type=click.Path())
def ablate_cmd(variant, data_dir, config_path, out_path, steps, seed,
               batch_size, metrics_path):
    """Train an ablation variant end to end."""
    config = _load_train_config(config_path, seed, batch_size, None, steps, "all")
    config = ablate(config, variant)
    corpus = load_corpus_dir(data_dir)
    if metrics_path is None:
        metrics_path = str(Path(out_path).with_suffix(".metrics.jsonl"))
    results = run_schedule(corpus, config, metrics_path=metrics_path)
    last = results[-1]
    manifest = manifest_for(config, last.stage, len(last.history))
    manifest["variant"] = variant
    save_checkpoint(last.params, manifest, out_path)
    click.echo(f"{variant}: schedule {config.schedule} done; "
               f"checkpoint saved to {out_path}")


def _model_from_checkpoint(ckpt_path, data_dir):
    from .checkpoint import apply_params

    params, manifest = load_checkpoint(ckpt_path)
    config = config_from_manifest(manifest["config"])
    corpus = load_corpus_dir(data_dir)
    _, kg, reviews, _, vocab = corpus
    model = C2CRSModel(config.model, vocab, kg, reviews)
    apply_params(model, params)
    model.eval()
    return model, corpus, config


def _write_report(report: dict, report_path):
    text = json.dumps(report, indent=2, sort_keys=True)
    if report_path:
        Path(report_path).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@main.command("eval-rec")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", type=click.Path())
@click.option("--mask-seen", is_flag=True, default=False,
              help="Drop items already recommended earlier in the conversation.")
def eval_rec(data_dir, ckpt_path, report_path, mask_seen):
    """Recall@{1,10,50} over the corpus' recommendation turns."""
    model, corpus, config = _model_from_checkpoint(ckpt_path, data_dir)
    instances = corpus_instances(corpus, config)
    report = evaluate_recommendation(model, instances, mask_seen=mask_seen,
                                     corpus=corpus)
    _write_report(report.as_dict(), report_path)


@main.command("eval-conv")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", type=click.Path())
@click.option("--generations", "generations_path", type=click.Path(),
              help="Transcript JSONL (default: alongside --report).")
@click.option("--max-len", default=30, show_default=True, type=int)
@click.option("--per-sentence", is_flag=True, default=False,
              help="Average per-response Distinct-n instead of pooling.")
def eval_conv(data_dir, ckpt_path, report_path, generations_path, max_len,
              per_sentence):
    """Distinct-{2,3,4} over greedy generations, plus a transcript."""
    model, corpus, config = _model_from_checkpoint(ckpt_path, data_dir)
    instances = corpus_instances(corpus, config)
    metrics, rows = evaluate_generation(model, corpus, instances,
                                        max_len=max_len,
                                        per_sentence=per_sentence)
    if generations_path is None:
        base = Path(report_path) if report_path else Path("generations.jsonl")
        generations_path = str(base.with_name("generations.jsonl"))
    with Path(generations_path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    _write_report(metrics, report_path)
    click.echo(f"transcript written to {generations_path}")


@main.command("serve")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True, type=int)
def serve_cmd(ckpt_path, data_dir, host, port):
    """Expose the checkpoint over the /api conversation endpoints."""
    import uvicorn

    from .serve import create_app, load_service

    service = load_service(ckpt_path, data_dir)
    click.echo(f"serving checkpoint {service.checkpoint_id} on {host}:{port}")
    uvicorn.run(create_app(service), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
