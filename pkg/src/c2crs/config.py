"""Model and training configuration, with YAML loading."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

STAGES = ("pretrain_coarse", "pretrain_fine", "finetune_rec", "finetune_conv")
MULTI_TASK = "multi_task"

DEFAULT_SCHEDULE = list(STAGES)


@dataclass
class ModelConfig:
    """Architecture and loss hyperparameters.

    ``d_conv`` is the width shared by the conversation encoder, review
    encoder and the response decoder; ``d_rec`` is the entity / recommender
    width; ``d_cl`` is the shared space the three views are projected into
    for contrastive comparison.
    """

    d_conv: int = 300
    d_rec: int = 128
    d_cl: int = 128
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 2
    ffn_width: int = 300
    n_rgcn_layers: int = 1
    z_norm: float = 1.0
    tau: float = 0.07
    coarse_weight: float = 0.2
    beta: float = 100.0
    gamma: float = 0.1
    dropout: float = 0.0
    max_positions: int = 1024
    # contrastive-loss behaviour switches
    literal_eq5: bool = False
    symmetric: bool = False
    exclude_same_conversation: bool = True
    # data views (disabled by ablation variants)
    use_conv_view: bool = True
    use_graph_view: bool = True
    use_review_view: bool = True

    def __post_init__(self):
        for name in ("d_conv", "d_rec", "d_cl", "n_enc_layers", "n_dec_layers",
                     "n_heads", "ffn_width", "n_rgcn_layers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.coarse_weight < 0:
            raise ValueError(f"coarse_weight must be >= 0, got {self.coarse_weight}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.d_conv % self.n_heads or self.d_cl <= 0:
            if self.d_conv % self.n_heads:
                raise ValueError(f"d_conv={self.d_conv} not divisible by n_heads={self.n_heads}")


@dataclass
class TrainConfig:
    """Optimization schedule; one optimizer state per stage."""

    model: ModelConfig = field(default_factory=ModelConfig)
    learning_rate: float = 0.001
    batch_size: int = 256
    grad_clip_max_norm: float = 0.1
    seed: int = 0
    max_context_len: int = 256
    max_response_len: int = 30
    # steps per stage; None means one pass over the instances
    coarse_steps: int | None = None
    fine_steps: int | None = None
    rec_steps: int | None = None
    conv_steps: int | None = None
    multi_task_steps: int | None = None
    schedule: list[str] = field(default_factory=lambda: list(DEFAULT_SCHEDULE))
    freeze_encoders: bool = False
    log_every: int = 1

    def __post_init__(self):
        if self.grad_clip_max_norm <= 0:
            raise ValueError(f"grad_clip_max_norm must be > 0, got {self.grad_clip_max_norm}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("coarse_steps", "fine_steps", "rec_steps", "conv_steps", "multi_task_steps"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be positive when set, got {value}")
        unknown = [s for s in self.schedule if s not in STAGES and s != MULTI_TASK]
        if unknown:
            raise ValueError(f"unknown stages in schedule: {unknown}")

    def steps_for(self, stage: str) -> int | None:
        return {
            "pretrain_coarse": self.coarse_steps,
            "pretrain_fine": self.fine_steps,
            "finetune_rec": self.rec_steps,
            "finetune_conv": self.conv_steps,
            MULTI_TASK: self.multi_task_steps,
        }[stage]


def _apply_section(obj, section: dict, label: str):
    known = {f.name for f in dataclasses.fields(obj)}
    for key, value in section.items():
        if key not in known:
            raise ValueError(f"unknown {label} config key: {key}")
        setattr(obj, key, value)


def load_config(path: str | Path) -> tuple[TrainConfig, dict]:
    """Read a YAML config with ``model`` / ``train`` / ``data`` sections.

    Returns the train config (with the model config embedded) and the raw
    ``data`` section (paths are resolved by the caller).
    """
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config root must be a mapping, got {type(raw).__name__}")
    model = ModelConfig()
    _apply_section(model, raw.get("model") or {}, "model")
    model.__post_init__()
    train = TrainConfig(model=model)
    _apply_section(train, raw.get("train") or {}, "train")
    train.__post_init__()
    return train, raw.get("data") or {}


def dump_config(config: TrainConfig) -> dict:
    out = dataclasses.asdict(config)
    return {"model": out.pop("model"), "train": out}


def config_from_manifest(section: dict) -> TrainConfig:
    model = ModelConfig(**section["model"])
    train_raw = dict(section["train"])
    return TrainConfig(model=model, **train_raw)
