"""Merged per-run configuration: JSON config file overridden by command-line flags."""
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from dmlm.core.config import settings

Backbone = Literal["recurrent", "transformer"]
Flavor = Literal["baseline", "dmlm"]
CliPhase = Literal["dep", "finetune", "baseline"]

PHASE_NAMES = {"dep": "dep_modeling", "finetune": "mixture_finetune", "baseline": "baseline"}
KNOWN_METRICS = ("ppl", "bleu", "distinct", "self-bleu", "lm", "rlm")
INPUT_PATH_FIELDS = ("conllu", "valid_conllu", "test_conllu", "data", "init", "ckpt", "prompt_file",
                     "samples", "refs", "config")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Literal["prepare", "train", "generate", "eval", "attn-dump"]
    config: Optional[Path] = None

    # paths
    conllu: List[Path] = Field(default_factory=list)
    valid_conllu: List[Path] = Field(default_factory=list)
    test_conllu: List[Path] = Field(default_factory=list)
    data: Optional[Path] = None
    init: Optional[Path] = None
    ckpt: Optional[Path] = None
    prompt_file: Optional[Path] = None
    samples: Optional[Path] = None
    refs: Optional[Path] = None
    out: Optional[Path] = None
    log: Optional[Path] = None

    # preparation
    min_count: int = Field(default=settings.MIN_COUNT, ge=1)
    max_size: int = Field(default=settings.MAX_VOCAB_SIZE, gt=4)
    max_len: Optional[int] = Field(default=None, ge=1)
    lowercase: bool = settings.LOWERCASE

    # model
    backbone: Backbone = "recurrent"
    flavor: Flavor = "dmlm"
    embed_dim: Optional[int] = Field(default=None, gt=0)
    hidden_dim: Optional[int] = Field(default=None, gt=0)
    model_dim: Optional[int] = Field(default=None, gt=0)
    num_heads: Optional[int] = Field(default=None, gt=0)
    num_layers: Optional[int] = Field(default=None, gt=0)
    ffn_dim: Optional[int] = Field(default=None, gt=0)
    dropout_rate: Optional[float] = Field(default=None, ge=0.0, lt=1.0)

    # training
    phase: Optional[CliPhase] = None
    lr: Optional[float] = Field(default=None, gt=0)
    weight_decay: Optional[float] = Field(default=None, ge=0)
    grad_clip_norm: Optional[float] = Field(default=None, gt=0)
    batch_size: Optional[int] = Field(default=None, gt=0)
    max_epochs: Optional[int] = Field(default=None, gt=0)
    patience: Optional[int] = Field(default=None, ge=1)
    allow_from_scratch: bool = False

    # generation / evaluation
    seed: int = settings.DEFAULT_SEED
    context_window: int = Field(default=settings.CONTEXT_WINDOW, ge=0)
    p: float = Field(default=0.5, gt=0.0, le=1.0)
    p_sweep: List[float] = Field(default_factory=list)
    n_samples: int = Field(default=1, ge=1)
    metrics: List[str] = Field(default_factory=lambda: ["ppl"])
    bleu_orders: List[int] = Field(default_factory=lambda: [1, 2])
    distinct_orders: List[int] = Field(default_factory=lambda: [2, 3])
    self_bleu_orders: List[int] = Field(default_factory=lambda: [2, 3])
    rlm_min_samples: int = Field(default=settings.RLM_MIN_SAMPLES, ge=1)
    sentence: Optional[str] = None

    @field_validator("metrics")
    @classmethod
    def known_metrics(cls, v: List[str]) -> List[str]:
        unknown = [m for m in v if m not in KNOWN_METRICS]
        if unknown:
            raise ValueError(f"unknown metrics {unknown}; choose from {KNOWN_METRICS}")
        return v

    @field_validator("p_sweep")
    @classmethod
    def sweep_in_range(cls, v: List[float]) -> List[float]:
        bad = [p for p in v if not 0.0 < p <= 1.0]
        if bad:
            raise ValueError(f"nucleus p values must be in (0, 1], got {bad}")
        return v

    @field_validator("bleu_orders", "distinct_orders", "self_bleu_orders")
    @classmethod
    def positive_orders(cls, v: List[int]) -> List[int]:
        if not v or min(v) < 1:
            raise ValueError(f"metric orders must be positive integers, got {v}")
        return v

    def missing_inputs(self) -> List[Path]:
        missing = []
        for name in INPUT_PATH_FIELDS:
            value = getattr(self, name)
            for path in value if isinstance(value, list) else [value]:
                if path is not None and not Path(path).exists():
                    missing.append(Path(path))
        return missing

    @property
    def train_phase(self) -> str:
        if self.phase is not None:
            return PHASE_NAMES[self.phase]
        return "baseline" if self.flavor == "baseline" else "dep_modeling"
