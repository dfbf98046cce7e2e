from typing import Literal, Optional

from pydantic import BaseModel, Field

Phase = Literal["dep_modeling", "mixture_finetune", "baseline"]

DEFAULT_LR = {"recurrent": 1e-3, "transformer": 5e-4}


class TrainConfig(BaseModel):
    phase: Phase = "dep_modeling"
    lr: Optional[float] = Field(default=None, gt=0)  # None -> per-backbone default
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.98, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    grad_clip_norm: float = Field(default=0.25, gt=0)
    batch_size: int = Field(default=16, gt=0)
    max_epochs: int = Field(default=50, gt=0)
    early_stop_patience: int = Field(default=10, ge=1)
    seed: int = 1234
    context_window: int = Field(default=64, ge=0)  # 0 means unbounded
    allow_from_scratch: bool = False

    def resolved_lr(self, model_kind: str) -> float:
        return self.lr if self.lr is not None else DEFAULT_LR[model_kind]


class EpochLog(BaseModel):
    """One row of the JSON-lines training log."""
    phase: Phase
    epoch: int
    train_loss: Optional[float] = None
    val_loss: float
    wall_time: float
    data_order_hash: Optional[str] = None
