import math
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator


class GenerationSettings(BaseModel):
    p: float = Field(..., gt=0.0, le=1.0, examples=[0.5])
    max_len: int = Field(..., ge=1, examples=[50])
    seed: int = Field(..., examples=[1234])
    prompt: Optional[List[str]] = None
    context_window: int = Field(default=64, ge=0)


class GenerationReport(BaseModel):
    samples: List[List[str]] = Field(default_factory=list)
    settings: Optional[GenerationSettings] = None
    metrics: Dict[str, float] = Field(default_factory=dict)

    @field_validator("metrics")
    @classmethod
    def finite_metrics(cls, v: Dict[str, float]) -> Dict[str, float]:
        bad = [name for name, value in v.items() if not math.isfinite(value)]
        if bad:
            raise ValueError(f"non-finite metric values: {bad}")
        return v
