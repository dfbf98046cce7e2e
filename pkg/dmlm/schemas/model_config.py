from typing import Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator


class RecurrentConfig(BaseModel):
    kind: Literal["recurrent"] = "recurrent"
    vocab_size: int = Field(..., gt=0)
    embed_dim: int = Field(default=128, gt=0)
    hidden_dim: int = Field(default=128, gt=0)
    num_layers: int = Field(default=2, gt=0)
    dropout_rate: float = Field(default=0.2, ge=0.0, lt=1.0)
    tie_embeddings: bool = True

    @property
    def output_dim(self) -> int:
        """Width of the last layer. With tied embeddings the top layer is sized to the embedding."""
        return self.embed_dim if self.tie_embeddings else self.hidden_dim

    def layer_sizes(self) -> list:
        """(input, hidden) sizes of each stacked cell."""
        sizes = []
        in_dim = self.embed_dim
        for layer in range(self.num_layers):
            out_dim = self.output_dim if layer == self.num_layers - 1 else self.hidden_dim
            sizes.append((in_dim, out_dim))
            in_dim = out_dim
        return sizes


class TransformerConfig(BaseModel):
    kind: Literal["transformer"] = "transformer"
    vocab_size: int = Field(..., gt=0)
    model_dim: int = Field(default=128, gt=0)
    num_heads: int = Field(default=4, gt=0)
    num_layers: int = Field(default=2, gt=0)
    ffn_dim: int = Field(default=512, gt=0)
    dropout_rate: float = Field(default=0.1, ge=0.0, lt=1.0)
    max_len: int = Field(default=128, gt=0)
    attention_source_layer: Optional[int] = None  # 1-based; None -> penultimate layer

    @model_validator(mode="after")
    def heads_and_source_layer(self):
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if self.attention_source_layer is None:
            self.attention_source_layer = max(1, self.num_layers - 1)
        if not 1 <= self.attention_source_layer <= self.num_layers:
            raise ValueError(
                f"attention_source_layer must be in 1..{self.num_layers}, got {self.attention_source_layer}")
        return self

    @property
    def output_dim(self) -> int:
        return self.model_dim

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


ModelConfig = Union[RecurrentConfig, TransformerConfig]


def model_config_from_dict(data: dict) -> ModelConfig:
    kind = data.get("kind", "recurrent")
    if kind == "transformer":
        return TransformerConfig(**data)
    return RecurrentConfig(**data)
