"""A small causal transformer language model over bytes.

The built-in "tiny" base model is deliberately minimal so training and
serving smoke-run on a CPU; anything that walks like a causal LM with
nn.Linear projections can be LoRA-wrapped the same way.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .data import VOCAB_SIZE


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    max_len: int = 2048

    def to_dict(self) -> dict:
        return asdict(self)


class Attention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.qkv = nn.Linear(config.d_model, 3 * config.d_model)
        self.proj = nn.Linear(config.d_model, config.d_model)

    def forward(self, x):
        batch, length, width = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        heads = self.n_heads
        q = q.view(batch, length, heads, -1).transpose(1, 2)
        k = k.view(batch, length, heads, -1).transpose(1, 2)
        v = v.view(batch, length, heads, -1).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        out = out.transpose(1, 2).reshape(batch, length, width)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.up = nn.Linear(config.d_model, 4 * config.d_model)
        self.down = nn.Linear(4 * config.d_model, config.d_model)

    def forward(self, x):
        return self.down(F.gelu(self.up(x)))


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = Attention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.mlp = Mlp(config)

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class TinyCausalLM(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.tokens = nn.Embedding(config.vocab_size, config.d_model)
        self.positions = nn.Embedding(config.max_len, config.d_model)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.ln = nn.LayerNorm(config.d_model)
        self.head = nn.Linear(config.d_model, config.vocab_size, bias=False)

    def forward(self, token_ids):
        length = token_ids.shape[1]
        if length > self.config.max_len:
            raise ValueError(f"sequence of {length} exceeds max_len {self.config.max_len}")
        pos = torch.arange(length, device=token_ids.device)
        x = self.tokens(token_ids) + self.positions(pos)
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln(x))


def build_base(identifier: str, seed: int = 0) -> TinyCausalLM:
    """Resolve a base-model identifier.

    "tiny" constructs the built-in model with a deterministic seed;
    any other identifier is treated as a path to a checkpoint saved by
    save_base().
    """
    if identifier == "tiny":
        generator_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        model = TinyCausalLM(ModelConfig())
        torch.random.set_rng_state(generator_state)
        return model
    payload = torch.load(identifier, map_location="cpu", weights_only=True)
    model = TinyCausalLM(ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    return model


def save_base(model: TinyCausalLM, path) -> None:
    torch.save({"config": model.config.to_dict(), "state": model.state_dict()}, path)
