"""Low-rank adapters over frozen linear layers.

Each wrapped layer computes base(x) + x A^T B^T with A randomly
initialized and B zero, so a fresh adapter leaves the base model's
behavior bit-identical.  Scaling is 1 (alpha equal to rank); only A and
B receive gradients.  Adapters attach to the attention qkv/proj and MLP
up/down projections of every block.
"""

from __future__ import annotations

import torch
from torch import nn

TARGETS = ("attn.qkv", "attn.proj", "mlp.up", "mlp.down")


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int):
        super().__init__()
        self.base = base
        self.rank = rank
        for parameter in self.base.parameters():
            parameter.requires_grad_(False)
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=5 ** 0.5)

    def forward(self, x):
        return self.base(x) + (x @ self.lora_a.T) @ self.lora_b.T


def apply_lora(model: nn.Module, rank: int) -> nn.Module:
    """Freeze the model and wrap the per-block target projections."""
    for parameter in model.parameters():
        parameter.requires_grad_(False)
    for block in model.blocks:
        block.attn.qkv = LoraLinear(block.attn.qkv, rank)
        block.attn.proj = LoraLinear(block.attn.proj, rank)
        block.mlp.up = LoraLinear(block.mlp.up, rank)
        block.mlp.down = LoraLinear(block.mlp.down, rank)
    return model


def trainable_parameters(model: nn.Module):
    return [p for p in model.parameters() if p.requires_grad]


def adapter_state(model: nn.Module) -> dict:
    return {
        name: tensor
        for name, tensor in model.state_dict().items()
        if "lora_a" in name or "lora_b" in name
    }


def load_adapter_state(model: nn.Module, state: dict) -> None:
    missing, unexpected = model.load_state_dict(state, strict=False)
    if unexpected:
        raise ValueError(f"unexpected adapter tensors: {unexpected}")
    remaining = [name for name in missing if "lora_" in name]
    if remaining:
        raise ValueError(f"adapter tensors missing from state: {remaining}")
