"""LoRA fine-tuning over toolkit datasets.

Training sequences are input + separator + output with the loss masked
on the input portion, so gradients come only from output tokens.
Hyperparameter defaults: rank 8, 3 epochs, batch size 64 (reached via
gradient accumulation over micro-batches), peak learning rate 1e-3 with
linear decay, maximum length 2048.  Examples over the maximum length
are dropped and counted in the log.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch.nn import functional as F

from .data import encode_example, pad_batch, read_dataset
from .lora import adapter_state, apply_lora, trainable_parameters
from .model import build_base

ADAPTER_FILE = "adapter.pt"
CHECKPOINT_FILE = "checkpoint.json"
HPARAMS_FILE = "hparams.json"
LOG_FILE = "train_log.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    lora_rank: int = 8
    epochs: int = 3
    batch_size: int = 64
    peak_lr: float = 1e-3
    schedule: str = "linear"
    max_length: int = 2048
    seed: int = 0
    micro_batch_size: int = 8
    max_steps: int | None = None
    separator: str = "\n"
    padding_side: str = "right"

    def __post_init__(self):
        if self.schedule != "linear":
            raise ValueError("only linear learning-rate decay is supported")
        if self.padding_side not in ("left", "right"):
            raise ValueError("padding_side must be left or right")


def masked_step_loss(model, tokens, labels) -> torch.Tensor:
    """Next-token cross entropy over unmasked (output) positions only."""
    logits = model(tokens)
    return F.cross_entropy(
        logits[:, :-1].reshape(-1, logits.shape[-1]),
        labels[:, 1:].reshape(-1),
        ignore_index=-100,
    )


def train(dataset_path, base_model: str, config: TrainConfig, out_dir) -> Path:
    """Fine-tune and write a servable checkpoint directory.

    The checkpoint holds the adapter tensors plus everything needed to
    rebuild the frozen base (identifier, seed, model shape); the log
    records per-step loss and the effective hyperparameters.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = read_dataset(dataset_path)
    examples = []
    n_dropped = 0
    for record in records:
        encoded = encode_example(record, config.separator, config.max_length)
        if encoded is None:
            n_dropped += 1
        else:
            examples.append(encoded)
    if not examples and (config.max_steps or config.epochs):
        raise ValueError("no trainable examples after length filtering")

    torch.manual_seed(config.seed)
    model = apply_lora(build_base(base_model, config.seed), config.lora_rank)
    model.train()

    steps_per_epoch = math.ceil(len(examples) / config.batch_size) if examples else 0
    total_steps = (config.max_steps if config.max_steps is not None
                   else config.epochs * steps_per_epoch)
    optimizer = torch.optim.AdamW(trainable_parameters(model), lr=config.peak_lr)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer,
        lambda step: max(0.0, 1.0 - step / total_steps) if total_steps else 0.0,
    )

    order_rng = random.Random(config.seed)
    step = 0
    log_path = out_dir / LOG_FILE
    with log_path.open("w", encoding="utf-8") as log:
        while step < total_steps:
            order = list(range(len(examples)))
            order_rng.shuffle(order)
            for start in range(0, len(order), config.batch_size):
                if step >= total_steps:
                    break
                batch = [examples[i] for i in order[start:start + config.batch_size]]
                optimizer.zero_grad()
                losses = []
                n_micro = math.ceil(len(batch) / config.micro_batch_size)
                for micro_start in range(0, len(batch), config.micro_batch_size):
                    micro = batch[micro_start:micro_start + config.micro_batch_size]
                    tokens, labels = pad_batch(micro, config.padding_side)
                    loss = masked_step_loss(model, tokens, labels)
                    (loss / n_micro).backward()
                    losses.append(loss.item())
                optimizer.step()
                scheduler.step()
                step += 1
                log.write(json.dumps({
                    "step": step,
                    "loss": sum(losses) / len(losses),
                    "lr": scheduler.get_last_lr()[0],
                }) + "\n")

    hparams = {**asdict(config), "base_model": base_model,
               "n_examples": len(examples), "n_dropped": n_dropped,
               "steps": step}
    (out_dir / HPARAMS_FILE).write_text(
        json.dumps(hparams, indent=2) + "\n", encoding="utf-8")
    torch.save(adapter_state(model), out_dir / ADAPTER_FILE)
    (out_dir / CHECKPOINT_FILE).write_text(json.dumps({
        "base_model": base_model,
        "seed": config.seed,
        "lora_rank": config.lora_rank,
        "model": model.config.to_dict(),
        "separator": config.separator,
    }, indent=2) + "\n", encoding="utf-8")
    return out_dir
