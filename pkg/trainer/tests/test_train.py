from __future__ import annotations

import json

import pytest
import torch
from torch.nn import functional as F

from structune_trainer.data import PAD, encode_example, pad_batch, read_dataset
from structune_trainer.lora import LoraLinear, apply_lora, trainable_parameters
from structune_trainer.model import build_base
from structune_trainer.serve import load_checkpoint
from structune_trainer.train import TrainConfig, masked_step_loss, train

from conftest import write_toy_dataset


def test_config_defaults_match_reported_hyperparameters():
    config = TrainConfig()
    assert config.lora_rank == 8
    assert config.epochs == 3
    assert config.batch_size == 64
    assert config.peak_lr == 1e-3
    assert config.schedule == "linear"
    assert config.max_length == 2048


def test_train_smoke_loss_decreases(toy_dataset, tmp_path):
    config = TrainConfig(micro_batch_size=8, max_steps=50)
    out = train(toy_dataset, "tiny", config, tmp_path / "smoke")
    steps = [json.loads(line) for line in (out / "train_log.jsonl").read_text().splitlines()]
    assert len(steps) == 50
    assert steps[0]["step"] == 1 and steps[-1]["step"] == 50
    first = sum(s["loss"] for s in steps[:5]) / 5
    last = sum(s["loss"] for s in steps[-5:]) / 5
    assert last < first, f"loss did not decrease: first={first:.4f} last={last:.4f}"
    # linear decay reaches zero on the final step
    assert steps[-1]["lr"] == pytest.approx(0.0)
    assert steps[0]["lr"] < config.peak_lr


def test_default_hyperparameters_are_logged(toy_dataset, tmp_path):
    out = train(toy_dataset, "tiny", TrainConfig(), tmp_path / "defaults")
    hparams = json.loads((out / "hparams.json").read_text())
    assert hparams["lora_rank"] == 8
    assert hparams["epochs"] == 3
    assert hparams["batch_size"] == 64
    assert hparams["peak_lr"] == 1e-3
    assert hparams["max_length"] == 2048
    assert hparams["steps"] == 3  # 64 examples / batch 64 = 1 step per epoch
    assert hparams["n_dropped"] == 0


def test_zero_epochs_checkpoint_equals_base(toy_dataset, tmp_path):
    out = train(toy_dataset, "tiny", TrainConfig(epochs=0, seed=11), tmp_path / "zero")
    assert (out / "train_log.jsonl").read_text() == ""
    assert json.loads((out / "hparams.json").read_text())["steps"] == 0
    model, meta = load_checkpoint(out)
    base = build_base("tiny", 11)
    probe = torch.randint(0, 259, (2, 12))
    with torch.no_grad():
        assert torch.equal(model(probe), base(probe))


def test_overlong_examples_are_dropped_and_counted(tmp_path):
    dataset = write_toy_dataset(tmp_path / "data.jsonl", n=8)
    with dataset.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps({
            "id": "long", "task": "toy", "mode": "text", "prompt_index": 0,
            "input": "Q:", "output": "x" * 5000,
        }) + "\n")
    config = TrainConfig(batch_size=4, micro_batch_size=4, max_steps=1)
    out = train(dataset, "tiny", config, tmp_path / "drop")
    hparams = json.loads((out / "hparams.json").read_text())
    assert hparams["n_dropped"] == 1
    assert hparams["n_examples"] == 8


def test_loss_is_masked_to_output_positions(toy_dataset):
    records = read_dataset(toy_dataset)[:4]
    examples = [encode_example(r, "\n", 2048) for r in records]
    tokens, labels = pad_batch(examples)
    torch.manual_seed(0)
    model = apply_lora(build_base("tiny", 0), rank=8)

    loss = masked_step_loss(model, tokens, labels)
    with torch.no_grad():
        logits = model(tokens)
    shifted_logits = logits[:, :-1].reshape(-1, logits.shape[-1])
    shifted_labels = labels[:, 1:].reshape(-1)
    keep = shifted_labels != -100
    manual = F.cross_entropy(shifted_logits[keep], shifted_labels[keep])
    assert torch.isclose(loss, manual)

    # scoring every position (prompt included) must give a different loss
    full_labels = torch.where(tokens == PAD, torch.full_like(tokens, -100), tokens)
    full = masked_step_loss(model, tokens, full_labels)
    assert not torch.isclose(loss, full)

    # gradient flows only from output positions
    logits = model(tokens)
    logits.retain_grad()
    F.cross_entropy(
        logits[:, :-1].reshape(-1, logits.shape[-1]),
        labels[:, 1:].reshape(-1),
        ignore_index=-100,
    ).backward()
    grad = logits.grad[:, :-1].reshape(-1, logits.shape[-1])
    masked_rows = labels[:, 1:].reshape(-1) == -100
    assert torch.all(grad[masked_rows] == 0)
    assert torch.any(grad[~masked_rows] != 0)
    assert torch.all(logits.grad[:, -1] == 0)  # nothing follows the last position


def test_only_adapter_parameters_train():
    model = apply_lora(build_base("tiny", 0), rank=8)
    trainable = trainable_parameters(model)
    assert trainable
    for parameter in trainable:
        assert parameter.requires_grad
    names = [name for name, p in model.named_parameters() if p.requires_grad]
    assert names and all("lora_" in name for name in names)
    n_trainable = sum(p.numel() for p in trainable)
    n_total = sum(p.numel() for p in model.parameters())
    assert n_trainable < n_total * 0.5


def test_lora_starts_as_identity():
    torch.manual_seed(3)
    base = torch.nn.Linear(16, 8)
    wrapped = LoraLinear(base, rank=4)
    x = torch.randn(5, 16)
    assert torch.equal(wrapped(x), base(x))
    assert wrapped.lora_b.abs().sum() == 0


def test_read_dataset_rejects_bad_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a"}\n')
    with pytest.raises(ValueError):
        read_dataset(path)
