"""Dataset reading and byte-level tokenization.

The trainer consumes the toolkit's dataset JSONL format directly: one
object per line with fields id, task, mode, prompt_index, input, output,
where input/output hold the full rendered representations as strings.

Tokenization is byte-level: ids 0-255 are raw bytes, followed by PAD,
BOS, and EOS specials.  Training sequences are
BOS + input + separator + output + EOS with the loss masked on
everything up to and including the separator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

PAD = 256
BOS = 257
EOS = 258
VOCAB_SIZE = 259


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_ids(ids: list[int]) -> str:
    data = bytes(i for i in ids if i < 256)
    return data.decode("utf-8", errors="ignore")


@dataclass(frozen=True)
class TrainingExample:
    id: str
    ids: list[int]
    prompt_len: int  # positions before this index carry no loss


def read_dataset(path) -> list[dict]:
    records = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                record["input"], record["output"], record["id"]
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{line_number}: bad dataset line: {exc}")
            records.append(record)
    return records


def encode_example(record: dict, separator: str, max_length: int) -> TrainingExample | None:
    """Build one training sequence; None when it exceeds max_length."""
    prompt_ids = [BOS] + encode_text(record["input"]) + encode_text(separator)
    full = prompt_ids + encode_text(record["output"]) + [EOS]
    if len(full) > max_length:
        return None
    return TrainingExample(id=record["id"], ids=full, prompt_len=len(prompt_ids))


def pad_batch(examples: list[TrainingExample], padding_side: str = "right"):
    """Right- or left-pad a batch; labels are -100 on pads and prompts."""
    import torch

    width = max(len(ex.ids) for ex in examples)
    tokens = torch.full((len(examples), width), PAD, dtype=torch.long)
    labels = torch.full((len(examples), width), -100, dtype=torch.long)
    for row, ex in enumerate(examples):
        n = len(ex.ids)
        offset = 0 if padding_side == "right" else width - n
        tokens[row, offset:offset + n] = torch.tensor(ex.ids, dtype=torch.long)
        labels[row, offset + ex.prompt_len:offset + n] = torch.tensor(
            ex.ids[ex.prompt_len:], dtype=torch.long)
    return tokens, labels
