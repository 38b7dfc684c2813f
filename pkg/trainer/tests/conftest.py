from __future__ import annotations

import json
import threading
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return REPO_ROOT


def write_toy_dataset(path: Path, n: int = 64) -> Path:
    with path.open("w", encoding="utf-8") as handle:
        for i in range(n):
            record = {
                "id": f"toy-{i}",
                "task": "toy",
                "mode": "text",
                "prompt_index": 0,
                "input": f"Q: item {i % 8} A:",
                "output": f"value {i % 8}",
            }
            handle.write(json.dumps(record) + "\n")
    return path


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory) -> Path:
    return write_toy_dataset(tmp_path_factory.mktemp("data") / "toy.jsonl")


@pytest.fixture(scope="session")
def quick_checkpoint(tmp_path_factory, toy_dataset) -> Path:
    from structune_trainer.train import TrainConfig, train

    out = tmp_path_factory.mktemp("ckpt") / "quick"
    config = TrainConfig(batch_size=8, micro_batch_size=4, max_steps=2)
    return train(toy_dataset, "tiny", config, out)


@pytest.fixture
def running_server(quick_checkpoint):
    from structune_trainer.serve import make_server

    server = make_server(quick_checkpoint, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    try:
        yield f"http://{host}:{port}/"
    finally:
        server.shutdown()
        server.server_close()
