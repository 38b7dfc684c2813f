"""Checkpoint loading, greedy generation, and the completion server.

The HTTP contract matches the evaluation harness: POST a JSON body
{"prompt": str, "max_tokens": int, "temperature": num, "stop": [str]}
and receive {"text": str}.  Temperature 0 decodes greedily, so repeated
requests for the same prompt return identical text.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import torch

from .data import BOS, EOS, decode_ids, encode_text
from .lora import apply_lora, load_adapter_state
from .model import build_base
from .train import ADAPTER_FILE, CHECKPOINT_FILE


def load_checkpoint(path):
    """Rebuild the frozen base and attach the trained adapter."""
    path = Path(path)
    meta = json.loads((path / CHECKPOINT_FILE).read_text(encoding="utf-8"))
    model = apply_lora(
        build_base(meta["base_model"], meta.get("seed", 0)), meta["lora_rank"]
    )
    state = torch.load(path / ADAPTER_FILE, map_location="cpu", weights_only=True)
    load_adapter_state(model, state)
    model.eval()
    return model, meta


def generate(model, prompt: str, max_tokens: int = 128,
             temperature: float = 0.0, stop: list[str] | None = None) -> str:
    """Decode a completion; greedy at temperature 0, truncated at the
    first stop string."""
    max_len = model.config.max_len
    context = [BOS] + encode_text(prompt)
    budget = max(1, min(max_tokens, max_len - 1))
    if len(context) > max_len - budget:
        context = context[-(max_len - budget):]
    generated: list[int] = []
    with torch.no_grad():
        for _ in range(budget):
            tokens = torch.tensor([context + generated], dtype=torch.long)
            logits = model(tokens)[0, -1]
            if temperature <= 0:
                next_id = int(torch.argmax(logits).item())
            else:
                probabilities = torch.softmax(logits / temperature, dim=-1)
                next_id = int(torch.multinomial(probabilities, 1).item())
            if next_id == EOS:
                break
            generated.append(next_id)
            if stop:
                text = decode_ids(generated)
                for marker in stop:
                    if marker and marker in text:
                        return text[: text.index(marker)]
    return decode_ids(generated)


def make_server(checkpoint, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    model, _ = load_checkpoint(checkpoint)
    lock = threading.Lock()

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            pass

        def _send(self, status: int, payload: dict):
            body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            self._send(200, {"status": "ok"})

        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", "0"))
                request = json.loads(self.rfile.read(length) or b"{}")
                prompt = request["prompt"]
                if not isinstance(prompt, str):
                    raise ValueError("prompt must be a string")
            except (ValueError, KeyError) as exc:
                self._send(400, {"error": f"bad request: {exc}"})
                return
            with lock:  # one generation at a time; requests queue safely
                text = generate(
                    model,
                    prompt,
                    max_tokens=int(request.get("max_tokens", 128)),
                    temperature=float(request.get("temperature", 0.0)),
                    stop=list(request.get("stop") or []),
                )
            self._send(200, {"text": text})

    return ThreadingHTTPServer((host, port), Handler)


def serve_forever(checkpoint, host: str, port: int) -> None:
    server = make_server(checkpoint, host, port)
    bound_host, bound_port = server.server_address[:2]
    print(f"serving {checkpoint} on http://{bound_host}:{bound_port}", flush=True)
    try:
        server.serve_forever()
    finally:
        server.server_close()
