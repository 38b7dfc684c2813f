"""Fine-tunes a causal LM on toolkit datasets and serves completions."""

from .data import BOS, EOS, PAD, VOCAB_SIZE, encode_example, pad_batch, read_dataset
from .lora import LoraLinear, apply_lora
from .model import ModelConfig, TinyCausalLM, build_base, save_base
from .serve import generate, load_checkpoint, make_server
from .train import TrainConfig, masked_step_loss, train

__version__ = "0.1.0"
