"""Task-aware prompt compression: a per-token keep/drop policy tuned with REINFORCE."""

__version__ = "0.1.0"

from .compressor import CompressedPrompt, CompressionStats, compress, compress_document
from .corpus import Sample, TokenSequence, Vocabulary, load_dataset, tokenize
from .evaluator import EvalReport, compare, evaluate
from .oracle import CachedOracle, LocalOracle, OracleRequest, RemoteOracle
from .policy import Dims, PolicyParameters, forward, init_params, loss_and_gradient
from .rewards import RewardConfig, shaped_reward
from .trainer import TrainConfig, run_training, train_step

__all__ = [
    "CachedOracle", "CompressedPrompt", "CompressionStats", "Dims", "EvalReport", "LocalOracle",
    "OracleRequest", "PolicyParameters", "RemoteOracle", "RewardConfig", "Sample", "TokenSequence",
    "TrainConfig", "Vocabulary", "compare", "compress", "compress_document", "evaluate", "forward",
    "init_params", "load_dataset", "loss_and_gradient", "run_training", "shaped_reward", "tokenize",
    "train_step",
]
