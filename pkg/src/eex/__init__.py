"""eex: a speed-tunable early-exit transformer classification engine.

Train a small encoder with a teacher head, distill per-layer student
heads from the teacher's soft labels, then run inference where each
sample leaves the batch at the first layer confident enough about it.
"""

from .autodiff import Tensor, backward, no_grad
from .data import Dataset, EncodedBatch, Vocab, build_vocab, encode, encode_dataset, generate_synthetic, load_tsv
from .errors import ConfigError, ContractError, DataError, EexError, NonFiniteError, ShapeError
from .flops import FlopsBreakdown, breakdown, classifier_flops, full_model_flops, trace_flops, transformer_flops
from .inference import InferenceTrace, Speed, adaptive_infer, fixed_layer_infer, uncertainty
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .model import EarlyExitTransformer, ModelConfig
from .optim import OptimizerConfig, Parameter, adamw_step, learning_rate_at
from .stats import LuhaReport, SweepReport, accuracy, exit_layer_distribution, luha_bins, luha_terciles, speed_sweep, uncertainty_histograms
from .training import ConvergenceLog, TrainPlan, cross_entropy, distill_loss, fine_tune, joint_train_ablation, kl_divergence, self_distill

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "no_grad",
    "Dataset", "EncodedBatch", "Vocab", "build_vocab", "encode",
    "encode_dataset", "generate_synthetic", "load_tsv",
    "EexError", "ConfigError", "DataError", "ContractError", "ShapeError", "NonFiniteError",
    "FlopsBreakdown", "breakdown", "transformer_flops", "classifier_flops",
    "full_model_flops", "trace_flops",
    "InferenceTrace", "Speed", "adaptive_infer", "fixed_layer_infer", "uncertainty",
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "EarlyExitTransformer", "ModelConfig",
    "OptimizerConfig", "Parameter", "adamw_step", "learning_rate_at",
    "LuhaReport", "SweepReport", "accuracy", "exit_layer_distribution",
    "luha_bins", "luha_terciles", "speed_sweep", "uncertainty_histograms",
    "ConvergenceLog", "TrainPlan", "cross_entropy", "distill_loss",
    "fine_tune", "joint_train_ablation", "kl_divergence", "self_distill",
    "__version__",
]
