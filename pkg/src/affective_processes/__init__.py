"""Neural-process regression of per-frame affect labels conditioned on pseudo-labelled context frames.

The package is plain numpy: a small reverse-mode autodiff engine
(:mod:`.autodiff`), diagonal Gaussians (:mod:`.distributions`), the
encoder / aggregator / latent / decoder model (:mod:`.model`), context
selection (:mod:`.context`), training (:mod:`.training`), evaluation
(:mod:`.evaluation`, :mod:`.metrics`), synthetic and on-disk data
(:mod:`.data`) and a command line (:mod:`.cli`).
"""
from .config import CONTEXT_MODES, LOSS_VARIANTS, MODEL_VARIANTS, PROTOCOL_CONSTANTS, ModelConfig, RunConfig
from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split
from .errors import APError, CheckpointError, ContractError, DataFormatError, DomainError, ShapeError
from .evaluation import EvalReport, context_sweep, evaluate, sample_traces
from .metrics import ccc, icc, mse
from .model import forward, forward_batch, init_params
from .sequence import ContextTargetSplit, Sequence
from .training import train, train_step
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "APError", "CheckpointError", "ContextTargetSplit", "ContractError", "CONTEXT_MODES",
    "DataFormatError", "DomainError", "EvalReport", "LOSS_VARIANTS", "MODEL_VARIANTS",
    "ModelConfig", "PROTOCOL_CONSTANTS", "RunConfig", "Sequence", "ShapeError", "SyntheticSpec",
    "ccc", "context_sweep", "evaluate", "forward", "forward_batch", "generate_synthetic",
    "icc", "init_params", "load_checkpoint", "load_dataset", "mse", "sample_traces",
    "save_checkpoint", "save_dataset", "split", "train", "train_step",
]
