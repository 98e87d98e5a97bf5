"""Run and model configuration, with defaults from the reference training protocol."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

from .errors import ContractError

MODEL_VARIANTS = ("latent", "deterministic", "latent+det", "latent+det+att", "no_labels")
LOSS_VARIANTS = ("nll", "nll+kl", "nll+reg", "nll+reg+kl")
CONTEXT_MODES = ("lowest", "highest", "random")
TASKS = ("valence_arousal", "action_units")
REG_POOLING = ("mean", "sum")

# Values reported for the training/evaluation protocol. Flag defaults are checked
# against this table by the test-suite.
PROTOCOL_CONSTANTS: Dict[str, Any] = {
    "feature_dim": 512,
    "latent_dim": 128,
    "seq_len_min": 35,
    "seq_len_max": 70,
    "context_min": 3,
    "label_mix_prob": 0.5,
    "test_seq_len": 70,
    "num_context_eval": 40,
    "lambda_kl": 1.0,
    "lambda_reg": 1.0,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "epochs": 25,
    "iters_per_epoch": 1000,
    "split_ratios": (8, 1, 1),
    "valence_arousal": {"batch_size": 16, "lr": 0.00025, "weight_decay": 0.0001, "label_dim": 2},
    "action_units": {"batch_size": 6, "lr": 0.0001, "weight_decay": 0.0005, "label_dim": 5},
}


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths and switches of the encoder / latent encoder / decoder."""

    feature_dim: int = 512
    label_dim: int = 2
    latent_dim: int = 128
    encoder_hidden: Tuple[int, ...] = (512, 256)
    decoder_hidden: Tuple[int, ...] = (256, 128, 64)
    sigma_min: float = 0.01
    variant: str = "latent"
    attention_heads: int = 2
    attention_head_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(w) for w in self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(int(w) for w in self.decoder_hidden))
        if self.variant not in MODEL_VARIANTS:
            raise ContractError(f"unknown model variant {self.variant!r}; choose from {MODEL_VARIANTS}")
        dims = (self.feature_dim, self.label_dim, self.latent_dim, *self.encoder_hidden, *self.decoder_hidden)
        if min(dims) <= 0:
            raise ContractError("all layer widths must be positive")
        if len(self.encoder_hidden) != 2 or len(self.decoder_hidden) != 3:
            raise ContractError("encoder needs 2 hidden widths and decoder 3 (three-layer MLPs)")
        if self.sigma_min <= 0:
            raise ContractError("sigma_min must be positive")
        if self.uses_attention and self.latent_dim % self.attention_heads:
            raise ContractError("latent_dim must be divisible by attention_heads")

    @property
    def stochastic(self) -> bool:
        return self.variant != "deterministic"

    @property
    def uses_det_path(self) -> bool:
        return self.variant in ("latent+det", "latent+det+att")

    @property
    def uses_attention(self) -> bool:
        return self.variant == "latent+det+att"

    @property
    def uses_labels(self) -> bool:
        return self.variant != "no_labels"


@dataclass(frozen=True)
class RunConfig:
    """Every hyperparameter of one training run."""

    task: str = "valence_arousal"
    seq_len_min: int = PROTOCOL_CONSTANTS["seq_len_min"]
    seq_len_max: int = PROTOCOL_CONSTANTS["seq_len_max"]
    context_min: int = PROTOCOL_CONSTANTS["context_min"]
    test_seq_len: int = PROTOCOL_CONSTANTS["test_seq_len"]
    batch_size: int = 16
    lr: float = 0.00025
    weight_decay: float = 0.0001
    epochs: int = PROTOCOL_CONSTANTS["epochs"]
    iters_per_epoch: int = PROTOCOL_CONSTANTS["iters_per_epoch"]
    label_mix_prob: float = PROTOCOL_CONSTANTS["label_mix_prob"]
    loss_variant: str = "nll+reg+kl"
    lambda_kl: float = PROTOCOL_CONSTANTS["lambda_kl"]
    lambda_reg: float = PROTOCOL_CONSTANTS["lambda_reg"]
    reg_pooling: str = "mean"
    adam_beta1: float = PROTOCOL_CONSTANTS["adam_beta1"]
    adam_beta2: float = PROTOCOL_CONSTANTS["adam_beta2"]
    adam_eps: float = 1e-8
    seed: int = 0
    num_context_eval: int = PROTOCOL_CONSTANTS["num_context_eval"]
    eval_context_mode: str = "lowest"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            object.__setattr__(self, "model", ModelConfig(**self.model))
        if self.task not in TASKS:
            raise ContractError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ContractError(f"unknown loss variant {self.loss_variant!r}; choose from {LOSS_VARIANTS}")
        if self.eval_context_mode not in CONTEXT_MODES:
            raise ContractError(f"unknown context mode {self.eval_context_mode!r}")
        if self.reg_pooling not in REG_POOLING:
            raise ContractError(f"unknown reg pooling {self.reg_pooling!r}")
        if not 1 <= self.context_min <= self.seq_len_min <= self.seq_len_max:
            raise ContractError("need 1 <= context_min <= seq_len_min <= seq_len_max")
        for name in ("test_seq_len", "batch_size", "epochs", "iters_per_epoch", "num_context_eval"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.lr <= 0 or self.weight_decay < 0 or self.adam_eps <= 0:
            raise ContractError("lr and adam_eps must be positive, weight_decay non-negative")
        if self.lambda_kl < 0 or self.lambda_reg < 0:
            raise ContractError("loss weights must be non-negative")
        if not 0.0 <= self.label_mix_prob <= 1.0:
            raise ContractError("label_mix_prob must lie in [0, 1]")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ContractError("Adam betas must lie in [0, 1)")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "RunConfig":
        """Defaults for ``task`` (batch size, lr and weight decay differ per task)."""
        if task not in TASKS:
            raise ContractError(f"unknown task {task!r}; choose from {TASKS}")
        per_task = PROTOCOL_CONSTANTS[task]
        model = overrides.pop("model", None)
        if model is None:
            model = ModelConfig(label_dim=per_task["label_dim"])
        kwargs = dict(
            task=task,
            batch_size=per_task["batch_size"],
            lr=per_task["lr"],
            weight_decay=per_task["weight_decay"],
        )
        kwargs.update(overrides)
        return cls(model=model, **kwargs)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.iters_per_epoch

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_model(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, model=dataclasses.replace(self.model, **changes))

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d["model"]["encoder_hidden"] = list(self.model.encoder_hidden)
        d["model"]["decoder_hidden"] = list(self.model.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown RunConfig fields: {sorted(unknown)}")
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig(**d["model"])
        return cls(**d)
