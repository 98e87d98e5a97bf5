"""Objective, optimiser, learning-rate schedule and the training loop.

The objective is ``nll + lambda_kl * kl + lambda_reg * reg`` where

* ``nll`` is the Gaussian negative log-likelihood of the ground-truth target
  labels, averaged over frames and then over the batch, under a single
  reparameterised latent draw;
* ``kl`` is ``KL(q(z | targets) || q(z | context))``;
* ``reg`` is the KL from the frame-pooled output Gaussian to ``N(0, 1)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence as Seq, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .context import select_random
from .distributions import HALF_LOG_2PI, DiagonalGaussian, kl_divergence, standard_normal
from .errors import ContractError
from .model import PredictiveOutput, forward_batch, init_params, pooling_matrix
from .sequence import Sequence

log = logging.getLogger(__name__)

# child seeds of the run seed, one stream per purpose
_INIT, _BATCH, _SEQ = 0, 1, 2


@dataclass(frozen=True)
class LossWeights:
    lambda_kl: float = 1.0
    lambda_reg: float = 1.0
    loss_variant: str = "nll+reg+kl"

    def __post_init__(self):
        if self.lambda_kl < 0 or self.lambda_reg < 0:
            raise ContractError("loss weights must be non-negative")
        if self.loss_variant not in ("nll", "nll+kl", "nll+reg", "nll+reg+kl"):
            raise ContractError(f"unknown loss variant {self.loss_variant!r}")

    @property
    def use_kl(self) -> bool:
        return "kl" in self.loss_variant

    @property
    def use_reg(self) -> bool:
        return "reg" in self.loss_variant

    @classmethod
    def from_config(cls, config: RunConfig) -> "LossWeights":
        return cls(config.lambda_kl, config.lambda_reg, config.loss_variant)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_nll(pred: PredictiveOutput, y_true) -> Tensor:
    """Mean over target frames (then over sequences) of ``-log N(y | mean, std)``.

    ``y_true`` holds one row per prediction row.
    """
    y = ad.as_tensor(y_true)
    if y.shape != pred.mean.shape:
        raise ContractError(f"targets {y.shape} do not match predictions {pred.mean.shape}")
    z = (y - pred.mean) / pred.std
    per_coord = 0.5 * ad.square(z) + ad.log(pred.std) + HALF_LOG_2PI
    per_frame = per_coord.sum(axis=1)
    weights = pooling_matrix(pred.segment, pred.num_sequences).sum(axis=0) / pred.num_sequences
    return (per_frame * weights).sum()


def loss_kl(ctx_latent: Optional[DiagonalGaussian], tgt_latent: Optional[DiagonalGaussian]) -> Tensor:
    """``KL(target latent || context latent)``, averaged over the batch rows.

    Without latents (deterministic variant) the term is identically 0.
    """
    if ctx_latent is None or tgt_latent is None:
        return ad.as_tensor(0.0)
    rows = ctx_latent.shape[0] if len(ctx_latent.shape) == 2 else 1
    return kl_divergence(tgt_latent, ctx_latent) * (1.0 / rows)


def loss_reg(pred: PredictiveOutput, pooling: str = "mean") -> Tensor:
    """KL from the frame-pooled predictive Gaussian of each sequence to ``N(0, 1)``.

    ``pooling="mean"`` averages predicted means and stds over frames;
    ``"sum"`` adds them up literally.
    """
    if pooling not in ("mean", "sum"):
        raise ContractError(f"unknown pooling {pooling!r}")
    A = ad.as_tensor(pooling_matrix(pred.segment, pred.num_sequences, normalize=pooling == "mean"))
    pooled = DiagonalGaussian(A @ pred.mean, A @ pred.std)
    return kl_divergence(pooled, standard_normal(pooled.shape)) * (1.0 / pred.num_sequences)


def compute_losses(
    pred: PredictiveOutput,
    y_true,
    ctx_latent: Optional[DiagonalGaussian],
    tgt_latent: Optional[DiagonalGaussian],
    weights: LossWeights,
    reg_pooling: str = "mean",
) -> Dict[str, Tensor]:
    """Components and weighted total; inactive components are exactly 0."""
    zero = ad.as_tensor(0.0)
    nll = loss_nll(pred, y_true)
    kl = loss_kl(ctx_latent, tgt_latent) if weights.use_kl else zero
    reg = loss_reg(pred, reg_pooling) if weights.use_reg else zero
    total = nll + weights.lambda_kl * kl + weights.lambda_reg * reg
    return {"nll": nll, "kl": kl, "reg": reg, "total": total}


# ---------------------------------------------------------------------------
# optimiser and schedule
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Adam moments and hyperparameters; ``step`` counts completed updates."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    lr: float = 0.00025
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: Mapping[str, np.ndarray], lr: float, weight_decay: float = 0.0,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "OptimizerState":
        zeros = {k: np.zeros_like(v) for k, v in params.items()}
        return cls({k: z.copy() for k, z in zeros.items()}, zeros, 0, lr, weight_decay, beta1, beta2, eps)

    @classmethod
    def from_config(cls, params: Mapping[str, np.ndarray], config: RunConfig) -> "OptimizerState":
        return cls.create(params, config.lr, config.weight_decay, config.adam_beta1,
                          config.adam_beta2, config.adam_eps)


def adam_step(
    state: OptimizerState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr_t: float,
) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update with L2 weight decay folded into the gradient."""
    if set(grads) != set(params) or set(params) != set(state.m):
        raise ContractError("gradients, parameters and optimiser state must share the same keys")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_params, m, v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient of {name} has shape {g.shape}, parameter {p.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_params[name] = p - lr_t * (m[name] / c1) / (np.sqrt(v[name] / c2) + state.eps)
    new_state = OptimizerState(m, v, t, state.lr, state.weight_decay, b1, b2, state.eps)
    return new_params, new_state


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Single cosine annealing cycle from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ContractError(f"need 0 <= step <= total_steps, got step={step}, total={total_steps}")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


# ---------------------------------------------------------------------------
# training step
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    params: Dict[str, np.ndarray]
    state: OptimizerState
    losses: Dict[str, float]
    skipped: List[str] = field(default_factory=list)


def sample_training_view(seq: Sequence, config: RunConfig, rng: np.random.Generator):
    """Random crop, context count, context frames and label source for one sequence.

    Returns ``None`` when the sequence is shorter than the minimum crop length.
    """
    n_total = len(seq)
    if n_total < config.seq_len_min:
        return None
    n = int(rng.integers(config.seq_len_min, min(config.seq_len_max, n_total) + 1))
    start = int(rng.integers(0, n_total - n + 1))
    window = seq.window(start, n)
    num_context = int(rng.integers(config.context_min, n + 1))
    source = "pseudo_label" if rng.random() < config.label_mix_prob else "ground_truth"
    split = select_random(n, num_context, rng, source)
    return window, split


def batch_loss(
    params,
    config: RunConfig,
    windows: Seq[Sequence],
    splits,
    noise: Optional[np.ndarray],
) -> Dict[str, Tensor]:
    """Forward a prepared batch and return the loss components (tensors)."""
    weights = LossWeights.from_config(config)
    cfg = config.model
    encode_targets = cfg.stochastic and weights.use_kl and weights.lambda_kl > 0
    pred, ctx, tgt = forward_batch(
        params, cfg, windows, splits, noise=noise, encode_targets=encode_targets
    )
    y = np.concatenate([w.labels[s.target_indices] for w, s in zip(windows, splits)])
    return compute_losses(
        pred, y, ctx.latent, None if tgt is None else tgt.latent, weights, config.reg_pooling
    )


def train_step(
    params: Mapping[str, np.ndarray],
    state: OptimizerState,
    batch: Seq[Sequence],
    config: RunConfig,
    rng: Optional[np.random.Generator] = None,
) -> StepResult:
    """Sample views of ``batch``, compute the objective, take one Adam step.

    Randomness for sequence ``b`` at step ``k`` comes from an independent
    stream seeded with ``(config.seed, k, b)`` unless ``rng`` is given.
    """
    if not batch:
        raise ContractError("empty batch")
    windows, splits, skipped = [], [], []
    for b, seq in enumerate(batch):
        r = rng if rng is not None else np.random.default_rng([config.seed, _SEQ, state.step, b])
        view = sample_training_view(seq, config, r)
        if view is None:
            log.warning("skipping sequence %s: %d frames < minimum crop %d",
                        seq.id, len(seq), config.seq_len_min)
            skipped.append(seq.id)
            continue
        windows.append(view[0])
        splits.append(view[1])
    if not windows:
        return StepResult(dict(params), state, {"nll": 0.0, "kl": 0.0, "reg": 0.0, "total": 0.0}, skipped)

    noise = None
    if config.model.stochastic:
        r = rng if rng is not None else np.random.default_rng([config.seed, _SEQ, state.step, len(batch)])
        noise = r.standard_normal((len(windows), config.model.latent_dim))

    tape = ad.Tape()
    leaves = tape.watch_all(params)
    losses = batch_loss(leaves, config, windows, splits, noise)
    grads = tape.backward(losses["total"], leaves)
    lr_t = cosine_lr(state.lr, min(state.step, config.total_steps), config.total_steps)
    new_params, new_state = adam_step(state, params, grads, lr_t)
    values = {k: v.item() for k, v in losses.items()}
    if not math.isfinite(values["total"]):
        raise FloatingPointError(f"non-finite loss at step {state.step}: {values}")
    return StepResult(new_params, new_state, values, skipped)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

LOG_COLUMNS = (
    "epoch", "step", "lr", "loss_total", "loss_nll", "loss_kl", "loss_reg",
    "val_ccc", "val_icc", "val_mse", "val_nll",
)


@dataclass
class TrainResult:
    params: Dict[str, np.ndarray]
    best_params: Dict[str, np.ndarray]
    best_epoch: int
    history: List[Dict[str, float]]
    config: RunConfig


def selection_metric(report, task: str) -> float:
    return report.mean_icc if task == "action_units" else report.mean_ccc


def train(
    config: RunConfig,
    train_set: Seq[Sequence],
    val_set: Seq[Sequence] = (),
    out_dir=None,
    params: Optional[Dict[str, np.ndarray]] = None,
    on_epoch: Optional[Callable[[Dict[str, float]], None]] = None,
    metadata: Optional[Mapping[str, object]] = None,
) -> TrainResult:
    """Run ``epochs x iters_per_epoch`` steps, validating once per epoch.

    The parameters with the best validation score (mean CCC, or mean ICC for
    action units) are kept; with an empty validation set the final ones are.
    If ``out_dir`` is given, ``checkpoint.apck`` and ``metrics.csv`` are
    written there; ``metadata`` is stored in the checkpoint header.
    """
    from .checkpoint import save_checkpoint
    from .evaluation import evaluate

    if not train_set:
        raise ContractError("training set is empty")
    cfg = config.model
    if params is None:
        params = init_params(cfg, np.random.default_rng([config.seed, _INIT]))
    state = OptimizerState.from_config(params, config)
    history: List[Dict[str, float]] = []
    best_params, best_score, best_epoch = dict(params), -math.inf, 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    # the deterministic variant has no latent std to rank frames by
    val_mode = config.eval_context_mode if cfg.stochastic else "random"

    for epoch in range(1, config.epochs + 1):
        sums = {"total": 0.0, "nll": 0.0, "kl": 0.0, "reg": 0.0}
        for i in range(config.iters_per_epoch):
            it = (epoch - 1) * config.iters_per_epoch + i
            pick = np.random.default_rng([config.seed, _BATCH, it])
            idx = pick.choice(len(train_set), size=config.batch_size,
                              replace=len(train_set) < config.batch_size)
            res = train_step(params, state, [train_set[i] for i in idx], config)
            params, state = res.params, res.state
            for k in sums:
                sums[k] += res.losses[k]
        last_lr = cosine_lr(config.lr, max(state.step - 1, 0), config.total_steps)
        row = {"epoch": epoch, "step": state.step, "lr": last_lr}
        row.update({f"loss_{k}": v / config.iters_per_epoch for k, v in sums.items()})
        if val_set:
            report = evaluate(
                params, cfg, val_set,
                window_len=config.test_seq_len,
                num_context=config.num_context_eval,
                context_mode=val_mode,
                min_context=config.context_min,
                seed=config.seed,
            )
            row.update(val_ccc=report.mean_ccc, val_icc=report.mean_icc,
                       val_mse=report.mean_mse, val_nll=report.nll)
            score = selection_metric(report, config.task)
        else:
            row.update(val_ccc=math.nan, val_icc=math.nan, val_mse=math.nan, val_nll=math.nan)
            score = float(epoch)
        if score > best_score:
            best_score, best_params, best_epoch = score, dict(params), epoch
        history.append(row)
        log.info("epoch %d: %s", epoch, ", ".join(f"{k}={row[k]:.5g}" for k in LOG_COLUMNS[2:]))
        if on_epoch is not None:
            on_epoch(row)
        if out is not None:
            write_metrics_log(history, out / "metrics.csv")
            save_checkpoint(out / "checkpoint.apck", best_params, config,
                            metadata={**(metadata or {}), "best_epoch": best_epoch, "epochs_run": epoch})
    return TrainResult(params, best_params, best_epoch, history, config)


def write_metrics_log(history: Seq[Mapping[str, float]], path) -> None:
    """One comma-separated row per epoch under a header of :data:`LOG_COLUMNS`."""
    path = Path(path)
    try:
        with open(path, "w") as fh:
            fh.write(",".join(LOG_COLUMNS) + "\n")
            for row in history:
                fh.write(",".join(_fmt(row[c]) for c in LOG_COLUMNS) + "\n")
    except OSError as exc:
        raise OSError(f"{path}: cannot write metrics log ({exc.strerror})") from exc


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
