"""Windowed evaluation protocol, context-count sweeps and sampled traces."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence as Seq

import numpy as np

from .config import CONTEXT_MODES, ModelConfig
from .context import select_by_uncertainty, select_random
from .distributions import HALF_LOG_2PI
from .errors import ContractError
from .metrics import ccc, icc, mse
from .model import ParamLike, forward_batch
from .sequence import ContextTargetSplit, Sequence

log = logging.getLogger(__name__)

EVAL_CHUNK = 32


@dataclass
class EvalReport:
    ccc: List[float]
    icc: List[float]
    mse: List[float]
    nll: float
    context_mode: str
    num_context: int
    num_frames: int
    num_windows: int
    ccc_degenerate: List[bool] = field(default_factory=list)

    @property
    def mean_ccc(self) -> float:
        return float(np.mean(self.ccc))

    @property
    def mean_icc(self) -> float:
        return float(np.mean(self.icc))

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.mse))

    def as_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {"context_mode": self.context_mode, "num_context": self.num_context}
        for name in ("ccc", "icc", "mse"):
            for j, v in enumerate(getattr(self, name)):
                row[f"{name}_{j}"] = v
        row.update(
            mean_ccc=self.mean_ccc, mean_icc=self.mean_icc, mean_mse=self.mean_mse,
            nll=self.nll, num_frames=self.num_frames, num_windows=self.num_windows,
        )
        return row

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def windows_of(sequences: Iterable[Sequence], window_len: int, min_len: int = 1) -> List[Sequence]:
    """Consecutive non-overlapping tiles; a short final tile is kept if it has ``min_len`` frames."""
    if window_len < 1:
        raise ContractError("window_len must be positive")
    out = []
    for seq in sequences:
        for start in range(0, len(seq), window_len):
            n = min(window_len, len(seq) - start)
            if n >= min_len:
                out.append(seq if (start == 0 and n == len(seq)) else seq.window(start, n))
    return out


def _resolve_mode(cfg: ModelConfig, mode: str) -> str:
    if mode not in CONTEXT_MODES:
        raise ContractError(f"unknown context mode {mode!r}; choose from {CONTEXT_MODES}")
    if mode != "random" and not cfg.stochastic:
        log.warning("deterministic variant has no latent std; using random context instead of %r", mode)
        return "random"
    return mode


def choose_context(
    params: ParamLike,
    cfg: ModelConfig,
    window: Sequence,
    num_context: int,
    mode: str,
    rng: np.random.Generator,
) -> ContextTargetSplit:
    if mode == "random":
        return select_random(len(window), num_context, rng, "pseudo_label")
    return select_by_uncertainty(params, cfg, window, num_context, mode)


def predict_windows(params, cfg: ModelConfig, windows: Seq[Sequence], splits: Seq[ContextTargetSplit]):
    """Predictive means/stds at ``z = mean`` for every window, in order."""
    means, stds = [], []
    for lo in range(0, len(windows), EVAL_CHUNK):
        pred, _, _ = forward_batch(
            params, cfg, windows[lo : lo + EVAL_CHUNK], splits[lo : lo + EVAL_CHUNK],
            sample=False, encode_targets=False,
        )
        means.append(pred.mean.data)
        stds.append(pred.std.data)
    return np.concatenate(means), np.concatenate(stds)


def gaussian_nll(y: np.ndarray, mean: np.ndarray, std: np.ndarray) -> float:
    """Mean over frames of the label-summed Gaussian negative log-density."""
    z = (y - mean) / std
    return float(np.mean(np.sum(0.5 * z * z + np.log(std) + HALF_LOG_2PI, axis=1)))


def report_from_predictions(
    y: np.ndarray, mean: np.ndarray, std: np.ndarray, mode: str, num_context: int, num_windows: int
) -> EvalReport:
    cccs, flags = zip(*(ccc(y[:, j], mean[:, j], return_degenerate=True) for j in range(y.shape[1])))
    return EvalReport(
        ccc=list(cccs),
        icc=[icc(y[:, j], mean[:, j]) for j in range(y.shape[1])],
        mse=[mse(y[:, j], mean[:, j]) for j in range(y.shape[1])],
        nll=gaussian_nll(y, mean, std),
        context_mode=mode,
        num_context=num_context,
        num_frames=len(y),
        num_windows=num_windows,
        ccc_degenerate=list(flags),
    )


def evaluate(
    params: ParamLike,
    cfg: ModelConfig,
    sequences: Seq[Sequence],
    *,
    window_len: int = 70,
    num_context: int = 40,
    context_mode: str = "lowest",
    min_context: int = 3,
    seed: int = 0,
) -> EvalReport:
    """Tile into windows, pick context from pseudo-labels, predict at the latent mean.

    Predictions of all windows are concatenated and scored per label dimension
    against ground truth. ``num_context`` larger than a window is clamped to the
    window length. ``seed`` only matters for ``context_mode="random"``.
    """
    if not sequences:
        raise ContractError("evaluation set is empty")
    if num_context < 1:
        raise ContractError("num_context must be positive")
    mode = _resolve_mode(cfg, context_mode)
    windows = windows_of(sequences, window_len, min_context)
    if not windows:
        raise ContractError(f"no window has at least {min_context} frames")
    if num_context > window_len:
        log.warning("num_context=%d exceeds window length %d; clamping", num_context, window_len)
    rng = np.random.default_rng(seed)
    splits = [choose_context(params, cfg, w, min(num_context, len(w)), mode, rng) for w in windows]
    mean, std = predict_windows(params, cfg, windows, splits)
    y = np.concatenate([w.labels for w in windows])
    return report_from_predictions(y, mean, std, context_mode, num_context, len(windows))


SWEEP_COLUMNS = ("num_context", "context_mode", "mean_ccc", "mean_icc", "mean_mse", "nll")


def context_sweep(
    params: ParamLike,
    cfg: ModelConfig,
    sequences: Seq[Sequence],
    counts: Seq[int],
    modes: Seq[str] = CONTEXT_MODES,
    *,
    window_len: int = 70,
    min_context: int = 3,
    seed: int = 0,
) -> List[Dict[str, object]]:
    """One row of mean metrics per ``(count, mode)`` pair, counts outermost."""
    rows = []
    for count in counts:
        if not 1 <= count <= window_len:
            raise ContractError(f"context count {count} outside [1, {window_len}]")
        for mode in modes:
            rep = evaluate(
                params, cfg, sequences, window_len=window_len, num_context=count,
                context_mode=mode, min_context=min_context, seed=seed,
            )
            rows.append({"num_context": count, "context_mode": mode, "mean_ccc": rep.mean_ccc,
                         "mean_icc": rep.mean_icc, "mean_mse": rep.mean_mse, "nll": rep.nll})
    return rows


@dataclass
class Traces:
    """Per-frame curves of one sequence: truth, pseudo-labels, context mask, mean and samples."""

    labels: np.ndarray
    pseudo_labels: np.ndarray
    context_mask: np.ndarray
    mean: np.ndarray
    samples: np.ndarray  # (num_samples, frames, label_dim)

    def rows(self) -> List[Dict[str, object]]:
        out = []
        L = self.labels.shape[1]
        for t in range(len(self.labels)):
            row: Dict[str, object] = {"frame": t}
            for j in range(L):
                row[f"label_{j}"] = self.labels[t, j]
                row[f"pseudo_{j}"] = self.pseudo_labels[t, j]
            row["context"] = int(self.context_mask[t])
            for j in range(L):
                row[f"mean_{j}"] = self.mean[t, j]
            for k in range(len(self.samples)):
                for j in range(L):
                    row[f"sample{k}_{j}"] = self.samples[k, t, j]
            out.append(row)
        return out


def sample_traces(
    params: ParamLike,
    cfg: ModelConfig,
    sequence: Sequence,
    num_context: int,
    num_samples: int,
    rng: np.random.Generator,
) -> Traces:
    """Lowest-uncertainty context, then one decode at the latent mean and
    ``num_samples`` decodes with independent latent draws (one draw per trace)."""
    if num_samples < 0:
        raise ContractError("num_samples must be non-negative")
    if num_samples and not cfg.stochastic:
        raise ContractError("the deterministic variant cannot draw latent samples")
    mode = _resolve_mode(cfg, "lowest")
    split = choose_context(params, cfg, sequence, min(num_context, len(sequence)), mode, rng)
    pred, _, _ = forward_batch(params, cfg, [sequence], [split], sample=False, encode_targets=False)
    samples = np.zeros((0, len(sequence), cfg.label_dim))
    if num_samples:
        noise = rng.standard_normal((num_samples, cfg.latent_dim))
        spred, _, _ = forward_batch(
            params, cfg, [sequence] * num_samples, [split] * num_samples,
            noise=noise, encode_targets=False,
        )
        samples = spred.mean.data.reshape(num_samples, len(sequence), cfg.label_dim)
    mask = np.zeros(len(sequence), dtype=bool)
    mask[split.context_indices] = True
    return Traces(sequence.labels.copy(), sequence.pseudo_labels.copy(), mask, pred.mean.data.copy(), samples)


def pseudo_label_report(sequences: Seq[Sequence], window_len: int = 70, min_len: int = 3) -> EvalReport:
    """Score the raw pseudo-labels on the same windows as :func:`evaluate`."""
    windows = windows_of(sequences, window_len, min_len)
    y = np.concatenate([w.labels for w in windows])
    p = np.concatenate([w.pseudo_labels for w in windows])
    return report_from_predictions(y, p, np.ones_like(p), "pseudo_labels", 0, len(windows))


def write_table(rows: Seq[Dict[str, object]], path, columns: Optional[Seq[str]] = None) -> Path:
    """Comma-separated table with a header row; floats printed with ``repr``."""
    path = Path(path)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(row[c]) for c in columns) + "\n")
    return path


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)
