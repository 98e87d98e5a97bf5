"""Choosing context frames: uniform random, or by per-frame latent uncertainty."""
from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .errors import ContractError
from .model import ParamLike, encode_pair, latent_encode
from .sequence import ContextTargetSplit, Sequence

DIRECTIONS = ("lowest", "highest")


def _check_count(seq_len: int, num_context: int) -> None:
    if not 1 <= num_context <= seq_len:
        raise ContractError(f"num_context={num_context} outside [1, {seq_len}]")


def select_random(
    seq_len: int,
    num_context: int,
    rng: np.random.Generator,
    label_source: str = "pseudo_label",
) -> ContextTargetSplit:
    """Uniform sample of ``num_context`` distinct frames; every frame is a target."""
    _check_count(seq_len, num_context)
    idx = np.sort(rng.choice(seq_len, size=num_context, replace=False))
    return ContextTargetSplit(idx, np.arange(seq_len), label_source)


def uncertainty_scores(params: ParamLike, cfg: ModelConfig, sequence: Sequence) -> np.ndarray:
    """``||sigma(r_c)||_2`` for every frame, each frame taken alone as the context.

    Frames are encoded with their pseudo-labels, the only labels available at
    test time (zeros for the label-free variant).
    """
    if not cfg.stochastic:
        raise ContractError("the deterministic variant has no latent std to score frames with")
    labels = sequence.pseudo_labels if cfg.uses_labels else np.zeros_like(sequence.pseudo_labels)
    r = encode_pair(params, sequence.features, labels)
    std = latent_encode(params, r, cfg.sigma_min).std.data
    return np.sqrt(np.sum(std * std, axis=1))


def pick_by_score(scores: np.ndarray, num_context: int, direction: str = "lowest") -> np.ndarray:
    """Indices of the ``num_context`` smallest (or largest) scores, ties to the smaller index."""
    scores = np.asarray(scores, dtype=np.float64)
    _check_count(len(scores), num_context)
    if direction not in DIRECTIONS:
        raise ContractError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    key = scores if direction == "lowest" else -scores
    order = np.lexsort((np.arange(len(scores)), key))
    return np.sort(order[:num_context])


def select_by_uncertainty(
    params: ParamLike,
    cfg: ModelConfig,
    sequence: Sequence,
    num_context: int,
    direction: str = "lowest",
) -> ContextTargetSplit:
    """Context made of the frames whose single-frame latent std is smallest (or largest)."""
    _check_count(len(sequence), num_context)
    idx = pick_by_score(uncertainty_scores(params, cfg, sequence), num_context, direction)
    return ContextTargetSplit(idx, np.arange(len(sequence)), "pseudo_label")
