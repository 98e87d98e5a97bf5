"""Core value types: a labelled frame sequence and a context/target split."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ContractError, ShapeError

LABEL_SOURCES = ("ground_truth", "pseudo_label")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Sequence:
    """Per-frame features, ground-truth labels and backbone pseudo-labels of one clip.

    Arrays are copied on construction and made read-only, so pseudo-labels cannot
    drift once loaded.
    """

    id: str
    features: np.ndarray
    labels: np.ndarray
    pseudo_labels: np.ndarray

    def __post_init__(self):
        for name in ("features", "labels", "pseudo_labels"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        f, y, p = self.features, self.labels, self.pseudo_labels
        if f.ndim != 2 or y.ndim != 2 or p.ndim != 2:
            raise ShapeError(f"sequence {self.id!r}: features/labels/pseudo_labels must be 2-d")
        if not (len(f) == len(y) == len(p)) or len(f) < 1:
            raise ShapeError(
                f"sequence {self.id!r}: frame counts differ or are empty "
                f"({len(f)}, {len(y)}, {len(p)})"
            )
        if y.shape[1] != p.shape[1]:
            raise ShapeError(f"sequence {self.id!r}: label and pseudo-label widths differ")
        for name, arr in (("features", f), ("labels", y), ("pseudo_labels", p)):
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"sequence {self.id!r}: non-finite {name}")
        for name, arr in (("labels", y), ("pseudo_labels", p)):
            if np.any(np.abs(arr) > 1.0):
                raise ContractError(f"sequence {self.id!r}: {name} outside [-1, 1]")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def label_dim(self) -> int:
        return self.labels.shape[1]

    def window(self, start: int, length: int) -> "Sequence":
        if start < 0 or length < 1 or start + length > len(self):
            raise ContractError(f"window [{start}, {start + length}) outside sequence of length {len(self)}")
        stop = start + length
        return Sequence(
            f"{self.id}[{start}:{stop}]",
            self.features[start:stop],
            self.labels[start:stop],
            self.pseudo_labels[start:stop],
        )

    def context_labels(self, source: str) -> np.ndarray:
        if source == "ground_truth":
            return self.labels
        if source == "pseudo_label":
            return self.pseudo_labels
        raise ContractError(f"unknown label source {source!r}")

    def equals(self, other: "Sequence") -> bool:
        return (
            self.id == other.id
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.pseudo_labels, other.pseudo_labels)
        )


@dataclass(frozen=True, eq=False)
class ContextTargetSplit:
    """Frames used as context and the frames predicted (all of them)."""

    context_indices: np.ndarray
    target_indices: np.ndarray
    context_label_source: str = "pseudo_label"

    def __post_init__(self):
        ctx = np.array(self.context_indices, dtype=np.int64).reshape(-1)
        tgt = np.array(self.target_indices, dtype=np.int64).reshape(-1)
        ctx.flags.writeable = False
        tgt.flags.writeable = False
        object.__setattr__(self, "context_indices", ctx)
        object.__setattr__(self, "target_indices", tgt)
        if ctx.size == 0:
            raise ContractError("context set must be non-empty")
        if len(np.unique(ctx)) != ctx.size:
            raise ContractError("context indices must be distinct")
        if self.context_label_source not in LABEL_SOURCES:
            raise ContractError(f"unknown context label source {self.context_label_source!r}")

    @classmethod
    def all_targets(cls, seq_len: int, context: Iterable[int], source: str = "pseudo_label"):
        split = cls(np.asarray(list(context), dtype=np.int64), np.arange(seq_len), source)
        split.validate(seq_len)
        return split

    def validate(self, seq_len: int) -> None:
        for name, idx in (("context", self.context_indices), ("target", self.target_indices)):
            if idx.size and (idx.min() < 0 or idx.max() >= seq_len):
                raise ContractError(f"{name} index out of range for sequence length {seq_len}")

    @property
    def num_context(self) -> int:
        return int(self.context_indices.size)
