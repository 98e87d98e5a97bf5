"""Synthetic frozen-backbone sequences, the on-disk dataset format, and splitting.

Synthetic model
---------------
Each label dimension follows ``y_t = tanh(m + s(t))``: ``m`` is a per-sequence
offset and ``s`` a smooth random-Fourier trajectory. Features are a fixed random
``tanh`` embedding of ``(s(t), phase(t))`` plus isotropic noise, so they show the
moment-to-moment expression but not the sequence offset; only the labels carry
``m``. A random subset of frames is *uninformative*: their features are pure
noise and their pseudo-labels are noisier, which is the structure uncertainty
based context selection can exploit.

Dataset directory
-----------------
``manifest.json`` holds ``schema_version``, ``label_dim``, ``feature_dim``, the
column order and the sequence index (``id``, ``file``, ``num_frames``). Every
sequence is a comma separated file with a header row and one row per frame::

    frame,x0..x{F-1},y0..y{L-1},p0..p{L-1}

(features, ground-truth labels, pseudo-labels), numbers printed with 17
significant digits so they round-trip exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Sequence as Seq, Tuple

import numpy as np

from .errors import ContractError, DataFormatError
from .sequence import ContextTargetSplit, Sequence  # noqa: F401  (re-exported)

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class SyntheticSpec:
    num_sequences: int = 200
    length_min: int = 70
    length_max: int = 210
    label_dim: int = 2
    feature_dim: int = 512
    num_components: int = 4
    max_frequency: float = 3.0  # cycles per 100 frames
    trajectory_amplitude: float = 0.5
    sequence_offset_std: float = 0.8
    label_correlation: float = 0.0
    pseudo_noise_std: float = 0.3
    uninformative_noise_scale: float = 2.0
    pseudo_bias_amplitude: float = 0.0
    informative_fraction: float = 1.0
    feature_noise_std: float = 0.1
    uninformative_feature_std: float = 0.6
    phase_period: float = 50.0
    feature_seed: int = 0

    def __post_init__(self):
        if self.num_sequences < 0 or self.label_dim < 1 or self.feature_dim < 1:
            raise ContractError("num_sequences >= 0, label_dim >= 1 and feature_dim >= 1 required")
        if not 1 <= self.length_min <= self.length_max:
            raise ContractError("need 1 <= length_min <= length_max")
        if self.num_components < 1 or self.max_frequency <= 0 or self.phase_period <= 0:
            raise ContractError("num_components, max_frequency and phase_period must be positive")
        for name in (
            "trajectory_amplitude", "sequence_offset_std", "pseudo_noise_std",
            "uninformative_noise_scale", "pseudo_bias_amplitude", "feature_noise_std",
            "uninformative_feature_std",
        ):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")
        if not 0.0 <= self.informative_fraction <= 1.0:
            raise ContractError("informative_fraction must lie in [0, 1]")
        if not -1.0 <= self.label_correlation <= 1.0:
            raise ContractError("label_correlation must lie in [-1, 1]")


def _feature_map(spec: SyntheticSpec) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(spec.feature_seed)
    n_in = spec.label_dim + 2
    A = rng.normal(0.0, 1.5 / math.sqrt(n_in), size=(n_in, spec.feature_dim))
    c = rng.normal(0.0, 0.3, size=spec.feature_dim)
    return A, c


def _correlate(raw: np.ndarray, rho: float) -> np.ndarray:
    # raw: (..., label_dim) of independent unit-scale draws
    out = raw.copy()
    out[..., 1:] = rho * raw[..., :1] + math.sqrt(1.0 - rho * rho) * raw[..., 1:]
    return out


def generate_synthetic_with_masks(
    spec: SyntheticSpec, rng: np.random.Generator
) -> Tuple[List[Sequence], List[np.ndarray]]:
    """Like :func:`generate_synthetic`, also returning each sequence's informative-frame mask."""
    A, c = _feature_map(spec)
    K, L = spec.num_components, spec.label_dim
    sequences, masks = [], []
    for i in range(spec.num_sequences):
        n = int(rng.integers(spec.length_min, spec.length_max + 1))
        t = np.arange(n, dtype=np.float64)
        freq = rng.uniform(0.0, spec.max_frequency, size=(K, L)) / 100.0
        phase0 = rng.uniform(0.0, 2.0 * math.pi, size=(K, L))
        amp = rng.normal(size=(K, L))
        waves = np.sin(2.0 * math.pi * freq[None] * t[:, None, None] + phase0[None])
        s = (amp[None] * waves).sum(axis=1) * (spec.trajectory_amplitude / math.sqrt(K / 2.0))
        s = _correlate(s, spec.label_correlation)
        m = _correlate(rng.normal(size=L), spec.label_correlation) * spec.sequence_offset_std
        labels = np.tanh(m[None, :] + s)

        phase = 2.0 * math.pi * t / spec.phase_period
        u = np.concatenate([s, np.sin(phase)[:, None], np.cos(phase)[:, None]], axis=1)
        features = np.tanh(u @ A + c) + spec.feature_noise_std * rng.normal(size=(n, spec.feature_dim))
        informative = rng.random(n) < spec.informative_fraction
        noise_feats = spec.uninformative_feature_std * rng.normal(size=(n, spec.feature_dim))
        features = np.where(informative[:, None], features, noise_feats)

        noise_std = np.where(informative, 1.0, spec.uninformative_noise_scale) * spec.pseudo_noise_std
        bias = rng.uniform(-1.0, 1.0, size=L) * spec.pseudo_bias_amplitude
        pseudo = labels + bias[None, :] + noise_std[:, None] * rng.normal(size=(n, L))
        pseudo = np.clip(pseudo, -1.0, 1.0)
        sequences.append(Sequence(f"syn{i:05d}", features, labels, pseudo))
        masks.append(informative)
    return sequences, masks


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> List[Sequence]:
    """Sample ``spec.num_sequences`` synthetic sequences."""
    return generate_synthetic_with_masks(spec, rng)[0]


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)


# ---------------------------------------------------------------------------
# dataset directory format
# ---------------------------------------------------------------------------


def _columns(feature_dim: int, label_dim: int) -> List[str]:
    return (
        ["frame"]
        + [f"x{i}" for i in range(feature_dim)]
        + [f"y{i}" for i in range(label_dim)]
        + [f"p{i}" for i in range(label_dim)]
    )


def save_dataset(sequences: Seq[Sequence], path) -> Path:
    """Write ``sequences`` as a dataset directory (created if missing)."""
    if not sequences:
        raise ContractError("refusing to write an empty dataset")
    root = Path(path)
    F, L = sequences[0].feature_dim, sequences[0].label_dim
    for seq in sequences:
        if (seq.feature_dim, seq.label_dim) != (F, L):
            raise ContractError(f"sequence {seq.id!r} has different feature/label dims")
    root.mkdir(parents=True, exist_ok=True)
    columns = _columns(F, L)
    index = []
    for i, seq in enumerate(sequences):
        fname = f"seq_{i:05d}.csv"
        table = np.column_stack(
            [np.arange(len(seq), dtype=np.float64), seq.features, seq.labels, seq.pseudo_labels]
        )
        fmt = ["%d"] + ["%.17g"] * (table.shape[1] - 1)
        np.savetxt(root / fname, table, fmt=fmt, delimiter=",", header=",".join(columns), comments="")
        index.append({"id": seq.id, "file": fname, "num_frames": len(seq)})
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "label_dim": L,
        "feature_dim": F,
        "delimiter": ",",
        "columns": columns,
        "sequences": index,
    }
    with open(root / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return root


def _read_manifest(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read manifest ({exc.strerror})") from exc
    if not text.strip():
        raise DataFormatError(f"{path}: empty dataset (manifest is empty)")
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}:{exc.lineno}: malformed manifest: {exc.msg}") from exc
    for key in ("schema_version", "label_dim", "feature_dim", "columns", "sequences"):
        if key not in manifest:
            raise DataFormatError(f"{path}: manifest lacks field {key!r}")
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise DataFormatError(
            f"{path}: schema_version {manifest['schema_version']} unsupported (expected {SCHEMA_VERSION})"
        )
    return manifest


def _read_sequence(path: Path, entry: dict, F: int, L: int, columns: List[str]) -> Sequence:
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read sequence file ({exc.strerror})") from exc
    if not lines:
        raise DataFormatError(f"{path}:1: empty sequence file")
    header = [h.strip() for h in lines[0].split(",")]
    if header != columns:
        raise DataFormatError(f"{path}:1: header does not match manifest column order")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(columns):
            raise DataFormatError(f"{path}:{lineno}: expected {len(columns)} columns, found {len(cells)}")
        try:
            values = [float(v) for v in cells]
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
        if values[0] != len(rows):
            raise DataFormatError(f"{path}:{lineno}: frame index {values[0]:g}, expected {len(rows)}")
        bad = [j for j, v in enumerate(values) if not math.isfinite(v)]
        if bad:
            raise DataFormatError(f"{path}:{lineno}: non-finite value in column {columns[bad[0]]!r}")
        out = [j for j in range(1 + F, 1 + F + 2 * L) if abs(values[j]) > 1.0]
        if out:
            j = out[0]
            raise DataFormatError(
                f"{path}:{lineno}: column {columns[j]!r} = {values[j]!r} outside [-1, 1]"
            )
        rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: sequence has no frames")
    if "num_frames" in entry and entry["num_frames"] != len(rows):
        raise DataFormatError(f"{path}: {len(rows)} frames but manifest says {entry['num_frames']}")
    table = np.asarray(rows)
    return Sequence(
        str(entry["id"]),
        table[:, 1 : 1 + F],
        table[:, 1 + F : 1 + F + L],
        table[:, 1 + F + L :],
    )


def load_dataset(path) -> List[Sequence]:
    """Read a dataset directory (or its manifest file) and validate every record."""
    path = Path(path)
    manifest_path = path / MANIFEST if path.is_dir() else path
    if not manifest_path.exists():
        raise DataFormatError(f"{manifest_path}: no such dataset manifest")
    manifest = _read_manifest(manifest_path)
    F, L = int(manifest["feature_dim"]), int(manifest["label_dim"])
    columns = list(manifest["columns"])
    if columns != _columns(F, L):
        raise DataFormatError(f"{manifest_path}: column list does not match feature_dim/label_dim")
    if not manifest["sequences"]:
        raise DataFormatError(f"{manifest_path}: empty dataset (no sequences listed)")
    root = manifest_path.parent
    out = []
    for k, entry in enumerate(manifest["sequences"]):
        if "id" not in entry or "file" not in entry:
            raise DataFormatError(f"{manifest_path}: sequence record {k} lacks 'id' or 'file'")
        out.append(_read_sequence(root / entry["file"], entry, F, L, columns))
    return out


def dataset_equal(a: Seq[Sequence], b: Seq[Sequence]) -> bool:
    return len(a) == len(b) and all(x.equals(y) for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def partition_sizes(n: int, ratios: Seq[float]) -> List[int]:
    """Largest-remainder allocation of ``n`` items to ``ratios``, at least one each."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size == 0 or np.any(ratios <= 0):
        raise ContractError("split ratios must be positive")
    if n < ratios.size:
        raise ContractError(f"cannot split {n} sequences into {ratios.size} non-empty partitions")
    exact = ratios / ratios.sum() * n
    sizes = np.floor(exact).astype(int)
    order = np.argsort(-(exact - sizes), kind="stable")
    for j in order[: n - sizes.sum()]:
        sizes[j] += 1
    for j in np.flatnonzero(sizes == 0):
        donor = int(np.argmax(sizes))
        sizes[donor] -= 1
        sizes[j] += 1
    return [int(s) for s in sizes]


def split(
    dataset: Seq[Sequence],
    ratios: Seq[float] = (8, 1, 1),
    rng: np.random.Generator = None,
) -> Tuple[List[Sequence], ...]:
    """Sequence-level shuffled partition (train, val, test by default)."""
    if rng is None:
        rng = np.random.default_rng(0)
    sizes = partition_sizes(len(dataset), ratios)
    perm = rng.permutation(len(dataset))
    parts, start = [], 0
    for size in sizes:
        parts.append([dataset[i] for i in perm[start : start + size]])
        start += size
    return tuple(parts)


def describe(sequences: Seq[Sequence]) -> str:
    lengths = [len(s) for s in sequences]
    return (
        f"{len(sequences)} sequences, {sum(lengths)} frames "
        f"(length {min(lengths)}-{max(lengths)}), feature_dim={sequences[0].feature_dim}, "
        f"label_dim={sequences[0].label_dim}"
    ) if sequences else "empty dataset"


__all__ = [
    "SyntheticSpec",
    "Sequence",
    "generate_synthetic",
    "generate_synthetic_with_masks",
    "save_dataset",
    "load_dataset",
    "dataset_equal",
    "split",
    "partition_sizes",
    "describe",
]
