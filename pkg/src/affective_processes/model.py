"""Affective Process network: encoder, aggregation, latent encoder and decoder.

Parameters are a flat ``{name: array}`` mapping with ``(in, out)`` weight
matrices, so ``x @ W + b`` is a linear layer on row vectors. Every function
accepts either numpy arrays (plain inference) or tape-watched tensors
(training).

Internally a *batch* of sequences is processed as stacked frame rows. Per-row
``segment`` ids say which sequence a row belongs to; per-sequence pooling and
the broadcast of one latent sample to all frames of its sequence are products
with constant 0/1 (or 1/n) matrices, so they cost one matmul each and stay
exactly differentiable.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence as Seq, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .distributions import DiagonalGaussian, rsample
from .errors import ContractError, ShapeError
from .sequence import ContextTargetSplit, Sequence

ParamArrays = Dict[str, np.ndarray]
ParamLike = Mapping[str, Union[np.ndarray, Tensor]]


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Name and shape of every parameter tensor, in a fixed order."""
    F, L, d = cfg.feature_dim, cfg.label_dim, cfg.latent_dim
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()

    def linear(name, n_in, n_out, bias=True):
        shapes[f"{name}.W"] = (n_in, n_out)
        if bias:
            shapes[f"{name}.b"] = (n_out,)

    linear("label_proj", L, F)
    widths = (2 * F, *cfg.encoder_hidden, d)
    for i in range(3):
        linear(f"encoder.{i}", widths[i], widths[i + 1])
    linear("latent.common", d, d)
    linear("latent.mean", d, d)
    if cfg.stochastic:
        linear("latent.std", d, d)
    if cfg.uses_det_path:
        linear("det", d, d)
    if cfg.uses_attention:
        qk = cfg.attention_heads * cfg.attention_head_dim
        linear("attention.query", F, qk, bias=False)
        linear("attention.key", F, qk, bias=False)
    dec_in = F + d + (d if cfg.uses_det_path else 0)
    widths = (dec_in, *cfg.decoder_hidden)
    for i in range(3):
        linear(f"decoder.{i}", widths[i], widths[i + 1])
    linear("decoder.mean", cfg.decoder_hidden[-1], L)
    linear("decoder.std", cfg.decoder_hidden[-1], L)
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamArrays:
    """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` init for weights and biases."""
    params: ParamArrays = {}
    for name, shape in param_shapes(cfg).items():
        fan_in = shape[0] if name.endswith(".W") else params[name[:-2] + ".W"].shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def num_parameters(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(np.asarray(v).size for v in params.values()))


def _tensors(params: ParamLike) -> Dict[str, Tensor]:
    return {k: v if isinstance(v, Tensor) else ad.as_tensor(v) for k, v in params.items()}


def _linear(P: Mapping[str, Tensor], name: str, x: Tensor) -> Tensor:
    W = P[f"{name}.W"]
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"layer {name}: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    out = x @ W
    b = P.get(f"{name}.b")
    return out if b is None else ad.add_rowwise(out, b)


def encode_pair(params: ParamLike, x, y_label) -> Tensor:
    """Per-frame representation ``r = q(x, y)``.

    The label is projected to the feature width, concatenated with the features
    and passed through a three-layer relu MLP. Works on one frame (1-d inputs)
    or on stacked frames (2-d inputs).
    """
    P = _tensors(params)
    x, y = ad.as_tensor(x), ad.as_tensor(y_label)
    L, F = P["label_proj.W"].shape
    if x.shape[-1] != F or y.shape[-1] != L or x.shape[:-1] != y.shape[:-1]:
        raise ShapeError(
            f"encode_pair: features {x.shape} / labels {y.shape} do not fit "
            f"feature_dim={F}, label_dim={L}"
        )
    h = ad.concat([x, _linear(P, "label_proj", y)], axis=-1)
    h = ad.relu(_linear(P, "encoder.0", h))
    h = ad.relu(_linear(P, "encoder.1", h))
    return _linear(P, "encoder.2", h)


def _attend(
    P: Mapping[str, Tensor],
    query_features: Tensor,
    key_features: Tensor,
    values: Tensor,
    heads: int,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    q = query_features @ P["attention.query.W"]
    k = key_features @ P["attention.key.W"]
    head_dim = q.shape[1] // heads
    value_dim = values.shape[1] // heads
    scale = 1.0 / math.sqrt(head_dim)
    outs = []
    for h in range(heads):
        qh = q[:, h * head_dim : (h + 1) * head_dim]
        kh = k[:, h * head_dim : (h + 1) * head_dim]
        weights = ad.softmax((qh @ kh.T) * scale, mask)
        outs.append(weights @ values[:, h * value_dim : (h + 1) * value_dim])
    return ad.concat(outs, axis=1)


def aggregate(
    reprs,
    mode: str = "mean",
    query_features=None,
    *,
    params: Optional[ParamLike] = None,
    key_features=None,
    heads: int = 2,
) -> Tensor:
    """Permutation-invariant summary of context representations ``(C, d)``.

    ``mean`` returns the ``(d,)`` column mean. ``attention`` returns one
    ``(T, d)`` row per query: multi-head scaled dot-product weights computed
    from learned projections of query (target) and key (context) features,
    applied to head-wise slices of the representations.
    """
    reprs = ad.as_tensor(reprs)
    if reprs.ndim != 2 or reprs.shape[0] < 1:
        raise ContractError(f"aggregate needs a non-empty (C, d) context, got shape {reprs.shape}")
    if mode == "mean":
        return reprs.mean(axis=0)
    if mode == "attention":
        if params is None or query_features is None or key_features is None:
            raise ContractError("attention aggregation needs params, query_features and key_features")
        keys = ad.as_tensor(key_features)
        if keys.shape[0] != reprs.shape[0]:
            raise ShapeError("one key feature row per context representation is required")
        return _attend(_tensors(params), ad.as_tensor(query_features), keys, reprs, heads)
    raise ContractError(f"unknown aggregation mode {mode!r}")


def latent_encode(params: ParamLike, r, sigma_min: float = 0.01) -> DiagonalGaussian:
    """Gaussian over the global latent: shared relu layer, then mean and softplus-std heads."""
    P = _tensors(params)
    if "latent.std.W" not in P:
        raise ContractError("parameters have no std head (deterministic variant)")
    h = ad.relu(_linear(P, "latent.common", ad.as_tensor(r)))
    mean = _linear(P, "latent.mean", h)
    std = ad.softplus(_linear(P, "latent.std", h)) + sigma_min
    return DiagonalGaussian(mean, std)


def deterministic_encode(params: ParamLike, r) -> Tensor:
    """Single-branch latent encoder of the deterministic variant (no std, no sampling)."""
    P = _tensors(params)
    h = ad.relu(_linear(P, "latent.common", ad.as_tensor(r)))
    return _linear(P, "latent.mean", h)


def _expand(v: Tensor, n: int) -> Tensor:
    return ad.tile_rows(v, n) if v.ndim == 1 else v


def decode(params: ParamLike, x, z, deterministic_repr=None, sigma_min: float = 0.01) -> DiagonalGaussian:
    """Per-frame predictive Gaussian from features and a latent sample.

    ``x`` is ``(n, F)`` or ``(F,)``; ``z`` and ``deterministic_repr`` are either
    one vector shared by all frames or one row per frame.
    """
    P = _tensors(params)
    x = ad.as_tensor(x)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    n = x.shape[0]
    parts = [x, _expand(ad.as_tensor(z), n)]
    if "det.W" in P:
        if deterministic_repr is None:
            raise ContractError("this model has a deterministic path; deterministic_repr is required")
        parts.append(_expand(ad.as_tensor(deterministic_repr), n))
    elif deterministic_repr is not None:
        raise ContractError("deterministic_repr given but the model has no deterministic path")
    for p in parts[1:]:
        if p.shape[0] != n:
            raise ShapeError(f"decode: {p.shape[0]} latent rows for {n} frames")
    h = ad.concat(parts, axis=1)
    for i in range(3):
        h = ad.relu(_linear(P, f"decoder.{i}", h))
    mean = _linear(P, "decoder.mean", h)
    std = ad.softplus(_linear(P, "decoder.std", h)) + sigma_min
    if single:
        mean, std = mean.reshape(-1), std.reshape(-1)
    return DiagonalGaussian(mean, std)


@dataclass(frozen=True, eq=False)
class EncodedContext:
    """Encoded frame set of every sequence in a batch.

    ``per_frame`` rows belong to sequence ``segment[i]``; ``aggregated`` and
    ``latent`` have one row per sequence. ``latent`` is ``None`` for the
    deterministic variant.
    """

    per_frame: Tensor
    segment: np.ndarray
    aggregated: Tensor
    latent: Optional[DiagonalGaussian]


@dataclass(frozen=True, eq=False)
class PredictiveOutput:
    """Per-target-frame Gaussians, stacked over the batch."""

    dist: DiagonalGaussian
    segment: np.ndarray
    target_indices: np.ndarray
    num_sequences: int

    @property
    def mean(self) -> Tensor:
        return self.dist.mean

    @property
    def std(self) -> Tensor:
        return self.dist.std

    def rows_of(self, b: int) -> np.ndarray:
        return np.flatnonzero(self.segment == b)


def pooling_matrix(segment: np.ndarray, num_sequences: int, normalize: bool = True) -> np.ndarray:
    """``(B, N)`` matrix whose product with stacked rows gives per-sequence means (or sums)."""
    A = np.zeros((num_sequences, len(segment)))
    A[segment, np.arange(len(segment))] = 1.0
    if normalize:
        counts = A.sum(axis=1, keepdims=True)
        if np.any(counts == 0):
            raise ContractError("every sequence needs at least one row")
        A /= counts
    return A


def _assignment_matrix(segment: np.ndarray, num_sequences: int) -> np.ndarray:
    S = np.zeros((len(segment), num_sequences))
    S[np.arange(len(segment)), segment] = 1.0
    return S


def forward_batch(
    params: ParamLike,
    cfg: ModelConfig,
    sequences: Seq[Sequence],
    splits: Seq[ContextTargetSplit],
    rng: Optional[np.random.Generator] = None,
    *,
    sample: bool = True,
    noise: Optional[np.ndarray] = None,
    encode_targets: bool = True,
) -> Tuple[PredictiveOutput, EncodedContext, Optional[EncodedContext]]:
    """Encode each context, form its latent, decode every target frame.

    One latent draw per sequence is shared by all its target frames. With
    ``sample=False`` the latent mean is used (predictive-mean inference) and no
    randomness is consumed. ``noise`` (``(B, latent_dim)``) overrides ``rng``.
    When ``encode_targets`` is set, the target frames are encoded with their
    ground-truth labels to give the target-conditioned latent.
    """
    if len(sequences) != len(splits) or not sequences:
        raise ContractError("need one split per sequence and at least one sequence")
    P = _tensors(params)
    B, d = len(sequences), cfg.latent_dim
    xc, yc, seg_c, xt, yt, seg_t, tidx = [], [], [], [], [], [], []
    for b, (seq, split) in enumerate(zip(sequences, splits)):
        if seq.feature_dim != cfg.feature_dim or seq.label_dim != cfg.label_dim:
            raise ShapeError(
                f"sequence {seq.id!r} has feature/label dims ({seq.feature_dim}, {seq.label_dim}); "
                f"model expects ({cfg.feature_dim}, {cfg.label_dim})"
            )
        split.validate(len(seq))
        ci, ti = split.context_indices, split.target_indices
        if ti.size == 0:
            raise ContractError(f"sequence {seq.id!r} has no target frames")
        xc.append(seq.features[ci])
        yc.append(seq.context_labels(split.context_label_source)[ci])
        seg_c.append(np.full(ci.size, b))
        xt.append(seq.features[ti])
        yt.append(seq.labels[ti])
        seg_t.append(np.full(ti.size, b))
        tidx.append(ti)
    Xc, Yc, seg_c = np.concatenate(xc), np.concatenate(yc), np.concatenate(seg_c)
    Xt, Yt, seg_t = np.concatenate(xt), np.concatenate(yt), np.concatenate(seg_t)
    if not cfg.uses_labels:
        Yc = np.zeros_like(Yc)
        Yt = np.zeros_like(Yt)

    r_c = encode_pair(P, Xc, Yc)
    r_C = ad.as_tensor(pooling_matrix(seg_c, B)) @ r_c
    if cfg.stochastic:
        latent_c = latent_encode(P, r_C, cfg.sigma_min)
        if not sample:
            z = latent_c.mean
        else:
            if noise is None:
                if rng is None:
                    raise ContractError("sampling needs an rng or explicit noise")
                noise = rng.standard_normal((B, d))
            z = rsample(latent_c, np.asarray(noise, dtype=np.float64).reshape(B, d))
    else:
        latent_c = None
        z = deterministic_encode(P, r_C)

    S = ad.as_tensor(_assignment_matrix(seg_t, B))
    det = None
    if cfg.uses_attention:
        mask = seg_t[:, None] == seg_c[None, :]
        attended = _attend(P, ad.as_tensor(Xt), ad.as_tensor(Xc), r_c, cfg.attention_heads, mask)
        det = _linear(P, "det", attended)
    elif cfg.uses_det_path:
        det = S @ _linear(P, "det", r_C)
    pred = decode(P, Xt, S @ z, det, cfg.sigma_min)
    output = PredictiveOutput(pred, seg_t, np.concatenate(tidx), B)
    ctx = EncodedContext(r_c, seg_c, r_C, latent_c)

    tgt = None
    if encode_targets:
        r_t = encode_pair(P, Xt, Yt)
        r_T = ad.as_tensor(pooling_matrix(seg_t, B)) @ r_t
        latent_t = latent_encode(P, r_T, cfg.sigma_min) if cfg.stochastic else None
        tgt = EncodedContext(r_t, seg_t, r_T, latent_t)
    return output, ctx, tgt


def forward(
    params: ParamLike,
    cfg: ModelConfig,
    sequence: Sequence,
    split: ContextTargetSplit,
    rng: Optional[np.random.Generator] = None,
    *,
    sample: bool = True,
    noise: Optional[np.ndarray] = None,
    encode_targets: bool = True,
) -> Tuple[PredictiveOutput, EncodedContext, Optional[EncodedContext]]:
    """Single-sequence :func:`forward_batch` (batch of one)."""
    return forward_batch(
        params, cfg, [sequence], [split], rng,
        sample=sample, noise=noise, encode_targets=encode_targets,
    )


def check_params(params: Mapping[str, np.ndarray], cfg: ModelConfig) -> None:
    """Raise unless ``params`` has exactly the tensors (and shapes) ``cfg`` implies."""
    expected = param_shapes(cfg)
    missing = [k for k in expected if k not in params]
    extra = [k for k in params if k not in expected]
    if missing or extra:
        raise ContractError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if tuple(np.shape(params[name])) != shape:
            raise ShapeError(f"parameter {name}: shape {np.shape(params[name])}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise ContractError(f"parameter {name} has non-finite values")
