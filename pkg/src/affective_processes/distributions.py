"""Diagonal Gaussians: reparameterised sampling, log-density and closed-form KL.

No RNG lives here; callers pass standard-normal noise explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DiagonalGaussian:
    """Independent normal per coordinate; ``std`` holds standard deviations.

    ``mean`` and ``std`` may also be ``(n, d)`` matrices: one Gaussian per row.
    """

    mean: Tensor
    std: Tensor

    def __post_init__(self):
        object.__setattr__(self, "mean", ad.as_tensor(self.mean))
        object.__setattr__(self, "std", ad.as_tensor(self.std))
        if self.mean.shape != self.std.shape:
            raise ShapeError(f"mean shape {self.mean.shape} != std shape {self.std.shape}")
        if not np.all(self.std.data > 0):
            raise ContractError("std must be strictly positive in every coordinate")

    @property
    def shape(self):
        return self.mean.shape


def rsample(g: DiagonalGaussian, noise) -> Tensor:
    """``mean + std * noise``; differentiable in mean and std."""
    noise = ad.as_tensor(noise)
    if noise.shape != g.shape:
        raise ShapeError(f"noise shape {noise.shape} != distribution shape {g.shape}")
    return g.mean + g.std * noise


def log_prob(g: DiagonalGaussian, y) -> Tensor:
    """Log-density of ``y``, summed over every coordinate."""
    y = ad.as_tensor(y)
    if y.shape != g.shape:
        raise ShapeError(f"value shape {y.shape} != distribution shape {g.shape}")
    z = (y - g.mean) / g.std
    per_coord = -HALF_LOG_2PI - ad.log(g.std) - 0.5 * ad.square(z)
    return per_coord.sum()


def kl_divergence(q: DiagonalGaussian, p: DiagonalGaussian) -> Tensor:
    """``KL(q || p)`` in closed form, summed over coordinates."""
    if q.shape != p.shape:
        raise ShapeError(f"KL between shapes {q.shape} and {p.shape}")
    var_ratio = ad.square(q.std / p.std)
    mean_term = ad.square((q.mean - p.mean) / p.std)
    per_coord = ad.log(p.std) - ad.log(q.std) + 0.5 * (var_ratio + mean_term) - 0.5
    return per_coord.sum()


def standard_normal(shape) -> DiagonalGaussian:
    return DiagonalGaussian(np.zeros(shape), np.ones(shape))
