"""Input-noise distributions and randomized prediction.

A randomized classifier replaces f(x) by f(x + eta) with eta drawn fresh at
inference.  The aggregated prediction averages logits over a fixed number
of draws, which keeps evaluation deterministic given a seed.  Calibrated
constructors pick the per-coordinate scale so the expected L2 norm of eta
matches a target attack budget (Gaussian: sigma * sqrt(d); uniform
half-width b: b * sqrt(d/3)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .rng import substream

__all__ = ["NoiseDistribution", "predict", "predict_batch",
           "predict_randomized", "predict_randomized_batch"]


@dataclass(frozen=True)
class NoiseDistribution:
    """Tagged per-coordinate noise: none, gaussian(sigma), or uniform(+-b)."""

    kind: str = "none"
    scale: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "uniform"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind != "none" and not self.scale > 0.0:
            raise ValueError(f"{self.kind} noise requires a positive scale")

    @property
    def is_none(self) -> bool:
        return self.kind == "none"

    @classmethod
    def none(cls) -> "NoiseDistribution":
        return cls("none", 0.0)

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseDistribution":
        return cls("gaussian", sigma)

    @classmethod
    def uniform(cls, half_width: float) -> "NoiseDistribution":
        return cls("uniform", half_width)

    @classmethod
    def gaussian_for_l2(cls, eps_2: float, d: int) -> "NoiseDistribution":
        """Gaussian noise with E||eta||_2 ~ eps_2 in dimension d."""
        return cls("gaussian", eps_2 / math.sqrt(d))

    @classmethod
    def uniform_for_l2(cls, eps_2: float, d: int) -> "NoiseDistribution":
        """Uniform noise with E||eta||_2 ~ eps_2 in dimension d."""
        return cls("uniform", eps_2 * math.sqrt(3.0 / d))

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(shape)
        if self.kind == "gaussian":
            return rng.standard_normal(shape) * self.scale
        return rng.uniform(-self.scale, self.scale, size=shape)

    def tag(self) -> str:
        if self.kind == "none":
            return "none"
        return f"{self.kind}:{self.scale:.6g}"


def predict(model: nn.Mlp, x: np.ndarray) -> int:
    """Deterministic argmax-of-logits class for a single sample."""
    return int(np.argmax(nn.forward(model, x)))


def predict_batch(model: nn.Mlp, x: np.ndarray) -> np.ndarray:
    return np.argmax(nn.forward(model, x), axis=1)


def predict_randomized(model: nn.Mlp, noise: NoiseDistribution, x: np.ndarray,
                       n_draws: int, rng: np.random.Generator) -> int:
    """Argmax of mean logits over n_draws noisy forward passes."""
    if n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")
    if noise.is_none:
        return predict(model, x)
    eta = noise.sample(rng, (n_draws, x.shape[0]))
    logits = nn.forward(model, x[None, :] + eta)
    return int(np.argmax(logits.mean(axis=0)))


def predict_randomized_batch(model: nn.Mlp, noise: NoiseDistribution,
                             x: np.ndarray, n_draws: int, seed: int) -> np.ndarray:
    """Batch form; sample i draws its noise from substream(seed, i)."""
    if n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")
    if noise.is_none:
        return predict_batch(model, x)
    n, d = x.shape
    stacked = np.empty((n * n_draws, d))
    for i in range(n):
        eta = noise.sample(substream(seed, i), (n_draws, d))
        stacked[i * n_draws:(i + 1) * n_draws] = x[i] + eta
    logits = nn.forward(model, stacked).reshape(n, n_draws, -1)
    return np.argmax(logits.mean(axis=1), axis=1)
