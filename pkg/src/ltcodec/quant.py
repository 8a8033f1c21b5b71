"""Uniform scalar quantization of latents, and its training-time proxy.

Test time: each map i is centered by mu_bar_i and quantized with step
beta * delta_i, rounding half away from zero (frozen so streams are
bit-exact across implementations).  Training time: hard rounding is
replaced by adding per-map uniform noise delta_i * tau, tau ~ U[-1/2, 1/2],
which keeps the objective differentiable in both the latents and the steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DomainError, UsageError

MIN_STEP = 1e-8


@dataclass
class QuantSpec:
    """Per-map steps, per-map centering means, and the global step multiplier."""

    delta: np.ndarray
    mu_bar: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float64)
        self.mu_bar = np.asarray(self.mu_bar, dtype=np.float64)
        if self.delta.shape != self.mu_bar.shape or self.delta.ndim != 1:
            raise UsageError("delta and mu_bar must be 1-D arrays of equal length")
        if np.any(self.delta <= 0.0):
            raise DomainError("quantization steps must be positive")
        if self.beta <= 0.0:
            raise DomainError("beta must be positive")

    @property
    def effective_step(self) -> np.ndarray:
        return self.beta * self.delta


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.trunc(x + np.copysign(0.5, x))


def quantize(y: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Map latents (..., m, h, w) to int32 lattice indices."""
    y = np.asarray(y, dtype=np.float64)
    step = spec.effective_step[:, None, None]
    mu = spec.mu_bar[:, None, None]
    return _round_half_away((y - mu) / step).astype(np.int32)


def dequantize(k: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Map int lattice indices back to reconstruction values."""
    k = np.asarray(k)
    step = spec.effective_step[:, None, None]
    mu = spec.mu_bar[:, None, None]
    return k.astype(np.float64) * step + mu


def inject_noise(y, delta, *, rng: np.random.Generator | None = None, tau: np.ndarray | None = None):
    """Add per-map uniform noise of support [-delta_i/2, delta_i/2].

    Exactly one of rng / tau must be given; tau holds pre-drawn U[-1/2, 1/2]
    values of y's shape.  Works on plain arrays or on graph tensors, in which
    case the output's gradient w.r.t. y is the identity and w.r.t. delta_i is
    the sum of that map's tau draws.
    """
    if (rng is None) == (tau is None):
        raise UsageError("inject_noise needs exactly one of rng or tau")
    shape = y.shape
    if tau is None:
        tau = rng.uniform(-0.5, 0.5, size=shape)
    elif tau.shape != shape:
        raise UsageError("tau must match y's shape")
    m = shape[-3]
    bshape = (1,) * (len(shape) - 3) + (m, 1, 1)
    if isinstance(y, ad.Tensor) or isinstance(delta, ad.Tensor):
        d = ad.maximum(ad.as_tensor(delta), MIN_STEP).reshape(bshape)
        return ad.as_tensor(y) + d * ad.Tensor(tau)
    d = np.maximum(np.asarray(delta, dtype=np.float64), MIN_STEP).reshape(bshape)
    return np.asarray(y, dtype=np.float64) + d * tau


def estimate_means(latents: np.ndarray) -> np.ndarray:
    """Per-map means over a stack of calibration latents (n, m, h, w).

    The calibration stack must be disjoint from the test material; the means
    ride along in the model file, so they cost nothing per image.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 4 or latents.size == 0:
        raise UsageError("estimate_means expects a non-empty (n, m, h, w) stack")
    return latents.mean(axis=(0, 2, 3))
