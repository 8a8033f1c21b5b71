"""Rate modeling for the latent feature maps.

Each feature map gets a Laplace density whose location/scale are learned,
convolved with the uniform density of one quantizer cell.  That smoothed
density has a closed form from the Laplace CDF, gives the probability
mass of every lattice point exactly (mass = step * density), and stays
differentiable in the coefficient, the location, the scale and the step,
which is what the training objective needs.

Plain-numpy versions serve analysis and the bitstream layer; `rate_term`
builds the same formula out of autodiff ops for training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DegenerateFitError, DomainError, UsageError

LN2 = math.log(2.0)
DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class LaplaceParams:
    """Location and scale of one feature map's fitted Laplace density."""

    mu: float
    b: float


def laplace_cdf(x, mu, b):
    """CDF of the Laplace density with location mu and scale b."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.asarray(b) <= 0.0):
        raise DomainError("laplace_cdf requires b > 0")
    u = x - mu
    return 0.5 + 0.5 * np.sign(u) * (1.0 - np.exp(-np.abs(u) / b))


def laplace_pdf(x, mu, b):
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.asarray(b) <= 0.0):
        raise DomainError("laplace_pdf requires b > 0")
    return np.exp(-np.abs(x - mu) / b) / (2.0 * b)


def p_tilde(y, mu, b, delta):
    """Laplace density smoothed by one quantizer cell's uniform density.

    Equals [F(y + delta/2) - F(y - delta/2)] / delta.
    """
    if np.any(np.asarray(delta) <= 0.0):
        raise DomainError("p_tilde requires delta > 0")
    y = np.asarray(y, dtype=np.float64)
    return (laplace_cdf(y + delta / 2.0, mu, b) - laplace_cdf(y - delta / 2.0, mu, b)) / delta


def p_hat(q, mu, b, delta):
    """Probability mass of lattice point q: exactly delta * p_tilde(q)."""
    if np.any(np.asarray(delta) <= 0.0):
        raise DomainError("p_hat requires delta > 0")
    q = np.asarray(q, dtype=np.float64)
    return laplace_cdf(q + delta / 2.0, mu, b) - laplace_cdf(q - delta / 2.0, mu, b)


def _laplace_cdf_graph(x: ad.Tensor, mu: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    u = x - mu
    s = ad.sign(u)  # constant factor; the composite stays differentiable
    e = ad.exp(-(u.abs() / b))
    return 0.5 + 0.5 * s * (1.0 - e)


def rate_term(y_noisy: ad.Tensor, delta: ad.Tensor, mu: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Per-map coding cost in bits/coefficient, as a graph node.

    y_noisy: (batch, m, h, w) latents already carrying the per-map noise.
    delta, mu, b: (m,) tensors.  Returns an (m,) tensor
        -log2(delta_i) - mean_j log2(p_tilde_i(y_ij)),
    with the density floored at DENSITY_FLOOR before the log.
    """
    m = y_noisy.shape[1]
    dr = delta.reshape((1, m, 1, 1))
    mur = mu.reshape((1, m, 1, 1))
    br = b.reshape((1, m, 1, 1))
    hi = _laplace_cdf_graph(y_noisy + dr * 0.5, mur, br)
    lo = _laplace_cdf_graph(y_noisy - dr * 0.5, mur, br)
    pt = ad.maximum((hi - lo) / dr, DENSITY_FLOOR)
    bits = pt.log() * (-1.0 / LN2)
    per_map = bits.mean(axis=(0, 2, 3))
    return per_map - delta.log() * (1.0 / LN2)


def rate_term_value(y: np.ndarray, delta: np.ndarray, mu: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Noise-free numpy evaluation of rate_term (tau = 0), per map."""
    m = y.shape[-3]
    d = delta.reshape((m, 1, 1))
    pt = np.maximum(p_tilde(y, mu.reshape((m, 1, 1)), b.reshape((m, 1, 1)), d), DENSITY_FLOOR)
    axes = tuple(i for i in range(y.ndim) if i != y.ndim - 3)
    return -np.log2(pt).mean(axis=axes) - np.log2(delta)


def empirical_entropy(symbols: np.ndarray) -> float:
    """Plug-in entropy (bits/coefficient) of one map's quantization indices."""
    symbols = np.asarray(symbols)
    if symbols.size == 0:
        raise UsageError("empirical_entropy requires at least one symbol")
    _, counts = np.unique(symbols, return_counts=True)
    p = counts / symbols.size
    return float(-(p * np.log2(p)).sum())


def rate_bpp_estimate(symbols: np.ndarray, pixel_count: int) -> float:
    """Total empirical-entropy rate of an (m, h, w) symbol tensor in bits/pixel."""
    symbols = np.asarray(symbols)
    if symbols.ndim != 3:
        raise UsageError("rate_bpp_estimate expects an (m, h, w) symbol tensor")
    n = symbols.shape[1] * symbols.shape[2]
    total_bits = sum(empirical_entropy(symbols[i]) * n for i in range(symbols.shape[0]))
    return total_bits / pixel_count


def fit_laplace(samples) -> LaplaceParams:
    """Maximum-likelihood Laplace fit: location = median, scale = MAD about it."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size < 2:
        raise UsageError("fit_laplace requires at least two samples")
    mu = float(np.median(samples))
    b = float(np.abs(samples - mu).mean())
    if b <= 0.0:
        raise DegenerateFitError("constant samples give a zero-scale fit")
    return LaplaceParams(mu=mu, b=b)
