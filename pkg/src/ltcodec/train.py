"""Joint training of the transform pair, the per-map steps, and the
entropy model.

The objective per batch element is

    || X - g_d(g_e(X) + noise) ||_F^2  +  gamma * sum_i h_i

where the noise is the per-map uniform quantization proxy and h_i is the
differentiable per-map rate term (bits/coefficient).  The three parameter
groups {transform}, {log step sizes}, {entropy model} take turns: one
gradient step each per batch, in that order, each on a freshly evaluated
loss, with the normalization positivity projection applied after the
transform step.  Training is single-threaded and bit-reproducible under a
fixed seed.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .entropy import rate_term
from .errors import DomainError, NumericError, UsageError
from .imageio import read_image_luma
from .model import (ArchConfig, Model, ModelParams, default_arch, init_params,
                    project_gdn, save_model, encode_transform, decode_transform)
from .quant import estimate_means, inject_noise

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    gamma: float = 10000.0
    learn_delta: bool = False
    end_normalization: bool = True
    batch_size: int = 8
    steps: int = 3000
    lr_transform: float = 1e-4
    lr_delta: float = 1e-3
    lr_psi: float = 1e-3
    seed: int = 0
    patch_size: int = 64
    data_dir: str = ""
    patch_count: int = 4000
    latent_maps: int = 32
    hidden_channels: int = 32
    log_every: int = 50
    val_fraction: float = 0.10
    calib_fraction: float = 0.05

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise DomainError("gamma must be positive")
        if self.learn_delta and self.end_normalization:
            raise UsageError("learned step sizes replace the end normalization; "
                             "enable only one of the two")
        if self.batch_size < 1 or self.steps < 0:
            raise UsageError("bad batch size or step count")


@dataclass
class PatchSet:
    """Luminance patches in [0, 255], split into disjoint roles."""

    train: np.ndarray
    val: np.ndarray
    calib: np.ndarray

    def __post_init__(self):
        if self.train.ndim != 3:
            raise UsageError("patches must be (n, h, w)")


def ingest_dataset(image_dir: str, patch_size: int, count: int, seed: int,
                   val_fraction: float = 0.10, calib_fraction: float = 0.05) -> PatchSet:
    """Random luminance crops from every readable PGM/PNG in a directory."""
    rng = np.random.default_rng(seed)
    names = sorted(os.listdir(image_dir))
    images = []
    for name in names:
        if not name.lower().endswith((".pgm", ".png")):
            continue
        img = read_image_luma(os.path.join(image_dir, name))
        if img.shape[0] < patch_size or img.shape[1] < patch_size:
            log.warning("skipping %s: smaller than patch size %d", name, patch_size)
            continue
        images.append(img)
    if not images:
        raise UsageError(f"no usable images in {image_dir}")
    patches = np.empty((count, patch_size, patch_size), dtype=np.float64)
    for i in range(count):
        img = images[rng.integers(len(images))]
        r = rng.integers(img.shape[0] - patch_size + 1)
        c = rng.integers(img.shape[1] - patch_size + 1)
        patches[i] = img[r:r + patch_size, c:c + patch_size]
    n_val = int(round(count * val_fraction))
    n_calib = int(round(count * calib_fraction))
    if n_val + n_calib >= count:
        raise UsageError("splits leave no training patches")
    return PatchSet(train=patches[:count - n_val - n_calib],
                    val=patches[count - n_val - n_calib:count - n_calib],
                    calib=patches[count - n_calib:])


def rd_loss(batch: np.ndarray, params: ModelParams, arch: ArchConfig,
            gamma: float, rng: np.random.Generator):
    """Training loss on one (n, 1, h, w) batch.

    Returns (loss tensor, aux dict).  The same noisy latents feed both the
    decoder and the rate term, and aux carries the raw noise draws so an
    external evaluation can reproduce the value exactly.
    """
    x = ad.Tensor(np.asarray(batch, dtype=np.float64))
    n = x.shape[0]
    y = encode_transform(x, params, arch)
    delta = ad.exp(params.log_delta)
    tau = rng.uniform(-0.5, 0.5, size=y.shape)
    y_noisy = inject_noise(y, delta, tau=tau)
    x_hat = decode_transform(y_noisy, params, arch)
    err = x - x_hat
    mse_sum = (err * err).sum() * (1.0 / n)
    b = ad.exp(params.psi_logb)
    per_map_bits = rate_term(y_noisy, delta, params.psi_mu, b)
    rate_sum = per_map_bits.sum()
    loss = mse_sum + gamma * rate_sum
    if not np.isfinite(loss.data):
        raise NumericError(
            "non-finite loss: distortion="
            f"{float(mse_sum.data)!r} rate_per_map={per_map_bits.data!r}")
    aux = {
        "mse": float(mse_sum.data) / batch[0].size,
        "rate_per_map": per_map_bits.data.copy(),
        "rate_bits_per_coeff": float(per_map_bits.data.mean()),
        "tau": tau,
        "latents": y.data,
    }
    return loss, aux


class Adam:
    """Standard Adam on a fixed parameter list; state keyed by position."""

    def __init__(self, params: list[ad.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)


def train(config: TrainConfig, patches: PatchSet | None = None,
          out_path: str | None = None, log_path: str | None = None,
          delta_log_path: str | None = None,
          arch: ArchConfig | None = None) -> tuple[Model, list[dict]]:
    """Run the alternating optimization; returns the model and the log rows.

    When `patches` is omitted the dataset is ingested from config.data_dir.
    An explicit `arch` overrides the stock geometry (its end_normalization
    must agree with the config).  The finished model carries centering means
    estimated on the calibration split and is written to out_path when given.
    """
    if patches is None:
        patches = ingest_dataset(config.data_dir, config.patch_size,
                                 config.patch_count, config.seed,
                                 config.val_fraction, config.calib_fraction)
    if arch is None:
        arch = default_arch(config.latent_maps, config.hidden_channels,
                            config.end_normalization)
    elif arch.end_normalization != config.end_normalization:
        raise UsageError("arch and config disagree on end_normalization")
    if config.patch_size % arch.total_stride:
        raise UsageError(f"patch size must be a multiple of {arch.total_stride}")
    rng = np.random.default_rng(config.seed)
    params = init_params(arch, rng)

    opt_t = Adam(params.transform_params(), config.lr_transform)
    opt_d = Adam(params.delta_params(), config.lr_delta)
    opt_p = Adam(params.psi_params(), config.lr_psi)

    train_patches = patches.train
    n_train = train_patches.shape[0]
    rows: list[dict] = []
    for step in range(config.steps):
        idx = rng.integers(n_train, size=config.batch_size)
        batch = train_patches[idx][:, None, :, :]

        loss, aux = rd_loss(batch, params, arch, config.gamma, rng)
        ad.backward(loss, params.transform_params())
        opt_t.step()
        project_gdn(params)
        ad.zero_grads(params.all_params())

        if config.learn_delta:
            loss, aux = rd_loss(batch, params, arch, config.gamma, rng)
            ad.backward(loss, params.delta_params())
            opt_d.step()
            ad.zero_grads(params.all_params())

        loss, aux = rd_loss(batch, params, arch, config.gamma, rng)
        ad.backward(loss, params.psi_params())
        opt_p.step()
        ad.zero_grads(params.all_params())

        if config.log_every and (step % config.log_every == 0 or step == config.steps - 1):
            row = {
                "step": step,
                "loss": float(loss.data),
                "mse": aux["mse"],
                "rate_bits_per_coeff": aux["rate_bits_per_coeff"],
                "val_mse": _validation_mse(patches.val, params, arch),
                "delta": np.exp(params.log_delta.data).copy(),
            }
            rows.append(row)
            log.info("step %d loss %.4f mse %.4f rate %.4f b/coeff",
                     step, row["loss"], row["mse"], row["rate_bits_per_coeff"])

    params.mu_bar = _calibrate_means(patches.calib, params, arch, config.batch_size)
    trained = Model(arch=arch, params=params)
    if out_path:
        save_model(trained, out_path)
    if log_path:
        _write_log(log_path, rows)
    if delta_log_path:
        _write_delta_log(delta_log_path, rows, arch.latent_maps)
    return trained, rows


def _validation_mse(val: np.ndarray, params: ModelParams, arch: ArchConfig,
                    cap: int = 64) -> float:
    if val.shape[0] == 0:
        return float("nan")
    sub = val[:cap][:, None, :, :]
    with ad.no_grad():
        y = encode_transform(sub, params, arch)
        x_hat = decode_transform(y, params, arch)
    return float(((sub - x_hat.data) ** 2).mean())


def _calibrate_means(calib: np.ndarray, params: ModelParams, arch: ArchConfig,
                     batch_size: int) -> np.ndarray:
    if calib.shape[0] == 0:
        raise UsageError("calibration split is empty")
    chunks = []
    with ad.no_grad():
        for start in range(0, calib.shape[0], batch_size):
            sub = calib[start:start + batch_size][:, None, :, :]
            chunks.append(encode_transform(sub, params, arch).data)
    return estimate_means(np.concatenate(chunks, axis=0))


def _write_log(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss", "mse", "rate_bits_per_coeff", "val_mse"])
        for r in rows:
            w.writerow([r["step"], f"{r['loss']:.8g}", f"{r['mse']:.8g}",
                        f"{r['rate_bits_per_coeff']:.8g}", f"{r['val_mse']:.8g}"])


def _write_delta_log(path: str, rows: list[dict], m: int) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step"] + [f"delta_{i}" for i in range(m)])
        for r in rows:
            w.writerow([r["step"]] + [f"{d:.8g}" for d in r["delta"]])
