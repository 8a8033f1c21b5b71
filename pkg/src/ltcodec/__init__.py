"""ltcodec: a desk-scale learned-transform image codec.

A convolutional autoencoder with divisive normalization is trained jointly
with one quantization step size per latent feature map; at test time a
single trained transform traces a full rate-distortion curve by scaling
those steps.  The package bundles its own float64 autodiff, a parametric
entropy model, an adaptive binary arithmetic coder, and an analysis CLI.
"""

from . import errors
from .autodiff import Tensor, backward, conv2d, gdn, igdn, no_grad, tconv2d
from .entropy import (LaplaceParams, empirical_entropy, fit_laplace, laplace_cdf,
                      p_hat, p_tilde, rate_term)
from .model import (ArchConfig, LayerSpec, Model, ModelParams, decode_transform,
                    default_arch, encode_transform, init_params, load_model,
                    new_model, save_model)
from .quant import QuantSpec, dequantize, estimate_means, inject_noise, quantize
from .bitstream import decode_image, encode_image
from .train import PatchSet, TrainConfig, ingest_dataset, rd_loss, train
from .analysis import (RDPoint, compare_curves, latent_report, probe, psnr,
                       rd_sweep)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "Tensor", "backward", "conv2d", "tconv2d", "gdn", "igdn", "no_grad",
    "LaplaceParams", "laplace_cdf", "p_tilde", "p_hat", "rate_term",
    "empirical_entropy", "fit_laplace",
    "ArchConfig", "LayerSpec", "Model", "ModelParams", "default_arch",
    "init_params", "new_model", "encode_transform", "decode_transform",
    "save_model", "load_model",
    "QuantSpec", "quantize", "dequantize", "inject_noise", "estimate_means",
    "encode_image", "decode_image",
    "TrainConfig", "PatchSet", "train", "rd_loss", "ingest_dataset",
    "RDPoint", "psnr", "rd_sweep", "latent_report", "probe", "compare_curves",
]
