"""Analysis/synthesis transform assembly, parameter init, model files.

The encoder is a stack of strided convolutions with divisive normalization
between them (optionally also after the last conv); the decoder is the
exact mirror: each conv becomes a transpose conv, each normalization its
multiplicative inverse, in reverse order.  Input is single-channel
luminance in [0, 255].
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import FormatError, ShapeError, UsageError

MODEL_MAGIC = b"LTAE"
MODEL_VERSION = 1
GDN_BETA_MIN = 1e-6


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    kernel: int
    stride: int
    pad: int


@dataclass(frozen=True)
class ArchConfig:
    """Shape of the transform pair; decoder is derived, never stored."""

    latent_maps: int
    layers: tuple[LayerSpec, ...]
    end_normalization: bool = False
    in_channels: int = 1

    def __post_init__(self):
        if not self.layers:
            raise UsageError("at least one layer is required")
        if self.layers[-1].out_channels != self.latent_maps:
            raise UsageError("last layer must emit latent_maps channels")
        for l in self.layers:
            if l.kernel < 1 or l.stride < 1 or l.pad < 0:
                raise UsageError("bad layer hyperparameters")

    @property
    def total_stride(self) -> int:
        s = 1
        for l in self.layers:
            s *= l.stride
        return s

    @property
    def channel_chain(self) -> tuple[int, ...]:
        return (self.in_channels,) + tuple(l.out_channels for l in self.layers)

    def gdn_channels(self) -> list[int]:
        chans = [l.out_channels for l in self.layers[:-1]]
        if self.end_normalization:
            chans.append(self.latent_maps)
        return chans

    def latent_extent(self, h: int) -> int:
        for l in self.layers:
            h = (h + 2 * l.pad - l.kernel) // l.stride + 1
        return h


def default_arch(latent_maps: int = 32, hidden_channels: int = 32,
                 end_normalization: bool = False) -> ArchConfig:
    """The stock 3-conv / 16x-downsampling transform."""
    return ArchConfig(
        latent_maps=latent_maps,
        layers=(
            LayerSpec(hidden_channels, 9, 4, 4),
            LayerSpec(hidden_channels, 5, 2, 2),
            LayerSpec(latent_maps, 5, 2, 2),
        ),
        end_normalization=end_normalization,
    )


@dataclass
class ModelParams:
    """Every learnable quantity plus the non-learned centering means."""

    enc_w: list[ad.Tensor]
    enc_b: list[ad.Tensor]
    enc_gdn_beta: list[ad.Tensor]
    enc_gdn_gamma: list[ad.Tensor]
    dec_w: list[ad.Tensor]
    dec_b: list[ad.Tensor]
    dec_gdn_beta: list[ad.Tensor]
    dec_gdn_gamma: list[ad.Tensor]
    log_delta: ad.Tensor
    psi_mu: ad.Tensor
    psi_logb: ad.Tensor
    mu_bar: np.ndarray

    def transform_params(self) -> list[ad.Tensor]:
        return (self.enc_w + self.enc_b + self.enc_gdn_beta + self.enc_gdn_gamma
                + self.dec_w + self.dec_b + self.dec_gdn_beta + self.dec_gdn_gamma)

    def delta_params(self) -> list[ad.Tensor]:
        return [self.log_delta]

    def psi_params(self) -> list[ad.Tensor]:
        return [self.psi_mu, self.psi_logb]

    def all_params(self) -> list[ad.Tensor]:
        return self.transform_params() + self.delta_params() + self.psi_params()

    @property
    def delta(self) -> np.ndarray:
        return np.exp(self.log_delta.data)

    @property
    def psi_b(self) -> np.ndarray:
        return np.exp(self.psi_logb.data)


@dataclass
class Model:
    arch: ArchConfig
    params: ModelParams


def init_params(arch: ArchConfig, rng: np.random.Generator) -> ModelParams:
    """Fresh parameters: He-style conv weights, identity-leaning GDN,
    unit steps (log_delta = 0) and a unit-scale entropy model."""
    chain = arch.channel_chain
    enc_w, enc_b, dec_w, dec_b = [], [], [], []
    for i, l in enumerate(arch.layers):
        cin, cout = chain[i], chain[i + 1]
        std = np.sqrt(2.0 / (cin * l.kernel * l.kernel))
        enc_w.append(ad.parameter(rng.normal(0.0, std, (cout, cin, l.kernel, l.kernel))))
        enc_b.append(ad.parameter(np.zeros(cout)))
    for i, l in enumerate(arch.layers):
        cin, cout = chain[i], chain[i + 1]
        std = np.sqrt(2.0 / (cout * l.kernel * l.kernel))
        dec_w.append(ad.parameter(rng.normal(0.0, std, (cout, cin, l.kernel, l.kernel))))
        dec_b.append(ad.parameter(np.zeros(cin)))

    def gdn_pair(c):
        beta = ad.parameter(np.ones(c))
        gamma = ad.parameter(0.1 * np.eye(c) + 1e-3)
        return beta, gamma

    enc_gdn_beta, enc_gdn_gamma, dec_gdn_beta, dec_gdn_gamma = [], [], [], []
    for c in arch.gdn_channels():
        b, g = gdn_pair(c)
        enc_gdn_beta.append(b)
        enc_gdn_gamma.append(g)
        b, g = gdn_pair(c)
        dec_gdn_beta.append(b)
        dec_gdn_gamma.append(g)

    m = arch.latent_maps
    return ModelParams(
        enc_w=enc_w, enc_b=enc_b,
        enc_gdn_beta=enc_gdn_beta, enc_gdn_gamma=enc_gdn_gamma,
        dec_w=dec_w, dec_b=dec_b,
        dec_gdn_beta=dec_gdn_beta, dec_gdn_gamma=dec_gdn_gamma,
        log_delta=ad.parameter(np.zeros(m)),
        psi_mu=ad.parameter(np.zeros(m)),
        psi_logb=ad.parameter(np.zeros(m)),
        mu_bar=np.zeros(m),
    )


def new_model(arch: ArchConfig, seed: int = 0) -> Model:
    return Model(arch=arch, params=init_params(arch, np.random.default_rng(seed)))


def project_gdn(params: ModelParams) -> None:
    """Re-impose positivity after an optimizer step."""
    for t in params.enc_gdn_beta + params.dec_gdn_beta:
        np.maximum(t.data, GDN_BETA_MIN, out=t.data)
    for t in params.enc_gdn_gamma + params.dec_gdn_gamma:
        np.maximum(t.data, 0.0, out=t.data)


def encode_transform(x, params: ModelParams, arch: ArchConfig) -> ad.Tensor:
    """Image batch (n, 1, h, w) -> latents (n, m, h/s, w/s)."""
    t = ad.as_tensor(x)
    if t.data.ndim != 4:
        raise ShapeError("encode_transform expects (batch, 1, h, w)")
    h, w = t.data.shape[2], t.data.shape[3]
    s = arch.total_stride
    if h % s or w % s:
        raise ShapeError(f"input extent ({h},{w}) not divisible by total stride {s}")
    n_layers = len(arch.layers)
    for i, l in enumerate(arch.layers):
        t = ad.conv2d(t, params.enc_w[i], params.enc_b[i], stride=l.stride, pad=l.pad)
        if i < n_layers - 1:
            t = ad.gdn(t, params.enc_gdn_beta[i], params.enc_gdn_gamma[i])
    if arch.end_normalization:
        t = ad.gdn(t, params.enc_gdn_beta[-1], params.enc_gdn_gamma[-1])
    return t


def decode_transform(y, params: ModelParams, arch: ArchConfig) -> ad.Tensor:
    """Latents (n, m, h', w') -> image batch (n, 1, h'*s, w'*s), unclamped.

    Clamping to [0, 255] happens only where an image is actually emitted.
    """
    t = ad.as_tensor(y)
    if t.data.ndim != 4 or t.data.shape[1] != arch.latent_maps:
        raise ShapeError("decode_transform expects (batch, m, h, w) latents")
    if arch.end_normalization:
        t = ad.igdn(t, params.dec_gdn_beta[-1], params.dec_gdn_gamma[-1])
    h, w = t.data.shape[2], t.data.shape[3]
    n_layers = len(arch.layers)
    for i in range(n_layers - 1, -1, -1):
        l = arch.layers[i]
        h, w = h * l.stride, w * l.stride
        t = ad.tconv2d(t, params.dec_w[i], params.dec_b[i], stride=l.stride, pad=l.pad,
                       out_size=(h, w))
        if i > 0:
            t = ad.igdn(t, params.dec_gdn_beta[i - 1], params.dec_gdn_gamma[i - 1])
    return t


# ---------------------------------------------------------------------
# Model file: magic, version, arch block, named float64 sections, CRC32
# ---------------------------------------------------------------------

def _section_names(arch: ArchConfig) -> list[str]:
    names = []
    for i in range(len(arch.layers)):
        names += [f"enc{i}.w", f"enc{i}.b"]
    for i in range(len(arch.gdn_channels())):
        names += [f"enc_gdn{i}.beta", f"enc_gdn{i}.gamma"]
    for i in range(len(arch.layers)):
        names += [f"dec{i}.w", f"dec{i}.b"]
    for i in range(len(arch.gdn_channels())):
        names += [f"dec_gdn{i}.beta", f"dec_gdn{i}.gamma"]
    names += ["log_delta", "psi_mu", "psi_logb", "mu_bar"]
    return names


def _section_arrays(model: Model) -> dict[str, np.ndarray]:
    p = model.params
    out: dict[str, np.ndarray] = {}
    for i in range(len(model.arch.layers)):
        out[f"enc{i}.w"] = p.enc_w[i].data
        out[f"enc{i}.b"] = p.enc_b[i].data
        out[f"dec{i}.w"] = p.dec_w[i].data
        out[f"dec{i}.b"] = p.dec_b[i].data
    for i in range(len(model.arch.gdn_channels())):
        out[f"enc_gdn{i}.beta"] = p.enc_gdn_beta[i].data
        out[f"enc_gdn{i}.gamma"] = p.enc_gdn_gamma[i].data
        out[f"dec_gdn{i}.beta"] = p.dec_gdn_beta[i].data
        out[f"dec_gdn{i}.gamma"] = p.dec_gdn_gamma[i].data
    out["log_delta"] = p.log_delta.data
    out["psi_mu"] = p.psi_mu.data
    out["psi_logb"] = p.psi_logb.data
    out["mu_bar"] = p.mu_bar
    return out


def serialize_model(model: Model) -> bytes:
    arch = model.arch
    body = bytearray()
    body += MODEL_MAGIC
    body += struct.pack("<B", MODEL_VERSION)
    body += struct.pack("<H", arch.latent_maps)
    body += struct.pack("<B", len(arch.layers))
    for l in arch.layers:
        body += struct.pack("<HBBB", l.out_channels, l.kernel, l.stride, l.pad)
    body += struct.pack("<B", 1 if arch.end_normalization else 0)
    arrays = _section_arrays(model)
    for name in _section_names(arch):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        nb = name.encode("ascii")
        body += struct.pack("<B", len(nb))
        body += nb
        body += struct.pack("<I", arr.size)
        body += arr.tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    return bytes(body)


def model_checksum(model: Model) -> int:
    """The CRC that the serialized file carries (and bitstreams reference)."""
    blob = serialize_model(model)
    return struct.unpack("<I", blob[-4:])[0]


def save_model(model: Model, path) -> int:
    blob = serialize_model(model)
    with open(path, "wb") as f:
        f.write(blob)
    return struct.unpack("<I", blob[-4:])[0]


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("model file truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize_model(blob: bytes) -> Model:
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise FormatError("bad model magic")
    if len(blob) < 9:
        raise FormatError("model file truncated")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise FormatError("model checksum failure")
    r = _Reader(blob[:-4])
    r.take(4)
    (version,) = r.unpack("<B")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    (m,) = r.unpack("<H")
    (n_layers,) = r.unpack("<B")
    layers = []
    for _ in range(n_layers):
        out_ch, kernel, stride, pad = r.unpack("<HBBB")
        layers.append(LayerSpec(out_ch, kernel, stride, pad))
    (endn,) = r.unpack("<B")
    arch = ArchConfig(latent_maps=m, layers=tuple(layers), end_normalization=bool(endn))

    sections: dict[str, np.ndarray] = {}
    for name in _section_names(arch):
        (nlen,) = r.unpack("<B")
        got = r.take(nlen).decode("ascii")
        if got != name:
            raise FormatError(f"unexpected section {got!r} (wanted {name!r})")
        (count,) = r.unpack("<I")
        sections[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
    if r.pos != len(blob) - 4:
        raise FormatError("trailing bytes in model file")

    params = init_params(arch, np.random.default_rng(0))

    def load(t: ad.Tensor, name: str):
        arr = sections[name]
        if arr.size != t.data.size:
            raise FormatError(f"section {name} has wrong element count")
        t.data = arr.reshape(t.data.shape)

    for i in range(len(arch.layers)):
        load(params.enc_w[i], f"enc{i}.w")
        load(params.enc_b[i], f"enc{i}.b")
        load(params.dec_w[i], f"dec{i}.w")
        load(params.dec_b[i], f"dec{i}.b")
    for i in range(len(arch.gdn_channels())):
        load(params.enc_gdn_beta[i], f"enc_gdn{i}.beta")
        load(params.enc_gdn_gamma[i], f"enc_gdn{i}.gamma")
        load(params.dec_gdn_beta[i], f"dec_gdn{i}.beta")
        load(params.dec_gdn_gamma[i], f"dec_gdn{i}.gamma")
    load(params.log_delta, "log_delta")
    load(params.psi_mu, "psi_mu")
    load(params.psi_logb, "psi_logb")
    if sections["mu_bar"].size != arch.latent_maps:
        raise FormatError("section mu_bar has wrong element count")
    params.mu_bar = sections["mu_bar"].copy()
    return Model(arch=arch, params=params)


def load_model(path) -> Model:
    with open(path, "rb") as f:
        blob = f.read()
    return deserialize_model(blob)
