"""Lossless coding of quantized latents.

Symbols are binarized as: a zero flag (adaptive, one context per map),
a sign bit (bypass), and the magnitude minus one as order-0 exponential
Golomb, whose prefix bins (the run of zeros and the stop bit) adapt in
per-map, depth-capped contexts while the suffix bits bypass.  Bins feed a
32-bit low/range binary arithmetic coder with 12-bit probability states:

    P(bit = 0) = p / 4096,   p in [1, 4095]
    after bit 0:  p += (4096 - p) >> 5
    after bit 1:  p -= p >> 5

The coder renormalizes byte-wise (range stays >= 2^24) and uses only
integer arithmetic, so identical input yields identical bytes everywhere.
Scan order is fixed: map-major, row-major inside a map.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, StreamError
from .model import Model, model_checksum
from .quant import QuantSpec, dequantize, quantize

PROB_ONE = 4096
PROB_INIT = 2048
ADAPT_SHIFT = 5
TOP = 1 << 24
MASK32 = 0xFFFFFFFF
MAX_SYMBOL = (1 << 15) - 1

CONTEXTS_PER_MAP = 6  # zero flag + prefix depths 0..4
PREFIX_DEPTH_CAP = 4

BITSTREAM_MAGIC = b"LTQ1"
HEADER_FMT = "<4sHHBBfII"
HEADER_SIZE = struct.calcsize(HEADER_FMT)


def make_contexts(n_maps: int) -> list[int]:
    """Fresh adaptive probability states, one per (map, bin kind)."""
    return [PROB_INIT] * (CONTEXTS_PER_MAP * n_maps)


class RangeEncoder:
    """Carry-counting binary range coder; finish() flushes the 32-bit low."""

    def __init__(self):
        self._low = 0
        self._range = MASK32
        self._cache = 0
        self._cache_ready = False
        self._pending = 0
        self._out = bytearray()

    def _shift(self):
        low = self._low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            if self._cache_ready:
                self._out.append((self._cache + carry) & 0xFF)
            if self._pending:
                fill = (0xFF + carry) & 0xFF
                self._out.extend([fill] * self._pending)
                self._pending = 0
            self._cache = (low >> 24) & 0xFF
            self._cache_ready = True
        else:
            self._pending += 1
        self._low = (low << 8) & MASK32

    def encode_bit(self, bit: int, probs: list[int], ctx: int):
        p = probs[ctx]
        bound = (self._range >> 12) * p
        if bit:
            self._low += bound
            self._range -= bound
            probs[ctx] = p - (p >> ADAPT_SHIFT)
        else:
            self._range = bound
            probs[ctx] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
        while self._range < TOP:
            self._shift()
            self._range = (self._range << 8) & MASK32

    def encode_bypass(self, bit: int):
        bound = self._range >> 1
        if bit:
            self._low += bound
            self._range -= bound
        else:
            self._range = bound
        while self._range < TOP:
            self._shift()
            self._range = (self._range << 8) & MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift()
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        if len(data) < 4:
            raise StreamError("payload shorter than coder state")
        self._data = data
        self._pos = 4
        self._code = int.from_bytes(data[:4], "big")
        self._range = MASK32

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise StreamError("truncated arithmetic-coded payload")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_bit(self, probs: list[int], ctx: int) -> int:
        p = probs[ctx]
        bound = (self._range >> 12) * p
        if self._code < bound:
            bit = 0
            self._range = bound
            probs[ctx] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
        else:
            bit = 1
            self._code -= bound
            self._range -= bound
            probs[ctx] = p - (p >> ADAPT_SHIFT)
        while self._range < TOP:
            self._code = ((self._code << 8) | self._next_byte()) & MASK32
            self._range = (self._range << 8) & MASK32
        return bit

    def decode_bypass(self) -> int:
        bound = self._range >> 1
        if self._code < bound:
            bit = 0
            self._range = bound
        else:
            bit = 1
            self._code -= bound
            self._range -= bound
        while self._range < TOP:
            self._code = ((self._code << 8) | self._next_byte()) & MASK32
            self._range = (self._range << 8) & MASK32
        return bit


BYPASS = -1  # context id for P=1/2 bins in binarize() output


def binarize(k: int, map_index: int = 0) -> list[tuple[int, int]]:
    """Bin string of one symbol as (context id, bit) pairs; BYPASS = -1."""
    base = CONTEXTS_PER_MAP * map_index
    if k == 0:
        return [(base, 1)]
    if abs(k) > MAX_SYMBOL:
        raise StreamError(f"symbol {k} out of coded range")
    bins = [(base, 0), (BYPASS, 0 if k > 0 else 1)]
    mag = abs(k)
    nz = mag.bit_length() - 1
    for d in range(nz):
        bins.append((base + 1 + min(d, PREFIX_DEPTH_CAP), 0))
    bins.append((base + 1 + min(nz, PREFIX_DEPTH_CAP), 1))
    for j in range(nz - 1, -1, -1):
        bins.append((BYPASS, (mag >> j) & 1))
    return bins


def encode_symbols(symbols: np.ndarray, enc: RangeEncoder, probs: list[int]) -> None:
    """Code an (m, h, w) int tensor; inlined binarization for speed."""
    m = symbols.shape[0]
    for i in range(m):
        base = CONTEXTS_PER_MAP * i
        pref = base + 1
        for k in symbols[i].ravel().tolist():
            if k == 0:
                enc.encode_bit(1, probs, base)
                continue
            enc.encode_bit(0, probs, base)
            if k < 0:
                enc.encode_bypass(1)
                mag = -k
            else:
                enc.encode_bypass(0)
                mag = k
            if mag > MAX_SYMBOL:
                raise StreamError(f"symbol {k} out of coded range")
            nz = mag.bit_length() - 1
            for d in range(nz):
                enc.encode_bit(0, probs, pref + (d if d < PREFIX_DEPTH_CAP else PREFIX_DEPTH_CAP))
            enc.encode_bit(1, probs, pref + (nz if nz < PREFIX_DEPTH_CAP else PREFIX_DEPTH_CAP))
            for j in range(nz - 1, -1, -1):
                enc.encode_bypass((mag >> j) & 1)


def decode_symbols(shape: tuple[int, int, int], dec: RangeDecoder, probs: list[int]) -> np.ndarray:
    m, h, w = shape
    out = np.empty((m, h * w), dtype=np.int32)
    for i in range(m):
        base = CONTEXTS_PER_MAP * i
        pref = base + 1
        row = out[i]
        for j in range(h * w):
            if dec.decode_bit(probs, base):
                row[j] = 0
                continue
            negative = dec.decode_bypass()
            nz = 0
            while not dec.decode_bit(probs, pref + (nz if nz < PREFIX_DEPTH_CAP else PREFIX_DEPTH_CAP)):
                nz += 1
                if nz > 16:
                    raise StreamError("magnitude prefix overran coded range")
            mag = 1
            for _ in range(nz):
                mag = (mag << 1) | dec.decode_bypass()
            row[j] = -mag if negative else mag
    return out.reshape(m, h, w)


def code_symbol_tensor(symbols: np.ndarray) -> bytes:
    """Standalone lossless coding of one (m, h, w) symbol tensor."""
    enc = RangeEncoder()
    encode_symbols(symbols, enc, make_contexts(symbols.shape[0]))
    return enc.finish()


def decode_symbol_tensor(data: bytes, shape: tuple[int, int, int]) -> np.ndarray:
    dec = RangeDecoder(data)
    return decode_symbols(shape, dec, make_contexts(shape[0]))


# ---------------------------------------------------------------------
# Image container
# ---------------------------------------------------------------------

def build_header(height: int, width: int, pad_right: int, pad_bottom: int,
                 beta: float, model_crc: int, payload_len: int) -> bytes:
    if height > 0xFFFF or width > 0xFFFF:
        raise FormatError("image too large for the container")
    if pad_right > 0xFF or pad_bottom > 0xFF:
        raise FormatError("padding too large for the container")
    return struct.pack(HEADER_FMT, BITSTREAM_MAGIC, height, width,
                       pad_right, pad_bottom, beta, model_crc, payload_len)


def parse_header(blob: bytes) -> dict:
    if len(blob) < HEADER_SIZE:
        raise FormatError("bitstream truncated before header end")
    magic, height, width, pad_right, pad_bottom, beta, model_crc, payload_len = \
        struct.unpack(HEADER_FMT, blob[:HEADER_SIZE])
    if magic != BITSTREAM_MAGIC:
        raise FormatError("bad bitstream magic")
    return {
        "height": height, "width": width,
        "pad_right": pad_right, "pad_bottom": pad_bottom,
        "beta": beta, "model_crc": model_crc, "payload_len": payload_len,
    }


def _latent_symbols(image: np.ndarray, model: Model, beta: float):
    from . import autodiff as ad
    from .imageio import pad_to_multiple
    from .model import encode_transform

    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError("encode_image expects a 2-D luminance image")
    padded, pad_bottom, pad_right = pad_to_multiple(arr, model.arch.total_stride)
    with ad.no_grad():
        y = encode_transform(padded[None, None], model.params, model.arch).data[0]
    spec = QuantSpec(delta=model.params.delta, mu_bar=model.params.mu_bar, beta=beta)
    return quantize(y, spec), spec, pad_bottom, pad_right


def encode_image(image: np.ndarray, model: Model, beta: float = 1.0) -> bytes:
    """Full pipeline: pad, transform, quantize, code; returns the container."""
    beta = float(np.float32(beta))  # stored as f32; quantize with the stored value
    symbols, _, pad_bottom, pad_right = _latent_symbols(image, model, beta)
    if symbols.size and int(np.abs(symbols).max()) > MAX_SYMBOL:
        raise StreamError("quantized symbols exceed the coded range")
    payload = code_symbol_tensor(symbols)
    h, w = np.asarray(image).shape
    header = build_header(h, w, pad_right, pad_bottom, beta,
                          model_checksum(model), len(payload))
    return header + payload


def decode_image(blob: bytes, model: Model) -> np.ndarray:
    """Invert encode_image; returns the uint8 reconstruction."""
    from . import autodiff as ad
    from .model import decode_transform

    head = parse_header(blob)
    if head["model_crc"] != model_checksum(model):
        raise FormatError("bitstream was produced with a different model")
    payload = blob[HEADER_SIZE:]
    if len(payload) != head["payload_len"]:
        raise StreamError("payload length mismatch (truncated or padded stream)")
    hp = head["height"] + head["pad_bottom"]
    wp = head["width"] + head["pad_right"]
    lh, lw = model.arch.latent_extent(hp), model.arch.latent_extent(wp)
    symbols = decode_symbol_tensor(payload, (model.arch.latent_maps, lh, lw))
    spec = QuantSpec(delta=model.params.delta, mu_bar=model.params.mu_bar, beta=head["beta"])
    y_hat = dequantize(symbols, spec)
    with ad.no_grad():
        rec = decode_transform(y_hat[None], model.params, model.arch).data[0, 0]
    rec = rec[:head["height"], :head["width"]]
    return np.clip(np.rint(rec), 0, 255).astype(np.uint8)


def decode_image_symbols(blob: bytes, model: Model) -> np.ndarray:
    """Just the losslessly decoded symbol tensor (for round-trip checks)."""
    head = parse_header(blob)
    if head["model_crc"] != model_checksum(model):
        raise FormatError("bitstream was produced with a different model")
    payload = blob[HEADER_SIZE:]
    if len(payload) != head["payload_len"]:
        raise StreamError("payload length mismatch (truncated or padded stream)")
    hp = head["height"] + head["pad_bottom"]
    wp = head["width"] + head["pad_right"]
    lh, lw = model.arch.latent_extent(hp), model.arch.latent_extent(wp)
    return decode_symbol_tensor(payload, (model.arch.latent_maps, lh, lw))
