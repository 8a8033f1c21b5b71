"""Luminance image I/O: binary PGM read/write, 8-bit PNG read."""

from __future__ import annotations

import numpy as np

from .errors import FormatError

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luma_from_rgb(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luminance of an (h, w, 3) uint8 array, rounded to uint8."""
    y = np.tensordot(rgb.astype(np.float64), _LUMA_WEIGHTS, axes=([2], [0]))
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


def _next_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    n = len(blob)
    while pos < n:
        c = blob[pos:pos + 1]
        if c == b"#":
            while pos < n and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("truncated PGM header")
    start = pos
    while pos < n and not blob[pos:pos + 1].isspace():
        pos += 1
    return blob[start:pos], pos


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(blob, pos)
        try:
            fields.append(int(tok))
        except ValueError as e:
            raise FormatError(f"bad PGM header token {tok!r}") from e
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    if width < 1 or height < 1:
        raise FormatError("bad PGM dimensions")
    pos += 1  # single whitespace byte after maxval
    raster = blob[pos:pos + width * height]
    if len(raster) < width * height:
        raise FormatError("truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError("PGM writer expects a 2-D array")
    image = image.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_png_luma(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        if img.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
            raise FormatError(f"unsupported PNG bit depth (mode {img.mode})")
        if img.mode == "L":
            return np.asarray(img, dtype=np.uint8).copy()
        if img.mode in ("P", "LA", "RGBA", "RGB"):
            rgb = img.convert("RGB")
            return luma_from_rgb(np.asarray(rgb, dtype=np.uint8))
        raise FormatError(f"unsupported PNG mode {img.mode}")


def read_image_luma(path) -> np.ndarray:
    """Load any supported image as uint8 luminance, sniffing the format."""
    with open(path, "rb") as f:
        head = f.read(8)
    if head[:2] == b"P5":
        return read_pgm(path)
    if head == b"\x89PNG\r\n\x1a\n":
        return read_png_luma(path)
    raise FormatError("unrecognized image format (expected P5 PGM or PNG)")


def pad_to_multiple(image: np.ndarray, multiple: int) -> tuple[np.ndarray, int, int]:
    """Reflection-pad bottom/right to the next multiple; returns pads used."""
    h, w = image.shape
    pad_bottom = (-h) % multiple
    pad_right = (-w) % multiple
    if pad_bottom or pad_right:
        image = np.pad(image, ((0, pad_bottom), (0, pad_right)), mode="symmetric")
    return image, pad_bottom, pad_right
