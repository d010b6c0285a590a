"""8-bit RGB image I/O (PNG via Pillow, binary PPM natively)."""

from __future__ import annotations

import os

import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """Unsupported or malformed image file."""


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Quantise a 3xHxW map in [0, 1] to HxWx3 uint8 (round half up, clamped)."""
    scaled = np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def from_bytes(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def _read_ppm(data: bytes, path) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P6":
        raise ImageFormatError(f"{path}: only binary PPM (P6) is supported, got {magic!r}")
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported PPM maxval {maxval}; only 8-bit is supported")
    pos += 1
    raw = data[pos : pos + width * height * 3]
    if len(raw) != width * height * 3:
        raise ImageFormatError(f"{path}: truncated PPM pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)


def _read_png(data: bytes, path) -> np.ndarray:
    # IHDR is always the first chunk: bit depth at byte 24, colour type at 25
    if len(data) < 26:
        raise ImageFormatError(f"{path}: truncated PNG header")
    bit_depth, colour_type = data[24], data[25]
    if bit_depth != 8:
        raise ImageFormatError(f"{path}: unsupported PNG bit depth {bit_depth}; only 8-bit is supported")
    from io import BytesIO

    from PIL import Image

    with Image.open(BytesIO(data)) as img:
        if colour_type not in (2, 6):  # RGB, RGBA
            raise ImageFormatError(f"{path}: unsupported PNG colour type {colour_type}; expected RGB")
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG or P6 PPM as a 3xHxW float64 map in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(PNG_SIGNATURE):
        return from_bytes(_read_png(data, path))
    if data.startswith(b"P6") or data.startswith(b"P3"):
        return from_bytes(_read_ppm(data, path))
    raise ImageFormatError(f"{path}: not a PNG or PPM file")


def save_image(image: np.ndarray, path) -> None:
    """Write a 3xHxW map as 8-bit RGB; format chosen by extension (.png or .ppm)."""
    pixels = to_bytes(image)
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        h, w, _ = pixels.shape
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (w, h))
            fh.write(pixels.tobytes())
    elif ext == ".png":
        from PIL import Image

        Image.fromarray(pixels).save(path, format="PNG")
    else:
        raise ImageFormatError(f"{path}: unsupported output extension {ext!r}")
