"""Binary PGM (P5) / PPM (P6) codec, plus optional PNG via Pillow."""

from __future__ import annotations

import os

import numpy as np

_WHITESPACE = b" \t\n\r\v\f"


class DecodeError(ValueError):
    """The file is not a well-formed image."""


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last token.
    """
    tokens: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and (buf[pos] in _WHITESPACE or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise DecodeError(f"malformed header: expected {count} fields, found {len(tokens)} (byte offset {pos})")
        tokens.append(buf[start:pos])
    if pos >= n or buf[pos] not in _WHITESPACE:
        raise DecodeError(f"malformed header: missing whitespace after maxval at byte offset {pos}")
    return tokens, pos + 1


def decode_pnm(buf: bytes) -> tuple[np.ndarray, int]:
    """Decode P5/P6 bytes into an H×W×C integer array and its maxval."""
    tokens, offset = _header_tokens(buf, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise DecodeError(f"malformed header: unsupported magic {magic!r} (want P5 or P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DecodeError(f"malformed header: non-integer field ({exc})") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise DecodeError(f"malformed header: width={width} height={height} maxval={maxval}")
    channels = 1 if magic == b"P5" else 3
    depth = 1 if maxval < 256 else 2
    need = width * height * channels * depth
    have = len(buf) - offset
    if have < need:
        raise DecodeError(
            f"truncated payload: raster starts at byte offset {offset}, needs {need} bytes, "
            f"file ends at byte offset {len(buf)} ({have} available)"
        )
    dtype = np.uint8 if depth == 1 else np.dtype(">u2")
    raster = np.frombuffer(buf, dtype=dtype, count=width * height * channels, offset=offset)
    return raster.reshape(height, width, channels), maxval


def encode_pnm(pixels: np.ndarray, maxval: int = 255) -> bytes:
    """Encode an H×W (P5), H×W×1 (P5) or H×W×3 (P6) integer array."""
    arr = np.asarray(pixels)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode array of shape {arr.shape} as PGM/PPM")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise ValueError(f"pixel values must lie in [0, {maxval}]")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    h, w = arr.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + arr.astype(dtype).tobytes()


def to_float_chw(pixels: np.ndarray, maxval: int) -> np.ndarray:
    """H×W×C integers -> 3×H×W floats in [0, 1]; grayscale is replicated."""
    img = pixels.astype(np.float64) / float(maxval)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def _load_png(path: str) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover - depends on environment
        raise DecodeError(f"{path}: PNG support needs Pillow") from None
    try:
        with Image.open(path) as im:
            im = im.convert("L") if im.mode in ("L", "1") else im.convert("RGB")
            arr = np.asarray(im)
    except Exception as exc:
        raise DecodeError(f"{path}: {exc}") from None
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return to_float_chw(arr, 255)


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode an image file into a 3×H×W float64 array in [0, 1]."""
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        return _load_png(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        pixels, maxval = decode_pnm(buf)
    except DecodeError as exc:
        raise DecodeError(f"{path}: {exc}") from None
    return to_float_chw(pixels, maxval)


def save_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a 3×H×W (or H×W) float image in [0, 1] as 8-bit PPM/PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.transpose(1, 2, 0)
        if img.shape[2] == 3 and np.array_equal(img[:, :, 0], img[:, :, 1]) and np.array_equal(img[:, :, 0], img[:, :, 2]):
            img = img[:, :, 0]
    pixels = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(encode_pnm(pixels))
