"""Minimal image I/O: binary PGM (P5) and PPM (P6), optional PNG.

Writers are atomic: content goes to a temp file in the target directory and
is renamed into place, so readers never observe a half-written file. PNG
support needs the optional Pillow dependency (install the ``png`` extra).
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ImageFormatError


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping # comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header")
    return data[start:pos], pos


def _parse_netpbm(data: bytes, path: str) -> np.ndarray:
    try:
        magic, pos = _read_token(data, 0)
        if magic not in (b"P5", b"P6"):
            raise ImageFormatError(f"unsupported magic {magic!r} (want P5 or P6)")
        width_tok, pos = _read_token(data, pos)
        height_tok, pos = _read_token(data, pos)
        maxval_tok, pos = _read_token(data, pos)
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    except (ImageFormatError, ValueError) as exc:
        raise ImageFormatError(f"{path}: bad header: {exc}") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: bad dimensions {width}x{height}")
    if not (0 < maxval < 256):
        raise ImageFormatError(f"{path}: only 8-bit images supported, maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    raster = data[pos:pos + count]
    if len(raster) != count:
        raise ImageFormatError(
            f"{path}: raster has {len(raster)} bytes, expected {count}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def _read_png(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:
        raise ImageFormatError(
            f"{path}: PNG support needs Pillow (pip install 'changedet[png]')") from exc
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB" if "A" in img.mode or len(img.getbands()) > 1 else "L")
        return np.asarray(img, dtype=np.uint8)


def read_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit image: (H, W) for grayscale, (H, W, 3) for color."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    if path.suffix.lower() == ".png":
        return _read_png(path)
    return _parse_netpbm(path.read_bytes(), str(path))


def read_mask(path: str | Path) -> np.ndarray:
    """Load a binary mask: any nonzero value (any channel) counts as 1."""
    img = read_image(path)
    if img.ndim == 3:
        img = img.max(axis=2)
    return (img > 0).astype(np.uint8)


def atomic_write_bytes(path: str | Path, blob: bytes) -> None:
    """Write via a temp file + rename so partial content is never visible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ImageFormatError(f"PGM needs a 2D array, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ImageFormatError(f"PGM needs uint8 data, got {img.dtype}")
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + np.ascontiguousarray(img).tobytes())


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"PPM needs an (H, W, 3) array, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ImageFormatError(f"PPM needs uint8 data, got {img.dtype}")
    h, w = img.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + np.ascontiguousarray(img).tobytes())


def to_model_input(image: np.ndarray) -> np.ndarray:
    """uint8 image -> float32 (3, H, W) in [0, 1]; grayscale is replicated."""
    if image.dtype != np.uint8:
        raise ImageFormatError(f"expected uint8 image, got {image.dtype}")
    scaled = image.astype(np.float32) / 255.0
    if scaled.ndim == 2:
        return np.repeat(scaled[None], 3, axis=0)
    if scaled.ndim == 3 and scaled.shape[2] == 3:
        return np.ascontiguousarray(scaled.transpose(2, 0, 1))
    raise ImageFormatError(f"unsupported image shape {image.shape}")
