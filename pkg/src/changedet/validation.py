"""Array validation helpers for the estimator and training entry points."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_pair_array(x) -> np.ndarray:
    """Coerce bitemporal input to (n, 2, 3, H, W) float32 in [0, 1].

    Accepts uint8 (rescaled by 1/255) or float arrays, with grayscale
    supplied either as (n, 2, H, W) or (n, 2, 1, H, W); grayscale is
    replicated across the three channels the model expects.
    """
    x = np.asarray(x)
    if x.dtype == np.uint8:
        x = x.astype(np.float32) / 255.0
    elif x.dtype in (np.float32, np.float64):
        x = x.astype(np.float32, copy=False)
    elif np.issubdtype(x.dtype, np.integer):
        raise ShapeError(f"integer pixel input must be uint8, got {x.dtype}")
    else:
        raise ShapeError(f"unsupported pixel dtype {x.dtype}")
    if x.ndim == 4:
        x = x[:, :, None]
    if x.ndim != 5 or x.shape[1] != 2:
        raise ShapeError(
            f"expected (n, 2, 3, H, W) or (n, 2, H, W) pairs, got {x.shape}")
    if x.shape[2] == 1:
        x = np.repeat(x, 3, axis=2)
    if x.shape[2] != 3:
        raise ShapeError(f"expected 1 or 3 channels, got {x.shape[2]}")
    if x.shape[0] == 0:
        raise ShapeError("need at least one sample")
    if not np.isfinite(x).all():
        raise ShapeError("input contains non-finite values")
    return np.ascontiguousarray(x)


def check_mask_array(y, n: int | None = None,
                     hw: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce ground-truth masks to (n, 1, H, W) float32 with values in {0, 1}."""
    y = np.asarray(y)
    if y.dtype == np.bool_:
        y = y.astype(np.float32)
    if y.ndim == 3:
        y = y[:, None]
    if y.ndim != 4 or y.shape[1] != 1:
        raise ShapeError(f"expected (n, 1, H, W) or (n, H, W) masks, got {y.shape}")
    vals = np.unique(y)
    if not np.isin(vals, (0, 1)).all():
        raise ShapeError(f"masks must be binary, found values {vals[:8]}")
    if n is not None and y.shape[0] != n:
        raise ShapeError(f"{n} pairs but {y.shape[0]} masks")
    if hw is not None and y.shape[2:] != tuple(hw):
        raise ShapeError(f"mask size {y.shape[2:]} does not match input {hw}")
    return y.astype(np.float32, copy=False)
