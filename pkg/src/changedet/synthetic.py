"""Deterministic synthetic bitemporal pairs.

Each sample is a textured grayscale background with a few non-overlapping
"base" shapes present at both dates. The second date inserts and/or removes
shapes (the change to detect) and may add a global brightness shift (the
nuisance a detector must ignore). The ground truth marks exactly the
inserted/removed shape pixels. Images are quantised to 8 bit so a persisted
dataset round-trips losslessly through PGM files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .imageio import atomic_write_bytes, read_image, write_pgm
from .tensor import _interp_matrix

# intensity bands, chosen so background + jitter never reaches shape values
_BG_RANGE = (0.25, 0.37)
_BG_NOISE = 0.01
_BASE_RANGE = (0.60, 0.78)
_INSERT_RANGE = (0.82, 1.00)


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 42
    image_size: tuple[int, int] = (64, 64)
    n_samples: int = 250
    shape_count_range: tuple[int, int] = (1, 3)
    base_shape_range: tuple[int, int] = (2, 4)
    size_range: tuple[int, int] = (28, 40)
    brightness_jitter: float = 0.06

    def validate(self) -> None:
        h, w = self.image_size
        if h < 16 or w < 16 or h % 16 or w % 16:
            raise ConfigError(f"image_size must be divisible by 16, got {h}x{w}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")
        for name, rng_ in (("shape_count_range", self.shape_count_range),
                           ("base_shape_range", self.base_shape_range),
                           ("size_range", self.size_range)):
            lo, hi = rng_
            if lo < 0 or hi < lo:
                raise ConfigError(f"{name} must satisfy 0 <= lo <= hi, got {rng_}")
        if self.size_range[0] < 2:
            raise ConfigError("shapes below 2 pixels across are not representable")
        # placement keeps a 1-px gap, so shapes near the frame size never fit
        if self.size_range[1] > min(h, w) * 3 // 4:
            raise ConfigError(
                f"max shape size {self.size_range[1]} too large for a {h}x{w} frame")
        if not (0.0 <= self.brightness_jitter <= 0.5):
            raise ConfigError("brightness_jitter must lie in [0, 0.5]")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "image_size": list(self.image_size),
            "n_samples": self.n_samples,
            "shape_count_range": list(self.shape_count_range),
            "base_shape_range": list(self.base_shape_range),
            "size_range": list(self.size_range),
            "brightness_jitter": self.brightness_jitter,
        }

    @staticmethod
    def from_dict(doc: dict) -> "SyntheticSpec":
        known = {f: doc[f] for f in doc}
        fields = {"seed", "image_size", "n_samples", "shape_count_range",
                  "base_shape_range", "size_range", "brightness_jitter"}
        unknown = set(known) - fields
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        for key in ("image_size", "shape_count_range", "base_shape_range", "size_range"):
            if key in known:
                known[key] = tuple(known[key])
        spec = SyntheticSpec(**known)
        spec.validate()
        return spec


@dataclass
class Sample:
    t1: np.ndarray    # (H, W) uint8
    t2: np.ndarray    # (H, W) uint8
    mask: np.ndarray  # (H, W) uint8, values {0, 1}


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    samples: list[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def sha256(self) -> str:
        digest = hashlib.sha256()
        for s in self.samples:
            digest.update(s.t1.tobytes())
            digest.update(s.t2.tobytes())
            digest.update(s.mask.tobytes())
        return digest.hexdigest()

    def to_arrays(self, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
        """(X, y) with X (n, 2, 3, H, W) in [0,1] and y (n, 1, H, W)."""
        n = len(self.samples)
        h, w = self.spec.image_size
        x = np.empty((n, 2, 3, h, w), dtype=dtype)
        y = np.empty((n, 1, h, w), dtype=dtype)
        for i, s in enumerate(self.samples):
            x[i, 0] = np.repeat((s.t1.astype(dtype) / 255.0)[None], 3, axis=0)
            x[i, 1] = np.repeat((s.t2.astype(dtype) / 255.0)[None], 3, axis=0)
            y[i, 0] = s.mask.astype(dtype)
        return x, y


def _dilate1(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1)
    out = np.zeros_like(mask)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out |= padded[dy:dy + mask.shape[0], dx:dx + mask.shape[1]]
    return out


def _raster_shape(rng: np.random.Generator, spec: SyntheticSpec,
                  occupied: np.ndarray) -> np.ndarray | None:
    """Place one random rectangle or disc that keeps a 1-pixel gap from
    everything already placed. Returns its pixel mask, or None if no free
    spot was found."""
    h, w = spec.image_size
    lo, hi = spec.size_range
    for _ in range(100):
        is_disc = bool(rng.integers(0, 2))
        pixels = np.zeros((h, w), dtype=bool)
        if is_disc:
            radius = max(1, int(rng.integers(lo, hi + 1)) // 2)
            cy = int(rng.integers(radius, h - radius))
            cx = int(rng.integers(radius, w - radius))
            yy, xx = np.ogrid[:h, :w]
            pixels = (yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2
        else:
            sh = int(rng.integers(lo, hi + 1))
            sw = int(rng.integers(lo, hi + 1))
            y0 = int(rng.integers(0, h - sh + 1))
            x0 = int(rng.integers(0, w - sw + 1))
            pixels[y0:y0 + sh, x0:x0 + sw] = True
        if not (_dilate1(pixels) & occupied).any():
            return pixels
    return None


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def generate(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministic dataset: the same spec always yields identical bytes."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.image_size
    uh = _interp_matrix(8, h // 8, np.dtype(np.float64))
    uw = _interp_matrix(8, w // 8, np.dtype(np.float64))
    samples: list[Sample] = []
    for _ in range(spec.n_samples):
        coarse = rng.uniform(_BG_RANGE[0], _BG_RANGE[1], (8, 8))
        background = uh @ coarse @ uw.T
        background += rng.uniform(-_BG_NOISE, _BG_NOISE, (h, w))

        occupied = np.zeros((h, w), dtype=bool)
        base_shapes: list[tuple[np.ndarray, float]] = []
        n_base = int(rng.integers(spec.base_shape_range[0], spec.base_shape_range[1] + 1))
        for _ in range(n_base):
            pixels = _raster_shape(rng, spec, occupied)
            if pixels is None:
                continue
            occupied |= pixels
            base_shapes.append((pixels, float(rng.uniform(*_BASE_RANGE))))

        removed = np.zeros(len(base_shapes), dtype=bool)
        inserted: list[tuple[np.ndarray, float]] = []
        k = int(rng.integers(spec.shape_count_range[0], spec.shape_count_range[1] + 1))
        for _ in range(k):
            can_remove = bool((~removed).any()) if len(base_shapes) else False
            do_remove = can_remove and bool(rng.integers(0, 2))
            if do_remove:
                choices = np.flatnonzero(~removed)
                removed[rng.choice(choices)] = True
            else:
                pixels = _raster_shape(rng, spec, occupied)
                if pixels is None:
                    continue
                occupied |= pixels
                inserted.append((pixels, float(rng.uniform(*_INSERT_RANGE))))

        t1 = background.copy()
        for pixels, value in base_shapes:
            t1[pixels] = value
        t2 = background.copy()
        for i, (pixels, value) in enumerate(base_shapes):
            if not removed[i]:
                t2[pixels] = value
        for pixels, value in inserted:
            t2[pixels] = value
        if spec.brightness_jitter > 0:
            t2 = t2 + rng.uniform(-spec.brightness_jitter, spec.brightness_jitter)

        mask = np.zeros((h, w), dtype=np.uint8)
        for i, (pixels, _) in enumerate(base_shapes):
            if removed[i]:
                mask[pixels] = 1
        for pixels, _ in inserted:
            mask[pixels] = 1

        samples.append(Sample(t1=_quantize(t1), t2=_quantize(t2), mask=mask))
    return SyntheticDataset(spec=spec, samples=samples)


# -- persistence ---------------------------------------------------------------


def save_dataset(dataset: SyntheticDataset, directory: str | Path) -> None:
    """PGM triples (t1_/t2_/gt_ prefixes) plus a manifest with content hash."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(dataset.samples):
        write_pgm(directory / f"t1_{i:04d}.pgm", s.t1)
        write_pgm(directory / f"t2_{i:04d}.pgm", s.t2)
        write_pgm(directory / f"gt_{i:04d}.pgm", s.mask * 255)
    manifest = {
        "spec": dataset.spec.to_dict(),
        "n_samples": len(dataset.samples),
        "sha256": dataset.sha256(),
    }
    atomic_write_bytes(directory / "manifest.json",
                       json.dumps(manifest, indent=2).encode("utf-8"))


def load_dataset(directory: str | Path) -> SyntheticDataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    spec = SyntheticSpec.from_dict(manifest["spec"])
    samples = []
    for i in range(manifest["n_samples"]):
        t1 = read_image(directory / f"t1_{i:04d}.pgm")
        t2 = read_image(directory / f"t2_{i:04d}.pgm")
        gt = read_image(directory / f"gt_{i:04d}.pgm")
        samples.append(Sample(t1=t1, t2=t2, mask=(gt > 0).astype(np.uint8)))
    dataset = SyntheticDataset(spec=spec, samples=samples)
    if dataset.sha256() != manifest["sha256"]:
        raise ValueError(f"dataset in {directory} does not match its manifest hash")
    return dataset
