"""Connected change-region analysis.

Regions are 8-connected components of the 1-pixels. Perimeter counts
4-neighbor pixel edges that face a 0-pixel or the image border, so a single
pixel has perimeter 4 and complexity (perimeter/area) 4.0. Samples with at
most ``threshold`` regions (default 4) are the "few" category, the rest
"many"; complexity variance is the population variance and is reported for
the many category.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

_NEIGHBORS8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))

FEW = "few"
MANY = "many"
DEFAULT_REGION_THRESHOLD = 4


def _as_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError(f"mask must be 2D, got shape {m.shape}")
    values = np.unique(m)
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"mask must contain only 0 and 1, found {values[:8]}")
    return m.astype(np.uint8)


def connected_components(mask) -> tuple[np.ndarray, int]:
    """Label 8-connected regions of 1-pixels.

    Returns (labels, count) with labels in 1..count and 0 for background.
    Regions are numbered by the row-major position of their first pixel."""
    m = _as_mask(mask)
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int32)
    count = 0
    for i in range(h):
        row = m[i]
        for j in range(w):
            if row[j] == 0 or labels[i, j]:
                continue
            count += 1
            queue = deque([(i, j)])
            labels[i, j] = count
            while queue:
                y, x = queue.popleft()
                for dy, dx in _NEIGHBORS8:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and m[ny, nx] \
                            and not labels[ny, nx]:
                        labels[ny, nx] = count
                        queue.append((ny, nx))
    return labels, count


def _perimeters(labels: np.ndarray, count: int) -> np.ndarray:
    """Exposed 4-neighbor edge count per label (1-indexed result array)."""
    perims = np.zeros(count + 1, dtype=np.int64)
    padded = np.pad(labels, 1)
    core = padded[1:-1, 1:-1]
    inside = core > 0
    for shifted in (padded[:-2, 1:-1], padded[2:, 1:-1],
                    padded[1:-1, :-2], padded[1:-1, 2:]):
        exposed = inside & (shifted == 0)
        perims += np.bincount(core[exposed], minlength=count + 1)
    return perims


@dataclass
class RegionInfo:
    label: int
    area: int
    perimeter: int

    @property
    def complexity(self) -> float:
        return self.perimeter / self.area


@dataclass
class SampleStats:
    region_count: int
    category: str
    area_ratio: float
    regions: list[RegionInfo] = field(default_factory=list)

    @property
    def complexities(self) -> list[float]:
        return [r.complexity for r in self.regions]

    @property
    def mean_complexity(self) -> float | None:
        if not self.regions:
            return None
        return float(np.mean(self.complexities))

    @property
    def complexity_variance(self) -> float | None:
        """Population variance; defined for the many category only."""
        if self.category != MANY:
            return None
        return float(np.var(self.complexities))


def region_stats(mask, threshold: int = DEFAULT_REGION_THRESHOLD) -> SampleStats:
    m = _as_mask(mask)
    labels, count = connected_components(m)
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    perims = _perimeters(labels, count)
    regions = [RegionInfo(label=k, area=int(areas[k]), perimeter=int(perims[k]))
               for k in range(1, count + 1)]
    return SampleStats(
        region_count=count,
        category=FEW if count <= threshold else MANY,
        area_ratio=float(m.sum() / m.size),
        regions=regions,
    )


def dataset_summary(masks, threshold: int = DEFAULT_REGION_THRESHOLD) -> dict:
    """Aggregate report over (name, mask) pairs, JSON-ready.

    Per-sample rows are sorted by name. Aggregates are reported per
    category: few samples contribute (area_ratio, mean complexity), many
    samples contribute (complexity variance, mean complexity). Samples with
    no regions have no complexity and are skipped by the complexity means."""
    items = sorted(masks, key=lambda kv: kv[0])
    if not items:
        raise ValueError("empty mask collection")
    rows = []
    for name, mask in items:
        stats = region_stats(mask, threshold=threshold)
        row = {
            "name": name,
            "region_count": stats.region_count,
            "category": stats.category,
            "area_ratio": stats.area_ratio,
            "mean_complexity": stats.mean_complexity,
        }
        if stats.category == MANY:
            row["complexity_variance"] = stats.complexity_variance
        rows.append(row)

    def _mean(values: list[float]) -> float | None:
        return float(np.mean(values)) if values else None

    few_rows = [r for r in rows if r["category"] == FEW]
    many_rows = [r for r in rows if r["category"] == MANY]
    summary = {
        "threshold": threshold,
        "n_samples": len(rows),
        "samples": rows,
        "few": {
            "n": len(few_rows),
            "mean_area_ratio": _mean([r["area_ratio"] for r in few_rows]),
            "mean_complexity": _mean(
                [r["mean_complexity"] for r in few_rows
                 if r["mean_complexity"] is not None]),
        },
        "many": {
            "n": len(many_rows),
            "mean_complexity_variance": _mean(
                [r["complexity_variance"] for r in many_rows]),
            "mean_complexity": _mean(
                [r["mean_complexity"] for r in many_rows
                 if r["mean_complexity"] is not None]),
        },
    }
    return summary
