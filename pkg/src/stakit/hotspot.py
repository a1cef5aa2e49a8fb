"""Interaction hotspot maps and detection score re-weighting.

A hotspot map is a per-image probability grid over pixel locations.
Re-weighting multiplies every detection's confidence by the hotspot
probability sampled at its box centre; scores are deliberately left
un-normalised afterwards so that absolute confidences stay comparable
across images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import linalg

__all__ = [
    "HotspotMap",
    "Detection",
    "sample_at",
    "reweight",
    "upsample_map",
    "synth_gaussian_map",
]


@dataclass
class HotspotMap:
    """Probability grid for one image, indexed by the image uid."""

    uid: str
    p: np.ndarray

    def __post_init__(self) -> None:
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim != 2 or self.p.size == 0:
            raise ValueError(f"hotspot grid must be a nonempty 2-D array, got shape {self.p.shape}")
        if np.any(self.p < 0):
            raise ValueError("hotspot probabilities must be nonnegative")
        total = float(self.p.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"hotspot grid must sum to 1, got {total!r}")

    @property
    def h(self) -> int:
        return self.p.shape[0]

    @property
    def w(self) -> int:
        return self.p.shape[1]

    @classmethod
    def uniform(cls, uid: str, h: int, w: int) -> "HotspotMap":
        if h <= 0 or w <= 0:
            raise ValueError(f"grid size must be positive, got ({h}, {w})")
        return cls(uid=uid, p=np.full((h, w), 1.0 / (h * w)))


@dataclass
class Detection:
    """One anticipated interaction: box, labels, time to contact, score.

    noun and verb are opaque ids except on the affordance-fusion path,
    where they must index the label vocabularies.  The optional
    probability vectors feed that fusion.
    """

    uid: str
    box: tuple[float, float, float, float]
    noun: object
    verb: object
    ttc: float
    score: float
    noun_probs: np.ndarray | None = None
    verb_probs: np.ndarray | None = None

    def __post_init__(self) -> None:
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"box must satisfy x1 < x2 and y1 < y2, got {self.box}")
        if self.ttc <= 0:
            raise ValueError(f"time to contact must be positive, got {self.ttc}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    @property
    def center(self) -> tuple[float, float]:
        x1, y1, x2, y2 = self.box
        return (0.5 * (x1 + x2), 0.5 * (y1 + y2))


def sample_at(hmap: HotspotMap, x: float, y: float, *, bilinear: bool = False) -> float:
    """Probability at image point (x, y).

    Default is a nearest-cell lookup: the value of the grid cell containing
    the point, with out-of-range points clamped to the border cells.  The
    bilinear variant interpolates between cell centres instead.
    """
    if bilinear:
        grid = hmap.p[:, :, None]
        # cell centres sit at (col + 0.5, row + 0.5)
        sx = min(max(x - 0.5, 0.0), hmap.w - 1.0)
        sy = min(max(y - 0.5, 0.0), hmap.h - 1.0)
        x0, y0 = int(math.floor(sx)), int(math.floor(sy))
        x1, y1 = min(x0 + 1, hmap.w - 1), min(y0 + 1, hmap.h - 1)
        fx, fy = sx - x0, sy - y0
        top = grid[y0, x0, 0] * (1 - fx) + grid[y0, x1, 0] * fx
        bot = grid[y1, x0, 0] * (1 - fx) + grid[y1, x1, 0] * fx
        return float(top * (1 - fy) + bot * fy)
    col = int(min(max(math.floor(x), 0), hmap.w - 1))
    row = int(min(max(math.floor(y), 0), hmap.h - 1))
    return float(hmap.p[row, col])


def reweight(detections, maps: dict[str, HotspotMap], *, bilinear: bool = False) -> list:
    """Multiply each detection's score by the hotspot value at its centre.

    Every detection uid must have a map; input order is preserved and the
    scores are not renormalised.
    """
    out = []
    for det in detections:
        hmap = maps.get(det.uid)
        if hmap is None:
            raise ValueError(f"no hotspot map for image {det.uid!r}")
        cx, cy = det.center
        out.append(replace(det, score=det.score * sample_at(hmap, cx, cy, bilinear=bilinear)))
    return out


def upsample_map(hmap: HotspotMap, h: int, w: int) -> HotspotMap:
    """Bilinearly resize a map to (h, w) and renormalise to sum 1."""
    resized = linalg.bilinear_resize(hmap.p[:, :, None], h, w)[:, :, 0]
    return HotspotMap(uid=hmap.uid, p=resized / resized.sum())


def synth_gaussian_map(uid: str, h: int, w: int,
                       centers: list[tuple[float, float, float]]) -> HotspotMap:
    """Normalised sum of isotropic Gaussians rasterised on the grid.

    centers holds (x, y, sigma) triples evaluated at cell centres
    (col + 0.5, row + 0.5).  No centers means a uniform map.  Synthetic
    fixture helper, not a learned predictor.
    """
    if h <= 0 or w <= 0:
        raise ValueError(f"grid size must be positive, got ({h}, {w})")
    if not centers:
        return HotspotMap.uniform(uid, h, w)
    ys = np.arange(h, dtype=np.float64) + 0.5
    xs = np.arange(w, dtype=np.float64) + 0.5
    grid = np.zeros((h, w))
    for cx, cy, sigma in centers:
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        dy2 = (ys - cy)[:, None] ** 2
        dx2 = (xs - cx)[None, :] ** 2
        grid += np.exp(-(dx2 + dy2) / (2.0 * sigma * sigma))
    return HotspotMap(uid=uid, p=grid / grid.sum())
