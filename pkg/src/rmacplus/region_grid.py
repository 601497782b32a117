"""Region detectors for regional max-pooling on feature maps.

Two detectors are provided.  The adaptive grid produces 15 regions across
four levels, sized to the aspect ratio of the feature map so the whole map
is always covered.  The rigid multi-scale grid is the classic baseline that
produces 20 regions for the default settings.  Bounding boxes given in
image pixels can be projected onto feature-map cells for cropped queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DataError

RMAC_PLUS = "rmac_plus"
TOLIAS_BASELINE = "tolias_baseline"


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle on feature-map cells, with its scale level."""

    x0: int
    y0: int
    w: int
    h: int
    level: int

    def __post_init__(self) -> None:
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative region origin ({self.x0},{self.y0})")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"empty region extent ({self.w}x{self.h})")

    def in_bounds(self, width: int, height: int) -> bool:
        return self.x0 + self.w <= width and self.y0 + self.h <= height

    @property
    def rect(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.w, self.h)


@dataclass(frozen=True)
class GridSpec:
    """Detector selection plus the knobs of the rigid baseline grid.

    ``levels`` and ``m`` only apply to the baseline; the adaptive grid is
    fixed at its four levels.  ``transpose_portrait`` mirrors the fixed
    per-level grid shapes when the map is taller than wide.
    """

    detector: str = RMAC_PLUS
    levels: int = 3
    m: int = 2
    transpose_portrait: bool = True

    def __post_init__(self) -> None:
        if self.detector not in (RMAC_PLUS, TOLIAS_BASELINE):
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _centered_positions(axis: int, count: int, size: int) -> list[int]:
    """Top-left coordinates of ``count`` regions of ``size`` along ``axis``.

    The i-th region is centered at (i + 0.5) * axis / count; the top-left is
    that center minus half the size, rounded half-up, clamped into bounds.
    Computed in exact integer arithmetic so results never depend on float
    rounding: floor((2i+1)*axis / (2*count) - size/2 + 1/2) equals
    ((2i+1)*axis - count*size + count) // (2*count).
    """
    hi = axis - size
    out = []
    for i in range(count):
        pos = ((2 * i + 1) * axis - count * size + count) // (2 * count)
        out.append(min(max(pos, 0), hi))
    return out


def _plus_level_layout(width: int, height: int, level: int,
                       transpose_portrait: bool) -> tuple[int, int, int, int]:
    """(x_regions, y_regions, region_w, region_h) for one adaptive-grid level."""
    if level == 0:
        return 1, 1, width, height
    if level == 1:
        side = min(width, height)
        nx, ny = (1, 2) if width < height else (2, 1)
    else:
        side = _ceil_div(2 * min(width, height), level + 1)
        nx, ny = (3, 2) if level == 2 else (2, 3)
        if width < height and transpose_portrait:
            nx, ny = ny, nx
    # Stretch to guarantee coverage when the squares cannot span the axis.
    w = _ceil_div(width, nx) if side * nx < width else side
    h = _ceil_div(height, ny) if side * ny < height else side
    return nx, ny, w, h


def regions_plus_for_level(width: int, height: int, level: int,
                           transpose_portrait: bool = True) -> list[Region]:
    """Regions of one level of the adaptive grid.

    Level 0 is the whole map.  Level 1 places squares of side min(W, H)
    along the long axis.  Levels 2 and 3 place 6 regions each in a 3x2 and
    2x3 arrangement (mirrored for portrait maps), with sides stretched to
    ceil(axis / count) whenever the base size cannot cover the axis.
    Duplicates caused by degenerate shapes are kept; callers deduplicate.
    """
    if width < 1 or height < 1:
        raise ValueError(f"map dims must be >= 1, got {width}x{height}")
    if level not in (0, 1, 2, 3):
        raise ValueError(f"level must be in 0..3, got {level}")
    nx, ny, w, h = _plus_level_layout(width, height, level, transpose_portrait)
    xs = _centered_positions(width, nx, w)
    ys = _centered_positions(height, ny, h)
    return [Region(x, y, w, h, level) for y in ys for x in xs]


def _dedup(regions: list[Region]) -> list[Region]:
    """Drop exact duplicate rectangles, keeping the first occurrence."""
    seen: set[tuple[int, int, int, int]] = set()
    out = []
    for r in regions:
        if r.rect not in seen:
            seen.add(r.rect)
            out.append(r)
    return out


def generate_regions_plus(width: int, height: int,
                          transpose_portrait: bool = True) -> list[Region]:
    """All adaptive-grid regions: levels 0..3 concatenated, deduplicated.

    Non-degenerate maps (W != H, both >= 4) yield exactly 15 regions whose
    union covers every cell; degenerate shapes collapse to fewer.
    """
    regions: list[Region] = []
    for level in range(4):
        regions.extend(regions_plus_for_level(width, height, level, transpose_portrait))
    return _dedup(regions)


def _uniform_positions(axis: int, count: int, size: int) -> list[int]:
    """Evenly spread ``count`` regions from 0 to axis - size (round half-up)."""
    hi = axis - size
    if count == 1:
        return [min(max((hi + 1) // 2, 0), hi)]
    out = []
    for i in range(count):
        pos = (2 * i * hi + (count - 1)) // (2 * (count - 1))
        out.append(min(max(pos, 0), hi))
    return out


def generate_regions_tolias(width: int, height: int, spec: GridSpec) -> list[Region]:
    """The rigid multi-scale square grid used as a baseline.

    At scale l (1-based) the square side is ceil(2 * min(W, H) / (l + 1)),
    so the largest scale uses side min(W, H).  Each scale places
    l * (l + m - 1) regions, the long axis carrying the extra ones, spread
    uniformly so consecutive regions overlap.  Defaults (L=3, m=2) give 20
    regions on non-square maps; exact duplicates are removed.
    """
    if spec.detector != TOLIAS_BASELINE:
        raise ValueError(f"spec.detector must be {TOLIAS_BASELINE!r}, "
                         f"got {spec.detector!r}")
    if width < 1 or height < 1:
        raise ValueError(f"map dims must be >= 1, got {width}x{height}")
    landscape = width >= height
    regions: list[Region] = []
    for level in range(1, spec.levels + 1):
        side = _ceil_div(2 * min(width, height), level + 1)
        n_long = level + spec.m - 1
        n_short = level
        nx, ny = (n_long, n_short) if landscape else (n_short, n_long)
        xs = _uniform_positions(width, nx, side)
        ys = _uniform_positions(height, ny, side)
        regions.extend(Region(x, y, side, side, level) for y in ys for x in xs)
    return _dedup(regions)


def generate_regions(width: int, height: int, spec: GridSpec) -> list[Region]:
    """Dispatch to the detector selected by ``spec``."""
    if spec.detector == RMAC_PLUS:
        return generate_regions_plus(width, height, spec.transpose_portrait)
    return generate_regions_tolias(width, height, spec)


def project_bbox(bbox_px: tuple[float, float, float, float],
                 image_size_px: tuple[int, int],
                 map_size: tuple[int, int]) -> Region:
    """Project a pixel bounding box onto feature-map cells.

    ``bbox_px`` is (x0, y0, x1, y1) in image pixels.  The left/top edges are
    scaled by map/image and floored, right/bottom edges ceiled, then clamped
    so the projected rectangle is at least one cell in each direction.
    """
    img_w, img_h = image_size_px
    map_w, map_h = map_size
    if img_w < 1 or img_h < 1 or map_w < 1 or map_h < 1:
        raise ValueError("image and map dimensions must be >= 1")
    x0, y0, x1, y1 = bbox_px
    if x1 <= x0 or y1 <= y0:
        raise DataError(f"empty bounding box {bbox_px}")
    if x0 < 0 or y0 < 0 or x1 > img_w or y1 > img_h:
        raise DataError(f"bounding box {bbox_px} outside {img_w}x{img_h} image")
    fx0 = min(max(math.floor(x0 * map_w / img_w), 0), map_w - 1)
    fx1 = max(min(math.ceil(x1 * map_w / img_w), map_w), fx0 + 1)
    fy0 = min(max(math.floor(y0 * map_h / img_h), 0), map_h - 1)
    fy1 = max(min(math.ceil(y1 * map_h / img_h), map_h), fy0 + 1)
    return Region(fx0, fy0, fx1 - fx0, fy1 - fy0, 0)


def regions_to_text(regions: list[Region]) -> str:
    """Debug dump: one "level x0 y0 w h" line per region (tab-separated)."""
    return "\n".join(
        f"{r.level}\t{r.x0}\t{r.y0}\t{r.w}\t{r.h}" for r in regions
    ) + "\n"
