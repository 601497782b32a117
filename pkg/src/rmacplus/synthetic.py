"""Synthetic feature-map datasets for demos, benchmarks, and tests.

The generator models a retrieval problem where each class's identifying
structure ("the landmark") occupies a small part of every gallery map but
fills the query maps, the way benchmark queries are cropped to the object:

* every class owns a block of channels; a gallery image activates that
  block inside one small rectangle confined to one quadrant of the map,
* clutter rectangles ("other objects") activate random background channels
  anywhere outside the signal quadrant, in varying number and strength,
* queries activate their class block across the whole map and carry no
  clutter,
* everything sits on a fixed per-channel floor plus uniform cell noise.

Whole-image descriptors sum the signal together with the clutter, so
images with heavy clutter drift away from their class queries; the
quadrant that holds the signal, however, always yields one clean region,
which is what region-level search exploits.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor_store import (FeatureMap, FeatureSetManifest, ManifestEntry,
                           write_feature_map, write_manifest)


@dataclass(frozen=True)
class SyntheticSpec:
    """Layout and signal statistics of a generated dataset.

    Defaults are tuned so that, on the fixed default seed, region-level
    retrieval separates the classes perfectly while whole-image retrieval
    leaves a few clutter-heavy images misranked.
    """

    classes: int = 3
    gallery_per_class: int = 10
    queries_per_class: int = 2
    width: int = 30
    height: int = 24
    channels: int = 48
    signal_channels_per_class: int = 8
    signal_size: tuple[int, int] = (6, 5)     # gallery signal (w, h) cells
    signal_range: tuple[float, float] = (0.8, 1.0)
    clutter_count: tuple[int, int] = (2, 12)  # inclusive range per gallery image
    clutter_size: tuple[int, int] = (5, 5)
    clutter_strength: tuple[float, float] = (0.3, 1.0)
    floor_range: tuple[float, float] = (0.05, 0.15)
    cell_noise: float = 0.08
    multiresolution: bool = False
    seed: int = 15

    def __post_init__(self) -> None:
        if self.classes * self.signal_channels_per_class >= self.channels:
            raise ValueError("no channels left for clutter")
        sw, sh = self.signal_size
        if sw > self.width // 2 or sh > self.height // 2:
            raise ValueError("signal rectangle must fit inside one quadrant")

    @property
    def signal_area_fraction(self) -> float:
        """Fraction of a gallery map covered by the class signal."""
        sw, sh = self.signal_size
        return (sw * sh) / (self.width * self.height)


@dataclass
class SyntheticDataset:
    """Paths of everything the generator wrote."""

    spec: SyntheticSpec
    root: Path
    gallery_manifest: Path
    query_manifest: Path
    gt_file: Path
    gallery_ids: list[str] = field(default_factory=list)
    query_ids: list[str] = field(default_factory=list)


def _clutter_position(rng: np.random.Generator, width: int, height: int,
                      rect_w: int, rect_h: int,
                      quad: tuple[int, int, int, int]) -> tuple[int, int]:
    """Random rectangle origin whose rectangle avoids the signal quadrant."""
    qx0, qy0, qw, qh = quad
    for _ in range(200):
        x0 = int(rng.integers(0, width - rect_w + 1))
        y0 = int(rng.integers(0, height - rect_h + 1))
        if (x0 + rect_w <= qx0 or x0 >= qx0 + qw
                or y0 + rect_h <= qy0 or y0 >= qy0 + qh):
            return x0, y0
    return 0, 0


def _make_image(spec: SyntheticSpec, rng: np.random.Generator,
                floor: np.ndarray, class_index: int,
                width: int, height: int, is_query: bool) -> np.ndarray:
    data = floor + rng.uniform(0.0, spec.cell_noise,
                               size=(height, width, spec.channels))
    k = spec.signal_channels_per_class
    block = np.arange(class_index * k, (class_index + 1) * k)
    lo, hi = spec.signal_range
    if is_query:
        data[:, :, block] = rng.uniform(lo, hi, size=(height, width, k))
        return data.astype(np.float32)

    quad_w, quad_h = width // 2, height // 2
    quad = (int(rng.integers(0, 2)) * quad_w, int(rng.integers(0, 2)) * quad_h,
            quad_w, quad_h)
    sw, sh = spec.signal_size
    sw, sh = min(sw, quad_w), min(sh, quad_h)
    sx = quad[0] + int(rng.integers(0, quad_w - sw + 1))
    sy = quad[1] + int(rng.integers(0, quad_h - sh + 1))
    data[sy:sy + sh, sx:sx + sw, block] = rng.uniform(lo, hi, size=(sh, sw, k))

    pool = np.arange(spec.classes * k, spec.channels)
    n_clutter = int(rng.integers(spec.clutter_count[0], spec.clutter_count[1] + 1))
    cw, ch = spec.clutter_size
    cw, ch = min(cw, width), min(ch, height)
    for channel in rng.choice(pool, size=min(n_clutter, len(pool)), replace=False):
        strength = rng.uniform(*spec.clutter_strength)
        x0, y0 = _clutter_position(rng, width, height, cw, ch, quad)
        patch = strength * rng.uniform(0.9, 1.0, size=(ch, cw))
        data[y0:y0 + ch, x0:x0 + cw, channel] = np.maximum(
            data[y0:y0 + ch, x0:x0 + cw, channel], patch)
    return data.astype(np.float32)


def _resolution_dims(spec: SyntheticSpec, tag: str) -> tuple[int, int]:
    scale = {"base": 1.0, "up25": 1.25, "down25": 0.75}[tag]
    return (max(2, round(spec.width * scale)), max(2, round(spec.height * scale)))


def generate_synthetic_dataset(out_dir: str | os.PathLike,
                               spec: SyntheticSpec = SyntheticSpec()) -> SyntheticDataset:
    """Write feature maps, manifests, and the class-list ground truth.

    Everything derives from ``spec.seed``, so repeated calls with the same
    spec produce byte-identical files.
    """
    root = Path(out_dir)
    maps_dir = root / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    floor = rng.uniform(*spec.floor_range, size=spec.channels)
    tags = ("base", "up25", "down25") if spec.multiresolution else ("base",)

    gallery_entries: list[ManifestEntry] = []
    query_entries: list[ManifestEntry] = []
    gt_lines: list[str] = []
    gallery_ids: list[str] = []
    query_ids: list[str] = []

    for class_index in range(spec.classes):
        class_id = f"class{class_index}"
        for role, count, entries, ids in (
            ("db", spec.gallery_per_class, gallery_entries, gallery_ids),
            ("query", spec.queries_per_class, query_entries, query_ids),
        ):
            for j in range(count):
                image_id = f"{class_id}_{role}{j:02d}"
                ids.append(image_id)
                gt_lines.append(f"{image_id}\t{class_id}\t{role}")
                for tag in tags:
                    w, h = _resolution_dims(spec, tag)
                    data = _make_image(spec, rng, floor, class_index, w, h,
                                       is_query=(role == "query"))
                    rel = f"maps/{image_id}.{tag}.fmap"
                    write_feature_map(FeatureMap.from_array(data), root / rel)
                    entries.append(ManifestEntry(image_id, tag, rel, w, h,
                                                 spec.channels))

    gallery_manifest = root / "gallery.manifest"
    query_manifest = root / "queries.manifest"
    gt_file = root / "gt.tsv"
    write_manifest(FeatureSetManifest("synthetic", gallery_entries, root),
                   gallery_manifest)
    write_manifest(FeatureSetManifest("synthetic", query_entries, root),
                   query_manifest)
    gt_file.write_text("\n".join(gt_lines) + "\n", encoding="utf-8")
    return SyntheticDataset(spec=spec, root=root, gallery_manifest=gallery_manifest,
                            query_manifest=query_manifest, gt_file=gt_file,
                            gallery_ids=gallery_ids, query_ids=query_ids)
