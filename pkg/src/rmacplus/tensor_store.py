"""Feature-map container and the on-disk formats that feed the pipeline.

The numeric pipeline never sees images.  It consumes W x H x D activation
tensors that an extractor produced offline and stored in the FMAP binary
format, plus a tab-separated manifest describing which tensor file belongs
to which image and resolution.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

#: Resolution tags in canonical processing order.
RESOLUTION_TAGS = ("base", "up25", "down25")

# Upper bound on W*H*D so a corrupt header cannot trigger a giant allocation.
_MAX_ELEMENTS = 1 << 31


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """One activation tensor, stored as float32 with shape (H, W, D).

    Row-major (y, x, d) layout: the value at (y, x, d) sits at flat offset
    (y * W + x) * D + d, which is also its position in the file payload.
    Instances are immutable; the data array is marked read-only.
    """

    width: int
    height: int
    channels: int
    data: np.ndarray

    @staticmethod
    def from_array(array: np.ndarray) -> "FeatureMap":
        """Build a validated FeatureMap from an (H, W, D) array."""
        arr = np.ascontiguousarray(array, dtype=np.float32)
        if arr.ndim != 3:
            raise DataError(f"feature map must be 3-D (H, W, D), got shape {arr.shape}")
        h, w, d = arr.shape
        fmap = FeatureMap(width=w, height=h, channels=d, data=arr)
        fmap.validate()
        arr.flags.writeable = False
        return fmap

    def validate(self) -> None:
        if self.width < 1 or self.height < 1 or self.channels < 1:
            raise DataError(
                f"feature map dims must be >= 1, got W={self.width} H={self.height} "
                f"D={self.channels}"
            )
        if self.data.shape != (self.height, self.width, self.channels):
            raise DataError(
                f"data shape {self.data.shape} does not match "
                f"(H={self.height}, W={self.width}, D={self.channels})"
            )
        if not np.isfinite(self.data).all():
            raise DataError("feature map contains NaN or Inf values")

    def crop(self, x0: int, y0: int, w: int, h: int) -> "FeatureMap":
        """Return the sub-map covering cells [x0, x0+w) x [y0, y0+h)."""
        if x0 < 0 or y0 < 0 or w < 1 or h < 1 or x0 + w > self.width or y0 + h > self.height:
            raise ValueError(
                f"crop ({x0},{y0},{w},{h}) out of bounds for {self.width}x{self.height} map"
            )
        return FeatureMap(width=w, height=h, channels=self.channels,
                          data=self.data[y0:y0 + h, x0:x0 + w, :])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.channels == other.channels
                and np.array_equal(self.data, other.data))


def write_feature_map(fmap: FeatureMap, path: str | os.PathLike) -> None:
    """Write a FeatureMap in the FMAP binary format.

    Layout: magic "FMAP" | version u32 LE | W u32 | H u32 | D u32 |
    W*H*D float32 LE payload in (y, x, d) order.  The file is written to a
    temporary sibling and renamed so a failed write never leaves a partial
    file behind.
    """
    fmap.validate()
    path = Path(path)
    header = struct.pack("<4sIIII", FMAP_MAGIC, FMAP_VERSION,
                         fmap.width, fmap.height, fmap.channels)
    payload = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read_feature_map(path: str | os.PathLike) -> FeatureMap:
    """Read and validate an FMAP file written by :func:`write_feature_map`."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20:
        raise DataError(f"{path}: file too short for an FMAP header")
    magic, version, w, h, d = struct.unpack_from("<4sIIII", raw, 0)
    if magic != FMAP_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {FMAP_MAGIC!r}")
    if version != FMAP_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    if w < 1 or h < 1 or d < 1:
        raise DataError(f"{path}: invalid dimensions W={w} H={h} D={d}")
    n_values = w * h * d
    if n_values > _MAX_ELEMENTS:
        raise DataError(f"{path}: dimensions overflow ({w}x{h}x{d})")
    expected = 20 + 4 * n_values
    if len(raw) < expected:
        raise DataError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}"
        )
    if len(raw) > expected:
        raise DataError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    values = np.frombuffer(raw, dtype="<f4", count=n_values, offset=20)
    if not np.isfinite(values).all():
        raise DataError(f"{path}: payload contains NaN or Inf values")
    data = values.reshape(h, w, d)
    return FeatureMap(width=w, height=h, channels=d, data=data)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    resolution_tag: str
    path: str  # relative to the manifest file's directory
    width: int
    height: int
    channels: int


@dataclass
class FeatureSetManifest:
    """Catalog of feature-map files for one dataset.

    ``root`` is the directory entries' relative paths resolve against,
    normally the directory containing the manifest file.
    """

    dataset_name: str
    entries: list[ManifestEntry]
    root: Path

    def validate(self) -> None:
        seen: set[tuple[str, str]] = set()
        for e in self.entries:
            if e.resolution_tag not in RESOLUTION_TAGS:
                raise DataError(
                    f"unknown resolution tag {e.resolution_tag!r} for image {e.image_id!r}"
                )
            key = (e.image_id, e.resolution_tag)
            if key in seen:
                raise DataError(f"duplicate manifest entry for {key}")
            seen.add(key)
            if e.width < 1 or e.height < 1 or e.channels < 1:
                raise DataError(f"non-positive dimensions for image {e.image_id!r}")

    def image_ids(self) -> list[str]:
        """Image ids in first-appearance order."""
        out: list[str] = []
        seen: set[str] = set()
        for e in self.entries:
            if e.image_id not in seen:
                seen.add(e.image_id)
                out.append(e.image_id)
        return out

    def entries_for(self, image_id: str) -> list[ManifestEntry]:
        """Entries for one image, in canonical resolution order."""
        mine = [e for e in self.entries if e.image_id == image_id]
        order = {tag: i for i, tag in enumerate(RESOLUTION_TAGS)}
        return sorted(mine, key=lambda e: order[e.resolution_tag])

    def resolution_mode(self) -> str:
        """Return "single" or "multi"; raise if images mix the two."""
        if not self.entries:
            raise DataError("empty manifest")
        tags_by_image: dict[str, set[str]] = {}
        for e in self.entries:
            tags_by_image.setdefault(e.image_id, set()).add(e.resolution_tag)
        first: str | None = None
        for image_id, tags in tags_by_image.items():
            if tags == {"base"}:
                mode = "single"
            elif tags == set(RESOLUTION_TAGS):
                mode = "multi"
            else:
                raise DataError(
                    f"image {image_id!r} has resolution tags {sorted(tags)}, "
                    f"expected {{base}} or all of {RESOLUTION_TAGS}"
                )
            if first is None:
                first = mode
            elif mode != first:
                raise DataError(
                    f"image {image_id!r} is {mode}-resolution but the manifest "
                    f"started as {first}-resolution; mode must be uniform"
                )
        assert first is not None
        return first


def write_manifest(manifest: FeatureSetManifest, path: str | os.PathLike) -> None:
    """Write the tab-separated manifest (one entry per line, '#' comments)."""
    manifest.validate()
    path = Path(path)
    lines = []
    if manifest.dataset_name:
        lines.append(f"# dataset: {manifest.dataset_name}")
    for e in manifest.entries:
        lines.append("\t".join(
            [e.image_id, e.resolution_tag, e.path, str(e.width), str(e.height),
             str(e.channels)]
        ))
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read_manifest(path: str | os.PathLike) -> FeatureSetManifest:
    path = Path(path)
    dataset_name = ""
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            comment = line.lstrip("#").strip()
            if comment.startswith("dataset:"):
                dataset_name = comment[len("dataset:"):].strip()
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 tab-separated fields, "
                            f"got {len(fields)}")
        image_id, tag, rel_path, w, h, d = fields
        try:
            width, height, channels = int(w), int(h), int(d)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-integer dimensions") from exc
        entries.append(ManifestEntry(image_id, tag, rel_path, width, height, channels))
    manifest = FeatureSetManifest(dataset_name=dataset_name, entries=entries,
                                  root=path.parent)
    manifest.validate()
    return manifest
