"""Descriptor pipeline: regional max-pooling, whitening, and aggregation.

Each region of a feature map is max-pooled per channel into a raw
descriptor, L2-normalized, decorrelated with a PCA-whitening model and
normalized again.  Per-region descriptors are sum-pooled into one vector
per resolution, and the per-resolution vectors sum-pooled once more into
the final image descriptor.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .region_grid import GridSpec, Region, generate_regions, project_bbox
from .tensor_store import (RESOLUTION_TAGS, FeatureMap, ManifestEntry,
                           read_feature_map)

RAW_MAC = "raw_mac"
L2_NORMALIZED = "l2_normalized"
WHITENED_NORMALIZED = "whitened_normalized"

WHITENING_MAGIC = b"WHTN"
WHITENING_VERSION = 1

DEFAULT_EPSILON = 1e-9


@dataclass(frozen=True, eq=False)
class Descriptor:
    """A D-dimensional float32 vector plus its normalization state.

    All-zero vectors are legal (a max-pooled region of dead channels);
    normalization maps them to themselves, and ``is_zero`` flags them.
    """

    values: np.ndarray
    state: str

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def is_zero(self) -> bool:
        return not self.values.any()


def _as_f32(values: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    arr.flags.writeable = False
    return arr


def _unit(values: np.ndarray) -> np.ndarray:
    """Unit-norm float32 copy; the zero vector passes through unchanged.
    Norms accumulate in float64 so the result does not depend on how the
    caller produced the (float32) input."""
    v = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return _as_f32(v)
    return _as_f32(v / norm)


def mac_pool(fmap: FeatureMap, region: Region) -> Descriptor:
    """Channel-wise max over the region's cells."""
    if not region.in_bounds(fmap.width, fmap.height):
        raise ValueError(
            f"region {region.rect} out of bounds for {fmap.width}x{fmap.height} map"
        )
    block = fmap.data[region.y0:region.y0 + region.h,
                      region.x0:region.x0 + region.w, :]
    return Descriptor(_as_f32(block.max(axis=(0, 1))), RAW_MAC)


def l2_normalize(d: Descriptor) -> Descriptor:
    """Scale to unit Euclidean norm; the zero vector stays zero."""
    return Descriptor(_unit(d.values), L2_NORMALIZED)


@dataclass(frozen=True, eq=False)
class WhiteningModel:
    """Centering vector plus whitening projection.

    ``projection`` rows are unit eigenvectors of the training covariance
    scaled by 1 / sqrt(eigenvalue + epsilon), ordered by non-increasing
    eigenvalue.  Applying the model to its own (sufficiently large)
    training set yields approximately identity covariance.
    """

    mean: np.ndarray        # (D,) float64
    projection: np.ndarray  # (D, D) float64
    epsilon: float
    fitted_on: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.projection @ (np.asarray(values, dtype=np.float64) - self.mean)

    def eigenvalues(self) -> np.ndarray:
        """Training covariance eigenvalues, recovered from the row norms."""
        norms = np.linalg.norm(self.projection, axis=1)
        return 1.0 / norms**2 - self.epsilon

    @staticmethod
    def identity(dim: int) -> "WhiteningModel":
        """No-op model: zero mean, identity projection."""
        return WhiteningModel(mean=np.zeros(dim), projection=np.eye(dim),
                              epsilon=0.0, fitted_on=0)


def _canonical_sign(vec: np.ndarray) -> np.ndarray:
    """Flip so the first component with magnitude > 1e-12 is positive."""
    for v in vec:
        if abs(v) > 1e-12:
            return vec if v > 0 else -vec
    return vec


def fit_whitening(training: Sequence[Descriptor] | np.ndarray,
                  epsilon: float = DEFAULT_EPSILON) -> WhiteningModel:
    """Fit a PCA-whitening model on a set of descriptors.

    The covariance is the biased (1/n) empirical covariance.  Eigenpairs
    are sorted by decreasing eigenvalue, ties broken by the lexicographic
    order of the sign-canonicalized eigenvectors, so the fitted model is
    bit-reproducible for identical inputs.
    """
    if isinstance(training, np.ndarray):
        x = np.asarray(training, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"training array must be 2-D, got shape {x.shape}")
    else:
        if len(training) == 0:
            raise ValueError("empty training set")
        dims = {d.dim for d in training}
        if len(dims) != 1:
            raise ValueError(f"training descriptors have mixed dimensions {sorted(dims)}")
        x = np.stack([d.values for d in training]).astype(np.float64)
    n, dim = x.shape
    if n < 2:
        raise ValueError(f"need at least 2 training vectors, got {n}")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    vectors = [_canonical_sign(eigvecs[:, i]) for i in range(dim)]
    order = sorted(range(dim), key=lambda i: (-eigvals[i], tuple(vectors[i])))
    scale = 1.0 / np.sqrt(np.maximum(eigvals, 0.0) + epsilon)
    projection = np.stack([vectors[i] * scale[i] for i in order])
    return WhiteningModel(mean=mean, projection=projection, epsilon=epsilon,
                          fitted_on=n)


def whiten(d: Descriptor, model: WhiteningModel) -> Descriptor:
    """Center, project, and re-normalize one descriptor."""
    if d.dim != model.dim:
        raise ValueError(f"descriptor dim {d.dim} != model dim {model.dim}")
    return Descriptor(_unit(model.apply(d.values)), WHITENED_NORMALIZED)


def _sum_normalize(descriptors: Sequence[Descriptor], state: str) -> Descriptor:
    dims = {d.dim for d in descriptors}
    if len(dims) != 1:
        raise ValueError(f"descriptors have mixed dimensions {sorted(dims)}")
    total = np.zeros(dims.pop(), dtype=np.float64)
    for d in descriptors:
        total += d.values
    return Descriptor(_unit(total), state)


def rmac_aggregate(region_descriptors: Sequence[Descriptor]) -> Descriptor:
    """Sum-pool per-region descriptors and L2-normalize."""
    if len(region_descriptors) == 0:
        raise ValueError("cannot aggregate an empty region list")
    return _sum_normalize(region_descriptors, region_descriptors[0].state)


def multires_aggregate(per_resolution: Sequence[Descriptor],
                       multiresolution: bool = True) -> Descriptor:
    """Sum-pool the per-resolution descriptors and L2-normalize.

    Expects exactly 3 inputs in multi-resolution mode, exactly 1 otherwise.
    """
    expected = 3 if multiresolution else 1
    if len(per_resolution) != expected:
        raise ValueError(
            f"expected {expected} per-resolution descriptors, got {len(per_resolution)}"
        )
    return _sum_normalize(per_resolution, per_resolution[0].state)


# --- whitening model file format -------------------------------------------

def save_whitening_model(model: WhiteningModel, path: str | os.PathLike) -> None:
    """Binary layout: "WHTN" | version u32 | D u32 | epsilon f64 |
    mean D x f64 | projection D x D f64 row-major, all little-endian."""
    path = Path(path)
    dim = model.dim
    blob = struct.pack("<4sIId", WHITENING_MAGIC, WHITENING_VERSION, dim,
                       model.epsilon)
    blob += np.ascontiguousarray(model.mean, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(model.projection, dtype="<f8").tobytes()
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        tmp.write_bytes(blob)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def load_whitening_model(path: str | os.PathLike) -> WhiteningModel:
    path = Path(path)
    raw = path.read_bytes()
    header_size = struct.calcsize("<4sIId")
    if len(raw) < header_size:
        raise DataError(f"{path}: file too short for a whitening model header")
    magic, version, dim, epsilon = struct.unpack_from("<4sIId", raw, 0)
    if magic != WHITENING_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {WHITENING_MAGIC!r}")
    if version != WHITENING_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    expected = header_size + 8 * dim + 8 * dim * dim
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, got {len(raw)}")
    mean = np.frombuffer(raw, dtype="<f8", count=dim, offset=header_size)
    projection = np.frombuffer(raw, dtype="<f8", count=dim * dim,
                               offset=header_size + 8 * dim).reshape(dim, dim)
    # fitted_on is not persisted; 0 marks a model loaded from disk.
    return WhiteningModel(mean=mean, projection=projection, epsilon=epsilon,
                          fitted_on=0)


def whitening_fingerprint(path: str | os.PathLike) -> bytes:
    """SHA-256 of the model file, stored in gallery indexes for consistency
    checks between index build time and query time."""
    return hashlib.sha256(Path(path).read_bytes()).digest()


# --- per-image descriptor computation ---------------------------------------

@dataclass(frozen=True)
class QueryCrop:
    """Pixel bounding box of a query plus the pixel size of its image."""

    bbox: tuple[float, float, float, float]  # x0, y0, x1, y1
    image_size: tuple[int, int]              # width, height


@dataclass(frozen=True)
class ImageDescriptors:
    image_id: str
    rmac: Descriptor
    regions: tuple[Descriptor, ...]
    resolutions: int


def compute_image_descriptors(entries: Sequence[ManifestEntry],
                              root: str | os.PathLike,
                              model: WhiteningModel,
                              grid: GridSpec,
                              query_crop: QueryCrop | None = None) -> ImageDescriptors:
    """Full per-image pipeline over one or three resolutions.

    For each resolution: optionally crop the activations to the projected
    query bounding box, detect regions, max-pool each, L2-normalize,
    whiten, and sum-pool into the per-resolution descriptor.  Region
    descriptors of all resolutions concatenate into the image's gallery
    regions (15 per resolution for non-degenerate maps); the per-resolution
    descriptors sum-pool into the final image descriptor.
    """
    if not entries:
        raise DataError("no manifest entries for image")
    image_ids = {e.image_id for e in entries}
    if len(image_ids) != 1:
        raise ValueError(f"entries span multiple images: {sorted(image_ids)}")
    image_id = image_ids.pop()
    tags = [e.resolution_tag for e in entries]
    if sorted(tags) != sorted(set(tags)):
        raise DataError(f"image {image_id!r} has duplicate resolution tags")
    if set(tags) == {"base"}:
        multiresolution = False
    elif set(tags) == set(RESOLUTION_TAGS):
        multiresolution = True
    else:
        raise DataError(
            f"image {image_id!r} has resolution tags {sorted(tags)}, "
            f"expected {{base}} or all of {RESOLUTION_TAGS}"
        )

    root = Path(root)
    order = {tag: i for i, tag in enumerate(RESOLUTION_TAGS)}
    per_resolution: list[Descriptor] = []
    region_descriptors: list[Descriptor] = []
    for entry in sorted(entries, key=lambda e: order[e.resolution_tag]):
        fmap = read_feature_map(root / entry.path)
        if (fmap.width, fmap.height, fmap.channels) != (entry.width, entry.height,
                                                        entry.channels):
            raise DataError(
                f"{entry.path}: tensor is {fmap.width}x{fmap.height}x{fmap.channels} "
                f"but the manifest declares {entry.width}x{entry.height}x{entry.channels}"
            )
        if fmap.channels != model.dim:
            raise DataError(
                f"{entry.path}: channel count {fmap.channels} != whitening model "
                f"dimension {model.dim}"
            )
        if query_crop is not None:
            crop = project_bbox(query_crop.bbox, query_crop.image_size,
                                (fmap.width, fmap.height))
            fmap = fmap.crop(*crop.rect)
        regions = generate_regions(fmap.width, fmap.height, grid)
        descs = [whiten(l2_normalize(mac_pool(fmap, r)), model) for r in regions]
        region_descriptors.extend(descs)
        per_resolution.append(rmac_aggregate(descs))

    rmac = multires_aggregate(per_resolution, multiresolution=multiresolution)
    return ImageDescriptors(image_id=image_id, rmac=rmac,
                            regions=tuple(region_descriptors),
                            resolutions=len(per_resolution))
