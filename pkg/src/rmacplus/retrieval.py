"""Gallery index construction, exact L2 ranking, and query expansion.

Two ranking rules are provided.  Plain ranking compares the query
descriptor against one descriptor per gallery image.  Region ranking
compares the query against every stored region descriptor of every gallery
image and scores each image by its closest region, which lets a small
matching part of an image win even when the rest of it differs.
Search is exact brute force; distances are computed blocked and squared,
with the square root taken only for reporting.
"""

from __future__ import annotations

import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .descriptors import Descriptor, ImageDescriptors, WHITENED_NORMALIZED, _as_f32
from .errors import DataError
from .region_grid import RMAC_PLUS, TOLIAS_BASELINE

INDEX_MAGIC = b"RIDX"
INDEX_VERSION = 1
_FLAG_MULTIRESOLUTION = 1 << 0
_FLAG_TOLIAS = 1 << 1

RMAC_QE = "rmac_qe"
DB_REGION_QE = "db_region_qe"

_UNIT_NORM_TOL = 1e-5
_BLOCK_ROWS = 65536


@dataclass(frozen=True, eq=False)
class GalleryIndex:
    """Searchable gallery: one descriptor per image plus all region rows.

    ``offsets`` has N+1 entries; image i owns region rows
    offsets[i]:offsets[i+1].  All rows are unit-norm (or flagged zero)
    float32.  Instances are immutable; concurrent queries are safe.
    """

    image_ids: tuple[str, ...]
    rmac_matrix: np.ndarray    # (N, D) float32
    region_matrix: np.ndarray  # (R_total, D) float32
    offsets: np.ndarray        # (N + 1,) int64
    multiresolution: bool
    detector: str
    whitening_fingerprint: bytes

    @property
    def size(self) -> int:
        return len(self.image_ids)

    @property
    def dim(self) -> int:
        return self.rmac_matrix.shape[1]

    def regions_of(self, image_index: int) -> np.ndarray:
        return self.region_matrix[self.offsets[image_index]:self.offsets[image_index + 1]]

    def image_of_row(self, row: int) -> int:
        """Index of the image owning a global region row."""
        return int(np.searchsorted(self.offsets, row, side="right") - 1)

    def validate(self) -> None:
        n = self.size
        if n == 0:
            raise DataError("empty gallery index")
        if len(set(self.image_ids)) != n:
            raise DataError("duplicate image ids in index")
        if self.rmac_matrix.shape[0] != n:
            raise DataError("rmac matrix row count does not match image count")
        if self.offsets.shape != (n + 1,):
            raise DataError("offsets must have N + 1 entries")
        if self.offsets[0] != 0 or self.offsets[-1] != self.region_matrix.shape[0]:
            raise DataError("offsets do not cover the region matrix")
        if np.any(np.diff(self.offsets) < 1):
            raise DataError("every image must own at least one region row")
        if self.region_matrix.shape[1] != self.dim:
            raise DataError("region matrix dimension mismatch")
        if len(self.whitening_fingerprint) != 32:
            raise DataError("whitening fingerprint must be 32 bytes")
        for name, matrix in (("rmac", self.rmac_matrix), ("region", self.region_matrix)):
            norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
            bad = ~((np.abs(norms - 1.0) <= _UNIT_NORM_TOL) | (norms == 0.0))
            if bad.any():
                raise DataError(f"{name} matrix row {int(np.argmax(bad))} is neither "
                                f"unit-norm nor zero")


class RankedEntry(NamedTuple):
    image_id: str
    distance: float
    best_region_row: int | None


@dataclass(frozen=True)
class RankedList:
    """All gallery images ordered by ascending distance to one query."""

    query_id: str
    entries: tuple[RankedEntry, ...]

    def image_order(self) -> list[str]:
        return [e.image_id for e in self.entries]


def build_index(items: Sequence[ImageDescriptors], *, multiresolution: bool,
                detector: str = RMAC_PLUS,
                whitening_fingerprint: bytes = b"\0" * 32) -> GalleryIndex:
    """Assemble per-image descriptors into a validated index.

    Row order follows ``items`` (manifest order), so identical inputs build
    identical indexes.
    """
    if len(items) == 0:
        raise DataError("cannot build an index from an empty gallery")
    expected_res = 3 if multiresolution else 1
    for item in items:
        if item.resolutions != expected_res:
            raise DataError(
                f"image {item.image_id!r} has {item.resolutions} resolution(s) but the "
                f"index is {'multi' if multiresolution else 'single'}-resolution; "
                f"mode must be uniform"
            )
    dims = {item.rmac.dim for item in items}
    if len(dims) != 1:
        raise DataError(f"images have mixed descriptor dimensions {sorted(dims)}")

    image_ids = tuple(item.image_id for item in items)
    rmac_matrix = np.stack([item.rmac.values for item in items]).astype(np.float32)
    offsets = np.zeros(len(items) + 1, dtype=np.int64)
    rows = []
    for i, item in enumerate(items):
        if not item.regions:
            raise DataError(f"image {item.image_id!r} has no region descriptors")
        rows.extend(d.values for d in item.regions)
        offsets[i + 1] = offsets[i] + len(item.regions)
    region_matrix = np.stack(rows).astype(np.float32)

    index = GalleryIndex(image_ids=image_ids, rmac_matrix=rmac_matrix,
                         region_matrix=region_matrix, offsets=offsets,
                         multiresolution=multiresolution, detector=detector,
                         whitening_fingerprint=whitening_fingerprint)
    index.validate()
    return index


def _squared_distances(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Exact squared L2 distance from the query to every row, in float64.

    Rows are processed in blocks to bound temporary memory on large region
    matrices; the per-row value is the float64 sum of squared coordinate
    differences, which keeps ordering stable and reproducible.
    """
    q = query.astype(np.float64)
    out = np.empty(matrix.shape[0], dtype=np.float64)
    for start in range(0, matrix.shape[0], _BLOCK_ROWS):
        block = matrix[start:start + _BLOCK_ROWS].astype(np.float64)
        diff = block - q
        out[start:start + _BLOCK_ROWS] = np.sum(diff * diff, axis=1)
    return out


def _check_query(query: Descriptor, index: GalleryIndex) -> None:
    if query.dim != index.dim:
        raise ValueError(f"query dim {query.dim} != index dim {index.dim}")


def _to_ranked(query_id: str, image_ids: Sequence[str], sq_dists: np.ndarray,
               best_rows: Sequence[int | None]) -> RankedList:
    order = sorted(range(len(image_ids)),
                   key=lambda i: (sq_dists[i], image_ids[i]))
    entries = tuple(
        RankedEntry(image_ids[i], float(np.sqrt(sq_dists[i])), best_rows[i])
        for i in order
    )
    return RankedList(query_id=query_id, entries=entries)


def rank_plain(query: Descriptor, index: GalleryIndex,
               query_id: str = "query") -> RankedList:
    """Rank by distance between the query and each image's descriptor.

    Ties are broken by image id, ascending, so rankings are deterministic.
    """
    _check_query(query, index)
    sq = _squared_distances(index.rmac_matrix, query.values)
    return _to_ranked(query_id, index.image_ids, sq, [None] * index.size)


def rank_db_regions(query: Descriptor, index: GalleryIndex,
                    query_id: str = "query") -> RankedList:
    """Rank each image by its closest stored region descriptor.

    The winning region row is recorded per image (first row on exact ties).
    Ties between images are broken by image id, ascending.
    """
    _check_query(query, index)
    sq_all = _squared_distances(index.region_matrix, query.values)
    sq = np.empty(index.size, dtype=np.float64)
    best_rows: list[int | None] = []
    for i in range(index.size):
        lo, hi = int(index.offsets[i]), int(index.offsets[i + 1])
        segment = sq_all[lo:hi]
        j = int(segment.argmin())
        sq[i] = segment[j]
        best_rows.append(lo + j)
    return _to_ranked(query_id, index.image_ids, sq, best_rows)


def expand_query(query: Descriptor, ranked: RankedList, index: GalleryIndex,
                 k: int, variant: str = RMAC_QE,
                 global_regions: bool = False) -> Descriptor:
    """Average query expansion: sum the query with top-k retrieved
    descriptors and L2-normalize.

    ``rmac_qe`` adds the image descriptors of the top-k ranked images.
    ``db_region_qe`` adds each top-k image's best-matching region instead
    (or, with ``global_regions``, the k closest region rows overall).  The
    caller re-runs ranking with the expanded query; expansion is single
    round.
    """
    _check_query(query, index)
    if variant not in (RMAC_QE, DB_REGION_QE):
        raise ValueError(f"unknown query expansion variant {variant!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranked.entries:
        raise ValueError("ranked list is empty")
    if k > index.size and not (variant == DB_REGION_QE and global_regions):
        warnings.warn(f"query expansion k={k} exceeds gallery size {index.size}; "
                      f"clamping", stacklevel=2)
        k = index.size

    total = query.values.astype(np.float64)
    if variant == RMAC_QE:
        id_to_row = {image_id: i for i, image_id in enumerate(index.image_ids)}
        for entry in ranked.entries[:k]:
            total += index.rmac_matrix[id_to_row[entry.image_id]]
    elif global_regions:
        sq_all = _squared_distances(index.region_matrix, query.values)
        k = min(k, index.region_matrix.shape[0])
        rows = sorted(range(len(sq_all)), key=lambda r: (sq_all[r], r))[:k]
        for row in rows:
            total += index.region_matrix[row]
    else:
        id_to_row = {image_id: i for i, image_id in enumerate(index.image_ids)}
        for entry in ranked.entries[:k]:
            row = entry.best_region_row
            if row is None:
                # Ranked list came from plain ranking: find the best region now.
                image = id_to_row[entry.image_id]
                segment = index.regions_of(image).astype(np.float64)
                diff = segment - query.values.astype(np.float64)
                row = int(index.offsets[image]) + int(np.sum(diff * diff, axis=1).argmin())
            total += index.region_matrix[row]

    norm = float(np.linalg.norm(total))
    values = _as_f32(total if norm == 0.0 else total / norm)
    return Descriptor(values, WHITENED_NORMALIZED)


# --- index persistence -------------------------------------------------------

def save_index(index: GalleryIndex, path: str | os.PathLike) -> None:
    """Binary layout: "RIDX" | version u32 | flags u32 | N u32 | D u32 |
    R_total u64 | N x (len u32 + utf-8 id) | (N+1) x u64 offsets |
    N x D f32 image descriptors | R_total x D f32 region descriptors |
    32-byte whitening fingerprint.  Little-endian throughout; identical
    indexes serialize to identical bytes."""
    index.validate()
    path = Path(path)
    flags = 0
    if index.multiresolution:
        flags |= _FLAG_MULTIRESOLUTION
    if index.detector == TOLIAS_BASELINE:
        flags |= _FLAG_TOLIAS
    parts = [struct.pack("<4sIIIIQ", INDEX_MAGIC, INDEX_VERSION, flags,
                         index.size, index.dim, index.region_matrix.shape[0])]
    for image_id in index.image_ids:
        encoded = image_id.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
    parts.append(np.ascontiguousarray(index.offsets, dtype="<u8").tobytes())
    parts.append(np.ascontiguousarray(index.rmac_matrix, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(index.region_matrix, dtype="<f4").tobytes())
    parts.append(index.whitening_fingerprint)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        tmp.write_bytes(b"".join(parts))
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


class _Cursor:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataError(f"{self.path}: truncated index file")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_index(path: str | os.PathLike) -> GalleryIndex:
    path = Path(path)
    cur = _Cursor(path.read_bytes(), path)
    magic, version, flags, n, dim, r_total = cur.unpack("<4sIIIIQ")
    if magic != INDEX_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {INDEX_MAGIC!r}")
    if version != INDEX_VERSION:
        raise DataError(f"{path}: unsupported index version {version}")
    image_ids = []
    for _ in range(n):
        (length,) = cur.unpack("<I")
        image_ids.append(cur.take(length).decode("utf-8"))
    offsets = np.frombuffer(cur.take(8 * (n + 1)), dtype="<u8").astype(np.int64)
    rmac = np.frombuffer(cur.take(4 * n * dim), dtype="<f4").reshape(n, dim)
    regions = np.frombuffer(cur.take(4 * r_total * dim), dtype="<f4").reshape(r_total, dim)
    fingerprint = cur.take(32)
    if cur.pos != len(cur.raw):
        raise DataError(f"{path}: {len(cur.raw) - cur.pos} trailing bytes")
    index = GalleryIndex(image_ids=tuple(image_ids), rmac_matrix=rmac,
                         region_matrix=regions, offsets=offsets,
                         multiresolution=bool(flags & _FLAG_MULTIRESOLUTION),
                         detector=TOLIAS_BASELINE if flags & _FLAG_TOLIAS else RMAC_PLUS,
                         whitening_fingerprint=fingerprint)
    index.validate()
    return index


# --- ranked list text format -------------------------------------------------

def write_ranked_file(ranked: RankedList, path: str | os.PathLike) -> None:
    """One "rank<TAB>image_id<TAB>distance" line per gallery image."""
    path = Path(path)
    lines = [f"{rank}\t{e.image_id}\t{e.distance:.8f}"
             for rank, e in enumerate(ranked.entries, start=1)]
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read_ranked_file(path: str | os.PathLike, query_id: str) -> RankedList:
    path = Path(path)
    entries = []
    last_rank = 0
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataError(f"{path}:{lineno}: expected rank/id/distance")
        try:
            rank, distance = int(fields[0]), float(fields[2])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed rank or distance") from exc
        if rank != last_rank + 1:
            raise DataError(f"{path}:{lineno}: ranks must be consecutive from 1")
        last_rank = rank
        entries.append(RankedEntry(fields[1], distance, None))
    if not entries:
        raise DataError(f"{path}: empty ranking")
    return RankedList(query_id=query_id, entries=tuple(entries))
