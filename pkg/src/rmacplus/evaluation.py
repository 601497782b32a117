"""Ground-truth parsing and mean-average-precision scoring.

Two ground-truth layouts are supported: the buildings-benchmark directory
layout (per-query good/ok/junk member files, query line with a pixel
bounding box) and a generic tab-separated class list where every image is
either a query or a database member of a class.  Junk images are removed
from a ranking before scoring and count neither as hits nor as misses.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError
from .retrieval import RankedList


@dataclass(frozen=True)
class QueryGroundTruth:
    query_id: str
    query_image_id: str
    positives: frozenset[str]
    junk: frozenset[str]
    bbox: tuple[float, float, float, float] | None  # pixels, x0 y0 x1 y1


@dataclass(frozen=True)
class GroundTruth:
    queries: dict[str, QueryGroundTruth]

    def query_ids(self) -> list[str]:
        return sorted(self.queries)


def _read_id_lines(path: Path) -> list[str]:
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()]


def parse_oxford_gt(directory: str | os.PathLike) -> GroundTruth:
    """Parse a buildings-benchmark ground-truth directory.

    Every ``*_query.txt`` holds one line, "<id> x0 y0 x1 y1", where the id
    may carry a leading "oxc1_" tag that is stripped.  Positives are the
    union of the good and ok member files; junk files complete the triple.
    """
    directory = Path(directory)
    query_files = sorted(directory.glob("*_query.txt"))
    if not query_files:
        raise DataError(f"no *_query.txt files in {directory}")
    queries: dict[str, QueryGroundTruth] = {}
    for query_file in query_files:
        query_id = query_file.name[:-len("_query.txt")]
        line = query_file.read_text(encoding="utf-8").strip()
        fields = line.split()
        if len(fields) != 5:
            raise DataError(f"{query_file}: expected 'id x0 y0 x1 y1', got {line!r}")
        image_id = fields[0]
        if image_id.startswith("oxc1_"):
            image_id = image_id[len("oxc1_"):]
        try:
            x0, y0, x1, y1 = (float(v) for v in fields[1:])
        except ValueError as exc:
            raise DataError(f"{query_file}: malformed bounding box") from exc

        members: dict[str, set[str]] = {}
        for kind in ("good", "ok", "junk"):
            member_file = directory / f"{query_id}_{kind}.txt"
            if not member_file.exists():
                raise DataError(f"missing member file {member_file}")
            members[kind] = set(_read_id_lines(member_file))
        positives = members["good"] | members["ok"]
        if not positives:
            raise DataError(f"query {query_id!r} has no good or ok images")
        overlap = positives & members["junk"]
        if overlap:
            raise DataError(f"query {query_id!r}: {sorted(overlap)[:3]} listed as "
                            f"both positive and junk")
        queries[query_id] = QueryGroundTruth(
            query_id=query_id, query_image_id=image_id,
            positives=frozenset(positives), junk=frozenset(members["junk"]),
            bbox=(x0, y0, x1, y1),
        )
    return GroundTruth(queries=queries)


def parse_classlist_gt(path: str | os.PathLike) -> GroundTruth:
    """Parse a class-list file: "image_id<TAB>class_id<TAB>{query|db}" lines.

    Each query's positives are the database members of its class; there are
    no junk images and no bounding boxes.
    """
    path = Path(path)
    by_class: dict[str, dict[str, list[str]]] = {}
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataError(f"{path}:{lineno}: expected image/class/role")
        image_id, class_id, role = fields
        if role not in ("query", "db"):
            raise DataError(f"{path}:{lineno}: role must be 'query' or 'db', "
                            f"got {role!r}")
        if image_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate image id {image_id!r}")
        seen.add(image_id)
        by_class.setdefault(class_id, {"query": [], "db": []})[role].append(image_id)

    queries: dict[str, QueryGroundTruth] = {}
    for class_id, members in sorted(by_class.items()):
        for query_image in members["query"]:
            if not members["db"]:
                raise DataError(f"class {class_id!r} has a query but no database "
                                f"members")
            queries[query_image] = QueryGroundTruth(
                query_id=query_image, query_image_id=query_image,
                positives=frozenset(members["db"]), junk=frozenset(), bbox=None,
            )
    if not queries:
        raise DataError(f"{path}: no queries declared")
    return GroundTruth(queries=queries)


def average_precision(ranked: RankedList | Sequence[str],
                      positives: Iterable[str],
                      junk: Iterable[str] = ()) -> float:
    """Average precision of one ranking.

    Junk ids are deleted from the ranking first.  AP is the mean, over all
    positives, of precision at each positive's filtered rank; positives
    missing from the ranking contribute zero.
    """
    positives = frozenset(positives)
    junk = frozenset(junk)
    if not positives:
        raise ValueError("positives must be non-empty")
    ids = ranked.image_order() if isinstance(ranked, RankedList) else list(ranked)
    hits = 0
    rank = 0
    precision_sum = 0.0
    for image_id in ids:
        if image_id in junk:
            continue
        rank += 1
        if image_id in positives:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(positives)


@dataclass(frozen=True)
class EvaluationReport:
    per_query: tuple[tuple[str, float], ...]  # (query_id, AP), sorted by id
    mean_ap: float


def mean_average_precision(rankings: Mapping[str, RankedList] | Sequence[RankedList],
                           gt: GroundTruth) -> EvaluationReport:
    """Mean AP over all declared queries, plus the per-query values."""
    if not isinstance(rankings, Mapping):
        rankings = {r.query_id: r for r in rankings}
    per_query = []
    for query_id in gt.query_ids():
        if query_id not in rankings:
            raise DataError(f"no ranking supplied for query {query_id!r}")
        q = gt.queries[query_id]
        per_query.append(
            (query_id, average_precision(rankings[query_id], q.positives, q.junk))
        )
    mean_ap = sum(ap for _, ap in per_query) / len(per_query)
    return EvaluationReport(per_query=tuple(per_query), mean_ap=mean_ap)


def write_evaluation_report(report: EvaluationReport, path: str | os.PathLike,
                            json_path: str | os.PathLike | None = None) -> None:
    """Text report: one "query_id<TAB>AP" line per query, then "mAP<TAB>value"."""
    path = Path(path)
    lines = [f"{query_id}\t{ap:.6f}" for query_id, ap in report.per_query]
    lines.append(f"mAP\t{report.mean_ap:.6f}")
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    if json_path is not None:
        json_path = Path(json_path)
        payload = {
            "per_query": {query_id: ap for query_id, ap in report.per_query},
            "mAP": report.mean_ap,
        }
        tmp = json_path.with_name(json_path.name + f".tmp{os.getpid()}")
        try:
            tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
            os.replace(tmp, json_path)
        finally:
            if tmp.exists():
                tmp.unlink()
