"""Command-line entry point for reproducible retrieval runs.

Subcommands mirror the pipeline stages: ``fit-whitening`` learns the
descriptor whitening from the gallery, ``build-index`` materializes the
searchable gallery, ``query`` ranks every query image, ``evaluate`` scores
the rankings against ground truth, and ``all`` chains the four.  A flat
key=value config file drives each command; a few flags override it.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal.
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .descriptors import (QueryCrop, compute_image_descriptors,
                          fit_whitening, l2_normalize, load_whitening_model,
                          mac_pool, save_whitening_model, whitening_fingerprint)
from .errors import ConfigError, DataError, PipelineError
from .evaluation import (mean_average_precision, parse_classlist_gt,
                         parse_oxford_gt, write_evaluation_report)
from .region_grid import (RMAC_PLUS, TOLIAS_BASELINE, GridSpec, generate_regions)
from .retrieval import (DB_REGION_QE, RMAC_QE, build_index, expand_query,
                        load_index, rank_db_regions, rank_plain,
                        read_ranked_file, save_index, write_ranked_file)
from .tensor_store import FeatureSetManifest, read_feature_map, read_manifest

RETRIEVAL_MODES = ("plain", "db_regions")
QE_VARIANTS = ("off", RMAC_QE, DB_REGION_QE)
GT_FORMATS = ("oxford", "classlist")


@dataclass
class RunConfig:
    """One run's settings; see the config-file keys of the same names."""

    gallery_manifest: str = ""
    query_manifest: str = ""
    detector: str = RMAC_PLUS
    multires: str = "auto"        # auto | true | false
    whitening: str = "self"       # self | path to a model file
    retrieval: str = "db_regions"
    qe: str = "off"
    qe_k: int = 1
    gt: str = ""
    gt_format: str = "classlist"
    bbox_file: str = ""
    output_dir: str = "out"
    jobs: int = 1
    tolias_levels: int = 3
    tolias_m: int = 2
    transpose_portrait: bool = True

    def grid_spec(self) -> GridSpec:
        return GridSpec(detector=self.detector, levels=self.tolias_levels,
                        m=self.tolias_m, transpose_portrait=self.transpose_portrait)

    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def whitening_path(self) -> Path:
        if self.whitening == "self":
            return self.out() / "whitening.whtn"
        return Path(self.whitening)

    @property
    def index_path(self) -> Path:
        return self.out() / "gallery.ridx"

    def validate(self, need_gallery: bool = True, need_queries: bool = False,
                 need_gt: bool = False) -> None:
        if self.detector not in (RMAC_PLUS, TOLIAS_BASELINE):
            raise ConfigError(f"detector must be one of {RMAC_PLUS}/{TOLIAS_BASELINE}, "
                              f"got {self.detector!r}")
        if self.multires not in ("auto", "true", "false"):
            raise ConfigError(f"multires must be auto/true/false, got {self.multires!r}")
        if self.retrieval not in RETRIEVAL_MODES:
            raise ConfigError(f"retrieval must be one of {RETRIEVAL_MODES}, "
                              f"got {self.retrieval!r}")
        if self.qe not in QE_VARIANTS:
            raise ConfigError(f"qe must be one of {QE_VARIANTS}, got {self.qe!r}")
        if self.qe != "off" and self.qe_k < 1:
            raise ConfigError(f"qe_k must be >= 1 when query expansion is on, "
                              f"got {self.qe_k}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.gt_format not in GT_FORMATS:
            raise ConfigError(f"gt_format must be one of {GT_FORMATS}, "
                              f"got {self.gt_format!r}")
        if need_gallery:
            if not self.gallery_manifest:
                raise ConfigError("gallery_manifest is required")
            if not Path(self.gallery_manifest).exists():
                raise ConfigError(f"gallery manifest not found: {self.gallery_manifest}")
        if need_queries:
            if not self.query_manifest:
                raise ConfigError("query_manifest is required")
            if not Path(self.query_manifest).exists():
                raise ConfigError(f"query manifest not found: {self.query_manifest}")
            if self.bbox_file and not Path(self.bbox_file).exists():
                raise ConfigError(f"bbox file not found: {self.bbox_file}")
        if need_gt:
            if not self.gt:
                raise ConfigError("gt is required for evaluation")
            if not Path(self.gt).exists():
                raise ConfigError(f"ground truth not found: {self.gt}")
        if self.whitening != "self" and not Path(self.whitening).exists():
            raise ConfigError(f"whitening model not found: {self.whitening}")


_BOOL_KEYS = {"transpose_portrait"}
_INT_KEYS = {"qe_k", "jobs", "tolias_levels", "tolias_m"}


def parse_config(path: str | Path) -> RunConfig:
    """Parse a flat "key = value" config file ('#' starts a comment)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config = RunConfig()
    valid = set(config.__dataclass_fields__)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in valid:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in _INT_KEYS:
            try:
                setattr(config, key, int(value))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {key} must be an integer") from exc
        elif key in _BOOL_KEYS:
            if value.lower() not in ("true", "false"):
                raise ConfigError(f"{path}:{lineno}: {key} must be true or false")
            setattr(config, key, value.lower() == "true")
        else:
            setattr(config, key, value)
    return config


def read_bbox_file(path: str | Path) -> dict[str, QueryCrop]:
    """Per-query pixel bounding boxes with the source image size.

    Tab-separated lines: image_id, x0, y0, x1, y1, image_width, image_height.
    """
    crops: dict[str, QueryCrop] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 7:
            raise DataError(f"{path}:{lineno}: expected 7 tab-separated fields")
        try:
            bbox = tuple(float(v) for v in fields[1:5])
            size = (int(fields[5]), int(fields[6]))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed bbox numbers") from exc
        crops[fields[0]] = QueryCrop(bbox=bbox, image_size=size)
    return crops


def _resolve_multires(config: RunConfig, manifest: FeatureSetManifest) -> bool:
    mode = manifest.resolution_mode()
    if config.multires == "auto":
        return mode == "multi"
    wanted = config.multires == "true"
    if wanted != (mode == "multi"):
        raise DataError(
            f"config requests {'multi' if wanted else 'single'}-resolution but the "
            f"manifest is {mode}-resolution"
        )
    return wanted


def _map_images(config: RunConfig, manifest: FeatureSetManifest, fn) -> list:
    """Apply fn to every image id, preserving manifest order."""
    ids = manifest.image_ids()
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(fn, ids))
    return [fn(image_id) for image_id in ids]


def cmd_fit_whitening(config: RunConfig) -> Path:
    """Fit the whitening model on all gallery region descriptors."""
    config.validate()
    manifest = read_manifest(config.gallery_manifest)
    grid = config.grid_spec()
    started = time.time()

    def image_macs(image_id: str):
        macs = []
        for entry in manifest.entries_for(image_id):
            fmap = read_feature_map(manifest.root / entry.path)
            for region in generate_regions(fmap.width, fmap.height, grid):
                macs.append(l2_normalize(mac_pool(fmap, region)))
        return macs

    training = [d for macs in _map_images(config, manifest, image_macs) for d in macs]
    model = fit_whitening(training)
    out = config.out()
    out.mkdir(parents=True, exist_ok=True)
    path = out / "whitening.whtn"
    save_whitening_model(model, path)
    top = ", ".join(f"{v:.4g}" for v in model.eigenvalues()[:5])
    print(f"whitening: D={model.dim} fitted_on={model.fitted_on} "
          f"top eigenvalues [{top}] ({time.time() - started:.2f}s) -> {path}")
    return path


def cmd_build_index(config: RunConfig) -> Path:
    """Compute gallery descriptors and persist the searchable index."""
    config.validate()
    model_path = config.whitening_path
    if not model_path.exists():
        raise ConfigError(f"whitening model not found: {model_path} "
                          f"(run fit-whitening first)")
    model = load_whitening_model(model_path)
    fingerprint = whitening_fingerprint(model_path)
    manifest = read_manifest(config.gallery_manifest)
    multiresolution = _resolve_multires(config, manifest)
    grid = config.grid_spec()
    started = time.time()

    items = _map_images(
        config, manifest,
        lambda image_id: compute_image_descriptors(
            manifest.entries_for(image_id), manifest.root, model, grid),
    )
    index = build_index(items, multiresolution=multiresolution,
                        detector=config.detector,
                        whitening_fingerprint=fingerprint)
    out = config.out()
    out.mkdir(parents=True, exist_ok=True)
    path = config.index_path
    save_index(index, path)
    print(f"index: N={index.size} D={index.dim} "
          f"regions={index.region_matrix.shape[0]} "
          f"({time.time() - started:.2f}s) -> {path}")
    return path


def cmd_query(config: RunConfig) -> Path:
    """Rank the gallery for every query; write one ranked file per query."""
    config.validate(need_queries=True)
    if not config.index_path.exists():
        raise ConfigError(f"index not found: {config.index_path} "
                          f"(run build-index first)")
    index = load_index(config.index_path)
    model_path = config.whitening_path
    model = load_whitening_model(model_path)
    if whitening_fingerprint(model_path) != index.whitening_fingerprint:
        warnings.warn("whitening model fingerprint differs from the one the "
                      "index was built with", stacklevel=2)
    manifest = read_manifest(config.query_manifest)
    crops = read_bbox_file(config.bbox_file) if config.bbox_file else {}
    grid = config.grid_spec()
    rank = rank_db_regions if config.retrieval == "db_regions" else rank_plain
    out = config.out()
    ranked_dir = out / "rankings"
    ranked_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()

    def run_query(image_id: str):
        descriptors = compute_image_descriptors(
            manifest.entries_for(image_id), manifest.root, model, grid,
            query_crop=crops.get(image_id))
        ranked = rank(descriptors.rmac, index, image_id)
        if config.qe != "off":
            write_ranked_file(ranked, ranked_dir / f"{image_id}.preqe.ranked.txt")
            expanded = expand_query(descriptors.rmac, ranked, index,
                                    k=config.qe_k, variant=config.qe)
            ranked = rank(expanded, index, image_id)
        write_ranked_file(ranked, ranked_dir / f"{image_id}.ranked.txt")
        return ranked

    results = _map_images(config, manifest, run_query)
    print(f"query: {len(results)} queries, mode={config.retrieval}, qe={config.qe} "
          f"({time.time() - started:.2f}s) -> {ranked_dir}")
    return ranked_dir


def cmd_evaluate(config: RunConfig) -> Path:
    """Score the ranked files in the output directory against ground truth."""
    config.validate(need_gallery=False, need_gt=True)
    gt = (parse_oxford_gt(config.gt) if config.gt_format == "oxford"
          else parse_classlist_gt(config.gt))
    ranked_dir = config.out() / "rankings"
    rankings = {}
    for query_id in gt.query_ids():
        path = ranked_dir / f"{query_id}.ranked.txt"
        if not path.exists():
            raise DataError(f"no ranking for query {query_id!r}: {path} missing")
        rankings[query_id] = read_ranked_file(path, query_id)
    report = mean_average_precision(rankings, gt)
    report_path = config.out() / "evaluation.txt"
    write_evaluation_report(report, report_path,
                            json_path=config.out() / "evaluation.json")
    print(f"evaluate: {len(report.per_query)} queries, mAP={report.mean_ap:.6f} "
          f"-> {report_path}")
    return report_path


def cmd_all(config: RunConfig) -> Path:
    cmd_fit_whitening(config)
    cmd_build_index(config)
    cmd_query(config)
    return cmd_evaluate(config)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmacplus",
        description="Regional max-pooling descriptors and region-level retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fit-whitening", "fit the whitening model on gallery regions"),
        ("build-index", "compute gallery descriptors and build the index"),
        ("query", "rank the gallery for every query image"),
        ("evaluate", "score rankings against ground truth"),
        ("all", "run fit-whitening, build-index, query, evaluate"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run config file")
        p.add_argument("--detector", choices=[RMAC_PLUS, TOLIAS_BASELINE])
        p.add_argument("--multires", choices=["auto", "true", "false"])
        p.add_argument("--qe", choices=list(QE_VARIANTS))
        p.add_argument("--qe-k", type=int, dest="qe_k")
        p.add_argument("--jobs", type=int)
        p.add_argument("--output-dir", dest="output_dir")
    return parser


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for key in ("detector", "multires", "qe", "qe_k", "jobs", "output_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return replace(config, **overrides)


_COMMANDS = {
    "fit-whitening": cmd_fit_whitening,
    "build-index": cmd_build_index,
    "query": cmd_query,
    "evaluate": cmd_evaluate,
    "all": cmd_all,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _apply_overrides(parse_config(args.config), args)
        _COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
