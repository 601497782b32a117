"""Regional max-pooling descriptors and region-level retrieval for
content-based image search, plus the evaluation tooling around them."""

from .descriptors import (Descriptor, ImageDescriptors, QueryCrop, WhiteningModel,
                          compute_image_descriptors, fit_whitening, l2_normalize,
                          load_whitening_model, mac_pool, multires_aggregate,
                          rmac_aggregate, save_whitening_model, whiten,
                          whitening_fingerprint)
from .errors import ConfigError, DataError, PipelineError
from .evaluation import (EvaluationReport, GroundTruth, QueryGroundTruth,
                         average_precision, mean_average_precision,
                         parse_classlist_gt, parse_oxford_gt,
                         write_evaluation_report)
from .region_grid import (GridSpec, Region, generate_regions,
                          generate_regions_plus, generate_regions_tolias,
                          project_bbox, regions_plus_for_level, regions_to_text)
from .retrieval import (GalleryIndex, RankedEntry, RankedList, build_index,
                        expand_query, load_index, rank_db_regions, rank_plain,
                        read_ranked_file, save_index, write_ranked_file)
from .tensor_store import (FeatureMap, FeatureSetManifest, ManifestEntry,
                           read_feature_map, read_manifest, write_feature_map,
                           write_manifest)

__version__ = "0.1.0"
