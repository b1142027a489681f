"""Training-free one-shot personal object search over patch feature maps."""

from .clustering import Clustering, KMeansConfig, augment_with_coords, kmeans
from .core import (
    BBox,
    DegenerateInputError,
    FeatureMap,
    PatchSet,
    bbox_of,
    connected_components,
    cosine_similarity,
    percentile,
    rect_patches,
    similarity_map,
)
from .enrollment import (
    ClassModel,
    SupportPrompt,
    adaptive_threshold,
    bbox_patches,
    build_prototype,
    enroll,
    seg_from_bbox,
)
from .evaluation import (
    EvalRecord,
    MetricsReport,
    average_precision,
    benchmark,
    collect_class_scores,
    compute_acc,
    compute_cprec,
    compute_miou,
    iou,
)
from .fileio import (
    DataError,
    DatasetManifest,
    load_feature_file,
    load_manifest,
    load_report,
    load_results,
    load_store,
    save_report,
    save_results,
    save_store,
    write_feature_file,
)
from .search import (
    SearchConfig,
    SearchResult,
    match_patches,
    query_prepass,
    refine_mask,
    score_candidates,
    search_query,
    select_best,
)
from .synth import SynthSpec, generate_dataset

__version__ = "0.1.0"
