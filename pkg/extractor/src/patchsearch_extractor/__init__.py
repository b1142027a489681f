"""Image-to-feature-map frontend for the patchsearch engine."""

from .backbones import BackboneLoadError, PatchMomentsBackbone, load_backbone
from .config import ExtractorConfig
from .extract import extract_features, extract_many, load_image
from .formats import mask_to_b64, write_feature_file, write_manifest
from .rasterize import (
    LayoutError,
    bbox_to_patch_bbox,
    build_manifest,
    mask_to_patch_mask,
    pixel_axis_overlap,
)

__version__ = "0.1.0"
