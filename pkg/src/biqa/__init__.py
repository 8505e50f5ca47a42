"""Lightweight blind image quality assessment.

Feature extraction is a two-hop transform hierarchy (block DCT, then a
data-driven 3x3 transform over the DC map); a split-cost test keeps the
quality-aware feature subset; boosted regression trees map features to MOS.
"""

from .augment import AugmentConfig, Subimage, augment_image, crop_authentic, crop_synthetic
from .dataset import (
    DatasetManifest,
    ManifestEntry,
    Scenario,
    Split,
    YuvImage,
    load_image,
    load_manifest,
    rgb_to_yuv,
    save_manifest,
    split_manifest,
    yuv_to_rgb,
)
from .errors import BiqaError, DataError
from .evaluation import EvaluationReport, plcc, run_protocol, srocc
from .features import (
    FeatureMatrix,
    FeaturePipelineParams,
    SaabKernel,
    block_dct,
    extract_features,
    fit_feature_params,
    fit_hop2_saab,
    zigzag,
)
from .gbdt import GbdtConfig, GbdtModel
from .pipeline import (
    QualityModel,
    TrainConfig,
    load_model,
    model_digest,
    predict_image,
    save_model,
    train,
)
from .rft import RftRanking, rank_features, rft_cost, select_features
from .toy import ToyDatasetSpec, gen_toy

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "BiqaError",
    "DataError",
    "DatasetManifest",
    "EvaluationReport",
    "FeatureMatrix",
    "FeaturePipelineParams",
    "GbdtConfig",
    "GbdtModel",
    "ManifestEntry",
    "QualityModel",
    "RftRanking",
    "SaabKernel",
    "Scenario",
    "Split",
    "Subimage",
    "ToyDatasetSpec",
    "TrainConfig",
    "YuvImage",
    "augment_image",
    "block_dct",
    "crop_authentic",
    "crop_synthetic",
    "extract_features",
    "fit_feature_params",
    "fit_hop2_saab",
    "gen_toy",
    "load_image",
    "load_manifest",
    "load_model",
    "model_digest",
    "plcc",
    "predict_image",
    "rank_features",
    "rft_cost",
    "rgb_to_yuv",
    "run_protocol",
    "save_manifest",
    "save_model",
    "select_features",
    "split_manifest",
    "srocc",
    "train",
    "yuv_to_rgb",
    "zigzag",
]
