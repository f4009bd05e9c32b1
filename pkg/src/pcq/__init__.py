"""No-reference point cloud quality assessment toolkit.

Pipeline: six-view orthographic projection with density-aware blurring,
a compact trainable feature extractor, attention-based feature
disentanglement into a structured description domain, level
classification against per-level anchor features, confidence-degree
regression, and a kernel ridge reference model on fixed features.
"""

from .config import RunConfig, load_config, save_config
from .ingest import (DESCRIPTIONS, DatasetManifest, PointCloud, QualityLabel,
                     SynthConfig, denormalize, normalize_score, parse_ply,
                     read_manifest, synth_dataset, write_manifest, write_ply)
from .projection import (ProjectionSet, differentiated_blur, estimate_density,
                         project, render, rescale_to_cube)
from .ranklosses import (eval_metrics, logistic4_fit, plcc_loss, soft_rank,
                         srocc_loss)
from .stages import QualityScore, combine
from .harness import (QualityModel, build_episode, crossval, evaluate,
                      prepare_samples, train)

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "save_config",
    "DESCRIPTIONS", "DatasetManifest", "PointCloud", "QualityLabel",
    "SynthConfig", "denormalize", "normalize_score", "parse_ply",
    "read_manifest", "synth_dataset", "write_manifest", "write_ply",
    "ProjectionSet", "differentiated_blur", "estimate_density", "project",
    "render", "rescale_to_cube",
    "eval_metrics", "logistic4_fit", "plcc_loss", "soft_rank", "srocc_loss",
    "QualityScore", "combine",
    "QualityModel", "build_episode", "crossval", "evaluate",
    "prepare_samples", "train",
]
