"""Sparse representation-based full-reference image quality assessment.

A dictionary of cortex-like basis vectors is learned from a reference
image by K-SVD; salient patches of the reference and a distorted image are
sparse-coded against it with orthogonal matching pursuit, and the SPARQ
index summarizes how well the codes agree. An evaluation harness
correlates batches of scores with subjective ratings.
"""

from .evaluation import EvalStats, LogisticFit, evaluate, fit_logistic, krocc, srocc
from .image import (
    HOMOGENEITY_VARIANCE,
    PatchSet,
    downsample,
    downsample_factor,
    extract_training_patches,
    load_image,
    local_entropy_map,
    patches_at,
    salient_count,
    salient_rank_order,
    save_entropy_pgm,
    select_salient_patches,
    to_grayscale,
)
from .ksvd import (
    DictionaryFormatError,
    KSvd,
    LearnConfig,
    TrainingReport,
    init_dictionary,
    learn,
    load_dictionary,
    save_dictionary,
)
from .manifest import DatasetManifest, ManifestRecord, load_manifest
from .pursuit import Dictionary, SparseCode, batch_omp, omp, reconstruct
from .quality import (
    QualityResult,
    SparqIndex,
    SparqParams,
    alpha,
    beta,
    patch_quality,
    psnr,
    sparq_index,
    sparq_score_profile,
    sparq_symmetric,
    train_reference_dictionary,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest",
    "Dictionary",
    "DictionaryFormatError",
    "EvalStats",
    "HOMOGENEITY_VARIANCE",
    "KSvd",
    "LearnConfig",
    "LogisticFit",
    "ManifestRecord",
    "PatchSet",
    "QualityResult",
    "SparqIndex",
    "SparqParams",
    "SparseCode",
    "TrainingReport",
    "alpha",
    "batch_omp",
    "beta",
    "downsample",
    "downsample_factor",
    "evaluate",
    "extract_training_patches",
    "fit_logistic",
    "init_dictionary",
    "krocc",
    "learn",
    "load_dictionary",
    "load_image",
    "load_manifest",
    "local_entropy_map",
    "omp",
    "patch_quality",
    "patches_at",
    "psnr",
    "reconstruct",
    "salient_count",
    "salient_rank_order",
    "save_dictionary",
    "save_entropy_pgm",
    "select_salient_patches",
    "sparq_index",
    "sparq_score_profile",
    "sparq_symmetric",
    "srocc",
    "to_grayscale",
    "train_reference_dictionary",
]
