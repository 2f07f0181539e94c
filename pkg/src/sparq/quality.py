"""The SPARQ full-reference quality index and patch-level similarity terms.

A dictionary learned from the reference image codes salient patch pairs of
the reference and the distorted image; each pair is scored by the product
of a code-direction term (alpha) and a code-difference term (beta), and
the global index is the mean over all selected pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fraction, check_gray_image, check_same_shape
from .image import (
    downsample,
    downsample_factor,
    extract_training_patches,
    local_entropy_map,
    patches_at,
    salient_count,
    salient_rank_order,
    to_grayscale,
)
from .ksvd import LearnConfig, learn
from .pursuit import Dictionary, SparseCode, _batch_omp_arrays, dense_codes, omp

# Reported ceiling for the PSNR of (near-)identical images.
PSNR_CAP_DB = 100.0


@dataclass(frozen=True)
class SparqParams:
    """Quality-estimation parameters."""

    c: float = 0.01
    sparsity: int = 12
    salient_fraction: float = 0.15
    patch_side: int = 11

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError(f"c must be positive, got {self.c}")
        check_fraction(self.salient_fraction, "salient_fraction")
        if self.sparsity < 1:
            raise ValueError(f"sparsity must be positive, got {self.sparsity}")
        if self.patch_side < 1:
            raise ValueError(f"patch_side must be positive, got {self.patch_side}")


@dataclass(frozen=True)
class QualityResult:
    """Global quality score plus per-patch detail.

    ``patch_scores`` aligns with ``anchors`` (row-major anchor order, in
    the coordinates of the downsampled images); ``degenerate`` flags pairs
    where both codes were empty. ``sparq`` is the arithmetic mean of
    ``patch_scores``.
    """

    sparq: float
    patch_scores: np.ndarray
    anchors: np.ndarray
    q: int
    degenerate: np.ndarray


def _as_dense_code(code, what: str) -> np.ndarray:
    if isinstance(code, SparseCode):
        return code.dense()
    arr = np.asarray(code, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{what} is empty")
    return arr


def alpha(code_ref, code_dis, c: float = 0.01) -> float:
    """Direction agreement of two sparse codes, in (0, 1].

    (|x_r . x_d| + c) / (||x_r|| ||x_d|| + c); invariant under positive
    rescaling of either code.
    """
    xr = _as_dense_code(code_ref, "code_ref")
    xd = _as_dense_code(code_dis, "code_dis")
    if xr.shape != xd.shape:
        raise ValueError(f"codes must share ambient dimension, got {xr.size} and {xd.size}")
    if c <= 0.0:
        raise ValueError(f"c must be positive, got {c}")
    dot = abs(float(xr @ xd))
    return (dot + c) / (float(np.linalg.norm(xr)) * float(np.linalg.norm(xd)) + c)


def beta(code_ref, code_dis, c: float = 0.01) -> float:
    """Pointwise-difference agreement of two sparse codes, in [0, 1).

    1 - (||x_r - x_d|| + c) / (||x_r|| + ||x_d|| + c); sensitive to gain
    changes that alpha ignores. Two empty codes hit the lower bound 0.
    """
    xr = _as_dense_code(code_ref, "code_ref")
    xd = _as_dense_code(code_dis, "code_dis")
    if xr.shape != xd.shape:
        raise ValueError(f"codes must share ambient dimension, got {xr.size} and {xd.size}")
    if c <= 0.0:
        raise ValueError(f"c must be positive, got {c}")
    diff = float(np.linalg.norm(xr - xd))
    return 1.0 - (diff + c) / (float(np.linalg.norm(xr)) + float(np.linalg.norm(xd)) + c)


def patch_quality(patch_ref, patch_dis, dictionary: Dictionary,
                  params: SparqParams | None = None) -> float:
    """Similarity score alpha * beta of one patch pair coded over ``dictionary``."""
    params = params or SparqParams()
    xr = omp(dictionary, patch_ref, params.sparsity)
    xd = omp(dictionary, patch_dis, params.sparsity)
    return alpha(xr, xd, params.c) * beta(xr, xd, params.c)


def _pair_scores(ref_dense: np.ndarray, dis_dense: np.ndarray, c: float):
    dots = np.abs(np.einsum("mc,mc->c", ref_dense, dis_dense))
    norm_r = np.linalg.norm(ref_dense, axis=0)
    norm_d = np.linalg.norm(dis_dense, axis=0)
    diff = np.linalg.norm(ref_dense - dis_dense, axis=0)
    alphas = (dots + c) / (norm_r * norm_d + c)
    betas = 1.0 - (diff + c) / (norm_r + norm_d + c)
    degenerate = (norm_r == 0.0) & (norm_d == 0.0)
    return alphas * betas, degenerate


def _code_patches(dictionary: Dictionary, patches: np.ndarray, sparsity: int) -> np.ndarray:
    support, counts, coefs, _ = _batch_omp_arrays(dictionary.atoms, patches, sparsity)
    return dense_codes(support, counts, coefs, dictionary.n_atoms)


def _check_pipeline(ref: np.ndarray, dis: np.ndarray, dictionary: Dictionary,
                    params: SparqParams) -> None:
    check_same_shape(ref, dis)
    n = params.patch_side * params.patch_side
    if dictionary.signal_dim != n:
        raise ValueError(
            f"dictionary dimension {dictionary.signal_dim} does not match "
            f"patch_side {params.patch_side}"
        )
    if dictionary.patch_side is not None and dictionary.patch_side != params.patch_side:
        raise ValueError(
            f"dictionary was trained for patch_side {dictionary.patch_side}, "
            f"params request {params.patch_side}"
        )


def sparq_index(reference, distorted, dictionary: Dictionary,
                params: SparqParams | None = None) -> QualityResult:
    """Quality of ``distorted`` against ``reference`` over a learned dictionary.

    Both images are downsampled by the factor derived from the reference,
    the highest-entropy reference patches select the anchors, and every
    patch pair is sparse-coded against the dictionary (which must have been
    trained on the identically preprocessed reference).
    """
    params = params or SparqParams()
    ref = check_gray_image(reference, "reference")
    dis = check_gray_image(distorted, "distorted")
    _check_pipeline(ref, dis, dictionary, params)
    factor = downsample_factor(ref)
    ref_small = downsample(ref, factor)
    dis_small = downsample(dis, factor)
    emap = local_entropy_map(ref_small, params.patch_side)
    order = salient_rank_order(emap)
    q = salient_count(order.size, params.salient_fraction)
    chosen = np.sort(order[:q])
    anchors = np.column_stack(np.unravel_index(chosen, emap.shape)).astype(np.int64)
    ref_codes = _code_patches(dictionary, patches_at(ref_small, anchors, params.patch_side),
                              params.sparsity)
    dis_codes = _code_patches(dictionary, patches_at(dis_small, anchors, params.patch_side),
                              params.sparsity)
    scores, degenerate = _pair_scores(ref_codes, dis_codes, params.c)
    return QualityResult(
        sparq=math.fsum(scores) / q,
        patch_scores=scores,
        anchors=anchors,
        q=q,
        degenerate=degenerate,
    )


def sparq_score_profile(reference, distorted, dictionary: Dictionary,
                        params: SparqParams, max_fraction: float = 1.0):
    """Patch scores in decreasing-entropy order, for saliency-fraction sweeps.

    Returns ``(scores, n_anchors)`` where ``scores`` covers the
    ``max_fraction`` highest-entropy anchors; the index at any smaller
    fraction is the mean of the corresponding prefix, because smaller
    selections are nested inside larger ones.
    """
    ref = check_gray_image(reference, "reference")
    dis = check_gray_image(distorted, "distorted")
    _check_pipeline(ref, dis, dictionary, params)
    check_fraction(max_fraction, "max_fraction")
    factor = downsample_factor(ref)
    ref_small = downsample(ref, factor)
    dis_small = downsample(dis, factor)
    emap = local_entropy_map(ref_small, params.patch_side)
    order = salient_rank_order(emap)
    q_max = salient_count(order.size, max_fraction)
    ranked = order[:q_max]
    anchors = np.column_stack(np.unravel_index(ranked, emap.shape)).astype(np.int64)
    ref_codes = _code_patches(dictionary, patches_at(ref_small, anchors, params.patch_side),
                              params.sparsity)
    dis_codes = _code_patches(dictionary, patches_at(dis_small, anchors, params.patch_side),
                              params.sparsity)
    scores, _ = _pair_scores(ref_codes, dis_codes, params.c)
    return scores, order.size


def sparq_symmetric(reference, distorted, dictionary_ref: Dictionary,
                    dictionary_dis: Dictionary,
                    params: SparqParams | None = None) -> float:
    """Mean of the two directional indices, each using its own dictionary.

    Saliency is always selected from the first argument of the direction
    being evaluated.
    """
    forward = sparq_index(reference, distorted, dictionary_ref, params).sparq
    backward = sparq_index(distorted, reference, dictionary_dis, params).sparq
    return 0.5 * (forward + backward)


def psnr(reference, distorted) -> float:
    """Peak signal-to-noise ratio in dB for 8-bit images, capped at 100."""
    ref = check_gray_image(reference, "reference")
    dis = check_gray_image(distorted, "distorted")
    check_same_shape(ref, dis)
    diff = ref.astype(np.float64) - dis.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(255.0 * 255.0 / mse), PSNR_CAP_DB)


def train_reference_dictionary(reference, config: LearnConfig | None = None,
                               train_patches: int = 3000) -> Dictionary:
    """Preprocess a reference image and learn its patch dictionary.

    Applies grayscale conversion and viewing-condition downsampling, then
    trains on ``train_patches`` randomly sampled informative patches. The
    result feeds :func:`sparq_index` for any distorted image sharing the
    reference's original dimensions.
    """
    config = config or LearnConfig()
    gray = to_grayscale(np.asarray(reference))
    small = downsample(gray, downsample_factor(gray))
    patches = extract_training_patches(small, config.patch_side, train_patches, config.seed)
    dictionary, _ = learn(patches, config)
    return dictionary


class SparqIndex(BaseEstimator):
    """Quality-index estimator: fit on a reference, score distorted images.

    ``fit`` preprocesses the reference, learns its dictionary, selects the
    salient anchors, and caches the reference patch codes so that scoring a
    distorted image only codes the distorted patches.

    Parameters mirror :class:`LearnConfig` and :class:`SparqParams`;
    ``train_patches`` is the number of patches sampled for dictionary
    training.
    """

    def __init__(self, patch_side=11, n_atoms=242, sparsity=12, train_patches=3000,
                 n_iterations=30, min_improvement=1e-4, c=0.01,
                 salient_fraction=0.15, random_state=0):
        self.patch_side = patch_side
        self.n_atoms = n_atoms
        self.sparsity = sparsity
        self.train_patches = train_patches
        self.n_iterations = n_iterations
        self.min_improvement = min_improvement
        self.c = c
        self.salient_fraction = salient_fraction
        self.random_state = random_state

    def _params(self) -> SparqParams:
        return SparqParams(
            c=self.c,
            sparsity=self.sparsity,
            salient_fraction=self.salient_fraction,
            patch_side=self.patch_side,
        )

    def fit(self, reference, y=None):
        params = self._params()
        config = LearnConfig(
            n_atoms=self.n_atoms,
            sparsity=self.sparsity,
            iterations=self.n_iterations,
            seed=self.random_state,
            patch_side=self.patch_side,
            min_improvement=self.min_improvement,
        )
        gray = to_grayscale(np.asarray(reference))
        factor = downsample_factor(gray)
        small = downsample(gray, factor)
        patches = extract_training_patches(
            small, config.patch_side, self.train_patches, config.seed
        )
        dictionary, report = learn(patches, config)
        emap = local_entropy_map(small, params.patch_side)
        order = salient_rank_order(emap)
        q = salient_count(order.size, params.salient_fraction)
        chosen = np.sort(order[:q])
        anchors = np.column_stack(np.unravel_index(chosen, emap.shape)).astype(np.int64)
        self.dictionary_ = dictionary
        self.training_report_ = report
        self.factor_ = factor
        self.anchors_ = anchors
        self.reference_shape_ = gray.shape
        self._reference_codes = _code_patches(
            dictionary, patches_at(small, anchors, params.patch_side), params.sparsity
        )
        return self

    def assess(self, distorted) -> QualityResult:
        check_is_fitted(self, "dictionary_")
        params = self._params()
        dis = to_grayscale(np.asarray(distorted))
        if dis.shape != self.reference_shape_:
            raise ValueError(
                f"distorted image shape {dis.shape} does not match the "
                f"reference {self.reference_shape_}"
            )
        dis_small = downsample(dis, self.factor_)
        dis_codes = _code_patches(
            self.dictionary_,
            patches_at(dis_small, self.anchors_, params.patch_side),
            params.sparsity,
        )
        scores, degenerate = _pair_scores(self._reference_codes, dis_codes, params.c)
        q = self.anchors_.shape[0]
        return QualityResult(
            sparq=math.fsum(scores) / q,
            patch_scores=scores,
            anchors=self.anchors_,
            q=q,
            degenerate=degenerate,
        )

    def score(self, distorted) -> float:
        return self.assess(distorted).sparq
