"""Image preprocessing, local entropy, and patch extraction.

Images are plain 2-D uint8 numpy arrays. Patch anchors are (row, col)
coordinates of the top-left corner of a fully interior window; an image of
shape (R, C) therefore has (R - side + 1) * (C - side + 1) valid anchors
for windows of a given side length.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ._validation import check_fraction, check_gray_image, check_patch_side, check_same_shape

# BT.601 luma weights for RGB-to-grayscale conversion.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Patches whose intensity variance falls below this are treated as
# structureless and discarded from dictionary training sets.
HOMOGENEITY_VARIANCE = 1.0


def _round_half_up(values: np.ndarray) -> np.ndarray:
    # Half-away-from-zero rounding; inputs here are always non-negative.
    return np.floor(values + 0.5)


def to_grayscale(image) -> np.ndarray:
    """Convert an 8-bit RGB image to grayscale via BT.601 luma weights.

    A 2-D image passes through unchanged. Raises ``ValueError`` for any
    channel layout other than single-channel or RGB.
    """
    arr = np.asarray(image)
    if arr.ndim == 2:
        return check_gray_image(arr)
    if arr.ndim == 3 and arr.shape[2] == 3:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"expected 8-bit channels, got dtype {arr.dtype}")
        if arr.size == 0:
            raise ValueError("image is empty")
        if int(arr.min()) < 0 or int(arr.max()) > 255:
            raise ValueError("channel values must lie in [0, 255]")
        planes = arr.astype(np.float64)
        luma = (
            planes[:, :, 0] * LUMA_WEIGHTS[0]
            + planes[:, :, 1] * LUMA_WEIGHTS[1]
            + planes[:, :, 2] * LUMA_WEIGHTS[2]
        )
        return np.clip(_round_half_up(luma), 0, 255).astype(np.uint8)
    raise ValueError(f"unsupported channel count for shape {arr.shape}")


def downsample_factor(image) -> int:
    """Viewing-condition downsampling factor: max(1, round(g / 256)).

    ``g`` is the smaller image dimension; rounding is half away from zero.
    """
    img = check_gray_image(image)
    g = min(img.shape)
    return max(1, int(_round_half_up(np.float64(g) / 256.0)))


def downsample(image, factor) -> np.ndarray:
    """Downsample by averaging disjoint ``factor`` x ``factor`` blocks.

    Trailing rows/columns that do not fill a block are dropped; block means
    are rounded half away from zero. ``factor=1`` returns the image as is.
    """
    img = check_gray_image(image)
    f = int(factor)
    if f < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if f == 1:
        return img.copy()
    rows, cols = img.shape
    if f > rows or f > cols:
        raise ValueError(f"factor {f} exceeds image dimensions {img.shape}")
    out_rows, out_cols = rows // f, cols // f
    blocks = img[: out_rows * f, : out_cols * f].astype(np.float64)
    means = blocks.reshape(out_rows, f, out_cols, f).mean(axis=(1, 3))
    return _round_half_up(means).astype(np.uint8)


def _window_sums(values: np.ndarray, side: int) -> np.ndarray:
    """Sum of every fully interior side x side window, via integral image."""
    rows, cols = values.shape
    ii = np.zeros((rows + 1, cols + 1), dtype=values.dtype)
    ii[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    return (
        ii[side:, side:]
        - ii[:-side, side:]
        - ii[side:, :-side]
        + ii[:-side, :-side]
    )


def local_entropy_map(image, patch_side) -> np.ndarray:
    """Shannon entropy (bits) of every fully interior patch window.

    Each value is the entropy of the intensity histogram of one
    ``patch_side`` x ``patch_side`` window; empty histogram bins contribute
    zero. Output shape is (rows - side + 1, cols - side + 1).
    """
    img = check_gray_image(image)
    side = check_patch_side(patch_side, img.shape)
    n = side * side
    # f * log2(f) lookup so equal counts map to bit-identical terms.
    flog = np.zeros(n + 1)
    counts = np.arange(1, n + 1, dtype=np.float64)
    flog[1:] = counts * np.log2(counts)
    acc = np.zeros((img.shape[0] - side + 1, img.shape[1] - side + 1))
    for value in np.unique(img):
        freq = _window_sums((img == value).astype(np.int64), side)
        acc += flog[freq]
    return np.log2(n) - acc / n


@dataclass(frozen=True)
class PatchSet:
    """Vectorized image patches with their source coordinates.

    ``data`` holds one column per patch: the column-major flattening of the
    window anchored at the matching row of ``anchors``. The same
    vectorization convention must be used consistently between training
    and scoring.
    """

    data: np.ndarray
    anchors: np.ndarray
    patch_side: int

    def __post_init__(self):
        n, count = self.data.shape
        if n != self.patch_side * self.patch_side:
            raise ValueError(f"patch vectors of length {n} do not match side {self.patch_side}")
        if self.anchors.shape != (count, 2):
            raise ValueError(f"expected {count} anchors, got shape {self.anchors.shape}")

    @property
    def count(self) -> int:
        return self.data.shape[1]

    @property
    def patch_dim(self) -> int:
        return self.data.shape[0]


def patches_at(image, anchors, patch_side) -> np.ndarray:
    """Extract the windows anchored at ``anchors`` as columns of a matrix.

    Returns an (side*side, len(anchors)) float64 matrix whose columns are
    column-major vectorizations of the windows.
    """
    img = check_gray_image(image)
    side = check_patch_side(patch_side, img.shape)
    pts = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
    if pts.size:
        max_r = img.shape[0] - side
        max_c = img.shape[1] - side
        if pts.min() < 0 or pts[:, 0].max() > max_r or pts[:, 1].max() > max_c:
            raise ValueError("anchor places a window outside the image bounds")
    windows = np.lib.stride_tricks.sliding_window_view(img, (side, side))
    sel = windows[pts[:, 0], pts[:, 1]]
    return sel.transpose(0, 2, 1).reshape(pts.shape[0], side * side).T.astype(np.float64)


def extract_training_patches(image, patch_side, count, seed=0) -> PatchSet:
    """Sample informative patches uniformly at random without replacement.

    Anchors are drawn from all valid positions; patches with intensity
    variance below ``HOMOGENEITY_VARIANCE`` are discarded and sampling
    continues until ``count`` survivors are found or every position has
    been tried. If fewer than ``count`` informative patches exist, all of
    them are returned and a warning is issued. Deterministic for a fixed
    seed.
    """
    img = check_gray_image(image)
    side = check_patch_side(patch_side, img.shape)
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    n = side * side
    values = img.astype(np.int64)
    s1 = _window_sums(values, side)
    s2 = _window_sums(values * values, side)
    mean = s1 / n
    variance = s2 / n - mean * mean
    flat = variance.ravel()
    rng = np.random.default_rng(seed)
    order = rng.permutation(flat.size)
    keep = order[flat[order] >= HOMOGENEITY_VARIANCE][:count]
    if keep.size < count:
        warnings.warn(
            f"only {keep.size} informative patches available, requested {count}",
            stacklevel=2,
        )
    anchors = np.column_stack(np.unravel_index(keep, variance.shape)).astype(np.int64)
    return PatchSet(patches_at(img, anchors, side), anchors, side)


def salient_rank_order(entropy_map) -> np.ndarray:
    """Flat anchor indices sorted by decreasing entropy.

    Ties are broken by row-major anchor order, so the ranking is total and
    deterministic.
    """
    emap = np.asarray(entropy_map, dtype=np.float64)
    return np.argsort(-emap.ravel(), kind="stable")


def salient_count(n_anchors: int, fraction: float) -> int:
    """Number of salient patches for a selection fraction (at least 1)."""
    return max(1, int(_round_half_up(np.float64(fraction) * n_anchors)))


def select_salient_patches(reference, distorted, patch_side, fraction=0.15):
    """Select the highest-entropy patches of ``reference`` and pair them.

    The entropy map is computed on the reference only; the distorted image
    contributes patches at the same anchors. Returns two :class:`PatchSet`
    objects with identical anchors, listed in row-major order.
    """
    ref = check_gray_image(reference, "reference")
    dis = check_gray_image(distorted, "distorted")
    check_same_shape(ref, dis)
    side = check_patch_side(patch_side, ref.shape)
    frac = check_fraction(fraction)
    emap = local_entropy_map(ref, side)
    order = salient_rank_order(emap)
    q = salient_count(order.size, frac)
    chosen = np.sort(order[:q])
    anchors = np.column_stack(np.unravel_index(chosen, emap.shape)).astype(np.int64)
    ref_set = PatchSet(patches_at(ref, anchors, side), anchors, side)
    dis_set = PatchSet(patches_at(dis, anchors, side), anchors.copy(), side)
    return ref_set, dis_set


def load_image(path) -> np.ndarray:
    """Read an 8-bit image file (PNG, BMP, PGM/PPM) as a grayscale array.

    Color inputs are converted with :func:`to_grayscale`; palette and
    alpha-carrying images are normalized to RGB first.
    """
    with Image.open(path) as handle:
        if handle.mode not in ("L", "RGB"):
            handle = handle.convert("RGB")
        arr = np.asarray(handle)
    if arr.ndim == 2:
        return check_gray_image(arr)
    return to_grayscale(arr)


def save_entropy_pgm(entropy_map, path) -> None:
    """Dump an entropy map as a binary PGM, scaled from [0, 8] to [0, 255]."""
    emap = np.asarray(entropy_map, dtype=np.float64)
    if emap.ndim != 2:
        raise ValueError(f"entropy map must be 2-D, got shape {emap.shape}")
    scaled = np.clip(_round_half_up(emap * (255.0 / 8.0)), 0, 255).astype(np.uint8)
    header = f"P5\n{scaled.shape[1]} {scaled.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + scaled.tobytes())
