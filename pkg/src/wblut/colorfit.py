"""Degree-2 polynomial color mappings and hard-positive synthesis.

A color correction is a 3x11 float64 matrix M acting on the polynomial
expansion of each pixel: out = M phi(r, g, b). These mappings transfer an
illuminant cast from one photo onto another: fit the mapping that takes a
scene's ground truth to its miscast rendition, then apply it to a
different scene's ground truth. The result shows new content under the
same cast, which is exactly the confusable "positive" sample contrastive
training needs.
"""

from __future__ import annotations

import numpy as np

from .image import ColorSpace, ColorSpaceError, ImageBuffer

__all__ = [
    "poly_features",
    "fit_color_correction",
    "apply_color_correction",
    "make_hard_positive",
]

N_FEATURES = 11


def poly_features(rgb: np.ndarray) -> np.ndarray:
    """(..., 3) pixels -> (..., 11) expansion.

    Feature order: r, g, b, rg, rb, gb, r^2, b^2, g^2, rgb, 1.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ValueError(f"pixels must have 3 components, got shape {rgb.shape}")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    return np.stack(
        [r, g, b, r * g, r * b, g * b, r * r, b * b, g * g, r * g * b, np.ones_like(r)],
        axis=-1,
    )


def fit_color_correction(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Least-squares 3x11 mapping with phi(source) ~ target.

    Solved per output channel via SVD, which returns the minimum-norm
    coefficients when the expansion is rank deficient (flat or
    near-constant sources). No clamping happens here; fitting on raw
    values keeps casts that push channels past 1 recoverable.
    """
    source = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if source.shape != target.shape:
        raise ValueError(
            f"source and target pixel counts differ: {source.shape} vs {target.shape}"
        )
    coef, _, _, _ = np.linalg.lstsq(poly_features(source), target, rcond=None)
    return coef.T  # (3, 11)


def apply_color_correction(matrix: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Applies a fitted mapping; output is clamped to [0, 1]."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, N_FEATURES):
        raise ValueError(f"correction matrix must be 3x{N_FEATURES}, got {matrix.shape}")
    out = poly_features(pixels) @ matrix.T
    return np.clip(out, 0.0, 1.0)


def make_hard_positive(
    anchor: ImageBuffer, anchor_gt: ImageBuffer, donor_gt: ImageBuffer
) -> ImageBuffer:
    """Re-renders donor_gt under the anchor's color cast.

    The mapping is fitted from the anchor's ground truth onto the anchor
    itself (gt -> cast direction) and then applied to the ground truth of
    a different scene, so the output shares the anchor's illuminant but
    none of its content.
    """
    for img in (anchor, anchor_gt, donor_gt):
        if img.space is not ColorSpace.SRGB:
            raise ColorSpaceError("hard positives are synthesized in sRGB")
    if anchor.data.shape != anchor_gt.data.shape:
        raise ValueError("anchor and its ground truth must have identical shape")
    matrix = fit_color_correction(anchor_gt.data, anchor.data)
    return ImageBuffer(apply_color_correction(matrix, donor_gt.data), ColorSpace.SRGB)
