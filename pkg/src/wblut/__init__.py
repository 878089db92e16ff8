"""Adaptive white-balance correction with learned 3D lookup tables.

A small encoder CNN looks at a miscast photo, predicts blending weights for
a bank of basis LUTs, and the fused LUT is applied to the full-resolution
image with trilinear interpolation. Training uses a contrastive triplet
term with synthesized hard positives on top of the usual reconstruction
loss. Everything runs on numpy; a compiled kernel accelerates the LUT
apply when available (see ``wblut.kernels.backend_name``).
"""

__version__ = "0.1.0"

import os as _os

# honor the thread cap before anything pulls in numpy/BLAS; setdefault so
# explicitly exported BLAS variables still win
_cap = _os.environ.get("WBLUT_THREADS", "")
if _cap.isdigit() and int(_cap) > 0:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        _os.environ.setdefault(_var, _cap)
del _os, _cap

from .image import (
    ColorSpace,
    ColorSpaceError,
    CorruptImageError,
    ImageBuffer,
    ImageError,
    UnsupportedImageError,
    load_image,
    save_image,
    srgb_to_lab,
    lab_to_srgb,
    resize_bilinear,
    crop_and_flip,
)

__all__ = [
    "__version__",
    "ColorSpace",
    "ColorSpaceError",
    "CorruptImageError",
    "ImageBuffer",
    "ImageError",
    "UnsupportedImageError",
    "load_image",
    "save_image",
    "srgb_to_lab",
    "lab_to_srgb",
    "resize_bilinear",
    "crop_and_flip",
]
