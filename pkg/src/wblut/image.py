"""Pixel containers, color-space conversion, resampling and image file I/O.

All pixel data is float64 in [0, 1]. Two color spaces are supported:

* ``ColorSpace.SRGB`` -- gamma-encoded sRGB, 8-bit codes decoded as v/255.
* ``ColorSpace.LAB``  -- CIE 1976 L*a*b* under D65, affinely packed into
  [0, 1] as (L/100, (a+128)/255, (b+128)/255) so LAB images can feed the
  same unit-cube LUT machinery as sRGB ones.
"""

from __future__ import annotations

import enum
import os
import struct
import zlib

import numpy as np
from PIL import Image

__all__ = [
    "ColorSpace",
    "ImageBuffer",
    "ImageError",
    "UnsupportedImageError",
    "CorruptImageError",
    "ColorSpaceError",
    "load_image",
    "save_image",
    "srgb_to_lab",
    "lab_to_srgb",
    "srgb_to_lab_values",
    "lab_values_to_srgb",
    "resize_bilinear",
    "crop_and_flip",
]


class ImageError(Exception):
    """Base class for image I/O failures."""


class UnsupportedImageError(ImageError):
    """File exists but is not an 8-bit RGB PNG or binary PPM."""


class CorruptImageError(ImageError):
    """File claims a supported format but its contents are broken."""


class ColorSpaceError(ValueError):
    """Operation received an image in the wrong color space."""


class ColorSpace(enum.Enum):
    SRGB = "srgb"
    LAB = "lab"


class ImageBuffer:
    """An H x W x 3 float64 raster tagged with its color space.

    Instances are treated as immutable; operations return new buffers.
    Component values are nominally in [0, 1] (LUT outputs may transiently
    leave that range before the final clamp back to sRGB).
    """

    __slots__ = ("data", "space")

    def __init__(self, data: np.ndarray, space: ColorSpace):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image data must be HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not isinstance(space, ColorSpace):
            raise TypeError("space must be a ColorSpace")
        self.data = np.ascontiguousarray(arr)
        self.space = space

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def pixels(self) -> np.ndarray:
        """Flat (H*W, 3) view of the data."""
        return self.data.reshape(-1, 3)

    def __repr__(self) -> str:
        return f"ImageBuffer({self.height}x{self.width}, {self.space.value})"


def _require_space(img: ImageBuffer, space: ColorSpace, op: str) -> None:
    if img.space is not space:
        raise ColorSpaceError(f"{op} requires a {space.value} image, got {img.space.value}")


# ---------------------------------------------------------------------------
# File I/O: 8-bit RGB PNG and binary PPM (P6)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _read_ppm(raw: bytes) -> np.ndarray:
    # P6 header: magic, width, height, maxval, separated by whitespace;
    # '#' comments allowed anywhere in the header.
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            c = raw[pos : pos + 1]
            if c == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptImageError("truncated PPM header")
        return raw[start:pos]

    if next_token() != b"P6":
        raise UnsupportedImageError("not a binary (P6) PPM")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except (ValueError, CorruptImageError) as exc:
        raise CorruptImageError(f"bad PPM header: {exc}") from exc
    if width < 1 or height < 1:
        raise CorruptImageError("non-positive PPM dimensions")
    if maxval != 255:
        raise UnsupportedImageError(f"only 8-bit PPM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    body = raw[pos : pos + need]
    if len(body) < need:
        raise CorruptImageError(f"PPM pixel data truncated ({len(body)} of {need} bytes)")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)


def _read_png(path: str) -> np.ndarray:
    # the caller already matched the PNG magic, so identification or
    # decode failures here mean a damaged file, not a foreign format
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise UnsupportedImageError(f"only 8-bit RGB PNG supported, mode={im.mode!r}")
            return np.asarray(im, dtype=np.uint8)
    except UnsupportedImageError:
        raise
    except (OSError, SyntaxError, ValueError, zlib.error, struct.error) as exc:
        raise CorruptImageError(f"broken PNG: {exc}") from exc


def load_image(path: str | os.PathLike) -> ImageBuffer:
    """Loads an 8-bit RGB PNG or binary PPM as a normalized sRGB buffer.

    8-bit codes map to [0, 1] by v/255, so 255 decodes exactly to 1.0.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head.startswith(_PNG_MAGIC):
            codes = _read_png(path)
        elif head.startswith(b"P6"):
            codes = _read_ppm(head + fh.read())
        else:
            raise UnsupportedImageError(f"{path}: neither PNG nor binary PPM")
    return ImageBuffer(codes.astype(np.float64) / 255.0, ColorSpace.SRGB)


def save_image(img: ImageBuffer, path: str | os.PathLike) -> None:
    """Writes an sRGB buffer as 8-bit PNG or PPM, chosen by file extension.

    Values are quantized round-half-up to the nearest 8-bit code and clamped.
    """
    _require_space(img, ColorSpace.SRGB, "save_image")
    path = os.fspath(path)
    codes = np.floor(img.data * 255.0 + 0.5)  # round half up, per-channel
    codes = np.clip(codes, 0, 255).astype(np.uint8)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        Image.fromarray(codes, mode="RGB").save(path, format="PNG")
    elif ext in (".ppm", ".pnm"):
        header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(codes.tobytes())
    else:
        raise UnsupportedImageError(f"cannot infer output format from {path!r} (use .png or .ppm)")


# ---------------------------------------------------------------------------
# sRGB <-> CIELAB (D65, 2-degree observer)

# IEC 61966-2-1 sRGB primaries; the white point is taken as the exact row
# sums so that (1,1,1) maps to L*=100, a*=b*=0 with no rounding residue.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0
_DELTA3 = _DELTA**3
_F_SLOPE = 1.0 / (3.0 * _DELTA**2)


def _srgb_decode(v: np.ndarray) -> np.ndarray:
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def _srgb_encode(v: np.ndarray) -> np.ndarray:
    # negative linear values (out of gamut) are clamped before the power
    safe = np.maximum(v, 0.0)
    return np.where(safe <= 0.0031308, safe * 12.92, 1.055 * safe ** (1.0 / 2.4) - 0.055)


def srgb_to_lab_values(rgb: np.ndarray) -> np.ndarray:
    """(..., 3) sRGB in [0,1] -> actual CIELAB values (L in [0,100])."""
    rgb = np.asarray(rgb, dtype=np.float64)
    linear = _srgb_decode(rgb)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    f = np.where(t > _DELTA3, np.cbrt(t), _F_SLOPE * t + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_values_to_srgb(lab: np.ndarray) -> np.ndarray:
    """Actual CIELAB values -> sRGB in [0,1], out-of-gamut clamped."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    t = np.where(f > _DELTA, f**3, (f - 4.0 / 29.0) / _F_SLOPE)
    xyz = t * _WHITE
    linear = xyz @ _XYZ_TO_RGB.T
    return np.clip(_srgb_encode(linear), 0.0, 1.0)


def _pack_lab(lab: np.ndarray) -> np.ndarray:
    out = np.empty_like(lab)
    out[..., 0] = lab[..., 0] / 100.0
    out[..., 1] = (lab[..., 1] + 128.0) / 255.0
    out[..., 2] = (lab[..., 2] + 128.0) / 255.0
    return out


def _unpack_lab(packed: np.ndarray) -> np.ndarray:
    out = np.empty_like(packed)
    out[..., 0] = packed[..., 0] * 100.0
    out[..., 1] = packed[..., 1] * 255.0 - 128.0
    out[..., 2] = packed[..., 2] * 255.0 - 128.0
    return out


def srgb_to_lab(img: ImageBuffer) -> ImageBuffer:
    """sRGB -> normalized LAB ((L/100, (a+128)/255, (b+128)/255))."""
    _require_space(img, ColorSpace.SRGB, "srgb_to_lab")
    return ImageBuffer(_pack_lab(srgb_to_lab_values(img.data)), ColorSpace.LAB)


def lab_to_srgb(img: ImageBuffer) -> ImageBuffer:
    """Normalized LAB -> sRGB; out-of-gamut values clamp to [0, 1]."""
    _require_space(img, ColorSpace.LAB, "lab_to_srgb")
    return ImageBuffer(lab_values_to_srgb(_unpack_lab(img.data)), ColorSpace.SRGB)


def convert_space(img: ImageBuffer, space: ColorSpace) -> ImageBuffer:
    """Converts to the requested space (identity if already there)."""
    if img.space is space:
        return img
    if space is ColorSpace.LAB:
        return srgb_to_lab(img)
    return lab_to_srgb(img)


# ---------------------------------------------------------------------------
# Geometry

def _resample_axis_coords(out_n: int, in_n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel-center convention with edge clamping
    src = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i0c = np.clip(i0, 0, in_n - 1)
    i1c = np.clip(i0 + 1, 0, in_n - 1)
    return i0c, i1c, frac


def resize_bilinear(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Bilinear resampling to out_w x out_h; color space unchanged."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    if out_w == img.width and out_h == img.height:
        return ImageBuffer(img.data.copy(), img.space)
    x0, x1, fx = _resample_axis_coords(out_w, img.width)
    y0, y1, fy = _resample_axis_coords(out_h, img.height)
    d = img.data
    top = d[y0][:, x0] * (1.0 - fx)[None, :, None] + d[y0][:, x1] * fx[None, :, None]
    bot = d[y1][:, x0] * (1.0 - fx)[None, :, None] + d[y1][:, x1] * fx[None, :, None]
    out = top * (1.0 - fy)[:, None, None] + bot * fy[:, None, None]
    return ImageBuffer(out, img.space)


def resize_array_bilinear(data: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Array-level counterpart of :func:`resize_bilinear` for internal use."""
    return resize_bilinear(ImageBuffer(data, ColorSpace.SRGB), out_w, out_h).data


def crop_and_flip(
    img: ImageBuffer, x0: int, y0: int, size: int, hflip: bool = False, vflip: bool = False
) -> ImageBuffer:
    """Extracts a size x size patch, optionally mirrored."""
    if size < 1:
        raise ValueError("patch size must be >= 1")
    if x0 < 0 or y0 < 0 or x0 + size > img.width or y0 + size > img.height:
        raise ValueError(
            f"crop window {size}x{size}@({x0},{y0}) outside {img.width}x{img.height} image"
        )
    patch = img.data[y0 : y0 + size, x0 : x0 + size]
    if hflip:
        patch = patch[:, ::-1]
    if vflip:
        patch = patch[::-1, :]
    return ImageBuffer(patch.copy(), img.space)
