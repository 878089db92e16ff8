"""3D lookup-table lattice: construction, fusion, application, .cube I/O.

A LUT is an m x m x m x 3 float64 grid over the unit color cube, indexed
``values[r_idx, g_idx, b_idx, channel]``. Lattice coordinate i along an
axis corresponds to input component i/(m-1). Application is trilinear
interpolation of the 8 cell corners (delegated to ``wblut.kernels``).
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from . import kernels
from .image import ColorSpace, ColorSpaceError, ImageBuffer

__all__ = [
    "Lut3D",
    "CubeFormatError",
    "identity_lut",
    "identity_values",
    "fuse_values",
    "fuse_luts",
    "apply_values",
    "apply_lut",
    "read_cube",
    "write_cube",
]


class CubeFormatError(Exception):
    """A .cube file violates the subset of the format we support."""


def _check_values(values: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"LUT values must be (m,m,m,3), got {arr.shape}")
    m = arr.shape[0]
    if arr.shape[1] != m or arr.shape[2] != m:
        raise ValueError(f"LUT lattice must be cubic, got {arr.shape[:3]}")
    if m < 2:
        raise ValueError("LUT needs at least 2 lattice points per axis")
    return arr


class Lut3D:
    """An (m,m,m,3) lattice tagged with the color space it operates in."""

    __slots__ = ("values", "space")

    def __init__(self, values: np.ndarray, space: ColorSpace):
        self.values = _check_values(values)
        if not isinstance(space, ColorSpace):
            raise TypeError("space must be a ColorSpace")
        self.space = space

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def __repr__(self) -> str:
        return f"Lut3D(m={self.size}, {self.space.value})"


def identity_values(m: int) -> np.ndarray:
    """Lattice that maps every input to itself: value at (i,j,k) is
    (i, j, k) / (m-1)."""
    if m < 2:
        raise ValueError("LUT needs at least 2 lattice points per axis")
    axis = np.linspace(0.0, 1.0, m)
    values = np.empty((m, m, m, 3), dtype=np.float64)
    values[..., 0] = axis[:, None, None]
    values[..., 1] = axis[None, :, None]
    values[..., 2] = axis[None, None, :]
    return values


def identity_lut(m: int, space: ColorSpace = ColorSpace.SRGB) -> Lut3D:
    return Lut3D(identity_values(m), space)


def fuse_values(basis: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted sum of basis lattices, realized as one matmul.

    basis is (N, m, m, m, 3); weights is (N,) for a single fused LUT or
    (B, N) for a batch. Returns (m,m,m,3) or (B, m,m,m,3) respectively.
    """
    basis = np.asarray(basis, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if basis.ndim != 5 or basis.shape[4] != 3:
        raise ValueError(f"basis must be (N,m,m,m,3), got {basis.shape}")
    n = basis.shape[0]
    if weights.shape[-1] != n:
        raise ValueError(f"weights last dim {weights.shape[-1]} != basis count {n}")
    flat = weights @ basis.reshape(n, -1)
    return flat.reshape(weights.shape[:-1] + basis.shape[1:])


def fuse_luts(basis: Sequence[Lut3D], weights: np.ndarray) -> Lut3D:
    """Fuses a bank of same-shape, same-space LUTs with (N,) weights."""
    if not basis:
        raise ValueError("need at least one basis LUT")
    space = basis[0].space
    m = basis[0].size
    for lut in basis[1:]:
        if lut.space is not space:
            raise ColorSpaceError("basis LUTs must share a color space")
        if lut.size != m:
            raise ValueError("basis LUTs must share a lattice size")
    stack = np.stack([lut.values for lut in basis])
    return Lut3D(fuse_values(stack, np.asarray(weights, dtype=np.float64)), space)


def apply_values(values: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Applies an (m,m,m,3) lattice to (..., 3) pixels, trilinearly."""
    values = _check_values(values)
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape[-1] != 3:
        raise ValueError(f"pixels must have 3 components, got shape {pixels.shape}")
    flat = np.ascontiguousarray(pixels.reshape(-1, 3))
    out = np.asarray(kernels.trilerp_apply(values, flat))
    return out.reshape(pixels.shape)


def apply_lut(lut: Lut3D, img: ImageBuffer) -> ImageBuffer:
    """Applies the LUT to an image in the same color space.

    Inputs are clamped to [0,1] for the lattice lookup; outputs are
    whatever the lattice stores and may leave [0,1].
    """
    if img.space is not lut.space:
        raise ColorSpaceError(
            f"LUT is {lut.space.value} but image is {img.space.value}"
        )
    return ImageBuffer(apply_values(lut.values, img.data), img.space)


# ---------------------------------------------------------------------------
# .cube files (Adobe/Resolve interchange subset: 3D, unit domain, LF lines)

_SPACE_COMMENT = "# color-space:"


def write_cube(lut: Lut3D, path: str | os.PathLike, title: str | None = None) -> None:
    """Writes the LUT with red varying fastest, 6 decimals per component."""
    path = os.fspath(path)
    lines = [f"{_SPACE_COMMENT} {lut.space.value}"]
    if title is not None:
        lines.append(f'TITLE "{title}"')
    lines.append(f"LUT_3D_SIZE {lut.size}")
    lines.append("DOMAIN_MIN 0.0 0.0 0.0")
    lines.append("DOMAIN_MAX 1.0 1.0 1.0")
    # storage is [r,g,b,ch]; cube rows scan r fastest, b slowest
    rows = lut.values.transpose(2, 1, 0, 3).reshape(-1, 3)
    lines.extend(f"{r:.6f} {g:.6f} {b:.6f}" for r, g, b in rows)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_domain(parts: list[str], want: float, line_no: int) -> None:
    if len(parts) != 3:
        raise CubeFormatError(f"line {line_no}: domain needs 3 values")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise CubeFormatError(f"line {line_no}: bad domain value") from exc
    if vals != [want, want, want]:
        raise CubeFormatError(
            f"line {line_no}: only the unit domain is supported, got {vals}"
        )


def read_cube(path: str | os.PathLike, space: ColorSpace | None = None) -> Lut3D:
    """Parses a 3D .cube file written over the unit domain.

    The color space is taken from the comment :func:`write_cube` leaves,
    unless overridden; plain third-party files default to sRGB.
    """
    path = os.fspath(path)
    m = 0
    data: list[list[float]] = []
    file_space = ColorSpace.SRGB
    with open(path, "r") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith(_SPACE_COMMENT):
                    tag = line[len(_SPACE_COMMENT) :].strip()
                    try:
                        file_space = ColorSpace(tag)
                    except ValueError as exc:
                        raise CubeFormatError(
                            f"line {line_no}: unknown color space {tag!r}"
                        ) from exc
                continue
            parts = line.split()
            key = parts[0].upper()
            if key == "TITLE":
                continue
            if key == "LUT_3D_SIZE":
                if m:
                    raise CubeFormatError(f"line {line_no}: duplicate LUT_3D_SIZE")
                try:
                    m = int(parts[1])
                except (IndexError, ValueError) as exc:
                    raise CubeFormatError(f"line {line_no}: bad LUT_3D_SIZE") from exc
                if m < 2:
                    raise CubeFormatError(f"line {line_no}: LUT_3D_SIZE must be >= 2")
                continue
            if key == "DOMAIN_MIN":
                _parse_domain(parts[1:], 0.0, line_no)
                continue
            if key == "DOMAIN_MAX":
                _parse_domain(parts[1:], 1.0, line_no)
                continue
            if key in ("LUT_1D_SIZE", "LUT_3D_INPUT_RANGE", "LUT_1D_INPUT_RANGE"):
                raise CubeFormatError(f"line {line_no}: {key} is not supported")
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                raise CubeFormatError(f"line {line_no}: unrecognized line {line!r}") from exc
            if len(row) != 3:
                raise CubeFormatError(f"line {line_no}: expected 3 components, got {len(row)}")
            if not m:
                raise CubeFormatError(f"line {line_no}: data before LUT_3D_SIZE")
            data.append(row)
    if not m:
        raise CubeFormatError("missing LUT_3D_SIZE")
    if len(data) != m**3:
        raise CubeFormatError(f"expected {m**3} data rows, got {len(data)}")
    arr = np.array(data, dtype=np.float64).reshape(m, m, m, 3)  # (b,g,r,ch) scan order
    values = arr.transpose(2, 1, 0, 3)
    return Lut3D(values, space if space is not None else file_space)
