"""Pure-numpy trilinear LUT kernels (fallback backend).

Same contract as the compiled extension. Pixels are clamped to the unit
cube, mapped onto an m^3 lattice, and each output channel is the
trilinear blend of the 8 surrounding lattice values. The blend is written
as a sum of nonnegative corner weights (products of f / 1-f factors), so
a pixel sitting exactly on a lattice vertex reproduces that vertex value
bit-for-bit.
"""

from __future__ import annotations

import numpy as np

name = "python"

_CORNERS = [(dr, dg, db) for dr in (0, 1) for dg in (0, 1) for db in (0, 1)]


def _lattice(pixels: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.clip(pixels, 0.0, 1.0)
    x = p * (m - 1)
    # floor, pulled back so x == m-1 lands in the top cell with f == 1
    i0 = np.minimum(x.astype(np.int64), m - 2)
    return i0, x - i0


def trilerp_apply(lut: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """(m,m,m,3) lattice applied to (n,3) pixels -> (n,3)."""
    m = lut.shape[0]
    i0, f = _lattice(pixels, m)
    w = (1.0 - f, f)  # w[d][:, axis]
    out = np.zeros(pixels.shape, dtype=np.float64)
    for dr, dg, db in _CORNERS:
        cw = w[dr][:, 0] * w[dg][:, 1] * w[db][:, 2]
        out += cw[:, None] * lut[i0[:, 0] + dr, i0[:, 1] + dg, i0[:, 2] + db]
    return out


def trilerp_backward(
    lut: np.ndarray, pixels: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of trilerp_apply w.r.t. the lattice and the pixels.

    On interior cell boundaries the Jacobian w.r.t. pixels uses the lower
    cell (left-sided derivative); pixels clamped from outside [0,1] get
    zero pixel-gradient. The lattice gradient is a scatter-add of the
    corner weights times grad_out.
    """
    m = lut.shape[0]
    i0, f = _lattice(pixels, m)
    on_plane = (f == 0.0) & (i0 > 0)
    i0 = np.where(on_plane, i0 - 1, i0)
    f = np.where(on_plane, 1.0, f)

    w = (1.0 - f, f)
    corner = {}
    for dr, dg, db in _CORNERS:
        corner[dr, dg, db] = lut[i0[:, 0] + dr, i0[:, 1] + dg, i0[:, 2] + db]

    grad_lut = np.zeros_like(lut)
    flat = grad_lut.reshape(-1, 3)
    for dr, dg, db in _CORNERS:
        cw = w[dr][:, 0] * w[dg][:, 1] * w[db][:, 2]
        idx = ((i0[:, 0] + dr) * m + (i0[:, 1] + dg)) * m + (i0[:, 2] + db)
        np.add.at(flat, idx, cw[:, None] * grad_out)

    def axis_delta(axis: int) -> np.ndarray:
        # blend over the two off-axis directions of (upper - lower) slabs
        oa, ob = [a for a in (0, 1, 2) if a != axis]
        acc = np.zeros(pixels.shape, dtype=np.float64)
        for da in (0, 1):
            for db_ in (0, 1):
                hi = [0, 0, 0]
                lo = [0, 0, 0]
                hi[axis] = 1
                hi[oa] = lo[oa] = da
                hi[ob] = lo[ob] = db_
                cw = w[da][:, oa] * w[db_][:, ob]
                acc += cw[:, None] * (corner[tuple(hi)] - corner[tuple(lo)])
        return acc

    grad_pix = np.empty_like(pixels)
    for axis in range(3):
        grad_pix[:, axis] = (m - 1) * np.sum(grad_out * axis_delta(axis), axis=1)
    inside = (pixels >= 0.0) & (pixels <= 1.0)
    grad_pix *= inside
    return grad_lut, grad_pix
