# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled trilinear LUT kernels.

Semantics match wblut.kernels.pybackend exactly; see that module for the
contract (clamping, lattice mapping, lower-cell backward convention).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

name = "compiled"


cdef inline double _clamp01(double v) nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


def trilerp_apply(double[:, :, :, ::1] lut, double[:, ::1] pixels):
    """(m,m,m,3) lattice applied to (n,3) pixels -> (n,3)."""
    cdef Py_ssize_t n = pixels.shape[0]
    cdef Py_ssize_t m = lut.shape[0]
    out_arr = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, ch, ir, ig, ib
    cdef double xr, xg, xb, fr, fg, fb
    cdef double wr0, wr1, wg0, wg1, wb0, wb1

    with nogil:
        for i in range(n):
            xr = _clamp01(pixels[i, 0]) * (m - 1)
            xg = _clamp01(pixels[i, 1]) * (m - 1)
            xb = _clamp01(pixels[i, 2]) * (m - 1)
            ir = <Py_ssize_t>xr
            ig = <Py_ssize_t>xg
            ib = <Py_ssize_t>xb
            if ir > m - 2:
                ir = m - 2
            if ig > m - 2:
                ig = m - 2
            if ib > m - 2:
                ib = m - 2
            fr = xr - ir
            fg = xg - ig
            fb = xb - ib
            wr0 = 1.0 - fr
            wr1 = fr
            wg0 = 1.0 - fg
            wg1 = fg
            wb0 = 1.0 - fb
            wb1 = fb
            for ch in range(3):
                # corner order and weight association mirror the numpy
                # backend so both produce bit-identical sums
                out[i, ch] = (
                    wr0 * wg0 * wb0 * lut[ir, ig, ib, ch]
                    + wr0 * wg0 * wb1 * lut[ir, ig, ib + 1, ch]
                    + wr0 * wg1 * wb0 * lut[ir, ig + 1, ib, ch]
                    + wr0 * wg1 * wb1 * lut[ir, ig + 1, ib + 1, ch]
                    + wr1 * wg0 * wb0 * lut[ir + 1, ig, ib, ch]
                    + wr1 * wg0 * wb1 * lut[ir + 1, ig, ib + 1, ch]
                    + wr1 * wg1 * wb0 * lut[ir + 1, ig + 1, ib, ch]
                    + wr1 * wg1 * wb1 * lut[ir + 1, ig + 1, ib + 1, ch]
                )
    return out_arr


def trilerp_backward(
    double[:, :, :, ::1] lut, double[:, ::1] pixels, double[:, ::1] grad_out
):
    """Gradients w.r.t. lattice and pixels; see pybackend.trilerp_backward."""
    cdef Py_ssize_t n = pixels.shape[0]
    cdef Py_ssize_t m = lut.shape[0]
    glut_arr = np.zeros((m, m, m, 3), dtype=np.float64)
    gpix_arr = np.zeros((n, 3), dtype=np.float64)
    cdef double[:, :, :, ::1] glut = glut_arr
    cdef double[:, ::1] gpix = gpix_arr
    cdef Py_ssize_t i, ch, ir, ig, ib
    cdef double pr, pg, pb, xr, xg, xb, fr, fg, fb
    cdef double wr0, wr1, wg0, wg1, wb0, wb1, g
    cdef double dr_acc, dg_acc, db_acc
    cdef double c000, c001, c010, c011, c100, c101, c110, c111
    cdef bint in_r, in_g, in_b

    with nogil:
        for i in range(n):
            pr = pixels[i, 0]
            pg = pixels[i, 1]
            pb = pixels[i, 2]
            in_r = 0.0 <= pr <= 1.0
            in_g = 0.0 <= pg <= 1.0
            in_b = 0.0 <= pb <= 1.0
            xr = _clamp01(pr) * (m - 1)
            xg = _clamp01(pg) * (m - 1)
            xb = _clamp01(pb) * (m - 1)
            ir = <Py_ssize_t>xr
            ig = <Py_ssize_t>xg
            ib = <Py_ssize_t>xb
            if ir > m - 2:
                ir = m - 2
            if ig > m - 2:
                ig = m - 2
            if ib > m - 2:
                ib = m - 2
            fr = xr - ir
            fg = xg - ig
            fb = xb - ib
            # on an interior lattice plane differentiate in the lower cell
            if fr == 0.0 and ir > 0:
                ir -= 1
                fr = 1.0
            if fg == 0.0 and ig > 0:
                ig -= 1
                fg = 1.0
            if fb == 0.0 and ib > 0:
                ib -= 1
                fb = 1.0
            wr0 = 1.0 - fr
            wr1 = fr
            wg0 = 1.0 - fg
            wg1 = fg
            wb0 = 1.0 - fb
            wb1 = fb
            dr_acc = 0.0
            dg_acc = 0.0
            db_acc = 0.0
            for ch in range(3):
                c000 = lut[ir, ig, ib, ch]
                c001 = lut[ir, ig, ib + 1, ch]
                c010 = lut[ir, ig + 1, ib, ch]
                c011 = lut[ir, ig + 1, ib + 1, ch]
                c100 = lut[ir + 1, ig, ib, ch]
                c101 = lut[ir + 1, ig, ib + 1, ch]
                c110 = lut[ir + 1, ig + 1, ib, ch]
                c111 = lut[ir + 1, ig + 1, ib + 1, ch]
                g = grad_out[i, ch]
                glut[ir, ig, ib, ch] += wr0 * wg0 * wb0 * g
                glut[ir, ig, ib + 1, ch] += wr0 * wg0 * wb1 * g
                glut[ir, ig + 1, ib, ch] += wr0 * wg1 * wb0 * g
                glut[ir, ig + 1, ib + 1, ch] += wr0 * wg1 * wb1 * g
                glut[ir + 1, ig, ib, ch] += wr1 * wg0 * wb0 * g
                glut[ir + 1, ig, ib + 1, ch] += wr1 * wg0 * wb1 * g
                glut[ir + 1, ig + 1, ib, ch] += wr1 * wg1 * wb0 * g
                glut[ir + 1, ig + 1, ib + 1, ch] += wr1 * wg1 * wb1 * g
                dr_acc += g * (
                    wg0 * wb0 * (c100 - c000)
                    + wg1 * wb0 * (c110 - c010)
                    + wg0 * wb1 * (c101 - c001)
                    + wg1 * wb1 * (c111 - c011)
                )
                dg_acc += g * (
                    wr0 * wb0 * (c010 - c000)
                    + wr1 * wb0 * (c110 - c100)
                    + wr0 * wb1 * (c011 - c001)
                    + wr1 * wb1 * (c111 - c101)
                )
                db_acc += g * (
                    wr0 * wg0 * (c001 - c000)
                    + wr1 * wg0 * (c101 - c100)
                    + wr0 * wg1 * (c011 - c010)
                    + wr1 * wg1 * (c111 - c110)
                )
            if in_r:
                gpix[i, 0] = (m - 1) * dr_acc
            if in_g:
                gpix[i, 1] = (m - 1) * dg_acc
            if in_b:
                gpix[i, 2] = (m - 1) * db_acc
    return glut_arr, gpix_arr
