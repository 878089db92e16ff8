"""Evaluation metrics (mean angular error, CIEDE2000) and their summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import ColorSpace, ColorSpaceError, ImageBuffer, srgb_to_lab_values

__all__ = [
    "MetricReport",
    "summarize",
    "format_table",
    "ciede2000",
    "metric_mae",
    "metric_de2000",
]

_C25_7 = 25.0**7


def ciede2000(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """CIEDE2000 color difference between (..., 3) CIELAB value arrays."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    if lab1.shape != lab2.shape or lab1.shape[-1] != 3:
        raise ValueError(f"LAB arrays must match and end in 3: {lab1.shape} vs {lab2.shape}")
    l1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    l2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    c_bar7 = (0.5 * (c1 + c2)) ** 7
    g = 0.5 * (1.0 - np.sqrt(c_bar7 / (c_bar7 + _C25_7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0

    achromatic = c1p * c2p == 0.0
    dl = l2 - l1
    dc = c2p - c1p
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, np.where(dh < -180.0, dh + 360.0, dh))
    dh = np.where(achromatic, 0.0, dh)
    dbig_h = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh / 2.0))

    l_bar = 0.5 * (l1 + l2)
    cp_bar = 0.5 * (c1p + c2p)
    hsum = h1p + h2p
    h_bar = np.where(
        np.abs(h1p - h2p) <= 180.0,
        0.5 * hsum,
        np.where(hsum < 360.0, 0.5 * hsum + 180.0, 0.5 * hsum - 180.0),
    )
    h_bar = np.where(achromatic, hsum, h_bar)

    t = (
        1.0
        - 0.17 * np.cos(np.radians(h_bar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * h_bar))
        + 0.32 * np.cos(np.radians(3.0 * h_bar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * h_bar - 63.0))
    )
    d_theta = 30.0 * np.exp(-(((h_bar - 275.0) / 25.0) ** 2))
    cp_bar7 = cp_bar**7
    r_c = 2.0 * np.sqrt(cp_bar7 / (cp_bar7 + _C25_7))
    s_l = 1.0 + 0.015 * (l_bar - 50.0) ** 2 / np.sqrt(20.0 + (l_bar - 50.0) ** 2)
    s_c = 1.0 + 0.045 * cp_bar
    s_h = 1.0 + 0.015 * cp_bar * t
    r_t = -np.sin(np.radians(2.0 * d_theta)) * r_c

    return np.sqrt(
        (dl / s_l) ** 2
        + (dc / s_c) ** 2
        + (dbig_h / s_h) ** 2
        + r_t * (dc / s_c) * (dbig_h / s_h)
    )


def _check_pair(out: ImageBuffer, gt: ImageBuffer) -> None:
    if out.space is not ColorSpace.SRGB or gt.space is not ColorSpace.SRGB:
        raise ColorSpaceError("metrics are defined on sRGB images")
    if out.data.shape != gt.data.shape:
        raise ValueError(f"image shapes differ: {out.data.shape} vs {gt.data.shape}")


def metric_mae(out: ImageBuffer, gt: ImageBuffer) -> float:
    """Mean angle in degrees between corresponding RGB vectors.

    Pixels where either vector has norm below 1e-6 contribute zero (the
    angle is undefined there); they still count in the denominator.
    """
    _check_pair(out, gt)
    a = out.pixels()
    b = gt.pixels()
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    valid = (na >= 1e-6) & (nb >= 1e-6)
    cos = np.zeros(a.shape[0])
    np.divide((a * b).sum(axis=1), na * nb, out=cos, where=valid)
    angles = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    angles[~valid] = 0.0
    return float(angles.mean())


def metric_de2000(out: ImageBuffer, gt: ImageBuffer) -> float:
    """Mean CIEDE2000 difference over pixels, via CIELAB under D65."""
    _check_pair(out, gt)
    return float(
        ciede2000(srgb_to_lab_values(out.data), srgb_to_lab_values(gt.data)).mean()
    )


@dataclass(frozen=True)
class MetricReport:
    """Per-image values of one metric plus mean and quartiles."""

    name: str
    values: tuple[float, ...]
    mean: float
    q1: float
    q2: float
    q3: float

    def machine_row(self) -> str:
        return (
            f"metric,{self.name},{self.mean:.6f},{self.q1:.6f},{self.q2:.6f},{self.q3:.6f}"
        )


def summarize(values, name: str = "metric") -> MetricReport:
    """Builds a report; quartiles use linear interpolation at (n-1)*p."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty value list")
    q1, q2, q3 = np.quantile(arr, [0.25, 0.5, 0.75])
    return MetricReport(
        name=name,
        values=tuple(float(v) for v in arr),
        mean=float(arr.mean()),
        q1=float(q1),
        q2=float(q2),
        q3=float(q3),
    )


def format_table(reports: list[MetricReport]) -> str:
    """Plain-text table, one row per report."""
    header = f"{'name':<12} {'mean':>10} {'q1':>10} {'q2':>10} {'q3':>10}"
    rows = [header, "-" * len(header)]
    for r in reports:
        rows.append(f"{r.name:<12} {r.mean:>10.4f} {r.q1:>10.4f} {r.q2:>10.4f} {r.q3:>10.4f}")
    return "\n".join(rows)
