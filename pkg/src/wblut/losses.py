"""Training losses: reconstruction, contrastive triplet, LUT regularizers.

All loss functions accept autodiff Tensors and return scalar Tensors so
they can sit on the training graph; plain ndarrays are lifted
automatically, which is how the tests drive them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor

__all__ = [
    "LossWeights",
    "loss_wb",
    "loss_triplet",
    "loss_smooth",
    "loss_mono",
    "loss_total",
]


@dataclass(frozen=True)
class LossWeights:
    """Scale factors for the combined objective.

    The contrastive weight is scheduled (10.0 early, 1.0 late); the rest
    stay fixed at lambda_wb=1.0, lambda_s=0.0001, lambda_m=10.0.
    """

    lambda_wb: float = 1.0
    lambda_tri: float = 10.0
    lambda_s: float = 0.0001
    lambda_m: float = 10.0

    def __post_init__(self):
        for name in ("lambda_wb", "lambda_tri", "lambda_s", "lambda_m"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def loss_wb(outs: Sequence, gts: Sequence) -> Tensor:
    """Mean over the batch of the whole-image Euclidean reconstruction error.

    Each sample contributes the L2 norm of the difference taken over all
    of its pixels and channels at once (not a per-pixel average), so a
    single 1x1 image with out=(1,0,0), gt=0 scores exactly 1.
    """
    if len(outs) != len(gts):
        raise ValueError(f"batch sizes differ: {len(outs)} vs {len(gts)}")
    if not outs:
        raise ValueError("empty batch")
    total = None
    for out, gt in zip(outs, gts):
        out, gt = _lift(out), _lift(gt)
        if out.shape != gt.shape:
            raise ValueError(f"sample shapes differ: {out.shape} vs {gt.shape}")
        dist = ((out - gt) ** 2).sum().sqrt()
        total = dist if total is None else total + dist
    return total * (1.0 / len(outs))


def loss_triplet(anchors, positives, negatives, margin: float = 0.0) -> Tensor:
    """Mean over the batch of ||f_a - f_p|| - ||f_a - f_n||.

    With the default margin of 0 this is the raw (possibly negative)
    difference of embedding distances; a positive margin switches to the
    conventional hinge max(0, d_ap - d_an + margin).
    """
    a, p, n = _lift(anchors), _lift(positives), _lift(negatives)
    if not (a.shape == p.shape == n.shape):
        raise ValueError(f"feature batches differ: {a.shape}, {p.shape}, {n.shape}")
    if a.ndim != 2:
        raise ValueError("features must be (B, dim)")
    d_ap = ((a - p) ** 2).sum(axis=1).sqrt()
    d_an = ((a - n) ** 2).sum(axis=1).sqrt()
    diff = d_ap - d_an
    if margin > 0.0:
        diff = (diff + margin).relu()
    return diff.mean()


def _as_basis_tensor(luts) -> Tensor:
    if isinstance(luts, Tensor):
        if luts.ndim != 5:
            raise ValueError(f"basis tensor must be (N,m,m,m,3), got {luts.shape}")
        return luts
    arrays = []
    for lut in luts:
        arrays.append(lut.values if hasattr(lut, "values") else np.asarray(lut))
    return Tensor(np.stack(arrays))


def loss_smooth(luts, weights_batch) -> Tensor:
    """Squared axis-adjacent lattice differences plus the weight penalty.

    Sums (phi[i+1]-phi[i])^2 over all three lattice axes and all three
    channels of every LUT, then adds the batch mean of the squared L2
    norm of the fusion weights. Zero exactly when every LUT is constant
    and all weights vanish.
    """
    basis = _as_basis_tensor(luts)
    w = _lift(weights_batch)
    if w.ndim == 1:
        w = w.reshape(1, w.shape[0])
    total = ((basis[:, 1:] - basis[:, :-1]) ** 2).sum()
    total = total + ((basis[:, :, 1:] - basis[:, :, :-1]) ** 2).sum()
    total = total + ((basis[:, :, :, 1:] - basis[:, :, :, :-1]) ** 2).sum()
    return total + (w**2).sum(axis=1).mean()


def loss_mono(luts) -> Tensor:
    """Penalizes the LUT channel that should track its own axis for
    decreasing along it: R along the first index, G along the second,
    B along the third. Each violation contributes max(0, lo - hi)^2."""
    basis = _as_basis_tensor(luts)
    r = basis[:, :, :, :, 0]
    g = basis[:, :, :, :, 1]
    b = basis[:, :, :, :, 2]
    total = ((r[:, :-1] - r[:, 1:]).relu() ** 2).sum()
    total = total + ((g[:, :, :-1] - g[:, :, 1:]).relu() ** 2).sum()
    total = total + ((b[:, :, :, :-1] - b[:, :, :, 1:]).relu() ** 2).sum()
    return total


def loss_total(wb, tri, smooth, mono, lw: LossWeights):
    """lambda-weighted combination of the four components."""
    return lw.lambda_wb * wb + lw.lambda_tri * tri + lw.lambda_s * smooth + lw.lambda_m * mono
