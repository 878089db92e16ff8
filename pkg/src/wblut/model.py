"""The learnable white-balance corrector.

A small CNN looks at a fixed-size downsampled copy of the photo and
produces two things: N fusion weights for a bank of basis LUTs, and a
128-dimensional embedding used only by the contrastive loss. The fused
LUT is then applied to the photo at its native resolution.

All learnable state lives in ModelParams as autodiff Tensors. The network
is deliberately compact:

* classifier: 5 convs, stride 2, kernel 3, pad 1, leaky-ReLU(0.2) after
  each, non-affine instance norm on layers 2-4
* weight generator: global average pool, then two linear maps to N raw
  scalars (no squashing; negative weights are allowed)
* embedding head: global average pool, then two linear maps to 128
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .autodiff import Tensor, conv2d, instance_norm
from .image import ColorSpace, ImageBuffer, convert_space, resize_bilinear
from .lut import Lut3D, apply_lut, identity_values

__all__ = [
    "ModelParams",
    "CheckpointError",
    "CheckpointVersionError",
    "init_params",
    "make_identity_selecting",
    "classifier_forward",
    "heads_forward",
    "infer_lut",
    "model_forward",
    "images_to_nchw",
    "save_params",
    "load_params",
]

FEATURE_DIM = 128
DEFAULT_WIDTHS = (16, 32, 64, 128, 128)


class CheckpointError(Exception):
    """Checkpoint file is malformed."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint has an incompatible format version."""


class ModelParams:
    """All learnable tensors plus the architecture hyperparameters.

    Tensor attributes are ordered; the checkpoint format and the
    optimizer both rely on `tensors()` yielding a stable sequence.
    """

    def __init__(
        self,
        conv_w: list[Tensor],
        conv_b: list[Tensor],
        wg_w1: Tensor,
        wg_b1: Tensor,
        wg_w2: Tensor,
        wg_b2: Tensor,
        mlp_w1: Tensor,
        mlp_b1: Tensor,
        mlp_w2: Tensor,
        mlp_b2: Tensor,
        basis: Tensor,
        color_space: ColorSpace,
        input_size: int,
    ):
        self.conv_w = conv_w
        self.conv_b = conv_b
        self.wg_w1 = wg_w1
        self.wg_b1 = wg_b1
        self.wg_w2 = wg_w2
        self.wg_b2 = wg_b2
        self.mlp_w1 = mlp_w1
        self.mlp_b1 = mlp_b1
        self.mlp_w2 = mlp_w2
        self.mlp_b2 = mlp_b2
        self.basis = basis
        self.color_space = color_space
        self.input_size = int(input_size)

    @property
    def n_basis(self) -> int:
        return self.basis.shape[0]

    @property
    def lattice_size(self) -> int:
        return self.basis.shape[1]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.conv_w)

    def tensors(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.conv_w, self.conv_b):
            out.extend([w, b])
        out.extend(
            [
                self.wg_w1,
                self.wg_b1,
                self.wg_w2,
                self.wg_b2,
                self.mlp_w1,
                self.mlp_b1,
                self.mlp_w2,
                self.mlp_b2,
                self.basis,
            ]
        )
        return out

    def count_params(self) -> int:
        return sum(t.data.size for t in self.tensors())


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_params(
    seed: int,
    n_basis: int = 8,
    m: int = 33,
    color_space: ColorSpace = ColorSpace.LAB,
    input_size: int = 256,
    widths: tuple[int, ...] = DEFAULT_WIDTHS,
    wg_hidden: int = 64,
    mlp_hidden: int = 256,
) -> ModelParams:
    """Deterministically initializes a model.

    Weights draw from U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases start at
    zero except the weight generator's output bias, which starts at
    (1, 0, ..., 0) so the initial fused LUT is approximately the identity
    (basis LUT 0 is the identity lattice, the rest start at zero).
    """
    if n_basis < 1:
        raise ValueError("need at least one basis LUT")
    if m < 2:
        raise ValueError("LUT needs at least 2 lattice points per axis")
    if len(widths) != 5:
        raise ValueError("classifier takes exactly 5 layer widths")
    if input_size < 8:
        raise ValueError("classifier input size must be at least 8")
    rng = np.random.default_rng(seed)

    # draw order is part of the determinism contract: conv stacks first,
    # then weight generator, then embedding head
    conv_w: list[Tensor] = []
    conv_b: list[Tensor] = []
    c_in = 3
    for c_out in widths:
        conv_w.append(_uniform(rng, (c_out, c_in, 3, 3), c_in * 9))
        conv_b.append(Tensor(np.zeros(c_out), requires_grad=True))
        c_in = c_out

    wg_w1 = _uniform(rng, (wg_hidden, c_in), c_in)
    wg_b1 = Tensor(np.zeros(wg_hidden), requires_grad=True)
    wg_w2 = _uniform(rng, (n_basis, wg_hidden), wg_hidden)
    wg_b2_data = np.zeros(n_basis)
    wg_b2_data[0] = 1.0
    wg_b2 = Tensor(wg_b2_data, requires_grad=True)

    mlp_w1 = _uniform(rng, (mlp_hidden, c_in), c_in)
    mlp_b1 = Tensor(np.zeros(mlp_hidden), requires_grad=True)
    mlp_w2 = _uniform(rng, (FEATURE_DIM, mlp_hidden), mlp_hidden)
    mlp_b2 = Tensor(np.zeros(FEATURE_DIM), requires_grad=True)

    basis_data = np.zeros((n_basis, m, m, m, 3))
    basis_data[0] = identity_values(m)
    basis = Tensor(basis_data, requires_grad=True)

    return ModelParams(
        conv_w,
        conv_b,
        wg_w1,
        wg_b1,
        wg_w2,
        wg_b2,
        mlp_w1,
        mlp_b1,
        mlp_w2,
        mlp_b2,
        basis,
        color_space,
        input_size,
    )


def make_identity_selecting(params: ModelParams) -> ModelParams:
    """Pins the weight generator to always select basis LUT 0.

    Zeroes the final weight-gen matrix and sets its bias to (1, 0, ..., 0)
    in place, so the fused LUT equals basis 0 (the identity, for a fresh
    model) for every input. Used as the exactly-solvable reference point
    in tests and as the baseline an untrained model should sit near.
    """
    params.wg_w2.data[:] = 0.0
    params.wg_b2.data[:] = 0.0
    params.wg_b2.data[0] = 1.0
    return params


def images_to_nchw(images: np.ndarray) -> np.ndarray:
    """(B,H,W,3) -> contiguous (B,3,H,W)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ValueError(f"expected (B,H,W,3), got {images.shape}")
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2))


def classifier_forward(params: ModelParams, x: Tensor) -> Tensor:
    """5-layer stride-2 backbone on (B,3,S,S); S must be params.input_size."""
    b, c, h, w = x.shape
    if c != 3 or h != params.input_size or w != params.input_size:
        raise ValueError(
            f"classifier expects (B,3,{params.input_size},{params.input_size}), got {x.shape}"
        )
    out = x
    for i in range(5):
        out = conv2d(out, params.conv_w[i], params.conv_b[i], stride=2, pad=1)
        out = out.leaky_relu(0.2)
        if 1 <= i <= 3:
            out = instance_norm(out)
    return out


def heads_forward(params: ModelParams, backbone: Tensor) -> tuple[Tensor, Tensor]:
    """Backbone map -> (fusion weights (B,N), embedding (B,128))."""
    pooled = backbone.mean(axis=(2, 3))  # (B, C)
    hidden_w = (pooled @ params.wg_w1.T + params.wg_b1).leaky_relu(0.2)
    weights = hidden_w @ params.wg_w2.T + params.wg_b2
    hidden_f = (pooled @ params.mlp_w1.T + params.mlp_b1).leaky_relu(0.2)
    feature = hidden_f @ params.mlp_w2.T + params.mlp_b2
    return weights, feature


def fused_lut_tensor(params: ModelParams, weights: Tensor) -> Tensor:
    """Fuses the basis bank with a (B,N) weight tensor -> (B, m,m,m,3)."""
    n = params.n_basis
    m = params.lattice_size
    flat = weights @ params.basis.reshape(n, m * m * m * 3)
    return flat.reshape(weights.shape[0], m, m, m, 3)


def infer_lut(
    params: ModelParams, img: ImageBuffer
) -> tuple[Lut3D, np.ndarray, np.ndarray]:
    """Predicts the per-image corrective LUT without applying it.

    Converts to the working color space, classifies a downsampled copy
    and fuses the basis bank with the predicted weights. Returns the
    fused LUT (tagged with the working space), the N fusion weights,
    and the 128-vector embedding.
    """
    if img.space is not ColorSpace.SRGB:
        raise ValueError("inference expects an sRGB image")
    working = convert_space(img, params.color_space)
    small = resize_bilinear(working, params.input_size, params.input_size)
    x = Tensor(images_to_nchw(small.data[None]))
    backbone = classifier_forward(params, x)
    weights_t, feature_t = heads_forward(params, backbone)
    fused = fused_lut_tensor(params, weights_t)
    lut = Lut3D(fused.data[0].copy(), params.color_space)
    return lut, weights_t.data[0].copy(), feature_t.data[0].copy()


def model_forward(
    params: ModelParams, img: ImageBuffer
) -> tuple[ImageBuffer, np.ndarray, np.ndarray]:
    """Full inference path on one sRGB image of any size.

    Converts to the working color space, classifies a downsampled copy,
    fuses the basis LUTs with the predicted weights, applies the fused
    LUT at native resolution, and converts back to sRGB. Returns the
    corrected image, the N fusion weights, and the 128-vector embedding.
    """
    lut, weights, feature = infer_lut(params, img)
    working = convert_space(img, params.color_space)
    out_working = apply_lut(lut, working)
    out = convert_space(out_working, ColorSpace.SRGB)
    return out, weights, feature


# ---------------------------------------------------------------------------
# Checkpoints: one binary file, magic + header + tensors in declaration
# order, little-endian throughout, tensor payloads as float32

_MAGIC = b"WBLUT3D\x00"
_VERSION = 1
_SPACE_CODE = {ColorSpace.SRGB: 0, ColorSpace.LAB: 1}
_CODE_SPACE = {v: k for k, v in _SPACE_CODE.items()}


def save_params(params: ModelParams, path: str | os.PathLike) -> None:
    tensors = params.tensors()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<IIIBII",
                _VERSION,
                params.n_basis,
                params.lattice_size,
                _SPACE_CODE[params.color_space],
                params.input_size,
                len(tensors),
            )
        )
        for t in tensors:
            dims = t.data.shape
            fh.write(struct.pack("<I", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(t.data.astype("<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("checkpoint truncated")
    return buf


def load_params(path: str | os.PathLike) -> ModelParams:
    """Rebuilds a model from a checkpoint.

    Architecture hyperparameters not in the header (layer widths, hidden
    sizes) are recovered from the stored tensor shapes.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, len(_MAGIC)) != _MAGIC:
            raise CheckpointError("not a model checkpoint (bad magic)")
        version, n_basis, m, space_code, input_size, n_tensors = struct.unpack(
            "<IIIBII", _read_exact(fh, 21)
        )
        if version != _VERSION:
            raise CheckpointVersionError(
                f"checkpoint version {version} not supported (expected {_VERSION})"
            )
        if space_code not in _CODE_SPACE:
            raise CheckpointError(f"unknown color-space code {space_code}")
        arrays: list[np.ndarray] = []
        for _ in range(n_tensors):
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
            arrays.append(data.astype(np.float64).reshape(dims))
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")

    if n_tensors != 19:
        raise CheckpointError(f"expected 19 tensors, found {n_tensors}")
    conv_w = [Tensor(arrays[2 * i], requires_grad=True) for i in range(5)]
    conv_b = [Tensor(arrays[2 * i + 1], requires_grad=True) for i in range(5)]
    rest = [Tensor(a, requires_grad=True) for a in arrays[10:]]
    wg_w1, wg_b1, wg_w2, wg_b2, mlp_w1, mlp_b1, mlp_w2, mlp_b2, basis = rest
    if basis.shape != (n_basis, m, m, m, 3):
        raise CheckpointError(
            f"basis bank shape {basis.shape} disagrees with header ({n_basis}, m={m})"
        )
    if wg_w2.shape[0] != n_basis or mlp_w2.shape[0] != FEATURE_DIM:
        raise CheckpointError("head shapes disagree with header")
    return ModelParams(
        conv_w,
        conv_b,
        wg_w1,
        wg_b1,
        wg_w2,
        wg_b2,
        mlp_w1,
        mlp_b1,
        mlp_w2,
        mlp_b2,
        basis,
        _CODE_SPACE[space_code],
        input_size,
    )
