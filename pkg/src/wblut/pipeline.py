"""Dataset ingestion, triplet sampling, training, evaluation, synthesis.

The dataset abstraction is a manifest of scenes: each scene has one
correctly balanced ground-truth image and several renderings of the same
content under different white-balance settings. Training draws triplets:

* anchor: one rendering of a scene
* negative: a different rendering of the SAME scene (same content,
  different cast; the model must learn to treat them differently)
* positive: a DIFFERENT scene's ground truth pushed through the anchor's
  cast (different content, same needed correction)

and optimizes reconstruction + contrastive + LUT-regularizer losses with
Adam. Everything is deterministic for a fixed seed; the random draw order
inside an epoch is part of the reproducibility contract.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, Tensor, lut_apply
from .colorfit import make_hard_positive
from .image import (
    ColorSpace,
    ImageBuffer,
    convert_space,
    crop_and_flip,
    load_image,
    resize_bilinear,
    save_image,
)
from .losses import LossWeights, loss_mono, loss_smooth, loss_total, loss_triplet, loss_wb
from .metrics import MetricReport, metric_de2000, metric_mae, summarize
from .model import (
    ModelParams,
    classifier_forward,
    fused_lut_tensor,
    heads_forward,
    images_to_nchw,
    init_params,
    model_forward,
    save_params,
)

__all__ = [
    "KNOWN_SETTINGS",
    "SceneRecord",
    "Triplet",
    "TrainConfig",
    "EpochStats",
    "ManifestError",
    "TrainingDivergedError",
    "load_manifest",
    "ImageCache",
    "sample_triplet",
    "train",
    "evaluate",
    "apply_cast",
    "synth_dataset",
    "write_history",
    "HISTORY_HEADER",
]

# the five standard camera WB settings; any other token in a manifest is
# accepted verbatim as a custom setting
KNOWN_SETTINGS = (
    "Tungsten2850",
    "Fluorescent3800",
    "Daylight5500",
    "Cloudy6500",
    "Shade7500",
)


class ManifestError(Exception):
    """Manifest file is malformed or references missing data."""


class TrainingDivergedError(RuntimeError):
    """A loss component became non-finite during optimization."""

    def __init__(self, epoch: int, batch: int, component: str):
        super().__init__(
            f"non-finite {component} at epoch {epoch}, batch {batch}; "
            "lower the learning rate or check the dataset"
        )
        self.epoch = epoch
        self.batch = batch
        self.component = component


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    gt_path: str
    renderings: dict[str, str]  # setting name -> image path


@dataclass(frozen=True)
class Triplet:
    anchor: ImageBuffer
    positive: ImageBuffer
    negative: ImageBuffer
    anchor_gt: ImageBuffer


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 200
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    patch: int = 256
    lambda_tri_early: float = 10.0
    lambda_tri_late: float = 1.0
    tri_switch_epoch: int = 100
    seed: int = 0
    n_basis: int = 8
    color_space: ColorSpace = ColorSpace.LAB
    # architecture knobs; the defaults reproduce the full-size model,
    # smaller values enable desk-scale runs
    lattice_size: int = 33
    input_size: int = 256
    widths: tuple[int, ...] = (16, 32, 64, 128, 128)
    wg_hidden: int = 64
    mlp_hidden: int = 256
    lambda_wb: float = 1.0
    lambda_s: float = 0.0001
    lambda_m: float = 10.0
    margin: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1 or self.patch < 1 or self.n_basis < 1:
            raise ValueError("batch_size, patch and n_basis must be positive")
        if self.epochs < 0 or self.tri_switch_epoch < 0:
            raise ValueError("epoch counts cannot be negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs > 0 and self.tri_switch_epoch > self.epochs:
            raise ValueError("tri_switch_epoch must not exceed epochs")

    def lambda_tri_at(self, epoch: int) -> float:
        """Contrastive weight for a 1-indexed epoch: early value through
        the switch epoch, late value afterwards."""
        return self.lambda_tri_early if epoch <= self.tri_switch_epoch else self.lambda_tri_late


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    wb: float
    tri: float
    smooth: float
    mono: float
    total: float
    lambda_tri: float

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.wb:.8f},{self.tri:.8f},{self.smooth:.8f},"
            f"{self.mono:.8f},{self.total:.8f},{self.lambda_tri:g}"
        )


HISTORY_HEADER = "epoch,L_WB,L_tri,L_s,L_m,L_total,lambda_tri"


def write_history(history: list[EpochStats], path: str | os.PathLike) -> None:
    lines = [HISTORY_HEADER] + [h.csv_row() for h in history]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Manifest


def load_manifest(path: str | os.PathLike) -> list[SceneRecord]:
    """Parses a scene manifest and verifies every referenced file exists.

    Format: one record per line,
    ``scene_id<TAB>gt_path<TAB>setting=path[,setting=path...]``.
    Relative paths are resolved against the manifest's directory. Blank
    lines and ``#`` comments are skipped.
    """
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    records: list[SceneRecord] = []
    seen: set[str] = set()
    with open(path, "r") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestError(
                    f"{path}:{line_no}: expected 3 tab-separated fields, got {len(parts)}"
                )
            scene_id, gt_rel, rendering_spec = parts
            if scene_id in seen:
                raise ManifestError(f"{path}:{line_no}: duplicate scene id {scene_id!r}")
            seen.add(scene_id)
            gt_path = os.path.join(base, gt_rel) if not os.path.isabs(gt_rel) else gt_rel
            if not os.path.isfile(gt_path):
                raise ManifestError(
                    f"{path}:{line_no}: scene {scene_id!r} ground truth missing: {gt_path}"
                )
            renderings: dict[str, str] = {}
            for item in rendering_spec.split(","):
                if "=" not in item:
                    raise ManifestError(
                        f"{path}:{line_no}: rendering entry {item!r} is not setting=path"
                    )
                setting, rel = item.split("=", 1)
                setting = setting.strip()
                if not setting:
                    raise ManifestError(f"{path}:{line_no}: empty setting name")
                if setting in renderings:
                    raise ManifestError(
                        f"{path}:{line_no}: duplicate setting {setting!r} in scene {scene_id!r}"
                    )
                rpath = os.path.join(base, rel) if not os.path.isabs(rel) else rel
                if not os.path.isfile(rpath):
                    raise ManifestError(
                        f"{path}:{line_no}: scene {scene_id!r} rendering missing: {rpath}"
                    )
                renderings[setting] = rpath
            if not renderings:
                raise ManifestError(f"{path}:{line_no}: scene {scene_id!r} has no renderings")
            records.append(SceneRecord(scene_id, gt_path, renderings))
    return records


class ImageCache:
    """Loads each image file once and keeps the decoded sRGB buffer."""

    def __init__(self):
        self._store: dict[str, ImageBuffer] = {}

    def load(self, path: str) -> ImageBuffer:
        img = self._store.get(path)
        if img is None:
            img = load_image(path)
            self._store[path] = img
        return img


# ---------------------------------------------------------------------------
# Triplet sampling


def _draw_window(rng: np.random.Generator, img: ImageBuffer, patch: int):
    if img.width < patch or img.height < patch:
        raise ValueError(
            f"patch {patch} larger than image {img.width}x{img.height}"
        )
    x = int(rng.integers(img.width - patch + 1))
    y = int(rng.integers(img.height - patch + 1))
    hflip = bool(rng.integers(2))
    vflip = bool(rng.integers(2))
    return x, y, hflip, vflip


def sample_triplet(
    records: list[SceneRecord],
    anchor_index: int,
    rng: np.random.Generator,
    cfg: TrainConfig,
    cache: ImageCache | None = None,
    anchor_setting: str | None = None,
) -> Triplet:
    """Draws one training triplet (all members sRGB square patches).

    Fixed draw order, which reproducibility depends on: anchor setting
    (skipped when given explicitly), negative setting, donor scene,
    anchor/gt window+flips (shared), negative window+flips, positive
    window+flips. The hard positive is synthesized on the full images
    before cropping.
    """
    if len(records) < 2:
        raise ValueError("triplet sampling needs at least 2 scenes")
    rec = records[anchor_index]
    settings = list(rec.renderings)
    if len(settings) < 2:
        raise ValueError(f"scene {rec.scene_id!r} needs >= 2 renderings for a negative")
    cache = cache or ImageCache()

    if anchor_setting is None:
        anchor_setting = settings[int(rng.integers(len(settings)))]
    elif anchor_setting not in rec.renderings:
        raise ValueError(f"scene {rec.scene_id!r} has no rendering {anchor_setting!r}")
    others = [s for s in settings if s != anchor_setting]
    negative_setting = others[int(rng.integers(len(others)))]
    donor_pick = int(rng.integers(len(records) - 1))
    donor_index = donor_pick + (1 if donor_pick >= anchor_index else 0)

    anchor_full = cache.load(rec.renderings[anchor_setting])
    gt_full = cache.load(rec.gt_path)
    negative_full = cache.load(rec.renderings[negative_setting])
    donor_gt = cache.load(records[donor_index].gt_path)
    positive_full = make_hard_positive(anchor_full, gt_full, donor_gt)

    ax, ay, ah, av = _draw_window(rng, anchor_full, cfg.patch)
    anchor = crop_and_flip(anchor_full, ax, ay, cfg.patch, ah, av)
    anchor_gt = crop_and_flip(gt_full, ax, ay, cfg.patch, ah, av)
    nx, ny, nh, nv = _draw_window(rng, negative_full, cfg.patch)
    negative = crop_and_flip(negative_full, nx, ny, cfg.patch, nh, nv)
    px, py, ph, pv = _draw_window(rng, positive_full, cfg.patch)
    positive = crop_and_flip(positive_full, px, py, cfg.patch, ph, pv)
    return Triplet(anchor, positive, negative, anchor_gt)


# ---------------------------------------------------------------------------
# Training


def _classifier_batch(params: ModelParams, patches: list[ImageBuffer]) -> Tensor:
    resized = [
        resize_bilinear(p, params.input_size, params.input_size).data for p in patches
    ]
    return Tensor(images_to_nchw(np.stack(resized)))


def _embed(params: ModelParams, patches: list[ImageBuffer]) -> Tensor:
    backbone = classifier_forward(params, _classifier_batch(params, patches))
    _, feature = heads_forward(params, backbone)
    return feature


def _batch_losses(
    params: ModelParams, triplets: list[Triplet], cfg: TrainConfig, contrastive: bool
):
    """Forward pass for one batch; returns the four loss Tensors."""
    space = params.color_space
    anchors_w = [convert_space(t.anchor, space) for t in triplets]
    gts_w = [convert_space(t.anchor_gt, space) for t in triplets]

    backbone = classifier_forward(params, _classifier_batch(params, anchors_w))
    weights, feat_anchor = heads_forward(params, backbone)
    fused = fused_lut_tensor(params, weights)

    outs = []
    gt_tensors = []
    for i, (aw, gw) in enumerate(zip(anchors_w, gts_w)):
        outs.append(lut_apply(fused[i], Tensor(aw.pixels())))
        gt_tensors.append(Tensor(gw.pixels()))
    wb = loss_wb(outs, gt_tensors)
    smooth = loss_smooth(params.basis, weights)
    mono = loss_mono(params.basis)
    if contrastive:
        feat_pos = _embed(params, [convert_space(t.positive, space) for t in triplets])
        feat_neg = _embed(params, [convert_space(t.negative, space) for t in triplets])
        tri = loss_triplet(feat_anchor, feat_pos, feat_neg, margin=cfg.margin)
    else:
        tri = Tensor(np.array(0.0))
    return wb, tri, smooth, mono


def train(
    records: list[SceneRecord],
    cfg: TrainConfig,
    out_dir: str | os.PathLike | None = None,
    log=None,
) -> tuple[ModelParams, list[EpochStats]]:
    """Runs the full optimization; deterministic for a fixed config.

    Each epoch visits every (scene, rendering) pair once as an anchor, in
    a seeded shuffled order. When the scheduled contrastive weight is 0
    the positive/negative encoder passes are skipped entirely and L_tri
    is recorded as 0.0 (the triplets themselves are still drawn, so the
    random stream stays aligned with contrastive runs).

    With out_dir set, writes `model.bin` and `history.csv` there.
    """
    if not records:
        raise ValueError("training needs a nonempty dataset")
    params = init_params(
        cfg.seed,
        n_basis=cfg.n_basis,
        m=cfg.lattice_size,
        color_space=cfg.color_space,
        input_size=cfg.input_size,
        widths=cfg.widths,
        wg_hidden=cfg.wg_hidden,
        mlp_hidden=cfg.mlp_hidden,
    )
    opt = Adam(
        params.tensors(), lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2
    )
    rng = np.random.default_rng(cfg.seed)
    cache = ImageCache()
    samples = [(i, s) for i, rec in enumerate(records) for s in rec.renderings]
    history: list[EpochStats] = []

    for epoch in range(1, cfg.epochs + 1):
        lam_tri = cfg.lambda_tri_at(epoch)
        lw = LossWeights(cfg.lambda_wb, lam_tri, cfg.lambda_s, cfg.lambda_m)
        contrastive = lam_tri > 0.0
        order = rng.permutation(len(samples))
        sums = np.zeros(5)
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = order[start : start + cfg.batch_size]
            triplets = [
                sample_triplet(records, samples[k][0], rng, cfg, cache, samples[k][1])
                for k in chunk
            ]
            wb, tri, smooth, mono = _batch_losses(params, triplets, cfg, contrastive)
            total = loss_total(wb, tri, smooth, mono, lw)
            parts = [
                ("L_WB", wb.item()),
                ("L_tri", tri.item()),
                ("L_s", smooth.item()),
                ("L_m", mono.item()),
                ("L_total", total.item()),
            ]
            for name, value in parts:
                if not np.isfinite(value):
                    raise TrainingDivergedError(epoch, batch_no, name)
            opt.zero_grad()
            total.backward()
            opt.step()
            sums += len(chunk) * np.array([v for _, v in parts])
        means = sums / len(samples)
        stats = EpochStats(epoch, *means, lam_tri)
        history.append(stats)
        if log is not None:
            log(stats)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_params(params, os.path.join(out_dir, "model.bin"))
        write_history(history, os.path.join(out_dir, "history.csv"))
    return params, history


def evaluate(
    params: ModelParams, records: list[SceneRecord], cache: ImageCache | None = None
) -> tuple[MetricReport, MetricReport]:
    """Runs the model on every rendering; one value per rendering."""
    cache = cache or ImageCache()
    maes: list[float] = []
    des: list[float] = []
    for rec in records:
        gt = cache.load(rec.gt_path)
        for path in rec.renderings.values():
            out, _, _ = model_forward(params, cache.load(path))
            maes.append(metric_mae(out, gt))
            des.append(metric_de2000(out, gt))
    return summarize(maes, "mae"), summarize(des, "deltaE2000")


# ---------------------------------------------------------------------------
# Synthetic dataset


def apply_cast(data: np.ndarray, gains, gamma: float) -> np.ndarray:
    """Global color cast: per-channel gains followed by a gamma curve."""
    lifted = np.maximum(np.asarray(data, dtype=np.float64) * np.asarray(gains), 0.0)
    return lifted**gamma

# warm-to-cool cast presets per setting, mimicking a camera whose WB
# modes apply consistent transforms; per-rendering jitter on top keeps
# every cast unique. Gains stay in [0.6, 1.4], gamma in [0.85, 1.18].
_SETTING_CASTS = {
    "Tungsten2850": ((1.28, 1.00, 0.68), 0.92),
    "Fluorescent3800": ((1.12, 1.04, 0.85), 1.05),
    "Daylight5500": ((1.00, 1.00, 1.00), 1.00),
    "Cloudy6500": ((0.90, 1.00, 1.12), 0.95),
    "Shade7500": ((0.78, 0.98, 1.30), 1.10),
}


def _random_scene(rng: np.random.Generator, size: int) -> np.ndarray:
    # smooth random color field with solid shapes on top; values capped
    # at 0.70 so gains up to 1.4 never clip (keeps casts invertible).
    # Enough independent patches per scene that scene-average color is
    # reasonably stable, which keeps casts inferable from small corpora.
    cells = int(rng.integers(6, 11))
    field = rng.uniform(0.05, 0.65, size=(cells, cells, 3))
    img = resize_bilinear(
        ImageBuffer(field, ColorSpace.SRGB), size, size
    ).data.copy()
    for _ in range(int(rng.integers(6, 13))):
        color = rng.uniform(0.05, 0.70, size=3)
        if rng.integers(2) == 0:
            w = int(rng.integers(size // 8, size // 2 + 1))
            h = int(rng.integers(size // 8, size // 2 + 1))
            x = int(rng.integers(size - w + 1))
            y = int(rng.integers(size - h + 1))
            img[y : y + h, x : x + w] = color
        else:
            cx = float(rng.uniform(0, size))
            cy = float(rng.uniform(0, size))
            r = float(rng.uniform(size / 12, size / 4))
            yy, xx = np.mgrid[0:size, 0:size]
            img[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = color
    return np.clip(img, 0.0, 0.70)


def synth_dataset(
    n_scenes: int, size: int, seed: int, out_dir: str | os.PathLike
) -> str:
    """Writes a synthetic WB dataset and returns the manifest path.

    Each scene gets a ground truth plus five renderings, one per standard
    WB setting, cast with jittered per-setting gains in [0.6, 1.4] and a
    gamma in [0.85, 1.18]. Bit-identical for a fixed seed.
    """
    if n_scenes < 2:
        raise ValueError("a usable dataset needs at least 2 scenes")
    if size < 8:
        raise ValueError("scene size must be at least 8 pixels")
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n_scenes):
        scene_id = f"scene_{i:03d}"
        gt = _random_scene(rng, size)
        gt_name = f"{scene_id}_gt.png"
        save_image(ImageBuffer(gt, ColorSpace.SRGB), os.path.join(out_dir, gt_name))
        entries = []
        for setting, (base_gains, base_gamma) in _SETTING_CASTS.items():
            gains = np.clip(
                np.asarray(base_gains) + rng.uniform(-0.05, 0.05, size=3), 0.6, 1.4
            )
            gamma = float(np.clip(base_gamma + rng.uniform(-0.03, 0.03), 0.85, 1.18))
            rendering = apply_cast(gt, gains, gamma)
            name = f"{scene_id}_{setting}.png"
            save_image(
                ImageBuffer(rendering, ColorSpace.SRGB), os.path.join(out_dir, name)
            )
            entries.append(f"{setting}={name}")
        lines.append(f"{scene_id}\t{gt_name}\t{','.join(entries)}")
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w", newline="\n") as fh:
        fh.write("# synthetic white-balance dataset\n")
        fh.write("\n".join(lines) + "\n")
    return manifest
