"""Command line front end.

Subcommands: apply, train, eval, bench, synth, export-cube. Exit codes
follow the usual convention: 0 on success, 2 for usage errors (argparse),
1 for runtime failures such as missing files or malformed inputs.

Machine-readable output lines are prefixed for grepping:

* ``timing,<stage>,<ms>`` from apply
* ``metric,<name>,<mean>,<q1>,<q2>,<q3>`` from eval
* ``bench,<stage>,<backend>,<WxH>,<mean_ms>,<min_ms>,<max_ms>`` from bench

Set WBLUT_THREADS to cap BLAS/OpenMP worker threads (read once, before
numpy spins up its thread pools).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .autodiff import Tensor
from .image import ColorSpace, ColorSpaceError, ImageError, convert_space, load_image, save_image
from .lut import CubeFormatError, apply_lut, read_cube, write_cube
from .metrics import format_table
from .model import (
    CheckpointError,
    classifier_forward,
    fused_lut_tensor,
    heads_forward,
    images_to_nchw,
    infer_lut,
    init_params,
    load_params,
)
from .pipeline import (
    ManifestError,
    TrainConfig,
    TrainingDivergedError,
    evaluate,
    load_manifest,
    synth_dataset,
    train,
)

_SPACES = {"srgb": ColorSpace.SRGB, "lab": ColorSpace.LAB}


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w_str, h_str = text.lower().split("x")
        w, h = int(w_str), int(h_str)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def _parse_widths(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wblut", description="White-balance correction with learned 3D LUTs"
    )
    parser.add_argument("--version", action="version", version=f"wblut {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("apply", help="correct one image with a model or a .cube LUT")
    p.add_argument("--model", help="model checkpoint (.bin)")
    p.add_argument("--cube", help=".cube LUT file")
    p.add_argument("--input", required=True, help="input image (png/ppm)")
    p.add_argument("--output", required=True, help="output image path")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("train", help="train a model on a scene manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    cfg = TrainConfig()
    p.add_argument("--batch-size", type=int, default=cfg.batch_size)
    p.add_argument("--epochs", type=int, default=cfg.epochs)
    p.add_argument("--lr", type=float, default=cfg.lr)
    p.add_argument("--beta1", type=float, default=cfg.adam_beta1)
    p.add_argument("--beta2", type=float, default=cfg.adam_beta2)
    p.add_argument("--patch", type=int, default=cfg.patch)
    p.add_argument("--tri-early", type=float, default=cfg.lambda_tri_early)
    p.add_argument("--tri-late", type=float, default=cfg.lambda_tri_late)
    p.add_argument("--tri-switch", type=int, default=cfg.tri_switch_epoch)
    p.add_argument("--seed", type=int, default=cfg.seed)
    p.add_argument("--n-basis", type=int, default=cfg.n_basis)
    p.add_argument("--space", choices=sorted(_SPACES), default=cfg.color_space.value)
    p.add_argument("--lattice-size", type=int, default=cfg.lattice_size)
    p.add_argument("--input-size", type=int, default=cfg.input_size)
    p.add_argument("--widths", type=_parse_widths, default=cfg.widths)
    p.add_argument("--wg-hidden", type=int, default=cfg.wg_hidden)
    p.add_argument("--mlp-hidden", type=int, default=cfg.mlp_hidden)
    p.add_argument("--margin", type=float, default=cfg.margin)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report MAE and deltaE2000 on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the classifier+fusion and LUT stages")
    p.add_argument("--model", help="checkpoint; a fresh default model if omitted")
    p.add_argument("--size", type=_parse_size, default=(1024, 1024), metavar="WxH")
    p.add_argument("--iters", type=int, default=5)
    p.add_argument(
        "--kernel",
        choices=("auto", "python", "compiled", "both"),
        default="auto",
        help="LUT kernel backend(s) to time",
    )
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic WB dataset")
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "export-cube", help="write the fused LUT predicted for one image"
    )
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help=".cube output path")
    p.add_argument("--title", default=None)
    p.set_defaults(func=cmd_export_cube)
    return parser


def cmd_apply(ns, parser) -> int:
    if bool(ns.model) == bool(ns.cube):
        parser.error("exactly one of --model or --cube is required")
    img = load_image(ns.input)
    if ns.model:
        params = load_params(ns.model)
        t0 = time.perf_counter()
        lut, _, _ = infer_lut(params, img)
    else:
        lut = read_cube(ns.cube)
        t0 = time.perf_counter()
    working = convert_space(img, lut.space)
    t1 = time.perf_counter()
    out_working = apply_lut(lut, working)
    t2 = time.perf_counter()
    out = convert_space(out_working, ColorSpace.SRGB)
    t3 = time.perf_counter()
    save_image(out, ns.output)
    print(f"wrote {ns.output} ({out.width}x{out.height})")
    print(f"timing,lut_apply_ms,{(t2 - t1) * 1e3:.3f}")
    print(f"timing,total_ms,{(t3 - t0) * 1e3:.3f}")
    return 0


def cmd_train(ns, parser) -> int:
    try:
        cfg = TrainConfig(
            batch_size=ns.batch_size,
            epochs=ns.epochs,
            lr=ns.lr,
            adam_beta1=ns.beta1,
            adam_beta2=ns.beta2,
            patch=ns.patch,
            lambda_tri_early=ns.tri_early,
            lambda_tri_late=ns.tri_late,
            tri_switch_epoch=ns.tri_switch,
            seed=ns.seed,
            n_basis=ns.n_basis,
            color_space=_SPACES[ns.space],
            lattice_size=ns.lattice_size,
            input_size=ns.input_size,
            widths=tuple(ns.widths),
            wg_hidden=ns.wg_hidden,
            mlp_hidden=ns.mlp_hidden,
            margin=ns.margin,
        )
    except ValueError as exc:
        parser.error(str(exc))
    records = load_manifest(ns.manifest)
    print(
        f"train: batch={cfg.batch_size} epochs={cfg.epochs} lr={cfg.lr:g} "
        f"beta1={cfg.adam_beta1:g} beta2={cfg.adam_beta2:g} patch={cfg.patch} "
        f"lambda_tri={cfg.lambda_tri_early:g}->{cfg.lambda_tri_late:g} "
        f"switch={cfg.tri_switch_epoch} seed={cfg.seed} n_basis={cfg.n_basis} "
        f"lattice={cfg.lattice_size} space={cfg.color_space.value} "
        f"scenes={len(records)}"
    )

    def log(s):
        print(
            f"epoch {s.epoch}/{cfg.epochs} L_WB={s.wb:.6f} L_tri={s.tri:.6f} "
            f"L_s={s.smooth:.6f} L_m={s.mono:.6f} L_total={s.total:.6f} "
            f"lambda_tri={s.lambda_tri:g}"
        )
        sys.stdout.flush()

    train(records, cfg, out_dir=ns.out, log=log)
    print(f"wrote {os.path.join(ns.out, 'model.bin')}")
    print(f"wrote {os.path.join(ns.out, 'history.csv')}")
    return 0


def cmd_eval(ns, parser) -> int:
    params = load_params(ns.model)
    records = load_manifest(ns.manifest)
    mae, de = evaluate(params, records)
    print(format_table([mae, de]))
    print(mae.machine_row())
    print(de.machine_row())
    return 0


def _time_stage(fn, iters: int) -> tuple[float, float, float]:
    fn()  # warmup
    times = []
    for _ in range(iters):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1e3)
    return float(np.mean(times)), float(np.min(times)), float(np.max(times))


def cmd_bench(ns, parser) -> int:
    if ns.iters < 1:
        parser.error("--iters must be positive")
    params = load_params(ns.model) if ns.model else init_params(ns.seed)
    rng = np.random.default_rng(ns.seed)
    s = params.input_size
    proxy = Tensor(images_to_nchw(rng.uniform(0.0, 1.0, size=(1, s, s, 3))))

    def classifier_fusion():
        weights, _ = heads_forward(params, classifier_forward(params, proxy))
        return fused_lut_tensor(params, weights)

    mean, lo, hi = _time_stage(classifier_fusion, ns.iters)
    print(f"bench,classifier_fusion,numpy,{s}x{s},{mean:.3f},{lo:.3f},{hi:.3f}")

    lut_values = classifier_fusion().data[0]
    w, h = ns.size
    pixels = rng.uniform(0.0, 1.0, size=(h * w, 3))
    if ns.kernel == "both":
        names = list(kernels.available_backends())
    elif ns.kernel == "auto":
        names = [kernels.backend_name]
    else:
        names = [ns.kernel]
    for name in names:
        backend = kernels.get_backend(name)
        mean, lo, hi = _time_stage(
            lambda: backend.trilerp_apply(lut_values, pixels), ns.iters
        )
        print(f"bench,lut_apply,{backend.name},{w}x{h},{mean:.3f},{lo:.3f},{hi:.3f}")
    return 0


def cmd_synth(ns, parser) -> int:
    manifest = synth_dataset(ns.scenes, ns.size, ns.seed, ns.out)
    print(f"wrote {manifest}")
    return 0


def cmd_export_cube(ns, parser) -> int:
    params = load_params(ns.model)
    lut, _, _ = infer_lut(params, load_image(ns.input))
    write_cube(lut, ns.out, title=ns.title)
    print(f"wrote {ns.out} (size {lut.size}, space {lut.space.value})")
    return 0


_RUNTIME_ERRORS = (
    ImageError,
    ColorSpaceError,
    CubeFormatError,
    ManifestError,
    CheckpointError,
    TrainingDivergedError,
    OSError,
    ValueError,
    ImportError,
)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns, parser)
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
