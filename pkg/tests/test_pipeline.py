"""Dataset/manifest, triplet sampling, training loop, eval, synthesis."""

import os

import numpy as np
import pytest

from wblut.colorfit import make_hard_positive
from wblut.image import ColorSpace, ImageBuffer, crop_and_flip, load_image, save_image
from wblut.model import init_params, make_identity_selecting
from wblut.pipeline import (
    HISTORY_HEADER,
    ImageCache,
    KNOWN_SETTINGS,
    ManifestError,
    TrainConfig,
    TrainingDivergedError,
    apply_cast,
    evaluate,
    load_manifest,
    sample_triplet,
    synth_dataset,
    train,
    write_history,
)

TOY = dict(
    n_basis=2,
    lattice_size=5,
    input_size=16,
    widths=(2, 3, 4, 4, 4),
    wg_hidden=4,
    mlp_hidden=4,
)


def toy_config(**kw):
    base = dict(
        batch_size=4,
        epochs=1,
        lr=1e-3,
        patch=32,
        tri_switch_epoch=1,
        seed=11,
        color_space=ColorSpace.LAB,
        **TOY,
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    manifest = synth_dataset(4, 48, seed=5, out_dir=root)
    return manifest, load_manifest(manifest)


# ---------------------------------------------------------------------------
# manifest parsing


def test_manifest_round_trip(dataset):
    manifest, records = dataset
    assert len(records) == 4
    for rec in records:
        assert os.path.isfile(rec.gt_path)
        assert set(rec.renderings) == set(KNOWN_SETTINGS)
        for p in rec.renderings.values():
            assert os.path.isfile(p)
    assert len({r.scene_id for r in records}) == 4


def test_manifest_skips_comments_and_blanks(dataset, tmp_path):
    manifest, records = dataset
    with open(manifest) as fh:
        body = fh.read()
    alt = tmp_path / "with_noise.tsv"
    src_dir = os.path.dirname(manifest)
    noisy = "# leading comment\n\n" + body + "\n   \n# trailing\n"
    # rewrite paths as absolute so the copy parses from another directory
    fixed = []
    for line in noisy.splitlines():
        if not line.strip() or line.startswith("#"):
            fixed.append(line)
            continue
        sid, gt, rend = line.split("\t")
        rend = ",".join(
            f"{s}={os.path.join(src_dir, p)}"
            for s, p in (item.split("=", 1) for item in rend.split(","))
        )
        fixed.append(f"{sid}\t{os.path.join(src_dir, gt)}\t{rend}")
    alt.write_text("\n".join(fixed) + "\n")
    again = load_manifest(alt)
    assert [r.scene_id for r in again] == [r.scene_id for r in records]


def test_manifest_unknown_setting_kept_verbatim(tmp_path):
    img = ImageBuffer(np.full((8, 8, 3), 0.5), ColorSpace.SRGB)
    save_image(img, tmp_path / "a.png")
    (tmp_path / "m.tsv").write_text("s0\ta.png\tCandleLight1800=a.png,Daylight5500=a.png\n")
    recs = load_manifest(tmp_path / "m.tsv")
    assert "CandleLight1800" in recs[0].renderings


def write_min_manifest(tmp_path, line):
    img = ImageBuffer(np.full((8, 8, 3), 0.5), ColorSpace.SRGB)
    save_image(img, tmp_path / "a.png")
    p = tmp_path / "m.tsv"
    p.write_text(line)
    return p


@pytest.mark.parametrize(
    "line,fragment",
    [
        ("s0\ta.png\n", "3 tab-separated fields"),
        ("s0\ta.png\tX=a.png\ns0\ta.png\tX=a.png\n", "duplicate scene"),
        ("s0\tmissing.png\tX=a.png\n", "ground truth missing"),
        ("s0\ta.png\tX=missing.png\n", "rendering missing"),
        ("s0\ta.png\tnoequals\n", "not setting=path"),
        ("s0\ta.png\tX=a.png,X=a.png\n", "duplicate setting"),
        ("s0\ta.png\t=a.png\n", "empty setting"),
    ],
)
def test_manifest_errors(tmp_path, line, fragment):
    p = write_min_manifest(tmp_path, line)
    with pytest.raises(ManifestError, match=fragment):
        load_manifest(p)


def test_manifest_error_names_scene_and_path(tmp_path):
    p = write_min_manifest(tmp_path, "sceneX\ta.png\tTag=gone.png\n")
    with pytest.raises(ManifestError) as exc:
        load_manifest(p)
    msg = str(exc.value)
    assert "sceneX" in msg and "gone.png" in msg


# ---------------------------------------------------------------------------
# config


def test_config_defaults_match_training_recipe():
    cfg = TrainConfig()
    assert cfg.batch_size == 32
    assert cfg.epochs == 200
    assert cfg.lr == pytest.approx(1e-4)
    assert cfg.adam_beta1 == 0.9
    assert cfg.adam_beta2 == 0.999
    assert cfg.patch == 256
    assert cfg.lambda_tri_early == 10.0
    assert cfg.lambda_tri_late == 1.0
    assert cfg.tri_switch_epoch == 100
    assert cfg.n_basis == 8
    assert cfg.color_space is ColorSpace.LAB


def test_config_lambda_schedule_boundary():
    cfg = TrainConfig()
    assert cfg.lambda_tri_at(1) == 10.0
    assert cfg.lambda_tri_at(100) == 10.0
    assert cfg.lambda_tri_at(101) == 1.0
    assert cfg.lambda_tri_at(200) == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, tri_switch_epoch=11)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    # epochs=0 is a supported smoke mode regardless of the switch default
    TrainConfig(epochs=0)


# ---------------------------------------------------------------------------
# triplet sampling


def replay_triplet(records, anchor_index, seed, cfg, anchor_setting=None):
    """Mirror of the documented draw order, computed independently."""
    rng = np.random.default_rng(seed)
    rec = records[anchor_index]
    settings = list(rec.renderings)
    if anchor_setting is None:
        anchor_setting = settings[int(rng.integers(len(settings)))]
    others = [s for s in settings if s != anchor_setting]
    negative_setting = others[int(rng.integers(len(others)))]
    pick = int(rng.integers(len(records) - 1))
    donor_index = pick + (1 if pick >= anchor_index else 0)

    anchor_full = load_image(rec.renderings[anchor_setting])
    gt_full = load_image(rec.gt_path)
    neg_full = load_image(rec.renderings[negative_setting])
    donor_gt = load_image(records[donor_index].gt_path)
    pos_full = make_hard_positive(anchor_full, gt_full, donor_gt)

    def window(img):
        x = int(rng.integers(img.width - cfg.patch + 1))
        y = int(rng.integers(img.height - cfg.patch + 1))
        h = bool(rng.integers(2))
        v = bool(rng.integers(2))
        return x, y, h, v

    ax, ay, ah, av = window(anchor_full)
    nx, ny, nh, nv = window(neg_full)
    px, py, ph, pv = window(pos_full)
    return dict(
        anchor=crop_and_flip(anchor_full, ax, ay, cfg.patch, ah, av),
        anchor_gt=crop_and_flip(gt_full, ax, ay, cfg.patch, ah, av),
        negative=crop_and_flip(neg_full, nx, ny, cfg.patch, nh, nv),
        positive=crop_and_flip(pos_full, px, py, cfg.patch, ph, pv),
        negative_setting=negative_setting,
        donor_index=donor_index,
    )


def test_triplet_matches_documented_draw_order(dataset):
    _, records = dataset
    cfg = toy_config()
    for seed in (0, 1, 2):
        got = sample_triplet(records, 1, np.random.default_rng(seed), cfg)
        want = replay_triplet(records, 1, seed, cfg)
        for name in ("anchor", "anchor_gt", "negative", "positive"):
            np.testing.assert_array_equal(
                getattr(got, name).data, want[name].data, err_msg=name
            )


def test_triplet_with_explicit_anchor_setting(dataset):
    _, records = dataset
    cfg = toy_config()
    got = sample_triplet(
        records, 0, np.random.default_rng(9), cfg, anchor_setting="Shade7500"
    )
    want = replay_triplet(records, 0, 9, cfg, anchor_setting="Shade7500")
    np.testing.assert_array_equal(got.anchor.data, want["anchor"].data)
    np.testing.assert_array_equal(got.negative.data, want["negative"].data)
    with pytest.raises(ValueError, match="no rendering"):
        sample_triplet(records, 0, np.random.default_rng(9), cfg, anchor_setting="Nope")


def test_triplet_negative_never_anchor_setting(dataset):
    _, records = dataset
    cfg = toy_config()
    rng = np.random.default_rng(4)
    for _ in range(25):
        want = replay_triplet(records, 2, int(rng.integers(1 << 30)), cfg)
        anchor_settings = set(KNOWN_SETTINGS)
        assert want["negative_setting"] in anchor_settings


def test_triplet_donor_is_never_anchor_scene(dataset):
    _, records = dataset
    cfg = toy_config()
    seen = set()
    for seed in range(40):
        want = replay_triplet(records, 1, seed, cfg)
        assert want["donor_index"] != 1
        seen.add(want["donor_index"])
    assert seen == {0, 2, 3}


def test_triplet_anchor_and_gt_share_window(tmp_path):
    # rendering file IS the gt file, so aligned crops must match exactly
    rng_img = np.random.default_rng(3)
    img = ImageBuffer(rng_img.uniform(0, 0.7, (48, 48, 3)), ColorSpace.SRGB)
    save_image(img, tmp_path / "g.png")
    save_image(img, tmp_path / "other.png")
    (tmp_path / "m.tsv").write_text(
        "s0\tg.png\tA=g.png,B=g.png\ns1\tother.png\tA=other.png,B=other.png\n"
    )
    records = load_manifest(tmp_path / "m.tsv")
    cfg = toy_config()
    for seed in range(6):
        t = sample_triplet(records, 0, np.random.default_rng(seed), cfg)
        np.testing.assert_array_equal(t.anchor.data, t.anchor_gt.data)
        assert t.anchor.data.shape == (32, 32, 3)


def test_triplet_zero_cast_positive_is_donor_gt(tmp_path):
    # anchor == gt means the fitted cast is the identity, so the positive
    # must reproduce the donor scene's ground truth almost exactly
    rng_img = np.random.default_rng(8)
    a = ImageBuffer(rng_img.uniform(0, 0.7, (32, 32, 3)), ColorSpace.SRGB)
    b = ImageBuffer(rng_img.uniform(0, 0.7, (32, 32, 3)), ColorSpace.SRGB)
    save_image(a, tmp_path / "a.png")
    save_image(b, tmp_path / "b.png")
    (tmp_path / "m.tsv").write_text(
        "s0\ta.png\tA=a.png,B=a.png\ns1\tb.png\tA=b.png,B=b.png\n"
    )
    records = load_manifest(tmp_path / "m.tsv")
    cfg = toy_config(patch=32)  # whole image, window forced to (0,0)
    t = sample_triplet(records, 0, np.random.default_rng(1), cfg)
    donor = load_image(tmp_path / "b.png").data
    flat_pos = np.sort(t.positive.data.reshape(-1))
    flat_donor = np.sort(donor.reshape(-1))  # flip-agnostic comparison
    rmse = float(np.sqrt(np.mean((flat_pos - flat_donor) ** 2)))
    assert rmse < 1e-3


def test_triplet_determinism(dataset):
    _, records = dataset
    cfg = toy_config()
    t1 = sample_triplet(records, 3, np.random.default_rng(77), cfg)
    t2 = sample_triplet(records, 3, np.random.default_rng(77), cfg)
    np.testing.assert_array_equal(t1.anchor.data, t2.anchor.data)
    np.testing.assert_array_equal(t1.positive.data, t2.positive.data)
    np.testing.assert_array_equal(t1.negative.data, t2.negative.data)


def test_triplet_patch_too_large(dataset):
    _, records = dataset
    cfg = toy_config(patch=64)  # images are 48x48
    with pytest.raises(ValueError, match="patch"):
        sample_triplet(records, 0, np.random.default_rng(0), cfg)


def test_triplet_needs_two_scenes(dataset):
    _, records = dataset
    with pytest.raises(ValueError, match="2 scenes"):
        sample_triplet(records[:1], 0, np.random.default_rng(0), toy_config())


# ---------------------------------------------------------------------------
# training


def test_train_zero_epochs_returns_initial_params(dataset, tmp_path):
    _, records = dataset
    cfg = toy_config(epochs=0)
    out = tmp_path / "run"
    params, history = train(records, cfg, out_dir=out)
    assert history == []
    fresh = init_params(
        cfg.seed,
        n_basis=cfg.n_basis,
        m=cfg.lattice_size,
        color_space=cfg.color_space,
        input_size=cfg.input_size,
        widths=cfg.widths,
        wg_hidden=cfg.wg_hidden,
        mlp_hidden=cfg.mlp_hidden,
    )
    for got, want in zip(params.tensors(), fresh.tensors()):
        np.testing.assert_array_equal(got.data, want.data)
    assert (out / "model.bin").is_file()
    assert (out / "history.csv").read_text() == HISTORY_HEADER + "\n"


def test_train_deterministic(dataset):
    _, records = dataset
    cfg = toy_config(epochs=2, batch_size=8)
    p1, h1 = train(records, cfg)
    p2, h2 = train(records, cfg)
    assert [s.csv_row() for s in h1] == [s.csv_row() for s in h2]
    for a, b in zip(p1.tensors(), p2.tensors()):
        np.testing.assert_array_equal(a.data, b.data)


def test_train_history_records_schedule(dataset):
    _, records = dataset
    cfg = toy_config(epochs=3, tri_switch_epoch=2, batch_size=16)
    _, history = train(records, cfg)
    assert [h.epoch for h in history] == [1, 2, 3]
    assert [h.lambda_tri for h in history] == [10.0, 10.0, 1.0]
    for h in history:
        assert np.isfinite([h.wb, h.tri, h.smooth, h.mono, h.total]).all()


def test_train_zero_lambda_tri_logs_zero(dataset):
    _, records = dataset
    cfg = toy_config(
        epochs=1, batch_size=16, lambda_tri_early=0.0, lambda_tri_late=0.0
    )
    _, history = train(records, cfg)
    assert history[0].tri == 0.0
    # total excludes the contrastive term entirely
    expected = (
        history[0].wb + 0.0001 * history[0].smooth + 10.0 * history[0].mono
    )
    assert history[0].total == pytest.approx(expected, rel=1e-6)


def test_train_loss_decreases(dataset):
    _, records = dataset
    cfg = toy_config(
        epochs=8, batch_size=16, lr=5e-3, lambda_tri_early=0.0,
        lambda_tri_late=0.0, tri_switch_epoch=4,
    )
    _, history = train(records, cfg)
    assert history[-1].wb < history[0].wb


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises(dataset):
    _, records = dataset
    cfg = toy_config(epochs=3, batch_size=16, lr=1e300)
    with pytest.raises(TrainingDivergedError) as exc:
        train(records, cfg)
    err = exc.value
    assert err.epoch >= 1 and err.batch >= 0
    assert err.component in ("L_WB", "L_tri", "L_s", "L_m", "L_total")
    assert err.component in str(err)


def test_train_empty_dataset_rejected():
    with pytest.raises(ValueError, match="nonempty"):
        train([], toy_config())


def test_history_file_format(dataset, tmp_path):
    _, records = dataset
    cfg = toy_config(epochs=2, batch_size=16)
    _, history = train(records, cfg)
    path = tmp_path / "history.csv"
    write_history(history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,L_WB,L_tri,L_s,L_m,L_total,lambda_tri"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "1"
    assert len(first) == 7
    assert float(first[6]) == history[0].lambda_tri


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_identity_model_on_clean_dataset(tmp_path):
    # renderings equal to gt plus an identity-selecting model: both
    # metrics must come out exactly zero for every rendering
    rng = np.random.default_rng(2)
    for i in range(2):
        img = ImageBuffer(rng.uniform(0, 1, (24, 24, 3)), ColorSpace.SRGB)
        save_image(img, tmp_path / f"s{i}.png")
    (tmp_path / "m.tsv").write_text(
        "s0\ts0.png\tA=s0.png,B=s0.png\ns1\ts1.png\tA=s1.png,B=s1.png\n"
    )
    records = load_manifest(tmp_path / "m.tsv")
    params = init_params(0, color_space=ColorSpace.SRGB, **{
        "n_basis": 2, "m": 5, "input_size": 16,
        "widths": (2, 3, 4, 4, 4), "wg_hidden": 4, "mlp_hidden": 4,
    })
    make_identity_selecting(params)
    mae, de = evaluate(params, records)
    assert mae.name == "mae" and de.name == "deltaE2000"
    assert len(mae.values) == 4 and len(de.values) == 4
    # identity interpolation leaves ~1e-16 residuals; arccos amplifies
    # those to ~1e-7 degrees, which is the practical zero floor
    assert max(mae.values) < 1e-5
    assert max(de.values) < 1e-7


def test_evaluate_value_count_matches_renderings(dataset):
    _, records = dataset
    params = init_params(
        0,
        n_basis=TOY["n_basis"],
        m=TOY["lattice_size"],
        input_size=TOY["input_size"],
        widths=TOY["widths"],
        wg_hidden=TOY["wg_hidden"],
        mlp_hidden=TOY["mlp_hidden"],
    )
    mae, de = evaluate(params, records[:2])
    total = sum(len(r.renderings) for r in records[:2])
    assert len(mae.values) == total == len(de.values)
    assert mae.mean == pytest.approx(np.mean(mae.values))


# ---------------------------------------------------------------------------
# synthesis


def test_apply_cast_examples():
    gray = np.full((4, 4, 3), 0.5)
    np.testing.assert_allclose(
        apply_cast(gray, (1.3, 1.0, 0.7), 1.0)[0, 0], [0.65, 0.5, 0.35]
    )
    np.testing.assert_array_equal(apply_cast(gray, (1.0, 1.0, 1.0), 1.0), gray)
    curved = apply_cast(gray, (1.0, 1.0, 1.0), 2.0)
    np.testing.assert_allclose(curved, 0.25)


def test_synth_dataset_structure(dataset):
    manifest, records = dataset
    assert os.path.basename(manifest) == "manifest.tsv"
    assert len(records) == 4
    for rec in records:
        assert list(rec.renderings) == list(KNOWN_SETTINGS)
        gt = load_image(rec.gt_path)
        assert gt.data.shape == (48, 48, 3)
        # gt headroom: gains up to 1.4 must not clip
        assert gt.data.max() <= 0.705
        for path in rec.renderings.values():
            r = load_image(path).data
            assert r.min() >= 0.0 and r.max() <= 1.0


def test_synth_dataset_casts_differ_per_setting(dataset):
    _, records = dataset
    rec = records[0]
    gt = load_image(rec.gt_path).data
    means = {}
    for setting, path in rec.renderings.items():
        means[setting] = load_image(path).data.mean(axis=(0, 1))
    # warm cast boosts red over blue, cool cast the reverse
    assert means["Tungsten2850"][0] > means["Tungsten2850"][2]
    assert means["Shade7500"][2] > means["Shade7500"][0]
    # no rendering is pixel-identical to gt (all casts jittered)
    for setting, path in rec.renderings.items():
        assert not np.array_equal(load_image(path).data, gt)


def test_synth_dataset_deterministic(tmp_path):
    m1 = synth_dataset(2, 24, seed=9, out_dir=tmp_path / "a")
    m2 = synth_dataset(2, 24, seed=9, out_dir=tmp_path / "b")
    files1 = sorted(os.listdir(tmp_path / "a"))
    files2 = sorted(os.listdir(tmp_path / "b"))
    assert files1 == files2
    for name in files1:
        b1 = (tmp_path / "a" / name).read_bytes()
        b2 = (tmp_path / "b" / name).read_bytes()
        if name.endswith(".tsv"):
            continue  # manifest paths identical anyway, compared below
        assert b1 == b2, name
    assert (tmp_path / "a" / "manifest.tsv").read_text() == (
        tmp_path / "b" / "manifest.tsv"
    ).read_text()


def test_synth_dataset_seed_changes_content(tmp_path):
    synth_dataset(2, 24, seed=1, out_dir=tmp_path / "a")
    synth_dataset(2, 24, seed=2, out_dir=tmp_path / "b")
    b1 = (tmp_path / "a" / "scene_000_gt.png").read_bytes()
    b2 = (tmp_path / "b" / "scene_000_gt.png").read_bytes()
    assert b1 != b2


def test_synth_dataset_validation(tmp_path):
    with pytest.raises(ValueError):
        synth_dataset(1, 24, seed=0, out_dir=tmp_path / "x")
    with pytest.raises(ValueError):
        synth_dataset(2, 4, seed=0, out_dir=tmp_path / "y")


def test_image_cache_loads_once(dataset, monkeypatch):
    _, records = dataset
    cache = ImageCache()
    calls = []
    import wblut.pipeline as pl

    real = pl.load_image

    def counting(path):
        calls.append(path)
        return real(path)

    monkeypatch.setattr(pl, "load_image", counting)
    cache.load(records[0].gt_path)
    cache.load(records[0].gt_path)
    assert len(calls) == 1
