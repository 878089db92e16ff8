import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import resize_scalar, srgb_to_lab_scalar
from wblut.image import (
    ColorSpace,
    ColorSpaceError,
    CorruptImageError,
    ImageBuffer,
    UnsupportedImageError,
    crop_and_flip,
    lab_to_srgb,
    load_image,
    resize_bilinear,
    save_image,
    srgb_to_lab,
    srgb_to_lab_values,
)


def _buf(arr, space=ColorSpace.SRGB):
    return ImageBuffer(np.asarray(arr, dtype=np.float64), space)


def _rand_img(rng, h, w):
    return _buf(rng.uniform(0.0, 1.0, size=(h, w, 3)))


class TestImageBuffer:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((4, 4)), ColorSpace.SRGB)
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((4, 4, 4)), ColorSpace.SRGB)
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((0, 4, 3)), ColorSpace.SRGB)

    def test_space_must_be_enum(self):
        with pytest.raises(TypeError):
            ImageBuffer(np.zeros((2, 2, 3)), "srgb")

    def test_dims_and_pixels_view(self):
        img = _buf(np.zeros((3, 5, 3)))
        assert img.height == 3 and img.width == 5
        assert img.pixels().shape == (15, 3)


class TestFileIO:
    def test_png_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        codes = rng.integers(0, 256, size=(11, 9, 3), dtype=np.uint8)
        img = _buf(codes / 255.0)
        p = tmp_path / "a.png"
        save_image(img, p)
        back = load_image(p)
        assert back.space is ColorSpace.SRGB
        np.testing.assert_array_equal(back.data, codes / 255.0)

    def test_ppm_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        codes = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        img = _buf(codes / 255.0)
        p = tmp_path / "a.ppm"
        save_image(img, p)
        np.testing.assert_array_equal(load_image(p).data, codes / 255.0)

    def test_formats_agree(self, tmp_path):
        rng = np.random.default_rng(9)
        img = _rand_img(rng, 6, 4)
        save_image(img, tmp_path / "x.png")
        save_image(img, tmp_path / "x.ppm")
        np.testing.assert_array_equal(
            load_image(tmp_path / "x.png").data, load_image(tmp_path / "x.ppm").data
        )

    def test_quantization_rounds_half_up(self, tmp_path):
        # 2.5/255 * 255 = 2.5 sits exactly between codes; half-up gives 3
        # (bankers rounding would give 2)
        img = _buf(np.full((1, 2, 3), 2.5 / 255.0))
        save_image(img, tmp_path / "q.ppm")
        assert np.all(load_image(tmp_path / "q.ppm").data == 3 / 255.0)

    def test_quantization_clamps(self, tmp_path):
        img = _buf(np.array([[[-0.4, 1.7, 0.5]]]))
        save_image(img, tmp_path / "c.ppm")
        np.testing.assert_array_equal(
            load_image(tmp_path / "c.ppm").data[0, 0], [0.0, 1.0, 128 / 255.0]
        )

    def test_load_sniffs_magic_not_extension(self, tmp_path):
        img = _buf(np.full((2, 2, 3), 0.25))
        save_image(img, tmp_path / "real.ppm")
        disguised = tmp_path / "fake.png"
        disguised.write_bytes((tmp_path / "real.ppm").read_bytes())
        np.testing.assert_array_equal(load_image(disguised).data, load_image(tmp_path / "real.ppm").data)

    def test_ppm_header_comments(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6 # comment\n# another\n2 1\n255\n" + bytes(6))
        assert load_image(p).data.shape == (1, 2, 3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_unknown_format_rejected(self, tmp_path):
        p = tmp_path / "x.jpg"
        p.write_bytes(b"\xff\xd8\xff\xe0" + bytes(64))
        with pytest.raises(UnsupportedImageError):
            load_image(p)

    def test_ascii_ppm_rejected(self, tmp_path):
        p = tmp_path / "x.ppm"
        p.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(UnsupportedImageError):
            load_image(p)

    def test_wide_ppm_rejected(self, tmp_path):
        p = tmp_path / "x.ppm"
        p.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(UnsupportedImageError):
            load_image(p)

    def test_truncated_ppm(self, tmp_path):
        p = tmp_path / "x.ppm"
        p.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
        with pytest.raises(CorruptImageError):
            load_image(p)

    def test_truncated_png(self, tmp_path):
        good = tmp_path / "good.png"
        save_image(_buf(np.zeros((8, 8, 3))), good)
        bad = tmp_path / "bad.png"
        bad.write_bytes(good.read_bytes()[:40])
        with pytest.raises(CorruptImageError):
            load_image(bad)

    def test_rgba_png_rejected(self, tmp_path):
        from PIL import Image

        p = tmp_path / "rgba.png"
        Image.new("RGBA", (4, 4)).save(p)
        with pytest.raises(UnsupportedImageError):
            load_image(p)

    def test_gray_png_rejected(self, tmp_path):
        from PIL import Image

        p = tmp_path / "gray.png"
        Image.new("L", (4, 4)).save(p)
        with pytest.raises(UnsupportedImageError):
            load_image(p)

    def test_save_unknown_extension(self, tmp_path):
        with pytest.raises(UnsupportedImageError):
            save_image(_buf(np.zeros((2, 2, 3))), tmp_path / "x.tiff")

    def test_save_requires_srgb(self, tmp_path):
        img = _buf(np.full((2, 2, 3), 0.5), ColorSpace.LAB)
        with pytest.raises(ColorSpaceError):
            save_image(img, tmp_path / "x.png")


class TestLabConversion:
    # oracle spot values from the scalar reference implementation
    FROZEN = [
        ((1.0, 1.0, 1.0), (100.0, 0.0, 0.0)),
        ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        ((0.5, 0.5, 0.5), (53.388964741114, 0.0, 0.0)),
        ((1.0, 0.0, 0.0), (53.240791833281, 80.092469544800, 67.203192536497)),
        ((0.0, 1.0, 0.0), (87.734718894974, -86.182701516121, 83.179314540933)),
        ((0.0, 0.0, 1.0), (32.297009322950, 79.187526784347, -107.860164529838)),
        ((0.2, 0.7, 0.9), (68.332822738721, -17.151640749575, -35.243373960874)),
    ]

    def test_frozen_values(self):
        rgb = np.array([c for c, _ in self.FROZEN])
        lab = np.array([l for _, l in self.FROZEN])
        np.testing.assert_allclose(srgb_to_lab_values(rgb), lab, atol=1e-9)

    def test_white_is_exact(self):
        lab = srgb_to_lab_values(np.array([1.0, 1.0, 1.0]))
        assert lab[0] == 100.0 and lab[1] == 0.0 and lab[2] == 0.0

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        rgb = rng.uniform(0, 1, size=(300, 3))
        want = np.array([srgb_to_lab_scalar(*p) for p in rgb])
        np.testing.assert_allclose(srgb_to_lab_values(rgb), want, atol=1e-10)

    def test_packed_range(self):
        rng = np.random.default_rng(4)
        img = _rand_img(rng, 16, 16)
        lab = srgb_to_lab(img)
        assert lab.space is ColorSpace.LAB
        assert lab.data.min() >= 0.0 and lab.data.max() <= 1.0

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        img = _rand_img(rng, 12, 10)
        back = lab_to_srgb(srgb_to_lab(img))
        assert back.space is ColorSpace.SRGB
        np.testing.assert_allclose(back.data, img.data, atol=1e-10)

    def test_out_of_gamut_clamps(self):
        # extreme packed-LAB corners decode to colors outside sRGB
        wild = _buf(np.array([[[1.0, 1.0, 0.0], [0.2, 0.0, 1.0], [1.2, 0.5, -0.1]]]), ColorSpace.LAB)
        out = lab_to_srgb(wild)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_space_checks(self):
        img = _buf(np.full((2, 2, 3), 0.5))
        with pytest.raises(ColorSpaceError):
            lab_to_srgb(img)
        with pytest.raises(ColorSpaceError):
            srgb_to_lab(srgb_to_lab(img))

    @settings(max_examples=30, deadline=None)
    @given(
        r=st.floats(0, 1, allow_nan=False),
        g=st.floats(0, 1, allow_nan=False),
        b=st.floats(0, 1, allow_nan=False),
    )
    def test_round_trip_property(self, r, g, b):
        img = _buf(np.array([[[r, g, b]]]))
        back = lab_to_srgb(srgb_to_lab(img))
        np.testing.assert_allclose(back.data, img.data, atol=1e-9)


class TestResize:
    def test_checkerboard_average(self):
        img = _buf(np.array([[[0.0] * 3, [1.0] * 3], [[1.0] * 3, [0.0] * 3]]))
        out = resize_bilinear(img, 1, 1)
        np.testing.assert_allclose(out.data, 0.5)

    def test_same_size_copies(self):
        rng = np.random.default_rng(11)
        img = _rand_img(rng, 5, 6)
        out = resize_bilinear(img, 6, 5)
        np.testing.assert_array_equal(out.data, img.data)
        assert out.data is not img.data

    def test_constant_stays_constant(self):
        img = _buf(np.full((3, 4, 3), 0.37))
        out = resize_bilinear(img, 9, 7)
        np.testing.assert_allclose(out.data, 0.37)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(12)
        img = _rand_img(rng, 7, 5)
        for ow, oh in [(3, 4), (10, 9), (5, 7), (1, 1), (2, 13)]:
            got = resize_bilinear(img, ow, oh)
            want = resize_scalar(img.data, ow, oh)
            np.testing.assert_allclose(got.data, want, atol=1e-12)

    def test_preserves_space(self):
        img = _buf(np.full((4, 4, 3), 0.5), ColorSpace.LAB)
        assert resize_bilinear(img, 2, 2).space is ColorSpace.LAB

    def test_invalid_target(self):
        img = _buf(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            resize_bilinear(img, 0, 2)


class TestCropFlip:
    def test_crop_contents(self):
        data = np.arange(5 * 6 * 3, dtype=np.float64).reshape(5, 6, 3) / 100.0
        img = _buf(data)
        out = crop_and_flip(img, 2, 1, 3)
        np.testing.assert_array_equal(out.data, data[1:4, 2:5])

    def test_flips(self):
        data = np.arange(4 * 4 * 3, dtype=np.float64).reshape(4, 4, 3) / 50.0
        img = _buf(data)
        h = crop_and_flip(img, 0, 0, 4, hflip=True)
        np.testing.assert_array_equal(h.data, data[:, ::-1])
        v = crop_and_flip(img, 0, 0, 4, vflip=True)
        np.testing.assert_array_equal(v.data, data[::-1, :])
        hv = crop_and_flip(img, 0, 0, 4, hflip=True, vflip=True)
        np.testing.assert_array_equal(hv.data, data[::-1, ::-1])

    def test_out_of_bounds(self):
        img = _buf(np.zeros((4, 4, 3)))
        with pytest.raises(ValueError):
            crop_and_flip(img, 2, 0, 3)
        with pytest.raises(ValueError):
            crop_and_flip(img, -1, 0, 2)

    def test_returns_copy(self):
        img = _buf(np.zeros((4, 4, 3)))
        out = crop_and_flip(img, 0, 0, 2)
        out.data[0, 0, 0] = 9.0
        assert img.data[0, 0, 0] == 0.0
