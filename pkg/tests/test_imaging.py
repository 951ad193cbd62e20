"""Colorspace, resampling, pair synthesis, dataset generation, augmentation."""

import math

import numpy as np
import pytest

from scsnet.errors import DataError
from scsnet.imaging import (
    ELASTIC_BASE,
    MIN_CHANNEL_STD,
    LabImage,
    RgbImage,
    augment_reference,
    bicubic_downsample,
    elastic_field,
    lab_to_rgb,
    load_rgb,
    make_pair,
    read_manifest,
    resize_bicubic,
    rgb_to_lab,
    save_rgb,
    synth_dataset,
    write_manifest,
)


def solid(r, g, b, size=8):
    return RgbImage(np.stack([np.full((size, size), v) for v in (r, g, b)]))


class TestColorspace:
    def test_black(self):
        lab = rgb_to_lab(solid(0, 0, 0))
        np.testing.assert_allclose(lab.data, 0.0, atol=1e-12)

    def test_white(self):
        # CIE L of the white point is 100 -> normalized 1; a, b vanish
        lab = rgb_to_lab(solid(1, 1, 1))
        np.testing.assert_allclose(lab.data[0], 1.0, atol=1e-3)
        np.testing.assert_allclose(lab.data[1:], 0.0, atol=1e-3)

    def test_round_trip_10k_colors(self):
        rng = np.random.default_rng(0)
        img = RgbImage(rng.uniform(0, 1, (3, 100, 100)))
        back = lab_to_rgb(rgb_to_lab(img))
        assert np.abs(back.data - img.data).max() < 1e-3

    def test_l_channel_view(self):
        lab = rgb_to_lab(solid(0.3, 0.6, 0.1))
        assert lab.l_channel().shape == (1, 8, 8)

    def test_ranges_clamped(self):
        lab = LabImage(np.stack([np.full((4, 4), 2.0), np.full((4, 4), -3.0), np.full((4, 4), 3.0)]))
        assert lab.data[0].max() <= 1.0
        assert lab.data[1].min() >= -1.0
        assert lab.data[2].max() <= 1.0


def _cubic_ref(u, a=-0.5):
    u = abs(u)
    if u <= 1:
        return (a + 2) * u**3 - (a + 3) * u**2 + 1
    if u < 2:
        return a * u**3 - 5 * a * u**2 + 8 * a * u - 4 * a
    return 0.0


def _bicubic_direct(img, out_h, out_w):
    """Direct 2-d convolution oracle: per output pixel, loop over taps."""
    c, h, w = img.shape
    out = np.zeros((c, out_h, out_w))
    sy, sx = out_h / h, out_w / w
    ky, kx = min(sy, 1.0), min(sx, 1.0)
    for i in range(out_h):
        cy = (i + 0.5) / sy - 0.5
        y_taps = range(int(math.floor(cy - 2 / ky)) + 1, int(math.floor(cy - 2 / ky)) + 1 + int(math.ceil(4 / ky)) + 2)
        for j in range(out_w):
            cx = (j + 0.5) / sx - 0.5
            x_taps = range(int(math.floor(cx - 2 / kx)) + 1, int(math.floor(cx - 2 / kx)) + 1 + int(math.ceil(4 / kx)) + 2)
            acc = np.zeros(c)
            wsum = 0.0
            for ty in y_taps:
                wy = _cubic_ref((cy - ty) * ky) * ky
                for tx in x_taps:
                    wx = _cubic_ref((cx - tx) * kx) * kx
                    weight = wy * wx
                    acc += weight * img[:, min(max(ty, 0), h - 1), min(max(tx, 0), w - 1)]
                    wsum += weight
            out[:, i, j] = acc / wsum
    return out


class TestBicubic:
    def test_constant(self):
        img = solid(0.4, 0.4, 0.4, 16)
        out = bicubic_downsample(img, 2.0)
        np.testing.assert_allclose(out.data, 0.4, atol=1e-7)

    def test_shape(self):
        img = RgbImage(np.random.default_rng(0).uniform(0, 1, (3, 64, 64)))
        assert bicubic_downsample(img, 4.0).size == (16, 16)

    @pytest.mark.parametrize("factor", [2.0, 2.5, 4.0])
    def test_matches_direct_convolution_oracle(self, factor):
        rng = np.random.default_rng(int(factor * 10))
        img = rng.uniform(0, 1, (3, 16, 16))
        out_h = out_w = int(16 / factor)
        fast = resize_bicubic(img, out_h, out_w)
        slow = _bicubic_direct(img, out_h, out_w)
        assert np.abs(fast - slow).max() < 1e-5

    def test_upsample_matches_oracle_too(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0, 1, (1, 8, 8))
        fast = resize_bicubic(img, 20, 12)
        slow = _bicubic_direct(img, 20, 12)
        assert np.abs(fast - slow).max() < 1e-5

    def test_down_then_up_constant(self):
        img = solid(0.7, 0.2, 0.5, 32)
        down = bicubic_downsample(img, 2.0)
        up = resize_bicubic(down.data, 32, 32)
        np.testing.assert_allclose(up, img.data, atol=1e-5)


class TestMakePair:
    def test_paper_scale_shapes(self):
        hr = RgbImage(np.random.default_rng(1).uniform(0, 1, (3, 64, 64)))
        pair = make_pair(hr, 4.0)
        assert pair.source.shape == (1, 16, 16)
        assert pair.target.data.shape == (3, 64, 64)

    def test_fractional_scale(self):
        hr = RgbImage(np.random.default_rng(2).uniform(0, 1, (3, 80, 80)))
        pair = make_pair(hr, 2.5)
        assert pair.source.shape == (1, 32, 32)
        assert pair.target.data.shape == (3, 80, 80)

    @pytest.mark.parametrize("p", [1.5, 2.5, 3.3])
    def test_shape_contract_fractional(self, p):
        hr = RgbImage(np.random.default_rng(3).uniform(0, 1, (3, 64, 64)))
        pair = make_pair(hr, p)
        hs, ws = pair.source.shape[1:]
        assert (hs, ws) == (int(64 / p), int(64 / p))
        assert pair.target.data.shape == (3, int(hs * p), int(ws * p))

    def test_grayscale_source_and_neutral_target(self):
        gray = np.full((3, 32, 32), 0.0) + np.linspace(0.2, 0.8, 32)[None, None, :]
        pair = make_pair(RgbImage(gray), 2.0)
        # a gray image has (near) zero chroma and the source is its downsampled L
        assert np.abs(pair.target.data[1:]).max() < 2e-3
        lr = bicubic_downsample(RgbImage(gray), 2.0)
        np.testing.assert_allclose(pair.source, rgb_to_lab(lr).l_channel(), atol=1e-6)

    def test_scale_at_most_one_rejected(self):
        hr = solid(0.5, 0.5, 0.5, 16)
        with pytest.raises(DataError):
            make_pair(hr, 1.0)

    def test_reference_present_when_requested(self):
        hr = RgbImage(np.random.default_rng(4).uniform(0, 1, (3, 32, 32)))
        pair = make_pair(hr, 2.0, with_reference=True, seed=1)
        assert pair.reference is not None
        assert pair.reference.data.shape == (3, 16, 16)


class TestSynthDataset:
    def test_deterministic(self):
        a = synth_dataset(42, 5, 32)
        b = synth_dataset(42, 5, 32)
        for x, y in zip(a, b):
            assert x.data.tobytes() == y.data.tobytes()

    def test_count_and_shape(self):
        imgs = synth_dataset(0, 100, 64)
        assert len(imgs) == 100
        assert all(im.data.shape == (3, 64, 64) for im in imgs)

    def test_channel_spread_scan(self):
        # the rejection rule guarantees usable spread on every emitted image
        for im in synth_dataset(7, 50, 32):
            assert im.data.std() >= MIN_CHANNEL_STD


class TestAugmentReference:
    def test_zero_alpha_identity(self):
        img = rgb_to_lab(RgbImage(np.random.default_rng(0).uniform(0, 1, (3, 16, 16))))
        out = augment_reference(img, seed=3, alpha=0.0, flip_prob=0.0)
        np.testing.assert_array_equal(out.data, img.data)

    def test_deterministic(self):
        img = rgb_to_lab(RgbImage(np.random.default_rng(1).uniform(0, 1, (3, 32, 32))))
        a = augment_reference(img, seed=9)
        b = augment_reference(img, seed=9)
        assert a.data.tobytes() == b.data.tobytes()

    def test_mean_displacement_matches_analytic_field(self):
        """Monte Carlo mean |displacement| vs the Rayleigh expectation.

        The smoothed uniform field is near-Gaussian per pixel with variance
        alpha^2 * Var(U[-1,1]) * sum(w^2) where w is the (truncated,
        normalized) Gaussian kernel; the magnitude of two such iid
        components has mean sigma * sqrt(pi/2).
        """
        h = w = 64
        alpha, sigma = 8.0, 4.0
        radius = int(4.0 * sigma + 0.5)
        x = np.arange(-radius, radius + 1)
        k1 = np.exp(-(x**2) / (2 * sigma**2))
        k1 /= k1.sum()
        sum_w2 = (k1**2).sum() ** 2  # separable 2-d kernel
        sigma_d = alpha * math.sqrt((1.0 / 3.0) * sum_w2)
        expected = sigma_d * math.sqrt(math.pi / 2)

        mags = []
        lo, hi = radius, h - radius
        for seed in range(1000):
            dy, dx = elastic_field(h, w, (seed,), alpha=alpha, sigma=sigma)
            mags.append(np.sqrt(dy[lo:hi, lo:hi] ** 2 + dx[lo:hi, lo:hi] ** 2).mean())
        measured = float(np.mean(mags))
        assert abs(measured - expected) / expected < 0.10

    def test_proportional_scaling_keeps_amplitude(self):
        # alpha and sigma stretch together with image size, so the per-pixel
        # displacement amplitude stays put while the wiggle length grows
        m32 = np.mean([np.abs(elastic_field(32, 32, (s,))[0]).mean() for s in range(20)])
        m64 = np.mean([np.abs(elastic_field(64, 64, (s,))[0]).mean() for s in range(20)])
        assert abs(m64 - m32) / m64 < 0.25
        assert ELASTIC_BASE == 64.0


class TestFileFormats:
    def test_png_round_trip(self, tmp_path):
        img = RgbImage(np.random.default_rng(0).uniform(0, 1, (3, 10, 12)))
        save_rgb(tmp_path / "x.png", img)
        back = load_rgb(tmp_path / "x.png")
        assert np.abs(back.data - img.data).max() <= 0.5 / 255 + 1e-6

    def test_ppm_round_trip(self, tmp_path):
        img = RgbImage(np.random.default_rng(1).uniform(0, 1, (3, 7, 9)))
        save_rgb(tmp_path / "x.ppm", img)
        back = load_rgb(tmp_path / "x.ppm")
        assert np.abs(back.data - img.data).max() <= 0.5 / 255 + 1e-6

    def test_manifest(self, tmp_path):
        write_manifest(tmp_path, ["a.png", "b.png"])
        paths = read_manifest(tmp_path)
        assert [p.name for p in paths] == ["a.png", "b.png"]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            read_manifest(tmp_path / "nope")

    def test_missing_image(self, tmp_path):
        with pytest.raises(DataError):
            load_rgb(tmp_path / "absent.png")
