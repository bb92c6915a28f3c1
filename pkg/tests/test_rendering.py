"""PNG I/O, heatmap palette, and overlay behavior."""

import numpy as np
import pytest
from PIL import Image

from cpda.core import SaliencyMap
from cpda.errors import DimensionMismatch, UnsupportedFormat
from cpda.rendering import heatmap, load_png, overlay_mask, save_png


def make_map(values):
    return SaliencyMap(values=np.asarray(values, dtype=np.float64), class_index=0,
                       method="cpda", patch_size=2, stride=1, base_score=0.5)


class TestPngIO:
    def test_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        path = tmp_path / "img.png"
        save_png(img, path)
        np.testing.assert_array_equal(load_png(path), img)

    def test_grayscale_round_trip_as_single_channel(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (16, 20, 1), dtype=np.uint8)
        path = tmp_path / "gray.png"
        save_png(img, path)
        back = load_png(path)
        assert back.shape == (16, 20, 1)
        np.testing.assert_array_equal(back, img)

    def test_truncated_file_raises(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"\x89PNG\r\n\x1a\nnope")
        with pytest.raises((UnsupportedFormat, OSError)):
            load_png(path)

    def test_palette_with_transparency_rejected(self, tmp_path):
        im = Image.new("P", (4, 4))
        im.putpalette([i for i in range(256) for _ in range(3)][:768])
        path = tmp_path / "pal.png"
        im.save(path, transparency=0)
        with pytest.raises(UnsupportedFormat):
            load_png(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        im = Image.new("I;16", (4, 4))
        path = tmp_path / "deep.png"
        im.save(path)
        with pytest.raises(UnsupportedFormat):
            load_png(path)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_png(tmp_path / "absent.png")


class TestHeatmap:
    def test_zero_map_is_white(self):
        out = heatmap(make_map(np.zeros((3, 4))))
        assert (out == 255).all()

    def test_extremes_hit_pure_red_and_blue(self):
        out = heatmap(make_map([[2.5, -2.5]]))
        assert out[0, 0].tolist() == [255, 0, 0]
        assert out[0, 1].tolist() == [0, 0, 255]

    def test_half_magnitude_blend_rounds_half_up(self):
        out = heatmap(make_map([[1.0, 0.5]]))
        assert out[0, 1].tolist() == [255, 128, 128]

    def test_sign_equivariance_swaps_red_and_blue(self):
        rng = np.random.default_rng(2)
        values = rng.standard_normal((6, 6))
        fwd = heatmap(make_map(values))
        rev = heatmap(make_map(-values))
        np.testing.assert_array_equal(fwd[:, :, 0], rev[:, :, 2])
        np.testing.assert_array_equal(fwd[:, :, 2], rev[:, :, 0])
        np.testing.assert_array_equal(fwd[:, :, 1], rev[:, :, 1])


class TestOverlay:
    def test_zero_map_blacks_out_everything(self):
        img = np.full((4, 4, 3), 200, dtype=np.uint8)
        out = overlay_mask(img, make_map(np.zeros((4, 4))))
        assert (out == 0).all()

    def test_uniform_positive_map_keeps_original(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, (5, 5, 3), dtype=np.uint8)
        out = overlay_mask(img, make_map(np.full((5, 5), 0.7)))
        np.testing.assert_array_equal(out, img)

    def test_half_alpha_halves_values(self):
        img = np.full((1, 2, 1), 200, dtype=np.uint8)
        out = overlay_mask(img, make_map([[1.0, 0.5]]))
        assert out[0, 0, 0] == 200
        assert out[0, 1, 0] == 100

    def test_negative_relevance_is_blocked_like_zero(self):
        img = np.full((1, 2, 1), 80, dtype=np.uint8)
        out = overlay_mask(img, make_map([[1.0, -5.0]]))
        assert out[0, 1, 0] == 0

    def test_never_brightens(self):
        rng = np.random.default_rng(4)
        img = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        values = rng.standard_normal((8, 8))
        out = overlay_mask(img, make_map(values))
        assert (out.astype(int) <= img.astype(int)).all()

    def test_dimension_mismatch(self):
        img = np.zeros((4, 4, 1), dtype=np.uint8)
        with pytest.raises(DimensionMismatch):
            overlay_mask(img, make_map(np.zeros((3, 3))))
