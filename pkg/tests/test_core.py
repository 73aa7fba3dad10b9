import numpy as np
import pytest
from PIL import Image

from pairforge.core import (
    ConfigError,
    FilterConfig,
    FilterVerdict,
    ImageBuffer,
    LoadError,
    PairRecord,
    RegionMaskSet,
    MASK_KEYS,
    format_filter_config,
    load_filter_config,
    load_image,
    load_mask,
    load_region_masks,
    parse_filter_config,
    save_image,
    save_mask,
    verdict_from_statistic,
)


def make_mask_paths(prefix="m"):
    return {key: f"{prefix}/{key}.png" for key in MASK_KEYS}


class TestImageBuffer:
    def test_round_trip_4x4_rgb(self, tmp_path):
        arr = np.arange(48, dtype=np.uint8).reshape(4, 4, 3)
        path = tmp_path / "img.png"
        Image.fromarray(arr, "RGB").save(path)
        img = load_image(path)
        assert (img.width, img.height, img.channels) == (4, 4, 3)
        assert img.data.size == 48
        assert np.array_equal(img.pixels, arr)

    def test_flat_offset_bijection(self):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        img = ImageBuffer.from_array(arr)
        for y in range(5):
            for x in range(7):
                for c in range(3):
                    offset = y * 7 * 3 + x * 3 + c
                    assert img.data[offset] == arr[y, x, c]

    def test_grayscale_promoted_to_3d(self):
        img = ImageBuffer.from_array(np.zeros((4, 6), dtype=np.uint8))
        assert img.channels == 1
        assert img.pixels.shape == (4, 6, 1)

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((4, 4, 2), dtype=np.uint8))

    def test_rejects_wrong_dtype(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((4, 4, 3), dtype=np.float32))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((0, 4, 3), dtype=np.uint8))

    def test_pixels_read_only(self):
        img = ImageBuffer.from_array(np.zeros((2, 2, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1


class TestLoadImage:
    def test_16_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(path)
        with pytest.raises(LoadError, match="unsupported bit depth"):
            load_image(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "broken.png"
        path.write_bytes(b"\x89PNG\r\n\x1a\n garbage")
        with pytest.raises(LoadError, match="broken.png"):
            load_image(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(LoadError):
            load_image(tmp_path / "nope.png")

    def test_alpha_dropped(self, tmp_path):
        arr = np.zeros((4, 4, 4), dtype=np.uint8)
        arr[..., 3] = 255
        arr[..., 0] = 10
        path = tmp_path / "rgba.png"
        Image.fromarray(arr, "RGBA").save(path)
        img = load_image(path)
        assert img.channels == 3
        assert img.pixels[0, 0, 0] == 10

    def test_palette_expanded(self, tmp_path):
        path = tmp_path / "pal.png"
        Image.fromarray(np.arange(16, dtype=np.uint8).reshape(4, 4), "L").convert(
            "P"
        ).save(path)
        assert load_image(path).channels == 3

    def test_grayscale_kept(self, tmp_path):
        path = tmp_path / "gray.png"
        Image.fromarray(np.full((4, 4), 9, dtype=np.uint8), "L").save(path)
        img = load_image(path)
        assert img.channels == 1
        assert img.pixels[0, 0, 0] == 9


class TestLoadMask:
    def test_all_255_maps_to_ones(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.full((4, 4), 255, dtype=np.uint8), "L").save(path)
        assert load_mask(path, (4, 4)).sum() == 16

    def test_all_zero_maps_to_zeros(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8), "L").save(path)
        assert load_mask(path, (4, 4)).sum() == 0

    def test_binarization_threshold_127(self, tmp_path):
        arr = np.array([[127, 128], [0, 255]], dtype=np.uint8)
        path = tmp_path / "m.png"
        Image.fromarray(arr, "L").save(path)
        assert load_mask(path, (2, 2)).tolist() == [[0, 1], [0, 1]]

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.zeros((8, 8), dtype=np.uint8), "L").save(path)
        with pytest.raises(LoadError, match="dimension mismatch"):
            load_mask(path, (4, 4))

    def test_rgb_mask_rejected(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8), "RGB").save(path)
        with pytest.raises(LoadError, match="single-channel"):
            load_mask(path, (4, 4))

    def test_save_load_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        mask = rng.integers(0, 2, size=(16, 9), dtype=np.uint8)
        path = tmp_path / "m.png"
        save_mask(mask, path)
        assert np.array_equal(load_mask(path, (16, 9)), mask)

    def test_save_image_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        img = ImageBuffer.from_array(rng.integers(0, 256, (6, 5, 3), dtype=np.uint8))
        path = tmp_path / "i.png"
        save_image(img, path)
        assert np.array_equal(load_image(path).pixels, img.pixels)

    def test_load_region_masks(self, tmp_path):
        for name in ("face", "eyes", "teeth", "contour"):
            save_mask(np.ones((4, 4), dtype=np.uint8), tmp_path / f"{name}.png")
        masks = load_region_masks(
            {n: f"{n}.png" for n in ("face", "eyes", "teeth", "contour")},
            (4, 4),
            base_dir=tmp_path,
        )
        assert masks.dimensions == (4, 4)
        assert masks.face.sum() == 16


class TestRegionMaskSet:
    def test_mismatched_dims_rejected(self):
        ones = np.ones((4, 4), dtype=np.uint8)
        with pytest.raises(ValueError, match="shape"):
            RegionMaskSet(ones, ones, np.ones((3, 4), dtype=np.uint8), ones)

    def test_non_binary_rejected(self):
        ones = np.ones((4, 4), dtype=np.uint8)
        bad = np.full((4, 4), 255, dtype=np.uint8)
        with pytest.raises(ValueError, match="values"):
            RegionMaskSet(ones, ones, ones, bad)


class TestFilterVerdict:
    def test_unknown_filter_name(self):
        with pytest.raises(ValueError):
            FilterVerdict("oops", True, 0.0, 0.1, "")

    def test_negative_statistic(self):
        with pytest.raises(ValueError):
            FilterVerdict("background", True, -1.0, 0.1, "")

    def test_greater_direction(self):
        assert verdict_from_statistic("misalignment", 0.2, 0.1, "").passed is False
        assert verdict_from_statistic("misalignment", 0.1, 0.1, "").passed is True

    def test_not_greater_direction(self):
        # makeup fails when the statistic fails to exceed the threshold
        assert verdict_from_statistic("makeup_failed", 0.05, 0.05, "").passed is False
        assert verdict_from_statistic("makeup_failed", 0.051, 0.05, "").passed is True

    def test_background_strict(self):
        assert verdict_from_statistic("background", 0.02, 0.02, "").passed is True
        assert verdict_from_statistic("background", 0.021, 0.02, "").passed is False


class TestFilterConfig:
    def test_defaults_valid(self):
        cfg = FilterConfig()
        assert cfg.threshold_mode == "fraction"

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            FilterConfig(threshold_mode="percent")

    def test_intensity_out_of_range(self):
        with pytest.raises(ConfigError):
            FilterConfig(mu_thresh=300)

    def test_fraction_above_one(self):
        with pytest.raises(ConfigError):
            FilterConfig(face_thresh=1.5)

    def test_absolute_mode_allows_counts(self):
        cfg = FilterConfig(threshold_mode="absolute", face_thresh=500)
        assert cfg.face_thresh == 500

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            FilterConfig(bg_pixel_thresh=-0.1)


class TestConfigFile:
    def test_parse_and_defaults(self):
        cfg = parse_filter_config("face_thresh = 0.2\n# comment\n\nmu_thresh = 30\n")
        assert cfg.face_thresh == 0.2
        assert cfg.mu_thresh == 30
        assert cfg.eye_thresh == FilterConfig().eye_thresh

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_filter_config("faces_thresh = 0.2")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_filter_config("mu_thresh = 1\nmu_thresh = 2")

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            parse_filter_config("mu_thresh 20")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_filter_config("mu_thresh = abc")

    def test_format_parse_round_trip(self, tmp_path):
        cfg = FilterConfig(face_thresh=0.25, threshold_mode="fraction",
                           min_region_area=64)
        path = tmp_path / "filters.cfg"
        path.write_text(format_filter_config(cfg))
        assert load_filter_config(path) == cfg

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_filter_config(tmp_path / "absent.cfg")


class TestPairRecord:
    def test_valid(self):
        rec = PairRecord("a", "s.png", "g.png", "tag", make_mask_paths())
        assert rec.passed is None

    def test_missing_mask_key(self):
        paths = make_mask_paths()
        del paths["source_eyes"]
        with pytest.raises(ValueError, match="missing mask paths"):
            PairRecord("a", "s.png", "g.png", "tag", paths)

    def test_unknown_mask_key(self):
        paths = make_mask_paths()
        paths["source_nose"] = "x.png"
        with pytest.raises(ValueError, match="unknown mask keys"):
            PairRecord("a", "s.png", "g.png", "tag", paths)

    def test_verdict_order_enforced(self):
        verdicts = [
            verdict_from_statistic("background", 0.0, 0.1, ""),
            verdict_from_statistic("misalignment", 0.0, 0.1, ""),
            verdict_from_statistic("makeup_failed", 1.0, 0.05, ""),
        ]
        with pytest.raises(ValueError, match="out of order"):
            PairRecord("a", "s.png", "g.png", "tag", make_mask_paths(),
                       verdicts=verdicts)
