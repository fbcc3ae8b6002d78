import numpy as np
import pytest

from segdehaze.errors import ConfigError, DataError
from segdehaze.scatter import SceneConfig, synth_scene
from segdehaze.segbackend import (
    TIERS,
    SegmenterKind,
    SegmenterSpec,
    cc_segment,
    degradation_curve,
    load_masks,
    mean_degradation,
    oracle_segment,
    segment,
)
from segdehaze.segcodec import SegMaskSet, save_mask_dir

DEGRADE = SceneConfig(regions=20, depth_mode="region", depth_range=(1.0, 5.0), airlight_range=(0.8, 1.0))


def is_area_descending(masks):
    return masks.areas == sorted(masks.areas, reverse=True)


class TestOracle:
    def test_single_region(self):
        masks = oracle_segment(synth_scene(0, SceneConfig(regions=1)))
        assert len(masks) == 1 and masks[0].all()

    def test_partition(self):
        scene = synth_scene(1, SceneConfig(regions=50))
        masks = oracle_segment(scene)
        assert len(masks) == 50
        stack = np.stack(masks.masks).astype(int)
        assert np.all(stack.sum(axis=0) == 1)
        assert is_area_descending(masks)

    def test_haze_blind(self):
        scene = synth_scene(2, SceneConfig(regions=12))
        spec = TIERS["oracle"]
        clean = segment(spec, image=scene.radiance, scene=scene)
        hazy = segment(spec, image=scene.hazy(density=0.3), scene=scene)
        assert clean == hazy

    def test_needs_labels(self):
        with pytest.raises(DataError):
            segment(TIERS["oracle"], image=np.zeros((4, 4, 3)))


class TestConnectedComponents:
    def test_constant_image(self):
        masks = cc_segment(np.full((32, 32, 3), 0.4))
        assert len(masks) == 1 and masks[0].all()

    def test_two_tone(self):
        img = np.zeros((32, 32, 3))
        img[:, 16:] = 0.9
        masks = cc_segment(img, SegmenterSpec(levels=2, min_area=16))
        assert len(masks) == 2

    def test_four_connectivity(self):
        # two diagonal quadrants touch only at a corner
        img = np.zeros((16, 16, 3))
        img[:8, :8] = img[8:, 8:] = 0.9
        masks = cc_segment(img, SegmenterSpec(levels=2, min_area=1))
        assert len(masks) == 4

    def test_min_area_and_empty(self):
        rng = np.random.default_rng(0)
        noise = rng.uniform(0, 1, (16, 16, 3))
        assert len(cc_segment(noise, SegmenterSpec(levels=8, min_area=200))) == 0

    def test_deterministic_and_ordered(self):
        scene = synth_scene(3, DEGRADE)
        a = cc_segment(scene.hazy(density=0.1))
        b = cc_segment(scene.hazy(density=0.1))
        assert a == b
        assert is_area_descending(a)

    def test_haze_reduces_count(self):
        scene = synth_scene(4, DEGRADE)
        assert len(cc_segment(scene.hazy(density=0.3))) <= len(cc_segment(scene.radiance))

    def test_wrong_kind(self):
        with pytest.raises(ConfigError):
            cc_segment(np.zeros((4, 4, 3)), TIERS["oracle"])


class TestSpec:
    def test_invariants(self):
        with pytest.raises(ConfigError):
            SegmenterSpec(levels=1)
        with pytest.raises(ConfigError):
            SegmenterSpec(min_area=0)
        with pytest.raises(ConfigError):
            SegmenterSpec(kind=SegmenterKind.FILE)


class TestFileBackend:
    def _write(self, root, frame, n, shape=(32, 32), seed=0):
        labels = np.random.default_rng(seed).integers(0, n, size=shape)
        labels.reshape(-1)[:n] = np.arange(n)
        masks = SegMaskSet([labels == i for i in range(n)], shape)
        save_mask_dir(masks, root / frame)
        return masks

    def test_round_trip(self, tmp_path):
        masks = self._write(tmp_path, "f0", 5)
        assert load_masks(tmp_path, "f0") == masks

    def test_order_preserved_for_130(self, tmp_path):
        masks = self._write(tmp_path, "big", 130, shape=(64, 64))
        loaded = load_masks(tmp_path, "big")
        assert len(loaded) == 130 and loaded == masks

    def test_missing_file(self, tmp_path):
        self._write(tmp_path, "f1", 3)
        (tmp_path / "f1" / "mask_000.png").unlink()
        with pytest.raises(FileNotFoundError):
            load_masks(tmp_path, "f1")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_masks(tmp_path, "nothing")

    def test_segment_sorts_by_area(self, tmp_path):
        a = np.zeros((8, 8), bool)
        a[0, :2] = True
        save_mask_dir(SegMaskSet([a, ~a]), tmp_path / "f")
        out = segment(SegmenterSpec(SegmenterKind.FILE, mask_dir=str(tmp_path)), frame_id="f")
        assert out.areas == [62, 2]


class TestDegradation:
    def test_self_baseline(self):
        curve = degradation_curve(synth_scene(0, DEGRADE), [0.0], TIERS["middle"])
        assert curve.detection_rate == [100.0]

    def test_oracle_flat(self):
        curve = degradation_curve(synth_scene(1, DEGRADE), [0, 0.1, 0.2, 0.5], TIERS["oracle"])
        assert curve.detection_rate == [100.0] * 4

    def test_cc_curve_on_fixed_scene(self):
        curve = degradation_curve(synth_scene(5, DEGRADE), [0, 0.05, 0.1, 0.2], TIERS["middle"])
        rates = curve.detection_rate
        assert rates[0] == 100.0
        assert all(b <= a for a, b in zip(rates, rates[1:]))
        assert rates[-1] < 100.0

    def test_bad_betas(self):
        scene = synth_scene(0, DEGRADE)
        with pytest.raises(ConfigError):
            degradation_curve(scene, [], TIERS["middle"])
        with pytest.raises(ConfigError):
            degradation_curve(scene, [0.1, 0.2], TIERS["middle"])
        with pytest.raises(ConfigError):
            degradation_curve(scene, [0, 0.2, 0.1], TIERS["middle"])

    def test_degenerate_baseline(self):
        scene = synth_scene(0, SceneConfig(height=8, width=8, regions=4))
        with pytest.raises(DataError):
            degradation_curve(scene, [0, 0.1], SegmenterSpec(levels=8, min_area=64 * 64))

    def test_csv(self, tmp_path):
        scenes = [synth_scene(i, DEGRADE) for i in range(3)]
        curve = mean_degradation(scenes, [0, 0.1], TIERS["middle"])
        curve.write_csv(tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "beta,segment_count,detection_rate_percent"
        assert len(lines) == 3
        assert float(lines[1].split(",")[2]) == 100.0

    def test_mean_statistically_nonincreasing(self):
        scenes = [synth_scene(100 + i, DEGRADE) for i in range(20)]
        rates = mean_degradation(scenes, [0, 0.05, 0.1, 0.2], TIERS["middle"]).detection_rate
        assert all(b <= a for a, b in zip(rates, rates[1:]))
