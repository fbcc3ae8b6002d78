import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segdehaze import io
from segdehaze.errors import CapacityError, FormatError, MaskValidationError, ShapeError
from segdehaze.segcodec import (
    OverlapPolicy,
    SegMaskSet,
    decode,
    dumps_rle,
    encode,
    gray_value_for_id,
    id_for_gray_value,
    load_mask_dir,
    loads_rle,
    luma,
    save_mask_dir,
    sort_by_area,
)


def literal_algorithm(masks, shape):
    """Direct transcription of the coding loop: accumulate area * code."""
    segmask = np.zeros(shape, dtype=np.int64)
    for seg_id, area in enumerate(masks):
        area = area.astype(np.int64)
        if seg_id < 127:
            segmask = segmask + area * 2 * (seg_id + 1)
        else:
            segmask = segmask + area * (2 * (255 - seg_id) - 1)
    return segmask


def random_partition(rng, n, shape=(64, 64)):
    """``n`` disjoint nonempty masks that need not cover the frame."""
    labels = rng.integers(-1, n, size=shape)
    labels.reshape(-1)[rng.choice(labels.size, n, replace=False)] = np.arange(n)
    return SegMaskSet([labels == i for i in range(n)], shape)


@pytest.mark.parametrize("seg_id, code", [(0, 2), (127, 255), (254, 1), (126, 254)])
def test_gray_value_examples(seg_id, code):
    assert gray_value_for_id(seg_id) == code


def test_value_map_is_bijection():
    codes = [gray_value_for_id(i) for i in range(255)]
    assert sorted(codes) == list(range(1, 256))
    assert all(id_for_gray_value(c) == i for i, c in enumerate(codes))


def test_parity_splits_halves():
    assert all(gray_value_for_id(i) % 2 == 0 for i in range(127))
    assert all(gray_value_for_id(i) % 2 == 1 for i in range(127, 255))
    first = [gray_value_for_id(i) for i in range(127)]
    second = [gray_value_for_id(i) for i in range(127, 255)]
    assert first == sorted(first) and second == sorted(second, reverse=True)


def test_capacity():
    with pytest.raises(CapacityError):
        gray_value_for_id(255)
    shape = (2, 2)
    with pytest.raises(CapacityError):
        encode(SegMaskSet([np.ones(shape, bool)] * 256, shape))


def test_full_frame_single_mask():
    assert np.all(encode(SegMaskSet([np.ones((8, 8), bool)])) == 2)


def test_two_halves():
    left = np.zeros((4, 6), bool)
    left[:, :3] = True
    out = encode(SegMaskSet([left, ~left]))
    assert np.all(out[:, :3] == 2) and np.all(out[:, 3:] == 4)


def test_overlap_policies():
    full = np.ones((3, 3), bool)
    masks = SegMaskSet([full, full])
    assert np.all(encode(masks, OverlapPolicy.ADDITIVE_SATURATE) == 6)
    assert np.all(encode(masks, OverlapPolicy.LAST_WINS) == 4)


def test_additive_matches_literal_loop_and_saturates():
    rng = np.random.default_rng(0)
    masks = SegMaskSet([rng.random((16, 16)) < 0.3 for _ in range(140)])
    expected = np.minimum(literal_algorithm(masks.masks, (16, 16)), 255)
    assert np.array_equal(encode(masks, OverlapPolicy.ADDITIVE_SATURATE), expected)
    assert expected.max() == 255


def test_disjoint_encode_matches_literal_loop():
    masks = random_partition(np.random.default_rng(1), 200)
    assert np.array_equal(encode(masks), literal_algorithm(masks.masks, masks.shape))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        encode(SegMaskSet([np.ones((3, 3), bool), np.ones((3, 4), bool)]))


def test_round_trip_three():
    masks = random_partition(np.random.default_rng(2), 3)
    assert decode(encode(masks)) == masks


def test_decode_all_zero():
    out = decode(np.zeros((5, 5), np.uint8))
    assert len(out) == 0 and out.shape == (5, 5)


def test_checkerboard_all_255_codes():
    # 255 segments laid out as a 16 x 16 grid of 4 x 4 tiles, last tile unsegmented
    tiles = np.arange(256).reshape(16, 16).repeat(4, 0).repeat(4, 1)
    masks = SegMaskSet([tiles == i for i in range(255)])
    gray = encode(masks)
    assert sorted(np.unique(gray).tolist()) == list(range(256))
    assert decode(gray) == masks


def test_decode_rejects_gaps_and_bad_values():
    g = np.zeros((3, 3), np.uint8)
    g[0, 0] = gray_value_for_id(3)
    with pytest.raises(FormatError):
        decode(g)
    with pytest.raises(FormatError):
        decode(np.full((2, 2), 300))
    with pytest.raises(FormatError):
        decode(np.full((2, 2), 0.5))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 255), st.integers(0, 2**32 - 1))
def test_round_trip_property(n, seed):
    masks = random_partition(np.random.default_rng(seed), n)
    gray = encode(masks)
    assert decode(gray) == masks
    covered = np.any(np.stack(masks.masks), axis=0)
    assert np.array_equal(gray == 0, ~covered)


class TestLuma:
    def test_white(self):
        np.testing.assert_allclose(luma(np.ones((2, 2, 3))), 1.0, atol=1e-15)

    def test_green(self):
        img = np.zeros((2, 2, 3))
        img[..., 1] = 1
        np.testing.assert_allclose(luma(img), 0.587)

    @given(st.floats(0, 1))
    def test_neutral(self, v):
        np.testing.assert_allclose(luma(np.full((2, 2, 3), v)), v, atol=1e-12)


class TestContainers:
    def test_dir_round_trip(self, tmp_path):
        masks = random_partition(np.random.default_rng(3), 130)
        save_mask_dir(masks, tmp_path / "m")
        back = load_mask_dir(tmp_path / "m")
        assert back == masks and len(back) == 130

    def test_dir_missing_file(self, tmp_path):
        save_mask_dir(random_partition(np.random.default_rng(4), 3, (8, 8)), tmp_path / "m")
        (tmp_path / "m" / "mask_001.png").unlink()
        with pytest.raises(FileNotFoundError):
            load_mask_dir(tmp_path / "m")

    def test_dir_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_mask_dir(tmp_path)

    def test_dir_validation_names_file(self, tmp_path):
        save_mask_dir(random_partition(np.random.default_rng(5), 3, (8, 8)), tmp_path / "m")
        io.write_bitmask(tmp_path / "m" / "mask_002.png", np.zeros((8, 8), bool))
        with pytest.raises(MaskValidationError, match="mask_002"):
            load_mask_dir(tmp_path / "m")
        io.write_bitmask(tmp_path / "m" / "mask_002.png", np.ones((8, 9), bool))
        with pytest.raises(MaskValidationError, match="mask_002"):
            load_mask_dir(tmp_path / "m")

    def test_rle_round_trip(self):
        masks = random_partition(np.random.default_rng(6), 40, (20, 30))
        text = dumps_rle(masks)
        assert text.startswith("SEGRLE 1\n20 30 40\n")
        assert loads_rle(text) == masks

    def test_rle_first_pixel_set(self):
        m = np.zeros((2, 3), bool)
        m[0, 0] = m[1, 2] = True
        text = dumps_rle(SegMaskSet([m]))
        assert text.splitlines()[2] == "0 2 0 1 4 1"
        assert loads_rle(text) == SegMaskSet([m])

    def test_rle_corrupt(self):
        with pytest.raises(FormatError):
            loads_rle("SEGRLE 1\n2 2 1\n0 1 1 1\n")
        with pytest.raises(FormatError):
            loads_rle("NOPE 1\n2 2 0\n")

    def test_sort_by_area(self):
        a = np.zeros((4, 4), bool)
        a[0, 0] = True
        b = ~a
        out = sort_by_area(SegMaskSet([a, b]))
        assert out.areas == [15, 1]
