import json

import numpy as np
import pytest

from gimspot.core import (
    DEFAULT_CLASSES,
    MAE,
    ME,
    DataError,
    GroundTruthInstance,
    Interval,
    PointLabel,
    VideoSample,
    class_index,
    clamp_window,
    interval_iou,
    load_video,
    make_classes,
    read_features_bin,
    save_video,
    video_from_dict,
    video_to_dict,
    write_features_bin,
)


def brute_iou(a, b):
    fa = set(range(a[0], a[1] + 1))
    fb = set(range(b[0], b[1] + 1))
    return len(fa & fb) / len(fa | fb)


class TestIntervalIou:
    def test_identity(self):
        assert interval_iou((10, 20), (10, 20)) == 1.0

    def test_partial_overlap_by_enumeration(self):
        assert interval_iou((10, 20), (15, 25)) == brute_iou((10, 20), (15, 25))

    def test_disjoint(self):
        assert interval_iou((0, 4), (10, 14)) == 0.0

    def test_touching_endpoint_counts_one_frame(self):
        assert interval_iou((0, 4), (4, 8)) == pytest.approx(1 / 9)

    def test_random_against_enumeration(self, rng):
        for _ in range(300):
            s1, s2 = rng.integers(0, 50, 2)
            a = (int(s1), int(s1 + rng.integers(0, 20)))
            b = (int(s2), int(s2 + rng.integers(0, 20)))
            assert interval_iou(a, b) == pytest.approx(brute_iou(a, b), abs=1e-15)
            assert interval_iou(a, b) == interval_iou(b, a)


class TestClampWindow:
    def test_left_clamp(self):
        assert clamp_window(2, 4, 100) == Interval(0, 6)

    def test_interior(self):
        assert clamp_window(50, 4, 100) == Interval(46, 54)

    def test_right_clamp(self):
        assert clamp_window(98, 4, 100) == Interval(94, 99)

    def test_length(self):
        assert Interval(3, 7).length == 5


class TestClasses:
    def test_defaults(self):
        assert (MAE.general_duration, MAE.min_len, MAE.max_len) == (32, 16, 120)
        assert (ME.general_duration, ME.min_len, ME.max_len) == (16, 3, 15)
        assert [c.index for c in DEFAULT_CLASSES] == [0, 1]

    def test_default_length_ranges_disjoint(self):
        assert not any(MAE.accepts_length(L) and ME.accepts_length(L) for L in range(1, 200))

    def test_class_index(self):
        assert class_index("ME") == 1
        with pytest.raises(DataError):
            class_index("neutral")

    def test_make_classes_rejects_inverted_durations(self):
        with pytest.raises(ValueError):
            make_classes(mae_duration=8, me_duration=16)

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            make_classes(me_min=5, me_max=4)


class TestVideoSample:
    def test_shapes(self):
        v = VideoSample("v", np.zeros((10, 3)))
        assert (v.T, v.D) == (10, 3)

    def test_point_out_of_range(self):
        with pytest.raises(DataError):
            VideoSample("v", np.zeros((10, 3)), [PointLabel(10, 0)])

    def test_truth_out_of_range(self):
        with pytest.raises(DataError):
            VideoSample("v", np.zeros((10, 3)), [], [GroundTruthInstance(5, 6, 12, 0)])

    def test_truth_order(self):
        with pytest.raises(DataError):
            GroundTruthInstance(5, 4, 8, 0)

    def test_non_matrix_features(self):
        with pytest.raises(DataError):
            VideoSample("v", np.zeros(10))

    def test_empty_video(self):
        v = VideoSample("v", np.zeros((0, 0)))
        assert v.T == 0


def _video():
    rng = np.random.default_rng(3)
    return VideoSample(
        "vid_007",
        rng.normal(size=(20, 4)),
        [PointLabel(5, 0), PointLabel(15, 1)],
        [GroundTruthInstance(2, 5, 9, 0), GroundTruthInstance(14, 15, 17, 1)],
    )


class TestSerialization:
    def test_dict_round_trip(self):
        v = _video()
        back = video_from_dict(json.loads(json.dumps(video_to_dict(v))))
        assert back.id == v.id and back.points == v.points and back.truth == v.truth
        np.testing.assert_array_equal(back.features, v.features)

    def test_json_file_round_trip(self, tmp_path):
        v = _video()
        save_video(v, tmp_path / "v.json")
        back = load_video(tmp_path / "v.json")
        np.testing.assert_array_equal(back.features, v.features)

    def test_binary_round_trip_is_float32(self, tmp_path):
        v = _video()
        save_video(v, tmp_path / "v.json", binary=True)
        assert (tmp_path / "v.gimv").is_file()
        back = load_video(tmp_path / "v.json")
        np.testing.assert_array_equal(back.features, v.features.astype(np.float32).astype(np.float64))
        assert back.truth == v.truth

    def test_binary_header(self, tmp_path):
        x = np.arange(6, dtype=float).reshape(3, 2)
        write_features_bin(tmp_path / "f.gimv", x)
        raw = (tmp_path / "f.gimv").read_bytes()
        assert raw[:4] == b"GIMV" and len(raw) == 16 + 4 * 6
        np.testing.assert_array_equal(read_features_bin(tmp_path / "f.gimv"), x)

    def test_truncated_binary(self, tmp_path):
        write_features_bin(tmp_path / "f.gimv", np.ones((3, 2)))
        raw = (tmp_path / "f.gimv").read_bytes()
        (tmp_path / "f.gimv").write_bytes(raw[:-4])
        with pytest.raises(DataError):
            read_features_bin(tmp_path / "f.gimv")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "f.gimv").write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(DataError):
            read_features_bin(tmp_path / "f.gimv")

    def test_declared_shape_mismatch(self):
        doc = video_to_dict(_video())
        doc["T"] = 21
        with pytest.raises(DataError):
            video_from_dict(doc)

    def test_unknown_class_name(self):
        doc = video_to_dict(_video())
        doc["points"][0]["class"] = "XE"
        with pytest.raises(DataError):
            video_from_dict(doc)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "v.json").write_text("{not json")
        with pytest.raises(DataError):
            load_video(tmp_path / "v.json")

    def test_points_without_truth(self):
        v = VideoSample("u", np.zeros((5, 2)), [PointLabel(1, 0)], None)
        back = video_from_dict(video_to_dict(v))
        assert back.truth is None
