"""Container formats, manifests and ground-truth construction."""

import numpy as np
import pytest

from placedesc import (
    DataError,
    DescriptorSet,
    FeatureMapSet,
    FormatError,
    GroundTruth,
    PoseTable,
    build_ground_truth_frames,
    build_ground_truth_radius,
    load_pair_list,
    read_dvec,
    read_fmap,
    read_manifest,
    read_pose_csv,
    write_dvec,
    write_fmap,
    write_ground_truth_csv,
    write_manifest,
    write_pose_csv,
)


def make_fmap(n=3, c=2, h=4, w=5, backbone="custom", seed=0):
    rng = np.random.default_rng(seed)
    maps = rng.normal(size=(n, c, h, w)).astype(np.float32)
    return FeatureMapSet(backbone, [f"img{i:03d}" for i in range(n)], maps)


def make_dvec(n=4, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return DescriptorSet([f"img{i:03d}" for i in range(n)], v.astype(np.float32))


class TestFmapFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        fset = make_fmap()
        path = tmp_path / "maps.fmap"
        write_fmap(path, fset)
        back = read_fmap(path)
        assert back.backbone == fset.backbone
        assert back.ids == fset.ids
        assert back.maps.tobytes() == fset.maps.tobytes()

    def test_vgg16_payload_length(self, tmp_path):
        fset = make_fmap(n=1, c=512, h=30, w=40, backbone="vgg16")
        path = tmp_path / "vgg.fmap"
        write_fmap(path, fset)
        back = read_fmap(path)
        assert back.maps[0].size == 614400

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "maps.fmap"
        write_fmap(path, make_fmap())
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            read_fmap(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "maps.fmap"
        write_fmap(path, make_fmap())
        raw = bytearray(path.read_bytes())
        raw[4:6] = (7).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            read_fmap(path)

    def test_truncated_payload_names_record(self, tmp_path):
        path = tmp_path / "maps.fmap"
        write_fmap(path, make_fmap())
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(FormatError, match="record 2"):
            read_fmap(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "maps.fmap"
        write_fmap(path, make_fmap())
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            read_fmap(path)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(FormatError, match="duplicate"):
            FeatureMapSet("custom", ["a", "a"], np.zeros((2, 1, 2, 2), np.float32))

    def test_empty_set_round_trips(self, tmp_path):
        fset = FeatureMapSet("custom", [], np.zeros((0, 2, 3, 4), np.float32))
        path = tmp_path / "empty.fmap"
        write_fmap(path, fset)
        back = read_fmap(path)
        assert back.ids == []
        assert back.dims == (2, 3, 4)

    def test_unicode_ids(self, tmp_path):
        fset = FeatureMapSet(
            "custom", ["köln/001", "øst-02"], np.ones((2, 1, 2, 2), np.float32)
        )
        path = tmp_path / "uni.fmap"
        write_fmap(path, fset)
        assert read_fmap(path).ids == ["köln/001", "øst-02"]


class TestDvecFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        dset = make_dvec()
        dset.model_checksum = bytes(range(8))
        path = tmp_path / "d.dvec"
        write_dvec(path, dset)
        back = read_dvec(path)
        assert back.ids == dset.ids
        assert back.vectors.tobytes() == dset.vectors.tobytes()
        assert back.flatten_order == dset.flatten_order
        assert back.model_checksum == bytes(range(8))

    def test_non_unit_vector_rejected_on_write(self, tmp_path):
        dset = make_dvec()
        dset.vectors[1] *= 0.5
        with pytest.raises(FormatError, match="norm"):
            write_dvec(tmp_path / "bad.dvec", dset)

    def test_non_unit_vector_rejected_on_read(self, tmp_path):
        dset = make_dvec(n=2, dim=4)
        path = tmp_path / "d.dvec"
        write_dvec(path, dset)
        raw = bytearray(path.read_bytes())
        # Scale the last record's floats to norm 0.5.
        tail = np.frombuffer(bytes(raw[-16:]), dtype="<f4") * 0.5
        raw[-16:] = tail.astype("<f4").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="norm"):
            read_dvec(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.dvec"
        write_dvec(path, make_dvec())
        raw = bytearray(path.read_bytes())
        raw[0] = 0
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            read_dvec(path)

    def test_truncation_rejected(self, tmp_path):
        path = tmp_path / "d.dvec"
        write_dvec(path, make_dvec())
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 3])
        with pytest.raises(FormatError, match="truncated"):
            read_dvec(path)

    def test_dim_4096_header(self, tmp_path):
        rng = np.random.default_rng(1)
        v = rng.normal(size=(2, 4096))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        dset = DescriptorSet(["a", "b"], v.astype(np.float32))
        path = tmp_path / "d.dvec"
        write_dvec(path, dset)
        assert read_dvec(path).dim == 4096


class TestManifests:
    def test_round_trip_without_poses(self, tmp_path):
        path = tmp_path / "m.csv"
        write_manifest(path, ["b", "a", "c"])
        ids, poses = read_manifest(path)
        assert ids == ["b", "a", "c"]  # order preserved, defines frame indices
        assert poses is None

    def test_round_trip_with_poses(self, tmp_path):
        table = PoseTable(["a", "b"], np.array([[1.5, -2.0], [3.0, 4.0]]))
        path = tmp_path / "m.csv"
        write_manifest(path, ["a", "b"], table)
        ids, poses = read_manifest(path)
        assert ids == ["a", "b"]
        np.testing.assert_array_equal(poses.xy, table.xy)

    def test_mixed_pose_rows_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("a,1.0,2.0\nb\n")
        with pytest.raises(FormatError, match="mixed"):
            read_manifest(path)

    def test_pose_csv_round_trip(self, tmp_path):
        table = PoseTable(["x", "y"], np.array([[0.25, 0.5], [100.0, -3.125]]))
        path = tmp_path / "p.csv"
        write_pose_csv(path, table)
        back = read_pose_csv(path)
        assert back.ids == table.ids
        np.testing.assert_array_equal(back.xy, table.xy)

    def test_pose_select_missing_ids_listed(self):
        table = PoseTable(["a"], np.array([[0.0, 0.0]]))
        with pytest.raises(DataError, match="'b'"):
            table.select(["a", "b"])

    def test_nonfinite_pose_rejected(self):
        with pytest.raises(DataError, match="finite"):
            PoseTable(["a"], np.array([[np.nan, 0.0]]))


class TestRadiusGroundTruth:
    def test_distance_comparison(self):
        queries = PoseTable(["q"], np.array([[0.0, 0.0]]))
        refs = PoseTable(["near", "far"], np.array([[10.0, 0.0], [30.0, 0.0]]))
        gt = build_ground_truth_radius(queries, refs, 25.0)
        assert gt.mapping == {"q": {"near"}}
        assert gt.protocol == "radius" and gt.radius_m == 25.0

    def test_boundary_inclusive(self):
        queries = PoseTable(["q"], np.array([[0.0, 0.0]]))
        refs = PoseTable(["edge"], np.array([[25.0, 0.0]]))
        gt = build_ground_truth_radius(queries, refs, 25.0)
        assert gt.mapping["q"] == {"edge"}

    def test_empty_reference_table(self):
        queries = PoseTable(["a", "b"], np.array([[0.0, 0.0], [1.0, 1.0]]))
        refs = PoseTable([], np.zeros((0, 2)))
        gt = build_ground_truth_radius(queries, refs, 25.0)
        assert gt.mapping == {"a": set(), "b": set()}

    def test_row_order_irrelevant(self):
        rng = np.random.default_rng(2)
        ids = [f"r{i}" for i in range(20)]
        xy = rng.uniform(-50, 50, size=(20, 2))
        queries = PoseTable(["q0", "q1"], rng.uniform(-50, 50, size=(2, 2)))
        gt_a = build_ground_truth_radius(queries, PoseTable(ids, xy), 30.0)
        perm = rng.permutation(20)
        gt_b = build_ground_truth_radius(
            queries, PoseTable([ids[i] for i in perm], xy[perm]), 30.0
        )
        assert gt_a.mapping == gt_b.mapping

    def test_bad_radius(self):
        q = PoseTable(["a"], np.array([[0.0, 0.0]]))
        with pytest.raises(DataError, match="radius"):
            build_ground_truth_radius(q, q, 0.0)


class TestFrameGroundTruth:
    def test_interior_window(self):
        gt = build_ground_truth_frames(10, window=2)
        assert gt.mapping["5"] == {"3", "4", "5", "6", "7"}

    def test_boundary_clamp(self):
        gt = build_ground_truth_frames(10, window=2)
        assert gt.mapping["0"] == {"0", "1", "2"}
        assert gt.mapping["9"] == {"7", "8", "9"}

    def test_zero_window_exact_match(self):
        gt = build_ground_truth_frames(4, window=0)
        assert all(gt.mapping[str(i)] == {str(i)} for i in range(4))

    def test_custom_ids(self):
        gt = build_ground_truth_frames(
            3, window=1, query_ids=["qa", "qb", "qc"], reference_ids=["ra", "rb", "rc"]
        )
        assert gt.mapping == {
            "qa": {"ra", "rb"},
            "qb": {"ra", "rb", "rc"},
            "qc": {"rb", "rc"},
        }

    def test_negative_window_rejected(self):
        with pytest.raises(DataError, match="window"):
            build_ground_truth_frames(5, window=-1)

    def test_misaligned_ids_rejected(self):
        with pytest.raises(DataError, match="aligned"):
            build_ground_truth_frames(3, window=1, query_ids=["a", "b"])


class TestPairListGroundTruth:
    def test_two_rows_one_query(self, tmp_path):
        path = tmp_path / "pairs.csv"
        path.write_text("q1,r1\nq1,r2\n")
        gt = load_pair_list(path)
        assert gt.mapping == {"q1": {"r1", "r2"}}
        assert gt.protocol == "pair_list"

    def test_empty_file_with_manifest(self, tmp_path):
        path = tmp_path / "pairs.csv"
        path.write_text("")
        gt = load_pair_list(path, query_ids=["a", "b", "c"])
        assert gt.mapping == {"a": set(), "b": set(), "c": set()}

    def test_duplicate_row_warns_and_dedupes(self, tmp_path):
        path = tmp_path / "pairs.csv"
        path.write_text("q1,r1\nq1,r1\n")
        with pytest.warns(UserWarning, match="duplicate"):
            gt = load_pair_list(path)
        assert gt.mapping == {"q1": {"r1"}}

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "pairs.csv"
        path.write_text("q1,r1\nq2,r2,extra\n")
        with pytest.raises(FormatError, match="line 2"):
            load_pair_list(path)

    def test_csv_emission_round_trip(self, tmp_path):
        gt = GroundTruth("pair_list", {"q1": {"r2", "r1"}, "q2": {"r3"}, "q3": set()})
        path = tmp_path / "gt.csv"
        write_ground_truth_csv(path, gt)
        back = load_pair_list(path, query_ids=["q1", "q2", "q3"])
        assert back.mapping == gt.mapping


class TestGroundTruthType:
    def test_protocol_validation(self):
        with pytest.raises(DataError, match="protocol"):
            GroundTruth("nearest", {})
        with pytest.raises(DataError, match="radius"):
            GroundTruth("radius", {}, radius_m=None)
        with pytest.raises(DataError, match="window"):
            GroundTruth("frame_window", {}, window=-2)
