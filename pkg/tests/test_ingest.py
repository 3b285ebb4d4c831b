import numpy as np
import pytest

from seqplace.core import DescriptorSequence, FormatError, PoseSequence, ValidationError, seeded_rng
from seqplace.ingest import (
    apply_standardization,
    load_descriptors,
    load_ground_truth,
    load_poses,
    make_windows,
    perturb_query,
    save_descriptors,
    save_ground_truth,
    save_poses,
    standardize_poses,
    synth_traverse,
)


class TestDescriptorFiles:
    def test_small_decode(self, tmp_path):
        path = tmp_path / "d.spld"
        save_descriptors(path, DescriptorSequence(data=[[1, 2, 3], [4, 5, 6]]))
        loaded = load_descriptors(path)
        assert np.array_equal(loaded.data, [[1, 2, 3], [4, 5, 6]])

    def test_round_trip_bit_exact(self, tmp_path):
        data = seeded_rng(3).standard_normal((10, 8)).astype(np.float32)
        path = tmp_path / "d.spld"
        save_descriptors(path, DescriptorSequence(data=data))
        assert np.array_equal(load_descriptors(path).data, data)

    def test_truncated_file_names_byte_counts(self, tmp_path):
        path = tmp_path / "d.spld"
        save_descriptors(path, DescriptorSequence(data=np.ones((4, 4), np.float32)))
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(FormatError, match=rf"expected {len(blob)} bytes.*has {len(blob) - 7}"):
            load_descriptors(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.spld"
        save_descriptors(path, DescriptorSequence(data=np.ones((2, 2), np.float32)))
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            load_descriptors(path)

    def test_nan_payload_rejected_with_location(self, tmp_path):
        path = tmp_path / "d.spld"
        save_descriptors(path, DescriptorSequence(data=np.ones((3, 2), np.float32)))
        blob = bytearray(path.read_bytes())
        blob[16 + 4 * 2:16 + 4 * 3] = np.array([np.nan], "<f4").tobytes()
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="frame 1, dim 0"):
            load_descriptors(path)

    def test_csv_route(self, tmp_path):
        data = seeded_rng(5).standard_normal((6, 3)).astype(np.float32)
        path = tmp_path / "d.csv"
        save_descriptors(path, DescriptorSequence(data=data))
        assert np.array_equal(load_descriptors(path).data, data)

    def test_csv_ragged_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1.0,2.0\n3.0\n")
        with pytest.raises(FormatError, match="expected 2"):
            load_descriptors(path)


class TestPoseFiles:
    def test_round_trip(self, tmp_path):
        poses = PoseSequence(data=seeded_rng(7).standard_normal((5, 2)))
        path = tmp_path / "p.csv"
        save_poses(path, poses)
        assert np.array_equal(load_poses(path).data, poses.data)

    def test_non_increasing_frames_rejected(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("frame,x,y\n0,0.0,0.0\n0,1.0,1.0\n")
        with pytest.raises(FormatError, match="strictly increasing"):
            load_poses(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("x,y\n0.0,0.0\n")
        with pytest.raises(FormatError, match="header"):
            load_poses(path)


class TestGroundTruthFiles:
    def test_round_trip(self, tmp_path):
        gt = np.array([0, 2, 4, 5], dtype=np.int64)
        path = tmp_path / "gt.csv"
        save_ground_truth(path, gt)
        assert np.array_equal(load_ground_truth(path), gt)

    def test_gapped_queries_rejected(self, tmp_path):
        path = tmp_path / "gt.csv"
        path.write_text("query,ref\n0,0\n2,2\n")
        with pytest.raises(FormatError):
            load_ground_truth(path)


class TestStandardization:
    def test_two_point_column(self):
        poses = PoseSequence(data=np.array([[0.0, 0.0], [2.0, 2.0]]))
        std, mu, sigma = standardize_poses(poses)
        assert np.allclose(mu, [1.0, 1.0])
        assert np.allclose(sigma, [1.0, 1.0])  # population std
        assert np.allclose(std.data, [[-1.0, -1.0], [1.0, 1.0]])
        assert std.standardized

    def test_constant_column_maps_to_zero(self):
        poses = PoseSequence(data=np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
        std, _, sigma = standardize_poses(poses)
        assert sigma[0] == 0.0
        assert np.array_equal(std.data[:, 0], np.zeros(3))

    def test_idempotent(self):
        poses = PoseSequence(data=seeded_rng(9).standard_normal((50, 2)) * 7 + 3)
        once, _, _ = standardize_poses(poses)
        twice, _, _ = standardize_poses(once)
        assert np.allclose(once.data, twice.data, atol=1e-9)

    def test_unstandardize_recovers(self):
        data = seeded_rng(10).standard_normal((40, 2)) * 12 - 4
        std, mu, sigma = standardize_poses(PoseSequence(data=data))
        assert np.allclose(std.data * sigma + mu, data, atol=1e-6)

    def test_single_frame_rejected(self):
        with pytest.raises(ValidationError):
            standardize_poses(PoseSequence(data=np.zeros((1, 2))))

    def test_queries_reuse_training_stats(self):
        out = apply_standardization(np.array([[2.0, 8.0]]), np.array([1.0, 2.0]),
                                    np.array([2.0, 0.0]))
        assert np.allclose(out, [[0.5, 0.0]])


class TestMakeWindows:
    def test_five_frames_tw_two(self):
        ws = make_windows(5, 2)
        assert ws.count == 3
        assert ws.samples == ((0, 0), (1, 1), (2, 2))

    def test_tw_one(self):
        assert make_windows(5, 1).count == 4

    def test_tw_equal_frames_rejected(self):
        with pytest.raises(ValidationError):
            make_windows(3, 3)

    def test_count_property_over_ranges(self):
        for n in range(2, 40):
            for tw in range(1, n):
                ws = make_windows(n, tw)
                assert ws.count == n - tw
                last_start, _ = ws.samples[-1]
                assert last_start + tw - 1 == n - 2  # final frame never used


class TestSynthTraverse:
    def test_deterministic(self):
        a = synth_traverse(30, 8, seed=4)
        b = synth_traverse(30, 8, seed=4)
        assert np.array_equal(a.descriptors.data, b.descriptors.data)
        assert np.array_equal(a.poses.data, b.poses.data)

    def test_smooth_walk_has_adjacent_similarity(self):
        env = synth_traverse(1000, 16, seed=6, smoothness=0.9)
        d = env.descriptors.data.astype(np.float64)
        adjacent = np.mean(np.sum(d[:-1] * d[1:], axis=1))
        rng = seeded_rng(8)
        i = rng.integers(0, 1000, 1000)
        j = rng.integers(0, 1000, 1000)
        keep = np.abs(i - j) > 10
        random_pairs = np.mean(np.sum(d[i[keep]] * d[j[keep]], axis=1))
        assert adjacent > random_pairs + 0.2

    def test_zero_smoothness_is_memoryless(self):
        env = synth_traverse(1000, 16, seed=6, smoothness=0.0)
        d = env.descriptors.data.astype(np.float64)
        adjacent = np.mean(np.sum(d[:-1] * d[1:], axis=1))
        rng = seeded_rng(8)
        i = rng.integers(0, 1000, 1000)
        j = rng.integers(0, 1000, 1000)
        keep = np.abs(i - j) > 10
        random_pairs = np.mean(np.sum(d[i[keep]] * d[j[keep]], axis=1))
        assert abs(adjacent - random_pairs) < 0.1

    def test_too_small_rejected(self):
        with pytest.raises(ValidationError):
            synth_traverse(3, 8, seed=1)
        with pytest.raises(ValidationError):
            synth_traverse(10, 1, seed=1)


class TestPerturbQuery:
    def test_noop_is_bit_identical(self):
        env = synth_traverse(50, 8, seed=12)
        query, gt = perturb_query(env, noise_sigma=0.0, speed_warp=1.0, seed=13)
        assert np.array_equal(query.descriptors.data, env.descriptors.data)
        assert np.array_equal(query.poses.data, env.poses.data)
        assert np.array_equal(gt, np.arange(50))

    def test_identity_warp_keeps_identity_ground_truth(self):
        env = synth_traverse(50, 8, seed=12)
        _, gt = perturb_query(env, noise_sigma=0.3, speed_warp=1.0, seed=13)
        assert np.array_equal(gt, np.arange(50))

    def test_double_speed_halves_frames(self):
        env = synth_traverse(100, 8, seed=14)
        query, gt = perturb_query(env, noise_sigma=0.0, speed_warp=2.0, seed=15)
        assert query.descriptors.n_frames == 50
        assert np.array_equal(gt, 2 * np.arange(50))

    def test_monotone_warp_gives_monotone_ground_truth(self):
        env = synth_traverse(200, 8, seed=16)
        for warp in ([0.5, 2.0, 1.3], [1.7, 0.6], [0.9]):
            _, gt = perturb_query(env, noise_sigma=0.2, speed_warp=warp, seed=17)
            assert (np.diff(gt) >= 0).all()

    def test_too_few_frames_rejected(self):
        env = synth_traverse(5, 8, seed=18)
        with pytest.raises(ValidationError):
            perturb_query(env, noise_sigma=0.0, speed_warp=3.0, seed=19)

    def test_noisy_descriptors_stay_unit_norm(self):
        env = synth_traverse(40, 8, seed=20)
        query, _ = perturb_query(env, noise_sigma=0.5, speed_warp=1.0, seed=21)
        norms = np.linalg.norm(query.descriptors.data.astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)
