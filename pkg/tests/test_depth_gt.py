import numpy as np
import numpy.testing as npt
import pytest

from depthforensics.depth_gt import (
    GtRecord,
    PatchGrid,
    clamp_overflow,
    compose_gt_depth,
    denormalize_patch_depth,
    normalize_patch_depth,
    patch_average,
    read_gt_records,
    synthetic_face_depth,
    write_gt_records,
)
from depthforensics.exceptions import ContractViolation, DataFormatError


def brute_force_compose(depth, mask, lam):
    """Per-pixel reference for the ground-truth composition."""
    out = np.zeros_like(depth)
    for y in range(depth.shape[0]):
        for x in range(depth.shape[1]):
            if mask[y, x] == 1:
                out[y, x] = 0
            else:
                out[y, x] = min(depth[y, x] + lam, 255)
    return out


def brute_force_patch_average(gt, grid):
    out = np.empty(grid.patch_count)
    for p, (y0, y1, x0, x1) in enumerate(grid.patch_bounds()):
        total = 0.0
        for y in range(y0, y1):
            for x in range(x0, x1):
                total += gt[y, x]
        out[p] = total / ((y1 - y0) * (x1 - x0))
    return out


def random_depth_mask(rng, h=32, w=32):
    depth = rng.integers(0, 256, size=(h, w))
    mask = (rng.random((h, w)) < 0.3).astype(np.uint8)
    return depth, mask


class TestClampOverflow:
    def test_examples(self):
        assert clamp_overflow(260) == 255
        assert clamp_overflow(255) == 255
        assert clamp_overflow(100) == 100

    def test_array_input(self):
        npt.assert_array_equal(clamp_overflow(np.array([0, 300, 255])), [0, 255, 255])

    def test_negative_rejected(self):
        with pytest.raises(ContractViolation):
            clamp_overflow(-1)


class TestComposeGtDepth:
    def test_fake_pixels_zero(self):
        depth = np.full((4, 4), 200)
        mask = np.zeros((4, 4), dtype=np.uint8)
        mask[1, 2] = 1
        out = compose_gt_depth(depth, mask, 50)
        assert out[1, 2] == 0

    def test_background_gets_lambda(self):
        out = compose_gt_depth(np.zeros((3, 3), dtype=int), np.zeros((3, 3), dtype=np.uint8), 50)
        npt.assert_array_equal(out, 50)

    def test_overflow_clamped(self):
        out = compose_gt_depth(np.full((2, 2), 230), np.zeros((2, 2), dtype=np.uint8), 50)
        npt.assert_array_equal(out, 255)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            compose_gt_depth(np.zeros((3, 3), dtype=int), np.zeros((3, 4), dtype=np.uint8), 50)

    def test_nonpositive_lambda(self):
        with pytest.raises(ContractViolation):
            compose_gt_depth(np.zeros((2, 2), dtype=int), np.zeros((2, 2), dtype=np.uint8), 0)

    def test_nonbinary_mask(self):
        with pytest.raises(ContractViolation):
            compose_gt_depth(np.zeros((2, 2), dtype=int), np.full((2, 2), 2), 50)

    def test_matches_brute_force_on_1000_random_pairs(self):
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            depth, mask = random_depth_mask(rng, h=12, w=12)
            lam = int(rng.integers(1, 200))
            npt.assert_array_equal(
                compose_gt_depth(depth, mask, lam), brute_force_compose(depth, mask, lam)
            )

    def test_region_separation_invariant(self):
        # fake -> 0; background -> exactly lam; real face -> (lam, 255]
        rng = np.random.default_rng(99)
        for _ in range(1000):
            depth, mask = random_depth_mask(rng, h=8, w=8)
            lam = int(rng.integers(1, 200))
            out = compose_gt_depth(depth, mask, lam)
            assert np.all(out[mask == 1] == 0)
            background = (mask == 0) & (depth == 0)
            assert np.all(out[background] == lam)
            face = (mask == 0) & (depth > 0)
            assert np.all(out[face] > lam) and np.all(out[face] <= 255)


class TestPatchGrid:
    def test_bounds_tile_exactly(self):
        grid = PatchGrid(32, 32, 4)
        covered = np.zeros((32, 32), dtype=int)
        for y0, y1, x0, x1 in grid.patch_bounds():
            covered[y0:y1, x0:x1] += 1
        npt.assert_array_equal(covered, 1)

    def test_indivisible_rejected(self):
        with pytest.raises(ContractViolation):
            PatchGrid(224, 224, 15)

    def test_default_geometry(self):
        grid = PatchGrid(224, 224, 14)
        assert grid.patch_count == 196
        assert grid.patch_h == grid.patch_w == 16


class TestPatchAverage:
    def test_constant_patch(self):
        grid = PatchGrid(32, 32, 2)
        npt.assert_allclose(patch_average(np.full((32, 32), 50), grid), 50.0)

    def test_half_and_half(self):
        grid = PatchGrid(16, 16, 1)
        gt = np.zeros((16, 16))
        gt[:8] = 50
        npt.assert_allclose(patch_average(gt, grid), [25.0])

    def test_matches_brute_force_on_100_random_maps(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            grid = PatchGrid(224, 224, 14)
            gt = rng.integers(0, 256, size=(224, 224)).astype(np.float64)
            fast = patch_average(gt, grid)
            slow = brute_force_patch_average(gt, grid)
            assert np.max(np.abs(fast - slow)) < 1e-9

    def test_within_patch_min_max(self):
        rng = np.random.default_rng(21)
        grid = PatchGrid(32, 32, 4)
        gt = rng.integers(0, 256, size=(32, 32)).astype(np.float64)
        means = patch_average(gt, grid)
        for p, (y0, y1, x0, x1) in enumerate(grid.patch_bounds()):
            block = gt[y0:y1, x0:x1]
            assert block.min() <= means[p] <= block.max()

    def test_permutation_consistency(self):
        # permuting the patch enumeration permutes the outputs identically
        rng = np.random.default_rng(3)
        grid = PatchGrid(32, 32, 4)
        gt = rng.integers(0, 256, size=(32, 32)).astype(np.float64)
        means = patch_average(gt, grid)
        perm = rng.permutation(grid.patch_count)
        bounds = grid.patch_bounds()
        permuted = np.array(
            [gt[b[0] : b[1], b[2] : b[3]].mean() for b in (bounds[i] for i in perm)]
        )
        npt.assert_array_equal(means[perm], permuted)

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            patch_average(np.zeros((16, 16)), PatchGrid(32, 32, 4))


class TestNormalize:
    def test_examples(self):
        npt.assert_allclose(normalize_patch_depth(np.array([255.0, 0.0, 51.0])), [1.0, 0.0, 0.2])

    def test_out_of_range(self):
        with pytest.raises(ContractViolation):
            normalize_patch_depth(np.array([256.0]))

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        v = rng.uniform(0, 255, size=500)
        npt.assert_allclose(denormalize_patch_depth(normalize_patch_depth(v)), v, atol=1e-12)


class TestSyntheticFaceDepth:
    def test_apex_value(self):
        d = synthetic_face_depth(64, 64, (32, 32), (20, 20), 200)
        assert d[32, 32] == 200

    def test_outside_ellipse_zero(self):
        d = synthetic_face_depth(64, 64, (32, 32), (10, 10), 150)
        assert d[0, 0] == 0
        assert d[32, 44] == 0  # just outside the semi-axis

    def test_monotone_along_rays(self):
        d = synthetic_face_depth(64, 64, (32, 32), (20, 24), 180).astype(float)
        rng = np.random.default_rng(11)
        for _ in range(50):
            theta = rng.uniform(0, 2 * np.pi)
            radii = np.linspace(0, 30, 40)
            ys = np.clip((32 + radii * np.sin(theta)).astype(int), 0, 63)
            xs = np.clip((32 + radii * np.cos(theta)).astype(int), 0, 63)
            values = d[ys, xs]
            assert np.all(np.diff(values) <= 1)  # non-increasing up to rounding

    def test_degenerate_axes(self):
        with pytest.raises(ContractViolation):
            synthetic_face_depth(64, 64, (32, 32), (0, 10), 100)

    def test_ellipse_must_fit(self):
        with pytest.raises(ContractViolation):
            synthetic_face_depth(64, 64, (5, 32), (20, 20), 100)


class TestGtRecordFiles:
    def _records(self, rng, n=5):
        return [
            GtRecord(
                sample_id=f"sample-{i:04d}",
                lam=50,
                grid_h=8,
                grid_w=8,
                values=rng.uniform(0, 1, 64).astype(np.float32),
            )
            for i in range(n)
        ]

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        records = self._records(rng)
        path = tmp_path / "train.gt"
        write_gt_records(path, records, {"oracle": "elliptical-dome", "seed": 1})
        loaded, sidecar = read_gt_records(path)
        assert sidecar["oracle"] == "elliptical-dome"
        assert len(loaded) == len(records)
        for a, b in zip(records, loaded):
            assert (a.sample_id, a.lam, a.grid_h, a.grid_w) == (b.sample_id, b.lam, b.grid_h, b.grid_w)
            npt.assert_array_equal(a.values, b.values)

    def test_truncated_file_detected(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "t.gt"
        write_gt_records(path, self._records(rng), {"oracle": "x", "seed": 0})
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(DataFormatError):
            read_gt_records(path)

    def test_version_mismatch_detected(self, tmp_path):
        import json

        rng = np.random.default_rng(0)
        path = tmp_path / "t.gt"
        write_gt_records(path, self._records(rng), {"oracle": "x", "seed": 0})
        sidecar_path = str(path) + ".json"
        with open(sidecar_path) as f:
            sidecar = json.load(f)
        sidecar["format_version"] = 999
        with open(sidecar_path, "w") as f:
            json.dump(sidecar, f)
        with pytest.raises(DataFormatError):
            read_gt_records(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFormatError):
            read_gt_records(tmp_path / "absent.gt")
