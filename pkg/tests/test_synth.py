import dataclasses
import json

import numpy as np
import numpy.testing as npt
import pytest

from depthforensics.depth_gt import PatchGrid, compose_gt_depth, synthetic_face_depth
from depthforensics.exceptions import ContractViolation, DataFormatError
from depthforensics.synth import (
    FAKE,
    REAL,
    SynthProfile,
    degrade_quality,
    generate_fake_sample,
    generate_real_sample,
    make_dataset,
    mini_profile,
    quantize,
    read_dataset,
    write_dataset,
)

PROFILE = mini_profile()


class TestRealSamples:
    def test_mask_all_zero(self):
        rec = generate_real_sample(3, PROFILE)
        assert rec.mask.sum() == 0
        assert rec.label == REAL

    def test_deterministic_regeneration(self):
        a = generate_real_sample(42, PROFILE)
        b = generate_real_sample(42, PROFILE)
        assert a.equals(b)

    def test_depth_is_composed_oracle_output(self):
        rec = generate_real_sample(7, PROFILE)
        # background -> lam exactly; face pixels -> (lam, 255]
        lam = PROFILE.lam
        assert rec.depth.min() == lam
        assert rec.depth.max() > lam
        assert rec.depth.max() <= 255

    def test_image_in_unit_range(self):
        rec = generate_real_sample(11, PROFILE)
        assert rec.image.shape == (32, 32, 3)
        assert rec.image.min() >= 0.0 and rec.image.max() <= 1.0


class TestFakeSamples:
    def test_mask_nonempty(self):
        rec = generate_fake_sample(5, PROFILE)
        assert rec.mask.sum() > 0
        assert rec.label == FAKE

    def test_gt_depth_zero_exactly_on_mask(self):
        for seed in range(10):
            rec = generate_fake_sample(seed, PROFILE)
            assert np.all(rec.depth[rec.mask == 1] == 0)
            assert np.all(rec.depth[rec.mask == 0] >= PROFILE.lam)

    def test_deterministic_regeneration(self):
        a = generate_fake_sample(42, PROFILE)
        b = generate_fake_sample(42, PROFILE)
        assert a.equals(b)

    def test_region_fraction_within_configured_range(self):
        for seed in range(20):
            rec = generate_fake_sample(seed, PROFILE)
            face_area = np.count_nonzero(rec.depth > 0) + rec.mask.sum()
            frac = rec.mask.sum() / face_area
            assert 0.01 < frac < 0.40  # loose bounds around (0.05, 0.25) targets

    def test_planted_signal_is_learnable_by_linear_probe(self):
        # (image, GT depth) pairs must separate real/fake well above chance
        from sklearn.linear_model import LogisticRegression

        grid = PatchGrid(32, 32, 8)
        X, y = [], []
        for i in range(500):
            gen = generate_fake_sample if i % 2 == 0 else generate_real_sample
            rec = gen(90_000 + i, PROFILE)
            patch_depth = rec.depth.reshape(8, 4, 8, 4).mean(axis=(1, 3)).ravel() / 255.0
            lum = rec.image.mean(axis=-1).reshape(8, 4, 8, 4).mean(axis=(1, 3)).ravel()
            X.append(np.concatenate([lum, patch_depth]))
            y.append(rec.label)
        X, y = np.array(X), np.array(y)
        probe = LogisticRegression(max_iter=2000).fit(X[:350], y[:350])
        assert probe.score(X[350:], y[350:]) > 0.90


class TestDegradeQuality:
    def test_high_quality_near_identity(self):
        # PSNR above 40 dB across 100 samples
        psnrs = []
        profile = dataclasses.replace(PROFILE, noise_std=0.0)
        for seed in range(100):
            rec = generate_real_sample(seed, profile, quality="high")
            degraded = degrade_quality(rec.image, "high")
            mse = np.mean((degraded - rec.image) ** 2)
            psnrs.append(10 * np.log10(1.0 / max(mse, 1e-12)))
        assert min(psnrs) > 40.0

    def test_quantizer_idempotent(self):
        rng = np.random.default_rng(0)
        for levels in (32, 128):
            x = rng.uniform(0, 1, (16, 16, 3))
            once = quantize(x, levels)
            npt.assert_array_equal(quantize(once, levels), once)

    def test_mask_and_depth_untouched(self):
        rec_high = generate_fake_sample(9, PROFILE, quality="high")
        rec_low = generate_fake_sample(9, PROFILE, quality="low")
        npt.assert_array_equal(rec_high.mask, rec_low.mask)
        npt.assert_array_equal(rec_high.depth, rec_low.depth)
        assert not np.array_equal(rec_high.image, rec_low.image)

    def test_unknown_level_rejected(self):
        with pytest.raises(ContractViolation):
            degrade_quality(np.zeros((4, 4, 3)), "medium")


class TestDataset:
    def _make(self, count=40, seed=123):
        return make_dataset(count=count, global_seed=seed, profile=PROFILE)

    def test_determinism_from_seed(self):
        m1, r1 = self._make()
        m2, r2 = self._make()
        assert m1.splits == m2.splits
        assert all(r1[k].equals(r2[k]) for k in r1)

    def test_label_mask_consistency(self):
        _, records = self._make()
        for rec in records.values():
            assert (rec.label == FAKE) == (rec.mask.sum() > 0)

    def test_class_balance(self):
        manifest, records = self._make(count=200)
        fakes = sum(records[i].label == FAKE for i in records)
        assert abs(fakes / 200 - 0.5) <= 0.01

    def test_splits_disjoint_and_complete(self):
        manifest, _ = self._make()
        all_ids = [i for ids in manifest.splits.values() for i in ids]
        assert len(all_ids) == len(set(all_ids)) == manifest.count

    def test_round_trip(self, tmp_path):
        manifest, records = self._make()
        write_dataset(tmp_path / "ds", manifest, records)
        loaded_manifest, by_split = read_dataset(tmp_path / "ds")
        assert loaded_manifest.splits == manifest.splits
        for split, recs in by_split.items():
            for rec in recs:
                assert rec.equals(records[rec.sample_id])

    def test_checksum_corruption_detected(self, tmp_path):
        manifest, records = self._make()
        write_dataset(tmp_path / "ds", manifest, records)
        blob = tmp_path / "ds" / "train" / "images.npy"
        data = bytearray(blob.read_bytes())
        data[-1] ^= 0xFF
        blob.write_bytes(bytes(data))
        with pytest.raises(DataFormatError):
            read_dataset(tmp_path / "ds")

    def test_version_mismatch_detected(self, tmp_path):
        manifest, records = self._make()
        write_dataset(tmp_path / "ds", manifest, records)
        manifest_path = tmp_path / "ds" / "manifest.json"
        doc = json.loads(manifest_path.read_text())
        doc["format_version"] = 99
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(DataFormatError):
            read_dataset(tmp_path / "ds")

    def test_missing_blob_detected(self, tmp_path):
        manifest, records = self._make()
        write_dataset(tmp_path / "ds", manifest, records)
        (tmp_path / "ds" / "val" / "labels.npy").unlink()
        with pytest.raises(DataFormatError):
            read_dataset(tmp_path / "ds")
