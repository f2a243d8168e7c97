import numpy as np
import pytest

from dpet.errors import (
    EmptyMask,
    MaskOutsideCrop,
    SeedOutOfRange,
    SpecInvalid,
)
from dpet.niftiio import read_nifti
from dpet.rigid import RigidTransform
from dpet.tumor import (
    MANIFEST_COLUMNS,
    TumorSample,
    conservative_mask,
    export_samples,
    extract_samples,
    harmonize_to_atlas,
    read_manifest,
    region_grow,
    set_verified,
)
from dpet.volume import Geometry, Mask, Volume3D, resample_trilinear

from conftest import bfs_flood_fill, make_volume, structured_volume


class TestRegionGrow:
    def test_matches_bfs_oracle_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            dims = tuple(int(d) for d in rng.integers(4, 10, 3))
            vals = rng.random(dims)
            band = (vals >= 0.3) & (vals <= 0.8)
            seeds = np.argwhere(band)
            if seeds.size == 0:
                continue
            seed = tuple(seeds[rng.integers(0, len(seeds))])
            grown = region_grow(make_volume(vals), seed, 0.3, 0.8)
            oracle = next(c for c in bfs_flood_fill(band) if seed in c)
            assert frozenset(map(tuple, np.argwhere(grown.membership))) == oracle

    def test_seed_outside_volume(self):
        vol = make_volume(np.zeros((4, 4, 4)))
        with pytest.raises(SpecInvalid):
            region_grow(vol, (9, 0, 0), 0.0, 1.0)

    def test_seed_value_outside_band(self):
        vals = np.zeros((4, 4, 4))
        vol = make_volume(vals)
        with pytest.raises(SeedOutOfRange):
            region_grow(vol, (1, 1, 1), 0.5, 1.0)

    def test_grows_only_connected_part(self):
        vals = np.zeros((9, 3, 3))
        vals[0:3] = 1.0
        vals[6:9] = 1.0  # second island, not connected to the first
        grown = region_grow(make_volume(vals), (1, 1, 1), 0.5, 1.5)
        assert grown.membership[0:3].all()
        assert not grown.membership[6:9].any()


class TestConservativeMask:
    def _cube_mask(self, n=20, side=8):
        m = np.zeros((n, n, n), bool)
        lo = (n - side) // 2
        m[lo:lo + side, lo:lo + side, lo:lo + side] = True
        return Mask(Geometry((n, n, n)), m)

    def test_level_above_half_shrinks(self):
        raw = self._cube_mask()
        out = conservative_mask(raw, sigma_mm=1.5, level=0.6)
        assert 0 < out.count < raw.count
        assert not (out.membership & ~raw.membership).any()

    def test_level_below_half_grows(self):
        raw = self._cube_mask()
        out = conservative_mask(raw, sigma_mm=1.5, level=0.3)
        assert out.count > raw.count

    def test_level_validation(self):
        raw = self._cube_mask()
        for bad in (0.0, 1.0, -0.2):
            with pytest.raises(SpecInvalid):
                conservative_mask(raw, 1.0, bad)


class TestHarmonize:
    def test_identity_without_atlas_ref(self):
        mr = structured_volume(dims=(16, 16, 12), seed=3)
        suv = structured_volume(dims=(16, 16, 12), seed=4)
        mask = Mask(mr.geometry, mr.values > np.median(mr.values))
        out = harmonize_to_atlas(mr, [suv], mask, mr.geometry)
        assert np.allclose(out.mr.values, mr.values, atol=1e-9)
        assert np.allclose(out.others[0].values, suv.values, atol=1e-9)
        assert np.array_equal(out.mask.membership, mask.membership)
        assert np.allclose(out.transform.rotation, 0.0)
        assert np.allclose(out.transform.translation, 0.0)

    def test_known_offset_recovered(self):
        atlas = structured_volume(dims=(24, 24, 16), seed=5)
        center = tuple(atlas.geometry.physical_center())
        T = RigidTransform(translation=(4.0, 0.0, 0.0), center=center)
        # subject MR = atlas content shifted by T
        mr = resample_trilinear(atlas, atlas.geometry, T.inverse())
        mask = Mask(mr.geometry, mr.values > np.percentile(mr.values, 80))
        out = harmonize_to_atlas(mr, [], mask, atlas.geometry, atlas_ref=atlas)
        assert np.allclose(out.transform.translation, (4.0, 0.0, 0.0), atol=0.5)
        inner = (slice(4, -4),) * 3
        err = np.abs(out.mr.values[inner] - atlas.values[inner])
        assert np.max(err) < 0.2 * np.max(np.abs(atlas.values))

    def test_geometry_mismatch_rejected(self):
        mr = structured_volume(dims=(8, 8, 8))
        bad = structured_volume(dims=(9, 8, 8))
        mask = Mask(mr.geometry, np.ones((8, 8, 8), bool))
        with pytest.raises(SpecInvalid):
            harmonize_to_atlas(mr, [bad], mask, mr.geometry)


def _two_component_setup(dims=(40, 40, 30), crop=(24, 24, 16)):
    g = Geometry(dims)
    m = np.zeros(dims, bool)
    m[14:20, 14:20, 12:18] = True  # 216 voxels
    m[24:27, 24:27, 14:17] = True  # 27 voxels
    mask = Mask(g, m)
    rng = np.random.default_rng(1)
    mods = {name: Volume3D(g, rng.random(dims) + 1.0) for name in ("MR", "SUV", "Ki")}
    return mods, mask, crop


class TestTumorSample:
    def test_nonzero_outside_mask_rejected(self):
        g = Geometry((4, 4, 4))
        mask = Mask(g, np.zeros((4, 4, 4), bool))
        vol = Volume3D(g, np.ones((4, 4, 4)))
        with pytest.raises(SpecInvalid):
            TumorSample("s-01", "s", {"MR": vol}, mask, "TP")

    def test_bad_label_rejected(self):
        g = Geometry((2, 2, 2))
        mask = Mask(g, np.ones((2, 2, 2), bool))
        vol = Volume3D(g, np.ones((2, 2, 2)))
        with pytest.raises(SpecInvalid):
            TumorSample("s-01", "s", {"MR": vol}, mask, "FP")


class TestExtractSamples:
    def test_two_components_split(self):
        mods, mask, crop = _two_component_setup()
        samples = extract_samples(mods, mask, ["TP", "TN"], "subj7", crop_dims=crop)
        assert [s.sample_id for s in samples] == ["subj7-01", "subj7-02"]
        assert [s.label for s in samples] == ["TP", "TN"]  # size-descending order
        assert samples[0].mask.count == 216 and samples[1].mask.count == 27
        for s in samples:
            for name, vol in s.modalities.items():
                assert vol.geometry.dims == crop
                assert np.all(vol.values[~s.mask.membership] == 0.0)
                assert np.all(vol.values[s.mask.membership] != 0.0)

    def test_single_label_broadcast(self):
        mods, mask, crop = _two_component_setup()
        samples = extract_samples(mods, mask, "TN", "s", crop_dims=crop)
        assert all(s.label == "TN" for s in samples)

    def test_component_outside_crop_rejected(self):
        mods, mask, crop = _two_component_setup()
        far = mask.membership.copy()
        far[0:3, 0:3, 0:3] = True  # corner voxels outside the central crop
        with pytest.raises(MaskOutsideCrop):
            extract_samples(mods, Mask(mask.geometry, far), "TP", "s", crop_dims=crop)

    def test_label_count_mismatch(self):
        mods, mask, crop = _two_component_setup()
        with pytest.raises(SpecInvalid):
            extract_samples(mods, mask, ["TP"], "s", crop_dims=crop)

    def test_empty_mask(self):
        mods, mask, crop = _two_component_setup()
        empty = Mask(mask.geometry, np.zeros(mask.geometry.dims, bool))
        with pytest.raises(EmptyMask):
            extract_samples(mods, empty, "TP", "s", crop_dims=crop)


class TestExport:
    def test_manifest_and_tensors(self, tmp_path):
        mods, mask, crop = _two_component_setup()
        samples = extract_samples(mods, mask, ["TP", "TN"], "subj1", crop_dims=crop)
        manifest = export_samples(samples, tmp_path / "export")
        rows = read_manifest(manifest)
        assert len(rows) == 2
        assert tuple(rows[0].keys()) == MANIFEST_COLUMNS
        for row, sample in zip(rows, samples):
            assert row["sample_id"] == sample.sample_id
            assert row["verified"] == "0"
            for col, name in (("mr_path", "MR"), ("suv_path", "SUV"), ("ki_path", "Ki")):
                vol, _ = read_nifti(tmp_path / "export" / row[col])
                np.testing.assert_allclose(vol.values, sample.modalities[name].values,
                                           rtol=1e-6)
            m, hdr = read_nifti(tmp_path / "export" / row["mask_path"])
            assert hdr.datatype == 2  # uint8
            assert np.array_equal(m.values > 0, sample.mask.membership)

    def test_missing_modality_rejected(self, tmp_path):
        g = Geometry((4, 4, 4))
        mask = Mask(g, np.ones((4, 4, 4), bool))
        vol = Volume3D(g, np.ones((4, 4, 4)))
        s = TumorSample("x-01", "x", {"MR": vol}, mask, "TP")
        with pytest.raises(SpecInvalid):
            export_samples([s], tmp_path / "e")

    def test_set_verified(self, tmp_path):
        mods, mask, crop = _two_component_setup()
        samples = extract_samples(mods, mask, ["TP", "TN"], "s", crop_dims=crop)
        manifest = export_samples(samples, tmp_path / "export")
        set_verified(manifest, "s-02", True)
        rows = {r["sample_id"]: r for r in read_manifest(manifest)}
        assert rows["s-02"]["verified"] == "1"
        assert rows["s-01"]["verified"] == "0"
        with pytest.raises(SpecInvalid):
            set_verified(manifest, "nope", True)
