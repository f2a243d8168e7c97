import hashlib
import json
import os

import numpy as np
import pytest

from dpet.bloodinput import TimeActivityCurve, load_mcif_result
from dpet.cli import main
from dpet.niftiio import read_nifti
from dpet.tumor import read_manifest

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden", "help")

HELP_CASES = {
    "main": ["--help"],
    "phantom-generate": ["phantom", "generate", "--help"],
    "motion-correct": ["motion-correct", "--help"],
    "segment-ica": ["segment-ica", "--help"],
    "idif": ["idif", "--help"],
    "mcif": ["mcif", "--help"],
    "patlak": ["patlak", "--help"],
    "suv": ["suv", "--help"],
    "segment-tumor": ["segment-tumor", "--help"],
    "harmonize": ["harmonize", "--help"],
    "extract": ["extract", "--help"],
    "export": ["export", "--help"],
}


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


@pytest.mark.parametrize("name", sorted(HELP_CASES))
def test_help_golden(name, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    with pytest.raises(SystemExit) as exc:
        main(HELP_CASES[name])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    with open(os.path.join(GOLDEN_DIR, f"{name}.txt")) as f:
        assert out == f.read()


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Run the full CLI chain once on the default noiseless phantom."""
    root = tmp_path_factory.mktemp("pipeline")
    ph = root / "phantom"
    assert main(["phantom", "generate", "--out-dir", str(ph)]) == 0
    pet = ph / "pet_dynamic.nii"

    dyn, _ = read_nifti(pet)
    early = int(np.argmax([float(fr.values.max()) for fr in dyn.frames]))

    ica = str(root / "ica.nii")
    assert main(["segment-ica", "--input", str(pet), "--output", ica,
                 "--early-frame", str(early)]) == 0

    idif = str(root / "idif.csv")
    assert main(["idif", "--input", str(pet), "--mask", ica, "--output", idif]) == 0

    mcif = str(root / "mcif.txt")
    assert main(["mcif", "--idif", idif, "--output", mcif,
                 "--input", str(pet), "--mask", ica]) == 0

    prefix = str(root / "patlak")
    assert main(["patlak", "--input", str(pet), "--blood-input", mcif,
                 "--out-prefix", prefix]) == 0

    suv = str(root / "suv.nii")
    assert main(["suv", "--input", str(pet), "--meta", str(ph / "study.meta.txt"),
                 "--output", suv]) == 0

    tumor = str(root / "tumor_mask.nii")
    assert main(["segment-tumor", "--input", prefix + "_ki.nii", "--output", tumor,
                 "--seed", "14,15,15", "--seed", "34,31,17",
                 "--low", "0.007", "--high", "0.04", "--sigma-mm", "2.0"]) == 0

    atlas = str(root / "atlas")
    assert main(["harmonize", "--mr", str(ph / "mr.nii"),
                 "--others", f"{suv},{prefix}_ki.nii", "--mask", tumor,
                 "--atlas-dims", "48,48,32", "--atlas-voxel", "2,2,2",
                 "--out-dir", atlas]) == 0

    samples = str(root / "samples")
    assert main(["extract", "--mr", os.path.join(atlas, "mr_atlas.nii"),
                 "--suv", os.path.join(atlas, "suv_atlas.nii"),
                 "--ki", os.path.join(atlas, "patlak_ki_atlas.nii"),
                 "--mask", os.path.join(atlas, "mask_atlas.nii"),
                 "--subject-id", "subj01", "--labels", "TP,TN",
                 "--crop-dims", "40,40,28", "--out-dir", samples]) == 0

    cohort = str(root / "cohort.csv")
    assert main(["export", "--manifest", cohort,
                 "--inputs", os.path.join(samples, "manifest.csv")]) == 0
    return {"root": root, "phantom": ph, "pet": pet, "early": early, "ica": ica,
            "idif": idif, "mcif": mcif, "prefix": prefix, "suv": suv,
            "tumor": tumor, "atlas": atlas, "samples": samples, "cohort": cohort}


class TestPipeline:
    def test_ica_mask_is_artery(self, pipeline):
        mask, _ = read_nifti(pipeline["ica"])
        assert int((mask.values > 0).sum()) == 318

    def test_mcif_recovers_unattenuated_blood(self, pipeline):
        res = load_mcif_result(pipeline["mcif"])
        assert 0.9 <= res.rc <= 1.1
        assert res.sp < 0.05

    def test_ki_map_accuracy(self, pipeline):
        ki, _ = read_nifti(pipeline["prefix"] + "_ki.nii")
        true_ki, _ = read_nifti(pipeline["phantom"] / "true_ki.nii")
        tp = np.isclose(true_ki.values, 0.025)
        est = float(ki.values[tp].mean())
        assert abs(est - 0.025) / 0.025 < 0.05

    def test_suv_positive_everywhere_in_tissue(self, pipeline):
        suv, _ = read_nifti(pipeline["suv"])
        assert float(suv.values.min()) >= 0.0
        assert float(suv.values.max()) > 0.0

    def test_tumor_mask_two_components(self, pipeline):
        from dpet.volume import Mask, connected_components

        m, _ = read_nifti(pipeline["tumor"])
        _, counts = connected_components(
            Mask(m.geometry, m.values > 0), connectivity=26)
        assert len(counts) == 2

    def test_manifest_contents(self, pipeline):
        rows = read_manifest(pipeline["cohort"])
        assert [r["sample_id"] for r in rows] == ["subj01-01", "subj01-02"]
        assert [r["label"] for r in rows] == ["TP", "TN"]
        for r in rows:
            for col in ("mr_path", "suv_path", "ki_path", "mask_path"):
                assert os.path.exists(r[col])

    def test_exported_tensors_masked_and_cropped(self, pipeline):
        rows = read_manifest(pipeline["cohort"])
        for r in rows:
            mask, _ = read_nifti(r["mask_path"])
            sel = mask.values > 0
            assert mask.values.shape == (40, 40, 28)
            for col in ("mr_path", "suv_path", "ki_path"):
                vol, _ = read_nifti(r[col])
                assert vol.values.shape == (40, 40, 28)
                assert np.all(vol.values[~sel] == 0.0)

    def test_verify_flag(self, pipeline):
        assert main(["export", "--manifest", pipeline["cohort"],
                     "--verify", "subj01-02"]) == 0
        rows = {r["sample_id"]: r for r in read_manifest(pipeline["cohort"])}
        assert rows["subj01-02"]["verified"] == "1"
        assert rows["subj01-01"]["verified"] == "0"

    def test_provenance_written(self, pipeline):
        prov_path = pipeline["prefix"] + "_ki.nii.prov.json"
        with open(prov_path) as f:
            prov = json.load(f)
        assert prov["stage"] == "patlak"
        assert str(pipeline["pet"]) in prov["inputs"]
        assert prov["inputs"][str(pipeline["pet"])] == file_sha256(pipeline["pet"])
        assert prov["config"]["t_star"] == 20.0


class TestDeterminism:
    def test_patlak_workers_and_rerun_hash_identical(self, pipeline, tmp_path):
        digests = []
        for tag, workers in (("a", 1), ("b", 4), ("c", 1)):
            prefix = str(tmp_path / f"run_{tag}")
            assert main(["patlak", "--input", str(pipeline["pet"]),
                         "--blood-input", pipeline["mcif"],
                         "--out-prefix", prefix, "--workers", str(workers)]) == 0
            h = hashlib.sha256()
            for suffix in ("_ki.nii", "_v.nii", "_r2.nii", "_mask.nii"):
                h.update(open(prefix + suffix, "rb").read())
            digests.append(h.hexdigest())
        assert digests[0] == digests[1] == digests[2]

    def test_phantom_rerun_identical(self, tmp_path):
        hashes = []
        for tag in ("x", "y"):
            d = tmp_path / tag
            assert main(["phantom", "generate", "--out-dir", str(d),
                         "--noise-seed", "5", "--noise-scale", "0.3"]) == 0
            hashes.append(file_sha256(d / "pet_dynamic.nii"))
        assert hashes[0] == hashes[1]


class TestExitCodes:
    def test_validation_error_exits_2(self, pipeline):
        # t* beyond the last frame leaves too few late frames
        code = main(["patlak", "--input", str(pipeline["pet"]),
                     "--blood-input", pipeline["mcif"],
                     "--out-prefix", str(pipeline["root"] / "bad"),
                     "--t-star", "59"])
        assert code == 2

    def test_numeric_error_exits_3(self, pipeline):
        code = main(["segment-ica", "--input", str(pipeline["pet"]),
                     "--output", str(pipeline["root"] / "bad_ica.nii"),
                     "--early-frame", str(pipeline["early"]),
                     "--min-size", "100000", "--max-size", "200000"])
        assert code == 3

    def test_missing_input_exits_2(self, tmp_path):
        code = main(["idif", "--input", str(tmp_path / "nope.nii"),
                     "--mask", str(tmp_path / "nope_mask.nii"),
                     "--output", str(tmp_path / "out.csv")])
        assert code == 2
