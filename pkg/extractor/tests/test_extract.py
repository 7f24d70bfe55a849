import json
import struct
import subprocess
import sys

import numpy as np
import pytest

from attnseg_extractor import ExtractionJob, expected_census, run_extraction
from attnseg_extractor.adzt import tensor_bytes


def test_adzt_byte_layout():
    data = np.ones((1, 1, 1, 1), dtype=np.float32)
    raw = tensor_bytes(data)
    assert len(raw) == 32
    assert raw[:4] == b"ADZT"
    assert struct.unpack("<II", raw[4:12]) == (1, 4)
    assert struct.unpack("<4I", raw[12:28]) == (1, 1, 1, 1)
    with pytest.raises(ValueError):
        tensor_bytes(np.ones((2, 2, 2, 1), dtype=np.float32))
    with pytest.raises(ValueError):
        tensor_bytes(np.full((1, 1, 1, 1), np.nan, dtype=np.float32))


def test_census_matches_architecture(extraction):
    result, _ = extraction
    assert result.census == {64: 5, 32: 5, 16: 5, 8: 1}
    assert result.census == expected_census(64)
    assert result.warnings == []
    assert len(result.tensor_paths) == 16


def test_manifest_contents(extraction):
    result, out = extraction
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["timestep"] == 300
    assert manifest["latent_resolution"] == 64
    assert manifest["image_id"] == "sample"
    assert len(manifest["entries"]) == 16
    layer_ids = [e["layer_id"] for e in manifest["entries"]]
    assert layer_ids == list(range(16))
    assert "census=64:5,32:5,16:5,8:1" in manifest["extractor_info"]
    for entry in manifest["entries"]:
        assert (out / entry["file"]).exists()


def test_tensor_slices_are_distributions(extraction):
    result, out = extraction
    path = result.tensor_paths[0]
    with open(path, "rb") as f:
        raw = f.read()
    w = struct.unpack("<I", raw[12:16])[0]
    data = np.frombuffer(raw[28:], dtype="<f4").reshape(w * w, w * w)
    sums = data.sum(axis=1)
    assert np.abs(sums - 1.0).max() < 1e-4
    assert data.min() >= 0.0


def test_timestep_validation(toy_host, sample_image, tmp_path):
    job = ExtractionJob(
        image_path=sample_image, output_dir=str(tmp_path), timestep=5000
    )
    with pytest.raises(ValueError, match="timestep"):
        run_extraction(toy_host, job)


def test_extraction_is_deterministic(toy_host, sample_image, tmp_path):
    digests = []
    for attempt in ("a", "b"):
        out = tmp_path / attempt
        run_extraction(
            toy_host,
            ExtractionJob(
                image_path=sample_image,
                output_dir=str(out),
                timestep=120,
                seed=77,
            ),
        )
        digests.append(
            [
                (p.name, p.read_bytes())
                for p in sorted(out.iterdir())
                if p.suffix == ".adzt"
            ]
        )
    assert digests[0] == digests[1]


def test_primary_cli_consumes_output(extraction, tmp_path):
    result, out = extraction
    info = subprocess.run(
        [sys.executable, "-m", "attnseg.cli", "info",
         "--manifest", str(out / "manifest.json")],
        capture_output=True, text=True,
    )
    assert info.returncode == 0, info.stderr
    assert "R(64) = 0.112676" in info.stdout

    seg_dir = tmp_path / "seg"
    seg = subprocess.run(
        [sys.executable, "-m", "attnseg.cli", "segment",
         "--manifest", str(out / "manifest.json"),
         "--out", str(seg_dir), "--out-size", "64x64"],
        capture_output=True, text=True,
    )
    assert seg.returncode == 0, seg.stderr
    summary = json.loads((seg_dir / "summary.json").read_text())
    assert 1 <= summary["num_proposals"] <= 256
    assert (seg_dir / "mask.pgm").exists() or any(
        p.suffix == ".u16" for p in seg_dir.iterdir()
    )
