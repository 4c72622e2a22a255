import json

import numpy as np
import pytest
import yaml

from tunnelmag.analysis import read_convergence_csv
from tunnelmag.cli import main
from tunnelmag.config import PipelineConfig, load_config
from tunnelmag.errors import UnknownStage
from tunnelmag.pipeline import LOCK_NAME, REPORT_NAME, run_full, run_stage

SCENE = {
    "width": 64,
    "height": 64,
    "n_frames": 8,
    "frame_interval_s": 1800.0,
    "texture": {"min_wavelength_px": 4, "max_wavelength_px": 16, "contrast": 0.4},
    "ring": {"radius_px": 20, "scale_mm_per_px": 10.0},
    "motion_components": [],
    "rng_seed": 1,
}


def config_dict(**over):
    d = {
        "input": {"manifest_path": "scene/manifest.csv"},
        "pyramid": {"n_scales": 2},
        "flow": {"n_levels": 2},
        "rings": [{"ring_id": "R1", "prism_a_px": [31.5, 11.5], "prism_b_px": [31.5, 51.5], "prism_separation_mm": 400}],
        "output": {"dir": "out"},
    }
    for k, v in over.items():
        d[k] = v
    return d


@pytest.fixture
def workspace(tmp_path):
    scene = dict(SCENE)
    scene["motion_components"] = [{"kind": "ring_squeeze", "amplitude_mm": 0.5}]
    (tmp_path / "scene.yaml").write_text(yaml.safe_dump(scene))
    assert main(["synth", "--config", str(tmp_path / "scene.yaml"), "--output", str(tmp_path / "scene")]) == 0
    (tmp_path / "config.yaml").write_text(yaml.safe_dump(config_dict()))
    return tmp_path


def read_report(directory):
    return json.loads((directory / REPORT_NAME).read_text())


def test_synth_writes_scene(workspace):
    scene = workspace / "scene"
    assert (scene / "manifest.csv").is_file() and (scene / "truth.json").is_file()
    assert len(list(scene.glob("frame_*.png"))) == 8
    rep = read_report(scene)
    assert rep["status"] == "ok" and rep["stages"][0]["name"] == "synth"


def test_full_run_outputs_and_report(workspace):
    assert main(["full", "--config", str(workspace / "config.yaml")]) == 0
    out = workspace / "out"
    for rel in ("ingest/manifest.csv", "magnified/manifest.csv", "flow/index.csv", "flow/flow_00007.pflo",
                "convergence.csv", "deformation_R1.csv", REPORT_NAME):
        assert (out / rel).is_file(), rel
    assert not (out / LOCK_NAME).exists()
    rep = read_report(out)
    assert rep["status"] == "ok"
    assert [s["name"] for s in rep["stages"]] == ["ingest", "magnify", "flow", "analyze"]
    assert all(s["frames"] == 8 for s in rep["stages"][:3])
    inv = {o["path"]: o for o in rep["outputs"]}
    assert "convergence.csv" in inv and len(inv["convergence.csv"]["sha256"]) == 64
    # the config echo reparses to the same config
    assert PipelineConfig.from_dict(rep["config"]) == load_config(workspace / "config.yaml")
    ts, conv = read_convergence_csv(out / "convergence.csv")["R1"]
    assert conv[0] == 0.0 and conv[-1] < 0


def test_staged_run_matches_full(workspace):
    cfg = str(workspace / "config.yaml")
    assert main(["full", "--config", cfg]) == 0
    staged = workspace / "staged"
    for stage in ("ingest", "magnify", "flow", "analyze"):
        assert main([stage, "--config", cfg, "--output", str(staged)]) == 0
    full = workspace / "out"
    for rel in ("convergence.csv", "deformation_R1.csv", "flow/flow_00005.pflo", "magnified/frame_00003.png"):
        assert (full / rel).read_bytes() == (staged / rel).read_bytes(), rel


def test_determinism_and_threads(workspace):
    cfg = load_config(workspace / "config.yaml")
    a = run_full(cfg.with_output(workspace / "a"))
    b = run_full(cfg.with_output(workspace / "b"))
    c = run_full(cfg.with_output(workspace / "c"), threads=3)
    for rel in ("convergence.csv", "deformation_R1.csv"):
        assert (workspace / "a" / rel).read_bytes() == (workspace / "b" / rel).read_bytes()
    sums = lambda r: {o["path"]: o["sha256"] for o in r.outputs}
    assert sums(a) == sums(b)
    ca = read_convergence_csv(workspace / "a" / "convergence.csv")["R1"][1]
    cc = read_convergence_csv(workspace / "c" / "convergence.csv")["R1"][1]
    np.testing.assert_allclose(cc, ca, atol=1e-9)


def test_zero_motion_scene(tmp_path):
    (tmp_path / "scene.yaml").write_text(yaml.safe_dump(SCENE))
    assert main(["synth", "--config", str(tmp_path / "scene.yaml"), "--output", str(tmp_path / "scene")]) == 0
    (tmp_path / "config.yaml").write_text(yaml.safe_dump(config_dict()))
    assert main(["full", "--config", str(tmp_path / "config.yaml")]) == 0
    conv = read_convergence_csv(tmp_path / "out" / "convergence.csv")["R1"][1]
    assert np.abs(conv).max() < 0.01


def test_negative_alpha_exit_1_no_outputs(workspace, caplog):
    (workspace / "bad.yaml").write_text(yaml.safe_dump(config_dict(magnify={"alpha": -1}, output={"dir": "bad_out"})))
    assert main(["full", "--config", str(workspace / "bad.yaml")]) == 1
    assert not (workspace / "bad_out").exists()
    assert "alpha" in caplog.text


def test_missing_manifest_is_validation(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(config_dict()))
    assert main(["full", "--config", str(tmp_path / "c.yaml")]) == 1
    assert not (tmp_path / "out").exists()


def test_missing_intermediate_reports_stage(workspace):
    out = workspace / "empty"
    assert main(["analyze", "--config", str(workspace / "config.yaml"), "--output", str(out)]) == 2
    rep = read_report(out)
    assert rep["status"] == "failed" and rep["failed_stage"] == "analyze"
    assert "MissingIntermediate" in rep["error"]


def test_prism_out_of_frame_is_validation(workspace):
    bad = config_dict(rings=[{"ring_id": "R1", "prism_a_px": [31.5, 11.5], "prism_b_px": [31.5, 90.0],
                              "prism_separation_mm": 400}])
    (workspace / "bad.yaml").write_text(yaml.safe_dump(bad))
    assert main(["full", "--config", str(workspace / "bad.yaml")]) == 1
    rep = read_report(workspace / "out")
    assert rep["failed_stage"] == "analyze" and "PrismOutOfFrame" in rep["error"]
    # stages before the failure still left their outputs
    assert (workspace / "out" / "flow" / "index.csv").is_file()


def test_lock_contention(workspace):
    out = workspace / "out"
    out.mkdir()
    (out / LOCK_NAME).write_text("123\n")
    assert main(["full", "--config", str(workspace / "config.yaml")]) == 2


def test_unknown_stage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["explode", "--config", "x"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err
    with pytest.raises(UnknownStage):
        run_stage("explode", PipelineConfig())


def test_optional_dumps(workspace):
    d = config_dict(output={"dir": "dumps", "dumps": {"pyramid": True, "ring_png": True}})
    (workspace / "d.yaml").write_text(yaml.safe_dump(d))
    assert main(["full", "--config", str(workspace / "d.yaml")]) == 0
    out = workspace / "dumps"
    assert (out / "pyramid" / "band_s0_o0_mag.pgm").is_file()
    assert len(list((out / "rings").glob("ring_R1_*.png"))) == 8
    assert (out / "rings" / "ring_R1_colour_scale.txt").is_file()


def test_log_level_env(workspace, monkeypatch):
    monkeypatch.setenv("TUNNELMAG_LOG", "debug")
    assert main(["ingest", "--config", str(workspace / "config.yaml"), "--output", str(workspace / "i")]) == 0
