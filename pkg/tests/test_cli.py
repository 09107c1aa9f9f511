import json
import subprocess
import sys

import numpy as np
import pytest

from blendrig.cli import PipelineConfig, main, run_pipeline
from blendrig.io import landmark_record, read_jsonl, read_obj, read_rig, write_jsonl
from blendrig.synth import read_dataset

SMALL = {"resolution": 300}
TINY_TRAIN = {"preset": "desk", "train": {"steps": 20, "batch_size": 8, "log_every": 10}}


def _strip_comments(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Template, train/holdout data and a briefly trained checkpoint, all made through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    (d / "tpl.json").write_text(json.dumps(SMALL))
    (d / "train.json").write_text(json.dumps(TINY_TRAIN))
    common = ["--threads", "1", "--seed", "3"]
    assert main(common + ["gen-template", "--cfg", str(d / "tpl.json"), "--out", str(d / "rig")]) == 0
    assert main(common + ["gen-data", "--template-cfg", str(d / "tpl.json"), "--n", "40", "--n-identities", "2",
                          "--out", str(d / "train.jsonl")]) == 0
    assert main(common + ["gen-data", "--template-cfg", str(d / "tpl.json"), "--n", "6", "--n-identities", "1",
                          "--identity-offset", "2", "--sample-offset", "40", "--out", str(d / "hold.jsonl")]) == 0
    assert main(common + ["train", "--data", str(d / "train.jsonl"), "--cfg", str(d / "train.json"),
                          "--holdout", str(d / "hold.jsonl"), "--log", str(d / "log.jsonl"),
                          "--out", str(d / "m.ckpt")]) == 0
    return d


def test_dataset_records_provenance(work):
    header, samples = read_dataset(work / "train.jsonl")
    assert header["seed"] == 3 and header["n"] == 40 and len(samples) == 40
    assert header["template_cfg"]["resolution"] == 300
    assert {s.identity_id for s in samples} <= {0, 1}


def test_training_log(work):
    log = list(read_jsonl(work / "log.jsonl"))
    assert [e["step"] for e in log] == [10, 20]
    assert all("holdout" in e for e in log)


def test_infer_and_eval(work, capsys):
    _, samples = read_dataset(work / "hold.jsonl")
    write_jsonl(work / "lm.jsonl", [landmark_record(i, s.landmarks2d) for i, s in enumerate(samples)])
    assert main(["--threads", "1", "infer", "--ckpt", str(work / "m.ckpt"), "--landmarks", str(work / "lm.jsonl"),
                 "--out", str(work / "pred.jsonl")]) == 0
    recs = list(read_jsonl(work / "pred.jsonl"))
    assert recs[0]["type"] == "header" and len(recs) == 7
    w = np.array([r["coefficients"] for r in recs[1:]])
    assert np.all((w > 0) & (w < 1))
    assert main(["--threads", "1", "eval", "--ckpt", str(work / "m.ckpt"), "--holdout", str(work / "hold.jsonl"),
                 "--rig", str(work / "rig"), "--report", str(work / "report.json")]) == 0
    rep = json.loads((work / "report.json").read_text())
    assert set(rep["rows"]) == {"model", "baseline", "fitter"}
    assert rep["rows"]["fitter"]["overall"] < 0.5
    assert "model" in capsys.readouterr().out


def test_fit_command(work):
    _, samples = read_dataset(work / "hold.jsonl")
    cam = read_dataset(work / "hold.jsonl")[0]["cameras"][0]
    (work / "cam.json").write_text(json.dumps(cam))
    assert main(["--threads", "1", "fit", "--rig", str(work / "rig"), "--targets", str(work / "hold.jsonl"),
                 "--camera", str(work / "cam.json"), "--out", str(work / "fit.jsonl")]) == 0
    fits = list(read_jsonl(work / "fit.jsonl"))
    assert len(fits) == len(samples)
    w = np.array([f["coefficients"] for f in fits])
    assert np.all((w >= 0) & (w <= 1))


def test_pose_export(work):
    rig = read_rig(work / "rig")
    (work / "zero.json").write_text("{}")
    assert main(["pose", "--rig", str(work / "rig"), "--coefficients", str(work / "zero.json"),
                 "--out", str(work / "zero.obj")]) == 0
    assert _strip_comments(work / "zero.obj") == _strip_comments(work / "rig" / "neutral.obj")
    (work / "one.json").write_text(json.dumps({"jawOpen": 1.0}))
    assert main(["pose", "--rig", str(work / "rig"), "--coefficients", str(work / "one.json"),
                 "--out", str(work / "one.obj")]) == 0
    assert _strip_comments(work / "one.obj") == _strip_comments(work / "rig" / "shapes" / "jawOpen.obj")
    w = {"jawOpen": 0.3, "mouthSmileLeft": 0.7, "eyeBlinkRight": 0.5}
    (work / "mix.json").write_text(json.dumps(w))
    assert main(["pose", "--rig", str(work / "rig"), "--coefficients", str(work / "mix.json"),
                 "--out", str(work / "mix.obj")]) == 0
    from blendrig.mesh import apply_expression

    ref = apply_expression(rig, rig.coefficients(w)).vertices
    assert np.max(np.abs(read_obj(work / "mix.obj").vertices - ref)) <= 1e-5


def test_pairdiff_and_transfer(work):
    assert main(["pairdiff", "--rig", str(work / "rig"), "--report", str(work / "pd.json")]) == 0
    pd = json.loads((work / "pd.json").read_text())
    assert np.array(pd["matrix"]).shape == (52, 52) and pd["mean"] > 0
    from blendrig.io import write_obj
    from blendrig.synth import make_identity

    write_obj(work / "face.obj", make_identity(read_rig(work / "rig"), 9))
    assert main(["--threads", "1", "transfer", "--template", str(work / "rig"), "--target", str(work / "face.obj"),
                 "--out", str(work / "face_rig")]) == 0
    assert len(read_rig(work / "face_rig").shapes) == 52


def test_exit_codes(work, tmp_path):
    rig = str(work / "rig")
    (tmp_path / "bad.json").write_text(json.dumps({"notAShape": 1.0}))
    assert main(["pose", "--rig", rig, "--coefficients", str(tmp_path / "bad.json"),
                 "--out", str(tmp_path / "x.obj")]) == 2
    assert main(["pose", "--rig", rig, "--coefficients", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "x.obj")]) == 2
    assert main(["pose", "--rig", rig, "--coefficients", str(tmp_path / "bad.json"),
                 "--out", str(tmp_path / "no" / "dir" / "x.obj")]) == 4
    assert main(["gen-data", "--n", "3"]) == 2  # --out missing
    assert main(["gen-data", "--prior", str(tmp_path / "nope.json"), "--n", "3",
                 "--out", str(tmp_path / "d.jsonl")]) == 2
    assert main(["infer", "--ckpt", str(tmp_path / "nope.ckpt"), "--landmarks", "x", "--out",
                 str(tmp_path / "p.jsonl")]) == 2
    assert not (tmp_path / "x.obj").exists() and not (tmp_path / "d.jsonl").exists()


def test_config_file_supplies_flags(work, tmp_path):
    (tmp_path / "zero.json").write_text("{}")
    cfg = {"pose": {"rig": str(work / "rig"), "coefficients": str(tmp_path / "zero.json")}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["--config", str(tmp_path / "c.json"), "pose", "--out", str(tmp_path / "z.obj")]) == 0
    assert _strip_comments(tmp_path / "z.obj") == _strip_comments(work / "rig" / "neutral.obj")


def test_pipeline_missing_prior_leaves_nothing(tmp_path):
    (tmp_path / "p.json").write_text(json.dumps({"prior": str(tmp_path / "none.json")}))
    out = tmp_path / "run"
    assert main(["--config", str(tmp_path / "p.json"), "pipeline", "--out", str(out)]) == 2
    assert not out.exists()


def test_pipeline_smoke(tmp_path):
    cfg = PipelineConfig(seed=1, template_cfg=SMALL, n_identities=2, n_train=30, holdout_identities=1,
                         n_holdout=4, training=TINY_TRAIN)
    prov = run_pipeline(cfg, tmp_path / "run", threads=1, quiet=True)
    for name in ("train.jsonl", "holdout.jsonl", "model.ckpt", "report.json", "report.txt", "provenance.json"):
        assert (tmp_path / "run" / name).exists()
    assert prov["seed"] == 1 and set(prov["artifacts"]) == {"template", "train", "holdout", "checkpoint", "report"}
    rep = json.loads((tmp_path / "run" / "report.json").read_text())
    assert rep["meta"]["config_hash"] == prov["config_hash"]


def test_console_script_runs():
    r = subprocess.run([sys.executable, "-m", "blendrig.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "blendrig" in r.stdout
