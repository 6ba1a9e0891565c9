import csv
import json
import shutil

import pytest

from peakcgan.cli import main
from peakcgan.datastore import SpectrumStore

TINY_GAN = {"iterations": 3, "batch": 2, "embed_dim": 8, "hidden_dim": 6, "depth": 3,
            "noise_dim": 4, "tokens": 4, "checkpoint_every": 3}
TINY_DET = {"ladder": [0, 2], "epochs": 1, "batch": 8, "pool_size": 8, "val_n": 1,
            "encoder_dim": 8, "gc_encoder_dim": 8, "ff_dim": 16, "heads": 2, "layers": 1}


@pytest.fixture(autouse=True)
def no_db_env(monkeypatch):
    monkeypatch.delenv("PEAKCGAN_DB", raising=False)


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def pipeline(out, seed=0):
    """simulate -> train-gan -> generate -> train-detector -> evaluate -> export-mesh."""
    out.mkdir(parents=True, exist_ok=True)
    common = ["--out", str(out), "--seed", str(seed)]
    gan = write_json(out.parent / f"{out.name}_gan.json", TINY_GAN)
    det = write_json(out.parent / f"{out.name}_det.json", TINY_DET)
    steps = [
        ["simulate", "--n", "1", "--T", "128"],
        ["train-gan", "--config", gan],
        ["generate", "--n", "1"],
        ["train-detector", "--config", det],
        ["evaluate", "--detector", str(out / "detector_2.ckpt")],
        ["export-mesh", "--record-id", "1"],
    ]
    for argv in steps:
        assert main(argv + common) == 0, argv
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture(scope="module")
def run_a(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "a"
    return out, pipeline(out)


def test_simulate_smoke(tmp_path):
    assert main(["simulate", "--n", "1", "--T", "128", "--out", str(tmp_path)]) == 0
    with SpectrumStore(tmp_path / "peakcgan.db") as s:
        assert len(s) == 16
        assert {r.data_type for r in s} == {"real"}
    snap = json.loads((tmp_path / "simulate.config.json").read_text())
    assert snap["command"] == "simulate" and snap["n"] == 1 and snap["T"] == 128


def test_db_flag_and_env(tmp_path, monkeypatch):
    assert main(["simulate", "--n", "1", "--T", "64", "--out", str(tmp_path),
                 "--db", str(tmp_path / "x.db")]) == 0
    assert (tmp_path / "x.db").exists()
    monkeypatch.setenv("PEAKCGAN_DB", str(tmp_path / "env.db"))
    assert main(["simulate", "--n", "1", "--T", "64", "--out", str(tmp_path)]) == 0
    with SpectrumStore(tmp_path / "env.db") as s:
        assert len(s) == 16


def test_pipeline_artifacts(run_a):
    out, manifest = run_a
    assert set(manifest) == {"simulate", "train-gan", "generate", "train-detector", "evaluate",
                             "export-mesh"}
    for files in manifest.values():
        for rel in files:
            assert (out / rel).exists()
    assert "checkpoints/generator_0000003.ckpt" in manifest["train-gan"]
    with open(out / "table5.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["train_size"] for r in rows] == ["0", "2"]
    with open(out / "loss_history.csv") as fh:
        assert next(csv.reader(fh)) == ["iteration", "L_G_adv", "L_G_stft", "L_D"]
    with SpectrumStore(out / "peakcgan.db") as s:
        assert len(s.query_records(data_type="synthetic")) == 16
    assert (out / "table4a_gc.csv").exists() and (out / "table5_eval.csv").exists()
    assert (out / "mesh_1.csv").exists()


def _artifacts(manifest):
    # snapshots embed the output path, everything else must match byte for byte
    return {cmd: {k: v for k, v in files.items() if not k.endswith(".config.json")}
            for cmd, files in manifest.items()}


def test_seed_determinism(run_a, tmp_path):
    out_a, manifest = run_a
    out_b = tmp_path / "a"
    assert _artifacts(pipeline(out_b)) == _artifacts(manifest)
    for snap in out_a.glob("*.config.json"):
        a = snap.read_text().replace(str(out_a.parent), "ROOT")
        b = (out_b / snap.name).read_text().replace(str(out_b.parent), "ROOT")
        assert a == b


def test_snapshot_reruns_experiment(run_a, tmp_path):
    out, manifest = run_a
    snap = tmp_path / "snap.json"
    shutil.copy(out / "simulate.config.json", snap)
    fresh = tmp_path / "fresh"
    cfg = json.loads(snap.read_text())
    cfg.update(out=str(fresh), db=str(fresh / "peakcgan.db"))
    snap.write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(snap)]) == 0
    again = json.loads((fresh / "manifest.json").read_text())["simulate"]
    assert {k: v for k, v in again.items() if k.startswith("spectra/")} == \
           {k: v for k, v in manifest["simulate"].items() if k.startswith("spectra/")}


def test_evaluate_real_against_itself(run_a, tmp_path):
    out, _ = run_a
    dest = tmp_path / "eval"
    assert main(["evaluate", "--real-type", "real", "--gen-type", "real", "--out", str(dest),
                 "--db", str(out / "peakcgan.db")]) == 0
    with open(dest / "table4a_gc.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 16
    assert all(r["pcc"] == "1.0000" and r["cosine"] == "1.0000" for r in rows)


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["simulate", "--n", "many"]) == 2
    assert main(["train-detector", "--ladder", "1,x"]) == 2
    cfg = write_json(tmp_path / "bad.json", {"n": 1, "bogus": 3})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err
    other = write_json(tmp_path / "other.json", {"command": "eda"})
    assert main(["simulate", "--config", other, "--out", str(tmp_path)]) == 2


def test_runtime_failure_exit_1(tmp_path, capsys):
    assert main(["train-gan", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1 and "simulate first" in err
