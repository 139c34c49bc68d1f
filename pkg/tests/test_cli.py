import hashlib
import json
import math

import numpy as np
import pytest

from equibench.cli import main, parse_config
from equibench.errors import ConfigError
from equibench.graphdata import Dataset

BASE = {
    "task": "jet_tagging",
    "seed": 5,
    "generator": {"n_events": 120, "n_particles": [3, 5]},
    "models": {
        "lorentz": {"message": "lorentz", "hidden": 4, "n_layers": 1},
        "free": {"message": "unconstrained", "hidden": 4, "n_layers": 1},
    },
    "train": {"epochs": 2, "batch_size": 20, "learning_rate": 0.005},
    "sweeps": [
        {"protocol": "certify", "models": ["lorentz"], "options": {"n_samples": 10}},
        {"protocol": "data_efficiency", "grid": [0.2, 1.0], "seeds": [0, 1]},
    ],
}


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_config(tmp_path, cfg=None, name="cfg.json", **changes):
    cfg = json.loads(json.dumps(cfg or BASE))
    cfg.update(changes)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_generate_is_byte_deterministic_and_creates_dirs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "deep" / "a", tmp_path / "b"
    assert main(["generate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["generate", "--config", str(cfg), "--out", str(b)]) == 0
    assert digest(a / "dataset.json") == digest(b / "dataset.json")
    doc = json.loads((a / "dataset.json").read_text())
    assert doc["provenance"]["seed"] == 5 and len(doc["provenance"]["config_hash"]) == 16
    assert "synthetic" in capsys.readouterr().out
    assert main(["generate", "--config", str(cfg), "--out", str(b), "--seed", "6"]) == 0
    assert digest(a / "dataset.json") != digest(b / "dataset.json")


def test_env_var_sets_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv("EQUIBENCH_OUT", str(tmp_path / "env"))
    assert main(["generate", "--config", str(write_config(tmp_path))]) == 0
    assert (tmp_path / "env" / "dataset.json").exists()


@pytest.mark.parametrize(
    "change,key",
    [
        ({"tsak": "jet_tagging"}, "tsak"),
        ({"generator": {"n_evnts": 3}}, "generator.n_evnts"),
        ({"train": {"epochs": -1}}, "train.epochs"),
        ({"models": {"m": {"hidden": 0}}}, "models.m.hidden"),
        ({"models": {"m": {"head": "edge"}}}, "models.m.head"),
        ({"sweeps": [{"protocol": "certify", "models": ["nope"]}]}, "sweeps[0].models"),
        ({"sweeps": [{"protocol": "rotation_robustness"}]}, "sweeps[0].protocol"),
        ({"task": "weather"}, "task"),
    ],
)
def test_bad_config_exit_2_names_key(tmp_path, capsys, change, key):
    cfg = write_config(tmp_path, **change)
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert key in capsys.readouterr().err


def test_missing_and_malformed_config(tmp_path, capsys):
    assert main(["generate", "--config", str(tmp_path / "none.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["generate", "--config", str(bad)]) == 2
    assert main(["frobnicate"]) == 2


def test_seed_substreams_are_named():
    cfg = parse_config(BASE)
    assert cfg.models["lorentz"].seed != cfg.models["free"].seed
    assert cfg.train.seed not in (cfg.models["lorentz"].seed, cfg.generator_seed)
    again = parse_config(BASE)
    assert again.hash == cfg.hash and again.models == cfg.models
    assert parse_config(BASE, seed_override=9).hash != cfg.hash
    with pytest.raises(ConfigError, match="test_fraction"):
        parse_config({**BASE, "test_fraction": 1.5})


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root)
    out = root / "out"
    assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["train", "--config", str(cfg), "--model", "lorentz", "--out", str(out)]) == 0
    return root, cfg, out


def test_train_outputs_and_rerun_checksum(trained, tmp_path):
    root, cfg, out = trained
    ckpt = out / "models" / "lorentz" / "checkpoint.json"
    hist = out / "models" / "lorentz" / "history.csv"
    meta = json.loads(ckpt.read_text())
    assert meta["config_hash"] and meta["seed"] == 5 and meta["best_epoch"] >= 1
    assert len(meta["validation_indices"]) == 24
    assert hist.read_text().startswith("# config_hash=")
    before = digest(ckpt), digest(hist)
    assert main(["train", "--config", str(cfg), "--model", "lorentz", "--out", str(out)]) == 0
    assert (digest(ckpt), digest(hist)) == before


def test_eval_reproduces_validation_auc(trained, capsys):
    root, cfg, out = trained
    ckpt = out / "models" / "lorentz" / "checkpoint.json"
    meta = json.loads(ckpt.read_text())
    rows = (out / "models" / "lorentz" / "history.csv").read_text().splitlines()[2:]
    best = rows[meta["best_epoch"] - 1].split(",")
    code = main(["eval", "--checkpoint", str(ckpt), "--dataset", str(out / "dataset.json"), "--split", "val"])
    assert code == 0
    report = json.loads((out / "models" / "lorentz" / "report_val.json").read_text())
    assert report["auc"] == float(best[3])
    assert report["config_hash"] == meta["config_hash"]
    assert "ant factor v2" in capsys.readouterr().out


def test_eval_with_timing(trained, tmp_path):
    root, cfg, out = trained
    ckpt = out / "models" / "lorentz" / "checkpoint.json"
    args = ["eval", "--checkpoint", str(ckpt), "--dataset", str(out / "dataset.json"), "--timing", "--timing-runs", "5"]
    assert main(args + ["--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report_all.json").read_text())
    assert report["timing"]["runs"] == 5 and report["timing"]["batch_size"] == 100


def test_train_errors(trained, tmp_path, capsys):
    root, cfg, out = trained
    assert main(["train", "--config", str(cfg), "--model", "lorentz", "--out", str(tmp_path / "empty")]) == 2
    assert main(["train", "--config", str(cfg), "--model", "ghost", "--out", str(out)]) == 2
    assert "ghost" in capsys.readouterr().err
    track_cfg = write_config(
        tmp_path, name="t.json", task="tracking", sweeps=[],
        models={"e": {"message": "euclid", "hidden": 3}}, dataset=str(out / "dataset.json"),
    )
    assert main(["train", "--config", str(track_cfg), "--model", "e"]) == 2


def test_eval_errors(trained, tmp_path):
    root, cfg, out = trained
    ckpt = out / "models" / "lorentz" / "checkpoint.json"
    empty = Dataset([], "jet_tagging")
    empty.save(tmp_path / "empty.json")
    assert main(["eval", "--checkpoint", str(ckpt), "--dataset", str(tmp_path / "empty.json")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.json"), "--dataset", str(out / "dataset.json")]) == 2


def test_numerical_failure_exit_3(trained, tmp_path, capsys):
    root, cfg, out = trained
    ds = Dataset.load(out / "dataset.json")
    e = ds.events[0]
    pos = e.positions.copy()
    pos[:, 1] = np.nan
    ds.events[0] = e.with_positions(pos)
    ds.save(tmp_path / "poisoned.json")
    bad_cfg = write_config(tmp_path, name="p.json", dataset=str(tmp_path / "poisoned.json"), train={"epochs": 1, "val_fraction": 0.0})
    assert main(["train", "--config", str(bad_cfg), "--model", "lorentz", "--out", str(tmp_path)]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_sweep_unknown_protocol_lists_valid(trained, capsys):
    root, cfg, out = trained
    assert main(["sweep", "--config", str(cfg), "--protocol", "fig3", "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert "boost_robustness" in err and "hybrid_scan" in err
    assert main(["sweep", "--config", str(cfg), "--protocol", "ablation", "--out", str(out)]) == 2


def test_certify_prints_pass_line(trained, capsys):
    root, cfg, out = trained
    assert main(["certify", "--config", str(cfg), "--out", str(out)]) == 0
    assert "lorentz: PASS tol=1e-9" in capsys.readouterr().out


def test_sweep_deterministic_across_jobs(trained, tmp_path, capsys):
    root, cfg, out = trained
    a, b = tmp_path / "a", tmp_path / "b"
    for target, jobs in ((a, "1"), (b, "2")):
        (target).mkdir()
        (target / "dataset.json").write_bytes((out / "dataset.json").read_bytes())
        assert main(["sweep", "--config", str(cfg), "--protocol", "data_efficiency", "--out", str(target), "--jobs", jobs]) == 0
    files_a = sorted((a / "sweeps" / "data_efficiency").iterdir())
    files_b = sorted((b / "sweeps" / "data_efficiency").iterdir())
    assert [f.name for f in files_a] == [f.name for f in files_b]
    for fa, fb in zip(files_a, files_b):
        assert digest(fa) == digest(fb)
    text = capsys.readouterr().out
    assert "Training %" in text
    first = files_a[0].read_text().splitlines()[0]
    assert first.startswith("# config_hash=") and first.endswith("seed=5")
    assert not math.isnan(json.loads(files_a[1].read_text())["seed"])
