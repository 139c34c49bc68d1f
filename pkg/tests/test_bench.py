import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from equibench import bench
from equibench.errors import ConfigError, ContractError, DomainError
from equibench.graphdata import JetGenConfig, TrackGenConfig, generate_jets, generate_tracks, split
from equibench.groups import LorentzBoost, act
from equibench.layers import GNNModel, MessageKind, ModelSpec
from equibench.train import TrainConfig

LORENTZ = ModelSpec(message=MessageKind("lorentz"), hidden=4, n_layers=1)
FREE = ModelSpec(message=MessageKind("unconstrained"), hidden=4, n_layers=1)
EUCLID = ModelSpec(message=MessageKind("euclid"), hidden=4, n_layers=1, head="edge", pos_dim=2)
CFG = TrainConfig(epochs=2, batch_size=20, learning_rate=5e-3)


@pytest.fixture(scope="module")
def jet_split():
    ds = generate_jets(JetGenConfig(n_events=200, n_particles=(3, 5)), seed=2)
    return split(ds, 0.3, seed=0)


@pytest.fixture(scope="module")
def track_split():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = generate_tracks(TrackGenConfig(n_events=40), seed=2)
    return split(ds, 0.3, seed=0)


def test_sweep_spec_validation():
    with pytest.raises(ConfigError, match="protocol"):
        bench.SweepSpec("fig9", [0.1], [0])
    with pytest.raises(ConfigError, match="grid"):
        bench.SweepSpec("boost_robustness", [], [0])
    with pytest.raises(ConfigError, match="grid"):
        bench.SweepSpec("boost_robustness", [1.0], [0])
    a = bench.SweepSpec("certify", [0.9], [0], {"m": LORENTZ})
    b = bench.SweepSpec("certify", [0.9], [0], {"m": LORENTZ})
    c = bench.SweepSpec("certify", [0.9], [1], {"m": LORENTZ})
    assert a.content_hash() == b.content_hash() != c.content_hash()


def test_boost_robustness_flat_for_lorentz(jet_split):
    train_ds, test_ds = jet_split
    model = GNNModel(LORENTZ)
    res = bench.boost_robustness({"lorentz": {0: model}}, test_ds, betas=[0.0, 0.5, 0.9])
    accs = [r["accuracy"] for r in res.select("lorentz")]
    assert accs[0] == accs[1] == accs[2]
    s0, s9 = res.scores[("lorentz", 0.0, 0)], res.scores[("lorentz", 0.9, 0)]
    np.testing.assert_allclose(s9, s0, atol=1e-9)
    drops = res.summary["lorentz"]["accuracy_drop"]
    assert drops["0.9"][0] == 0.0
    with pytest.raises(DomainError):
        bench.boost_robustness({"m": {0: model}}, test_ds, betas=[0.99, 1.0])


def test_rotation_robustness_flat_for_euclid(track_split):
    _, test_ds = track_split
    res = bench.rotation_robustness({"euclid": {0: GNNModel(EUCLID)}}, test_ds)
    s0 = res.scores[("euclid", 0.0, 0)]
    for theta in bench.DEFAULT_THETAS:
        np.testing.assert_allclose(res.scores[("euclid", float(theta), 0)], s0, atol=1e-12)


def test_certify_examples(jet_split):
    _, test_ds = jet_split
    events = test_ds.events[:5]
    rng = np.random.default_rng(0)
    r = bench.certify(GNNModel(LORENTZ), "boost", 5, 1e-9, events, rng, bounds=(0.0, 0.0))
    assert r.passed and r.max_residual == 0.0
    r = bench.certify(GNNModel(LORENTZ), "boost", 30, 1e-9, events, rng)
    assert r.passed and "PASS tol=1e-9" in r.line()
    r = bench.certify(GNNModel(FREE), "boost", 30, 1e-9, events, rng)
    assert not r.passed and r.max_residual > 1e-9 and r.line().startswith("FAIL")


def test_certify_equivariance_contract(jet_split):
    _, test_ds = jet_split
    model = GNNModel(replace(LORENTZ, position_update=True))
    r = bench.certify(model, "boost", 10, 1e-8, test_ds.events[:3], np.random.default_rng(1), contract="equivariance")
    assert r.passed and r.contract == "equivariance"
    # a deliberately broken map: adds a fixed offset that does not transform
    broken = lambda e: e.positions + 1.0  # noqa: E731
    r = bench.certify(broken, "boost", 10, 1e-8, test_ds.events[:3], np.random.default_rng(1), contract="equivariance")
    assert not r.passed
    exact = lambda e: act(LorentzBoost(0.0), e.positions)  # noqa: E731
    assert bench.certify(exact, "boost", 10, 1e-10, test_ds.events[:3], np.random.default_rng(1), contract="equivariance").passed


def test_certify_errors(jet_split):
    _, test_ds = jet_split
    with pytest.raises(DomainError):
        bench.certify(GNNModel(LORENTZ), "boost", 0, 1e-9, test_ds.events[:1])
    with pytest.raises(DomainError):
        bench.certify(GNNModel(LORENTZ), "boost", 1, 1e-9, [])


def test_ablation_contract(jet_split):
    train_ds, test_ds = jet_split
    with pytest.raises(ContractError, match="hidden"):
        bench.check_ablation_pair(LORENTZ, replace(FREE, hidden=5))
    res = bench.ablation(LORENTZ, LORENTZ, train_ds, test_ds, [0], CFG)
    assert res.differences["auc"]["per_seed"] == [0.0]
    stripped = bench.stripped_message(LORENTZ)
    assert stripped.message.variant == "unconstrained" and stripped.hidden == LORENTZ.hidden
    res = bench.ablation(LORENTZ, stripped, train_ds, test_ds, [0], CFG)
    assert res.parameter_counts["equivariant"] != res.parameter_counts["stripped"]
    assert res.notes


def test_hybrid_scan_corners_bit_identical(jet_split):
    train_ds, test_ds = jet_split
    res = bench.hybrid_scan(LORENTZ, [(4, 0), (2, 2), (0, 4)], train_ds, test_ds, [0], CFG)
    pure_eq = bench.fit(LORENTZ, train_ds, CFG, 0)[0].predict(test_ds.events)
    pure_free = bench.fit(FREE, train_ds, CFG, 0)[0].predict(test_ds.events)
    np.testing.assert_array_equal(res.scores[("hybrid", (4, 0), 0)], pure_eq)
    np.testing.assert_array_equal(res.scores[("hybrid", (0, 4), 0)], pure_free)
    summary = res.summary
    assert {r["kind"] for r in summary["table"]} == {"equivariant corner", "free corner", "interior"}
    assert "best AUC" in bench.format_hybrid_table(summary)
    with pytest.raises(DomainError):
        bench.hybrid_scan(LORENTZ, [(2, 2)], train_ds, test_ds, [0], CFG)


def test_data_efficiency_layout(jet_split):
    train_ds, test_ds = jet_split
    res = bench.data_efficiency({"lorentz": LORENTZ}, train_ds, test_ds, [0.1, 1.0], [0, 1], CFG)
    assert len(res.rows) == 4
    table = bench.format_table3(res.summary)
    assert table.splitlines()[0].split()[:3] == ["Training", "%", "Model"]
    assert "10%" in table and "100%" in table


def test_run_sweep_resumes_identically(tmp_path, jet_split):
    train_ds, test_ds = jet_split
    spec = bench.SweepSpec("boost_robustness", [0.0, 0.9], [0, 1], {"lorentz": LORENTZ, "free": FREE})
    full = bench.run_sweep(spec, train_ds, test_ds, CFG, tmp_path / "a", header="# h\n")
    csv_path, json_path = bench.sweep_paths(tmp_path / "a", spec)
    complete = csv_path.read_text()
    assert complete.startswith("# h\n") and len(full.rows) == 8
    # drop the last two result rows, as if the run had been interrupted
    csv_path.write_text("\n".join(complete.splitlines()[:-2]) + "\n")
    resumed = bench.run_sweep(spec, train_ds, test_ds, CFG, tmp_path / "a", header="# h\n")
    assert csv_path.read_text() == complete
    assert len(resumed.rows) == 8
    assert json_path.exists()


def test_run_sweep_augmentation_option(tmp_path, jet_split):
    train_ds, test_ds = jet_split
    spec = bench.SweepSpec(
        "boost_robustness", [0.0, 0.6], [0], {"plain": FREE, "augmented": FREE},
        options={"augment_models": ["augmented"], "augment_range": [0.0, 0.9]},
    )
    res = bench.run_sweep(spec, train_ds, test_ds, CFG)
    a = res.scores[("plain", 0.0, 0)]
    b = res.scores[("augmented", 0.0, 0)]
    assert not np.array_equal(a, b)


def test_run_sweep_certify_and_format(tmp_path, jet_split):
    train_ds, test_ds = jet_split
    spec = bench.SweepSpec("certify", [0.9], [0, 1], {"lorentz": LORENTZ, "free": FREE}, options={"n_samples": 10})
    res = bench.run_sweep(spec, train_ds, test_ds, CFG, tmp_path)
    text = bench.format_summary(res)
    assert "lorentz: PASS tol=1e-9" in text
    assert "free: FAIL" in text


def test_format_tol():
    assert bench.format_tol(1e-9) == "1e-9"
    assert bench.format_tol(1e-12) == "1e-12"
    assert bench.format_tol(0.25) == "0.25"
    assert math.isfinite(float(bench.format_tol(1e-9)))
