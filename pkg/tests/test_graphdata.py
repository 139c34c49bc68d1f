import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equibench.errors import ConfigError, DimensionError, DomainError
from equibench.graphdata import (
    Dataset,
    EventGraph,
    JetGenConfig,
    TrackGenConfig,
    augment,
    collate,
    config_for_task,
    fully_connected,
    generate_jets,
    generate_tracks,
    jet_mass,
    jet_truth_label,
    split,
    subsample,
    transform,
)
from equibench.groups import LorentzBoost, Rotation2D, minkowski_dot


@pytest.fixture(scope="module")
def jets():
    return generate_jets(JetGenConfig(n_events=400), seed=11)


@pytest.fixture(scope="module")
def tracks():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return generate_tracks(TrackGenConfig(n_events=30), seed=5)


def test_event_graph_validation():
    with pytest.raises(DimensionError):
        EventGraph(np.zeros((2, 4)), np.ones((2, 1)), [[0, 2]], label=0)
    with pytest.raises(DomainError):
        EventGraph(np.zeros((2, 4)), np.ones((2, 1)), [[0, 1]])
    with pytest.raises(DomainError):
        EventGraph(np.zeros((2, 4)), np.ones((2, 1)), [[0, 1]], label=0, edge_labels=[1])
    with pytest.raises(DimensionError):
        EventGraph(np.zeros((3, 2)), np.ones((3, 1)), [[0, 1], [1, 2]], edge_labels=[1])


def test_fully_connected_counts():
    e = fully_connected(5)
    assert len(e) == 10
    assert np.all(e[:, 0] < e[:, 1])


def test_jets_bit_identical_per_seed(jets):
    again = generate_jets(JetGenConfig(n_events=400), seed=11)
    assert json.dumps(jets.to_dict()) == json.dumps(again.to_dict())
    other = generate_jets(JetGenConfig(n_events=400), seed=12)
    assert json.dumps(jets.to_dict()) != json.dumps(other.to_dict())


def test_jet_labels_follow_truth_rule(jets):
    cfg = JetGenConfig()
    assert all(jet_truth_label(e, cfg) == e.label for e in jets.events)
    lo, hi = cfg.window
    masses = np.array([jet_mass(e) for e in jets.events])
    sig = jets.labels() == 1
    assert np.all((masses[sig] >= lo - 1e-9) & (masses[sig] <= hi + 1e-9))
    assert not np.any((masses[~sig] >= lo) & (masses[~sig] <= hi))


def test_jet_particles_massless_and_sized(jets):
    cfg = JetGenConfig()
    for e in jets.events[:100]:
        assert cfg.n_particles[0] <= e.n_nodes <= cfg.n_particles[1]
        m2 = minkowski_dot(e.positions, e.positions)
        np.testing.assert_allclose(m2, 0.0, atol=1e-9)
        assert np.all(e.positions[:, 0] > 0)
        np.testing.assert_array_equal(e.node_feats, 1.0)


def test_class_balance_large():
    ds = generate_jets(JetGenConfig(n_events=10_000, n_particles=(3, 4)), seed=3)
    assert 0.49 <= ds.labels().mean() <= 0.51


def test_labels_invariant_under_boost(jets):
    cfg = JetGenConfig()
    moved = transform(jets, LorentzBoost(0.9, "x"))
    assert [jet_truth_label(e, cfg) for e in moved.events] == list(jets.labels())


def test_jet_config_errors_name_field():
    with pytest.raises(ConfigError, match="generator.n_events"):
        config_for_task("jet_tagging", {"n_events": 0})
    with pytest.raises(ConfigError, match="generator.bogus"):
        config_for_task("jet_tagging", {"bogus": 1})
    with pytest.raises(ConfigError, match="generator.class_balance"):
        config_for_task("jet_tagging", {"class_balance": 1.5})
    with pytest.raises(ConfigError, match="generator.noise"):
        config_for_task("tracking", {"noise": -1.0})


def test_single_track_noiseless_all_true():
    cfg = TrackGenConfig(n_events=5, n_tracks=(1, 1), noise=0.0)
    ds = generate_tracks(cfg, seed=0)
    for e in ds.events:
        assert len(e.edges) == len(cfg.layer_radii) - 1
        np.testing.assert_array_equal(e.edge_labels, 1)
    assert ds.report["tracks_without_edges"] == 0


def test_tracks_truth_and_geometry(tracks):
    cfg = TrackGenConfig()
    radii = np.asarray(cfg.layer_radii)
    for e in tracks.events:
        r = np.linalg.norm(e.positions, axis=1)
        np.testing.assert_allclose(r, e.node_feats[:, 0], atol=10 * cfg.noise)
        layer_of = np.searchsorted(radii, e.node_feats[:, 0])
        np.testing.assert_array_equal(layer_of[e.edges[:, 1]] - layer_of[e.edges[:, 0]], 1)
        d = np.linalg.norm(e.positions[e.edges[:, 0]] - e.positions[e.edges[:, 1]], axis=1)
        assert np.all(d <= cfg.threshold + 1e-9)
    assert 0 < tracks.report["edge_truth_fraction"] < 1


def test_tiny_threshold_warns_not_raises():
    cfg = TrackGenConfig(n_events=3, threshold=1e-4)
    with pytest.warns(UserWarning):
        ds = generate_tracks(cfg, seed=1)
    assert ds.report["tracks_without_edges"] > 0


def test_dataset_json_roundtrip(tmp_path, jets, tracks):
    for ds in (jets, tracks):
        path = ds.save(tmp_path / f"{ds.task}.json", provenance={"config_hash": "x", "seed": 1})
        back = Dataset.load(path)
        assert back.task == ds.task and len(back) == len(ds)
        for a, b in zip(ds.events, back.events):
            np.testing.assert_array_equal(a.positions, b.positions)
            np.testing.assert_array_equal(a.edges, b.edges)
        np.testing.assert_array_equal(back.labels(), ds.labels())


def test_load_rejects_schema_version(tmp_path, jets):
    d = jets.subset(range(3)).to_dict()
    d["schema_version"] = 99
    (tmp_path / "d.json").write_text(json.dumps(d))
    with pytest.raises(DomainError, match="schema"):
        Dataset.load(tmp_path / "d.json")


def test_augment_zero_range_keeps_positions(jets):
    out = augment(jets, "boost", (0.0, 0.0), np.random.default_rng(0))
    for a, b in zip(jets.events, out.events):
        np.testing.assert_array_equal(a.positions, b.positions)


def test_augment_supplement_and_family(jets, tracks):
    out = augment(jets, "boost", (0.0, 0.5), np.random.default_rng(0), supplement=True)
    assert len(out) == 2 * len(jets)
    np.testing.assert_array_equal(out.labels(), np.r_[jets.labels(), jets.labels()])
    with pytest.raises(DomainError):
        augment(tracks, "boost", (0.0, 0.5), np.random.default_rng(0))
    with pytest.raises(DomainError):
        augment(jets, "rotation", (0.0, 0.5), np.random.default_rng(0))
    rot = augment(tracks, "rotation", (-math.pi, math.pi), np.random.default_rng(0))
    for a, b in zip(tracks.events, rot.events):
        np.testing.assert_allclose(np.linalg.norm(a.positions, axis=1), np.linalg.norm(b.positions, axis=1))
        np.testing.assert_array_equal(a.edge_labels, b.edge_labels)


def test_subsample_examples():
    ds = generate_jets(JetGenConfig(n_events=10_000, n_particles=(3, 3)), seed=2)
    assert subsample(ds, 1.0, 0) is ds
    a = subsample(ds, 0.05, 0)
    b = subsample(ds, 0.05, 1)
    assert len(a) == len(b) == 500
    counts = np.bincount(a.labels())
    assert abs(counts[0] - 250) <= 1 and abs(counts[1] - 250) <= 1
    ids_a = {id(e) for e in a.events}
    ids_b = {id(e) for e in b.events}
    assert ids_a != ids_b
    with pytest.raises(DomainError):
        subsample(ds.subset(range(100)), 0.01, 0)


def test_split_partitions(jets):
    tr, te = split(jets, 0.25, seed=4)
    assert len(tr) + len(te) == len(jets) and len(te) == 100
    assert not {id(e) for e in tr.events} & {id(e) for e in te.events}


def test_collate_directed_edges_sorted(jets):
    batch = collate(jets.events[:5])
    assert batch.n_nodes == sum(e.n_nodes for e in jets.events[:5])
    assert len(batch.senders) == 2 * sum(len(e.edges) for e in jets.events[:5])
    key = batch.receivers * batch.n_nodes + batch.senders
    assert np.all(np.diff(key) > 0)
    # edges never cross events
    np.testing.assert_array_equal(batch.node_graph[batch.senders], batch.node_graph[batch.receivers])
    np.testing.assert_array_equal(batch.labels, jets.labels()[:5])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permuted_event_is_isomorphic(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    e = EventGraph(rng.normal(size=(n, 4)), rng.normal(size=(n, 1)), fully_connected(n), label=1)
    perm = rng.permutation(n)
    p = e.permuted(perm)
    np.testing.assert_array_equal(p.positions[perm], e.positions)
    np.testing.assert_array_equal(p.positions[p.edges], e.positions[e.edges])


def test_rotation_transform_tracks(tracks):
    moved = transform(tracks, Rotation2D(1.0))
    e, m = tracks.events[0], moved.events[0]
    np.testing.assert_allclose(m.positions, e.positions @ Rotation2D(1.0).matrix().T)
