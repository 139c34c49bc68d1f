"""Event graphs, synthetic jet/tracking generators, augmentation and batching.

Both generators are desk-scale surrogates with explicit truth rules:

* jets: signal is a three-prong resonance decay (``top -> b W``, ``W -> q q'``)
  whose invariant mass is drawn from a Gaussian truncated at three widths;
  background is a single prong whose mass follows a falling exponential that
  is vetoed inside the signal mass window. The label is therefore a function
  of the jet invariant mass alone (``jet_truth_label``) and cannot change
  under a boost.
* tracking: charged tracks from the origin are circular arcs through
  concentric layers in the transverse plane. Candidate segments join hits on
  adjacent layers that lie within a distance threshold; a segment is true
  iff both hits come from the same track.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from equibench import groups
from equibench.errors import ConfigError, DimensionError, DomainError
from equibench.seeding import stream

SCHEMA_VERSION = 1
TASKS = ("jet_tagging", "tracking")
EDGE_EPS = 1e-9


@dataclass
class EventGraph:
    positions: np.ndarray
    node_feats: np.ndarray
    edges: np.ndarray
    edge_feats: Optional[np.ndarray] = None
    label: Optional[int] = None
    edge_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(len(self.positions), -1)
        n = self.positions.shape[0]
        self.node_feats = np.asarray(self.node_feats, dtype=np.float64).reshape(n, -1)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise DimensionError(f"edge index out of range for {n} nodes")
        if self.edge_feats is not None:
            self.edge_feats = np.asarray(self.edge_feats, dtype=np.float64).reshape(len(self.edges), -1)
        if (self.label is None) == (self.edge_labels is None):
            raise DomainError("an event carries exactly one of a graph label or edge labels")
        if self.edge_labels is not None:
            self.edge_labels = np.asarray(self.edge_labels, dtype=np.int64).reshape(-1)
            if len(self.edge_labels) != len(self.edges):
                raise DimensionError("one edge label per edge required")
        else:
            self.label = int(self.label)

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def task(self) -> str:
        return "jet_tagging" if self.label is not None else "tracking"

    def with_positions(self, positions: np.ndarray) -> "EventGraph":
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != self.positions.shape:
            raise DimensionError(f"position shape {positions.shape} != {self.positions.shape}")
        return EventGraph(positions, self.node_feats, self.edges, self.edge_feats, self.label, self.edge_labels)

    def permuted(self, perm: Sequence[int]) -> "EventGraph":
        """Relabel nodes so that old node ``k`` becomes node ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.argsort(perm)
        return EventGraph(
            self.positions[inv], self.node_feats[inv], perm[self.edges], self.edge_feats, self.label, self.edge_labels
        )

    def to_dict(self) -> dict:
        d = {
            "positions": self.positions.tolist(),
            "node_feats": self.node_feats.tolist(),
            "edges": self.edges.tolist(),
        }
        if self.edge_feats is not None:
            d["edge_feats"] = self.edge_feats.tolist()
        if self.label is not None:
            d["label"] = self.label
        else:
            d["edge_labels"] = self.edge_labels.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EventGraph":
        n = len(d["positions"])
        return cls(
            positions=np.array(d["positions"], dtype=np.float64).reshape(n, -1),
            node_feats=np.array(d["node_feats"], dtype=np.float64).reshape(n, -1),
            edges=np.array(d["edges"], dtype=np.int64).reshape(-1, 2),
            edge_feats=None if d.get("edge_feats") is None else np.array(d["edge_feats"]),
            label=d.get("label"),
            edge_labels=None if d.get("edge_labels") is None else np.array(d["edge_labels"]),
        )


@dataclass
class Dataset:
    events: list
    task: str
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise DomainError(f"unknown task {self.task!r}")
        dims = {(e.task, e.positions.shape[1], e.node_feats.shape[1]) for e in self.events}
        if len(dims) > 1:
            raise DimensionError(f"events disagree on task or feature dimensions: {sorted(dims)}")
        if dims and next(iter(dims))[0] != self.task:
            raise DomainError(f"events do not match task {self.task!r}")

    def __len__(self):
        return len(self.events)

    def __getitem__(self, k):
        return self.events[k]

    @property
    def pos_dim(self) -> int:
        return self.events[0].positions.shape[1]

    @property
    def node_dim(self) -> int:
        return self.events[0].node_feats.shape[1]

    @property
    def edge_dim(self) -> int:
        ef = self.events[0].edge_feats
        return 0 if ef is None else ef.shape[1]

    def labels(self) -> np.ndarray:
        if self.task == "jet_tagging":
            return np.array([e.label for e in self.events], dtype=np.int64)
        return np.concatenate([e.edge_labels for e in self.events]) if self.events else np.zeros(0, np.int64)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.events[int(i)] for i in indices], self.task, self.config, self.seed, {})

    def to_dict(self, provenance: Optional[dict] = None) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "task": self.task,
            "config": self.config,
            "seed": self.seed,
        }
        if provenance:
            d["provenance"] = provenance
        d["report"] = self.report
        d["events"] = [e.to_dict() for e in self.events]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DomainError(f"unsupported dataset schema version {d.get('schema_version')!r}")
        return cls(
            [EventGraph.from_dict(e) for e in d["events"]],
            d["task"],
            d.get("config", {}),
            d.get("seed"),
            d.get("report", {}),
        )

    def save(self, path, provenance: Optional[dict] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(provenance)))
        return path

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- configs ------------------------------------------------------------------


def _config_from_dict(cls, d: dict, prefix: str):
    known = {f.name for f in fields(cls)}
    for key in d:
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown field")
    kwargs = {}
    for key, value in d.items():
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except ConfigError as err:
        raise ConfigError(f"{prefix}.{err.field}", str(err).split(": ", 1)[-1]) from None
    except TypeError as err:
        raise ConfigError(prefix, str(err)) from None


@dataclass(frozen=True)
class JetGenConfig:
    n_events: int = 1000
    n_particles: tuple = (4, 10)
    resonance_mass: float = 1.0
    resonance_width: float = 0.05
    w_mass: float = 0.46
    prong_mass: tuple = (0.02, 0.12)
    signal_momentum: tuple = (2.0, 4.0)
    background_momentum_min: float = 1.5
    background_momentum_scale: float = 1.0
    background_mass_min: float = 0.1
    background_mass_scale: float = 0.25
    eta_max: float = 1.0
    class_balance: float = 0.5

    def __post_init__(self):
        if int(self.n_events) < 1:
            raise ConfigError("n_events", "must be >= 1")
        lo, hi = self.n_particles
        if lo < 2 or hi < lo:
            raise ConfigError("n_particles", "need 2 <= min <= max")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError("class_balance", "must lie in (0, 1)")
        if self.resonance_width <= 0 or self.resonance_mass <= 3 * self.resonance_width:
            raise ConfigError("resonance_width", "need 0 < 3 * width < mass")
        if not self.prong_mass[1] + self.w_mass < self.resonance_mass - 3 * self.resonance_width:
            raise ConfigError("w_mass", "decay top -> b W must be kinematically open")
        if not 2 * self.prong_mass[1] < self.w_mass:
            raise ConfigError("prong_mass", "decay W -> q q' must be kinematically open")
        if self.signal_momentum[0] <= 0 or self.signal_momentum[1] < self.signal_momentum[0]:
            raise ConfigError("signal_momentum", "need 0 < min <= max")
        if self.background_mass_scale <= 0 or self.background_momentum_scale <= 0:
            raise ConfigError("background_mass_scale", "scales must be positive")

    @property
    def window(self) -> tuple[float, float]:
        m, w = self.resonance_mass, self.resonance_width
        return m - 3 * w, m + 3 * w

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "generator"):
        return _config_from_dict(cls, d, prefix)


@dataclass(frozen=True)
class TrackGenConfig:
    n_events: int = 200
    n_tracks: tuple = (3, 6)
    layer_radii: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    curvature_max: float = 1.0
    noise: float = 0.002
    threshold: float = 0.25

    def __post_init__(self):
        if int(self.n_events) < 1:
            raise ConfigError("n_events", "must be >= 1")
        lo, hi = self.n_tracks
        if lo < 1 or hi < lo:
            raise ConfigError("n_tracks", "need 1 <= min <= max")
        radii = list(self.layer_radii)
        if len(radii) < 2 or radii[0] <= 0 or any(b <= a for a, b in zip(radii, radii[1:])):
            raise ConfigError("layer_radii", "need at least two strictly increasing positive radii")
        if not 0 <= self.curvature_max < 2.0 / radii[-1]:
            raise ConfigError("curvature_max", "tracks must reach the outer layer (|k| < 2 / r_max)")
        if self.noise < 0:
            raise ConfigError("noise", "must be >= 0")
        if self.threshold <= 0:
            raise ConfigError("threshold", "must be > 0")

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "generator"):
        return _config_from_dict(cls, d, prefix)


def config_for_task(task: str, d: dict, prefix: str = "generator"):
    if task == "jet_tagging":
        return JetGenConfig.from_dict(d, prefix)
    if task == "tracking":
        return TrackGenConfig.from_dict(d, prefix)
    raise ConfigError("task", f"unknown task {task!r}")


# -- jet kinematics -----------------------------------------------------------


def _boost_to_lab(p, parent):
    """Boost rest-frame four-vector ``p`` by the velocity of ``parent``."""
    E, px, py, pz = parent
    m2 = E * E - px * px - py * py - pz * pz
    m = math.sqrt(max(m2, 0.0))
    bx, by, bz = px / E, py / E, pz / E
    b2 = bx * bx + by * by + bz * bz
    if b2 == 0.0:
        return tuple(p)
    g = E / m
    bp = bx * p[1] + by * p[2] + bz * p[3]
    k = (g - 1.0) * bp / b2 + g * p[0]
    return (g * (p[0] + bp), p[1] + k * bx, p[2] + k * by, p[3] + k * bz)


def _two_body(rng, parent, m1, m2):
    """Isotropic decay of ``parent`` into daughters of mass m1, m2 (lab frame)."""
    E, px, py, pz = parent
    M = math.sqrt(max(E * E - px * px - py * py - pz * pz, 0.0))
    q = math.sqrt(max((M * M - (m1 + m2) ** 2) * (M * M - (m1 - m2) ** 2), 0.0)) / (2 * M)
    cos_t = rng.uniform(-1.0, 1.0)
    sin_t = math.sqrt(max(1.0 - cos_t * cos_t, 0.0))
    phi = rng.uniform(0.0, 2 * math.pi)
    dx, dy, dz = q * sin_t * math.cos(phi), q * sin_t * math.sin(phi), q * cos_t
    d1 = (math.sqrt(q * q + m1 * m1), dx, dy, dz)
    d2 = (math.sqrt(q * q + m2 * m2), -dx, -dy, -dz)
    return _boost_to_lab(d1, parent), _boost_to_lab(d2, parent)


def _fragment(rng, parent, k, out):
    """Split ``parent`` into ``k`` massless particles by recursive two-body decays."""
    if k == 1:
        out.append(parent)
        return
    M = math.sqrt(max(parent[0] ** 2 - parent[1] ** 2 - parent[2] ** 2 - parent[3] ** 2, 0.0))
    k1 = int(rng.integers(1, k))
    k2 = k - k1
    m1 = 0.0 if k1 == 1 else M * rng.uniform(0.1, 0.45)
    m2 = 0.0 if k2 == 1 else M * rng.uniform(0.1, 0.45)
    d1, d2 = _two_body(rng, parent, m1, m2)
    _fragment(rng, d1, k1, out)
    _fragment(rng, d2, k2, out)


def _jet_frame(rng, mass, momentum, eta_max):
    phi = rng.uniform(0.0, 2 * math.pi)
    eta = rng.uniform(-eta_max, eta_max)
    ch = math.cosh(eta)
    direction = (math.cos(phi) / ch, math.sin(phi) / ch, math.tanh(eta))
    return (math.sqrt(momentum**2 + mass**2),) + tuple(momentum * c for c in direction)


def _prong_mass(rng, k, cfg):
    return 0.0 if k == 1 else rng.uniform(*cfg.prong_mass)


def _signal_jet(rng, cfg: JetGenConfig, n: int):
    M0, w = cfg.resonance_mass, cfg.resonance_width
    while True:
        M = rng.normal(M0, w)
        if abs(M - M0) <= 3 * w:
            break
    jet = _jet_frame(rng, M, rng.uniform(*cfg.signal_momentum), cfg.eta_max)
    if n == 2:
        b, W = _two_body(rng, jet, 0.0, cfg.w_mass)
        return [b, W]
    counts = 1 + rng.multinomial(n - 3, [1 / 3] * 3)
    mb, m1, m2 = (_prong_mass(rng, int(c), cfg) for c in counts)
    b, W = _two_body(rng, jet, mb, cfg.w_mass)
    q1, q2 = _two_body(rng, W, m1, m2)
    particles = []
    for prong, c in zip((b, q1, q2), counts):
        _fragment(rng, prong, int(c), particles)
    return particles


def _background_jet(rng, cfg: JetGenConfig, n: int):
    lo, hi = cfg.window
    margin = 0.01 * cfg.resonance_width
    while True:
        m = cfg.background_mass_min + rng.exponential(cfg.background_mass_scale)
        if not lo - margin <= m <= hi + margin:
            break
    p = cfg.background_momentum_min + rng.exponential(cfg.background_momentum_scale)
    jet = _jet_frame(rng, m, p, cfg.eta_max)
    particles = []
    _fragment(rng, jet, n, particles)
    return particles


def fully_connected(n: int) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return np.stack([i, j], axis=1).astype(np.int64)


def jet_mass(event: EventGraph) -> float:
    total = event.positions.sum(axis=0)
    return math.sqrt(max(float(groups.minkowski_dot(total, total)), 0.0))


def jet_truth_label(event: EventGraph, cfg: JetGenConfig) -> int:
    """The generator's truth rule: signal iff the jet mass lies in the resonance window."""
    lo, hi = cfg.window
    slack = 0.005 * cfg.resonance_width
    return int(lo - slack <= jet_mass(event) <= hi + slack)


def generate_jets(cfg: JetGenConfig, seed: int) -> Dataset:
    n = int(cfg.n_events)
    n_signal = int(round(cfg.class_balance * n))
    labels = stream(seed, "labels").permutation(np.r_[np.ones(n_signal, np.int64), np.zeros(n - n_signal, np.int64)])
    events = []
    lo, hi = cfg.n_particles
    for k in range(n):
        rng = stream(seed, "event", k)
        n_part = int(rng.integers(lo, hi + 1))
        label = int(labels[k])
        particles = _signal_jet(rng, cfg, n_part) if label else _background_jet(rng, cfg, n_part)
        pos = np.array(particles, dtype=np.float64)
        events.append(EventGraph(pos, np.ones((len(pos), 1)), fully_connected(len(pos)), label=label))
    report = {"n_events": n, "class_balance": float(labels.mean()), "synthetic": True}
    return Dataset(events, "jet_tagging", _echo(cfg), int(seed), report)


# -- tracking -----------------------------------------------------------------


def _proximity_edges(hits: np.ndarray, layer: np.ndarray, n_layers: int, threshold: float) -> np.ndarray:
    pairs = []
    for l in range(n_layers - 1):
        inner = np.flatnonzero(layer == l)
        outer = np.flatnonzero(layer == l + 1)
        if not len(inner) or not len(outer):
            continue
        diff = hits[inner][:, None, :2] - hits[outer][None, :, :2]
        dist = np.sqrt((diff**2).sum(-1))
        a, b = np.nonzero(dist <= threshold + EDGE_EPS)
        pairs.append(np.stack([inner[a], outer[b]], axis=1))
    return np.concatenate(pairs).astype(np.int64) if pairs else np.zeros((0, 2), np.int64)


def _track_hits(rng, cfg: TrackGenConfig):
    radii = np.asarray(cfg.layer_radii, dtype=np.float64)
    n_tracks = int(rng.integers(cfg.n_tracks[0], cfg.n_tracks[1] + 1))
    phi0 = rng.uniform(0.0, 2 * math.pi, size=n_tracks)
    kappa = rng.uniform(-cfg.curvature_max, cfg.curvature_max, size=n_tracks)
    noise = rng.normal(0.0, 1.0, size=(len(radii), n_tracks, 2)) * cfg.noise
    # circle through the origin with curvature kappa crosses radius r at this azimuth
    phi = phi0[None, :] - np.arcsin(kappa[None, :] * radii[:, None] / 2.0)
    xy = np.stack([radii[:, None] * np.cos(phi), radii[:, None] * np.sin(phi)], axis=-1) + noise
    hits = xy.reshape(-1, 2)
    layer = np.repeat(np.arange(len(radii)), n_tracks)
    track = np.tile(np.arange(n_tracks), len(radii))
    return hits, layer, track, radii


def generate_tracks(cfg: TrackGenConfig, seed: int) -> Dataset:
    events = []
    n_edges = n_true = 0
    starved = 0
    missing_segments = 0
    for k in range(int(cfg.n_events)):
        rng = stream(seed, "event", k)
        hits, layer, track, radii = _track_hits(rng, cfg)
        edges = _proximity_edges(hits, layer, len(radii), cfg.threshold)
        truth = (track[edges[:, 0]] == track[edges[:, 1]]).astype(np.int64)
        per_track = np.bincount(track[edges[truth == 1, 0]], minlength=track.max() + 1)
        starved += int((per_track == 0).sum())
        missing_segments += int(((len(radii) - 1) - per_track).clip(min=0).sum())
        node_feats = radii[layer][:, None]
        events.append(EventGraph(hits, node_feats, edges, edge_labels=truth))
        n_edges += len(edges)
        n_true += int(truth.sum())
    report = {
        "n_events": int(cfg.n_events),
        "n_edges": n_edges,
        "n_true_edges": n_true,
        "edge_truth_fraction": n_true / n_edges if n_edges else 0.0,
        "tracks_without_edges": starved,
        "missing_true_segments": missing_segments,
        "synthetic": True,
    }
    if starved:
        warnings.warn(f"{starved} generated tracks have no true segment at threshold {cfg.threshold}")
    return Dataset(events, "tracking", _echo(cfg), int(seed), report)


def generate(task: str, cfg, seed: int) -> Dataset:
    return generate_jets(cfg, seed) if task == "jet_tagging" else generate_tracks(cfg, seed)


def _echo(cfg) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


# -- dataset transforms -------------------------------------------------------


def _family_for(ds: Dataset, family: str) -> None:
    if family == "boost" and ds.pos_dim != 4:
        raise DomainError(f"boosts need 4-vector positions, dataset has dimension {ds.pos_dim}")
    if family == "rotation" and ds.pos_dim not in (2, 3):
        raise DomainError(f"rotations need 2-D or 3-D positions, dataset has dimension {ds.pos_dim}")
    if family not in ("boost", "rotation"):
        raise DomainError(f"unknown group family {family!r}")


def augment(
    ds: Dataset,
    family: str,
    range: Sequence[float],
    rng: np.random.Generator,
    supplement: bool = False,
    values: Optional[Sequence[float]] = None,
) -> Dataset:
    """Transform each event by an independently sampled group element.

    With ``supplement`` the transformed copies are appended to the originals.
    """
    _family_for(ds, family)
    moved = [
        groups.apply_to_event(groups.sample_group_element(rng, family, range, values), e) for e in ds.events
    ]
    events = list(ds.events) + moved if supplement else moved
    return Dataset(events, ds.task, ds.config, ds.seed, {})


def transform(ds: Dataset, g) -> Dataset:
    """Apply one group element to every event."""
    _family_for(ds, groups.family_of(g))
    return Dataset([groups.apply_to_event(g, e) for e in ds.events], ds.task, ds.config, ds.seed, {})


def subsample(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Class-stratified sample without replacement (events, for graph labels)."""
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return ds
    rng = stream(seed, "subsample")
    if ds.task == "jet_tagging":
        labels = ds.labels()
        chosen = []
        for cls in (0, 1):
            idx = np.flatnonzero(labels == cls)
            k = int(round(fraction * len(idx)))
            if k < 2:
                raise DomainError(f"fraction {fraction} leaves {k} events of class {cls}; need >= 2")
            chosen.append(rng.choice(idx, size=k, replace=False))
        picked = np.sort(np.concatenate(chosen))
    else:
        k = int(round(fraction * len(ds)))
        if k < 2:
            raise DomainError(f"fraction {fraction} leaves {k} events; need >= 2")
        picked = np.sort(rng.choice(len(ds), size=k, replace=False))
    return ds.subset(picked)


def split(ds: Dataset, holdout: float, seed: int, name: str = "split") -> tuple[Dataset, Dataset]:
    """Random (train, holdout) partition of the events."""
    n = len(ds)
    k = int(round(holdout * n))
    perm = stream(seed, name).permutation(n)
    return ds.subset(np.sort(perm[k:])), ds.subset(np.sort(perm[:k]))


# -- batching -----------------------------------------------------------------


@dataclass
class GraphBatch:
    """Disjoint union of events.

    ``senders``/``receivers`` list every undirected edge in both directions,
    sorted by receiver then sender so that aggregation visits neighbours in
    ascending index order. ``edges`` keeps the original undirected pairs for
    per-edge heads.
    """

    positions: np.ndarray
    node_feats: np.ndarray
    node_graph: np.ndarray
    n_graphs: int
    senders: np.ndarray
    receivers: np.ndarray
    edge_feats_directed: Optional[np.ndarray]
    edges: np.ndarray
    edge_feats: Optional[np.ndarray]
    edge_graph: np.ndarray
    labels: np.ndarray
    task: str

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]


def collate(events: Sequence[EventGraph]) -> GraphBatch:
    if not events:
        raise DomainError("cannot batch zero events")
    sizes = np.array([e.n_nodes for e in events])
    offsets = np.r_[0, np.cumsum(sizes)[:-1]]
    positions = np.concatenate([e.positions for e in events])
    node_feats = np.concatenate([e.node_feats for e in events])
    node_graph = np.repeat(np.arange(len(events)), sizes)
    edges = np.concatenate([e.edges + o for e, o in zip(events, offsets)])
    edge_graph = np.repeat(np.arange(len(events)), [len(e.edges) for e in events])
    has_ef = events[0].edge_feats is not None
    edge_feats = np.concatenate([e.edge_feats for e in events]) if has_ef else None
    send = np.r_[edges[:, 1], edges[:, 0]]
    recv = np.r_[edges[:, 0], edges[:, 1]]
    order = np.lexsort((send, recv))
    ef_dir = np.concatenate([edge_feats, edge_feats])[order] if has_ef else None
    task = events[0].task
    if task == "jet_tagging":
        labels = np.array([e.label for e in events], dtype=np.int64)
    else:
        labels = np.concatenate([e.edge_labels for e in events])
    return GraphBatch(
        positions, node_feats, node_graph, len(events), send[order], recv[order], ef_dir,
        edges, edge_feats, edge_graph, labels, task,
    )
