"""Message-passing layers and the graph models built from them.

A model is one or two *channels* of message passing followed by a head:

* ``lorentz`` channel: messages see only Minkowski invariants of positions,
  ``phi(h_i, h_j, <x_i - x_j, x_i - x_j>, <x_i, x_j>)``;
* ``euclid`` channel: ``phi(h_i, h_j, |x_i - x_j|^2)``;
* ``free`` channel: ``phi(h_i, h_j, e_ij[, x_i, x_j])`` where raw coordinates
  are fed in when ``position_leak`` is set (they also enter the embedding).

Node update is ``h_i <- psi([h_i, agg_j m_ij])``. With ``position_update``
positions move as ``x_i <- x_i + C * sum_j gate(m_ij) * x_j`` where ``gate``
maps a message to one scalar; this commutes with any linear group action
because the gates are built from invariant messages.

A hybrid model runs an equivariant and a free channel side by side and
concatenates their outputs at the head input. Each channel and the head
draw their initial weights from their own named random stream, so a hybrid
with one channel of width zero is bit-identical to the corresponding pure
model.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from equibench.errors import ConfigError, ContractError, DimensionError
from equibench.graphdata import EventGraph, GraphBatch, collate
from equibench.seeding import stream
from equibench.tensor import (
    Tensor,
    concat,
    gather,
    matmul,
    mul,
    add,
    reduce,
    segment_max,
    segment_mean,
    segment_sum,
    signed_log,
    sub,
    elementwise,
)

VARIANTS = ("unconstrained", "lorentz", "euclid", "hybrid")
HEADS = ("graph", "edge")
AGGREGATIONS = ("sum", "mean", "max")
ACTIVATIONS = (None, "relu", "tanh", "sigmoid")


# -- MLPs ---------------------------------------------------------------------


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths ``(in, h1, ..., out)`` and one activation per dense layer."""

    widths: tuple
    activations: tuple

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise DimensionError(f"MLP widths must be >= 1, got {self.widths}")
        if len(self.activations) != len(self.widths) - 1:
            raise DimensionError("one activation per dense layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ConfigError("activation", f"unknown activation {a!r}")

    @classmethod
    def dense(cls, widths: Sequence[int], activation: Optional[str] = "relu", final_activation: bool = False):
        n = len(widths) - 1
        acts = [activation] * (n - 1) + [activation if final_activation else None]
        return cls(tuple(int(w) for w in widths), tuple(acts))

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths, self.widths[1:]))


class MLP:
    def __init__(self, spec: MLPSpec, rng: np.random.Generator, name: str):
        self.spec = spec
        self.layers = []
        for k, (fan_in, fan_out) in enumerate(zip(spec.widths, spec.widths[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=f"{name}.{k}.W")
            b = Tensor(rng.uniform(-bound, bound, size=(fan_out,)), requires_grad=True, name=f"{name}.{k}.b")
            self.layers.append((w, b, spec.activations[k]))

    def parameters(self) -> list[Tensor]:
        return [p for w, b, _ in self.layers for p in (w, b)]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.spec.widths[0]:
            raise DimensionError(f"MLP expects width {self.spec.widths[0]}, got input shape {x.shape}")
        for w, b, act in self.layers:
            x = add(matmul(x, w), b)
            if act is not None:
                x = elementwise(act, x)
        return x


# -- invariants and messages --------------------------------------------------


def _metric_row(dtype) -> Tensor:
    return Tensor._wrap(np.array([[1.0, -1.0, -1.0, -1.0]], dtype=dtype))


def minkowski_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise Minkowski product of two E x 4 tensors, as E x 1."""
    if a.shape[-1] != 4 or b.shape[-1] != 4:
        raise DimensionError(f"Minkowski product needs 4-vectors, got {a.shape} and {b.shape}")
    return reduce("sum", mul(mul(a, b), _metric_row(a.data.dtype)), axis=1, keepdims=True)


def squared_distance_rows(a: Tensor, b: Tensor) -> Tensor:
    d = sub(a, b)
    return reduce("sum", mul(d, d), axis=1, keepdims=True)


def lorentz_invariants(x_i: Tensor, x_j: Tensor) -> Tensor:
    """Signed-log of <x_i - x_j, x_i - x_j> and <x_i, x_j>.

    Raw Minkowski products grow quadratically with momentum; without the log,
    summed messages saturate the relu layers and some inits never train.
    """
    d = sub(x_i, x_j)
    return signed_log(concat([minkowski_rows(d, d), minkowski_rows(x_i, x_j)]))


def message_unconstrained(h_i: Tensor, h_j: Tensor, phi: MLP, e_ij=None, x_i=None, x_j=None) -> Tensor:
    """phi([h_i, h_j, e_ij, x_i, x_j]); positions only when supplied (position leak)."""
    parts = [h_i, h_j]
    if e_ij is not None:
        parts.append(e_ij)
    if x_i is not None:
        parts += [x_i, x_j]
    return phi(concat(parts))


def message_lorentz(h_i: Tensor, h_j: Tensor, x_i: Tensor, x_j: Tensor, phi: MLP) -> Tensor:
    """phi([h_i, h_j, psi(<x_i - x_j, x_i - x_j>), psi(<x_i, x_j>)]), psi the signed log."""
    return phi(concat([h_i, h_j, lorentz_invariants(x_i, x_j)]))


def message_euclid(h_i: Tensor, h_j: Tensor, x_i: Tensor, x_j: Tensor, phi: MLP) -> Tensor:
    if x_i.shape[-1] not in (2, 3) or x_j.shape != x_i.shape:
        raise DimensionError(f"Euclidean messages need matching 2-D or 3-D positions, got {x_i.shape}, {x_j.shape}")
    return phi(concat([h_i, h_j, squared_distance_rows(x_i, x_j)]))


def aggregate(messages: Tensor, receivers: np.ndarray, n_nodes: int, op: str = "sum") -> Tensor:
    if op == "sum":
        return segment_sum(messages, receivers, n_nodes)
    if op == "mean":
        return segment_mean(messages, receivers, n_nodes)
    if op == "max":
        return segment_max(messages, receivers, n_nodes)
    raise ConfigError("aggregation", f"unknown aggregation {op!r}")


def node_update(h: Tensor, aggregated: Tensor, psi: MLP) -> Tensor:
    if psi.spec.widths[0] != h.shape[1] + aggregated.shape[1]:
        raise DimensionError(
            f"psi expects width {psi.spec.widths[0]}, got {h.shape[1]} + {aggregated.shape[1]}"
        )
    return psi(concat([h, aggregated]))


def position_update(
    x: Tensor, senders: np.ndarray, receivers: np.ndarray, messages: Tensor, phi_x: MLP, c: Tensor
) -> Tensor:
    """x_i + C * sum_j phi_x(m_ij) * x_j."""
    gate = phi_x(messages)
    if gate.shape[1] != 1:
        raise DimensionError("phi_x must emit one scalar gate per edge")
    moved = segment_sum(mul(gate, gather(x, senders)), receivers, x.shape[0])
    return add(x, mul(c, moved))


# -- model specification ------------------------------------------------------


@dataclass(frozen=True)
class MessageKind:
    variant: str = "lorentz"
    eq_width: int = 0
    free_width: int = 0
    eq_group: str = "lorentz"
    position_leak: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"must be one of {VARIANTS}, got {self.variant!r}")
        if self.eq_group not in ("lorentz", "euclid"):
            raise ConfigError("eq_group", f"must be 'lorentz' or 'euclid', got {self.eq_group!r}")
        if self.variant == "hybrid":
            if self.eq_width < 0 or self.free_width < 0:
                raise ConfigError("eq_width", "hybrid widths must be >= 0")
            if self.eq_width == 0 and self.free_width == 0:
                raise ConfigError("eq_width", "hybrid widths cannot both be zero")

    @classmethod
    def hybrid(cls, eq_width: int, free_width: int, eq_group: str = "lorentz", position_leak: bool = True):
        return cls("hybrid", eq_width, free_width, eq_group, position_leak)


@dataclass(frozen=True)
class ModelSpec:
    message: MessageKind = field(default_factory=MessageKind)
    hidden: int = 8
    n_layers: int = 2
    aggregation: str = "sum"
    head: str = "graph"
    position_update: bool = False
    c_init: float = 0.1
    seed: int = 0
    node_dim: int = 1
    pos_dim: int = 4
    edge_dim: int = 0
    activation: str = "relu"

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError("hidden", "must be >= 1")
        if self.n_layers < 0:
            raise ConfigError("n_layers", "must be >= 0")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError("aggregation", f"must be one of {AGGREGATIONS}")
        if self.head not in HEADS:
            raise ConfigError("head", f"must be one of {HEADS}")
        if self.activation not in ACTIVATIONS[1:]:
            raise ConfigError("activation", f"unknown activation {self.activation!r}")
        groups_used = {c[1] for c in self.channels()}
        if "lorentz" in groups_used and self.pos_dim != 4:
            raise ConfigError("pos_dim", "Lorentz messages need 4-vector positions")
        if "euclid" in groups_used and self.pos_dim not in (2, 3):
            raise ConfigError("pos_dim", "Euclidean messages need 2-D or 3-D positions")

    def channels(self) -> list[tuple[str, str, int]]:
        """(stream name, channel kind, width) for each active channel."""
        m = self.message
        if m.variant == "lorentz":
            return [("eq", "lorentz", self.hidden)]
        if m.variant == "euclid":
            return [("eq", "euclid", self.hidden)]
        if m.variant == "unconstrained":
            return [("free", "free", self.hidden)]
        out = []
        if m.eq_width > 0:
            out.append(("eq", m.eq_group, m.eq_width))
        if m.free_width > 0:
            out.append(("free", "free", m.free_width))
        return out

    @property
    def task(self) -> str:
        return "jet_tagging" if self.head == "graph" else "tracking"

    def with_message(self, message: MessageKind) -> "ModelSpec":
        return replace(self, message=message)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "model") -> "ModelSpec":
        d = dict(d)
        msg = d.pop("message", {})
        if isinstance(msg, str):
            msg = {"variant": msg}
        known_msg = set(MessageKind.__dataclass_fields__)
        for key in msg:
            if key not in known_msg:
                raise ConfigError(f"{prefix}.message.{key}", "unknown field")
        for key in d:
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f"{prefix}.{key}", "unknown field")
        try:
            kind = MessageKind(**msg)
        except ConfigError as err:
            raise ConfigError(f"{prefix}.message.{err.field}", str(err).split(": ", 1)[-1]) from None
        try:
            return cls(message=kind, **d)
        except ConfigError as err:
            raise ConfigError(f"{prefix}.{err.field}", str(err).split(": ", 1)[-1]) from None


# -- model --------------------------------------------------------------------


class Channel:
    def __init__(self, name: str, kind: str, width: int, spec: ModelSpec):
        rng = stream(spec.seed, name)
        self.name, self.kind, self.width = name, kind, width
        self.leak = kind == "free" and spec.message.position_leak
        act = spec.activation
        embed_in = spec.node_dim + (spec.pos_dim if self.leak else 0)
        extra = {"lorentz": 2, "euclid": 1}.get(kind, spec.edge_dim + (2 * spec.pos_dim if self.leak else 0))
        self.extra = extra
        self.embed = MLP(MLPSpec((embed_in, width), (None,)), rng, f"{name}.embed")
        self.rounds = []
        for l in range(spec.n_layers):
            phi = MLP(MLPSpec.dense((2 * width + extra, width, width), act, final_activation=True), rng, f"{name}.phi{l}")
            psi = MLP(MLPSpec.dense((2 * width, width, width), act), rng, f"{name}.psi{l}")
            phi_x = MLP(MLPSpec((width, 1), ("tanh",)), rng, f"{name}.phix{l}") if spec.position_update else None
            self.rounds.append((phi, psi, phi_x))
        self.c = Tensor([spec.c_init], requires_grad=True, name=f"{name}.C") if spec.position_update else None

    def mlps(self) -> list[MLP]:
        out = [self.embed]
        for phi, psi, phi_x in self.rounds:
            out += [phi, psi] + ([phi_x] if phi_x is not None else [])
        return out

    def parameters(self) -> list[Tensor]:
        ps = [p for m in self.mlps() for p in m.parameters()]
        return ps + ([self.c] if self.c is not None else [])

    def head_extra(self, edge_dim: int, pos_dim: int) -> int:
        """Width of the per-edge pair invariants fed to an edge head."""
        if self.kind == "lorentz":
            return 2
        if self.kind == "euclid":
            return 1
        return edge_dim + (2 * pos_dim if self.leak else 0)

    def message(self, phi, h, x, batch: GraphBatch, e_dir) -> Tensor:
        r, s = batch.receivers, batch.senders
        h_i, h_j = gather(h, r), gather(h, s)
        if self.kind == "lorentz":
            return message_lorentz(h_i, h_j, gather(x, r), gather(x, s), phi)
        if self.kind == "euclid":
            return message_euclid(h_i, h_j, gather(x, r), gather(x, s), phi)
        if self.leak:
            return message_unconstrained(h_i, h_j, phi, e_dir, gather(x, r), gather(x, s))
        return message_unconstrained(h_i, h_j, phi, e_dir)

    def run(self, batch: GraphBatch, aggregation: str, dtype) -> tuple[Tensor, Tensor]:
        x = Tensor._wrap(batch.positions.astype(dtype, copy=False))
        feats = Tensor._wrap(batch.node_feats.astype(dtype, copy=False))
        h = self.embed(concat([feats, x]) if self.leak else feats)
        e_dir = None
        if self.kind == "free" and batch.edge_feats_directed is not None:
            e_dir = Tensor._wrap(batch.edge_feats_directed.astype(dtype, copy=False))
        n = batch.n_nodes
        for phi, psi, phi_x in self.rounds:
            m = self.message(phi, h, x, batch, e_dir)
            agg = aggregate(m, batch.receivers, n, aggregation)
            if phi_x is not None:
                x = position_update(x, batch.senders, batch.receivers, m, phi_x, self.c)
            h = node_update(h, agg, psi)
        return h, x

    def edge_inputs(self, h: Tensor, x: Tensor, batch: GraphBatch, dtype) -> list[Tensor]:
        i, j = batch.edges[:, 0], batch.edges[:, 1]
        parts = [gather(h, i), gather(h, j)]
        x_i, x_j = gather(x, i), gather(x, j)
        if self.kind == "lorentz":
            parts.append(lorentz_invariants(x_i, x_j))
        elif self.kind == "euclid":
            parts.append(squared_distance_rows(x_i, x_j))
        else:
            if batch.edge_feats is not None:
                parts.append(Tensor._wrap(batch.edge_feats.astype(dtype, copy=False)))
            if self.leak:
                parts += [x_i, x_j]
        return parts


class GNNModel:
    """Message-passing classifier rebuilt deterministically from a ``ModelSpec``."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.channels = [Channel(name, kind, width, spec) for name, kind, width in spec.channels()]
        total = sum(c.width for c in self.channels)
        head_rng = stream(spec.seed, "head")
        if spec.head == "graph":
            head_in = total
        else:
            head_in = sum(2 * c.width + c.head_extra(spec.edge_dim, spec.pos_dim) for c in self.channels)
        self.head = MLP(MLPSpec.dense((head_in, total, 1), spec.activation), head_rng, "head")
        self.dtype = np.float64

    def parameters(self) -> list[Tensor]:
        return [p for c in self.channels for p in c.parameters()] + self.head.parameters()

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for p in self.parameters()]

    def forward(self, batch: GraphBatch) -> Tensor:
        """Logits as an n x 1 tensor: one per graph (graph head) or per edge (edge head)."""
        if batch.task != self.spec.task:
            raise ContractError(f"{self.spec.head} head cannot score a {batch.task} batch")
        outs = [c.run(batch, self.spec.aggregation, self.dtype) for c in self.channels]
        if self.spec.head == "graph":
            pooled = [segment_mean(h, batch.node_graph, batch.n_graphs) for h, _ in outs]
            return self.head(concat(pooled))
        parts = []
        for c, (h, x) in zip(self.channels, outs):
            parts += c.edge_inputs(h, x, batch, self.dtype)
        return self.head(concat(parts))

    __call__ = forward

    def predict(self, events: Sequence[EventGraph], batch_size: int = 256) -> np.ndarray:
        """Flat array of logits for ``events`` (per event or per edge)."""
        chunks = []
        for k in range(0, len(events), batch_size):
            chunks.append(self.forward(collate(events[k : k + batch_size])).data.reshape(-1))
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def score_event(self, event: EventGraph) -> np.ndarray:
        return self.forward(collate([event])).data.reshape(-1)

    def final_positions(self, event: EventGraph) -> np.ndarray:
        """Positions after all rounds of the first position-updating channel."""
        if not self.spec.position_update:
            raise ContractError("position update is disabled in this model spec")
        _, x = self.channels[0].run(collate([event]), self.spec.aggregation, self.dtype)
        return x.data

    def astype(self, dtype) -> "GNNModel":
        """A copy evaluating in ``dtype`` (float32 to study weight precision)."""
        twin = GNNModel(self.spec)
        twin.set_flat(self.flat_parameters())
        for p in twin.parameters():
            p.data = p.data.astype(dtype)
        twin.dtype = dtype
        return twin

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.parameters()]).astype(np.float64)

    def set_flat(self, flat: Sequence[float]) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != count_parameters(self):
            raise DimensionError(f"expected {count_parameters(self)} parameters, got {flat.size}")
        k = 0
        for p in self.parameters():
            n = p.data.size
            p.data = flat[k : k + n].reshape(p.data.shape).copy()
            k += n

    def copy(self) -> "GNNModel":
        twin = GNNModel(self.spec)
        twin.set_flat(self.flat_parameters())
        return twin


def count_parameters(model) -> int:
    if isinstance(model, MLP):
        return model.spec.n_params
    return int(sum(p.data.size for p in model.parameters()))


def build_model(spec: ModelSpec) -> GNNModel:
    return GNNModel(spec)


def checkpoint_dict(model: GNNModel, extra: Optional[dict] = None) -> dict:
    d = {
        "model_spec": model.spec.to_dict(),
        "seed": model.spec.seed,
        "parameters": model.flat_parameters().tolist(),
        "parameter_count": count_parameters(model),
    }
    if extra:
        d.update(extra)
    return d


def model_from_checkpoint(d: dict) -> GNNModel:
    model = GNNModel(ModelSpec.from_dict(d["model_spec"]))
    model.set_flat(d["parameters"])
    return model


def save_checkpoint(model: GNNModel, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(model, extra)))
    return path


def load_checkpoint(path) -> tuple[GNNModel, dict]:
    d = json.loads(Path(path).read_text())
    return model_from_checkpoint(d), d
