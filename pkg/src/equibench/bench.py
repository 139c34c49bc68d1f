"""Experimental protocols: symmetry robustness, data efficiency, ablation,
hybrid channel scans and a randomized equivariance certifier.

Every protocol produces a :class:`SweepResult` with one row per
(model, grid point, seed). Rows are plain dicts so they serialize to CSV with
a stable column order; raw scores are kept in memory only.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from equibench import groups
from equibench.errors import ConfigError, ContractError, DomainError
from equibench.graphdata import Dataset, EventGraph, augment, subsample, transform
from equibench.layers import GNNModel, MessageKind, ModelSpec, count_parameters
from equibench.metrics import ant_factor_v2, mean_std, report_from_scores, roc_auc
from equibench.seeding import stream
from equibench.train import TrainConfig, train

PROTOCOLS = (
    "boost_robustness",
    "rotation_robustness",
    "data_efficiency",
    "ablation",
    "hybrid_scan",
    "certify",
)
DEFAULT_BETAS = tuple(round(0.1 * k, 1) for k in range(10)) + (0.99,)
DEFAULT_THETAS = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi)
DEFAULT_SEEDS = {"tracking": 5, "data_efficiency": 6}
TOLERANCE = {"boost": 1e-9, "rotation": 1e-12}

METRIC_COLUMNS = ["accuracy", "auc", "rejection_at_30", "rejection_zero_fpr", "n_parameters", "ant_factor_v2"]
CERT_COLUMNS = ["residual", "tol", "passed", "contract", "worst_parameter"]


@dataclass
class SweepSpec:
    protocol: str
    grid: list
    seeds: list
    models: dict = field(default_factory=dict)
    dataset: Optional[str] = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError("protocol", f"unknown protocol {self.protocol!r}; valid: {', '.join(PROTOCOLS)}")
        if not self.grid:
            raise ConfigError("grid", "must be nonempty")
        if not self.seeds:
            raise ConfigError("seeds", "must be nonempty")
        if self.protocol == "boost_robustness":
            for b in self.grid:
                if not abs(float(b)) < 1.0:
                    raise ConfigError("grid", f"beta {b} outside (-1, 1)")

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "grid": [list(g) if isinstance(g, (tuple, list)) else g for g in self.grid],
            "seeds": list(self.seeds),
            "models": {k: v.to_dict() for k, v in sorted(self.models.items())},
            "dataset": self.dataset,
            "options": self.options,
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class SweepResult:
    protocol: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)

    def columns(self) -> list[str]:
        extra = CERT_COLUMNS if self.protocol == "certify" else METRIC_COLUMNS
        return ["protocol", "model", "point", "seed"] + extra

    def sorted_rows(self) -> list[dict]:
        return sorted(self.rows, key=lambda r: (str(r["model"]), _point_key(r["point"]), int(r["seed"])))

    def select(self, model: str, point=None) -> list[dict]:
        return [
            r for r in self.sorted_rows()
            if r["model"] == model and (point is None or _point_key(r["point"]) == _point_key(point))
        ]

    def curve(self, model: str, metric: str) -> list[tuple]:
        """(point, mean, std) over seeds for each grid point."""
        points = sorted({_point_key(r["point"]) for r in self.rows if r["model"] == model})
        out = []
        for p in points:
            vals = [float(r[metric]) for r in self.rows if r["model"] == model and _point_key(r["point"]) == p]
            out.append((p,) + mean_std(vals))
        return out

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        cols = self.columns()
        w.writerow(cols)
        for r in self.sorted_rows():
            w.writerow([_fmt(r.get(c, "")) for c in cols])
        return buf.getvalue()


def _point_key(p):
    if isinstance(p, (list, tuple)):
        return tuple(float(x) for x in p)
    try:
        return float(p)
    except (TypeError, ValueError):
        return p


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ":".join(str(x) for x in v)
    return v


def _metric_row(protocol, model, point, seed, report) -> dict:
    row = {"protocol": protocol, "model": model, "point": point, "seed": int(seed)}
    row.update({c: getattr(report, c) for c in METRIC_COLUMNS})
    return row


# -- robustness ---------------------------------------------------------------


def _robustness(protocol, family, models, test_ds, grid, make_element) -> SweepResult:
    result = SweepResult(protocol)
    labels = test_ds.labels()
    for point in grid:
        moved = test_ds if float(point) == 0.0 else transform(test_ds, make_element(float(point)))
        for name, by_seed in models.items():
            for seed, model in by_seed.items():
                scores = model.predict(moved.events)
                report = report_from_scores(scores, labels, count_parameters(model))
                result.rows.append(_metric_row(protocol, name, float(point), seed, report))
                result.scores[(name, float(point), int(seed))] = scores
    result.summary = robustness_summary(result)
    return result


def robustness_summary(result: SweepResult) -> dict:
    """Accuracy/AUC curves and the per-seed drop relative to the untransformed point."""
    out = {}
    for name in sorted({r["model"] for r in result.rows}):
        rows = result.select(name)
        points = sorted({float(r["point"]) for r in rows})
        base = {r["seed"]: r for r in rows if float(r["point"]) == points[0]}
        drops = {}
        for p in points:
            drops[p] = {
                int(r["seed"]): base[r["seed"]]["accuracy"] - r["accuracy"]
                for r in rows if float(r["point"]) == p and r["seed"] in base
            }
        out[name] = {
            "accuracy": result.curve(name, "accuracy"),
            "auc": result.curve(name, "auc"),
            "accuracy_drop": {str(p): d for p, d in drops.items()},
        }
    return out


def boost_robustness(models: Mapping[str, Mapping[int, GNNModel]], test_ds: Dataset, betas=DEFAULT_BETAS, axis="z"):
    """Evaluate trained models on the test set boosted by each beta (training data untouched)."""
    if test_ds.task != "jet_tagging":
        raise DomainError("boost robustness needs a jet-tagging dataset")
    for b in betas:
        if not abs(b) < 1:
            raise DomainError(f"beta {b} outside (-1, 1)")
    return _robustness("boost_robustness", "boost", models, test_ds, betas, lambda b: groups.LorentzBoost(b, axis))


def rotation_robustness(models: Mapping[str, Mapping[int, GNNModel]], test_ds: Dataset, thetas=DEFAULT_THETAS):
    """Per-angle edge-classification metrics on the rotated test set."""
    if not len(thetas):
        raise DomainError("rotation grid is empty")
    if test_ds.task != "tracking":
        raise DomainError("rotation robustness needs a tracking dataset")
    return _robustness("rotation_robustness", "rotation", models, test_ds, thetas, groups.Rotation2D)


# -- training-based protocols -------------------------------------------------


def fit(spec: ModelSpec, train_ds: Dataset, cfg: TrainConfig, seed: int, augmentation: Optional[dict] = None):
    """Train ``spec`` from scratch with every random stream tied to ``seed``."""
    model = GNNModel(replace(spec, seed=int(seed)))
    data = train_ds
    if augmentation:
        data = augment(
            train_ds,
            augmentation["family"],
            augmentation.get("range", (0.0, 0.0)),
            stream(seed, "augment"),
            supplement=augmentation.get("supplement", False),
            values=augmentation.get("values"),
        )
    model, history = train(model, data, replace(cfg, seed=int(seed)))
    return model, history


def _train_eval(args):
    name, spec, train_ds, test_ds, cfg, seed, augmentation = args
    model, _ = fit(spec, train_ds, cfg, seed, augmentation)
    scores = model.predict(test_ds.events)
    return name, seed, scores, count_parameters(model)


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def data_efficiency(
    specs: Mapping[str, ModelSpec],
    train_ds: Dataset,
    test_ds: Dataset,
    fractions: Sequence[float],
    seeds: Sequence[int],
    cfg: TrainConfig,
    jobs: int = 1,
    skip: Optional[set] = None,
) -> SweepResult:
    """Train every spec on stratified fractions of ``train_ds``; evaluate on ``test_ds``."""
    subsets = {f: {s: subsample(train_ds, f, s) for s in seeds} for f in fractions}
    tasks, keys = [], []
    for f in fractions:
        for name, spec in specs.items():
            for s in seeds:
                if skip and (name, _point_key(f), int(s)) in skip:
                    continue
                tasks.append((name, spec, subsets[f][s], test_ds, cfg, s, None))
                keys.append(f)
    result = SweepResult("data_efficiency")
    labels = test_ds.labels()
    for f, (name, seed, scores, n_params) in zip(keys, _map(_train_eval, tasks, jobs)):
        result.rows.append(_metric_row("data_efficiency", name, float(f), seed, report_from_scores(scores, labels, n_params)))
        result.scores[(name, float(f), int(seed))] = scores
    result.summary = data_efficiency_summary(result)
    return result


def data_efficiency_summary(result: SweepResult) -> dict:
    table = []
    flags = []
    models = sorted({r["model"] for r in result.rows})
    fractions = sorted({float(r["point"]) for r in result.rows})
    for f in fractions:
        for name in models:
            rows = result.select(name, f)
            if not rows:
                continue
            acc = mean_std([r["accuracy"] for r in rows])
            auc = mean_std([r["auc"] for r in rows])
            rej = mean_std([r["rejection_at_30"] for r in rows])
            table.append({"fraction": f, "model": name, "accuracy": acc, "auc": auc, "rejection": rej, "n_runs": len(rows)})
    for name in models:
        curve = [(f, m) for f, m, _ in result.curve(name, "auc")]
        for (f0, a0), (f1, a1) in zip(curve, curve[1:]):
            if a1 < a0:
                flags.append({"model": name, "from": f0, "to": f1, "auc_from": a0, "auc_to": a1})
    return {"table": table, "monotonicity_violations": flags}


def format_table3(summary: dict) -> str:
    """Plain-text table: training fraction, model, accuracy, AUC, 1/eps_B (mean +- std)."""
    lines = [f"{'Training %':>10}  {'Model':<16} {'Accuracy':>16} {'AUC':>18} {'1/eps_B':>18}"]
    for row in summary["table"]:
        a, sa = row["accuracy"]
        u, su = row["auc"]
        r, sr = row["rejection"]
        lines.append(
            f"{100 * row['fraction']:>9.4g}%  {row['model']:<16} {a:>8.4f} ± {sa:<6.4f} {u:>9.4f} ± {su:<6.4f} {r:>9.1f} ± {sr:<6.1f}"
        )
    for v in summary.get("monotonicity_violations", []):
        lines.append(f"! {v['model']}: mean AUC falls from {v['auc_from']:.4f} at {v['from']} to {v['auc_to']:.4f} at {v['to']}")
    return "\n".join(lines)


def check_ablation_pair(eq_spec: ModelSpec, stripped_spec: ModelSpec) -> None:
    """Raise unless the two specs differ only in their message kind."""
    a, b = eq_spec.to_dict(), stripped_spec.to_dict()
    diffs = [k for k in a if k != "message" and a[k] != b[k]]
    if diffs:
        raise ContractError(f"ablation specs differ outside the message kind: {', '.join(diffs)}")


@dataclass
class AblationResult:
    reports: dict
    differences: dict
    parameter_counts: dict
    notes: list


def ablation(
    eq_spec: ModelSpec,
    stripped_spec: ModelSpec,
    train_ds: Dataset,
    test_ds: Dataset,
    seeds: Sequence[int],
    cfg: TrainConfig,
    jobs: int = 1,
) -> AblationResult:
    """Paired equivariant vs stripped runs under identical seeds and recipe."""
    check_ablation_pair(eq_spec, stripped_spec)
    specs = {"equivariant": eq_spec, "stripped": stripped_spec}
    tasks = [(name, spec, train_ds, test_ds, cfg, s, None) for name, spec in specs.items() for s in seeds]
    labels = test_ds.labels()
    reports = {"equivariant": {}, "stripped": {}}
    counts = {}
    for name, seed, scores, n_params in _map(_train_eval, tasks, jobs):
        reports[name][int(seed)] = report_from_scores(scores, labels, n_params)
        counts[name] = n_params
    differences = {}
    for metric in ("accuracy", "auc", "rejection_at_30"):
        d = [getattr(reports["equivariant"][s], metric) - getattr(reports["stripped"][s], metric) for s in map(int, seeds)]
        differences[metric] = {"per_seed": d, "mean_std": mean_std(d)}
    notes = []
    if counts["equivariant"] != counts["stripped"]:
        notes.append(f"parameter counts differ: equivariant {counts['equivariant']} vs stripped {counts['stripped']}")
    return AblationResult(reports, differences, counts, notes)


def stripped_message(eq_spec: ModelSpec) -> ModelSpec:
    """The non-equivariant twin: invariant arguments replaced by raw coordinates."""
    return eq_spec.with_message(MessageKind("unconstrained", position_leak=True))


def hybrid_scan(
    base_spec: ModelSpec,
    width_pairs: Sequence[tuple],
    train_ds: Dataset,
    test_ds: Dataset,
    seeds: Sequence[int],
    cfg: TrainConfig,
    jobs: int = 1,
    require_corners: bool = True,
    skip: Optional[set] = None,
) -> SweepResult:
    """AUC and ant factor over (equivariant width, free width) pairs."""
    pairs = [tuple(int(w) for w in p) for p in width_pairs]
    for eq, free in pairs:
        if eq == 0 and free == 0:
            raise DomainError("hybrid widths cannot both be zero")
    if require_corners:
        widths = {max(p) for p in pairs}
        if not any((w, 0) in pairs and (0, w) in pairs for w in widths):
            raise DomainError("width pairs must include both pure corners (w, 0) and (0, w)")
    eq_group = "lorentz" if base_spec.pos_dim == 4 else "euclid"
    tasks, keys = [], []
    for pair in pairs:
        spec = base_spec.with_message(MessageKind.hybrid(pair[0], pair[1], eq_group, base_spec.message.position_leak))
        for s in seeds:
            if skip and ("hybrid", pair, int(s)) in skip:
                continue
            tasks.append(("hybrid", spec, train_ds, test_ds, cfg, s, None))
            keys.append(pair)
    result = SweepResult("hybrid_scan")
    labels = test_ds.labels()
    for pair, (name, seed, scores, n_params) in zip(keys, _map(_train_eval, tasks, jobs)):
        result.rows.append(_metric_row("hybrid_scan", name, pair, seed, report_from_scores(scores, labels, n_params)))
        result.scores[(name, pair, int(seed))] = scores
    result.summary = hybrid_summary(result)
    return result


def hybrid_summary(result: SweepResult) -> dict:
    points = sorted({_point_key(r["point"]) for r in result.rows})
    table = []
    for p in points:
        rows = [r for r in result.rows if _point_key(r["point"]) == p]
        auc = mean_std([r["auc"] for r in rows])
        ant = mean_std([r["ant_factor_v2"] for r in rows])
        kind = "equivariant corner" if p[1] == 0 else "free corner" if p[0] == 0 else "interior"
        table.append({"eq_width": int(p[0]), "free_width": int(p[1]), "kind": kind, "auc": auc, "ant_factor_v2": ant,
                      "n_parameters": rows[0]["n_parameters"]})
    best_auc = max(table, key=lambda r: r["auc"][0]) if table else None
    best_ant = max(table, key=lambda r: r["ant_factor_v2"][0]) if table else None
    return {
        "table": table,
        "best_by_auc": None if best_auc is None else [best_auc["eq_width"], best_auc["free_width"]],
        "best_by_ant_factor": None if best_ant is None else [best_ant["eq_width"], best_ant["free_width"]],
    }


def format_hybrid_table(summary: dict) -> str:
    lines = [f"{'eq':>4} {'free':>4} {'kind':<18} {'N_params':>8} {'AUC':>18} {'ant v2 (x1e5)':>16}"]
    for r in summary["table"]:
        mark = ""
        if [r["eq_width"], r["free_width"]] == summary["best_by_auc"]:
            mark += " <- best AUC"
        if [r["eq_width"], r["free_width"]] == summary["best_by_ant_factor"]:
            mark += " <- best ant factor"
        a, sa = r["auc"]
        f, _ = r["ant_factor_v2"]
        lines.append(
            f"{r['eq_width']:>4} {r['free_width']:>4} {r['kind']:<18} {r['n_parameters']:>8} {a:>9.4f} ± {sa:<6.4f} {f * 1e5:>16.1f}{mark}"
        )
    return "\n".join(lines)


# -- certification ------------------------------------------------------------


def format_tol(tol: float) -> str:
    """Compact tolerance text: 1e-09 prints as 1e-9."""
    text = f"{tol:g}"
    if "e" in text:
        mant, exp = text.split("e")
        text = f"{mant}e{int(exp)}"
    return text


@dataclass
class CertificationReport:
    passed: bool
    max_residual: float
    tol: float
    contract: str
    family: str
    n_samples: int
    worst_parameter: Optional[float]

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} tol={format_tol(self.tol)} residual={self.max_residual:.3e} ({self.contract}, {self.family})"


def certify(
    target,
    family: str,
    n_samples: int,
    tol: float,
    events: Sequence[EventGraph],
    rng: Optional[np.random.Generator] = None,
    bounds: Optional[Sequence[float]] = None,
    contract: str = "invariance",
) -> CertificationReport:
    """Max over sampled g and events of ||f(g.e) - S_g f(e)||_inf.

    ``target`` is a :class:`GNNModel` (scores, invariance) or any callable
    mapping an event to an array. With ``contract="equivariance"`` the output
    rows are positions and ``S_g`` is the group action; with ``"invariance"``
    ``S_g`` is the identity.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    if contract not in ("invariance", "equivariance"):
        raise DomainError(f"unknown contract {contract!r}")
    if not events:
        raise DomainError("certification needs at least one event")
    rng = rng if rng is not None else np.random.default_rng(0)
    if bounds is None:
        bounds = (-0.9, 0.9) if family == "boost" else (-math.pi, math.pi)
    if isinstance(target, GNNModel):
        fn = target.final_positions if contract == "equivariance" else target.score_event
    else:
        fn = target
    base = [np.asarray(fn(e)) for e in events]
    worst, worst_p = 0.0, None
    for _ in range(n_samples):
        axis = ("x", "y", "z")[int(rng.integers(3))] if family == "boost" else "z"
        g = groups.sample_group_element(rng, family, bounds, axis=axis)
        for e, f0 in zip(events, base):
            moved = np.asarray(fn(groups.apply_to_event(g, e)))
            expected = groups.act(g, f0) if contract == "equivariance" else f0
            res = float(np.max(np.abs(moved - expected))) if moved.size else 0.0
            if not math.isfinite(res):
                res = math.inf
            if res > worst or worst_p is None:
                worst, worst_p = max(res, worst), g.parameter
    return CertificationReport(worst <= tol, worst, tol, contract, family, n_samples, worst_p)


def family_for_spec(spec: ModelSpec) -> str:
    return "boost" if spec.pos_dim == 4 else "rotation"


# -- sweep driver with persistence and resume --------------------------------


def _read_done(path: Path) -> list[dict]:
    if not path.exists():
        return []
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    rows = list(csv.DictReader(lines))
    out = []
    for r in rows:
        d = dict(r)
        d["seed"] = int(d["seed"])
        d["point"] = _parse_point(d["point"])
        for k, v in list(d.items()):
            if k in ("protocol", "model", "point", "seed", "contract"):
                continue
            d[k] = _parse_value(v)
        out.append(d)
    return out


def _parse_point(s: str):
    if ":" in s:
        return tuple(int(float(x)) for x in s.split(":"))
    return float(s)


def _parse_value(v: str):
    if v in ("True", "False"):
        return v == "True"
    if v == "":
        return None
    try:
        f = float(v)
    except ValueError:
        return v
    return int(f) if v.lstrip("-").isdigit() else f


def sweep_paths(out_dir: Path, spec: SweepSpec) -> tuple[Path, Path]:
    stem = f"{spec.protocol}_{spec.content_hash()}"
    return out_dir / f"{stem}.csv", out_dir / f"{stem}.json"


def run_sweep(
    spec: SweepSpec,
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: TrainConfig,
    out_dir: Optional[Path] = None,
    jobs: int = 1,
    header: str = "",
    provenance: Optional[dict] = None,
) -> SweepResult:
    """Run one sweep, skipping (model, point, seed) rows already on disk."""
    done = []
    csv_path = json_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = sweep_paths(out_dir, spec)
        done = _read_done(csv_path)
    have = {(r["model"], _point_key(r["point"]), int(r["seed"])) for r in done}
    result = SweepResult(spec.protocol, rows=list(done))

    def save():
        if csv_path is None:
            return
        csv_path.write_text(result.to_csv(header))

    proto = spec.protocol
    if proto in ("boost_robustness", "rotation_robustness"):
        family = "boost" if proto == "boost_robustness" else "rotation"
        aug_models = set(spec.options.get("augment_models", []))
        for name, mspec in sorted(spec.models.items()):
            for s in spec.seeds:
                if all((name, _point_key(p), int(s)) in have for p in spec.grid):
                    continue
                aug = None
                if name in aug_models:
                    aug = {"family": family, "range": spec.options.get("augment_range", (0.0, 0.9 if family == "boost" else math.pi)),
                           "values": spec.options.get("augment_values")}
                model, _ = fit(mspec, train_ds, cfg, s, aug)
                sub = (boost_robustness if family == "boost" else rotation_robustness)({name: {int(s): model}}, test_ds, spec.grid)
                result.rows += [r for r in sub.rows if (name, _point_key(r["point"]), int(s)) not in have]
                result.scores.update(sub.scores)
                save()
        result.summary = robustness_summary(result)
    elif proto == "data_efficiency":
        sub = data_efficiency(spec.models, train_ds, test_ds, spec.grid, spec.seeds, cfg, jobs, skip=have)
        result.rows += sub.rows
        result.scores.update(sub.scores)
        save()
        result.summary = data_efficiency_summary(result)
    elif proto == "hybrid_scan":
        if len(spec.models) != 1:
            raise ConfigError("models", "hybrid_scan takes exactly one base model")
        (base,) = spec.models.values()
        sub = hybrid_scan(base, spec.grid, train_ds, test_ds, spec.seeds, cfg, jobs, skip=have)
        result.rows += sub.rows
        result.scores.update(sub.scores)
        save()
        result.summary = hybrid_summary(result)
    elif proto == "ablation":
        names = spec.options.get("pair") or sorted(spec.models)
        if len(names) != 2:
            raise ConfigError("options.pair", "ablation needs exactly two models (equivariant, stripped)")
        eq_name, stripped_name = names
        check_ablation_pair(spec.models[eq_name], spec.models[stripped_name])
        res = ablation(spec.models[eq_name], spec.models[stripped_name], train_ds, test_ds, spec.seeds, cfg, jobs)
        for role, name in (("equivariant", eq_name), ("stripped", stripped_name)):
            for s, rep in res.reports[role].items():
                if (name, _point_key(spec.grid[0]), s) not in have:
                    result.rows.append(_metric_row("ablation", name, float(spec.grid[0]), s, rep))
        save()
        result.summary = {"differences": res.differences, "parameter_counts": res.parameter_counts, "notes": res.notes,
                          "pair": [eq_name, stripped_name]}
    elif proto == "certify":
        n_samples = int(spec.options.get("n_samples", 100))
        n_events = int(spec.options.get("n_events", 5))
        events = test_ds.events[:n_events]
        for name, mspec in sorted(spec.models.items()):
            family = family_for_spec(mspec)
            tol = float(spec.options.get("tol", TOLERANCE[family]))
            for point in spec.grid:
                for s in spec.seeds:
                    if (name, _point_key(point), int(s)) in have:
                        continue
                    model = GNNModel(replace(mspec, seed=int(s)))
                    bound = float(point)
                    rep = certify(model, family, n_samples, tol, events, stream(s, "certify"), (-bound, bound))
                    result.rows.append({"protocol": proto, "model": name, "point": bound, "seed": int(s),
                                        "residual": rep.max_residual, "tol": tol, "passed": rep.passed,
                                        "contract": rep.contract, "worst_parameter": rep.worst_parameter})
            save()
        result.summary = certify_summary(result)
    save()
    if json_path is not None:
        doc = dict(provenance or {})
        doc.update({"sweep_spec": spec.to_dict(), "spec_hash": spec.content_hash(), "summary": result.summary})
        json_path.write_text(json.dumps(doc, indent=2, default=_json_default, sort_keys=False))
    return result


def certify_summary(result: SweepResult) -> dict:
    out = {}
    for name in sorted({r["model"] for r in result.rows}):
        rows = result.select(name)
        out[name] = {
            "passed": all(bool(r["passed"]) for r in rows),
            "n_passed": sum(bool(r["passed"]) for r in rows),
            "n_runs": len(rows),
            "max_residual": max(float(r["residual"]) for r in rows),
            "tol": float(rows[0]["tol"]),
        }
    return out


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def format_summary(result: SweepResult) -> str:
    """Console table for a finished sweep."""
    if result.protocol == "data_efficiency":
        return format_table3(result.summary)
    if result.protocol == "hybrid_scan":
        return format_hybrid_table(result.summary)
    if result.protocol == "certify":
        lines = []
        for name, s in result.summary.items():
            verdict = "PASS" if s["passed"] else "FAIL"
            lines.append(f"{name}: {verdict} tol={format_tol(s['tol'])} max_residual={s['max_residual']:.3e} ({s['n_passed']}/{s['n_runs']})")
        return "\n".join(lines)
    if result.protocol == "ablation":
        lines = [f"{'metric':<16} {'eq - stripped':>24}"]
        for metric, d in result.summary["differences"].items():
            m, s = d["mean_std"]
            lines.append(f"{metric:<16} {m:>12.4f} ± {s:<9.4f}")
        counts = result.summary["parameter_counts"]
        lines.append(f"parameters: equivariant {counts['equivariant']}, stripped {counts['stripped']}")
        lines += [f"note: {n}" for n in result.summary["notes"]]
        return "\n".join(lines)
    lines = []
    for name, s in result.summary.items():
        lines.append(name)
        for (p, acc, sacc), (_, auc, sauc) in zip(s["accuracy"], s["auc"]):
            lines.append(f"  point={p:<8.4g} accuracy={acc:.4f} ± {sacc:.4f}  auc={auc:.4f} ± {sauc:.4f}")
    return "\n".join(lines)
