"""Command-line entry point: ``equibench generate|train|eval|sweep|certify``.

Exit codes: 0 success, 2 user or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from equibench import bench
from equibench.errors import ConfigError, ContractError, DimensionError, DomainError, NumericalError
from equibench.graphdata import Dataset, config_for_task, generate, split
from equibench.layers import ModelSpec, count_parameters, load_checkpoint, save_checkpoint, GNNModel
from equibench.metrics import evaluate_model
from equibench.seeding import derive_seed, stream
from equibench.train import TrainConfig, evaluate_loss, train

TOP_LEVEL_KEYS = {"task", "seed", "output_dir", "generator", "models", "train", "sweeps", "test_fraction", "dataset"}
SWEEP_KEYS = {"protocol", "grid", "seeds", "models", "options"}
DEFAULT_OUT = "equibench_out"


@dataclass
class ExperimentConfig:
    task: str
    generator: object
    models: dict
    train: TrainConfig
    sweeps: list
    output_dir: Optional[str]
    seed: int
    test_fraction: float = 0.2
    dataset: Optional[str] = None
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def generator_seed(self) -> int:
        return derive_seed(self.seed, "generator")

    def provenance(self) -> dict:
        return {"config_hash": self.hash, "seed": self.seed}

    def csv_header(self) -> str:
        return f"# config_hash={self.hash} seed={self.seed}\n"


def _model_spec(task: str, name: str, d: dict, seed: int) -> ModelSpec:
    if not isinstance(d, dict):
        raise ConfigError(f"models.{name}", "must be an object")
    d = dict(d)
    head = "graph" if task == "jet_tagging" else "edge"
    if d.get("head", head) != head:
        raise ConfigError(f"models.{name}.head", f"task {task} needs a {head} head, got {d['head']!r}")
    d.setdefault("head", head)
    d.setdefault("pos_dim", 4 if task == "jet_tagging" else 2)
    d.setdefault("node_dim", 1)
    d.setdefault("seed", derive_seed(seed, "init", name))
    return ModelSpec.from_dict(d, prefix=f"models.{name}")


def parse_config(raw: dict, seed_override: Optional[int] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    raw = json.loads(json.dumps(raw))
    for key in raw:
        if key not in TOP_LEVEL_KEYS:
            raise ConfigError(key, "unknown key")
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    task = raw.get("task")
    if task not in ("jet_tagging", "tracking"):
        raise ConfigError("task", f"must be 'jet_tagging' or 'tracking', got {task!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    gen = raw.get("generator", {})
    if not isinstance(gen, dict):
        raise ConfigError("generator", "must be an object")
    generator = config_for_task(task, gen)
    models_raw = raw.get("models", {})
    if not isinstance(models_raw, dict):
        raise ConfigError("models", "must be an object mapping names to model specs")
    models = {name: _model_spec(task, name, d, seed) for name, d in models_raw.items()}
    train_raw = dict(raw.get("train", {}))
    train_raw.setdefault("seed", derive_seed(seed, "shuffle"))
    train_cfg = TrainConfig.from_dict(train_raw)
    sweeps = []
    for k, s in enumerate(raw.get("sweeps", [])):
        prefix = f"sweeps[{k}]"
        for key in s:
            if key not in SWEEP_KEYS:
                raise ConfigError(f"{prefix}.{key}", "unknown key")
        names = s.get("models", sorted(models))
        for n in names:
            if n not in models:
                raise ConfigError(f"{prefix}.models", f"unknown model {n!r}")
        protocol = s.get("protocol")
        default_seeds = [0, 1, 2, 3, 4] if task == "tracking" else [0]
        if protocol == "data_efficiency":
            default_seeds = list(range(bench.DEFAULT_SEEDS["data_efficiency"]))
        grid = s.get("grid") or _default_grid(protocol, task)
        try:
            sweeps.append(bench.SweepSpec(protocol, grid, s.get("seeds", default_seeds),
                                          {n: models[n] for n in names}, raw.get("dataset"), s.get("options", {})))
        except ConfigError as err:
            raise ConfigError(f"{prefix}.{err.field}", str(err).split(": ", 1)[-1]) from None
        fam = {"boost_robustness": "jet_tagging", "rotation_robustness": "tracking"}.get(protocol)
        if fam and fam != task:
            raise ConfigError(f"{prefix}.protocol", f"{protocol} does not apply to task {task}")
    tf = raw.get("test_fraction", 0.2)
    if not 0.0 < tf < 1.0:
        raise ConfigError("test_fraction", "must lie in (0, 1)")
    return ExperimentConfig(task, generator, models, train_cfg, sweeps, raw.get("output_dir"), seed, tf,
                            raw.get("dataset"), raw)


def _default_grid(protocol, task):
    return {
        "boost_robustness": list(bench.DEFAULT_BETAS),
        "rotation_robustness": list(bench.DEFAULT_THETAS),
        "data_efficiency": [0.005, 0.01, 0.05, 1.0],
        "ablation": [0.0],
        "certify": [0.9 if task == "jet_tagging" else 3.141592653589793],
    }.get(protocol, [])


def load_config(path, seed_override=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"no such file {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError("--config", f"invalid JSON: {err}") from None
    return parse_config(raw, seed_override)


def output_root(cfg: Optional[ExperimentConfig], flag: Optional[str]) -> Path:
    if flag:
        return Path(flag)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get("EQUIBENCH_OUT", DEFAULT_OUT))


def dataset_path(cfg: ExperimentConfig, out: Path) -> Path:
    return Path(cfg.dataset) if cfg.dataset else out / "dataset.json"


def _load_dataset(path: Path) -> Dataset:
    if not path.exists():
        raise ConfigError("dataset", f"no dataset at {path}; run `equibench generate` first")
    return Dataset.load(path)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# -- commands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = output_root(cfg, args.out)
    ds = generate(cfg.task, cfg.generator, cfg.generator_seed)
    path = ds.save(dataset_path(cfg, out), provenance=cfg.provenance())
    labels = ds.labels()
    print(f"wrote {path}")
    print(f"events: {len(ds)}")
    if cfg.task == "jet_tagging":
        print(f"class balance: {labels.mean():.4f}")
    else:
        print(f"edges: {labels.size}  edge truth fraction: {ds.report['edge_truth_fraction']:.4f}")
        if ds.report.get("tracks_without_edges"):
            print(f"warning: {ds.report['tracks_without_edges']} tracks produced no true segment")
    print("note: synthetic surrogate data")
    return 0


def _pick_model(cfg: ExperimentConfig, name: Optional[str]) -> tuple[str, ModelSpec]:
    if not cfg.models:
        raise ConfigError("models", "config defines no models")
    if name is None:
        if len(cfg.models) != 1:
            raise ConfigError("--model", f"choose one of {sorted(cfg.models)}")
        name = next(iter(cfg.models))
    if name not in cfg.models:
        raise ConfigError("--model", f"unknown model {name!r}; choose one of {sorted(cfg.models)}")
    return name, cfg.models[name]


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = output_root(cfg, args.out)
    name, spec = _pick_model(cfg, args.model)
    ds = _load_dataset(dataset_path(cfg, out))
    if ds.task != spec.task:
        raise ContractError(f"model {name!r} has a {spec.head} head but the dataset task is {ds.task}")
    tc = cfg.train
    model = GNNModel(spec)
    n_val = int(round(tc.val_fraction * len(ds)))
    order = stream(tc.seed, "validation").permutation(len(ds))
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    validation = ds.subset(val_idx) if n_val else None
    model, history = train(model, ds.subset(train_idx), replace(tc, val_fraction=0.0) if validation is None else tc,
                           validation=validation)
    target = out / "models" / name
    extra = dict(cfg.provenance())
    extra.update({
        "model_name": name,
        "train_config": tc.to_dict(),
        "validation_indices": val_idx.tolist(),
        "best_epoch": history.best_epoch,
    })
    ckpt = save_checkpoint(model, target / "checkpoint.json", extra)
    _write(target / "history.csv", history.to_csv(cfg.csv_header()))
    print(f"wrote {ckpt}")
    print(f"parameters: {count_parameters(model)}")
    if history.best_epoch:
        k = history.best_epoch - 1
        print(f"best epoch: {history.best_epoch}  val_loss: {history.val_loss[k]:.6f}  val_auc: {history.val_auc[k]:.6f}")
    return 0


def cmd_eval(args) -> int:
    if not args.checkpoint or not args.dataset:
        raise ConfigError("eval", "--checkpoint and --dataset are required")
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise ConfigError("--checkpoint", f"no such file {ckpt_path}")
    model, meta = load_checkpoint(ckpt_path)
    ds = _load_dataset(Path(args.dataset))
    if len(ds) == 0:
        raise DomainError("dataset has no events")
    if ds.task != model.spec.task:
        raise ContractError(f"checkpoint head {model.spec.head} cannot score a {ds.task} dataset")
    if args.split == "val":
        idx = meta.get("validation_indices")
        if not idx:
            raise ConfigError("--split", "checkpoint records no validation split")
        ds = ds.subset(idx)
    report = evaluate_model(model, ds, timing=args.timing, timing_runs=args.timing_runs)
    out = Path(args.out) if args.out else ckpt_path.parent
    stem = f"report_{args.split}"
    prov = {"config_hash": meta.get("config_hash"), "seed": meta.get("seed"), "checkpoint": ckpt_path.name}
    header = f"# config_hash={prov['config_hash']} seed={prov['seed']}\n"
    _write(out / f"{stem}.json", report.to_json(prov))
    _write(out / f"{stem}.csv", report.to_csv(header))
    print(f"accuracy: {report.accuracy:.6f}")
    print(f"auc: {report.auc!r}")
    flag = " (no background passed; capped)" if report.rejection_zero_fpr else ""
    print(f"rejection@30%: {report.rejection_at_30:.2f}{flag}")
    print(f"parameters: {report.n_parameters}")
    print(f"ant factor v2 (x1e5): {report.ant_factor_v2_display:.2f}")
    if report.timing:
        t = report.timing
        print(f"time: {t['mean_ms']:.4f} ± {t['std_ms']:.4f} ms/batch over {t['runs']} runs [{t['profile']}]")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = output_root(cfg, args.out)
    names = [s.protocol for s in cfg.sweeps]
    if args.protocol:
        if args.protocol not in bench.PROTOCOLS:
            raise ConfigError("--protocol", f"unknown protocol {args.protocol!r}; valid: {', '.join(bench.PROTOCOLS)}")
        if args.protocol not in names:
            raise ConfigError("--protocol", f"protocol {args.protocol!r} not in config; configured: {', '.join(names) or 'none'}")
        todo = [s for s in cfg.sweeps if s.protocol == args.protocol]
    else:
        if not cfg.sweeps:
            raise ConfigError("sweeps", "config defines no sweeps")
        todo = cfg.sweeps
    path = dataset_path(cfg, out)
    ds = Dataset.load(path) if path.exists() else generate(cfg.task, cfg.generator, cfg.generator_seed)
    train_ds, test_ds = split(ds, cfg.test_fraction, derive_seed(cfg.seed, "sweep"))
    for spec in todo:
        sub = out / "sweeps" / spec.protocol
        print(f"== {spec.protocol} [{spec.content_hash()}]")
        result = bench.run_sweep(spec, train_ds, test_ds, cfg.train, sub, jobs=args.jobs,
                                 header=cfg.csv_header(), provenance=cfg.provenance())
        print(bench.format_summary(result))
        csv_path, json_path = bench.sweep_paths(sub, spec)
        print(f"wrote {csv_path}")
        print(f"wrote {json_path}")
    return 0


def cmd_certify(args) -> int:
    args.protocol = "certify"
    return cmd_sweep(args)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="equibench", description="Equivariant GNN benchmark harness")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--out", help="output directory (default: config output_dir, then $EQUIBENCH_OUT)")
        sp.add_argument("--seed", type=int, help="override the global seed")
        sp.add_argument("--jobs", type=int, default=1, help="parallel runs for sweeps")

    g = sub.add_parser("generate", help="write the synthetic dataset")
    common(g)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train one configured model")
    common(t)
    t.add_argument("--model", help="model name from the config")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(e, config=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", choices=("all", "val"), default="all")
    e.add_argument("--timing", action="store_true", help="add inference timing (batch size 100)")
    e.add_argument("--timing-runs", type=int, default=300)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep", help="run configured sweep protocols")
    common(s)
    s.add_argument("--protocol", help=f"one of: {', '.join(bench.PROTOCOLS)}")
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("certify", help="alias for `sweep --protocol certify`")
    common(c)
    c.set_defaults(fn=cmd_certify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except (ConfigError, DomainError, ContractError, DimensionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
