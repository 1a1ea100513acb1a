"""Command-line entry point: train, attack, evaluate, sweep, verify.

Datasets are JSON files or generator specs:

    sbm:n=400,blocks=2,p_in=0.1,p_out=0.01,signal=3,seed=7
    regress:count=200,min=8,max=20,target=node-count,seed=7,p=0.3

A JSON config file (--config) may supply any long-option value by its
destination name; explicit flags take precedence over the file.  Exit codes:
0 success, 1 verification or attack failure, 2 usage error.  The only
environment variable read is PEANUT_LOG_LEVEL.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .attack import AttackConfig, VARIANTS, V_MODES
from .data_io import (DataFormatError, DatasetManifest, Split, load_checkpoint,
                      load_graph_json, make_split, generate_regression_graphs,
                      generate_sbm, save_checkpoint)
from .evaluation import (accuracy, append_report_csv, macro_f1, mae, rmse,
                         run_graph_attack, run_node_attack, write_report)
from .graph import Graph
from .models import ARCHITECTURES, TASKS, embed, graph_head, init_checkpoint, operator_for
from .training import (GraphTaskData, NodeTaskData, TrainConfig, train)
from .verify import SUITES, run_suites

log = logging.getLogger("peanut")

NODE_SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
GRAPH_SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


class UsageError(ValueError):
    """Bad arguments or config values; mapped to exit code 2."""


def _parse_kv(rest: str) -> dict[str, str]:
    out = {}
    for item in rest.split(","):
        if not item:
            continue
        if "=" not in item:
            raise UsageError(f"bad generator parameter {item!r}")
        key, value = item.split("=", 1)
        out[key] = value
    return out


def resolve_dataset(spec: str, seed: int):
    """Graph(s) plus a manifest, from a generator spec or a JSON path."""
    if spec.startswith("sbm:"):
        kv = _parse_kv(spec[4:])
        gen_seed = int(kv.get("seed", seed))
        g = generate_sbm(
            n=int(kv.get("n", 400)),
            blocks=int(kv.get("blocks", 2)),
            p_in=float(kv.get("p_in", 0.1)),
            p_out=float(kv.get("p_out", 0.01)),
            feature_signal=float(kv.get("signal", 3.0)),
            seed=gen_seed,
        )
        manifest = DatasetManifest(
            name="sbm", task="node-classification", graphs=1,
            feature_dim=g.feature_dim,
            classes=int(g.node_labels.max()) + 1,
            source=spec, split_seed=gen_seed,
        )
        return g, manifest
    if spec.startswith("regress:"):
        kv = _parse_kv(spec[8:])
        gen_seed = int(kv.get("seed", seed))
        graphs = generate_regression_graphs(
            count=int(kv.get("count", 200)),
            size_range=(int(kv.get("min", 8)), int(kv.get("max", 20))),
            target_fn=kv.get("target", "node-count"),
            seed=gen_seed,
            edge_prob=float(kv.get("p", 0.3)),
        )
        manifest = DatasetManifest(
            name="regress", task="graph-regression", graphs=len(graphs),
            feature_dim=graphs[0].feature_dim, classes=None,
            source=spec, split_seed=gen_seed,
        )
        return graphs, manifest
    loaded = load_graph_json(spec)
    if isinstance(loaded, Graph):
        classes = (None if loaded.node_labels is None
                   else int(loaded.node_labels.max()) + 1)
        manifest = DatasetManifest(
            name=Path(spec).stem, task="node-classification", graphs=1,
            feature_dim=loaded.feature_dim, classes=classes,
            source=str(spec), split_seed=seed,
        )
        return loaded, manifest
    targets = [g.graph_target for g in loaded]
    classification = all(
        t is not None and float(t).is_integer() for t in targets
    )
    classes = int(max(targets)) + 1 if classification else None
    manifest = DatasetManifest(
        name=Path(spec).stem,
        task="graph-classification" if classification else "graph-regression",
        graphs=len(loaded), feature_dim=loaded[0].feature_dim,
        classes=classes, source=str(spec), split_seed=seed,
    )
    return loaded, manifest


def _dataset_split(data, split_seed: int) -> Split:
    if isinstance(data, Graph):
        return make_split(data.num_nodes, split_seed, NODE_SPLIT_FRACTIONS)
    return make_split(len(data), split_seed, GRAPH_SPLIT_FRACTIONS)


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """File values fill in any option left unset on the command line."""
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        with open(path) as fh:
            file_values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    if not isinstance(file_values, dict):
        raise UsageError("config file must hold a JSON object")
    for key, value in file_values.items():
        if not hasattr(args, key):
            raise UsageError(f"config file sets unknown option {key!r}")
        if getattr(args, key) is None:
            setattr(args, key, value)
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"missing required option --{name.replace('_', '-')}")


def _resolved_with_split(args):
    data, manifest = resolve_dataset(args.dataset, args.seed)
    split_seed = args.split_seed if args.split_seed is not None else manifest.split_seed
    manifest = DatasetManifest(
        name=manifest.name, task=manifest.task, graphs=manifest.graphs,
        feature_dim=manifest.feature_dim, classes=manifest.classes,
        source=manifest.source, split_seed=split_seed,
    )
    return data, manifest, _dataset_split(data, split_seed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    _require(args, "dataset", "arch", "task", "out")
    if args.seed is None:
        args.seed = 0
    data, manifest, split = _resolved_with_split(args)
    node_task = args.task == "node-classification"
    if node_task != isinstance(data, Graph):
        raise UsageError(
            f"dataset is a {'single graph' if isinstance(data, Graph) else 'graph list'},"
            f" which does not fit task {args.task}"
        )
    feature_dim = data.feature_dim if node_task else data[0].feature_dim
    num_classes = manifest.classes if args.task != "graph-regression" else None
    if args.task != "graph-regression" and num_classes is None:
        raise UsageError("classification dataset has no labels")

    model = init_checkpoint(
        args.arch, args.task, feature_dim,
        hidden_dim=args.hidden_dim, num_classes=num_classes,
        seed=args.seed, self_loop_flag=bool(args.self_loops),
    )
    config = TrainConfig(
        learning_rate=args.lr if args.lr is not None else 1e-3,
        max_epochs=args.max_epochs if args.max_epochs is not None else 1000,
        patience=args.patience if args.patience is not None else 100,
        batch_size=args.batch_size if args.batch_size is not None else 32,
        seed=args.seed,
    )
    task_data = (NodeTaskData(data, split) if node_task
                 else GraphTaskData(data, split))
    result = train(model, task_data, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.json"
    save_checkpoint(result.checkpoint, ckpt_path)
    log_path = out / "training_log.csv"
    with open(log_path, "w") as fh:
        fh.write("epoch,loss,val_metric,lr\n")
        for row in result.history:
            fh.write(f"{row['epoch']},{row['loss']!r},{row['val_metric']!r},"
                     f"{row['lr']!r}\n")
    print(f"trained {args.arch} for {args.task}: best val metric "
          f"{result.best_metric:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint written to {ckpt_path}")
    print(f"training log written to {log_path}")
    return 0


def _attack_once(data, manifest, split, model, cfg: AttackConfig, out_dir: Path):
    if model.task == "node-classification":
        if not isinstance(data, Graph):
            raise UsageError("node-classification attack needs a single graph")
        report = run_node_attack(data, model, cfg, split, manifest)
    else:
        if isinstance(data, Graph):
            raise UsageError("graph-level attack needs a graph list dataset")
        test_graphs = [data[i] for i in split.test]
        report = run_graph_attack(test_graphs, model, cfg, manifest)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = (f"report_{cfg.variant}_r{cfg.r:g}_nv{report.n_v}"
            f"_seed{cfg.seed}.json")
    write_report(report, out_dir / name)
    append_report_csv(report, out_dir / "summary.csv")
    drops = ", ".join(f"{k} drop {v:.3f}" for k, v in report.metric_drops.items())
    print(f"{cfg.variant} r={cfg.r:g} n_v={report.n_v} seed={cfg.seed}: "
          f"{drops}; efficacy {report.efficacy:.4g} "
          f"({report.timing_seconds:.2f}s) -> {name}")
    return report


def _build_attack_config(args, n_v: int, seed: int, r: float,
                         variant: str) -> AttackConfig:
    try:
        return AttackConfig(
            variant=variant,
            r=r,
            n_v=n_v,
            v_mode=args.v_mode if args.v_mode is not None else "uniform-random",
            seed=seed,
            normalized_domain=bool(args.normalized_domain),
            observe=args.observe if args.observe is not None else "logits",
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def cmd_attack(args) -> int:
    _require(args, "dataset", "checkpoint", "variant", "ratio", "seed", "out")
    data, manifest, split = _resolved_with_split(args)
    model = load_checkpoint(args.checkpoint)
    n_v = args.num_virtual if args.num_virtual is not None else 0
    cfg = _build_attack_config(args, n_v, args.seed, args.ratio, args.variant)
    _attack_once(data, manifest, split, model, cfg, Path(args.out))
    return 0


def cmd_evaluate(args) -> int:
    _require(args, "dataset", "checkpoint")
    data, manifest, split = _resolved_with_split(args)
    model = load_checkpoint(args.checkpoint)
    if model.task == "node-classification":
        operator = operator_for(model, data)
        z = embed(model, operator, data.features)
        pred = np.argmax(z[split.test], axis=1)
        true = data.node_labels[split.test]
        metrics = {"accuracy": accuracy(pred, true),
                   "macro_f1": macro_f1(pred, true, model.num_classes)}
    else:
        outs, targets = [], []
        for i in split.test:
            g = data[i]
            z = embed(model, operator_for(model, g), g.features)
            outs.append(graph_head(model, z))
            targets.append(g.graph_target)
        if model.task == "graph-classification":
            pred = np.array([int(np.argmax(o)) for o in outs])
            true = np.asarray(targets, dtype=int)
            metrics = {"accuracy": accuracy(pred, true),
                       "macro_f1": macro_f1(pred, true, model.num_classes)}
        else:
            pred = np.array([float(o[0]) for o in outs])
            true = np.asarray(targets, dtype=float)
            metrics = {"rmse": rmse(pred, true), "mae": mae(pred, true)}
    for name, value in metrics.items():
        print(f"{name}: {value:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.json", "w") as fh:
            json.dump(metrics, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
        print(f"metrics written to {out / 'metrics.json'}")
    return 0


def _parse_list(raw, cast):
    if raw is None:
        return None
    if isinstance(raw, (list, tuple)):
        return [cast(v) for v in raw]
    return [cast(v) for v in str(raw).split(",") if v != ""]


def cmd_sweep(args) -> int:
    _require(args, "dataset", "checkpoint", "seed", "out")
    variants = _parse_list(args.variants, str) or [args.variant]
    if variants == [None]:
        raise UsageError("sweep needs --variants or --variant")
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; choose from {VARIANTS}")
    ratios = _parse_list(args.ratios, float) or (
        [args.ratio] if args.ratio is not None else None)
    if not ratios:
        raise UsageError("sweep needs --ratios or --ratio")
    n_v_values = _parse_list(args.num_virtual_list, int) or (
        [args.num_virtual if args.num_virtual is not None else 0])
    seeds = _parse_list(args.seeds, int) or [args.seed]

    data, manifest, split = _resolved_with_split(args)
    model = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    for variant in variants:
        for r in ratios:
            for n_v in n_v_values:
                for seed in seeds:
                    cfg = _build_attack_config(args, n_v, seed, r, variant)
                    _attack_once(data, manifest, split, model, cfg, out_dir)
    return 0


def cmd_verify(args) -> int:
    names = args.suite if args.suite else None
    try:
        results = run_suites(names, inject_fault=bool(args.inject_fault))
    except ValueError as exc:
        raise UsageError(str(exc))
    for result in results:
        print(result.summary())
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file supplying any option; flags win")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peanut",
        description="Virtual-node injection attacks on graph networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model checkpoint")
    _add_common(p_train)
    p_train.add_argument("--dataset")
    p_train.add_argument("--arch", choices=ARCHITECTURES)
    p_train.add_argument("--task", choices=TASKS)
    p_train.add_argument("--hidden-dim", type=int, default=None)
    p_train.add_argument("--self-loops", action=argparse.BooleanOptionalAction,
                         default=None)
    p_train.add_argument("--split-seed", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--max-epochs", type=int, default=None)
    p_train.add_argument("--patience", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    def add_attack_args(p):
        _add_common(p)
        p.add_argument("--dataset")
        p.add_argument("--checkpoint")
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--ratio", type=float, default=None,
                       help="budget ratio r")
        p.add_argument("--num-virtual", type=int, default=None,
                       help="virtual nodes for graph-level tasks")
        p.add_argument("--v-mode", choices=V_MODES, default=None)
        p.add_argument("--normalized-domain",
                       action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--observe", choices=("logits", "log-probs"),
                       default=None)
        p.add_argument("--split-seed", type=int, default=None)

    p_attack = sub.add_parser("attack", help="run one attack cell")
    add_attack_args(p_attack)
    p_attack.set_defaults(func=cmd_attack)

    p_eval = sub.add_parser("evaluate", help="clean metrics of a checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--dataset")
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--split-seed", type=int, default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="grid of attack cells")
    add_attack_args(p_sweep)
    p_sweep.add_argument("--variants", default=None,
                         help="comma-separated variant list")
    p_sweep.add_argument("--ratios", default=None,
                         help="comma-separated r list")
    p_sweep.add_argument("--num-virtual-list", default=None,
                         help="comma-separated n_v list")
    p_sweep.add_argument("--seeds", default=None,
                         help="comma-separated seed list")
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the seeded oracle suites")
    _add_common(p_verify)
    p_verify.add_argument("--suite", action="append", choices=sorted(SUITES),
                          default=None)
    p_verify.add_argument("--inject-fault", action="store_true",
                          help="test hook: force a suite failure")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PEANUT_LOG_LEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
