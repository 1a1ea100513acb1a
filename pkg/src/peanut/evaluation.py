"""Metrics, attack efficacy, and the end-to-end attack runners.

``run_node_attack`` executes the single-large-graph pipeline: observe clean
embeddings, build the budgeted perturbation, insert the virtual-node block,
re-run the forward pass, and report clean vs. attacked metrics plus the
efficacy ||Z_p - Z||_F^2 over the real nodes.  ``run_graph_attack`` does the
same per test graph with a per-graph edge-fraction budget.

Report serialization is canonical and excludes wall-clock timing, so a rerun
with the same config and seed produces byte-identical files; timing is kept
on the in-memory report for display.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import attack as atk
from .attack import AttackConfig, Budget
from .data_io import DatasetManifest, Split
from .graph import (Graph, Perturbation, build_perturbed_adjacency,
                    real_node_rows, symmetric_normalize)
from .linalg import DegenerateEmbeddingError
from .models import ModelCheckpoint, embed, graph_head, operator_for

CSV_COLUMNS = (
    "task", "architecture", "variant", "r", "n_v", "seed",
    "delta_requested", "delta_realized", "efficacy",
    "clean_accuracy", "attacked_accuracy", "drop_accuracy",
    "clean_macro_f1", "attacked_macro_f1", "drop_macro_f1",
    "clean_rmse", "attacked_rmse", "drop_rmse",
    "clean_mae", "attacked_mae", "drop_mae",
)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def accuracy(pred, true) -> float:
    """Percent of matching labels."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    return 100.0 * float(np.mean(pred == true))


def macro_f1(pred, true, num_classes: int) -> float:
    """Unweighted mean of per-class F1, as a percent.

    A class with no true positives and no predictions contributes 0,
    matching the zero-division convention precision = recall = 0.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    if np.any((true < 0) | (true >= num_classes)):
        raise ValueError("labels outside [0, num_classes)")
    scores = []
    for c in range(num_classes):
        tp = float(np.sum((pred == c) & (true == c)))
        fp = float(np.sum((pred == c) & (true != c)))
        fn = float(np.sum((pred != c) & (true == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return 100.0 * float(np.mean(scores))


def rmse(pred, true) -> float:
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("predictions and targets must be equal-length and non-empty")
    return float(np.sqrt(np.mean((pred - true) ** 2)))


def mae(pred, true) -> float:
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("predictions and targets must be equal-length and non-empty")
    return float(np.mean(np.abs(pred - true)))


def attack_efficacy(z_clean, z_attacked_real_rows) -> float:
    """Squared Frobenius norm of the real-node embedding difference."""
    z_clean = np.asarray(z_clean, dtype=float)
    z_att = np.asarray(z_attacked_real_rows, dtype=float)
    if z_clean.shape != z_att.shape:
        raise ValueError("embedding shapes differ")
    diff = z_att - z_clean
    return float(np.sum(diff * diff))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class AttackReport:
    """Clean vs. attacked metrics for one (variant, r, n_v, seed) cell.

    Drops follow the degradation-positive convention: clean - attacked for
    accuracy/F1, attacked - clean for RMSE/MAE.  For graph tasks the delta
    and efficacy fields are means over the attacked test graphs.
    ``timing_seconds`` is never serialized (reports must be byte-stable
    across reruns); it is surfaced on stdout by the CLI instead.
    """

    task: str
    architecture: str
    variant: str
    r: float
    n_v: int
    delta_requested: float
    delta_realized: float
    clean_metrics: dict[str, float]
    attacked_metrics: dict[str, float]
    metric_drops: dict[str, float]
    efficacy: float
    seeds: list[int]
    observe: str
    normalized_domain: bool
    eigensolver_converged: bool = True
    manifest_hash: str | None = None
    timing_seconds: float = field(default=0.0, compare=False)

    def to_payload(self) -> dict:
        return {
            "task": self.task,
            "architecture": self.architecture,
            "variant": self.variant,
            "r": self.r,
            "n_v": self.n_v,
            "delta_requested": self.delta_requested,
            "delta_realized": self.delta_realized,
            "clean_metrics": self.clean_metrics,
            "attacked_metrics": self.attacked_metrics,
            "metric_drops": self.metric_drops,
            "efficacy": self.efficacy,
            "seeds": self.seeds,
            "observe": self.observe,
            "normalized_domain": self.normalized_domain,
            "eigensolver_converged": self.eigensolver_converged,
            "manifest_hash": self.manifest_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True,
                          separators=(",", ":")) + "\n"


def write_report(report: AttackReport, path) -> None:
    with open(path, "w") as fh:
        fh.write(report.to_json())


def append_report_csv(report: AttackReport, path) -> None:
    """Append one flat row per report; the header is written once."""
    row = {
        "task": report.task,
        "architecture": report.architecture,
        "variant": report.variant,
        "r": report.r,
        "n_v": report.n_v,
        "seed": report.seeds[0] if report.seeds else "",
        "delta_requested": report.delta_requested,
        "delta_realized": report.delta_realized,
        "efficacy": report.efficacy,
    }
    for name in ("accuracy", "macro_f1", "rmse", "mae"):
        row[f"clean_{name}"] = report.clean_metrics.get(name, "")
        row[f"attacked_{name}"] = report.attacked_metrics.get(name, "")
        row[f"drop_{name}"] = report.metric_drops.get(name, "")
    new_file = True
    try:
        with open(path) as fh:
            new_file = fh.read(1) == ""
    except FileNotFoundError:
        pass
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new_file:
            writer.writeheader()
        writer.writerow(row)


# ---------------------------------------------------------------------------
# Attack pipelines
# ---------------------------------------------------------------------------

def _drops(clean: dict[str, float], attacked: dict[str, float]) -> dict[str, float]:
    out = {}
    for name in clean:
        if name in ("rmse", "mae"):
            out[name] = attacked[name] - clean[name]
        else:
            out[name] = clean[name] - attacked[name]
    return out


def _check_variant_compat(checkpoint: ModelCheckpoint, cfg: AttackConfig) -> None:
    if cfg.variant not in atk.VARIANTS:
        raise ValueError(f"unknown variant {cfg.variant!r}")
    if cfg.variant == "PEANUT-W" and checkpoint.architecture != "SGC":
        raise ValueError("PEANUT-W needs white-box H = X Theta, i.e. an SGC checkpoint")
    if cfg.normalized_domain and not checkpoint.uses_edge_weights:
        raise ValueError(
            "normalized-domain attacks only apply to SGC/GCN checkpoints"
        )
    discrete = cfg.variant in atk.DISCRETE_VARIANTS
    if not checkpoint.uses_edge_weights and not discrete:
        raise ValueError(
            f"{checkpoint.architecture} only accepts binary adjacencies; "
            f"use a discrete variant (PEANUT-D or RAND-D)"
        )


def _build_perturbation(checkpoint: ModelCheckpoint, graph: Graph,
                        observed_z: np.ndarray, budget: Budget,
                        cfg: AttackConfig, seed: int):
    """Perturbation for one graph, or None when the budget allows nothing.

    Returns (perturbation | None, eigensolver_converged).
    """
    if budget.n_v < 1 or budget.delta <= 0:
        return None, True
    converged = True
    if cfg.variant in ("RAND", "RAND-D"):
        raw = atk.random_baseline(graph.num_nodes, budget, seed,
                                  cfg.normalized_domain)
    elif cfg.variant == "PEANUT-W":
        raw, eig = atk.attack_white_box_sgc(
            graph.features, checkpoint.weights["theta"], budget,
            cfg.v_mode, seed, normalized_domain=cfg.normalized_domain,
            eig_tol=cfg.eig_tol, eig_max_iter=cfg.eig_max_iter,
            return_eigen=True)
        converged = eig.converged
    else:
        try:
            raw, eig = atk.peanut_core(
                observed_z, budget, cfg.v_mode, seed,
                normalized_domain=cfg.normalized_domain,
                eig_tol=cfg.eig_tol, eig_max_iter=cfg.eig_max_iter,
                return_eigen=True)
        except DegenerateEmbeddingError:
            return None, True
        converged = eig.converged
    pert = atk.apply_variant(raw, cfg.variant, budget)
    if pert.is_zero():
        return None, converged
    return pert, converged


def perturbed_operator(checkpoint: ModelCheckpoint, graph: Graph,
                       pert: Perturbation):
    """Propagation operator of the perturbed graph, honoring the domain flag.

    In the normalized domain the connections extend the normalized operator
    directly; otherwise they extend the raw adjacency, which is then
    re-normalized for SGC/GCN or consumed as-is by binary-adjacency models.
    """
    if pert.normalized_domain:
        base = operator_for(checkpoint, graph)
        return build_perturbed_adjacency(np.asarray(base), pert)
    a_p = build_perturbed_adjacency(np.asarray(graph.adjacency()), pert)
    if checkpoint.uses_edge_weights:
        return symmetric_normalize(a_p, checkpoint.self_loop_flag)
    return a_p


def _padded_features(graph: Graph, n_v: int) -> np.ndarray:
    return np.vstack([graph.features,
                      np.zeros((n_v, graph.feature_dim))])


def run_node_attack(g: Graph, model: ModelCheckpoint, cfg: AttackConfig,
                    split: Split,
                    manifest: DatasetManifest | None = None) -> AttackReport:
    """Single-large-graph attack with the floor(rN) node budget.

    Observes clean logits (or log-probabilities), builds the perturbation,
    inserts the virtual-node block with zero features, re-runs the forward
    pass, and scores accuracy and macro-F1 on the test split.  A budget of
    zero, or a degenerate embedding, is recorded as a zero perturbation
    with identical clean/attacked metrics.
    """
    if model.task != "node-classification":
        raise ValueError("run_node_attack needs a node-classification checkpoint")
    if g.node_labels is None:
        raise ValueError("graph has no node labels")
    _check_variant_compat(model, cfg)
    t0 = time.perf_counter()

    operator = operator_for(model, g)
    x = g.features
    z_clean = embed(model, operator, x)
    labels = g.node_labels
    test = split.test
    clean_pred = np.argmax(z_clean[test], axis=1)
    clean = {
        "accuracy": accuracy(clean_pred, labels[test]),
        "macro_f1": macro_f1(clean_pred, labels[test], model.num_classes),
    }

    observed = z_clean if cfg.observe == "logits" else log_softmax(z_clean)
    budget = atk.budget_node_task(g.num_nodes, g.average_degree(), cfg.r)
    pert, converged = _build_perturbation(model, g, observed, budget, cfg,
                                          cfg.seed)

    if pert is None:
        attacked = dict(clean)
        efficacy = 0.0
        realized = 0.0
    else:
        op_p = perturbed_operator(model, g, pert)
        x_p = _padded_features(g, pert.n_v)
        z_full = embed(model, op_p, x_p)
        z_att = real_node_rows(z_full, g.num_nodes)
        att_pred = np.argmax(z_att[test], axis=1)
        attacked = {
            "accuracy": accuracy(att_pred, labels[test]),
            "macro_f1": macro_f1(att_pred, labels[test], model.num_classes),
        }
        efficacy = attack_efficacy(z_clean, z_att)
        realized = pert.realized_budget()

    return AttackReport(
        task=model.task,
        architecture=model.architecture,
        variant=cfg.variant,
        r=cfg.r,
        n_v=budget.n_v,
        delta_requested=budget.delta,
        delta_realized=realized,
        clean_metrics=clean,
        attacked_metrics=attacked,
        metric_drops=_drops(clean, attacked),
        efficacy=efficacy,
        seeds=[cfg.seed],
        observe=cfg.observe,
        normalized_domain=cfg.normalized_domain,
        eigensolver_converged=converged,
        manifest_hash=manifest.canonical_hash() if manifest else None,
        timing_seconds=time.perf_counter() - t0,
    )


def run_graph_attack(dataset: list[Graph], model: ModelCheckpoint,
                     cfg: AttackConfig,
                     manifest: DatasetManifest | None = None) -> AttackReport:
    """Per-graph attack over a test set with delta_i = floor(r |E_i|).

    The attacker observes pre-pooling embeddings of each graph; the full
    model (pooling included) is then re-evaluated on the perturbed graph.
    Zero-edge graphs get a zero budget and are recorded as no-op attacks.
    Per-graph seeds derive from the root seed XOR the graph index.
    """
    if model.task == "node-classification":
        raise ValueError("run_graph_attack needs a graph-level checkpoint")
    if not dataset:
        raise ValueError("test set is empty")
    _check_variant_compat(model, cfg)
    t0 = time.perf_counter()

    clean_out, att_out = [], []
    targets = []
    efficacies, deltas_req, deltas_real = [], [], []
    converged_all = True
    for idx, g in enumerate(dataset):
        if g.graph_target is None:
            raise ValueError(f"graph {idx} has no target")
        targets.append(g.graph_target)
        operator = operator_for(model, g)
        z = embed(model, operator, g.features)
        clean_out.append(graph_head(model, z))

        delta = atk.budget_graph_task(g.num_edges, cfg.r)
        budget = Budget(n_v=cfg.n_v, delta=delta)
        deltas_req.append(delta)
        pert, converged = _build_perturbation(model, g, z, budget, cfg,
                                              atk.per_graph_seed(cfg.seed, idx))
        converged_all = converged_all and converged
        if pert is None:
            att_out.append(clean_out[-1])
            efficacies.append(0.0)
            deltas_real.append(0.0)
            continue
        op_p = perturbed_operator(model, g, pert)
        x_p = _padded_features(g, pert.n_v)
        z_full = embed(model, op_p, x_p)
        att_out.append(graph_head(model, z_full))
        efficacies.append(attack_efficacy(z, real_node_rows(z_full, g.num_nodes)))
        deltas_real.append(pert.realized_budget())

    targets = np.asarray(targets)
    if model.task == "graph-classification":
        clean_pred = np.array([int(np.argmax(o)) for o in clean_out])
        att_pred = np.array([int(np.argmax(o)) for o in att_out])
        true = targets.astype(int)
        clean = {"accuracy": accuracy(clean_pred, true),
                 "macro_f1": macro_f1(clean_pred, true, model.num_classes)}
        attacked = {"accuracy": accuracy(att_pred, true),
                    "macro_f1": macro_f1(att_pred, true, model.num_classes)}
    else:
        clean_pred = np.array([float(o[0]) for o in clean_out])
        att_pred = np.array([float(o[0]) for o in att_out])
        clean = {"rmse": rmse(clean_pred, targets), "mae": mae(clean_pred, targets)}
        attacked = {"rmse": rmse(att_pred, targets), "mae": mae(att_pred, targets)}

    return AttackReport(
        task=model.task,
        architecture=model.architecture,
        variant=cfg.variant,
        r=cfg.r,
        n_v=cfg.n_v,
        delta_requested=float(np.mean(deltas_req)),
        delta_realized=float(np.mean(deltas_real)),
        clean_metrics=clean,
        attacked_metrics=attacked,
        metric_drops=_drops(clean, attacked),
        efficacy=float(np.mean(efficacies)),
        seeds=[cfg.seed],
        observe=cfg.observe,
        normalized_domain=cfg.normalized_domain,
        eigensolver_converged=converged_all,
        manifest_hash=manifest.canonical_hash() if manifest else None,
        timing_seconds=time.perf_counter() - t0,
    )
