"""Minimal trainer: manual reverse-mode gradients, Adam, early stopping.

Node classification trains full-batch with a fixed learning rate; graph
tasks train on mini-batches of graphs with plateau learning-rate reduction
(factor 0.9, floor 1e-4) on the validation metric.  The checkpoint with the
best validation metric is returned.  Everything is deterministic under the
config seed: gradient accumulation folds over graphs in batch order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_io import Split
from .evaluation import accuracy, macro_f1, rmse
from .graph import Graph
from .models import (ModelCheckpoint, backward_weights, embed,
                     forward_with_cache, graph_head, operator_for,
                     _pool_backward, _pool_cached)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the epoch and value for diagnosis."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 1000
    patience: int = 100
    plateau_factor: float = 0.9
    plateau_patience: int = 20
    min_learning_rate: float = 1e-4
    batch_size: int = 32
    seed: int = 0


@dataclass
class NodeTaskData:
    graph: Graph
    split: Split


@dataclass
class GraphTaskData:
    graphs: list[Graph]
    split: Split


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    history: list[dict]
    best_epoch: int
    best_metric: float


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over rows and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    probs = softmax(logits)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def mean_squared_error(pred: np.ndarray, targets: np.ndarray):
    diff = pred - targets
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / pred.shape[0]


class Adam:
    """Standard Adam with bias correction; the learning rate is per-step."""

    def __init__(self, weights: dict[str, np.ndarray],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}
        self.t = 0

    def step(self, weights: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / (1 - self.beta1 ** self.t)
            vhat = self.v[name] / (1 - self.beta2 ** self.t)
            weights[name] = weights[name] - lr * mhat / (np.sqrt(vhat) + self.eps)


def node_loss_and_grads(checkpoint: ModelCheckpoint, operator, x,
                        labels: np.ndarray, idx: np.ndarray):
    """Cross-entropy over the given node indices and all weight gradients."""
    z, cache = forward_with_cache(checkpoint, operator, x)
    loss, dmasked = cross_entropy(z[idx], labels[idx])
    dz = np.zeros_like(z)
    dz[idx] = dmasked
    return loss, backward_weights(checkpoint, cache, dz)


def graph_loss_and_grads(checkpoint: ModelCheckpoint, items, targets):
    """Batch loss over graphs and summed gradients, folded in batch order.

    ``items`` is a list of (operator, features) pairs; targets are class
    ids (graph classification) or scalars (regression).
    """
    w = checkpoint.weights
    outs, conv_caches, pool_caches = [], [], []
    for operator, x in items:
        z, cache = forward_with_cache(checkpoint, operator, x)
        out, pcache = _pool_cached(z, w["wr1"], w["wr2"])
        outs.append(out)
        conv_caches.append(cache)
        pool_caches.append(pcache)
    stacked = np.vstack(outs)
    if checkpoint.task == "graph-classification":
        loss, dout = cross_entropy(stacked, np.asarray(targets, dtype=int))
    else:
        loss, dpred = mean_squared_error(stacked[:, 0],
                                         np.asarray(targets, dtype=float))
        dout = dpred[:, None]
    grads = {name: np.zeros_like(mat) for name, mat in w.items()}
    for i in range(len(items)):
        dz, pool_grads = _pool_backward(pool_caches[i], dout[i])
        for name, g in pool_grads.items():
            grads[name] += g
        for name, g in backward_weights(checkpoint, conv_caches[i], dz).items():
            grads[name] += g
    return loss, grads


def _validation_metric(checkpoint: ModelCheckpoint, data, val_idx) -> float:
    if checkpoint.task == "node-classification":
        operator, x, labels = data
        z = embed(checkpoint, operator, x)
        pred = np.argmax(z[val_idx], axis=1)
        return accuracy(pred, labels[val_idx])
    items, targets = data
    outs = []
    for i in val_idx:
        operator, x = items[i]
        z = embed(checkpoint, operator, x)
        outs.append(graph_head(checkpoint, z))
    if checkpoint.task == "graph-classification":
        pred = np.array([int(np.argmax(o)) for o in outs])
        true = np.asarray([targets[i] for i in val_idx], dtype=int)
        return macro_f1(pred, true, checkpoint.num_classes)
    pred = np.array([float(o[0]) for o in outs])
    true = np.asarray([targets[i] for i in val_idx], dtype=float)
    return rmse(pred, true)


def train(model: ModelCheckpoint, data, config: TrainConfig) -> TrainResult:
    """Train a checkpoint; returns the best-validation-metric snapshot.

    ``data`` is :class:`NodeTaskData` or :class:`GraphTaskData` matching the
    checkpoint's task.  Raises :class:`TrainingDivergedError` on a
    non-finite loss and ValueError on an empty split.
    """
    ckpt = model.copy()
    node_task = ckpt.task == "node-classification"
    if node_task:
        if not isinstance(data, NodeTaskData):
            raise ValueError("node-classification training needs NodeTaskData")
        split = data.split
        operator = operator_for(ckpt, data.graph)
        x = data.graph.features
        labels = data.graph.node_labels
        if labels is None:
            raise ValueError("training graph has no node labels")
        val_data = (operator, x, labels)
    else:
        if not isinstance(data, GraphTaskData):
            raise ValueError("graph-task training needs GraphTaskData")
        split = data.split
        items = [(operator_for(ckpt, g), g.features) for g in data.graphs]
        targets = [g.graph_target for g in data.graphs]
        if any(t is None for t in targets):
            raise ValueError("every training graph needs a target")
        val_data = (items, targets)
    if len(split.train) == 0 or len(split.val) == 0:
        raise ValueError("train and validation splits must be non-empty")

    greater_is_better = ckpt.task != "graph-regression"
    use_plateau = not node_task
    rng = np.random.default_rng(config.seed)
    adam = Adam(ckpt.weights)
    lr = config.learning_rate

    best_metric = -np.inf if greater_is_better else np.inf
    best_weights = {k: v.copy() for k, v in ckpt.weights.items()}
    best_epoch = 0
    since_improve = 0
    plateau_wait = 0
    history = []

    for epoch in range(1, config.max_epochs + 1):
        if node_task:
            loss, grads = node_loss_and_grads(ckpt, operator, x, labels,
                                              split.train)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}")
            adam.step(ckpt.weights, grads, lr)
            epoch_loss = loss
        else:
            perm = rng.permutation(split.train)
            losses = []
            for start in range(0, len(perm), config.batch_size):
                batch = perm[start:start + config.batch_size]
                loss, grads = graph_loss_and_grads(
                    ckpt, [items[i] for i in batch],
                    [targets[i] for i in batch])
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss {loss} at epoch {epoch}")
                adam.step(ckpt.weights, grads, lr)
                losses.append(loss)
            epoch_loss = float(np.mean(losses))

        metric = _validation_metric(ckpt, val_data, split.val)
        improved = (metric > best_metric if greater_is_better
                    else metric < best_metric)
        if improved:
            best_metric = metric
            best_weights = {k: v.copy() for k, v in ckpt.weights.items()}
            best_epoch = epoch
            since_improve = 0
            plateau_wait = 0
        else:
            since_improve += 1
            plateau_wait += 1
        if use_plateau and plateau_wait >= config.plateau_patience:
            lr = max(lr * config.plateau_factor, config.min_learning_rate)
            plateau_wait = 0
        history.append({"epoch": epoch, "loss": epoch_loss,
                        "val_metric": metric, "lr": lr})
        if since_improve >= config.patience:
            break

    best = ckpt.copy()
    best.weights = best_weights
    best.validate()
    return TrainResult(checkpoint=best, history=history,
                       best_epoch=best_epoch, best_metric=best_metric)
