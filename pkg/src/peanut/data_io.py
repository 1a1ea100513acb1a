"""Dataset ingestion, synthetic generators, and checkpoint persistence.

Graph JSON schema::

    {"num_nodes": 3,
     "edges": [[0, 1, 1.0], [1, 2, 0.5]],
     "features": [[...], [...], [...]],
     "labels": [0, 1, 0],          # optional, node tasks
     "target": 3.0}                # optional, graph tasks

Files may hold one graph object or a list of them.  Serialization is
canonical (sorted keys, no whitespace) so saving a loaded canonical file
reproduces it byte for byte.  Checkpoint weights are stored as 17-digit
decimal strings, which round-trip 64-bit floats exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .models import ModelCheckpoint

TARGET_FUNCTIONS = ("node-count", "edge-count", "triangle-count")


class DataFormatError(ValueError):
    """A file or payload violated the expected format.

    ``code`` identifies the failure class: malformed-json, asymmetric-weights,
    feature-shape, bad-edge, bad-field, unknown-architecture, shape-chain,
    missing-weight.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class DatasetManifest:
    """Provenance record for a dataset, hashed into every attack report."""

    name: str
    task: str
    graphs: int
    feature_dim: int
    classes: int | None
    source: str
    split_seed: int

    def canonical_hash(self) -> str:
        payload = json.dumps(
            {
                "name": self.name,
                "task": self.task,
                "graphs": self.graphs,
                "feature_dim": self.feature_dim,
                "classes": self.classes,
                "source": self.source,
                "split_seed": self.split_seed,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class Split:
    """Seeded train/val/test index split over nodes or graphs."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int


def make_split(n_items: int, seed: int,
               fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)) -> Split:
    """Random disjoint split; the test part absorbs rounding remainders."""
    if n_items < 3:
        raise ValueError("need at least 3 items to split")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_items)
    n_train = max(int(fractions[0] * n_items), 1)
    n_val = max(int(fractions[1] * n_items), 1)
    if n_train + n_val >= n_items:
        raise ValueError("split leaves no test items")
    return Split(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train:n_train + n_val]),
        test=np.sort(perm[n_train + n_val:]),
        seed=seed,
    )


def make_folds(n_items: int, k: int, seed: int) -> list[Split]:
    """k cross-validation splits; fold i is the test set, fold i+1 the val set."""
    if k < 3 or n_items < k:
        raise ValueError("need k >= 3 and at least k items")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_items)
    folds = np.array_split(perm, k)
    splits = []
    for i in range(k):
        test = folds[i]
        val = folds[(i + 1) % k]
        train = np.concatenate([folds[j] for j in range(k)
                                if j != i and j != (i + 1) % k])
        splits.append(Split(np.sort(train), np.sort(val), np.sort(test), seed))
    return splits


# ---------------------------------------------------------------------------
# Graph JSON
# ---------------------------------------------------------------------------

def _graph_from_payload(obj) -> Graph:
    if not isinstance(obj, dict):
        raise DataFormatError("bad-field", "graph payload must be an object")
    try:
        num_nodes = int(obj["num_nodes"])
        raw_edges = obj.get("edges", [])
        features = obj["features"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError("bad-field", f"missing or bad field: {exc}")

    seen: dict[tuple[int, int], float] = {}
    for item in raw_edges:
        if len(item) == 2:
            i, j = item
            w = 1.0
        elif len(item) == 3:
            i, j, w = item
        else:
            raise DataFormatError("bad-edge", f"edge {item!r} is not [i, j, w]")
        i, j, w = int(i), int(j), float(w)
        if i == j:
            raise DataFormatError("bad-edge", f"self-loop on node {i}")
        if w < 0:
            raise DataFormatError("bad-edge", f"negative weight on ({i}, {j})")
        if not (0 <= i < num_nodes and 0 <= j < num_nodes):
            raise DataFormatError("bad-edge", f"edge ({i}, {j}) out of range")
        key = (min(i, j), max(i, j))
        if key in seen and seen[key] != w:
            raise DataFormatError(
                "asymmetric-weights",
                f"edge {key} declared with weights {seen[key]} and {w}",
            )
        seen[key] = w

    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] != num_nodes:
        raise DataFormatError(
            "feature-shape",
            f"features must be {num_nodes} rows, got shape {features.shape}",
        )
    labels = obj.get("labels")
    target = obj.get("target")
    return Graph(
        num_nodes=num_nodes,
        edges=tuple((i, j, w) for (i, j), w in sorted(seen.items())),
        features=features,
        node_labels=None if labels is None else np.asarray(labels, dtype=int),
        graph_target=None if target is None else float(target),
    )


def load_graph_json(path):
    """Load one Graph, or a list for files holding an array of graphs."""
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError("malformed-json", f"{path}: {exc}")
    if isinstance(obj, list):
        return [_graph_from_payload(item) for item in obj]
    return _graph_from_payload(obj)


def _graph_payload(g: Graph) -> dict:
    payload = {
        "num_nodes": g.num_nodes,
        "edges": [[i, j, w] for i, j, w in g.edges],
        "features": [[float(v) for v in row] for row in g.features],
    }
    if g.node_labels is not None:
        payload["labels"] = [int(v) for v in g.node_labels]
    if g.graph_target is not None:
        payload["target"] = float(g.graph_target)
    return payload


def save_graph_json(graph_or_list, path) -> None:
    """Write canonical graph JSON (sorted keys, compact separators)."""
    if isinstance(graph_or_list, Graph):
        payload = _graph_payload(graph_or_list)
    else:
        payload = [_graph_payload(g) for g in graph_or_list]
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

def generate_sbm(n: int, blocks: int, p_in: float, p_out: float,
                 feature_signal: float, seed: int) -> Graph:
    """Stochastic-block-model graph with noisy block-indicator features.

    Nodes split into near-equal blocks; an edge appears with probability
    p_in inside a block and p_out across blocks.  Features are the one-hot
    block indicator plus Gaussian noise of standard deviation
    1/feature_signal; labels are the block ids.
    """
    if not (0 <= p_out <= p_in <= 1):
        raise ValueError("need 0 <= p_out <= p_in <= 1")
    if feature_signal <= 0:
        raise ValueError("feature_signal must be positive")
    rng = np.random.default_rng(seed)
    labels = np.array([i % blocks for i in range(n)])
    labels.sort()
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    draw = rng.random((n, n))
    upper = np.triu(draw < prob, k=1)
    edges = [(int(i), int(j), 1.0) for i, j in np.argwhere(upper)]
    features = np.eye(blocks)[labels] + rng.standard_normal((n, blocks)) / feature_signal
    return Graph(num_nodes=n, edges=tuple(edges), features=features,
                 node_labels=labels)


def count_triangles(g: Graph) -> int:
    """Number of triangles, via trace(A^3)/6 on the binary adjacency."""
    a = (np.asarray(g.adjacency()) != 0).astype(float)
    return int(round(np.trace(a @ a @ a) / 6.0))


def generate_regression_graphs(count: int, size_range: tuple[int, int],
                               target_fn: str, seed: int,
                               edge_prob: float = 0.3,
                               expected_degree: float | None = None) -> list[Graph]:
    """Random graphs with a scalar target from a named graph statistic.

    Sizes are uniform over size_range.  By default edges are i.i.d. with
    edge_prob; with ``expected_degree`` set, each graph instead gets exactly
    round(expected_degree * n / 2) uniformly chosen edges, so edge counts
    are a deterministic function of size and degrees stay size-independent.
    Features are a constant-one column plus a uniform noise column, so
    sum-pooled models can read off size-like statistics.
    """
    if target_fn not in TARGET_FUNCTIONS:
        raise ValueError(
            f"target_fn must be one of {TARGET_FUNCTIONS}, got {target_fn!r}"
        )
    lo, hi = size_range
    if lo < 1 or hi < lo:
        raise ValueError("bad size_range")
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(count):
        n = int(rng.integers(lo, hi + 1))
        if expected_degree is None:
            draw = rng.random((n, n))
            upper = np.triu(draw < edge_prob, k=1)
            pairs = np.argwhere(upper)
        else:
            all_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
            m = min(int(round(expected_degree * n / 2)), len(all_pairs))
            picked = rng.choice(len(all_pairs), size=m, replace=False)
            pairs = [all_pairs[k] for k in sorted(picked)]
        edges = tuple((int(i), int(j), 1.0) for i, j in pairs)
        features = np.column_stack([np.ones(n), rng.random(n)])
        g = Graph(num_nodes=n, edges=edges, features=features)
        if target_fn == "node-count":
            target = float(n)
        elif target_fn == "edge-count":
            target = float(g.num_edges)
        else:
            target = float(count_triangles(g))
        graphs.append(Graph(num_nodes=n, edges=edges, features=features,
                            graph_target=target))
    return graphs


# ---------------------------------------------------------------------------
# Checkpoint persistence
# ---------------------------------------------------------------------------

def _encode_matrix(m: np.ndarray) -> dict:
    return {
        "shape": list(m.shape),
        "data": ["%.17g" % v for v in m.ravel()],
    }


def _decode_matrix(obj, name: str) -> np.ndarray:
    try:
        shape = tuple(obj["shape"])
        data = np.array([float(v) for v in obj["data"]])
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError("bad-field", f"weight {name!r} is malformed: {exc}")


def save_checkpoint(m: ModelCheckpoint, path) -> None:
    payload = {
        "architecture": m.architecture,
        "task": m.task,
        "hidden_dim": m.hidden_dim,
        "num_classes": m.num_classes,
        "self_loop_flag": m.self_loop_flag,
        "uses_edge_weights": m.uses_edge_weights,
        "weights": {name: _encode_matrix(m.weights[name])
                    for name in m.weight_names()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError("malformed-json", f"{path}: {exc}")
    try:
        architecture = obj["architecture"]
        task = obj["task"]
        hidden_dim = int(obj["hidden_dim"])
        num_classes = obj["num_classes"]
        weights_obj = obj["weights"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError("bad-field", f"missing or bad field: {exc}")
    from .models import ARCHITECTURES, CONV_WEIGHT_NAMES, READOUT_WEIGHT_NAMES
    if architecture not in ARCHITECTURES:
        raise DataFormatError(
            "unknown-architecture", f"unknown architecture {architecture!r}"
        )
    names = CONV_WEIGHT_NAMES[architecture]
    if task != "node-classification":
        names = names + READOUT_WEIGHT_NAMES
    weights = {}
    for name in names:
        if name not in weights_obj:
            raise DataFormatError("missing-weight", f"missing weight {name!r}")
        weights[name] = _decode_matrix(weights_obj[name], name)
    try:
        return ModelCheckpoint(
            architecture=architecture,
            task=task,
            weights=weights,
            hidden_dim=hidden_dim,
            num_classes=None if num_classes is None else int(num_classes),
            self_loop_flag=bool(obj.get("self_loop_flag", False)),
            uses_edge_weights=bool(obj.get("uses_edge_weights", True)),
        )
    except (ValueError, KeyError) as exc:
        raise DataFormatError("shape-chain", f"checkpoint is inconsistent: {exc}")
