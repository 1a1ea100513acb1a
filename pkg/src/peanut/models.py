"""Model zoo under attack: SGC, GCN, GIN-0, and mean-aggregator SAGE.

All networks are two graph-convolution layers with no biases.  SGC and GCN
consume the degree-normalized adjacency and honor edge weights; GIN and
SAGE aggregate over neighbors and only accept a binary adjacency.  Graph
tasks add sum-pooling followed by a Linear-ReLU-Linear readout.

Each forward has a cached twin plus a manual reverse-mode backward so the
trainer can compute exact gradients without an autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, normalized_adjacency

ARCHITECTURES = ("SGC", "GCN", "GIN", "SAGE")
TASKS = ("node-classification", "graph-classification", "graph-regression")

# Architectures whose aggregation treats the adjacency as a binary edge set.
BINARY_ADJACENCY_ARCHITECTURES = ("GIN", "SAGE")

CONV_WEIGHT_NAMES = {
    "SGC": ("theta",),
    "GCN": ("w1", "w2"),
    "GIN": ("w1", "w2", "w3", "w4"),
    "SAGE": ("w_self1", "w_nbr1", "w_self2", "w_nbr2"),
}
READOUT_WEIGHT_NAMES = ("wr1", "wr2")

DEFAULT_HIDDEN_NODE = 16
DEFAULT_HIDDEN_GRAPH = 64


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _require_binary(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.size and np.any((a != 0.0) & (a != 1.0)):
        raise ValueError(
            "adjacency must be binary for architectures that ignore edge weights"
        )
    return a


def _output_dim(task: str, num_classes: int | None, hidden_dim: int) -> int:
    if task == "node-classification":
        if num_classes is None:
            raise ValueError("node classification needs num_classes")
        return num_classes
    # Graph tasks keep hidden-width embeddings; the readout reduces them.
    return hidden_dim


def _readout_dim(task: str, num_classes: int | None) -> int:
    if task == "graph-classification":
        if num_classes is None:
            raise ValueError("graph classification needs num_classes")
        return num_classes
    return 1


def expected_shapes(architecture: str, task: str, feature_dim: int,
                    hidden_dim: int, num_classes: int | None) -> dict[str, tuple[int, int]]:
    """Weight-name -> shape map for a 2-layer network of the given kind."""
    h = hidden_dim
    out = _output_dim(task, num_classes, h)
    if architecture == "SGC":
        shapes = {"theta": (feature_dim, out)}
    elif architecture == "GCN":
        shapes = {"w1": (feature_dim, h), "w2": (h, out)}
    elif architecture == "GIN":
        shapes = {"w1": (feature_dim, h), "w2": (h, h),
                  "w3": (h, h), "w4": (h, out)}
    elif architecture == "SAGE":
        shapes = {"w_self1": (feature_dim, h), "w_nbr1": (feature_dim, h),
                  "w_self2": (h, out), "w_nbr2": (h, out)}
    else:
        raise ValueError(f"unknown architecture {architecture!r}")
    if task != "node-classification":
        shapes["wr1"] = (out, h)
        shapes["wr2"] = (h, _readout_dim(task, num_classes))
    return shapes


@dataclass
class ModelCheckpoint:
    """Architecture tag plus the ordered weight matrices of a trained model."""

    architecture: str
    task: str
    weights: dict[str, np.ndarray]
    hidden_dim: int
    num_classes: int | None = None
    self_loop_flag: bool = False
    uses_edge_weights: bool = field(default=True)

    def __post_init__(self):
        self.weights = {k: np.asarray(v, dtype=float)
                        for k, v in self.weights.items()}
        self.validate()

    @property
    def feature_dim(self) -> int:
        first = CONV_WEIGHT_NAMES[self.architecture][0]
        return self.weights[first].shape[0]

    def weight_names(self) -> tuple[str, ...]:
        names = CONV_WEIGHT_NAMES[self.architecture]
        if self.task != "node-classification":
            names = names + READOUT_WEIGHT_NAMES
        return names

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        binary = self.architecture in BINARY_ADJACENCY_ARCHITECTURES
        if self.uses_edge_weights == binary:
            raise ValueError(
                f"{self.architecture} must have uses_edge_weights={not binary}"
            )
        for name in self.weight_names():
            if name not in self.weights:
                raise KeyError(f"missing weight {name!r}")
        shapes = expected_shapes(self.architecture, self.task,
                                 self.feature_dim, self.hidden_dim,
                                 self.num_classes)
        for name, shape in shapes.items():
            got = self.weights[name].shape
            if got != shape:
                raise ValueError(
                    f"weight {name!r} has shape {got}, expected {shape}"
                )

    def copy(self) -> "ModelCheckpoint":
        return ModelCheckpoint(
            architecture=self.architecture,
            task=self.task,
            weights={k: v.copy() for k, v in self.weights.items()},
            hidden_dim=self.hidden_dim,
            num_classes=self.num_classes,
            self_loop_flag=self.self_loop_flag,
            uses_edge_weights=self.uses_edge_weights,
        )


def init_checkpoint(architecture: str, task: str, feature_dim: int,
                    hidden_dim: int | None = None,
                    num_classes: int | None = None,
                    seed: int = 0,
                    self_loop_flag: bool = False) -> ModelCheckpoint:
    """Fresh checkpoint with seeded uniform(+-sqrt(1/fan_in)) weights."""
    if hidden_dim is None:
        hidden_dim = (DEFAULT_HIDDEN_NODE if task == "node-classification"
                      else DEFAULT_HIDDEN_GRAPH)
    shapes = expected_shapes(architecture, task, feature_dim, hidden_dim,
                             num_classes)
    rng = np.random.default_rng(seed)
    weights = {}
    for name, (fan_in, fan_out) in shapes.items():
        bound = np.sqrt(1.0 / fan_in)
        weights[name] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    return ModelCheckpoint(
        architecture=architecture,
        task=task,
        weights=weights,
        hidden_dim=hidden_dim,
        num_classes=num_classes,
        self_loop_flag=self_loop_flag,
        uses_edge_weights=architecture not in BINARY_ADJACENCY_ARCHITECTURES,
    )


# ---------------------------------------------------------------------------
# Forward passes (spec surfaces) and their cached/backward twins.
# ---------------------------------------------------------------------------

def sgc_forward(s, x, theta) -> np.ndarray:
    """Z = S S X Theta, evaluated right-to-left so S^2 is never formed."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x.shape[1] != theta.shape[0]:
        raise ValueError("feature/theta shapes do not chain")
    return s @ (s @ (x @ theta))


def _sgc_cached(s, x, theta):
    z = sgc_forward(s, x, theta)
    return z, {"s": s, "x": x}


def _sgc_backward(cache, dz):
    s, x = cache["s"], cache["x"]
    return {"theta": x.T @ (s @ (s @ dz))}


def gcn_forward(s, x, w1, w2) -> np.ndarray:
    """Z = S ReLU(S X W1) W2, no biases."""
    z, _ = _gcn_cached(s, x, w1, w2)
    return z


def _gcn_cached(s, x, w1, w2):
    x = np.asarray(x, dtype=float)
    if x.shape[1] != np.asarray(w1).shape[0]:
        raise ValueError("feature/W1 shapes do not chain")
    h1 = s @ (x @ w1)
    a1 = relu(h1)
    z = s @ (a1 @ w2)
    return z, {"s": s, "x": x, "h1": h1, "a1": a1, "w2": w2}


def _gcn_backward(cache, dz):
    s, x, h1, a1, w2 = (cache["s"], cache["x"], cache["h1"], cache["a1"],
                        cache["w2"])
    s_dz = s @ dz
    dw2 = a1.T @ s_dz
    dh1 = (s_dz @ w2.T) * (h1 > 0)
    dw1 = x.T @ (s @ dh1)
    return {"w1": dw1, "w2": dw2}


def gin_forward(a, x, w1, w2, w3, w4) -> np.ndarray:
    """GIN-0 with Linear-ReLU-Linear internal networks and no biases.

    With A_hat = I + A:  Z = ReLU(A_hat ReLU(A_hat X W1) W2 W3) W4.
    Rejects non-binary adjacencies: this architecture ignores edge weights.
    """
    z, _ = _gin_cached(a, x, w1, w2, w3, w4)
    return z


def _hat(a, m):
    return m + a @ m


def _gin_cached(a, x, w1, w2, w3, w4):
    a = _require_binary(a)
    x = np.asarray(x, dtype=float)
    if x.shape[1] != np.asarray(w1).shape[0]:
        raise ValueError("feature/W1 shapes do not chain")
    hx = _hat(a, x)
    p1 = hx @ w1
    q1 = relu(p1)
    r1 = q1 @ w2
    hr1 = _hat(a, r1)
    p2 = hr1 @ w3
    q2 = relu(p2)
    z = q2 @ w4
    return z, {"a": a, "hx": hx, "p1": p1, "q1": q1, "hr1": hr1,
               "p2": p2, "q2": q2, "w2": w2, "w3": w3, "w4": w4}


def _gin_backward(cache, dz):
    a = cache["a"]
    dw4 = cache["q2"].T @ dz
    dq2 = dz @ cache["w4"].T
    dp2 = dq2 * (cache["p2"] > 0)
    dw3 = cache["hr1"].T @ dp2
    dhr1 = dp2 @ cache["w3"].T
    dr1 = _hat(a, dhr1)
    dw2 = cache["q1"].T @ dr1
    dq1 = dr1 @ cache["w2"].T
    dp1 = dq1 * (cache["p1"] > 0)
    dw1 = cache["hx"].T @ dp1
    return {"w1": dw1, "w2": dw2, "w3": dw3, "w4": dw4}


def sage_forward(a, x, w_self1, w_nbr1, w_self2, w_nbr2) -> np.ndarray:
    """Mean-aggregator SAGE: h' = ReLU(h W_self + mean_nbr(h) W_nbr).

    The final layer has no activation; isolated nodes use a zero neighbor
    mean.  Rejects non-binary adjacencies.
    """
    z, _ = _sage_cached(a, x, w_self1, w_nbr1, w_self2, w_nbr2)
    return z


def _sage_cached(a, x, w_self1, w_nbr1, w_self2, w_nbr2):
    a = _require_binary(a)
    x = np.asarray(x, dtype=float)
    if x.shape[1] != np.asarray(w_self1).shape[0]:
        raise ValueError("feature/W_self1 shapes do not chain")
    deg = a.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
    nbr1 = (a @ x) * inv[:, None]
    h1pre = x @ w_self1 + nbr1 @ w_nbr1
    h1 = relu(h1pre)
    nbr2 = (a @ h1) * inv[:, None]
    z = h1 @ w_self2 + nbr2 @ w_nbr2
    return z, {"a": a, "x": x, "inv": inv, "nbr1": nbr1, "h1pre": h1pre,
               "h1": h1, "nbr2": nbr2, "w_self2": w_self2, "w_nbr2": w_nbr2}


def _sage_backward(cache, dz):
    a, inv = cache["a"], cache["inv"]
    dw_self2 = cache["h1"].T @ dz
    dw_nbr2 = cache["nbr2"].T @ dz
    # P = diag(inv) A; A is symmetric so P^T v = A (inv * v).
    dh1 = dz @ cache["w_self2"].T + a @ (inv[:, None] * (dz @ cache["w_nbr2"].T))
    dh1pre = dh1 * (cache["h1pre"] > 0)
    dw_self1 = cache["x"].T @ dh1pre
    dw_nbr1 = cache["nbr1"].T @ dh1pre
    return {"w_self1": dw_self1, "w_nbr1": dw_nbr1,
            "w_self2": dw_self2, "w_nbr2": dw_nbr2}


def pool_and_readout(z, wr1, wr2) -> np.ndarray:
    """Sum-pool node embeddings, then a Linear-ReLU-Linear readout."""
    out, _ = _pool_cached(z, wr1, wr2)
    return out


def _pool_cached(z, wr1, wr2):
    z = np.asarray(z, dtype=float)
    if z.shape[1] != np.asarray(wr1).shape[0]:
        raise ValueError("embedding/readout shapes do not chain")
    pooled = z.sum(axis=0)
    hpre = pooled @ wr1
    h = relu(hpre)
    out = h @ wr2
    return out, {"num_rows": z.shape[0], "pooled": pooled, "hpre": hpre,
                 "h": h, "wr1": wr1, "wr2": wr2}


def _pool_backward(cache, dout):
    dwr2 = np.outer(cache["h"], dout)
    dh = cache["wr2"] @ dout
    dhpre = dh * (cache["hpre"] > 0)
    dwr1 = np.outer(cache["pooled"], dhpre)
    dpooled = cache["wr1"] @ dhpre
    dz = np.broadcast_to(dpooled, (cache["num_rows"], dpooled.shape[0])).copy()
    return dz, {"wr1": dwr1, "wr2": dwr2}


_FORWARD_CACHED = {
    "SGC": _sgc_cached,
    "GCN": _gcn_cached,
    "GIN": _gin_cached,
    "SAGE": _sage_cached,
}
_BACKWARD = {
    "SGC": _sgc_backward,
    "GCN": _gcn_backward,
    "GIN": _gin_backward,
    "SAGE": _sage_backward,
}


def forward_with_cache(checkpoint: ModelCheckpoint, operator, x):
    """Node embeddings plus the cache needed for the backward pass."""
    w = checkpoint.weights
    args = [w[name] for name in CONV_WEIGHT_NAMES[checkpoint.architecture]]
    return _FORWARD_CACHED[checkpoint.architecture](operator, x, *args)


def backward_weights(checkpoint: ModelCheckpoint, cache, dz):
    """Gradients of the convolution weights given dLoss/dZ."""
    return _BACKWARD[checkpoint.architecture](cache, dz)


def embed(checkpoint: ModelCheckpoint, operator, x) -> np.ndarray:
    """Node embeddings: logits for node tasks, pre-pooling rows otherwise."""
    z, _ = forward_with_cache(checkpoint, operator, x)
    return z


def graph_head(checkpoint: ModelCheckpoint, z) -> np.ndarray:
    """Pooled readout output for graph-level checkpoints."""
    if checkpoint.task == "node-classification":
        raise ValueError("node-classification checkpoints have no readout")
    w = checkpoint.weights
    return pool_and_readout(z, w["wr1"], w["wr2"])


def operator_for(checkpoint: ModelCheckpoint, graph: Graph):
    """Propagation operator a checkpoint consumes for a given graph.

    Normalized adjacency (honoring the self-loop flag) for SGC/GCN; the raw
    binary adjacency for GIN/SAGE.
    """
    if checkpoint.uses_edge_weights:
        return normalized_adjacency(graph, checkpoint.self_loop_flag)
    return _require_binary(graph.adjacency())
