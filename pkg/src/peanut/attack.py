"""The PEANUT virtual-node attack family, budgets, and random baselines.

Variants
    PEANUT-W  white-box rank-one perturbation built from H = X Theta
    PEANUT    black-box, clipped non-negative
    PEANUT-U  black-box, unconstrained sign
    PEANUT-D  black-box, binarized top-k per virtual node
    RAND      random connections rescaled to the exact Frobenius budget
    RAND-D    random connections binarized with the same top-k rule

The continuous construction is sqrt(delta) * u1 v^T for the sign-aligned
dominant eigenvector u1 of the embedding Gram matrix and any unit-norm v;
it saturates ||S_v S_v^T||_F = delta and attains the constrained optimum
delta^2 * lambda1 of the rank-one objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import Perturbation, discrete_column_count
from .linalg import (DEFAULT_MAX_ITER, DEFAULT_TOL, EigenResult,
                     dominant_eigenvector_gram)

VARIANTS = ("PEANUT-W", "PEANUT", "PEANUT-U", "PEANUT-D", "RAND", "RAND-D")
DISCRETE_VARIANTS = ("PEANUT-D", "RAND-D")
V_MODES = ("uniform-random", "ones")


@dataclass(frozen=True)
class Budget:
    """Perturbation allowance: virtual-node count and Frobenius budget."""

    n_v: int
    delta: float

    def __post_init__(self):
        if self.n_v < 0:
            raise ValueError("n_v must be non-negative")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")


@dataclass
class AttackConfig:
    """Everything needed to reproduce one attack run."""

    variant: str
    r: float
    n_v: int = 0
    v_mode: str = "uniform-random"
    seed: int = 0
    normalized_domain: bool = False
    observe: str = "logits"  # node tasks: attack logits or log-probabilities
    eig_tol: float = DEFAULT_TOL
    eig_max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; choose one of {VARIANTS}"
            )
        if self.r < 0:
            raise ValueError("budget ratio r must be non-negative")
        if self.v_mode not in V_MODES:
            raise ValueError(f"v_mode must be one of {V_MODES}")
        if self.observe not in ("logits", "log-probs"):
            raise ValueError("observe must be 'logits' or 'log-probs'")


def budget_node_task(n: int, avg_degree: float, r: float) -> Budget:
    """Node-task budget: n_v = floor(r N), delta = floor(r N deg)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if avg_degree < 0 or r < 0:
        raise ValueError("avg_degree and r must be non-negative")
    return Budget(n_v=int(math.floor(r * n)),
                  delta=float(math.floor(r * n * avg_degree)))


def budget_graph_task(num_edges: int, r: float) -> float:
    """Per-graph budget delta = floor(r |E|); n_v is chosen independently."""
    if r < 0:
        raise ValueError("r must be non-negative")
    return float(math.floor(r * num_edges))


def sign_align(u: np.ndarray) -> np.ndarray:
    """Flip a unit vector so it has at least as many positive entries.

    u <- u * sign(sum(sign(u))), with the zero-sum tie mapped to +1 (no
    flip).  Norm and eigen-optimality are unchanged.
    """
    u = np.asarray(u, dtype=float)
    s = float(np.sign(np.sum(np.sign(u))))
    if s == 0.0:
        s = 1.0
    return u * s


def make_v(n_v: int, mode: str = "uniform-random", seed: int = 0) -> np.ndarray:
    """Unit-norm mixing vector with strictly positive entries.

    ones mode gives the constant vector 1/sqrt(n_v); uniform-random samples
    standard-uniform entries (resampling any exact zeros) before
    normalizing.  Positivity keeps clipping from zeroing extra entries of
    the rank-one product.
    """
    if n_v < 1:
        raise ValueError("n_v must be >= 1")
    if mode == "ones":
        return np.full(n_v, 1.0 / np.sqrt(n_v))
    if mode != "uniform-random":
        raise ValueError(f"v_mode must be one of {V_MODES}")
    rng = np.random.default_rng(seed)
    v = rng.uniform(size=n_v)
    while np.any(v == 0.0):
        v[v == 0.0] = rng.uniform(size=int(np.sum(v == 0.0)))
    return v / np.linalg.norm(v)


def peanut_core(z, budget: Budget, v_mode: str = "uniform-random",
                seed: int = 0, *, normalized_domain: bool = False,
                eig_tol: float = DEFAULT_TOL,
                eig_max_iter: int = DEFAULT_MAX_ITER,
                return_eigen: bool = False):
    """Continuous unclipped rank-one perturbation from embeddings z.

    Returns sqrt(delta) * sign_align(u1) v^T where u1 is the dominant
    eigenvector of z z^T.  The result saturates the Frobenius constraint:
    ||C C^T||_F = delta exactly up to floating error.

    With ``return_eigen`` the eigensolver result is returned alongside so
    callers can report non-convergence (the best iterate is still used).
    Raises DegenerateEmbeddingError for all-zero z.
    """
    if budget.delta <= 0:
        raise ValueError("peanut_core needs a positive budget delta")
    if budget.n_v < 1:
        raise ValueError("peanut_core needs at least one virtual node")
    eig = dominant_eigenvector_gram(z, eig_tol, eig_max_iter)
    u = sign_align(eig.vector)
    v = make_v(budget.n_v, v_mode, seed)
    connections = np.sqrt(budget.delta) * np.outer(u, v)
    pert = Perturbation(connections, budget.n_v, budget.delta,
                        is_discrete=False, normalized_domain=normalized_domain)
    if return_eigen:
        return pert, eig
    return pert


def attack_white_box_sgc(x, theta, budget: Budget,
                         v_mode: str = "uniform-random", seed: int = 0,
                         **kwargs):
    """White-box variant: rank-one perturbation from H = X Theta."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return peanut_core(x @ theta, budget, v_mode, seed, **kwargs)


def random_baseline(n: int, budget: Budget, seed: int = 0,
                    normalized_domain: bool = False) -> Perturbation:
    """Uniform-random connections rescaled so ||C C^T||_F = delta exactly."""
    if budget.delta == 0 or budget.n_v == 0:
        connections = np.zeros((n, budget.n_v))
    else:
        rng = np.random.default_rng(seed)
        raw = rng.uniform(size=(n, budget.n_v))
        while not np.any(raw):
            raw = rng.uniform(size=(n, budget.n_v))
        scale = np.sqrt(budget.delta / np.linalg.norm(raw @ raw.T))
        connections = scale * raw
    return Perturbation(connections, budget.n_v, budget.delta,
                        is_discrete=False, normalized_domain=normalized_domain)


def _top_k_binary(connections: np.ndarray, k: int) -> np.ndarray:
    """Per-column binary mask of the k largest entries, low index on ties."""
    n, n_v = connections.shape
    if k > n:
        raise ValueError(f"cannot place {k} edges per column on {n} nodes")
    out = np.zeros_like(connections)
    for col in range(n_v):
        order = np.argsort(-connections[:, col], kind="stable")
        out[order[:k], col] = 1.0
    return out


def apply_variant(raw: Perturbation, variant: str, budget: Budget) -> Perturbation:
    """Post-process a raw perturbation per the chosen variant.

    PEANUT-U / PEANUT-W / RAND keep the continuous matrix unchanged;
    PEANUT clips negatives to zero; the -D variants binarize to the top
    k = max(round(delta/n_v), 1) entries of each virtual node's column.
    """
    if variant not in VARIANTS:
        raise ValueError(
            f"unknown variant {variant!r}; choose one of {VARIANTS}"
        )
    if variant in ("PEANUT-U", "PEANUT-W", "RAND"):
        return raw
    if variant == "PEANUT":
        return Perturbation(np.maximum(raw.connections, 0.0), raw.n_v,
                            raw.budget, is_discrete=False,
                            normalized_domain=raw.normalized_domain)
    k = discrete_column_count(budget.delta, budget.n_v)
    return Perturbation(_top_k_binary(raw.connections, k), raw.n_v,
                        raw.budget, is_discrete=True,
                        normalized_domain=raw.normalized_domain)


def per_graph_seed(root_seed: int, graph_index: int) -> int:
    """Seed-splitting rule for batches of graphs: root seed XOR index."""
    return root_seed ^ graph_index
