"""Self-contained oracle suites behind the ``verify`` command.

Each suite checks an analytic property of the attack or model code against
an independent route: a dense symmetric eigendecomposition, central finite
differences, brute-force feasible rivals, or closed-form identities.  All
instances are seeded, so a suite either always passes or always fails on a
given platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import attack as atk
from .attack import Budget
from .evaluation import attack_efficacy
from .graph import (Graph, build_perturbed_adjacency, real_node_rows,
                    symmetric_normalize)
from .linalg import dominant_eigenvector_gram, frobenius_norm
from .models import ARCHITECTURES, TASKS, init_checkpoint
from .training import graph_loss_and_grads, node_loss_and_grads

LEMMA1_REL_TOL = 1e-8
CLOSED_FORM_REL_TOL = 1e-8
EIGEN_COS_TOL = 1e-8
EIGEN_VALUE_REL_TOL = 1e-8
GRADIENT_REL_TOL = 1e-5
FD_STEP = 1e-5

TABLE_BUDGET_CASES = (
    # (nodes, avg degree, ratio) -> expected (n_v, delta) for two published
    # citation benchmarks at a 1% budget.
    ("cora", 2708, 4.90, 0.01, 27, 132),
    ("citeseer", 3327, 3.74, 0.01, 33, 124),
)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    stats: dict = field(default_factory=dict)
    detail: str = ""

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail}"


def _rel_err(a: float, b: float) -> float:
    denom = max(abs(a), abs(b), 1e-300)
    return abs(a - b) / denom


def dense_dominant_eigenpair(gram: np.ndarray):
    """Oracle eigenpair from a full symmetric eigendecomposition."""
    vals, vecs = np.linalg.eigh(gram)
    idx = int(np.argmax(vals))
    return float(vals[idx]), vecs[:, idx]


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def suite_budget(inject_fault: bool = False) -> SuiteResult:
    """Budget arithmetic reproduces the published (n_v, delta) pairs."""
    failures = []
    for name, n, deg, r, exp_nv, exp_delta in TABLE_BUDGET_CASES:
        budget = atk.budget_node_task(n, deg, r)
        got = (budget.n_v, int(budget.delta))
        want = (exp_nv, exp_delta + (1 if inject_fault else 0))
        if got != want:
            failures.append(f"{name}: got {got}, expected {want}")
    return SuiteResult(
        name="budget",
        passed=not failures,
        stats={"cases": len(TABLE_BUDGET_CASES), "failures": len(failures)},
        detail="; ".join(failures) if failures else
               f"{len(TABLE_BUDGET_CASES)} published budget pairs reproduced",
    )


def suite_lemma1(instances: int = 100, rivals: int = 1000,
                 base_seed: int = 1234,
                 inject_fault: bool = False) -> SuiteResult:
    """Rank-one optimality: efficacy equals delta^2 lambda1 and beats rivals.

    For seeded random embeddings (N <= 20, d <= 5) and budgets in
    {0.5, 1, 3}, the unconstrained continuous perturbation must attain
    ||B B^T Z||_F^2 = delta^2 lambda1(Z Z^T) within 1e-8 relative, and
    dominate ``rivals`` random feasible perturbations rescaled to the same
    ||B B^T||_F budget.
    """
    deltas = (0.5, 1.0, 3.0)
    max_rel = 0.0
    dominance_violations = 0
    for i in range(instances):
        rng = np.random.default_rng(base_seed + i)
        n = int(rng.integers(4, 21))
        d = int(rng.integers(1, 6))
        n_v = int(rng.integers(1, 5))
        z = rng.standard_normal((n, d))
        delta = deltas[i % len(deltas)]
        budget = Budget(n_v=n_v, delta=delta)
        raw = atk.peanut_core(z, budget, "uniform-random", seed=base_seed + i)
        pert = atk.apply_variant(raw, "PEANUT-U", budget)
        b = pert.connections
        eff = frobenius_norm(b @ b.T @ z) ** 2
        lam, _ = dense_dominant_eigenpair(z @ z.T)
        analytic = delta * delta * lam * (1.0 + (1e-4 if inject_fault else 0.0))
        max_rel = max(max_rel, _rel_err(eff, analytic))
        for _ in range(rivals):
            rb = rng.standard_normal((n, n_v))
            gram = rb @ rb.T
            norm = np.linalg.norm(gram)
            if norm == 0.0:
                continue
            scale = math.sqrt(delta / norm)
            rb = scale * rb
            rival_eff = frobenius_norm(rb @ rb.T @ z) ** 2
            if rival_eff > eff * (1.0 + LEMMA1_REL_TOL):
                dominance_violations += 1
    passed = max_rel <= LEMMA1_REL_TOL and dominance_violations == 0
    return SuiteResult(
        name="lemma1",
        passed=passed,
        stats={"instances": instances, "rivals": rivals,
               "max_rel_err": max_rel,
               "dominance_violations": dominance_violations},
        detail=(f"max rel err {max_rel:.2e} over {instances} instances, "
                f"{dominance_violations} dominance violations"),
    )


def _random_sgc_instance(rng: np.random.Generator):
    """Random normalized operator, features, and weights for one SGC."""
    n = int(rng.integers(6, 17))
    d_in = int(rng.integers(2, 6))
    d_out = int(rng.integers(1, 5))
    draw = rng.random((n, n))
    upper = np.triu(draw < 0.4, k=1)
    edges = tuple((int(i), int(j), 1.0) for i, j in np.argwhere(upper))
    g = Graph(num_nodes=n, edges=edges, features=rng.standard_normal((n, d_in)))
    s = symmetric_normalize(g.adjacency())
    theta = rng.standard_normal((d_in, d_out))
    return g, s, theta


def _closed_form_instances(instances: int, base_seed: int):
    for i in range(instances):
        rng = np.random.default_rng(base_seed + i)
        g, s, theta = _random_sgc_instance(rng)
        n_v = int(rng.integers(1, 5))
        delta = float(rng.uniform(0.5, 4.0))
        budget = Budget(n_v=n_v, delta=delta)
        z = s @ (s @ (g.features @ theta))
        if not np.any(z):
            continue
        variant = "PEANUT-U" if i % 2 == 0 else "PEANUT"
        raw = atk.peanut_core(z, budget, "uniform-random", seed=base_seed + i,
                              normalized_domain=True)
        pert = atk.apply_variant(raw, variant, budget)
        yield g, s, theta, z, pert, budget


def suite_closed_form(instances: int = 50, base_seed: int = 4321,
                      inject_fault: bool = False) -> SuiteResult:
    """With zero virtual features, ||Z_p - Z||_F^2 = ||S_v S_v^T X Theta||_F^2.

    Exercises the full insertion pipeline in the normalized domain against
    the direct closed-form evaluation.
    """
    max_rel = 0.0
    checked = 0
    for g, s, theta, z, pert, _ in _closed_form_instances(instances, base_seed):
        checked += 1
        s_p = build_perturbed_adjacency(s, pert)
        x_p = np.vstack([g.features, np.zeros((pert.n_v, g.feature_dim))])
        z_full = s_p @ (s_p @ (x_p @ theta))
        z_p = real_node_rows(z_full, g.num_nodes)
        lhs = attack_efficacy(z, z_p)
        sv = pert.connections
        rhs = frobenius_norm(sv @ sv.T @ (g.features @ theta)) ** 2
        if inject_fault:
            rhs *= 1.0 + 1e-4
        max_rel = max(max_rel, _rel_err(lhs, rhs))
    passed = checked > 0 and max_rel <= CLOSED_FORM_REL_TOL
    return SuiteResult(
        name="closed-form",
        passed=passed,
        stats={"instances": checked, "max_rel_err": max_rel},
        detail=f"max rel err {max_rel:.2e} over {checked} instances",
    )


def suite_cauchy_schwarz(instances: int = 50, base_seed: int = 4321,
                         inject_fault: bool = False) -> SuiteResult:
    """Submultiplicative bound ||S_v S_v^T Z|| <= ||S^2|| ||S_v S_v^T|| ||X Theta||."""
    violations = 0
    checked = 0
    min_slack = np.inf
    for g, s, theta, z, pert, _ in _closed_form_instances(instances, base_seed):
        checked += 1
        sv = pert.connections
        gram = sv @ sv.T
        lhs = frobenius_norm(gram @ z)
        bound = (frobenius_norm(s @ s) * frobenius_norm(gram)
                 * frobenius_norm(g.features @ theta))
        if inject_fault:
            lhs, bound = bound, lhs
        min_slack = min(min_slack, bound - lhs)
        if lhs > bound * (1.0 + 1e-12):
            violations += 1
    passed = checked > 0 and violations == 0
    return SuiteResult(
        name="cauchy-schwarz",
        passed=passed,
        stats={"instances": checked, "violations": violations,
               "min_slack": float(min_slack)},
        detail=f"{violations} violations over {checked} instances",
    )


def suite_eigensolver(instances: int = 100, base_seed: int = 777,
                      inject_fault: bool = False) -> SuiteResult:
    """Power iteration agrees with a dense eigendecomposition oracle."""
    min_cos = 1.0
    max_val_rel = 0.0
    for i in range(instances):
        rng = np.random.default_rng(base_seed + i)
        n = int(rng.integers(3, 31))
        d = int(rng.integers(1, 8))
        z = rng.standard_normal((n, d))
        result = dominant_eigenvector_gram(z, tol=1e-12, max_iter=20000)
        lam, vec = dense_dominant_eigenpair(z @ z.T)
        cos = abs(float(result.vector @ vec))
        min_cos = min(min_cos, cos)
        max_val_rel = max(max_val_rel, _rel_err(result.value, lam))
    if inject_fault:
        min_cos -= 1e-6
    passed = min_cos >= 1.0 - EIGEN_COS_TOL and max_val_rel <= EIGEN_VALUE_REL_TOL
    return SuiteResult(
        name="eigensolver",
        passed=passed,
        stats={"instances": instances, "min_cos": min_cos,
               "max_value_rel_err": max_val_rel},
        detail=(f"min |cos| {min_cos:.12f}, "
                f"max eigenvalue rel err {max_val_rel:.2e}"),
    )


def _gradcheck_instance(architecture: str, task: str, seed: int):
    """Small seeded instance plus a loss closure over the checkpoint."""
    rng = np.random.default_rng(seed)
    n, d_in, hidden, classes = 7, 4, 5, 3
    binary = architecture in ("GIN", "SAGE")
    ckpt = init_checkpoint(architecture, task, d_in, hidden_dim=hidden,
                           num_classes=classes if task != "graph-regression" else None,
                           seed=seed)

    def random_operator(nn):
        draw = rng.random((nn, nn))
        a = np.triu(draw < 0.5, k=1).astype(float)
        a = a + a.T
        if binary:
            return a
        return symmetric_normalize(a)

    if task == "node-classification":
        operator = random_operator(n)
        x = rng.standard_normal((n, d_in))
        labels = rng.integers(0, classes, size=n)
        idx = np.arange(n)

        def loss_and_grads(c):
            return node_loss_and_grads(c, operator, x, labels, idx)
    else:
        items = [(random_operator(int(rng.integers(4, 8))), None)
                 for _ in range(3)]
        items = [(op, rng.standard_normal((op.shape[0], d_in)))
                 for op, _ in items]
        if task == "graph-classification":
            targets = rng.integers(0, classes, size=len(items)).tolist()
        else:
            targets = rng.uniform(1.0, 5.0, size=len(items)).tolist()

        def loss_and_grads(c):
            return graph_loss_and_grads(c, items, targets)

    return ckpt, loss_and_grads


def finite_difference_gradient(loss_fn, checkpoint, name: str,
                               entry: tuple[int, int],
                               h: float = FD_STEP) -> float:
    """Central finite difference of the loss w.r.t. one weight entry."""
    w = checkpoint.weights[name]
    orig = w[entry]
    w[entry] = orig + h
    plus, _ = loss_fn(checkpoint)
    w[entry] = orig - h
    minus, _ = loss_fn(checkpoint)
    w[entry] = orig
    return (plus - minus) / (2.0 * h)


def suite_gradients(samples_per_weight: int = 20, base_seed: int = 20240,
                    inject_fault: bool = False) -> SuiteResult:
    """Analytic gradients match central finite differences everywhere.

    Every architecture/task pairing is checked on a seeded instance, with
    at least ``samples_per_weight`` entries (or all of them for small
    matrices) per trainable weight.
    """
    max_rel = 0.0
    worst = ""
    pair_count = 0
    for arch in ARCHITECTURES:
        for task in TASKS:
            pair_count += 1
            seed = base_seed + pair_count
            ckpt, loss_fn = _gradcheck_instance(arch, task, seed)
            _, grads = loss_fn(ckpt)
            rng = np.random.default_rng(seed + 999)
            for name, grad in grads.items():
                size = grad.size
                count = min(samples_per_weight, size)
                flat_choices = rng.choice(size, size=count, replace=False)
                for flat in flat_choices:
                    entry = np.unravel_index(flat, grad.shape)
                    fd = finite_difference_gradient(loss_fn, ckpt, name, entry)
                    analytic = float(grad[entry])
                    if inject_fault:
                        analytic += 1e-2
                    denom = max(abs(analytic), abs(fd))
                    if denom < 1e-8:
                        continue
                    rel = abs(analytic - fd) / denom
                    if rel > max_rel:
                        max_rel = rel
                        worst = f"{arch}/{task}/{name}{tuple(int(e) for e in entry)}"
    passed = max_rel <= GRADIENT_REL_TOL
    return SuiteResult(
        name="gradients",
        passed=passed,
        stats={"pairings": pair_count, "max_rel_err": max_rel, "worst": worst},
        detail=(f"max rel err {max_rel:.2e} over {pair_count} "
                f"architecture/task pairings (worst: {worst})"),
    )


def suite_discrete(instances: int = 60, base_seed: int = 9000,
                   inject_fault: bool = False) -> SuiteResult:
    """Discretized perturbations place exactly k edges per virtual node."""
    failures = 0
    for i in range(instances):
        rng = np.random.default_rng(base_seed + i)
        n = int(rng.integers(5, 30))
        n_v = int(rng.integers(1, 6))
        delta = float(rng.integers(0, n))
        if delta == 0:
            delta = 1.0
        budget = Budget(n_v=n_v, delta=delta)
        k = max(int(math.floor(delta / n_v + 0.5)), 1)
        if k > n:
            continue
        z = rng.standard_normal((n, 3))
        raw = atk.peanut_core(z, budget, "uniform-random", seed=i)
        variant = "PEANUT-D" if i % 2 == 0 else "RAND-D"
        if variant == "RAND-D":
            raw = atk.random_baseline(n, budget, seed=i)
        pert = atk.apply_variant(raw, variant, budget)
        cols = pert.connections.sum(axis=0)
        expected = k + (1 if inject_fault else 0)
        if np.any(cols != expected) or np.any(cols < 1):
            failures += 1
    return SuiteResult(
        name="discrete",
        passed=failures == 0,
        stats={"instances": instances, "failures": failures},
        detail=f"{failures} structure failures over {instances} instances",
    )


SUITES = {
    "budget": suite_budget,
    "lemma1": suite_lemma1,
    "closed-form": suite_closed_form,
    "cauchy-schwarz": suite_cauchy_schwarz,
    "eigensolver": suite_eigensolver,
    "gradients": suite_gradients,
    "discrete": suite_discrete,
}


def run_suites(names=None, inject_fault: bool = False) -> list[SuiteResult]:
    if names is None:
        names = list(SUITES)
    results = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
        results.append(SUITES[name](inject_fault=inject_fault))
    return results
