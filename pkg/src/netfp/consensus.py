"""Communication graphs, consensus weight matrices and tracking recursions.

Edge convention: ``(i, k)`` in the edge set puts ``k`` in ``N_i``, the set
of players whose messages ``i`` reads in each exchange.  Every topology
used by the experiments is bidirectional, where the direction is moot.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from netfp.errors import ConstructionFailedError, InvalidArgumentError, NumericError

STOCH_TOL = 1e-12
TOPOLOGIES = ("complete", "line", "star", "ring")


def _strongly_connected(n, succ) -> bool:
    if n <= 1:
        return True

    def reach(adj):
        seen = {0}
        queue = deque([0])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return len(seen) == n

    pred = [[] for _ in range(n)]
    for v in range(n):
        for w in succ[v]:
            pred[w].append(v)
    return reach(succ) and reach(pred)


def reaches_deficit(matrix, tol=STOCH_TOL) -> bool:
    """Every row of a nonnegative matrix has a pattern path to a row summing below one.

    For a substochastic matrix this is equivalent to spectral radius < 1
    (a weakly chained substochastic matrix).
    """
    m = np.asarray(matrix)
    k = m.shape[0]
    good = set(np.flatnonzero(m.sum(axis=1) < 1.0 - tol).tolist())
    pred = [[] for _ in range(k)]
    for v in range(k):
        for w in np.flatnonzero(m[v]):
            pred[w].append(v)
    queue = deque(good)
    while queue:
        w = queue.popleft()
        for v in pred[w]:
            if v not in good:
                good.add(v)
                queue.append(v)
    return len(good) == k


def pattern_irreducible(matrix) -> bool:
    """Strong connectivity of the nonzero pattern (1x1 counts as irreducible)."""
    m = np.asarray(matrix)
    k = m.shape[0]
    return _strongly_connected(k, [list(np.flatnonzero(m[v])) for v in range(k)])


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Directed communication graph on players ``0..n-1``."""

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise InvalidArgumentError("graph needs at least one vertex")
        edges = frozenset((int(i), int(k)) for i, k in self.edges)
        for i, k in edges:
            if not (0 <= i < n and 0 <= k < n):
                raise InvalidArgumentError(f"edge ({i}, {k}) out of range for n={n}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", edges)
        succ = [[] for _ in range(n)]
        for i, k in edges:
            if i != k:
                succ[i].append(k)
        if not _strongly_connected(n, succ):
            raise InvalidArgumentError("communication graph is not strongly connected")

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Links between distinct players; the diagonal is always admissible, so self-loops are left off."""
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, k in self.edges:
            if i != k:
                adj[i, k] = True
        adj.setflags(write=False)
        return adj

    @property
    def self_loops(self) -> frozenset:
        return frozenset(i for i, k in self.edges if i == k)

    def neighbors(self, i) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.adjacency[i]))

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.adjacency, self.adjacency.T))

    def allowed(self) -> np.ndarray:
        """Pattern of admissible weights: neighbors plus the diagonal."""
        return self.adjacency | np.eye(self.n, dtype=bool)

    def to_edge_list(self) -> str:
        lines = [f"nodes {self.n}"]
        lines += [f"{i} {k}" for i, k in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text: str, n=None) -> "CommGraph":
        """Parse one ``i k`` edge per line; ``#`` starts a comment.

        An optional ``nodes N`` line fixes the vertex count; otherwise it is
        one more than the largest vertex id.
        """
        edges = []
        declared = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "nodes" and len(parts) == 2:
                declared = int(parts[1])
                continue
            if len(parts) != 2:
                raise InvalidArgumentError(f"line {lineno}: expected 'i k', got {raw!r}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise InvalidArgumentError(f"line {lineno}: non-integer vertex in {raw!r}") from None
        if n is None:
            n = declared if declared is not None else 1 + max((max(e) for e in edges), default=0)
        return cls(n, frozenset(edges))


def _bidirectional(n, pairs):
    return CommGraph(n, frozenset(pairs) | frozenset((k, i) for i, k in pairs))


def complete_graph(n) -> CommGraph:
    return CommGraph(n, frozenset((i, k) for i in range(n) for k in range(n) if i != k))


def line_graph(n) -> CommGraph:
    return _bidirectional(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(n) -> CommGraph:
    """Hub at vertex 0."""
    return _bidirectional(n, [(0, i) for i in range(1, n)])


def ring_graph(n) -> CommGraph:
    if n < 3:
        return line_graph(n)
    return _bidirectional(n, [(i, (i + 1) % n) for i in range(n)])


def make_topology(kind: str, n: int) -> CommGraph:
    builders = {"complete": complete_graph, "line": line_graph, "star": star_graph, "ring": ring_graph}
    try:
        return builders[kind](n)
    except KeyError:
        raise InvalidArgumentError(f"unknown topology {kind!r}; choose from {TOPOLOGIES}") from None


# -- weight matrices ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FPWeightSet:
    """One row-stochastic matrix per source player: ``matrices[j][i, k] = w^i_{j,k}``."""

    matrices: np.ndarray

    def __post_init__(self):
        mats = np.array(self.matrices, dtype=float)
        if mats.ndim != 3 or not (mats.shape[0] == mats.shape[1] == mats.shape[2]):
            raise InvalidArgumentError(f"expected shape (n, n, n), got {mats.shape}")
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @property
    def n(self) -> int:
        return self.matrices.shape[0]

    def reduced(self, j) -> np.ndarray:
        """``W_j`` with row and column ``j`` removed."""
        return np.delete(np.delete(self.matrices[j], j, axis=0), j, axis=1)


@dataclass(frozen=True, eq=False)
class DSMatrix:
    """Doubly stochastic consensus matrix, ``matrix[i, k] = w^i_k``."""

    matrix: np.ndarray

    def __post_init__(self):
        w = np.array(self.matrix, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidArgumentError(f"expected a square matrix, got {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "matrix", w)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    witness: str = ""
    # advisory checks are reported but do not decide ``ok``
    advisory: bool = False


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    lambdas: dict = field(default_factory=dict)

    def add(self, name, passed, witness="", advisory=False):
        self.checks.append(Check(name, bool(passed), witness, advisory))

    @property
    def ok(self) -> bool:
        return all(c.passed or c.advisory for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not (c.passed or c.advisory)]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"condition": c.name, "passed": c.passed, "advisory": c.advisory, "witness": c.witness}
                for c in self.checks
            ],
            "lambda": dict(self.lambdas),
        }


def metropolis_weights(graph: CommGraph) -> np.ndarray:
    """Metropolis-Hastings weights on the symmetric core of ``graph``.

    Only pairs linked in both directions are used; self-loops are ignored
    for degrees.
    """
    adj = graph.adjacency & graph.adjacency.T
    adj = adj & ~np.eye(graph.n, dtype=bool)
    deg = adj.sum(axis=1)
    w = np.zeros((graph.n, graph.n))
    for i, k in zip(*np.nonzero(adj)):
        w[i, k] = 1.0 / (1 + max(deg[i], deg[k]))
    w[np.diag_indices(graph.n)] = 1.0 - w.sum(axis=1)
    return w


def build_fp_weights(graph: CommGraph, method: str = "auto") -> FPWeightSet:
    """Weights for the per-source tracking recursions of distributed FP.

    Row ``j`` of ``W_j`` is the unit row at ``j``.  Every other row ``i`` is
    either uniform over ``{i} | N_i`` (``"uniform"``) or the Metropolis row
    of ``i`` (``"metropolis"``, symmetric graphs only).  ``"auto"`` picks
    Metropolis for symmetric graphs: the reduced matrix is then a symmetric
    principal submatrix, so its operator norm equals its spectral radius and
    stays below one.  Uniform rows can have operator norm above one on
    irregular graphs (a 5-node star already does).
    """
    n = graph.n
    if method == "auto":
        method = "metropolis" if graph.is_symmetric else "uniform"
    if method == "metropolis":
        if not graph.is_symmetric:
            raise InvalidArgumentError("metropolis FP weights need a symmetric graph")
        base = metropolis_weights(graph)
    elif method == "uniform":
        allowed = graph.allowed()
        base = allowed / allowed.sum(axis=1, keepdims=True)
    else:
        raise InvalidArgumentError(f"unknown weight method {method!r}")
    mats = np.repeat(base[None, :, :], n, axis=0)
    for j in range(n):
        mats[j, j, :] = 0.0
        mats[j, j, j] = 1.0
    ws = FPWeightSet(mats)
    report = verify_fp_weight_conditions(ws, graph)
    if not report.ok:
        bad = report.failures()[0]
        raise ConstructionFailedError(
            f"FP weights violate {bad.name}: {bad.witness}", condition=bad.name
        )
    return ws


def _row_stochastic(report, name, w):
    sums = w.sum(axis=1)
    dev = np.abs(sums - 1.0)
    worst = int(np.argmax(dev)) if dev.size else 0
    ok = bool(np.all(w >= 0)) and (dev.size == 0 or dev[worst] <= STOCH_TOL)
    witness = "" if ok else (
        "negative entry" if np.any(w < 0) else f"row {worst} sums to {sums[worst]!r}"
    )
    report.add(name, ok, witness)


def _sparsity(report, name, w, graph):
    bad = np.argwhere((w != 0) & ~graph.allowed())
    report.add(name, bad.size == 0, "" if bad.size == 0 else f"nonzero weight at {tuple(int(x) for x in bad[0])}")


def verify_fp_weight_conditions(ws: FPWeightSet, graph: CommGraph) -> ValidationReport:
    """Check every distributed-FP weight condition for each source player."""
    if ws.n != graph.n:
        raise InvalidArgumentError(f"weights are for {ws.n} players, graph has {graph.n}")
    report = ValidationReport()
    n = ws.n
    for j in range(n):
        w = ws.matrices[j]
        _row_stochastic(report, f"W{j}.row_stochastic", w)
        _sparsity(report, f"W{j}.sparsity", w, graph)
        unit = np.zeros(n)
        unit[j] = 1.0
        report.add(f"W{j}.unit_source_row", np.array_equal(w[j], unit), f"row {j} = {w[j].tolist()}")
        p = ws.reduced(j)
        if n == 1:
            report.add(f"P{j}.irreducible", True, "empty", advisory=True)
            report.add(f"P{j}.substochastic", True, "empty")
            report.add(f"P{j}.reaches_deficit", True, "empty")
            report.lambdas[f"P{j}"] = 0.0
            continue
        # Irreducibility cannot hold when removing j disconnects the graph
        # (a star's hub, a line's interior nodes); the tracking bound only
        # needs every row to reach a deficit row, which gives lambda < 1.
        report.add(f"P{j}.irreducible", pattern_irreducible(p), "nonzero pattern not strongly connected",
                   advisory=True)
        deficit = 1.0 - p.sum(axis=1)
        report.add(
            f"P{j}.substochastic",
            deficit.max() > STOCH_TOL,
            f"max row-sum deficit {deficit.max()!r}",
        )
        report.add(f"P{j}.reaches_deficit", reaches_deficit(p), "some row has no path to a deficit row")
        lam = spectral_gap(p, kind="operator")
        report.lambdas[f"P{j}"] = lam
        report.add(f"P{j}.contraction", lam < 1.0, f"operator 2-norm {lam!r}")
    # keep witnesses only on failures
    report.checks = [c if not c.passed else Check(c.name, True, "", c.advisory) for c in report.checks]
    return report


def build_doubly_stochastic(graph: CommGraph) -> DSMatrix:
    """Metropolis weights: symmetric, doubly stochastic, positive diagonal."""
    core = graph.adjacency & graph.adjacency.T
    if not pattern_irreducible(core | np.eye(graph.n, dtype=bool)):
        raise ConstructionFailedError(
            "symmetric core of the graph is disconnected", condition="symmetric_core_connected"
        )
    ds = DSMatrix(metropolis_weights(graph))
    report = verify_doubly_stochastic(ds, graph)
    if not report.ok:
        bad = report.failures()[0]
        raise ConstructionFailedError(f"matrix violates {bad.name}: {bad.witness}", condition=bad.name)
    return ds


def verify_doubly_stochastic(ds: DSMatrix, graph: CommGraph) -> ValidationReport:
    """Doubly stochastic, sparsity-conforming, irreducible, aperiodic, contracting.

    Aperiodicity is certified by a positive diagonal entry, which is
    sufficient for an irreducible matrix but not necessary.
    """
    if ds.n != graph.n:
        raise InvalidArgumentError(f"matrix is {ds.n}x{ds.n}, graph has {graph.n} vertices")
    w = ds.matrix
    report = ValidationReport()
    _row_stochastic(report, "W.row_stochastic", w)
    _row_stochastic(report, "W.column_stochastic", w.T)
    _sparsity(report, "W.sparsity", w, graph)
    report.add("W.irreducible", pattern_irreducible(w), "nonzero pattern not strongly connected")
    report.add("W.aperiodic", bool(np.any(np.diag(w) > 0)), "no positive diagonal entry")
    lam = spectral_gap(w, kind="slem") if graph.n > 1 else 0.0
    report.lambdas["W"] = lam
    report.add("W.contraction", lam < 1.0, f"second largest eigenvalue modulus {lam!r}")
    report.checks = [c if not c.passed else Check(c.name, True, "", c.advisory) for c in report.checks]
    return report


def _is_doubly_stochastic(m):
    return (
        bool(np.all(m >= 0))
        and np.allclose(m.sum(axis=0), 1.0, rtol=0, atol=STOCH_TOL)
        and np.allclose(m.sum(axis=1), 1.0, rtol=0, atol=STOCH_TOL)
    )


def spectral_gap(matrix, kind: str = "auto") -> float:
    """Contraction factor of a consensus matrix.

    ``"operator"``: the operator 2-norm ``sup_{|y|=1} |M y|`` (used for the
    reduced FP matrices, whose error bound needs a submultiplicative norm).
    ``"slem"``: ``|W - 11^T/n|_2``, the second largest eigenvalue modulus
    for a symmetric doubly stochastic ``W``.  ``"auto"`` picks ``"slem"``
    for doubly stochastic input.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got {m.shape}")
    if m.size == 0:
        return 0.0
    if kind == "auto":
        kind = "slem" if _is_doubly_stochastic(m) else "operator"
    if kind == "slem":
        m = m - np.full_like(m, 1.0 / m.shape[0])
    elif kind != "operator":
        raise InvalidArgumentError(f"unknown kind {kind!r}")
    try:
        return float(np.linalg.svd(m, compute_uv=False)[0])
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular value iteration did not converge: {exc}") from exc


# -- tracking recursions ------------------------------------------------------

def _as_matrix(w):
    if isinstance(w, DSMatrix):
        return w.matrix
    return np.asarray(w, dtype=float)


def leader_track_step(weights, estimates, source_delta: float, source: int) -> np.ndarray:
    """One round of ``x <- W (x + e_source * delta)``."""
    x = np.array(estimates, dtype=float)
    x[source] += source_delta
    return _as_matrix(weights) @ x


def avg_track_step(weights, estimates, deltas) -> np.ndarray:
    """One round of dynamic average tracking ``x <- W (x + delta)``."""
    return _as_matrix(weights) @ (np.asarray(estimates, dtype=float) + np.asarray(deltas, dtype=float))


def _check_lambda(lam):
    if not 0.0 <= lam < 1.0:
        raise InvalidArgumentError(f"contraction factor must lie in [0, 1), got {lam}")


def leader_tracking_error_bound(n: int, lam: float, B: float, T: int) -> float:
    """``(n+1)/(1-lam) * (1/T + B lam^T)``."""
    _check_lambda(lam)
    if B < 0 or T < 1:
        raise InvalidArgumentError("need B >= 0 and T >= 1")
    return (n + 1) / (1.0 - lam) * (1.0 / T + B * lam**T)


def avg_tracking_error_bound(n: int, lam: float, t: int, mean_eps: float) -> float:
    """``n lam^t + lam (1 - lam^t)/(1 - lam) * 2 n^2 * mean_eps``."""
    _check_lambda(lam)
    if t < 1 or mean_eps < 0:
        raise InvalidArgumentError("need t >= 1 and mean_eps >= 0")
    return n * lam**t + lam * (1.0 - lam**t) / (1.0 - lam) * 2 * n * n * mean_eps


def window_for_tolerance(n: int, lam: float, B: float, eps: float, t_limit: int = 10**9) -> int:
    """Smallest ``T`` with ``leader_tracking_error_bound(n, lam, B, T) <= eps``."""
    if eps <= 0:
        raise InvalidArgumentError("eps must be positive")
    # lower bound from the 1/T term alone, then bisect on the monotone bound
    lo = max(1, math.floor((n + 1) / ((1.0 - lam) * eps)))
    hi = lo
    while leader_tracking_error_bound(n, lam, B, hi) > eps:
        hi *= 2
        if hi > t_limit:
            raise NumericError("no window below t_limit reaches the tolerance")
    while lo < hi:
        mid = (lo + hi) // 2
        if leader_tracking_error_bound(n, lam, B, mid) <= eps:
            hi = mid
        else:
            lo = mid + 1
    return lo


def total_variation(signal) -> float:
    x = np.asarray(signal, dtype=float)
    return float(np.abs(np.diff(x)).sum())


def windowed_variation_ok(signal) -> bool:
    """Whether a window of values in [0, 1] is monotone.

    A monotone window in [0, 1] has total variation at most 1.
    """
    x = np.asarray(signal, dtype=float)
    if x.size == 0:
        raise InvalidArgumentError("window must be nonempty")
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise InvalidArgumentError("window values must lie in [0, 1]")
    d = np.diff(x)
    return bool(np.all(d >= 0) or np.all(d <= 0))


# -- weight files -------------------------------------------------------------

def weights_to_dict(weights) -> dict:
    if isinstance(weights, FPWeightSet):
        return {"kind": "fp", "matrices": weights.matrices.tolist()}
    if isinstance(weights, DSMatrix):
        return {"kind": "ds", "matrix": weights.matrix.tolist()}
    raise InvalidArgumentError(f"cannot serialize {type(weights).__name__}")


def weights_from_dict(data: dict):
    kind = data.get("kind")
    if kind == "fp":
        return FPWeightSet(np.array(data["matrices"], dtype=float))
    if kind == "ds":
        return DSMatrix(np.array(data["matrix"], dtype=float))
    raise InvalidArgumentError(f"unknown weight kind {kind!r}")


def load_weights(path):
    return weights_from_dict(json.loads(Path(path).read_text()))


def save_weights(weights, path) -> None:
    Path(path).write_text(json.dumps(weights_to_dict(weights)) + "\n")
