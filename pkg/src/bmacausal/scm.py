"""DAGs, candidate edge spaces, linear-Gaussian SCMs and total effects."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

ENUMERATION_CAP = 20

Edge = tuple[int, int]


class GraphError(ValueError):
    """Raised for malformed graphs, cyclic edge sets or invalid candidates."""


class EnumerationLimitError(RuntimeError):
    """Raised when a candidate space is too large to enumerate."""


def _topological_order(n_nodes: int, edges: Sequence[Edge]) -> tuple[int, ...] | None:
    indegree = [0] * n_nodes
    children: list[list[int]] = [[] for _ in range(n_nodes)]
    for i, j in edges:
        children[i].append(j)
        indegree[j] += 1
    # smallest ready index first keeps the order deterministic
    ready = sorted(k for k in range(n_nodes) if indegree[k] == 0)
    order = []
    while ready:
        k = ready.pop(0)
        order.append(k)
        for c in children[k]:
            indegree[c] -= 1
            if indegree[c] == 0:
                ready.append(c)
        ready.sort()
    if len(order) != n_nodes:
        return None
    return tuple(order)


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph over named nodes; edges are (from, to) index pairs.

    Edges are kept sorted lexicographically, which fixes the edge order used
    for enumeration and tie-breaking everywhere else.
    """

    nodes: tuple[str, ...]
    edges: tuple[Edge, ...] = ()
    order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        nodes = tuple(str(n) for n in self.nodes)
        if len(set(nodes)) != len(nodes):
            raise GraphError(f"duplicate node names in {nodes}")
        edges = tuple(sorted({(int(i), int(j)) for i, j in self.edges}))
        m = len(nodes)
        for i, j in edges:
            if not (0 <= i < m and 0 <= j < m):
                raise GraphError(f"edge ({i}, {j}) references a missing node")
            if i == j:
                raise GraphError(f"self loop on {nodes[i]}")
        edge_set = set(edges)
        for i, j in edges:
            if (j, i) in edge_set:
                raise GraphError(f"edge {nodes[i]}->{nodes[j]} present in both orientations")
        order = _topological_order(m, edges)
        if order is None:
            raise GraphError("edge set contains a directed cycle")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "order", order)

    @classmethod
    def from_names(cls, nodes: Sequence[str], edges: Sequence[tuple[str, str]]) -> Dag:
        index = {n: k for k, n in enumerate(nodes)}
        try:
            return cls(tuple(nodes), tuple((index[a], index[b]) for a, b in edges))
        except KeyError as exc:
            raise GraphError(f"unknown node {exc.args[0]!r}") from None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def index(self, node: str | int) -> int:
        if isinstance(node, (int, np.integer)):
            if not 0 <= node < len(self.nodes):
                raise GraphError(f"node index {node} out of range")
            return int(node)
        try:
            return self.nodes.index(node)
        except ValueError:
            raise GraphError(f"unknown node {node!r}") from None

    def parents(self, node: str | int) -> tuple[int, ...]:
        j = self.index(node)
        return tuple(i for i, k in self.edges if k == j)

    def children(self, node: str | int) -> tuple[int, ...]:
        i = self.index(node)
        return tuple(k for s, k in self.edges if s == i)

    def edge_names(self) -> list[tuple[str, str]]:
        return [(self.nodes[i], self.nodes[j]) for i, j in self.edges]

    def subgraph(self, edges: Sequence[Edge]) -> Dag:
        return Dag(self.nodes, tuple(edges))


@dataclass(frozen=True)
class CandidateSpace:
    """The graph over all possible edges plus an existence probability per edge.

    ``edge_prob[k]`` belongs to ``dag_full.edges[k]``.
    """

    dag_full: Dag
    edge_prob: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.edge_prob)
        if len(probs) != len(self.dag_full.edges):
            raise GraphError(
                f"{len(probs)} probabilities for {len(self.dag_full.edges)} edges"
            )
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise GraphError(f"edge probability {p} outside [0, 1]")
        object.__setattr__(self, "edge_prob", probs)

    @classmethod
    def uniform(cls, dag_full: Dag, p: float) -> CandidateSpace:
        return cls(dag_full, (p,) * len(dag_full.edges))

    @classmethod
    def from_edges(
        cls, nodes: Sequence[str], edges: Sequence[tuple[str, str, float]]
    ) -> CandidateSpace:
        """Build a space from ``(from, to, prob)`` name triples in any order."""
        probs = {}
        for a, b, p in edges:
            if (a, b) in probs:
                raise GraphError(f"edge {a}->{b} listed twice")
            probs[(a, b)] = float(p)
        dag = Dag.from_names(nodes, list(probs))
        return cls(dag, tuple(probs[e] for e in dag.edge_names()))

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.dag_full.nodes

    @property
    def edges(self) -> tuple[Edge, ...]:
        return self.dag_full.edges

    @property
    def n_edges(self) -> int:
        return len(self.dag_full.edges)

    def n_candidates(self) -> int:
        return 2 ** self.n_edges

    def incoming(self, node: str | int) -> list[int]:
        """Positions (in the fixed edge order) of the candidate edges into ``node``."""
        j = self.dag_full.index(node)
        return [k for k, (_, t) in enumerate(self.edges) if t == j]

    def edge_masks(self, cap: int = ENUMERATION_CAP) -> np.ndarray:
        """Boolean matrix with one row per candidate graph, in binary counting order."""
        check_enumerable(self, cap)
        codes = np.arange(2 ** self.n_edges, dtype=np.int64)
        shifts = np.arange(self.n_edges, dtype=np.int64)
        return ((codes[:, None] >> shifts[None, :]) & 1).astype(bool)

    def graph_from_mask(self, mask: Sequence[bool]) -> Dag:
        return Dag(self.nodes, tuple(e for e, keep in zip(self.edges, mask) if keep))

    def to_json(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [
                {"from": a, "to": b, "prob": p}
                for (a, b), p in zip(self.dag_full.edge_names(), self.edge_prob)
            ],
        }


def check_enumerable(space: CandidateSpace, cap: int = ENUMERATION_CAP) -> None:
    if space.n_edges > cap:
        raise EnumerationLimitError(
            f"candidate space has {space.n_edges} edges ({2 ** space.n_edges} graphs); "
            f"enumeration is capped at {cap} edges"
        )


def enumerate_candidates(space: CandidateSpace, cap: int = ENUMERATION_CAP) -> Iterator[Dag]:
    """Yield every subgraph of the full graph.

    Candidate ``k`` contains edge ``e`` iff bit ``e`` of ``k`` is set.
    """
    check_enumerable(space, cap)
    edges = space.edges
    for code in range(2 ** len(edges)):
        yield Dag(space.nodes, tuple(e for b, e in enumerate(edges) if code >> b & 1))


def _edge_positions(space: CandidateSpace, g: Dag) -> list[int]:
    if g.nodes != space.nodes:
        raise GraphError("graph nodes differ from the candidate space nodes")
    lookup = {e: k for k, e in enumerate(space.edges)}
    try:
        return [lookup[e] for e in g.edges]
    except KeyError as exc:
        i, j = exc.args[0]
        raise GraphError(f"edge {g.nodes[i]}->{g.nodes[j]} is not in the candidate space") from None


def log_prior_masks(space: CandidateSpace, masks: np.ndarray) -> np.ndarray:
    """Log prior of each candidate given as a boolean edge-mask row."""
    p = np.asarray(space.edge_prob, dtype=float)
    with np.errstate(divide="ignore"):
        log_in = np.log(p)
        log_out = np.log1p(-p)
    # where() rather than arithmetic so 0 * -inf never appears
    terms = np.where(masks, log_in[None, :], log_out[None, :])
    return terms.sum(axis=1)


def log_graph_prior(space: CandidateSpace, g: Dag) -> float:
    mask = np.zeros((1, space.n_edges), dtype=bool)
    mask[0, _edge_positions(space, g)] = True
    return float(log_prior_masks(space, mask)[0])


def graph_prior(space: CandidateSpace, g: Dag) -> float:
    """Independent-edge prior: prod of p_e over present edges, (1 - p_e) over absent ones."""
    present = set(_edge_positions(space, g))
    prob = 1.0
    for k, p in enumerate(space.edge_prob):
        prob *= p if k in present else 1.0 - p
    return prob


@dataclass(frozen=True)
class LinearScm:
    dag: Dag
    weights: Mapping[Edge, float]
    noise_precision: float = 1.0

    def __post_init__(self) -> None:
        weights = {(int(i), int(j)): float(w) for (i, j), w in self.weights.items()}
        if set(weights) != set(self.dag.edges):
            raise GraphError("weight keys must equal the DAG edge set")
        if not self.noise_precision > 0:
            raise ValueError("noise_precision must be positive")
        object.__setattr__(self, "weights", weights)

    def weight_matrix(self) -> np.ndarray:
        return weight_matrix(self.dag, self.weights)

    def total_effect(self, x: str | int, y: str | int) -> float:
        return total_effect(self.dag, self.weights, x, y)


@dataclass(frozen=True)
class Dataset:
    """N observations of m named variables."""

    columns: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        columns = tuple(str(c) for c in self.columns)
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(columns):
            raise ValueError(f"values of shape {values.shape} do not match {len(columns)} columns")
        if len(set(columns)) != len(columns):
            raise ValueError("column names must be unique")
        if values.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains missing or non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.m:
                raise KeyError(f"column index {name} out of range")
            return int(name)
        try:
            return self.columns.index(name)
        except ValueError:
            raise KeyError(f"unknown column {name!r}") from None

    def column(self, name: str | int) -> np.ndarray:
        return self.values[:, self.index(name)]

    def select(self, names: Sequence[str]) -> Dataset:
        return Dataset(tuple(names), self.values[:, [self.index(c) for c in names]])

    def centered(self) -> Dataset:
        return Dataset(self.columns, self.values - self.values.mean(axis=0))

    def aligned_to(self, nodes: Sequence[str]) -> np.ndarray:
        """Data matrix with columns in ``nodes`` order."""
        return self.values[:, [self.index(c) for c in nodes]]


def sample_model(
    space: CandidateSpace,
    prior_var: float = 1.0,
    noise_precision: float = 1.0,
    rng_seed=None,
) -> LinearScm:
    """Draw a graph from the edge prior and Gaussian coefficients for its edges."""
    if not prior_var > 0 or not noise_precision > 0:
        raise ValueError("prior_var and noise_precision must be positive")
    rng = np.random.default_rng(rng_seed)
    n_edges = space.n_edges
    # both draws are made for every edge so the stream layout does not depend on p
    u = rng.random(n_edges)
    coef = rng.normal(0.0, np.sqrt(prior_var), n_edges)
    keep = u < np.asarray(space.edge_prob)
    edges = [e for e, k in zip(space.edges, keep) if k]
    weights = {e: float(c) for e, c, k in zip(space.edges, coef, keep) if k}
    return LinearScm(space.dag_full.subgraph(edges), weights, noise_precision)


def simulate(scm: LinearScm, n: int, rng_seed=None) -> Dataset:
    """Sample ``n`` rows from the SCM in topological order."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(rng_seed)
    m = scm.dag.n_nodes
    values = rng.normal(0.0, 1.0 / np.sqrt(scm.noise_precision), size=(n, m))
    theta = scm.weight_matrix()
    for j in scm.dag.order:
        parents = list(scm.dag.parents(j))
        if parents:
            values[:, j] += values[:, parents] @ theta[parents, j]
    return Dataset(scm.dag.nodes, values)


def weight_matrix(dag: Dag, weights: Mapping[Edge, float]) -> np.ndarray:
    theta = np.zeros((dag.n_nodes, dag.n_nodes))
    for i, j in dag.edges:
        try:
            theta[i, j] = weights[(i, j)]
        except KeyError:
            raise GraphError(f"no weight for edge {dag.nodes[i]}->{dag.nodes[j]}") from None
    return theta


def total_effect(dag: Dag, weights: Mapping[Edge, float], x: str | int, y: str | int) -> float:
    """Sum over directed x->y paths of the product of edge weights.

    Depth-first from ``x``; the path sum from each visited node to ``y`` is
    memoised, so shared suffixes are only walked once.
    """
    xi, yi = dag.index(x), dag.index(y)
    if xi == yi:
        raise GraphError("x and y must differ")
    children: dict[int, list[int]] = {}
    for i, j in dag.edges:
        children.setdefault(i, []).append(j)
    memo: dict[int, float] = {yi: 1.0}

    def paths_from(node: int) -> float:
        if node in memo:
            return memo[node]
        total = 0.0
        for c in children.get(node, ()):
            try:
                w = weights[(node, c)]
            except KeyError:
                raise GraphError(
                    f"no weight for edge {dag.nodes[node]}->{dag.nodes[c]}"
                ) from None
            total += w * paths_from(c)
        memo[node] = total
        return total

    return float(paths_from(xi))


def total_effect_closed(
    dag: Dag, weights: Mapping[Edge, float], x: str | int, y: str | int
) -> float:
    """Entry (x, y) of (I - Theta)^-1."""
    xi, yi = dag.index(x), dag.index(y)
    if xi == yi:
        raise GraphError("x and y must differ")
    theta = weight_matrix(dag, weights)
    return float(effects_from_matrices(theta[None], xi, yi)[0])


def effects_from_matrices(theta: np.ndarray, x: int, y: int) -> np.ndarray:
    """Total effects for a stack of weighted adjacency matrices of shape (k, m, m)."""
    k, m, _ = theta.shape
    lhs = np.eye(m)[None] - theta
    rhs = np.zeros((k, m, 1))
    rhs[:, y, 0] = 1.0
    try:
        col = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("I - Theta is singular; the weights do not come from a DAG") from exc
    return col[:, x, 0]


def has_directed_path(dag: Dag, x: str | int, y: str | int) -> bool:
    xi, yi = dag.index(x), dag.index(y)
    stack, seen = [xi], {xi}
    while stack:
        v = stack.pop()
        if v == yi:
            return True
        for c in dag.children(v):
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return False


def load_space(path: str | Path) -> CandidateSpace:
    """Read a graph-space JSON document: ``{"nodes": [...], "edges": [{from, to, prob}]}``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return space_from_json(doc)


def space_from_json(doc: Mapping) -> CandidateSpace:
    try:
        nodes = list(doc["nodes"])
        edges = [(e["from"], e["to"], e.get("prob", 0.5)) for e in doc["edges"]]
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed graph-space document: {exc}") from None
    return CandidateSpace.from_edges(nodes, edges)


def save_space(space: CandidateSpace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(space.to_json(), fh, indent=2)
        fh.write("\n")
