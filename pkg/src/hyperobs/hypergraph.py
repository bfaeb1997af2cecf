"""Directed hypergraphs, their associated signed graphs, and condensation queries.

A directed hyperedge carries ordered, disjoint tail and head node lists with
per-tail weights ``alpha`` and per-head weights ``beta`` (each summing to one)
and a positive coupling strength ``sigma``.  The signed-graph association puts
positive edges from every tail to every head and negative edges between the
heads of each hyperedge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-12


class HypergraphError(ValueError):
    pass


class OverlappingTailsHeads(HypergraphError):
    pass


class WeightSumViolation(HypergraphError):
    pass


class NegativeWeight(HypergraphError):
    pass


class NodeOutOfRange(HypergraphError):
    pass


class LayerTooSmall(HypergraphError):
    pass


@dataclass(frozen=True)
class Hyperedge:
    """One directed hyperedge: weighted tails -> weighted heads.

    ``allow_affine`` relaxes the nonnegativity requirement on the weights
    (the sum-to-one constraints always hold); off by default.
    """

    tails: tuple[int, ...]
    heads: tuple[int, ...]
    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    sigma: float = 1.0
    allow_affine: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "tails", tuple(int(v) for v in self.tails))
        object.__setattr__(self, "heads", tuple(int(v) for v in self.heads))
        object.__setattr__(self, "alpha", tuple(float(v) for v in self.alpha))
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        object.__setattr__(self, "sigma", float(self.sigma))
        if not self.tails or not self.heads:
            raise HypergraphError("hyperedge needs at least one tail and one head")
        if set(self.tails) & set(self.heads):
            raise OverlappingTailsHeads(
                f"tails {self.tails} and heads {self.heads} intersect"
            )
        if len(set(self.tails)) != len(self.tails) or len(set(self.heads)) != len(self.heads):
            raise HypergraphError("repeated node within tails or heads")
        if len(self.alpha) != len(self.tails) or len(self.beta) != len(self.heads):
            raise HypergraphError("weight vector length must match tails/heads")
        for name, w in (("alpha", self.alpha), ("beta", self.beta)):
            if abs(sum(w) - 1.0) > WEIGHT_SUM_TOL:
                raise WeightSumViolation(f"{name} sums to {sum(w)!r}, expected 1")
            if not self.allow_affine and any(v < 0.0 for v in w):
                raise NegativeWeight(f"{name} has negative entries: {w}")
        if self.sigma <= 0.0:
            raise HypergraphError(f"sigma must be positive, got {self.sigma}")

    @property
    def cardinality(self) -> int:
        return len(self.tails) + len(self.heads)

    @staticmethod
    def uniform(tails: Sequence[int], heads: Sequence[int], sigma: float = 1.0) -> "Hyperedge":
        """Hyperedge with uniform convex weights on tails and heads."""
        nt, nh = len(tails), len(heads)
        return Hyperedge(tuple(tails), tuple(heads), (1.0 / nt,) * nt, (1.0 / nh,) * nh, sigma)


@dataclass(frozen=True)
class DirectedHypergraph:
    num_nodes: int
    edges: tuple[Hyperedge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        if self.num_nodes < 0:
            raise HypergraphError("num_nodes must be nonnegative")
        for e in self.edges:
            self._check_in_range(e)

    def _check_in_range(self, e: Hyperedge) -> None:
        for v in (*e.tails, *e.heads):
            if not 0 <= v < self.num_nodes:
                raise NodeOutOfRange(f"node {v} outside [0, {self.num_nodes})")

    def _check_node(self, i: int) -> None:
        if not 0 <= i < self.num_nodes:
            raise NodeOutOfRange(f"node {i} outside [0, {self.num_nodes})")

    # -- edge queries (all return edge indices, ascending) --------------------

    def incoming(self, i: int) -> list[int]:
        """Edges having node i as a head."""
        self._check_node(i)
        return [k for k, e in enumerate(self.edges) if i in e.heads]

    def outgoing(self, i: int) -> list[int]:
        """Edges having node i as a tail."""
        self._check_node(i)
        return [k for k, e in enumerate(self.edges) if i in e.tails]

    def restrict(self, nodes: Iterable[int]) -> list[int]:
        """Edges whose tails and heads all lie inside ``nodes``."""
        s = self._as_node_set(nodes)
        return [
            k
            for k, e in enumerate(self.edges)
            if set(e.tails) <= s and set(e.heads) <= s
        ]

    def incoming_closure(self, nodes: Iterable[int]) -> list[int]:
        """Edges with at least one head inside ``nodes``."""
        s = self._as_node_set(nodes)
        return [k for k, e in enumerate(self.edges) if s & set(e.heads)]

    def boundary(self, nodes: Iterable[int]) -> list[int]:
        """Edges entering ``nodes`` that are not fully contained in it."""
        inside = set(self.restrict(nodes))
        return [k for k in self.incoming_closure(nodes) if k not in inside]

    def pair(self, j: int, i: int) -> list[int]:
        """Edges with j among the tails and i among the heads."""
        self._check_node(j)
        self._check_node(i)
        return [k for k, e in enumerate(self.edges) if j in e.tails and i in e.heads]

    def cohead(self, i: int, j: int) -> list[int]:
        """Edges with both i and j among the heads."""
        self._check_node(i)
        self._check_node(j)
        return [k for k, e in enumerate(self.edges) if i in e.heads and j in e.heads]

    def tails_of(self, edge_indices: Iterable[int]) -> list[int]:
        """Union of the tail sets of the given edges, ascending."""
        out: set[int] = set()
        for k in edge_indices:
            out.update(self.edges[k].tails)
        return sorted(out)

    def degrees(self, i: int, within: Iterable[int] | None = None) -> tuple[int, int]:
        """(in-degree, out-degree) of node i, optionally restricted to an edge set."""
        self._check_node(i)
        idx = range(len(self.edges)) if within is None else sorted(set(within))
        d_in = sum(1 for k in idx if i in self.edges[k].heads)
        d_out = sum(1 for k in idx if i in self.edges[k].tails)
        return d_in, d_out

    def _as_node_set(self, nodes: Iterable[int]) -> set[int]:
        s = set(int(v) for v in nodes)
        for v in s:
            self._check_node(v)
        return s

    # -- serialization ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "edges": [
                {
                    "tails": list(e.tails),
                    "heads": list(e.heads),
                    "alpha": list(e.alpha),
                    "beta": list(e.beta),
                    "sigma": e.sigma,
                }
                for e in self.edges
            ],
        }

    @staticmethod
    def from_json_dict(doc: Mapping) -> "DirectedHypergraph":
        edges = tuple(
            Hyperedge(
                tuple(d["tails"]),
                tuple(d["heads"]),
                tuple(d["alpha"]),
                tuple(d["beta"]),
                d.get("sigma", 1.0),
            )
            for d in doc["edges"]
        )
        return DirectedHypergraph(int(doc["num_nodes"]), edges)

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @staticmethod
    def from_json(text: str) -> "DirectedHypergraph":
        return DirectedHypergraph.from_json_dict(json.loads(text))


def add_hyperedge(h: DirectedHypergraph, e: Hyperedge) -> DirectedHypergraph:
    """Return a new hypergraph with ``e`` appended (hypergraphs are immutable)."""
    return DirectedHypergraph(h.num_nodes, (*h.edges, e))


# -- signed graph ---------------------------------------------------------------


@dataclass(frozen=True)
class SignedGraph:
    """Weighted directed graph allowing negative weights; no self-loops, no zeros."""

    num_nodes: int
    weights: Mapping[tuple[int, int], float]

    def __post_init__(self):
        w = dict(self.weights)
        for (i, j), v in w.items():
            if i == j:
                raise HypergraphError(f"self-loop {i}->{j} not allowed")
            if v == 0.0:
                raise HypergraphError(f"zero-weight edge {i}->{j} not allowed")
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise NodeOutOfRange(f"edge ({i},{j}) outside node range")
        object.__setattr__(self, "weights", w)

    def edge_list(self) -> list[tuple[int, int, float]]:
        return sorted((i, j, v) for (i, j), v in self.weights.items())

    def successors(self, i: int) -> list[int]:
        return sorted(j for (a, j) in self.weights if a == i)


def to_signed_graph(h: DirectedHypergraph) -> SignedGraph:
    """Signed pairwise graph associated to hyperdiffusive coupling on ``h``.

    For each hyperedge and each head i: +sigma*alpha_j on every tail j -> i
    and -sigma*beta_j on every other head j -> i.  Contributions on the same
    ordered pair are summed; exact-zero sums are dropped.
    """
    acc: dict[tuple[int, int], float] = {}
    for e in h.edges:
        for qi, i in enumerate(e.heads):
            for tj, j in enumerate(e.tails):
                acc[(j, i)] = acc.get((j, i), 0.0) + e.sigma * e.alpha[tj]
            for qj, j in enumerate(e.heads):
                if j != i:
                    acc[(j, i)] = acc.get((j, i), 0.0) - e.sigma * e.beta[qj]
    weights = {k: v for k, v in acc.items() if v != 0.0}
    return SignedGraph(h.num_nodes, weights)


def to_dependency_graph(h: DirectedHypergraph) -> SignedGraph:
    """Pairwise reachability structure of hyperdiffusive coupling.

    Same edge pattern as the signed graph, but contribution magnitudes are
    accumulated, so opposite-sign contributions from different hyperedges on
    one ordered pair can never cancel away a real dependency.  Condensation
    for observer design explores this graph.
    """
    acc: dict[tuple[int, int], float] = {}
    for e in h.edges:
        for i in e.heads:
            for tj, j in enumerate(e.tails):
                acc[(j, i)] = acc.get((j, i), 0.0) + abs(e.sigma * e.alpha[tj])
            for qj, j in enumerate(e.heads):
                if j != i:
                    acc[(j, i)] = acc.get((j, i), 0.0) + abs(e.sigma * e.beta[qj])
    return SignedGraph(h.num_nodes, {k: v for k, v in acc.items() if v != 0.0})


def largest_connected_component(h: DirectedHypergraph) -> tuple[list[int], list[int]]:
    """Nodes of the largest weak component of the associated signed graph,
    plus the hyperedges fully contained in it.

    Ties are broken in favor of the component with the smallest node id.
    """
    g = to_signed_graph(h)
    parent = list(range(h.num_nodes))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for (i, j) in g.weights:
        union(i, j)
    comps: dict[int, list[int]] = {}
    for v in range(h.num_nodes):
        comps.setdefault(find(v), []).append(v)
    best = max(comps.values(), key=lambda c: (len(c), -min(c)))
    best = sorted(best)
    return best, h.restrict(best)


# -- condensation ---------------------------------------------------------------


@dataclass(frozen=True)
class Condensation:
    """SCC quotient of a signed graph restricted to a node subset."""

    scc_of: Mapping[int, int]
    members: tuple[tuple[int, ...], ...]
    dag_edges: frozenset[tuple[int, int]]

    def roots(self) -> list[int]:
        """SCC ids with no incoming condensation edge, sorted by smallest member."""
        targets = {b for (_, b) in self.dag_edges}
        ids = [s for s in range(len(self.members)) if s not in targets]
        return sorted(ids, key=lambda s: self.members[s][0])

    def root_members(self) -> list[tuple[int, ...]]:
        return [self.members[s] for s in self.roots()]


def condense(g: SignedGraph, on: Iterable[int] | None = None) -> Condensation:
    """Strongly connected components of the subgraph induced by ``on``.

    Reachability ignores the sign of the weights.  Uses an iterative Tarjan
    walk over nodes in ascending order; component ids are relabeled so that
    members/ids are deterministic.
    """
    nodes = sorted(range(g.num_nodes)) if on is None else sorted(set(int(v) for v in on))
    node_set = set(nodes)
    for v in nodes:
        if not 0 <= v < g.num_nodes:
            raise NodeOutOfRange(f"node {v} outside [0, {g.num_nodes})")
    succ: dict[int, list[int]] = {v: [] for v in nodes}
    for (i, j) in sorted(g.weights):
        if i in node_set and j in node_set:
            succ[i].append(j)

    index: dict[int, int] = {}
    lowlink: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = 0

    for root in nodes:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = lowlink[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            advanced = False
            children = succ[v]
            for k in range(pi, len(children)):
                w = children[k]
                if w not in index:
                    work[-1] = (v, k + 1)
                    work.append((w, 0))
                    advanced = True
                    break
                if w in on_stack:
                    lowlink[v] = min(lowlink[v], index[w])
            if advanced:
                continue
            work.pop()
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(sorted(comp))
            if work:
                u, _ = work[-1]
                lowlink[u] = min(lowlink[u], lowlink[v])

    sccs.sort(key=lambda c: c[0])
    scc_of = {v: s for s, comp in enumerate(sccs) for v in comp}
    dag = set()
    for (i, j) in g.weights:
        if i in node_set and j in node_set:
            a, b = scc_of[i], scc_of[j]
            if a != b:
                dag.add((a, b))
    return Condensation(scc_of, tuple(tuple(c) for c in sccs), frozenset(dag))


# -- hierarchical generator -------------------------------------------------------


@dataclass(frozen=True)
class HierarchicalGenSpec:
    """Layered random hypergraph recipe: source edges (1 tail, c-1 heads) and
    sink edges (c-1 tails, 1 head), within layers and across consecutive layers."""

    layer_sizes: tuple[int, ...]
    cardinality: int
    src_intra: tuple[int, ...]
    snk_intra: tuple[int, ...]
    src_inter: tuple[int, ...]
    snk_inter: tuple[int, ...]
    seed: int
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("layer_sizes", "src_intra", "snk_intra", "src_inter", "snk_inter"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        ell = len(self.layer_sizes)
        if ell < 1 or any(s < 1 for s in self.layer_sizes):
            raise HypergraphError("need at least one nonempty layer")
        if self.cardinality < 2:
            raise HypergraphError("cardinality must be >= 2")
        if any(s < self.cardinality - 1 for s in self.layer_sizes):
            raise LayerTooSmall(
                f"every layer needs >= cardinality-1 = {self.cardinality - 1} nodes"
            )
        if len(self.src_intra) != ell or len(self.snk_intra) != ell:
            raise HypergraphError("intra edge counts must have one entry per layer")
        if len(self.src_inter) != ell - 1 or len(self.snk_inter) != ell - 1:
            raise HypergraphError("inter edge counts must have one entry per layer boundary")
        if self.sigma <= 0:
            raise HypergraphError("sigma must be positive")

    @property
    def num_nodes(self) -> int:
        return sum(self.layer_sizes)

    def layers(self) -> list[list[int]]:
        out, offset = [], 0
        for size in self.layer_sizes:
            out.append(list(range(offset, offset + size)))
            offset += size
        return out

    def to_json_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "cardinality": self.cardinality,
            "src_intra": list(self.src_intra),
            "snk_intra": list(self.snk_intra),
            "src_inter": list(self.src_inter),
            "snk_inter": list(self.snk_inter),
            "seed": self.seed,
            "sigma": self.sigma,
        }

    @staticmethod
    def from_json_dict(doc: Mapping) -> "HierarchicalGenSpec":
        return HierarchicalGenSpec(
            tuple(doc["layer_sizes"]),
            int(doc["cardinality"]),
            tuple(doc["src_intra"]),
            tuple(doc["snk_intra"]),
            tuple(doc["src_inter"]),
            tuple(doc["snk_inter"]),
            int(doc["seed"]),
            float(doc.get("sigma", 1.0)),
        )


def _fisher_yates_take(rng: np.random.Generator, pool: Sequence[int], k: int) -> list[int]:
    # partial Fisher-Yates shuffle: deterministic given the generator state
    arr = list(pool)
    if k > len(arr):
        raise LayerTooSmall(f"cannot sample {k} distinct nodes from {len(arr)}")
    for idx in range(k):
        j = idx + int(rng.integers(0, len(arr) - idx))
        arr[idx], arr[j] = arr[j], arr[idx]
    return arr[:k]


def generate_hierarchical(spec: HierarchicalGenSpec) -> DirectedHypergraph:
    """Generate a layered hypergraph; deterministic given ``spec.seed``."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    layers = spec.layers()
    c = spec.cardinality
    edges: list[Hyperedge] = []

    def source_edge(tail_pool, head_pool):
        if tail_pool is head_pool:
            picks = _fisher_yates_take(rng, tail_pool, c)
            tails, heads = picks[:1], picks[1:]
        else:
            tails = _fisher_yates_take(rng, tail_pool, 1)
            heads = _fisher_yates_take(rng, head_pool, c - 1)
        edges.append(Hyperedge.uniform(tails, heads, spec.sigma))

    def sink_edge(tail_pool, head_pool):
        if tail_pool is head_pool:
            picks = _fisher_yates_take(rng, tail_pool, c)
            tails, heads = picks[: c - 1], picks[c - 1 :]
        else:
            tails = _fisher_yates_take(rng, tail_pool, c - 1)
            heads = _fisher_yates_take(rng, head_pool, 1)
        edges.append(Hyperedge.uniform(tails, heads, spec.sigma))

    for i, layer in enumerate(layers):
        for _ in range(spec.src_intra[i]):
            source_edge(layer, layer)
        for _ in range(spec.snk_intra[i]):
            sink_edge(layer, layer)
    for i in range(len(layers) - 1):
        for _ in range(spec.src_inter[i]):
            source_edge(layers[i], layers[i + 1])
        for _ in range(spec.snk_inter[i]):
            sink_edge(layers[i], layers[i + 1])

    return DirectedHypergraph(spec.num_nodes, tuple(edges))
