"""Directed/undirected graphs and the chordal machinery used for LMI splitting.

Nodes are numbered ``1..N``. Directed graphs always carry a self-loop at
every node; undirected graphs never store self-loops.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import re
from dataclasses import dataclass, field

from .errors import ChordalityError, DimensionError


def _check_endpoints(num_nodes, pairs):
    for i, j in pairs:
        if not (1 <= i <= num_nodes and 1 <= j <= num_nodes):
            raise DimensionError(f"edge ({i}, {j}) outside node range 1..{num_nodes}")


@dataclass(frozen=True)
class DirectedGraph:
    num_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.num_nodes < 1:
            raise DimensionError("a graph needs at least one node")
        pairs = {(int(i), int(j)) for i, j in self.edges}
        _check_endpoints(self.num_nodes, pairs)
        pairs |= {(i, i) for i in range(1, self.num_nodes + 1)}
        object.__setattr__(self, "edges", frozenset(pairs))

    def has_edge(self, i, j):
        return (i, j) in self.edges

    def in_neighbors(self, i):
        """Nodes ``j != i`` with ``(j, i)`` an edge, ascending."""
        return sorted(j for (j, k) in self.edges if k == i and j != i)

    def out_neighbors(self, i):
        return sorted(k for (j, k) in self.edges if j == i and k != i)

    def sorted_edges(self):
        return sorted(self.edges)

    def fingerprint(self):
        text = f"{self.num_nodes}:" + ";".join(f"{i},{j}" for i, j in self.sorted_edges())
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class UndirectedGraph:
    num_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.num_nodes < 1:
            raise DimensionError("a graph needs at least one node")
        pairs = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"undirected graphs carry no self-loops, got ({i}, {i})")
            pairs.add((min(i, j), max(i, j)))
        _check_endpoints(self.num_nodes, pairs)
        object.__setattr__(self, "edges", frozenset(pairs))

    @property
    def nodes(self):
        return range(1, self.num_nodes + 1)

    def adjacency(self):
        adj = {v: set() for v in self.nodes}
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def has_edge(self, i, j):
        return (min(i, j), max(i, j)) in self.edges


@dataclass(frozen=True)
class CliqueTree:
    """Maximal cliques of a chordal graph joined into a tree.

    ``selectors[k]`` is the ascending list of member nodes of clique ``k``;
    it fixes the row-block order of the selector matrix for that clique.
    Clique indices are 0-based, node labels 1-based.
    """

    cliques: tuple
    tree_edges: frozenset
    selectors: tuple

    def __len__(self):
        return len(self.cliques)

    def cliques_containing(self, v):
        return [k for k, c in enumerate(self.cliques) if v in c]


# ---------------------------------------------------------------- operations


def graph_union(g1: DirectedGraph, g2: DirectedGraph) -> DirectedGraph:
    if g1.num_nodes != g2.num_nodes:
        raise DimensionError(f"cannot unite graphs on {g1.num_nodes} and {g2.num_nodes} nodes")
    return DirectedGraph(g1.num_nodes, g1.edges | g2.edges)


def undirected_companion(g: DirectedGraph) -> UndirectedGraph:
    return UndirectedGraph(g.num_nodes, frozenset((i, j) for i, j in g.edges if i != j))


def mcs_order(g: UndirectedGraph) -> list[int]:
    """Maximum-cardinality search; returns vertices in visiting order.

    Ties go to the lowest node index.
    """
    adj = g.adjacency()
    weight = {v: 0 for v in g.nodes}
    visited = []
    seen = set()
    # max-heap on (weight, -index) via negated keys
    heap = [(0, v) for v in g.nodes]
    heapq.heapify(heap)
    while heap:
        w, v = heapq.heappop(heap)
        if v in seen or -w != weight[v]:
            continue
        seen.add(v)
        visited.append(v)
        for u in adj[v]:
            if u not in seen:
                weight[u] += 1
                heapq.heappush(heap, (-weight[u], u))
    return visited


def is_perfect_elimination_ordering(g: UndirectedGraph, order) -> bool:
    adj = g.adjacency()
    pos = {v: k for k, v in enumerate(order)}
    for v in order:
        later = [u for u in adj[v] if pos[u] > pos[v]]
        if not later:
            continue
        parent = min(later, key=pos.__getitem__)
        if any(u != parent and u not in adj[parent] for u in later):
            return False
    return True


def elimination_witness(g: UndirectedGraph):
    """A perfect elimination ordering if ``g`` is chordal, else ``None``."""
    order = list(reversed(mcs_order(g)))
    return order if is_perfect_elimination_ordering(g, order) else None


def is_chordal(g: UndirectedGraph) -> bool:
    return elimination_witness(g) is not None


def triangulate(g: UndirectedGraph):
    """Greedy minimum-fill chordal extension.

    Returns ``(chordal_graph, fill_edges)``; ties broken by lowest node index.
    Already-chordal input gets no fill because a simplicial vertex (zero fill)
    always exists.
    """
    adj = g.adjacency()
    remaining = set(g.nodes)
    fill = set()

    def fill_of(v):
        nb = sorted(adj[v] & remaining)
        return [(a, b) for a, b in itertools.combinations(nb, 2) if b not in adj[a]]

    while remaining:
        best, best_fill = None, None
        for v in sorted(remaining):
            f = fill_of(v)
            if best_fill is None or len(f) < len(best_fill):
                best, best_fill = v, f
                if not f:
                    break
        for a, b in best_fill:
            adj[a].add(b)
            adj[b].add(a)
            fill.add((a, b))
        remaining.discard(best)
    out = UndirectedGraph(g.num_nodes, g.edges | fill)
    return out, frozenset(fill)


def maximal_cliques_chordal(g: UndirectedGraph, order=None):
    if order is None:
        order = elimination_witness(g)
        if order is None:
            raise ChordalityError("graph is not chordal; triangulate it first")
    adj = g.adjacency()
    pos = {v: k for k, v in enumerate(order)}
    candidates = [frozenset({v} | {u for u in adj[v] if pos[u] > pos[v]}) for v in order]
    cliques = []
    for c in sorted(set(candidates), key=len, reverse=True):
        if not any(c < d for d in cliques):
            cliques.append(c)
    return sorted(cliques, key=lambda c: sorted(c))


def clique_tree(g: UndirectedGraph) -> CliqueTree:
    """Clique tree via maximum-weight spanning tree on intersection sizes."""
    order = elimination_witness(g)
    if order is None:
        raise ChordalityError("graph is not chordal; triangulate it first")
    cliques = maximal_cliques_chordal(g, order)
    weighted = []
    for a, b in itertools.combinations(range(len(cliques)), 2):
        w = len(cliques[a] & cliques[b])
        if w > 0:
            weighted.append((-w, a, b))
    weighted.sort()
    parent = list(range(len(cliques)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = set()
    for _, a, b in weighted:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            edges.add((a, b))
    return CliqueTree(
        cliques=tuple(cliques),
        tree_edges=frozenset(edges),
        selectors=tuple(tuple(sorted(c)) for c in cliques),
    )


def has_running_intersection(tree: CliqueTree) -> bool:
    nodes = set().union(*tree.cliques) if tree.cliques else set()
    adj = {k: set() for k in range(len(tree))}
    for a, b in tree.tree_edges:
        adj[a].add(b)
        adj[b].add(a)
    for v in nodes:
        holders = set(tree.cliques_containing(v))
        start = next(iter(holders))
        stack, seen = [start], {start}
        while stack:
            k = stack.pop()
            for j in adj[k]:
                if j in holders and j not in seen:
                    seen.add(j)
                    stack.append(j)
        if seen != holders:
            return False
    return True


# ---------------------------------------------------------------- generators


def path(n):
    return DirectedGraph(n, frozenset((i, i + 1) for i in range(1, n)) | frozenset((i + 1, i) for i in range(1, n)))


def complete(n):
    return DirectedGraph(n, frozenset(itertools.product(range(1, n + 1), repeat=2)))


def banded(n, h):
    return DirectedGraph(
        n, frozenset((i, j) for i in range(1, n + 1) for j in range(1, n + 1) if abs(i - j) <= h)
    )


def empty(n):
    return DirectedGraph(n)


_GENERATORS = {"path": path, "complete": complete, "banded": banded, "empty": empty}
_LITERAL = re.compile(r"^\s*(\w+)\s*\(([^)]*)\)\s*$")


def parse_graph(literal, num_nodes=None) -> DirectedGraph:
    """Build a graph from a config literal.

    Accepts ``"path(N)"``-style generator strings, a list of ``[i, j]``
    directed edges, or ``{"edges": [...]}``. ``num_nodes`` is required for
    edge lists and cross-checked for generators.
    """
    if isinstance(literal, str):
        m = _LITERAL.match(literal)
        if not m or m.group(1) not in _GENERATORS:
            raise ValueError(f"unknown graph literal {literal!r}")
        args = [int(a) for a in m.group(2).split(",") if a.strip()]
        g = _GENERATORS[m.group(1)](*args)
        if num_nodes is not None and g.num_nodes != num_nodes:
            raise DimensionError(f"{literal!r} has {g.num_nodes} nodes, model has {num_nodes}")
        return g
    if isinstance(literal, dict):
        literal = literal["edges"]
    if num_nodes is None:
        raise ValueError("edge-list graphs need an explicit node count")
    return DirectedGraph(num_nodes, frozenset((int(i), int(j)) for i, j in literal))
