"""Shared fixtures and independent reference implementations.

The reference routines here deliberately do not call into amrgen internals
beyond the public data types, so library results are checked against a
second, separately written route.
"""

from __future__ import annotations

import itertools

import numpy as np

from amrgen.corpus import AlignedExample, load_corpus
from amrgen.graphs import AmrGraph

# The worked example used throughout: a five-concept graph, four tokens of
# eight unaligned, pushed at cache size 3 with no mid-run pops.
CENTER_BLOCK = """\
the center will formally open in 2009 .
(o / open-01
   :ARG1 (c / center)
   :time (d / date-entity
      :year (2 / 2009))
   :manner (f / formal))
ALIGN 1 2 1
ALIGN 3 4 4
ALIGN 4 5 0
ALIGN 6 7 3
"""

# Three concepts, one span-less (yesterday); small enough for gradient checks.
CAT_BLOCK = """\
the cat slept .
(s / sleep-01
   :ARG0 (c / cat)
   :time (y / yesterday))
ALIGN 1 2 1
ALIGN 2 3 0
"""

# Fully aligned two-concept block for quick end-to-end runs.
TINY_BLOCK = """\
a dog barked
(b / bark-01
   :ARG0 (d / dog))
ALIGN 0 2 1
ALIGN 2 3 0
"""


def center_example() -> AlignedExample:
    return load_corpus(CENTER_BLOCK)[0]


def cat_example() -> AlignedExample:
    return load_corpus(CAT_BLOCK)[0]


def tiny_example() -> AlignedExample:
    return load_corpus(TINY_BLOCK)[0]


# ---------------------------------------------------------------------------
# Scalar LSTM reference: per-gate formulas, no vectorized tricks.


def lstm_reference(W: np.ndarray, b: np.ndarray, cell: np.ndarray, hidden: np.ndarray,
                   x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gate order i, f, o, g over rows of W; inputs stacked [x; hidden]."""
    h = hidden.shape[0]
    z = W @ np.concatenate([x, hidden]) + b
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    i = sig(z[0:h])
    f = sig(z[h:2 * h])
    o = sig(z[2 * h:3 * h])
    g = np.tanh(z[3 * h:4 * h])
    cell_out = f * cell + i * g
    hidden_out = o * np.tanh(cell_out)
    return cell_out, hidden_out


# ---------------------------------------------------------------------------
# Exhaustive graph enumeration and an independent covering-run search.


def _connected(n: int, edges: tuple[tuple[int, int], ...]) -> bool:
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in edges:
        parent[find(u)] = find(v)
    return len({find(v) for v in range(n)}) == 1


def connected_graphs(n: int):
    """All connected labeled graphs on n vertices, as AmrGraphs rooted at 0.

    Every undirected edge set over the complete graph is tried; edges are
    oriented low-to-high, which the cache system treats symmetrically.
    """
    pairs = list(itertools.combinations(range(n), 2))
    for bits in range(1 << len(pairs)):
        edges = tuple(pairs[i] for i in range(len(pairs)) if bits >> i & 1)
        if not _connected(n, edges):
            continue
        yield AmrGraph(
            concepts=tuple(f"c{i}" for i in range(n)),
            edges=tuple((u, v, "rel") for u, v in edges),
            root=0,
        )


def covering_run_exists(graph: AmrGraph, order: tuple[int, ...], k: int) -> bool:
    """Search every legal Push/Pop run for one that covers all edges.

    Written directly against the transition definitions (explicit cache
    shifting, co-residency coverage), independently of amrgen.transitions.
    Coverage is tracked per undirected vertex pair in a bitmask and the
    sentinel is the out-of-range id n, so states hash cheaply; exhaustive
    sweeps call this tens of thousands of times.
    """
    n = graph.n
    pair_bit: dict[tuple[int, int], int] = {}
    for u, v, _ in graph.edges:
        key = (min(u, v), max(u, v))
        if key not in pair_bit:
            pair_bit[key] = 1 << len(pair_bit)
    full = (1 << len(pair_bit)) - 1
    pair_of = [[0] * (n + 1) for _ in range(n + 1)]
    for (u, v), bit in pair_bit.items():
        pair_of[u][v] = pair_of[v][u] = bit

    sentinel = n
    todo = [(0, (sentinel,) * k, (), 0)]
    seen = set()
    while todo:
        state = todo.pop()
        if state in seen:
            continue
        seen.add(state)
        pos, cache, stack, covered = state
        if covered == full:
            # the rest of the buffer can always be pushed and popped legally
            return True
        if pos < n:
            incoming = order[pos]
            row = pair_of[incoming]
            for i in range(1, k + 1):
                new_cache = cache[:i - 1] + cache[i:] + (incoming,)
                newly = covered
                for member in new_cache[:-1]:
                    newly |= row[member]
                todo.append((pos + 1, new_cache, stack + ((i, cache[i - 1]),), newly))
        if stack:
            i, restored = stack[-1]
            new_cache = cache[:i - 1] + (restored,) + cache[i - 1:-1]
            newly = covered
            if restored != sentinel:
                row = pair_of[restored]
                for member in new_cache:
                    if member != restored:
                        newly |= row[member]
            todo.append((pos, new_cache, stack[:-1], newly))
    return False


# ---------------------------------------------------------------------------
# Graph isomorphism through networkx (labels on nodes and edges, root marked).


def isomorphic(a: AmrGraph, b: AmrGraph) -> bool:
    import networkx as nx
    from networkx.algorithms.isomorphism import categorical_edge_match, categorical_node_match

    def build(g: AmrGraph) -> "nx.MultiDiGraph":
        gx = nx.MultiDiGraph()
        for v, label in enumerate(g.concepts):
            gx.add_node(v, label=label, is_root=(v == g.root))
        for u, v, rel in g.edges:
            gx.add_edge(u, v, rel=rel)
        return gx

    return nx.is_isomorphic(
        build(a), build(b),
        node_match=categorical_node_match(["label", "is_root"], [None, None]),
        edge_match=categorical_edge_match("rel", None),
    )


# ---------------------------------------------------------------------------
# Tree-decomposition axiom checking (independent of the extractor).


def check_tree_decomposition(graph: AmrGraph, bags: tuple, parents: tuple,
                             covered: set[int]) -> list[str]:
    """Return a list of axiom violations (empty = valid decomposition)."""
    problems = []
    seen = set().union(*bags) if bags else set()
    for v in range(graph.n):
        if v not in seen:
            problems.append(f"vertex {v} in no bag")
    for eid in covered:
        u, v, _ = graph.edges[eid]
        if not any(u in bag and v in bag for bag in bags):
            problems.append(f"edge {eid} ({u},{v}) in no bag")
    # occurrence sets must induce connected subtrees
    children: dict[int, list[int]] = {i: [] for i in range(len(bags))}
    roots = []
    for i, parent in enumerate(parents):
        if parent is None:
            roots.append(i)
        else:
            children[parent].append(i)
    for v in range(graph.n):
        holding = {i for i, bag in enumerate(bags) if v in bag}
        if not holding:
            continue
        start = next(iter(holding))
        frontier = [start]
        reached = {start}
        while frontier:
            i = frontier.pop()
            neighbors = children[i] + ([parents[i]] if parents[i] is not None else [])
            for j in neighbors:
                if j in holding and j not in reached:
                    reached.add(j)
                    frontier.append(j)
        if reached != holding:
            problems.append(f"vertex {v} occurrence set disconnected")
    return problems


def random_connected_graph(rng, n: int, extra_edges: int) -> AmrGraph:
    """Random tree plus up to extra_edges distinct chords."""
    edges = [(rng.randrange(child), child) for child in range(1, n)]
    undirected = {(min(u, v), max(u, v)) for u, v in edges}
    for _ in range(extra_edges):
        u, v = rng.randrange(n), rng.randrange(n)
        if u == v or (min(u, v), max(u, v)) in undirected:
            continue
        undirected.add((min(u, v), max(u, v)))
        edges.append((u, v))
    return AmrGraph(
        concepts=tuple(f"c{i}" for i in range(n)),
        edges=tuple((u, v, f"r{i % 3}") for i, (u, v) in enumerate(edges)),
        root=0,
    )
