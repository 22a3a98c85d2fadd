"""Rooted labeled AMR graphs and a small PENMAN reader/writer.

Concepts are identified positionally (the integer id is the definition order in
the PENMAN text); variable names are discarded after parsing. Edges are
(source, target, label) triples kept in encounter order, and an edge's identity
is its position in that list, so parallel edges are representable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property


class MalformedPenman(ValueError):
    """Raised for unparseable PENMAN text or graphs violating the invariants."""


_TOKEN = re.compile(r'\(|\)|/|:[^\s()/]+|"[^"]*"|[^\s()/:]+')
_VARIABLE = re.compile(r"^[A-Za-z][A-Za-z0-9_-]*$")
_CONSTANT = re.compile(r'^(["+-]|\d)')
_SENSE_SUFFIX = re.compile(r"-\d\d$")


@dataclass(frozen=True)
class AmrGraph:
    """Immutable rooted graph: concept labels plus directed labeled edges."""

    concepts: tuple[str, ...]
    edges: tuple[tuple[int, int, str], ...] = ()
    root: int = 0

    @property
    def n(self) -> int:
        return len(self.concepts)

    @cached_property
    def out_edges(self) -> tuple[tuple[int, ...], ...]:
        """Edge ids grouped by source, each group in edge-list order."""
        table = [[] for _ in self.concepts]
        for eid, (src, _, _) in enumerate(self.edges):
            table[src].append(eid)
        return tuple(tuple(ids) for ids in table)

    @cached_property
    def in_edges(self) -> tuple[tuple[int, ...], ...]:
        table = [[] for _ in self.concepts]
        for eid, (_, dst, _) in enumerate(self.edges):
            table[dst].append(eid)
        return tuple(tuple(ids) for ids in table)

    @cached_property
    def incident(self) -> tuple[frozenset[int], ...]:
        """Edge ids touching each vertex, direction-blind."""
        table = [set() for _ in self.concepts]
        for eid, (src, dst, _) in enumerate(self.edges):
            table[src].add(eid)
            table[dst].add(eid)
        return tuple(frozenset(s) for s in table)

    @cached_property
    def pair_edges(self) -> dict[tuple[int, int], tuple[int, ...]]:
        """Edge ids keyed by unordered endpoint pair (small id first)."""
        table: dict[tuple[int, int], list[int]] = {}
        for eid, (src, dst, _) in enumerate(self.edges):
            key = (src, dst) if src < dst else (dst, src)
            table.setdefault(key, []).append(eid)
        return {key: tuple(ids) for key, ids in table.items()}

    def edges_between(self, u: int, v: int) -> tuple[int, ...]:
        key = (u, v) if u < v else (v, u)
        return self.pair_edges.get(key, ())

    def endpoints(self, eid: int) -> tuple[int, int]:
        src, dst, _ = self.edges[eid]
        return src, dst

    def other_end(self, eid: int, v: int) -> int:
        src, dst, _ = self.edges[eid]
        return dst if v == src else src

    def validate(self) -> None:
        """Check the structural invariants; raises MalformedPenman."""
        if not self.concepts:
            raise MalformedPenman("graph has no concepts")
        if not 0 <= self.root < self.n:
            raise MalformedPenman(f"root {self.root} out of range")
        for src, dst, label in self.edges:
            if src == dst:
                raise MalformedPenman(f"self-loop on concept {src}")
            if not (0 <= src < self.n and 0 <= dst < self.n):
                raise MalformedPenman(f"edge endpoint out of range: {(src, dst, label)}")
        if self.n > 1:
            seen = {self.root}
            frontier = [self.root]
            while frontier:
                v = frontier.pop()
                for eid in self.incident[v]:
                    u = self.other_end(eid, v)
                    if u not in seen:
                        seen.add(u)
                        frontier.append(u)
            if len(seen) != self.n:
                raise MalformedPenman("underlying undirected graph is not connected")


def bfs_order(g: AmrGraph) -> list[int]:
    """Vertices in breadth-first order from the root, edge-list order within a level.

    Vertices unreachable by directed edges are appended in id order.
    """
    order, seen = [], set()
    queue = [g.root]
    seen.add(g.root)
    while queue:
        v = queue.pop(0)
        order.append(v)
        for eid in g.out_edges[v]:
            dst = g.edges[eid][1]
            if dst not in seen:
                seen.add(dst)
                queue.append(dst)
    for v in range(g.n):
        if v not in seen:
            order.append(v)
    return order


def bfs_edge_order(g: AmrGraph) -> list[int]:
    """Edge ids enumerated along the bfs_order walk (all out-edges per vertex)."""
    eids = []
    listed = set()
    for v in bfs_order(g):
        for eid in g.out_edges[v]:
            if eid not in listed:
                listed.add(eid)
                eids.append(eid)
    for eid in range(len(g.edges)):
        if eid not in listed:
            eids.append(eid)
    return eids


def dfs_preorder(g: AmrGraph) -> list[int]:
    """Depth-first preorder from the root, out-edges in edge-list order."""
    order, seen = [], set()

    def visit(v: int) -> None:
        seen.add(v)
        order.append(v)
        for eid in g.out_edges[v]:
            dst = g.edges[eid][1]
            if dst not in seen:
                visit(dst)

    visit(g.root)
    for v in range(g.n):
        if v not in seen:
            order.append(v)
    return order


def short_labels(g: AmrGraph) -> list[str]:
    """Single-character display names (first letter of each label).

    Colliding first letters get a numeric suffix in order of appearance.
    """
    counts: dict[str, int] = {}
    names = []
    for label in g.concepts:
        first = label[0] if label else "?"
        counts[first] = counts.get(first, 0) + 1
        names.append(first if counts[first] == 1 else f"{first}{counts[first]}")
    return names


def _tokenize(text: str) -> list[str]:
    stripped = _TOKEN.sub("", text)
    if stripped.strip():
        raise MalformedPenman(f"unexpected characters: {stripped.strip()[:20]!r}")
    return _TOKEN.findall(text)


def parse_penman(text: str) -> AmrGraph:
    """Parse one PENMAN block into an AmrGraph.

    Recognizes `(var / label :role target ...)` nesting. A bare target is a
    reentrant reference when it names a defined variable (forward references
    allowed); quoted strings and tokens starting with a digit, '+' or '-' are
    constants promoted to fresh concept vertices; anything else is an
    undefined reference and raises MalformedPenman.
    """
    toks = _tokenize(text)
    if not toks:
        raise MalformedPenman("empty input")
    concepts: list[str] = []
    edge_rows: list[list] = []  # [src, dst_or_None, label, raw_ref]
    var_ids: dict[str, int] = {}
    pos = 0

    def peek() -> str | None:
        return toks[pos] if pos < len(toks) else None

    def take(expected: str | None = None) -> str:
        nonlocal pos
        if pos >= len(toks):
            raise MalformedPenman("unexpected end of input")
        tok = toks[pos]
        if expected is not None and tok != expected:
            raise MalformedPenman(f"expected {expected!r}, got {tok!r}")
        pos += 1
        return tok

    def unquote(tok: str) -> str:
        return tok[1:-1] if tok.startswith('"') and tok.endswith('"') else tok

    def parse_node() -> int:
        take("(")
        var = take()
        if var in ("(", ")", "/") or var.startswith(":"):
            raise MalformedPenman(f"bad variable token {var!r}")
        if var in var_ids:
            raise MalformedPenman(f"duplicate variable {var!r}")
        take("/")
        label = take()
        if label in ("(", ")", "/") or label.startswith(":"):
            raise MalformedPenman(f"bad concept label {label!r}")
        node_id = len(concepts)
        concepts.append(unquote(label))
        var_ids[var] = node_id
        while peek() is not None and peek() != ")":
            role = take()
            if not role.startswith(":") or len(role) < 2:
                raise MalformedPenman(f"expected role, got {role!r}")
            row = [node_id, None, role[1:], None]
            edge_rows.append(row)
            if peek() == "(":
                row[1] = parse_node()
            else:
                target = take()
                if target in (")", "/") or target.startswith(":"):
                    raise MalformedPenman(f"bad edge target {target!r}")
                row[3] = target  # resolved after the full parse
        take(")")
        return node_id

    root = parse_node()
    if pos != len(toks):
        raise MalformedPenman(f"trailing tokens after graph: {toks[pos]!r}")

    edges = []
    for src, dst, label, raw in edge_rows:
        if raw is not None:
            if raw in var_ids:
                dst = var_ids[raw]
            elif _CONSTANT.match(raw) or not _VARIABLE.match(raw):
                dst = len(concepts)
                concepts.append(unquote(raw))
            else:
                raise MalformedPenman(f"undefined reference {raw!r}")
        edges.append((src, dst, label))

    g = AmrGraph(concepts=tuple(concepts), edges=tuple(edges), root=root)
    g.validate()
    return g


def split_penman_blocks(text: str) -> list[str]:
    """Split a UTF-8 PENMAN file into blank-line-separated blocks."""
    blocks = [b.strip() for b in re.split(r"\n\s*\n", text)]
    return [b for b in blocks if b]


def serialize(g: AmrGraph) -> str:
    """Write canonical PENMAN with variables c0..c{n-1}.

    Tree edges follow a depth-first walk in edge-list order; remaining edges
    are written as bare variable references. Every vertex must be reachable
    from the root by directed edges.
    """
    visited = {g.root}

    def emit(v: int) -> str:
        parts = [f"(c{v} / {_quote(g.concepts[v])}"]
        for eid in g.out_edges[v]:
            _, dst, label = g.edges[eid]
            if dst not in visited:
                visited.add(dst)
                parts.append(f":{label} {emit(dst)}")
            else:
                parts.append(f":{label} c{dst}")
        return " ".join(parts) + ")"

    text = emit(g.root)
    if len(visited) != g.n:
        missing = sorted(set(range(g.n)) - visited)
        raise ValueError(f"concepts not reachable from root: {missing}")
    return text


def _quote(label: str) -> str:
    if label and not re.search(r'[\s()/:"]', label):
        return label
    return '"' + label.replace('"', "") + '"'


def preprocess_label(label: str) -> str:
    """Lowercase and strip trailing -NN sense suffixes (repeatedly, so the
    function is idempotent on stacked suffixes)."""
    out = label.lower()
    while _SENSE_SUFFIX.search(out):
        out = _SENSE_SUFFIX.sub("", out)
    return out


def preprocess_labels(g: AmrGraph) -> AmrGraph:
    """Normalize concept labels; edges and ids are unchanged."""
    return AmrGraph(
        concepts=tuple(preprocess_label(c) for c in g.concepts),
        edges=g.edges,
        root=g.root,
    )
