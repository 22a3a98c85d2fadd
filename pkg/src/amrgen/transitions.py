"""Cache transition system over AMR graphs.

A configuration holds a buffer of pending concepts, a fixed-size cache whose
slots start as sentinels, and a stack of displaced (index, slot) pairs. The
generation-side simplified system has two actions: Push(i) moves the front
buffer concept into the rightmost cache slot after evicting slot i to the
stack, and Pop reverses the most recent Push. The full parsing action set
(Shift / PushIndex / Arc / Pop) is also supported; Shift+PushIndex replicate
Push in two steps and Arc records an edge in the partial graph.

An edge counts as covered the first time both endpoints sit in the cache
together. The cache size k therefore bounds the treewidth of what a complete
run can cover: the post-Push cache states form the bags of a tree
decomposition of width at most k - 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .graphs import AmrGraph, bfs_edge_order, bfs_order, short_labels

SENTINEL = None  # empty cache slot


class IllegalAction(ValueError):
    pass


class IllegalTrace(ValueError):
    pass


class BadPermutation(ValueError):
    pass


@dataclass(frozen=True)
class Push:
    """Simplified action: dequeue the front buffer concept, evict slot `index`."""

    index: int  # 1-based cache position


@dataclass(frozen=True)
class Pop:
    pass


@dataclass(frozen=True)
class Shift:
    pass


@dataclass(frozen=True)
class PushIndex:
    index: int


@dataclass(frozen=True)
class Arc:
    """Full-system edge builder between eta[k] and eta[index].

    direction "out" draws eta[k] -> eta[index], "in" the reverse.
    """

    index: int
    direction: str
    label: str


Action = Push | Pop | Shift | PushIndex | Arc


@dataclass(frozen=True)
class ParserConfiguration:
    graph: AmrGraph
    k: int
    buffer: tuple[int, ...]
    cache: tuple[int | None, ...]
    stack: tuple[tuple[int, int | None], ...]
    covered: frozenset[int] = frozenset()
    retired: frozenset[int] = frozenset()
    partial_edges: tuple[tuple[int, int, str], ...] = ()
    pending_push: bool = False  # a Shift happened, PushIndex must follow

    def cache_vertices(self) -> list[int]:
        return [v for v in self.cache if v is not SENTINEL]

    def stack_vertices(self) -> list[int]:
        return [slot for _, slot in self.stack if slot is not SENTINEL]


def init_config(graph: AmrGraph, order: list[int] | tuple[int, ...], k: int) -> ParserConfiguration:
    """Start state: buffer in the given order, k sentinel cache slots, empty stack."""
    if k < 1:
        raise ValueError(f"cache size must be positive, got {k}")
    if sorted(order) != list(range(graph.n)):
        raise BadPermutation(f"order {order!r} is not a permutation of 0..{graph.n - 1}")
    return ParserConfiguration(
        graph=graph,
        k=k,
        buffer=tuple(order),
        cache=(SENTINEL,) * k,
        stack=(),
    )


def _cover(graph: AmrGraph, cache: tuple[int | None, ...], covered: frozenset[int]) -> frozenset[int]:
    """Mark every edge between co-resident cache concepts as covered."""
    members = [v for v in cache if v is not SENTINEL]
    if len(members) < 2:
        return covered
    new = set()
    for a in range(len(members)):
        for b in range(a + 1, len(members)):
            for eid in graph.edges_between(members[a], members[b]):
                if eid not in covered:
                    new.add(eid)
    return covered | new if new else covered


def push_at(config: ParserConfiguration, buffer_pos: int, index: int) -> ParserConfiguration:
    """Push the buffer concept at `buffer_pos`, evicting cache slot `index`.

    Push(i) is push_at(0, i); decoders use other positions because the
    generation buffer is an unordered set the model selects from.
    """
    if config.pending_push:
        raise IllegalAction("PushIndex required after Shift")
    if not config.buffer:
        raise IllegalAction("push on empty buffer")
    if not 0 <= buffer_pos < len(config.buffer):
        raise IllegalAction(f"buffer position {buffer_pos} out of range")
    if not 1 <= index <= config.k:
        raise IllegalAction(f"cache index {index} outside [1, {config.k}]")
    v = config.buffer[buffer_pos]
    evicted = config.cache[index - 1]
    cache = config.cache[: index - 1] + config.cache[index:] + (v,)
    return replace(
        config,
        buffer=config.buffer[:buffer_pos] + config.buffer[buffer_pos + 1 :],
        cache=cache,
        stack=config.stack + ((index, evicted),),
        covered=_cover(config.graph, cache, config.covered),
    )


def apply(config: ParserConfiguration, action: Action) -> ParserConfiguration:
    """One transition; raises IllegalAction when preconditions fail."""
    if isinstance(action, Push):
        return push_at(config, 0, action.index)

    if isinstance(action, Pop):
        if config.pending_push:
            raise IllegalAction("PushIndex required after Shift")
        if not config.stack:
            raise IllegalAction("pop on empty stack")
        index, restored = config.stack[-1]
        evicted = config.cache[-1]
        cache = config.cache[: index - 1] + (restored,) + config.cache[index - 1 : config.k - 1]
        retired = config.retired | {evicted} if evicted is not SENTINEL else config.retired
        return replace(
            config,
            cache=cache,
            stack=config.stack[:-1],
            covered=_cover(config.graph, cache, config.covered),
            retired=retired,
        )

    if isinstance(action, Shift):
        if config.pending_push:
            raise IllegalAction("Shift while a PushIndex is pending")
        if not config.buffer:
            raise IllegalAction("shift on empty buffer")
        return replace(config, pending_push=True)

    if isinstance(action, PushIndex):
        if not config.pending_push:
            raise IllegalAction("PushIndex without a preceding Shift")
        moved = replace(config, pending_push=False)
        return push_at(moved, 0, action.index)

    if isinstance(action, Arc):
        if config.pending_push:
            raise IllegalAction("PushIndex required after Shift")
        if not 1 <= action.index <= config.k - 1:
            raise IllegalAction(f"arc index {action.index} outside [1, {config.k - 1}]")
        if action.direction not in ("in", "out"):
            raise IllegalAction(f"arc direction must be 'in' or 'out', got {action.direction!r}")
        right = config.cache[-1]
        other = config.cache[action.index - 1]
        if right is SENTINEL or other is SENTINEL:
            raise IllegalAction("arc endpoints must be concepts, not sentinels")
        edge = (right, other, action.label) if action.direction == "out" else (other, right, action.label)
        return replace(config, partial_edges=config.partial_edges + (edge,))

    raise IllegalAction(f"unknown action {action!r}")


def legal_actions(config: ParserConfiguration, full: bool = False, arc_labels: tuple[str, ...] = ()) -> list[Action]:
    """Simplified actions by default; full=True yields Shift/PushIndex/Arc/Pop."""
    acts: list[Action] = []
    if full:
        if config.pending_push:
            return [PushIndex(i) for i in range(1, config.k + 1)]
        if config.buffer:
            acts.append(Shift())
        if config.stack:
            acts.append(Pop())
        right = config.cache[-1]
        if right is not SENTINEL:
            for i in range(1, config.k):
                if config.cache[i - 1] is not SENTINEL:
                    for label in arc_labels:
                        acts.append(Arc(i, "out", label))
                        acts.append(Arc(i, "in", label))
        return acts
    if config.buffer:
        acts.extend(Push(i) for i in range(1, config.k + 1))
    if config.stack:
        acts.append(Pop())
    return acts


def is_terminal(config: ParserConfiguration) -> bool:
    return not config.buffer and not config.stack and not config.pending_push


# ---------------------------------------------------------------------------
# Tree decompositions read off a run.


@dataclass(frozen=True)
class TreeDecomposition:
    """Bags (one per Push, the post-Push cache members) with parent links.

    parent[i] is the bag that was current when bag i was created, or None
    for bags created from the initial all-sentinel cache.
    """

    bags: tuple[frozenset[int], ...]
    parents: tuple[int | None, ...]

    @property
    def width(self) -> int:
        return max((len(b) for b in self.bags), default=0) - 1


def tree_decomposition(graph: AmrGraph, order: list[int], k: int, actions: list[Action]) -> TreeDecomposition:
    """Replay a complete simplified run and collect its bag tree.

    Raises IllegalTrace when the action sequence is illegal or does not end
    in a terminal configuration.
    """
    config = init_config(graph, order, k)
    bags: list[frozenset[int]] = []
    parents: list[int | None] = []
    current: int | None = None
    walk: list[int | None] = []
    for action in actions:
        if not isinstance(action, (Push, Pop)):
            raise IllegalTrace(f"tree decomposition reads simplified runs only, got {action!r}")
        try:
            config = apply(config, action)
        except IllegalAction as exc:
            raise IllegalTrace(str(exc)) from exc
        if isinstance(action, Push):
            bags.append(frozenset(config.cache_vertices()))
            parents.append(current)
            walk.append(current)
            current = len(bags) - 1
        else:
            current = walk.pop()
    if not is_terminal(config):
        raise IllegalTrace("run does not end in a terminal configuration")
    return TreeDecomposition(bags=tuple(bags), parents=tuple(parents))


# ---------------------------------------------------------------------------
# Fixed-width rendering of a run, one row per configuration.

_HEADERS = ("stack", "cache", "buffer", "edges", "word span", "preceding action")


def render_run(
    graph: AmrGraph,
    order: list[int],
    k: int,
    actions: list[Action],
    span_texts: list[str] | None = None,
) -> str:
    """Render the run as a text table in display (first-letter) notation.

    The buffer column shows remaining concepts as a set in breadth-first
    order from the root; the edges column shows uncovered edges likewise.
    """
    names = short_labels(graph)
    bfs_rank = {v: r for r, v in enumerate(bfs_order(graph))}
    edge_rank = {eid: r for r, eid in enumerate(bfs_edge_order(graph))}
    edge_names = _edge_short_names(graph)

    def fmt_slot(slot: int | None) -> str:
        return "$" if slot is SENTINEL else names[slot]

    def fmt_config(config: ParserConfiguration) -> tuple[str, str, str, str]:
        stack = "[" + ", ".join(f"{i}, {fmt_slot(s)}" for i, s in config.stack) + "]"
        cache = "[" + ", ".join(fmt_slot(s) for s in config.cache) + "]"
        buffer = "{" + ", ".join(names[v] for v in sorted(config.buffer, key=bfs_rank.get)) + "}"
        open_edges = sorted(set(range(len(graph.edges))) - config.covered, key=edge_rank.get)
        edges = "{" + ", ".join(edge_names[e] for e in open_edges) + "}"
        return stack, cache, buffer, edges

    rows = [fmt_config(init_config(graph, order, k)) + ("---", "---")]
    config = init_config(graph, order, k)
    for action in actions:
        if isinstance(action, Push):
            vertex = config.buffer[0]
            label = f"Push({names[vertex]}, {action.index})"
            span = span_texts[vertex] if span_texts else ""
        else:
            label = "Pop"
            span = ""
        config = apply(config, action)
        rows.append(fmt_config(config) + (span or "---", label))

    table = [_HEADERS] + rows
    widths = [max(len(row[c]) for row in table) for c in range(6)]
    lines = ["  |  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip() for row in table]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def _edge_short_names(graph: AmrGraph) -> dict[int, str]:
    counts: dict[str, int] = {}
    names: dict[int, str] = {}
    for eid in bfs_edge_order(graph):
        label = graph.edges[eid][2]
        first = label[0] if label else "?"
        counts[first] = counts.get(first, 0) + 1
        names[eid] = first if counts[first] == 1 else f"{first}{counts[first]}"
    return names
