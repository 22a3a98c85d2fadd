"""Oracle action traces for aligned sentence/graph pairs.

The buffer order puts aligned concepts in span-start order and tucks each
unaligned concept in front of its first aligned descendant (falling back to a
spot right after its parent). Extraction then walks that order: before pushing
a concept it pops until no stack concept still needs an edge to it, and each
push evicts the cache slot whose concept's next uncovered neighbour lies
farthest in the future, never a slot adjacent to the incoming concept unless
every slot is. A trace that fails replay falls back to a bounded exhaustive
search, so TreewidthExceeded is only raised when no covering run exists (or
the search budget is exhausted on oversized inputs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .corpus import AlignedExample, attach_unaligned
from .graphs import AmrGraph, dfs_preorder
from .transitions import (
    Action,
    ParserConfiguration,
    Pop,
    Push,
    apply,
    init_config,
    is_terminal,
)

INFINITE = math.inf


class TreewidthExceeded(RuntimeError):
    """No run with this cache size covers every edge for the given order."""


@dataclass(frozen=True)
class OracleTrace:
    graph: AmrGraph
    k: int
    buffer_order: tuple[int, ...]  # concept ids, push order
    actions: tuple[Action, ...]  # n Push / n Pop
    span_texts: tuple[str, ...]  # per concept id, "" when unaligned

    @property
    def eviction_indices(self) -> tuple[int, ...]:
        return tuple(a.index for a in self.actions if isinstance(a, Push))

    def pushed_spans(self) -> list[str]:
        """Span text per Push, in push order."""
        return [self.span_texts[v] for v in self.buffer_order]


def buffer_order(example: AlignedExample) -> list[int]:
    """Aligned concepts by span start; unaligned ones spliced in.

    An unaligned concept goes immediately before its first aligned descendant
    in a depth-first walk, or right after its (first listed) parent when no
    descendant is aligned. Unaligned concepts are processed in depth-first
    preorder so ancestors are placed before their unaligned descendants.
    """
    g = example.graph
    aligned = sorted(example.aligned_ids, key=lambda c: example.spans[c][0])
    if not aligned:
        from .corpus import NoAlignedConcept

        raise NoAlignedConcept("cannot order a graph with no aligned concept")
    order = list(aligned)
    pending = [v for v in dfs_preorder(g) if example.spans[v] is None]
    while pending:
        rest = []
        for u in pending:
            target = _first_aligned_descendant(example, u)
            if target is not None:
                order.insert(order.index(target), u)
                continue
            parent = next((g.edges[e][0] for e in g.in_edges[u]), None)
            if parent is not None and parent in order:
                order.insert(order.index(parent) + 1, u)
            else:
                rest.append(u)
        if len(rest) == len(pending):  # isolated cluster, e.g. unaligned root chain
            order.extend(rest)
            break
        pending = rest
    return order


def _first_aligned_descendant(example: AlignedExample, u: int) -> int | None:
    g = example.graph
    seen = {u}
    stack = [g.edges[e][1] for e in reversed(g.out_edges[u])]
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        if example.spans[v] is not None:
            return v
        stack.extend(g.edges[e][1] for e in reversed(g.out_edges[v]))
    return None


def _has_open_edge(g: AmrGraph, covered: frozenset[int], u: int, v: int) -> bool:
    return any(eid not in covered for eid in g.edges_between(u, v))


def _next_open_need(g: AmrGraph, config: ParserConfiguration, u: int, position: dict[int, int], t: int) -> float:
    """Buffer position of u's earliest uncovered future neighbour (inf if none)."""
    best = INFINITE
    for eid in g.incident[u]:
        if eid in config.covered:
            continue
        w = g.other_end(eid, u)
        p = position.get(w, -1)
        if p > t:
            best = min(best, p)
    return best


def _greedy_actions(graph: AmrGraph, order: list[int], k: int) -> list[Action] | None:
    """The deterministic oracle walk; None when it paints itself into a corner."""
    position = {v: i for i, v in enumerate(order)}
    config = init_config(graph, order, k)
    actions: list[Action] = []
    for t, v in enumerate(order):
        while any(
            slot is not None and _has_open_edge(graph, config.covered, slot, v)
            for _, slot in config.stack
        ):
            config = apply(config, Pop())
            actions.append(Pop())
        choice = None
        best = -1.0
        for i in range(1, k + 1):
            occupant = config.cache[i - 1]
            if occupant is not None and _has_open_edge(graph, config.covered, occupant, v):
                continue  # evicting a neighbour of v loses that edge for good
            need = INFINITE if occupant is None else _next_open_need(graph, config, occupant, position, t)
            if need > best:
                best, choice = need, i
        if choice is None:
            return None
        config = apply(config, Push(choice))
        actions.append(Push(choice))
    while config.stack:
        config = apply(config, Pop())
        actions.append(Pop())
    if len(config.covered) != len(graph.edges):
        return None
    return actions


def _search_actions(graph: AmrGraph, order: list[int], k: int, budget: int) -> list[Action] | None:
    """Exhaustive push-level search for any covering run (pops only before pushes).

    Sound prunings only: never retire a concept with an uncovered incident
    edge, never evict a cache concept adjacent to the incoming one.
    """
    n = graph.n
    n_edges = len(graph.edges)
    seen: set = set()
    expansions = 0

    def open_incident(covered: frozenset[int], u: int) -> bool:
        return any(eid not in covered for eid in graph.incident[u])

    def recurse(t: int, config: ParserConfiguration) -> list[Action] | None:
        nonlocal expansions
        if t == n:
            return [] if len(config.covered) == n_edges else None
        key = (t, config.cache, config.stack, config.covered)
        if key in seen:
            return None
        seen.add(key)
        expansions += 1
        if expansions > budget:
            raise TreewidthExceeded(
                f"search budget exhausted after {budget} states (graph too large?)"
            )
        v = order[t]
        for i in range(1, k + 1):
            occupant = config.cache[i - 1]
            if occupant is not None and _has_open_edge(graph, config.covered, occupant, v):
                continue
            tail = recurse(t + 1, apply(config, Push(i)))
            if tail is not None:
                return [Push(i)] + tail
        if config.stack:
            doomed = config.cache[-1]
            if doomed is None or not open_incident(config.covered, doomed):
                tail = recurse(t, apply(config, Pop()))
                if tail is not None:
                    return [Pop()] + tail
        return None

    result = recurse(0, init_config(graph, order, k))
    if result is None:
        return None
    # run out the stack
    config = init_config(graph, order, k)
    for action in result:
        config = apply(config, action)
    return result + [Pop()] * len(config.stack)


def extract_actions(
    graph: AmrGraph, order: list[int], k: int, search_budget: int = 500_000
) -> list[Action]:
    """Complete covering action sequence for the order, or TreewidthExceeded."""
    actions = _greedy_actions(graph, order, k)
    if actions is not None:
        return actions
    found = _search_actions(graph, order, k, search_budget)
    if found is None:
        raise TreewidthExceeded(
            f"no run with cache size {k} covers all {len(graph.edges)} edges for this order"
        )
    return found


def extract_trace(example: AlignedExample, k: int, search_budget: int = 500_000) -> OracleTrace:
    order = buffer_order(example)
    span_by_concept = attach_unaligned(example, order)
    texts = [""] * example.graph.n
    for concept, text in zip(order, span_by_concept):
        texts[concept] = text
    actions = extract_actions(example.graph, order, k, search_budget)
    return OracleTrace(
        graph=example.graph,
        k=k,
        buffer_order=tuple(order),
        actions=tuple(actions),
        span_texts=tuple(texts),
    )


def verify_trace(trace: OracleTrace) -> bool:
    """Replay the actions: legal throughout, terminal at the end, all edges covered."""
    try:
        config = init_config(trace.graph, list(trace.buffer_order), trace.k)
        for action in trace.actions:
            config = apply(config, action)
    except (ValueError, IndexError):
        return False
    return is_terminal(config) and len(config.covered) == len(trace.graph.edges)


# ---------------------------------------------------------------------------
# Sequence targets derived from a trace.

from .corpus import PHRASE_END, POP_TOKEN, PUSH_TOKEN  # noqa: E402


def build_interleaved_target(trace: OracleTrace) -> list[str]:
    """Action/word sequence: each Push emits its span then </ph> (skipped when
    the span is empty), Pops appear in place."""
    out: list[str] = []
    pushes = iter(trace.buffer_order)
    for action in trace.actions:
        if isinstance(action, Push):
            words = trace.span_texts[next(pushes)].split()
            out.append(PUSH_TOKEN)
            if words:
                out.extend(words)
                out.append(PHRASE_END)
        else:
            out.append(POP_TOKEN)
    return out


def split_interleaved(tokens: list[str]) -> tuple[list[str], list[list[str]]]:
    """Inverse of build_interleaved_target: action kinds and per-Push spans.

    Raises ValueError on sequences no trace can produce (words with no open
    span, dangling </ph>).
    """
    kinds: list[str] = []
    spans: list[list[str]] = []
    open_span = False
    for tok in tokens:
        if tok == PUSH_TOKEN:
            kinds.append(PUSH_TOKEN)
            spans.append([])
            open_span = True
        elif tok == POP_TOKEN:
            kinds.append(POP_TOKEN)
            open_span = False
        elif tok == PHRASE_END:
            if not open_span or not spans[-1]:
                raise ValueError("</ph> without an open non-empty span")
            open_span = False
        else:
            if not open_span:
                raise ValueError(f"word {tok!r} outside any span")
            spans[-1].append(tok)
    return kinds, spans


def pointer_concepts(trace: OracleTrace) -> list[int]:
    """The concepts the word pointer walks: push order minus empty spans."""
    return [v for v in trace.buffer_order if trace.span_texts[v]]


def build_increment_sequence(trace: OracleTrace) -> list[int]:
    """Binary pointer increments, one per word: 1 when the word opens a new
    concept's span (except at the first word)."""
    r: list[int] = []
    for concept in pointer_concepts(trace):
        words = trace.span_texts[concept].split()
        for j, _ in enumerate(words):
            r.append(1 if j == 0 and r else 0)
    return r
