"""Aligned sentence/graph corpora, vocabularies, and pretrained embeddings.

Corpus file format (UTF-8, blank-line-separated blocks):
  line 1            space-separated sentence tokens
  following lines   one PENMAN graph (may span several lines)
  trailing lines    `ALIGN <start> <end> <conceptIndex>` token spans, end exclusive

A concept may appear in at most one ALIGN line, spans must be disjoint, and
concept indices are positional (PENMAN definition order).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .graphs import AmrGraph, MalformedPenman, dfs_preorder, parse_penman, preprocess_labels


class BadSpan(ValueError):
    pass


class UnknownConcept(ValueError):
    pass


class EmptySentence(ValueError):
    pass


class EmptyCorpus(ValueError):
    pass


class NoAlignedConcept(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


# Reserved vocabulary entries, in id order. </ph> closes a word span, Push/Pop
# are the transition actions (embedded as input tokens), </s> ends a sentence.
PAD, UNK, PHRASE_END, PUSH_TOKEN, POP_TOKEN, EOS = "<pad>", "<unk>", "</ph>", "Push", "Pop", "</s>"
RESERVED = (PAD, UNK, PHRASE_END, PUSH_TOKEN, POP_TOKEN, EOS)


@dataclass(frozen=True)
class AlignedExample:
    """One sentence paired with its graph and concept-to-span alignment."""

    tokens: tuple[str, ...]
    graph: AmrGraph
    spans: tuple[tuple[int, int] | None, ...]  # per concept id, end exclusive

    @property
    def aligned_ids(self) -> list[int]:
        return [i for i, s in enumerate(self.spans) if s is not None]

    def span_text(self, concept: int) -> str:
        span = self.spans[concept]
        if span is None:
            return ""
        return " ".join(self.tokens[span[0] : span[1]])


def _parse_block(block: str) -> AlignedExample:
    lines = block.splitlines()
    if not lines or not lines[0].strip():
        raise EmptySentence("block has no token line")
    tokens = tuple(lines[0].split())
    if not tokens:
        raise EmptySentence("empty sentence")
    graph_lines, align_lines = [], []
    for line in lines[1:]:
        if line.startswith("ALIGN"):
            align_lines.append(line)
        elif line.strip():
            if align_lines:
                raise MalformedPenman("graph text after ALIGN lines")
            graph_lines.append(line)
    if not graph_lines:
        raise MalformedPenman("block has no graph")
    graph = preprocess_labels(parse_penman("\n".join(graph_lines)))

    spans: list[tuple[int, int] | None] = [None] * graph.n
    for line in align_lines:
        parts = line.split()
        if len(parts) != 4:
            raise BadSpan(f"malformed ALIGN line: {line!r}")
        try:
            start, end, concept = int(parts[1]), int(parts[2]), int(parts[3])
        except ValueError as exc:
            raise BadSpan(f"non-integer ALIGN field: {line!r}") from exc
        if not 0 <= concept < graph.n:
            raise UnknownConcept(f"concept index {concept} out of range")
        if not (0 <= start < end <= len(tokens)):
            raise BadSpan(f"span ({start}, {end}) outside sentence of {len(tokens)} tokens")
        if spans[concept] is not None:
            raise BadSpan(f"concept {concept} aligned twice")
        spans[concept] = (start, end)

    claimed = sorted(s for s in spans if s is not None)
    for (s1, e1), (s2, e2) in zip(claimed, claimed[1:]):
        if s2 < e1:
            raise BadSpan(f"overlapping spans ({s1}, {e1}) and ({s2}, {e2})")
    return AlignedExample(tokens=tokens, graph=graph, spans=tuple(spans))


def load_corpus(text: str) -> list[AlignedExample]:
    """Parse a whole corpus file; raises EmptyCorpus when no block is present."""
    import re

    blocks = [b for b in re.split(r"\n\s*\n", text) if b.strip()]
    if not blocks:
        raise EmptyCorpus("no examples in corpus")
    return [_parse_block(b) for b in blocks]


def attach_unaligned(example: AlignedExample, order: list[int]) -> list[str]:
    """Per-concept span texts with unaligned tokens absorbed.

    Every token between two aligned spans joins the earlier aligned concept;
    tokens before the first aligned span join the first aligned concept.
    Unaligned concepts get the empty string. When `order` lists the aligned
    concepts in span order, concatenating the results reproduces the sentence.
    """
    aligned = sorted(example.aligned_ids, key=lambda c: example.spans[c][0])
    if not aligned:
        raise NoAlignedConcept("no concept has a token span")
    texts = {c: "" for c in range(example.graph.n)}
    starts = [example.spans[c][0] for c in aligned]
    bounds = starts[1:] + [len(example.tokens)]
    for idx, concept in enumerate(aligned):
        lo = 0 if idx == 0 else starts[idx]
        texts[concept] = " ".join(example.tokens[lo : bounds[idx]])
    missing = [c for c in order if c not in texts]
    if missing:
        raise UnknownConcept(f"order mentions unknown concepts {missing}")
    return [texts[c] for c in order]


@dataclass(frozen=True)
class Vocabulary:
    """Token-to-id map with reserved ids for PAD/UNK/</ph>/Push/Pop/</s>."""

    tokens: tuple[str, ...]
    index: dict[str, int] = field(repr=False, hash=False, compare=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def token(self, i: int) -> str:
        return self.tokens[i]

    @classmethod
    def build(cls, examples: list[AlignedExample]) -> "Vocabulary":
        seen = set(RESERVED)
        extra = []
        for ex in examples:
            for tok in list(ex.tokens) + list(ex.graph.concepts):
                if tok not in seen:
                    seen.add(tok)
                    extra.append(tok)
        return cls(tokens=RESERVED + tuple(sorted(extra)))


def edge_label_vocab(examples: list[AlignedExample]) -> tuple[str, ...]:
    """Edge label inventory; slot 0 is the unknown-label fallback."""
    labels = sorted({label for ex in examples for _, _, label in ex.graph.edges})
    return (UNK,) + tuple(labels)


@dataclass(frozen=True)
class EmbeddingTable:
    """Pretrained word vectors; tokens present here stay frozen in training."""

    dim: int
    vectors: dict[str, tuple[float, ...]]

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str) -> tuple[float, ...] | None:
        return self.vectors.get(token)


def load_embeddings(text: str) -> EmbeddingTable:
    """Parse `token v1 ... vD` lines; D is fixed by the first line."""
    vectors: dict[str, tuple[float, ...]] = {}
    dim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DimensionMismatch(f"line {lineno}: no vector components")
        token, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise DimensionMismatch(
                f"line {lineno}: expected {dim} components, got {len(values)}"
            )
        try:
            vectors[token] = tuple(float(v) for v in values)
        except ValueError as exc:
            raise DimensionMismatch(f"line {lineno}: non-numeric component") from exc
    if dim is None:
        raise DimensionMismatch("empty embedding file")
    return EmbeddingTable(dim=dim, vectors=vectors)


def format_corpus(examples: list[AlignedExample]) -> str:
    """Render examples back into the corpus file format.

    Serialization defines concepts in depth-first order, and reparsing assigns
    ids positionally, so ALIGN lines are written under that renumbering.
    """
    from .graphs import serialize

    blocks = []
    for ex in examples:
        renumber = {old: new for new, old in enumerate(dfs_preorder(ex.graph))}
        lines = [" ".join(ex.tokens), serialize(ex.graph)]
        for concept, span in enumerate(ex.spans):
            if span is not None:
                lines.append(f"ALIGN {span[0]} {span[1]} {renumber[concept]}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------------------
# Synthetic corpora for tests and the desk-scale training recipes.

_CONCEPT_POOL = [
    "abide", "bloom", "cart", "dune", "ember", "fjord", "glint", "harbor",
    "ingot", "jetty", "kiln", "lagoon", "marsh", "nectar", "orchid", "pylon",
    "quarry", "ripple", "shale", "thicket", "umber", "vale", "wharf", "xylem",
    "yonder", "zephyr", "basalt", "cinder", "delta", "ewer",
]
_RELATION_POOL = ["ARG0", "ARG1", "mod", "time", "manner", "part", "source", "topic"]


def _random_tree(rng: random.Random, n: int) -> AmrGraph:
    labels = rng.sample(_CONCEPT_POOL, n)
    edges = []
    for child in range(1, n):
        parent = rng.randrange(child)
        edges.append((parent, child, rng.choice(_RELATION_POOL)))
    return AmrGraph(concepts=tuple(labels), edges=tuple(edges), root=0)


def synthesize_example(
    rng: random.Random,
    max_concepts: int = 8,
    min_concepts: int = 2,
    aligned: bool = True,
) -> AlignedExample:
    """One random tree-shaped example with a template sentence.

    The sentence lists each concept's word form(s) in depth-first order, so
    spans are contiguous and the whole sentence is covered when `aligned`.
    With aligned=False a random non-leaf concept loses its span (its tokens
    are removed from the sentence), exercising the unaligned machinery.
    """
    n = rng.randint(min_concepts, max_concepts)
    graph = _random_tree(rng, n)
    order = dfs_preorder(graph)
    drop = None
    if not aligned and n >= 3:
        internal = [v for v in order[1:] if graph.out_edges[v]]
        drop = rng.choice(internal) if internal else order[1]
    tokens: list[str] = []
    spans: list[tuple[int, int] | None] = [None] * n
    for v in order:
        if v == drop:
            continue
        words = [graph.concepts[v]]
        if len(graph.concepts[v]) % 2 == 0:  # deterministic two-word concepts
            words.append(graph.concepts[v] + "ish")
        spans[v] = (len(tokens), len(tokens) + len(words))
        tokens.extend(words)
    return AlignedExample(tokens=tuple(tokens), graph=graph, spans=tuple(spans))


def synthesize_corpus(
    n_examples: int,
    seed: int,
    max_concepts: int = 8,
    min_concepts: int = 2,
    aligned: bool = True,
    distinct_sentences: bool = False,
) -> list[AlignedExample]:
    rng = random.Random(seed)
    out: list[AlignedExample] = []
    sentences = set()
    guard = 0
    while len(out) < n_examples:
        guard += 1
        if guard > 100 * n_examples:
            raise EmptyCorpus("could not synthesize enough distinct examples")
        ex = synthesize_example(rng, max_concepts, min_concepts, aligned)
        if distinct_sentences:
            if ex.tokens in sentences:
                continue
            sentences.add(ex.tokens)
        out.append(ex)
    return out
