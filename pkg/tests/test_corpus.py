import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amrgen.corpus import (
    RESERVED,
    UNK,
    BadSpan,
    DimensionMismatch,
    EmptyCorpus,
    EmptySentence,
    NoAlignedConcept,
    UnknownConcept,
    Vocabulary,
    attach_unaligned,
    edge_label_vocab,
    format_corpus,
    load_corpus,
    load_embeddings,
    synthesize_corpus,
    synthesize_example,
)
from amrgen.graphs import dfs_preorder
from helpers import CENTER_BLOCK, center_example, isomorphic

# Table 1 word spans given directly in the block instead of minimal ones.
CENTER_WIDE_BLOCK = """\
the center will formally open in 2009 .
(o / open-01
   :ARG1 (c / center)
   :time (d / date-entity
      :year (2 / 2009))
   :manner (f / formal))
ALIGN 0 3 1
ALIGN 3 4 4
ALIGN 4 6 0
ALIGN 6 8 3
"""


def test_worked_example_block():
    examples = load_corpus(CENTER_BLOCK)
    assert len(examples) == 1
    ex = examples[0]
    assert ex.tokens == ("the", "center", "will", "formally", "open", "in", "2009", ".")
    assert ex.graph.concepts == ("open", "center", "date-entity", "2009", "formal")
    assert ex.spans[2] is None  # date-entity has no tokens
    assert ex.aligned_ids == [0, 1, 3, 4]
    assert ex.span_text(1) == "center"
    assert ex.span_text(2) == ""


def test_wide_spans_block():
    ex = load_corpus(CENTER_WIDE_BLOCK)[0]
    assert ex.spans[1] == (0, 3)
    assert ex.span_text(0) == "open in"
    assert ex.span_text(3) == "2009 ."


def test_minimal_block():
    ex = load_corpus("hi\n(a / alpha)\nALIGN 0 1 0\n")[0]
    assert ex.tokens == ("hi",)
    assert ex.spans == ((0, 1),)


@pytest.mark.parametrize("align, err", [
    ("ALIGN 5 9 0", BadSpan),          # end past the sentence
    ("ALIGN 2 2 0", BadSpan),          # empty span
    ("ALIGN 0 1 7", UnknownConcept),   # concept id out of range
    ("ALIGN 0 1 0\nALIGN 0 1 1", BadSpan),  # overlapping spans
    ("ALIGN 0 1 0\nALIGN 1 2 0", BadSpan),  # concept aligned twice
    ("ALIGN 0 one 0", BadSpan),
])
def test_bad_align_lines(align, err):
    block = "a b c d e f\n(x / alpha :mod (y / beta))\n" + align + "\n"
    with pytest.raises(err):
        load_corpus(block)


def test_empty_inputs():
    with pytest.raises(EmptyCorpus):
        load_corpus("\n\n")
    with pytest.raises(EmptySentence):
        load_corpus("   \n(a / alpha)")


def test_attach_unaligned_worked_example():
    ex = center_example()
    # push order from the worked run: center, formal, open, date-entity, 2009
    texts = attach_unaligned(ex, [1, 4, 0, 2, 3])
    assert texts == ["the center will", "formally", "open in", "", "2009 ."]


def test_attach_unaligned_fully_aligned_unchanged():
    ex = load_corpus("a b\n(x / alpha :mod (y / beta))\nALIGN 0 1 0\nALIGN 1 2 1\n")[0]
    assert attach_unaligned(ex, [0, 1]) == ["a", "b"]


def test_attach_unaligned_single_owner():
    ex = load_corpus("a b c d\n(x / alpha :mod (y / beta))\nALIGN 1 2 1\n")[0]
    assert attach_unaligned(ex, [1, 0]) == ["a b c d", ""]


def test_attach_unaligned_no_aligned_concept():
    ex = synthesize_example(random.Random(0))
    stripped = type(ex)(tokens=ex.tokens, graph=ex.graph, spans=(None,) * ex.graph.n)
    with pytest.raises(NoAlignedConcept):
        attach_unaligned(stripped, list(range(ex.graph.n)))


@settings(max_examples=80, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.booleans())
def test_attach_unaligned_concatenation_reproduces_sentence(seed, aligned):
    ex = synthesize_example(random.Random(seed), aligned=aligned)
    order = sorted(ex.aligned_ids, key=lambda c: ex.spans[c][0])
    order += [c for c in range(ex.graph.n) if ex.spans[c] is None]
    texts = attach_unaligned(ex, order)
    rebuilt = " ".join(t for t in texts if t)
    assert rebuilt == " ".join(ex.tokens)


def test_vocabulary_reserved_ids():
    vocab = Vocabulary.build(load_corpus(CENTER_BLOCK))
    for i, tok in enumerate(RESERVED):
        assert vocab.token(i) == tok
        assert vocab.id(tok) == i
    assert vocab.id("no-such-token") == vocab.id(UNK)
    # bijection over the whole table
    assert sorted(vocab.index.values()) == list(range(len(vocab)))
    assert {vocab.token(i) for i in range(len(vocab))} == set(vocab.tokens)
    # sentence tokens and concept labels both enter the vocabulary
    assert "will" in vocab.index and "date-entity" in vocab.index


def test_edge_label_vocab():
    labels = edge_label_vocab(load_corpus(CENTER_BLOCK))
    assert labels[0] == UNK
    assert set(labels[1:]) == {"ARG1", "time", "year", "manner"}


EMB_TEXT = """\
open 0.1 0.2 0.3 0.4
center -1 0 1 2
the 0 0 0 0.5
"""


def test_load_embeddings():
    table = load_embeddings(EMB_TEXT)
    assert table.dim == 4
    assert table.get("open") == (0.1, 0.2, 0.3, 0.4)
    assert table.get("center") == (-1.0, 0.0, 1.0, 2.0)
    assert "the" in table and "cat" not in table
    assert table.get("cat") is None


@pytest.mark.parametrize("text", [
    "open 0.1 0.2 0.3 0.4\ncenter 1 2 3\n",  # short vector
    "open\n",                                  # no components
    "open 0.1 x 0.3 0.4\n",                    # non-numeric
    "",
])
def test_load_embeddings_errors(text):
    with pytest.raises(DimensionMismatch):
        load_embeddings(text)


def test_format_corpus_round_trip():
    # reloading renumbers concepts into depth-first order; compare through
    # that permutation rather than positionally
    examples = synthesize_corpus(6, seed=3, aligned=False)
    again = load_corpus(format_corpus(examples))
    assert len(again) == len(examples)
    for before, after in zip(examples, again):
        assert after.tokens == before.tokens
        assert isomorphic(before.graph, after.graph)
        renumber = {old: new for new, old in enumerate(dfs_preorder(before.graph))}
        for old, span in enumerate(before.spans):
            new = renumber[old]
            assert after.spans[new] == span
            assert after.graph.concepts[new] == before.graph.concepts[old]
    # a second round trip is a fixed point: ids are already depth-first
    assert load_corpus(format_corpus(again)) == again


def test_synthesize_corpus_distinct_sentences():
    corpus = synthesize_corpus(40, seed=1, distinct_sentences=True)
    sentences = [ex.tokens for ex in corpus]
    assert len(set(sentences)) == len(sentences)
