"""Action-conditioned decoder: teacher-forced loss, per-step heads, beam search."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amrgen.conditioned import (
    POP_ID,
    PUSH_ID,
    action_context,
    english_step,
    generate_conditioned,
    increment_logits,
    loss_conditioned,
    predict_action,
    predict_indices,
)
from amrgen.corpus import EOS, PAD, PHRASE_END, POP_TOKEN, PUSH_TOKEN, UNK, synthesize_example
from amrgen.models import EmptyBuffer, ModelDims, NoCompleteHypothesis, build_model, train_model
from amrgen.oracle import build_increment_sequence, extract_trace, pointer_concepts
from amrgen.tensors import affine, concat, constant, lstm_step, row, softmax
from amrgen.transitions import Pop, Push, apply, init_config, push_at

from helpers import cat_example, center_example

DIMS = ModelDims(hidden=8, emb_dim=4, edge_dim=3, enc_steps=1, cache_size=3)
TRAIN_DIMS = ModelDims(hidden=16, emb_dim=8, edge_dim=4, enc_steps=1, cache_size=3)

CAT_SENTENCE = ["the", "cat", "slept", "."]


def center_model(seed=0):
    ex = center_example()
    return build_model("conditioned", DIMS, [ex], seed=seed), ex


def zeroed(model):
    for name in model.store.names():
        model.store[name].data[:] = 0.0
    return model


_TRAINED = {}


def trained_cat():
    """Overfit the one-sentence corpus once and share the model across tests."""
    if "model" not in _TRAINED:
        ex = cat_example()
        trace = extract_trace(ex, k=3)
        model = build_model("conditioned", TRAIN_DIMS, [ex], seed=0)
        train_model(model, [ex], [trace], loss_conditioned, epochs=300, stop_accuracy=1.0)
        _TRAINED["model"] = model
        _TRAINED["example"] = ex
        _TRAINED["trace"] = trace
    return _TRAINED["model"], _TRAINED["example"], _TRAINED["trace"]


def zero_state(h):
    return constant(np.zeros(h)), constant(np.zeros(h))


# ---------------------------------------------------------------------------
# Teacher-forced loss.


def test_uniform_loss_matches_counting_argument():
    # With every parameter at zero each head is uniform over its unmasked
    # support, so the loss is a pure count of choices along the worked run:
    # the first Push and all five Pops are forced, four action steps are
    # binary; the five pushes see buffers of size 5..1 and pick one of k=3
    # slots; seven increment steps are binary (the eighth is pinned at the
    # last concept); nine word steps (eight words plus the end marker) each
    # see the 11 unmasked entries of the 16-token vocabulary.
    model, ex = center_model()
    zeroed(model)
    trace = extract_trace(ex, k=3)
    loss, stats = loss_conditioned(model, ex, trace)
    expected = 11 * math.log(2) + math.log(120) + 5 * math.log(3) + 9 * math.log(11)
    assert float(loss.data) == pytest.approx(expected, rel=1e-12)
    totals = {key: tally.total for key, tally in stats.items()}
    assert totals == {"action": 10, "buffer_index": 5, "cache_index": 5, "word": 9, "increment": 8}


def test_loss_decomposes_into_stage_terms():
    # The loss must factor into per-step negative log probabilities with no
    # cross terms; replay the whole computation from the public pieces.
    model, ex = center_model(seed=5)
    trace = extract_trace(ex, k=3)
    encoded = model.encode(trace.graph)
    h = model.dims.hidden
    emb = model.param("emb")
    total = 0.0

    config = init_config(trace.graph, list(trace.buffer_order), trace.k)
    l, s = zero_state(h)
    prev = model.token_id(PAD)
    for action in trace.actions:
        c = action_context(model, encoded, config, s)
        x = affine(model.param("cond/act/Wx"), concat([row(emb, prev), c]), model.param("cond/act/bx"))
        l, s = lstm_step((l, s), x, model.lstm("cond/act"))
        logits, mask = predict_action(model, config, c, l)
        probs = softmax(logits, mask).data
        if isinstance(action, Push):
            total -= math.log(probs[PUSH_ID])
            beta, eta, rows = predict_indices(model, encoded, config, s)
            total -= math.log(softmax(beta).data[rows.index(config.buffer[0])])
            total -= math.log(softmax(eta).data[action.index - 1])
            prev = model.token_id(PUSH_TOKEN)
        else:
            total -= math.log(probs[POP_ID])
            prev = model.token_id(POP_TOKEN)
        config = apply(config, action)

    pointer = pointer_concepts(trace)
    r_star = build_increment_sequence(trace)
    p = 0
    l, s = zero_state(h)
    prev = model.token_id(PAD)
    for j, word in enumerate(list(ex.tokens) + [EOS]):
        if j < len(ex.tokens):
            r_logits, r_mask = increment_logits(model, encoded, pointer, p, s)
            total -= math.log(softmax(r_logits, r_mask).data[r_star[j]])
            p += r_star[j]
        c = affine(model.param("cond/eng/We"), row(encoded.states, pointer[p]), model.param("cond/eng/be"))
        x = affine(model.param("cond/eng/Wx"), concat([row(emb, prev), c]), model.param("cond/eng/bx"))
        l, s = lstm_step((l, s), x, model.lstm("cond/eng"))
        logits = affine(model.param("cond/eng/Wf"), concat([l, c]), model.param("cond/eng/bf"))
        word_id = model.token_id(word)
        total -= math.log(softmax(logits, model.word_mask).data[word_id])
        prev = word_id

    loss, _ = loss_conditioned(model, ex, trace)
    assert float(loss.data) == pytest.approx(total, rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_loss_tally_totals_match_trace_shape(seed):
    import random

    ex = synthesize_example(random.Random(seed), max_concepts=5)
    trace = extract_trace(ex, k=3)
    model = build_model("conditioned", DIMS, [ex], seed=0)
    loss, stats = loss_conditioned(model, ex, trace)
    n, m = ex.graph.n, len(ex.tokens)
    assert np.isfinite(loss.data)
    assert stats["action"].total == 2 * n
    assert stats["buffer_index"].total == n
    assert stats["cache_index"].total == n
    assert stats["increment"].total == m
    assert stats["word"].total == m + 1


# ---------------------------------------------------------------------------
# Per-step heads.


def test_action_mask_forces_the_only_legal_action():
    model, ex = center_model(seed=3)
    encoded = model.encode(ex.graph)
    h = model.dims.hidden
    l, s = zero_state(h)

    config = init_config(ex.graph, [1, 4, 0, 2, 3], 3)
    logits, mask = predict_action(model, config, action_context(model, encoded, config, s), l)
    assert list(mask) == [True, False]  # empty stack: Push is forced
    assert softmax(logits, mask).data == pytest.approx([1.0, 0.0])

    config = apply(config, Push(1))
    _, mask = predict_action(model, config, action_context(model, encoded, config, s), l)
    assert list(mask) == [True, True]

    for _ in range(4):
        config = apply(config, Push(1))
    logits, mask = predict_action(model, config, action_context(model, encoded, config, s), l)
    assert list(mask) == [False, True]  # empty buffer: Pop is forced
    assert softmax(logits, mask).data == pytest.approx([0.0, 1.0])


def test_predict_indices_rows_and_empty_buffer():
    model, ex = center_model(seed=3)
    encoded = model.encode(ex.graph)
    s = constant(np.zeros(model.dims.hidden))
    config = init_config(ex.graph, [1, 4, 0, 2, 3], 3)
    for _ in range(4):
        config = apply(config, Push(1))

    beta, eta, rows = predict_indices(model, encoded, config, s)
    assert rows == [3]  # one buffer entry left, listed by concept id
    assert softmax(beta).data == pytest.approx([1.0])
    assert eta.data.shape == (3,)

    config = apply(config, Push(1))
    with pytest.raises(EmptyBuffer):
        predict_indices(model, encoded, config, s)


def test_increment_mask_pins_the_last_concept():
    model, ex = center_model(seed=3)
    encoded = model.encode(ex.graph)
    s = constant(np.zeros(model.dims.hidden))
    pointer = [1, 4, 0, 3]

    _, mask = increment_logits(model, encoded, pointer, 0, s)
    assert list(mask) == [True, True]

    logits, mask = increment_logits(model, encoded, pointer, 3, s)
    assert list(mask) == [True, False]
    assert softmax(logits, mask).data == pytest.approx([1.0, 0.0])


def test_english_step_distributions_normalize_and_respect_mask():
    model, ex = center_model(seed=3)
    encoded = model.encode(ex.graph)
    state = zero_state(model.dims.hidden)
    pointer = [1, 4, 0, 3]
    r_probs, p, _, word_probs = english_step(model, encoded, pointer, 0, model.token_id(PAD), state)
    assert float(np.sum(r_probs.data)) == pytest.approx(1.0, abs=1e-12)
    assert float(np.sum(word_probs.data)) == pytest.approx(1.0, abs=1e-12)
    assert p == int(np.argmax(r_probs.data))
    for banned in (PAD, UNK, PHRASE_END, PUSH_TOKEN, POP_TOKEN):
        assert word_probs.data[model.token_id(banned)] == 0.0


# ---------------------------------------------------------------------------
# Overfitting and generation.


def test_teacher_forcing_reaches_perfect_accuracy():
    model, ex, trace = trained_cat()
    _, stats = loss_conditioned(model, ex, trace)
    assert all(tally.accuracy == 1.0 for tally in stats.values())


def test_greedy_decode_reproduces_training_sentence():
    model, ex, _ = trained_cat()
    assert generate_conditioned(model, ex.graph, beam=1) == CAT_SENTENCE


def greedy_reference(model, graph, max_words):
    """Width-1 decoding from the public per-step functions only."""
    encoded = model.encode(graph)
    h = model.dims.hidden
    emb = model.param("emb")
    config = init_config(graph, sorted(range(graph.n)), model.dims.cache_size)
    l, s = zero_state(h)
    prev = model.token_id(PAD)
    pushed = []
    for _ in range(2 * graph.n):
        c = action_context(model, encoded, config, s)
        x = affine(model.param("cond/act/Wx"), concat([row(emb, prev), c]), model.param("cond/act/bx"))
        l, s = lstm_step((l, s), x, model.lstm("cond/act"))
        logits, mask = predict_action(model, config, c, l)
        probs = softmax(logits, mask).data
        best = None
        if mask[POP_ID]:
            best = (math.log(probs[POP_ID]), Pop(), None)
        if mask[PUSH_ID]:
            beta, eta, rows = predict_indices(model, encoded, config, s)
            beta_lp = np.log(softmax(beta).data)
            eta_lp = np.log(softmax(eta).data)
            for row_pos, vertex in enumerate(rows):
                for idx in range(1, model.dims.cache_size + 1):
                    score = math.log(probs[PUSH_ID]) + beta_lp[row_pos] + eta_lp[idx - 1]
                    if best is None or score > best[0]:
                        best = (score, Push(idx), vertex)
        _, act, vertex = best
        if vertex is None:
            config = apply(config, act)
            prev = model.token_id(POP_TOKEN)
        else:
            config = push_at(config, config.buffer.index(vertex), act.index)
            pushed.append(vertex)
            prev = model.token_id(PUSH_TOKEN)

    words = []
    p = 0
    state = zero_state(h)
    prev = model.token_id(PAD)
    eos = model.token_id(EOS)
    for _ in range(max_words + 1):
        _, p, state, word_probs = english_step(model, encoded, pushed, p, prev, state)
        wid = int(np.argmax(word_probs.data))
        if wid == eos:
            return words
        words.append(model.vocab.token(wid))
        prev = wid
    raise NoCompleteHypothesis("reference ran out of budget")


def test_beam_one_equals_stepwise_greedy():
    model, ex, _ = trained_cat()
    budget = 4 * ex.graph.n + 10
    assert generate_conditioned(model, ex.graph, beam=1) == greedy_reference(model, ex.graph, budget)

    # also on arbitrary weights (these seeds happen to stop immediately)
    for seed, example in ((10, cat_example()), (2, center_example())):
        untrained = build_model("conditioned", DIMS, [example], seed=seed)
        budget = 4 * example.graph.n + 10
        got = generate_conditioned(untrained, example.graph, beam=1)
        assert got == greedy_reference(untrained, example.graph, budget)


def test_length_reward_prefers_longer_hypotheses():
    model, ex, _ = trained_cat()
    plain = generate_conditioned(model, ex.graph, beam=3)
    rewarded = generate_conditioned(model, ex.graph, beam=3, len_reward=1.0)
    assert len(rewarded) > len(plain)


def test_decoding_error_paths():
    model, ex, _ = trained_cat()
    with pytest.raises(ValueError):
        generate_conditioned(model, ex.graph, beam=0)
    with pytest.raises(NoCompleteHypothesis):
        generate_conditioned(model, ex.graph, beam=1, max_words=0)
    # near-uniform word heads keep picking non-terminal words forever
    stuck = build_model("conditioned", DIMS, [ex], seed=0)
    with pytest.raises(NoCompleteHypothesis):
        generate_conditioned(stuck, ex.graph, beam=1)
