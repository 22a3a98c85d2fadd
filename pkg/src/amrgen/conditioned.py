"""Action-conditioned decoder: actions first, then words.

The action recurrence walks the parser through its 2n steps; the English
recurrence then emits the sentence with a hard-attention pointer over the
concepts chosen during the action stage. Index predictions score buffer
rows in ascending concept-id order, so the training target is the position
of the gold vertex rather than a constant row.

Ordering inside an English step: the increment is predicted from the
previous hidden state, the pointer advances, and the word is predicted
from the state after consuming the pointed concept's context. The final
end-of-sentence step carries no increment term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EOS, PAD, POP_TOKEN, PUSH_TOKEN, AlignedExample
from .encoder import EncodedGraph
from .graphs import AmrGraph
from .models import EmptyBuffer, GenerationModel, NoCompleteHypothesis, Tally
from .oracle import OracleTrace, build_increment_sequence, pointer_concepts
from .tensors import Tensor, affine, concat, constant, lstm_step, matmul, row, softmax, softmax_xent, sum_tensors, take_rows, vstack
from .transitions import SENTINEL, ParserConfiguration, Pop, Push, init_config, push_at, apply

PUSH_ID, POP_ID = 0, 1  # action head output order

_LOG_FLOOR = 1e-300  # log of a masked-out probability


def _zero_state(h: int) -> tuple[Tensor, Tensor]:
    return constant(np.zeros(h)), constant(np.zeros(h))


def _vertex_state(model: GenerationModel, encoded: EncodedGraph, vertex: int | None) -> Tensor:
    if vertex is SENTINEL:
        return model.param("cond/null")
    return row(encoded.states, vertex)


def action_context(model: GenerationModel, encoded: EncodedGraph,
                   config: ParserConfiguration, s_prev: Tensor) -> Tensor:
    """Stack-top and rightmost-cache states plus the running hidden state."""
    top = _vertex_state(model, encoded, config.stack[-1][1] if config.stack else SENTINEL)
    right = _vertex_state(model, encoded, config.cache[-1])
    return affine(model.param("cond/act/Wa"), concat([top, right, s_prev]), model.param("cond/act/ba"))


def action_mask(config: ParserConfiguration) -> np.ndarray:
    return np.array([bool(config.buffer), bool(config.stack)])


def predict_action(model: GenerationModel, config: ParserConfiguration,
                   c: Tensor, l: Tensor) -> tuple[Tensor, np.ndarray]:
    """Two logits (Push, Pop) and the legality mask."""
    logits = affine(model.param("cond/act/Wf"), concat([l, c]), model.param("cond/act/bf"))
    return logits, action_mask(config)


def predict_indices(model: GenerationModel, encoded: EncodedGraph,
                    config: ParserConfiguration, s: Tensor) -> tuple[Tensor, Tensor, list[int]]:
    """Buffer-row and cache-slot logits; rows list ascending concept ids."""
    rows = sorted(config.buffer)
    if not rows:
        raise EmptyBuffer("index prediction with an empty buffer")
    beta = matmul(take_rows(encoded.states, rows), matmul(model.param("cond/Ubeta"), s))
    slots = vstack([_vertex_state(model, encoded, v) for v in config.cache])
    eta = matmul(slots, matmul(model.param("cond/Ueta"), s))
    return beta, eta, rows


def increment_logits(model: GenerationModel, encoded: EncodedGraph, pointer: list[int],
                     p: int, s_prev: Tensor) -> tuple[Tensor, np.ndarray]:
    """Two logits: stay at pointer[p] or advance to pointer[p+1]."""
    stay = row(encoded.states, pointer[p])
    advance = _vertex_state(model, encoded, pointer[p + 1] if p + 1 < len(pointer) else SENTINEL)
    logits = matmul(vstack([stay, advance]), matmul(model.param("cond/Ur"), s_prev))
    return logits, np.array([True, p + 1 < len(pointer)])


def _word_step(model: GenerationModel, encoded: EncodedGraph, pointer: list[int], p: int,
               prev_id: int, state: tuple[Tensor, Tensor]) -> tuple[tuple[Tensor, Tensor], Tensor]:
    """Advance the English recurrence one word; returns (new state, word logits)."""
    c = affine(model.param("cond/eng/We"), row(encoded.states, pointer[p]), model.param("cond/eng/be"))
    x = affine(model.param("cond/eng/Wx"), concat([row(model.param("emb"), prev_id), c]),
               model.param("cond/eng/bx"))
    l, s = lstm_step(state, x, model.lstm("cond/eng"))
    logits = affine(model.param("cond/eng/Wf"), concat([l, c]), model.param("cond/eng/bf"))
    return (l, s), logits


def english_step(model: GenerationModel, encoded: EncodedGraph, pointer: list[int], p: int,
                 prev_id: int, state: tuple[Tensor, Tensor]):
    """One greedy English step: increment distribution, advanced pointer,
    new recurrence state, and the word distribution."""
    r_logits, r_mask = increment_logits(model, encoded, pointer, p, state[1])
    r_probs = softmax(r_logits, r_mask)
    p = p + int(np.argmax(r_probs.data))
    state, logits = _word_step(model, encoded, pointer, p, prev_id, state)
    return r_probs, p, state, softmax(logits, model.word_mask)


def _masked_argmax(logits: Tensor, mask: np.ndarray | None) -> int:
    z = logits.data.copy()
    if mask is not None:
        z[~mask] = -np.inf
    return int(np.argmax(z))


def _log_probs(logits: Tensor, mask: np.ndarray | None) -> np.ndarray:
    return np.log(np.maximum(softmax(logits, mask).data, _LOG_FLOOR))


def loss_conditioned(model: GenerationModel, example: AlignedExample,
                     trace: OracleTrace) -> tuple[Tensor, dict[str, Tally]]:
    """Teacher-forced cross-entropy plus per-sequence-type prediction tallies."""
    h = model.dims.hidden
    encoded = model.encode(trace.graph)
    emb = model.param("emb")
    stats = {key: Tally() for key in ("action", "buffer_index", "cache_index", "word", "increment")}
    terms: list[Tensor] = []

    config = init_config(trace.graph, list(trace.buffer_order), trace.k)
    l, s = _zero_state(h)
    prev_id = model.token_id(PAD)
    for action in trace.actions:
        c = action_context(model, encoded, config, s)
        x = affine(model.param("cond/act/Wx"), concat([row(emb, prev_id), c]), model.param("cond/act/bx"))
        l, s = lstm_step((l, s), x, model.lstm("cond/act"))
        logits, mask = predict_action(model, config, c, l)
        target = PUSH_ID if isinstance(action, Push) else POP_ID
        terms.append(softmax_xent(logits, target, mask))
        stats["action"].add(_masked_argmax(logits, mask) == target)
        if isinstance(action, Push):
            beta, eta, rows = predict_indices(model, encoded, config, s)
            gold_row = rows.index(config.buffer[0])
            terms.append(softmax_xent(beta, gold_row))
            stats["buffer_index"].add(_masked_argmax(beta, None) == gold_row)
            terms.append(softmax_xent(eta, action.index - 1))
            stats["cache_index"].add(_masked_argmax(eta, None) == action.index - 1)
            prev_id = model.token_id(PUSH_TOKEN)
        else:
            prev_id = model.token_id(POP_TOKEN)
        config = apply(config, action)

    pointer = pointer_concepts(trace)
    r_star = build_increment_sequence(trace)
    words = list(example.tokens)
    p = 0
    l, s = _zero_state(h)
    prev_id = model.token_id(PAD)
    for j, word in enumerate(words + [EOS]):
        if j < len(words):  # the end-of-sentence step has no increment term
            r_logits, r_mask = increment_logits(model, encoded, pointer, p, s)
            terms.append(softmax_xent(r_logits, r_star[j], r_mask))
            stats["increment"].add(_masked_argmax(r_logits, r_mask) == r_star[j])
            p += r_star[j]
        (l, s), logits = _word_step(model, encoded, pointer, p, prev_id, (l, s))
        word_id = model.token_id(word)
        terms.append(softmax_xent(logits, word_id, model.word_mask))
        stats["word"].add(_masked_argmax(logits, model.word_mask) == word_id)
        prev_id = word_id
    return sum_tensors(terms), stats


# ---------------------------------------------------------------------------
# Generation: beam over actions, then beam over words.


@dataclass(frozen=True)
class _ActionHyp:
    score: float
    config: ParserConfiguration
    l: Tensor
    s: Tensor
    prev_id: int
    actions: tuple
    pushed: tuple[int, ...]


@dataclass(frozen=True)
class _WordHyp:
    score: float
    l: Tensor
    s: Tensor
    p: int
    prev_id: int
    words: tuple[str, ...]
    done: bool


def _decode_actions(model: GenerationModel, encoded: EncodedGraph, beam: int) -> list[_ActionHyp]:
    graph = encoded.graph
    h = model.dims.hidden
    order = sorted(range(graph.n))  # generation treats the buffer as a set
    config = init_config(graph, order, model.dims.cache_size)
    l0, s0 = _zero_state(h)
    hyps = [_ActionHyp(0.0, config, l0, s0, model.token_id(PAD), (), ())]
    push_id, pop_id = model.token_id(PUSH_TOKEN), model.token_id(POP_TOKEN)
    for _ in range(2 * graph.n):
        pool: list[_ActionHyp] = []
        for hyp in hyps:
            c = action_context(model, encoded, hyp.config, hyp.s)
            x = affine(model.param("cond/act/Wx"), concat([row(model.param("emb"), hyp.prev_id), c]),
                       model.param("cond/act/bx"))
            l, s = lstm_step((hyp.l, hyp.s), x, model.lstm("cond/act"))
            logits, mask = predict_action(model, hyp.config, c, l)
            logp = _log_probs(logits, mask)
            if mask[POP_ID]:
                pool.append(_ActionHyp(hyp.score + logp[POP_ID], apply(hyp.config, Pop()),
                                       l, s, pop_id, hyp.actions + (Pop(),), hyp.pushed))
            if mask[PUSH_ID]:
                beta, eta, rows = predict_indices(model, encoded, hyp.config, s)
                beta_lp = _log_probs(beta, None)
                eta_lp = _log_probs(eta, None)
                for row_pos, vertex in enumerate(rows):
                    buffer_pos = hyp.config.buffer.index(vertex)
                    for idx in range(1, model.dims.cache_size + 1):
                        pool.append(_ActionHyp(
                            hyp.score + logp[PUSH_ID] + beta_lp[row_pos] + eta_lp[idx - 1],
                            push_at(hyp.config, buffer_pos, idx),
                            l, s, push_id, hyp.actions + (Push(idx),), hyp.pushed + (vertex,)))
        pool.sort(key=lambda hh: -hh.score)
        hyps = pool[:beam]
        if not hyps:
            raise NoCompleteHypothesis("action beam emptied")
    return hyps


def _decode_words(model: GenerationModel, encoded: EncodedGraph, pointer: list[int],
                  beam: int, len_reward: float, max_words: int) -> _WordHyp:
    h = model.dims.hidden
    eos_id = model.token_id(EOS)
    l0, s0 = _zero_state(h)
    hyps = [_WordHyp(0.0, l0, s0, 0, model.token_id(PAD), (), False)]

    def rank(hyp: _WordHyp) -> float:
        return hyp.score + len_reward * len(hyp.words)

    for _ in range(max_words + 1):
        if all(hyp.done for hyp in hyps):
            break
        pool = [hyp for hyp in hyps if hyp.done]
        for hyp in hyps:
            if hyp.done:
                continue
            # The pointer is not part of the hypothesis score: it advances by
            # per-step argmax of the increment distribution, so only word
            # log-probabilities accumulate.
            r_logits, r_mask = increment_logits(model, encoded, pointer, hyp.p, hyp.s)
            p = hyp.p + _masked_argmax(r_logits, r_mask)
            state, logits = _word_step(model, encoded, pointer, p, hyp.prev_id, (hyp.l, hyp.s))
            w_lp = _log_probs(logits, model.word_mask)
            for wid in np.flatnonzero(model.word_mask):
                wid = int(wid)
                if wid == eos_id:
                    pool.append(_WordHyp(hyp.score + w_lp[wid], state[0], state[1], p, wid,
                                         hyp.words, True))
                else:
                    pool.append(_WordHyp(hyp.score + w_lp[wid], state[0], state[1], p, wid,
                                         hyp.words + (model.vocab.token(wid),), False))
        pool.sort(key=lambda hh: -rank(hh))
        hyps = pool[:beam]
    finished = [hyp for hyp in hyps if hyp.done]
    if not finished:
        raise NoCompleteHypothesis(f"no end-of-sentence within {max_words} words")
    return max(finished, key=rank)


def generate_conditioned(model: GenerationModel, graph: AmrGraph, beam: int = 1,
                         len_reward: float = 0.0, max_words: int | None = None) -> list[str]:
    """Best word sequence; beam=1 is exact greedy decoding.

    English decoding follows only the single best action hypothesis; its
    push order is the pointer sequence, unfiltered.
    """
    if beam < 1:
        raise ValueError("beam must be positive")
    encoded = model.encode(graph)
    best_actions = _decode_actions(model, encoded, beam)[0]
    pointer = list(best_actions.pushed)
    if max_words is None:
        max_words = 4 * graph.n + 10
    best = _decode_words(model, encoded, pointer, beam, len_reward, max_words)
    return list(best.words)
