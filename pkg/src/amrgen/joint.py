"""Joint decoder: one merged stream of actions and word spans.

Two recurrences share the stream. The action chain steps on action
positions, the English chain on span positions; each consumes the
embedding of the immediately preceding stream token, whichever chain it
came from. Gold streams skip the English phase entirely for concepts with
empty spans (the stream shows Push immediately followed by Push); at
inference the English phase always opens, and a span-closer as the very
first emission realizes the empty span, leaving the English recurrence
untouched so the histories match training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import PAD, PHRASE_END, POP_TOKEN, PUSH_TOKEN, AlignedExample
from .encoder import EncodedGraph
from .graphs import AmrGraph
from .models import EmptyBuffer, GenerationModel, NoCompleteHypothesis, Tally
from .oracle import OracleTrace
from .tensors import Tensor, affine, concat, constant, lstm_step, matmul, row, scale, softmax_xent, sum_tensors, take_rows, vstack
from .transitions import SENTINEL, ParserConfiguration, Pop, Push, init_config, push_at, apply
from .conditioned import PUSH_ID, POP_ID, _log_probs, _masked_argmax, _zero_state, action_mask


def _mean_state(model: GenerationModel, encoded: EncodedGraph, vertices: list[int]) -> Tensor:
    if not vertices:
        return model.param("joint/null")
    weights = constant(np.full(len(vertices), 1.0 / len(vertices)))
    return matmul(weights, take_rows(encoded.states, vertices))


def joint_action_context(model: GenerationModel, encoded: EncodedGraph,
                         config: ParserConfiguration, s_prev: Tensor) -> Tensor:
    """Averaged stack and cache readings; empty collections read as null."""
    stack_mean = _mean_state(model, encoded, config.stack_vertices())
    cache_mean = _mean_state(model, encoded, config.cache_vertices())
    return affine(model.param("joint/act/Wa"), concat([stack_mean, cache_mean, s_prev]),
                  model.param("joint/act/ba"))


def _edge_label_sum(model: GenerationModel, graph, edge_ids: list[int], denom: int) -> Tensor:
    """Sum of decoder edge-label embeddings over the given edges, / denom."""
    dp = model.dims.edge_dim
    if not edge_ids:
        return constant(np.zeros(dp))
    ids = [model.edge_label_id(graph.edges[e][2]) for e in edge_ids]
    total = matmul(constant(np.ones(len(ids))), take_rows(model.param("joint/edge"), ids))
    return scale(total, 1.0 / denom)


def _subgraph_row(model: GenerationModel, encoded: EncodedGraph, vertex: int | None,
                  others: set[int], denom: int) -> Tensor:
    """[state; incoming-label sum; outgoing-label sum] against `others`."""
    graph = encoded.graph
    if vertex is SENTINEL:
        state = model.param("joint/null")
        e_in = constant(np.zeros(model.dims.edge_dim))
        e_out = constant(np.zeros(model.dims.edge_dim))
    else:
        state = row(encoded.states, vertex)
        in_ids = [e for e in graph.in_edges[vertex] if graph.edges[e][0] in others]
        out_ids = [e for e in graph.out_edges[vertex] if graph.edges[e][1] in others]
        e_in = _edge_label_sum(model, graph, in_ids, denom)
        e_out = _edge_label_sum(model, graph, out_ids, denom)
    return concat([state, e_in, e_out])


def predict_indices_joint(model: GenerationModel, encoded: EncodedGraph,
                          config: ParserConfiguration, u: Tensor) -> tuple[Tensor, Tensor, list[int]]:
    """Buffer-row and cache-slot logits from subgraph-augmented features.

    Buffer rows carry label sums over edges to current cache members,
    normalized by the slot count k; cache rows symmetrically carry sums over
    edges to remaining buffer members, normalized by the buffer size.
    """
    rows = sorted(config.buffer)
    if not rows:
        raise EmptyBuffer("index prediction with an empty buffer")
    cache_members = set(config.cache_vertices())
    buffer_members = set(config.buffer)
    k = config.k
    b_rows = vstack([_subgraph_row(model, encoded, v, cache_members, k) for v in rows])
    beta = matmul(b_rows, matmul(model.param("joint/Ubeta"), u))
    c_rows = vstack([_subgraph_row(model, encoded, v, buffer_members, len(rows)) for v in config.cache])
    eta = matmul(c_rows, matmul(model.param("joint/Ueta"), u))
    return beta, eta, rows


def joint_english_step(model: GenerationModel, encoded: EncodedGraph, pushed: int,
                       s_a_last: Tensor, prev_id: int,
                       state: tuple[Tensor, Tensor]) -> tuple[tuple[Tensor, Tensor], Tensor]:
    """One span position: consume the previous stream token, return logits
    over words plus the span closer."""
    c = affine(model.param("joint/eng/We"), row(encoded.states, pushed), model.param("joint/eng/be"))
    x = affine(model.param("joint/eng/Wx"), concat([row(model.param("emb"), prev_id), c]),
               model.param("joint/eng/bx"))
    l, s = lstm_step(state, x, model.lstm("joint/eng"))
    logits = affine(model.param("joint/eng/Wf"), concat([l, c, s_a_last]), model.param("joint/eng/bf"))
    return (l, s), logits


def loss_joint(model: GenerationModel, example: AlignedExample,
               trace: OracleTrace) -> tuple[Tensor, dict[str, Tally]]:
    """Teacher-forced cross-entropy over every stream position."""
    h = model.dims.hidden
    encoded = model.encode(trace.graph)
    emb = model.param("emb")
    stats = {key: Tally() for key in ("action", "buffer_index", "cache_index", "word")}
    terms: list[Tensor] = []

    config = init_config(trace.graph, list(trace.buffer_order), trace.k)
    al, a_s = _zero_state(h)
    el, es = _zero_state(h)
    prev_id = model.token_id(PAD)
    spans = trace.pushed_spans()
    push_count = 0
    for action in trace.actions:
        c = joint_action_context(model, encoded, config, a_s)
        x = affine(model.param("joint/act/Wx"), concat([row(emb, prev_id), c]), model.param("joint/act/bx"))
        al, a_s = lstm_step((al, a_s), x, model.lstm("joint/act"))
        logits = affine(model.param("joint/act/Wf"), concat([al, c]), model.param("joint/act/bf"))
        mask = action_mask(config)
        target = PUSH_ID if isinstance(action, Push) else POP_ID
        terms.append(softmax_xent(logits, target, mask))
        stats["action"].add(_masked_argmax(logits, mask) == target)
        if isinstance(action, Push):
            u = concat([es, a_s])
            beta, eta, rows = predict_indices_joint(model, encoded, config, u)
            gold_row = rows.index(config.buffer[0])
            terms.append(softmax_xent(beta, gold_row))
            stats["buffer_index"].add(_masked_argmax(beta, None) == gold_row)
            terms.append(softmax_xent(eta, action.index - 1))
            stats["cache_index"].add(_masked_argmax(eta, None) == action.index - 1)
            pushed = config.buffer[0]
            s_a_last = a_s
            config = apply(config, action)
            prev_id = model.token_id(PUSH_TOKEN)
            span = spans[push_count]
            push_count += 1
            if span:  # empty spans contribute no stream positions at all
                for token in span.split() + [PHRASE_END]:
                    (el, es), logits = joint_english_step(model, encoded, pushed, s_a_last,
                                                          prev_id, (el, es))
                    token_id = model.token_id(token)
                    terms.append(softmax_xent(logits, token_id, model.span_token_mask))
                    stats["word"].add(_masked_argmax(logits, model.span_token_mask) == token_id)
                    prev_id = token_id
        else:
            config = apply(config, action)
            prev_id = model.token_id(POP_TOKEN)
    return sum_tensors(terms), stats


# ---------------------------------------------------------------------------
# Generation: phase-switching beam.


@dataclass(frozen=True)
class _JointHyp:
    score: float
    config: ParserConfiguration
    al: Tensor
    a_s: Tensor
    el: Tensor
    es: Tensor
    prev_id: int
    words: tuple[str, ...]
    eng_len: int
    pending_push: int | None  # vertex whose span must be decoded, else None
    s_a_last: Tensor | None


def generate_joint(model: GenerationModel, graph: AmrGraph, beam: int = 1,
                   len_reward: float = 0.0, max_span: int | None = None) -> list[str]:
    """Best word sequence; beam=1 is exact greedy decoding.

    Each outer step expands actions, cuts to the beam, then every survivor
    that pushed runs an English sub-beam whose finished spans replace it
    (at most beam replacements each), and the pool is rescored by log
    probability plus the length reward over emitted words.
    """
    if beam < 1:
        raise ValueError("beam must be positive")
    if max_span is None:
        max_span = 4 * graph.n + 10
    h = model.dims.hidden
    encoded = model.encode(graph)
    emb = model.param("emb")
    push_id, pop_id = model.token_id(PUSH_TOKEN), model.token_id(POP_TOKEN)
    close_id = model.token_id(PHRASE_END)

    def rank(hyp: _JointHyp) -> float:
        return hyp.score + len_reward * hyp.eng_len

    config = init_config(graph, sorted(range(graph.n)), model.dims.cache_size)
    l0, s0 = _zero_state(h)
    hyps = [_JointHyp(0.0, config, l0, s0, l0, s0, model.token_id(PAD), (), 0, None, None)]
    for _ in range(2 * graph.n):
        cand: list[_JointHyp] = []
        for hyp in hyps:
            c = joint_action_context(model, encoded, hyp.config, hyp.a_s)
            x = affine(model.param("joint/act/Wx"), concat([row(emb, hyp.prev_id), c]),
                       model.param("joint/act/bx"))
            al, a_s = lstm_step((hyp.al, hyp.a_s), x, model.lstm("joint/act"))
            logits = affine(model.param("joint/act/Wf"), concat([al, c]), model.param("joint/act/bf"))
            mask = action_mask(hyp.config)
            logp = _log_probs(logits, mask)
            if mask[POP_ID]:
                cand.append(_JointHyp(hyp.score + logp[POP_ID], apply(hyp.config, Pop()),
                                      al, a_s, hyp.el, hyp.es, pop_id,
                                      hyp.words, hyp.eng_len, None, None))
            if mask[PUSH_ID]:
                u = concat([hyp.es, a_s])
                beta, eta, rows = predict_indices_joint(model, encoded, hyp.config, u)
                beta_lp = _log_probs(beta, None)
                eta_lp = _log_probs(eta, None)
                for row_pos, vertex in enumerate(rows):
                    buffer_pos = hyp.config.buffer.index(vertex)
                    for idx in range(1, model.dims.cache_size + 1):
                        cand.append(_JointHyp(
                            hyp.score + logp[PUSH_ID] + beta_lp[row_pos] + eta_lp[idx - 1],
                            push_at(hyp.config, buffer_pos, idx),
                            al, a_s, hyp.el, hyp.es, push_id,
                            hyp.words, hyp.eng_len, vertex, a_s))
        cand.sort(key=lambda hh: -rank(hh))
        cand = cand[:beam]

        pool: list[_JointHyp] = []
        for hyp in cand:
            if hyp.pending_push is None:
                pool.append(hyp)
                continue
            pool.extend(_decode_span(model, encoded, hyp, beam, len_reward, max_span, close_id))
        pool.sort(key=lambda hh: -rank(hh))
        hyps = pool[:beam]
        if not hyps:
            raise NoCompleteHypothesis("joint beam emptied")
    return list(max(hyps, key=rank).words)


def _decode_span(model: GenerationModel, encoded: EncodedGraph, parent: _JointHyp,
                 beam: int, len_reward: float, max_span: int, close_id: int) -> list[_JointHyp]:
    """English sub-beam for one Push; returns parent replacements.

    Closed hypotheses compete in the per-step pool like live ones, so a
    width-1 sub-beam follows per-step argmax exactly. A span closer as the
    very first emission realizes an empty span: the English state rolls
    back and the following action sees the Push token as its predecessor,
    exactly like a training-time empty span.
    """

    @dataclass(frozen=True)
    class SpanHyp:
        extra: float
        el: Tensor
        es: Tensor
        prev_id: int
        tokens: tuple[str, ...]
        done: bool

    def rank(sh: SpanHyp) -> float:
        return sh.extra + len_reward * len(sh.tokens)

    hyps = [SpanHyp(0.0, parent.el, parent.es, parent.prev_id, (), False)]
    for _ in range(max_span + 1):
        if all(sh.done for sh in hyps):
            break
        pool = [sh for sh in hyps if sh.done]
        for sh in hyps:
            if sh.done:
                continue
            (el, es), logits = joint_english_step(model, encoded, parent.pending_push,
                                                  parent.s_a_last, sh.prev_id, (sh.el, sh.es))
            lp = _log_probs(logits, model.span_token_mask)
            for wid in np.flatnonzero(model.span_token_mask):
                wid = int(wid)
                if wid == close_id:
                    if sh.tokens:
                        pool.append(SpanHyp(sh.extra + lp[wid], el, es, wid, sh.tokens, True))
                    else:  # empty span keeps the pre-push English state
                        pool.append(SpanHyp(sh.extra + lp[wid], sh.el, sh.es, sh.prev_id, (), True))
                else:
                    pool.append(SpanHyp(sh.extra + lp[wid], el, es, wid,
                                        sh.tokens + (model.vocab.token(wid),), False))
        pool.sort(key=lambda ss: -rank(ss))
        hyps = pool[:beam]
    out = []
    for sh in hyps:
        if not sh.done:
            continue
        out.append(_JointHyp(parent.score + sh.extra, parent.config, parent.al, parent.a_s,
                             sh.el, sh.es, sh.prev_id,
                             parent.words + sh.tokens, parent.eng_len + len(sh.tokens), None, None))
    return out
