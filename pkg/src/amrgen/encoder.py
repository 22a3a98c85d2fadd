"""Graph encoder: T rounds of synchronous neighborhood aggregation.

Each round every concept reads its own state plus sums over incoming and
outgoing neighbors, where a neighbor contributes its state plus the label
embedding of the connecting edge. States are read in augmented form, the
recurrent part concatenated with the concept-label embedding, so label
information propagates one hop per round; with T rounds a state is a
function of everything within T hops. The returned matrix keeps the
concatenated layout, one row of size H+D per concept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import AmrGraph
from .tensors import ShapeMismatch, Tensor, add, add_rows, constant, hconcat, matmul, take_rows, tanh


@dataclass
class EncoderParams:
    W: Tensor  # (3*(H+D), H)
    b: Tensor  # (H,)
    edge_table: Tensor  # (label count, H+D), one row per edge label


@dataclass
class EncodedGraph:
    graph: AmrGraph
    states: Tensor  # (n, H+D), row i belongs to concept i
    edge_label_ids: tuple[int, ...]  # parallel to graph.edges


def encode_graph(graph: AmrGraph, emb: Tensor, edge_label_ids: list[int],
                 params: EncoderParams, steps: int) -> EncodedGraph:
    """emb holds one label-embedding row per concept, in concept-id order."""
    n = len(graph.concepts)
    m = len(graph.edges)
    if emb.data.ndim != 2 or emb.data.shape[0] != n:
        raise ShapeMismatch(f"emb: {emb.data.shape} for {n} concepts")
    if len(edge_label_ids) != m:
        raise ShapeMismatch(f"{len(edge_label_ids)} label ids for {m} edges")
    d = emb.data.shape[1]
    h_size = params.b.data.shape[0]
    if params.W.data.shape != (3 * (h_size + d), h_size):
        raise ShapeMismatch(f"W: {params.W.data.shape}, want {(3 * (h_size + d), h_size)}")

    # constant structure matrices: counts of edges between vertex pairs and
    # edge-to-endpoint incidence, one pair per direction
    a_in = np.zeros((n, n))
    a_out = np.zeros((n, n))
    s_in = np.zeros((n, m))
    s_out = np.zeros((n, m))
    for e, (src, dst, _label) in enumerate(graph.edges):
        a_in[dst, src] += 1.0
        a_out[src, dst] += 1.0
        s_in[dst, e] = 1.0
        s_out[src, e] = 1.0
    a_in_t, a_out_t = constant(a_in), constant(a_out)
    s_in_t, s_out_t = constant(s_in), constant(s_out)
    label_rows = take_rows(params.edge_table, list(edge_label_ids))

    h = constant(np.zeros((n, h_size)))
    for _ in range(steps):
        augmented = hconcat([h, emb])
        incoming = add(matmul(a_in_t, augmented), matmul(s_in_t, label_rows))
        outgoing = add(matmul(a_out_t, augmented), matmul(s_out_t, label_rows))
        h = tanh(add_rows(matmul(hconcat([augmented, incoming, outgoing]), params.W), params.b))
    return EncodedGraph(graph=graph, states=hconcat([h, emb]), edge_label_ids=tuple(edge_label_ids))
