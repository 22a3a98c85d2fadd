"""Corpus BLEU, action-space counting, and size-degradation reporting."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import EmptyCorpus
from .graphs import AmrGraph
from .transitions import apply, init_config, is_terminal, legal_actions

MAX_ORDER = 4  # n-gram order for BLEU
BIN_WIDTH = 10  # concept-count bins for degradation curves


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(candidates: list[list[str]], references: list[list[str]]) -> tuple[list[int], list[int], int, int]:
    """Clipped n-gram matches and totals per order, plus length sums."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise EmptyCorpus("nothing to score")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            got = _ngrams(cand, n)
            want = _ngrams(ref, n)
            matches[n - 1] += sum(min(count, want[gram]) for gram, count in got.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    return matches, totals, cand_len, ref_len


def bleu(candidates: list[list[str]], references: list[list[str]]) -> float:
    """Corpus-level BLEU-4: uniform weights, brevity penalty, no smoothing.

    Orders whose candidate total is zero (all candidates shorter than n) are
    counted as precision 1, which keeps bleu(x, x) = 1 on short corpora; any
    zero match count with a nonzero total still zeroes the whole score.
    """
    matches, totals, cand_len, ref_len = bleu_stats(candidates, references)
    log_sum = 0.0
    for match, total in zip(matches, totals):
        if total == 0:
            continue
        if match == 0:
            return 0.0
        log_sum += math.log(match / total) / MAX_ORDER
    if cand_len == 0:
        return 0.0
    brevity = min(1.0, math.exp(1.0 - ref_len / cand_len))
    return brevity * math.exp(log_sum)


def catalan(n: int) -> int:
    if n < 0:
        raise ValueError("catalan is defined for n >= 0")
    return math.comb(2 * n, n) // (n + 1)


def count_action_skeletons(n: int) -> int:
    """Exhaustively count legal Push/Pop shapes for an n-concept buffer.

    Runs the real transition system at cache size 1 on an edgeless graph, so
    index choices collapse and only the Push/Pop skeleton varies.
    """
    if n < 0:
        raise ValueError("need a nonnegative concept count")
    if n == 0:
        return 1
    graph = AmrGraph(concepts=tuple(f"c{i}" for i in range(n)), edges=(), root=0)
    start = init_config(graph, list(range(n)), 1)
    count = 0
    stack = [start]
    while stack:
        config = stack.pop()
        if is_terminal(config):
            count += 1
            continue
        for action in legal_actions(config):
            stack.append(apply(config, action))
    return count


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class SizedResult:
    """One decoded example: its candidate, reference, and graph size."""

    concepts: int
    candidate: list[str]
    reference: list[str]


@dataclass
class EvalReport:
    corpus_bleu: float
    bins: list[tuple[int, int, float]]  # (bin start, count, BLEU)
    accuracies: dict[str, float] = field(default_factory=dict)

    def render(self) -> str:
        lines = [f"corpus BLEU: {self.corpus_bleu:.4f}"]
        for key in sorted(self.accuracies):
            lines.append(f"accuracy[{key}]: {self.accuracies[key]:.4f}")
        lines.append("size bins (start, count, BLEU):")
        for start, count, score in self.bins:
            lines.append(f"  {start:>4}-{start + BIN_WIDTH - 1:<4} n={count:<4} BLEU={score:.4f}")
        return "\n".join(lines)


def bin_by_size(results: list[SizedResult]) -> list[tuple[int, int, float]]:
    """Per-bin corpus BLEU over fixed-width concept-count bins."""
    buckets: dict[int, list[SizedResult]] = {}
    for result in results:
        buckets.setdefault((result.concepts // BIN_WIDTH) * BIN_WIDTH, []).append(result)
    table = []
    for start in sorted(buckets):
        members = buckets[start]
        score = bleu([m.candidate for m in members], [m.reference for m in members])
        table.append((start, len(members), score))
    return table


def build_report(results: list[SizedResult], accuracies: dict[str, float] | None = None) -> EvalReport:
    return EvalReport(
        corpus_bleu=bleu([r.candidate for r in results], [r.reference for r in results]),
        bins=bin_by_size(results),
        accuracies=dict(accuracies or {}),
    )


def bins_csv(bins: list[tuple[int, int, float]]) -> str:
    lines = ["bin_start,count,bleu"]
    for start, count, score in bins:
        lines.append(f"{start},{count},{score:.6f}")
    return "\n".join(lines) + "\n"


def degradation_figure(bins: list[tuple[int, int, float]], path: str) -> None:
    """Render the per-size-bin BLEU curve to an image file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    starts = [start for start, _, _ in bins]
    scores = [score for _, _, score in bins]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(starts, scores, marker="o")
    ax.set_xlabel(f"concept count (bins of {BIN_WIDTH})")
    ax.set_ylabel("BLEU")
    ax.set_title("BLEU by graph size")
    ax.set_ylim(bottom=0.0)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
