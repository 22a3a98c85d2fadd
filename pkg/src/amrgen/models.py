"""Parameter assembly, vocabulary plumbing, and checkpoint files.

A GenerationModel owns the parameter store for one decoder flavor plus the
vocabularies everything is indexed against. Checkpoints are a single file:
a plain-text manifest (dimensions, vocab, edge labels, tensor table), a NUL
byte, then the binary tensor blob.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import (
    EOS,
    PAD,
    PHRASE_END,
    POP_TOKEN,
    PUSH_TOKEN,
    RESERVED,
    UNK,
    AlignedExample,
    EmbeddingTable,
    Vocabulary,
    edge_label_vocab,
)
from .encoder import EncodedGraph, EncoderParams, encode_graph
from .graphs import AmrGraph
from .tensors import LstmParams, ParamStore, Tensor, read_tensor_blob, write_tensor_blob

DECODERS = ("conditioned", "joint")

_MANIFEST_HEAD = "amrgen-checkpoint 1"


class BadCheckpoint(ValueError):
    pass


class EmptyBuffer(RuntimeError):
    """Index prediction requested while no concept remains to push."""


class NoCompleteHypothesis(RuntimeError):
    """Beam search ended without any finished hypothesis."""


@dataclass
class Tally:
    """Running correct/total counter for one teacher-forced sequence type."""

    correct: int = 0
    total: int = 0

    def add(self, hit: bool) -> None:
        self.total += 1
        self.correct += int(hit)

    def merge(self, other: "Tally") -> None:
        self.correct += other.correct
        self.total += other.total

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 1.0


@dataclass(frozen=True)
class ModelDims:
    hidden: int  # H: recurrent and encoder hidden size
    emb_dim: int  # D: token/concept embedding size
    edge_dim: int  # D': decoder-side edge-label embedding size
    enc_steps: int  # T: encoder aggregation rounds
    cache_size: int  # k

    def __post_init__(self):
        for field_name in ("hidden", "emb_dim", "edge_dim", "cache_size"):
            if getattr(self, field_name) < 1:
                raise ValueError(f"{field_name} must be positive")
        if self.enc_steps < 0:
            raise ValueError("enc_steps must be nonnegative")


class GenerationModel:
    """One decoder's parameters plus shared vocabularies."""

    def __init__(self, decoder: str, dims: ModelDims, vocab: Vocabulary,
                 edge_labels: tuple[str, ...], store: ParamStore):
        if decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {decoder!r}")
        self.decoder = decoder
        self.dims = dims
        self.vocab = vocab
        self.edge_labels = edge_labels
        self.edge_label_index = {label: i for i, label in enumerate(edge_labels)}
        self.store = store
        self.word_mask = self._word_mask()
        self.span_token_mask = self._span_token_mask()

    # masks over the shared vocabulary
    def _word_mask(self) -> np.ndarray:
        """Sentence positions: any real token or the end-of-sentence mark."""
        banned = {PAD, UNK, PHRASE_END, PUSH_TOKEN, POP_TOKEN}
        return np.array([t not in banned for t in self.vocab.tokens])

    def _span_token_mask(self) -> np.ndarray:
        """Span positions in the merged stream: real tokens or the span closer."""
        banned = {PAD, UNK, PUSH_TOKEN, POP_TOKEN, EOS}
        return np.array([t not in banned for t in self.vocab.tokens])

    def edge_label_id(self, label: str) -> int:
        return self.edge_label_index.get(label, 0)  # 0 is the unknown label

    def token_id(self, token: str) -> int:
        return self.vocab.id(token)

    # parameter handles
    def param(self, name: str) -> Tensor:
        return self.store[name]

    def lstm(self, prefix: str) -> LstmParams:
        return LstmParams(self.store[f"{prefix}/lstm/W"], self.store[f"{prefix}/lstm/b"])

    def encoder_params(self) -> EncoderParams:
        return EncoderParams(self.store["enc/W"], self.store["enc/b"], self.store["enc/edge"])

    def encode(self, graph: AmrGraph) -> EncodedGraph:
        from .tensors import take_rows

        concept_ids = [self.vocab.id(label) for label in graph.concepts]
        emb = take_rows(self.store["emb"], concept_ids)
        label_ids = [self.edge_label_id(label) for _, _, label in graph.edges]
        return encode_graph(graph, emb, label_ids, self.encoder_params(), self.dims.enc_steps)


def build_model(decoder: str, dims: ModelDims, examples: list[AlignedExample],
                seed: int, embeddings: EmbeddingTable | None = None) -> GenerationModel:
    """Fresh parameters for a corpus; pretrained embedding rows are frozen."""
    vocab = Vocabulary.build(examples)
    edge_labels = edge_label_vocab(examples)
    return _assemble(decoder, dims, vocab, edge_labels, np.random.default_rng(seed), embeddings)


def _assemble(decoder: str, dims: ModelDims, vocab: Vocabulary, edge_labels: tuple[str, ...],
              rng: np.random.Generator, embeddings: EmbeddingTable | None) -> GenerationModel:
    h, d, dp = dims.hidden, dims.emb_dim, dims.edge_dim
    hd = h + d
    n_vocab = len(vocab.tokens)
    store = ParamStore()

    emb_init = rng.uniform(-0.08, 0.08, size=(n_vocab, d))
    frozen_rows: list[int] = []
    if embeddings is not None:
        if embeddings.dim != d:
            from .corpus import DimensionMismatch

            raise DimensionMismatch(f"embedding file is {embeddings.dim}-dimensional, model wants {d}")
        for i, token in enumerate(vocab.tokens):
            vec = embeddings.vectors.get(token)
            if vec is not None and token not in RESERVED:
                emb_init[i] = vec
                frozen_rows.append(i)
    store.add("emb", (n_vocab, d), value=emb_init, frozen_rows=tuple(frozen_rows))

    store.add("enc/W", (3 * hd, h), rng)
    store.add("enc/b", (h,), rng)
    store.add("enc/edge", (len(edge_labels), hd), rng)

    p = "cond" if decoder == "conditioned" else "joint"
    store.add(f"{p}/null", (hd,), rng)
    store.add(f"{p}/act/Wa", (h, 2 * hd + h), rng)
    store.add(f"{p}/act/ba", (h,), rng)
    store.add(f"{p}/act/Wx", (h, d + h), rng)
    store.add(f"{p}/act/bx", (h,), rng)
    store.add(f"{p}/act/lstm/W", (4 * h, 2 * h), rng)
    store.add(f"{p}/act/lstm/b", (4 * h,), rng)
    store.add(f"{p}/act/Wf", (2, 2 * h), rng)
    store.add(f"{p}/act/bf", (2,), rng)
    store.add(f"{p}/eng/We", (h, hd), rng)
    store.add(f"{p}/eng/be", (h,), rng)
    store.add(f"{p}/eng/Wx", (h, d + h), rng)
    store.add(f"{p}/eng/bx", (h,), rng)
    store.add(f"{p}/eng/lstm/W", (4 * h, 2 * h), rng)
    store.add(f"{p}/eng/lstm/b", (4 * h,), rng)

    if decoder == "conditioned":
        store.add("cond/Ubeta", (hd, h), rng)
        store.add("cond/Ueta", (hd, h), rng)
        store.add("cond/Ur", (hd, h), rng)
        store.add("cond/eng/Wf", (n_vocab, 2 * h), rng)
        store.add("cond/eng/bf", (n_vocab,), rng)
    else:
        store.add("joint/edge", (len(edge_labels), dp), rng)
        store.add("joint/Ubeta", (hd + 2 * dp, 2 * h), rng)
        store.add("joint/Ueta", (hd + 2 * dp, 2 * h), rng)
        store.add("joint/eng/Wf", (n_vocab, 3 * h), rng)
        store.add("joint/eng/bf", (n_vocab,), rng)

    return GenerationModel(decoder, dims, vocab, edge_labels, store)


def train_model(model: GenerationModel, examples: list[AlignedExample], traces: list,
                loss_fn, epochs: int, lr: float = 1e-3,
                stop_accuracy: float | None = None) -> list[dict[str, Tally]]:
    """Online Adam over (example, trace) pairs in corpus order.

    loss_fn(model, example, trace) -> (scalar loss, per-type Tally dict).
    Returns one merged Tally dict per completed epoch; stops early once every
    type reaches stop_accuracy.
    """
    from .tensors import adam_step

    history: list[dict[str, Tally]] = []
    for _ in range(epochs):
        merged: dict[str, Tally] = {}
        for example, trace in zip(examples, traces):
            model.store.zero_grads()
            loss, stats = loss_fn(model, example, trace)
            loss.backward()
            adam_step(model.store, lr=lr)
            for key, tally in stats.items():
                merged.setdefault(key, Tally()).merge(tally)
        history.append(merged)
        if stop_accuracy is not None and all(t.accuracy >= stop_accuracy for t in merged.values()):
            break
    return history


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str, model: GenerationModel) -> None:
    lines = [
        _MANIFEST_HEAD,
        f"decoder={model.decoder}",
        f"hidden={model.dims.hidden}",
        f"emb_dim={model.dims.emb_dim}",
        f"edge_dim={model.dims.edge_dim}",
        f"enc_steps={model.dims.enc_steps}",
        f"cache_size={model.dims.cache_size}",
        "[vocab]",
        *model.vocab.tokens,
        "[edge-labels]",
        *model.edge_labels,
        "[tensors]",
    ]
    for name in sorted(model.store.entries):
        entry = model.store.entries[name]
        dims = " ".join(str(s) for s in entry.tensor.data.shape)
        lines.append(f"{name} {dims}".rstrip())
    manifest = "\n".join(lines) + "\n"
    with open(path, "wb") as fh:
        fh.write(manifest.encode("utf-8"))
        fh.write(b"\0")
        # sorted like the manifest, so bytes do not depend on insertion order
        write_tensor_blob(fh, {name: model.store.entries[name].tensor.data
                               for name in sorted(model.store.entries)})


def load_checkpoint(path: str) -> GenerationModel:
    """Rebuild a model for inference; row-freezing metadata is not kept."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\0")
    if sep < 0:
        raise BadCheckpoint(f"{path}: missing manifest separator")
    try:
        manifest = raw[:sep].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BadCheckpoint(f"{path}: manifest is not UTF-8") from exc
    lines = manifest.splitlines()
    if not lines or lines[0] != _MANIFEST_HEAD:
        raise BadCheckpoint(f"{path}: unrecognized header")

    fields: dict[str, str] = {}
    sections: dict[str, list[str]] = {"[vocab]": [], "[edge-labels]": [], "[tensors]": []}
    current: list[str] | None = None
    for line in lines[1:]:
        if line in sections:
            current = sections[line]
        elif current is not None:
            current.append(line)
        elif "=" in line:
            key, _, value = line.partition("=")
            fields[key] = value
        else:
            raise BadCheckpoint(f"{path}: stray manifest line {line!r}")
    try:
        decoder = fields["decoder"]
        dims = ModelDims(
            hidden=int(fields["hidden"]),
            emb_dim=int(fields["emb_dim"]),
            edge_dim=int(fields["edge_dim"]),
            enc_steps=int(fields["enc_steps"]),
            cache_size=int(fields["cache_size"]),
        )
    except (KeyError, ValueError) as exc:
        raise BadCheckpoint(f"{path}: bad manifest fields ({exc})") from exc
    if not sections["[vocab]"] or not sections["[tensors]"]:
        raise BadCheckpoint(f"{path}: manifest missing vocab or tensor table")

    import io

    named = read_tensor_blob(io.BytesIO(raw[sep + 1:]))
    declared = {line.split()[0] for line in sections["[tensors]"]}
    if declared != set(named):
        raise BadCheckpoint(f"{path}: tensor table does not match blob")

    vocab = Vocabulary(tokens=tuple(sections["[vocab]"]))
    store = ParamStore()
    for name in sorted(named):
        store.add(name, named[name].shape, value=named[name])
    return GenerationModel(decoder, dims, vocab, tuple(sections["[edge-labels]"]), store)
