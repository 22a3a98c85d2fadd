"""Command-line entrypoint: oracle, train, generate, eval, inspect.

Exit codes: 0 success, 1 usage, 2 bad data or config, 3 search failure
(uncoverable graph or exhausted beam). Relative input data paths resolve
against AMRGEN_DATA_ROOT when it is set; artifact paths (--model when
writing, --out) always resolve against the working directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace

from .corpus import load_corpus, load_embeddings
from .evaluate import SizedResult, bins_csv, build_report, degradation_figure
from .graphs import parse_penman, preprocess_labels, split_penman_blocks
from .models import (DECODERS, ModelDims, NoCompleteHypothesis, build_model,
                     load_checkpoint, save_checkpoint, train_model)
from .oracle import (TreewidthExceeded, build_increment_sequence,
                     build_interleaved_target, extract_trace)
from .transitions import Push, render_run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SEARCH = 0, 1, 2, 3

ACCURACY_COLUMNS = ("word", "action", "buffer_index", "cache_index", "increment")


class BadConfig(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs; config file keys match field names."""

    k: int = 3
    hidden: int = 32
    emb_dim: int = 16
    edge_dim: int = 8
    enc_steps: int = 2
    beam: int = 1
    len_reward: float = 0.0
    epochs: int = 50
    seed: int = 0
    decoder: str = "conditioned"
    corpus: str | None = None
    embeddings: str | None = None
    model: str | None = None
    out: str | None = None

    def validate(self) -> None:
        if self.k < 1:
            raise BadConfig("k must be at least 1")
        if min(self.hidden, self.emb_dim, self.edge_dim) < 1:
            raise BadConfig("hidden, emb_dim and edge_dim must be positive")
        if self.enc_steps < 0:
            raise BadConfig("enc_steps must be nonnegative")
        if self.beam < 1:
            raise BadConfig("beam must be at least 1")
        if self.epochs < 0:
            raise BadConfig("epochs must be nonnegative")
        if self.decoder not in DECODERS:
            raise BadConfig(f"unknown decoder {self.decoder!r}")

    def dims(self) -> ModelDims:
        return ModelDims(hidden=self.hidden, emb_dim=self.emb_dim, edge_dim=self.edge_dim,
                         enc_steps=self.enc_steps, cache_size=self.k)


_CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def parse_config_file(text: str) -> dict:
    """Flat key=value lines; blank lines and # comments allowed."""
    values = {}
    casts = {"k": int, "hidden": int, "emb_dim": int, "edge_dim": int, "enc_steps": int,
             "beam": int, "epochs": int, "seed": int, "len_reward": float}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"config line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            raise BadConfig(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = casts.get(key, str)(value)
        except ValueError:
            raise BadConfig(f"config line {lineno}: bad value for {key!r}") from None
    return values


def _data_path(path: str) -> str:
    root = os.environ.get("AMRGEN_DATA_ROOT")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _read_data(path: str) -> str:
    with open(_data_path(path), encoding="utf-8") as fh:
        return fh.read()


def _write_out(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _require(config: RunConfig, *keys: str) -> None:
    for key in keys:
        if getattr(config, key) is None:
            raise BadConfig(f"missing required setting {key!r}")


def _loss_fn(decoder: str):
    from .conditioned import loss_conditioned
    from .joint import loss_joint

    return loss_conditioned if decoder == "conditioned" else loss_joint


def _action_str(action) -> str:
    return f"Push({action.index})" if isinstance(action, Push) else "Pop"


def _cmd_oracle(config: RunConfig) -> int:
    _require(config, "corpus")
    examples = load_corpus(_read_data(config.corpus))
    blocks = []
    for i, example in enumerate(examples, 1):
        trace = extract_trace(example, config.k)
        blocks.append("\n".join([
            f"# {i}",
            "actions: " + " ".join(_action_str(a) for a in trace.actions),
            "order: " + " ".join(str(v) for v in trace.buffer_order),
            "evictions: " + " ".join(str(idx) for idx in trace.eviction_indices),
            "target: " + " ".join(build_interleaved_target(trace)),
            "increments: " + " ".join(str(r) for r in build_increment_sequence(trace)),
        ]))
    _write_out(config.out, "\n\n".join(blocks) + "\n")
    return EXIT_OK


def _cmd_inspect(config: RunConfig) -> int:
    _require(config, "corpus")
    examples = load_corpus(_read_data(config.corpus))
    tables = []
    for example in examples:
        trace = extract_trace(example, config.k)
        tables.append(render_run(trace.graph, list(trace.buffer_order), trace.k,
                                 list(trace.actions), list(trace.span_texts)))
    _write_out(config.out, "\n\n".join(tables) + "\n")
    return EXIT_OK


def _cmd_train(config: RunConfig) -> int:
    _require(config, "corpus", "model")
    examples = load_corpus(_read_data(config.corpus))
    traces = [extract_trace(example, config.k) for example in examples]
    embeddings = load_embeddings(_read_data(config.embeddings)) if config.embeddings else None
    model = build_model(config.decoder, config.dims(), examples, config.seed, embeddings)
    history = train_model(model, examples, traces, _loss_fn(config.decoder), config.epochs)
    lines = ["epoch\t" + "\t".join(ACCURACY_COLUMNS)]
    for epoch, tallies in enumerate(history, 1):
        cells = [f"{tallies[c].accuracy:.4f}" if c in tallies else "-" for c in ACCURACY_COLUMNS]
        lines.append(f"{epoch}\t" + "\t".join(cells))
    table = "\n".join(lines) + "\n"
    sys.stdout.write(table)
    if config.out:
        _write_out(config.out, table)
    save_checkpoint(config.model, model)
    return EXIT_OK


def _cmd_generate(config: RunConfig, input_path: str) -> int:
    from .conditioned import generate_conditioned
    from .joint import generate_joint

    _require(config, "model")
    model = load_checkpoint(_data_path(config.model))
    generate = generate_conditioned if model.decoder == "conditioned" else generate_joint
    sentences = []
    for block in split_penman_blocks(_read_data(input_path)):
        graph = preprocess_labels(parse_penman(block))
        words = generate(model, graph, beam=config.beam, len_reward=config.len_reward)
        sentences.append(" ".join(words))
    _write_out(config.out, "\n".join(sentences) + "\n")
    return EXIT_OK


def _cmd_eval(config: RunConfig, cand_path: str, ref_path: str) -> int:
    candidates = [line.split() for line in _read_data(cand_path).splitlines()]
    references = [line.split() for line in _read_data(ref_path).splitlines()]
    if len(candidates) != len(references):
        raise BadConfig(f"{len(candidates)} candidate lines vs {len(references)} reference lines")
    if config.corpus:
        sizes = [example.graph.n for example in load_corpus(_read_data(config.corpus))]
        if len(sizes) != len(candidates):
            raise BadConfig(f"{len(sizes)} corpus graphs vs {len(candidates)} candidate lines")
    else:
        sizes = [0] * len(candidates)  # no graphs given: everything in one bin
    results = [SizedResult(concepts=n, candidate=c, reference=r)
               for n, c, r in zip(sizes, candidates, references)]
    report = build_report(results)
    sys.stdout.write(report.render() + "\n")
    if config.out:
        os.makedirs(config.out, exist_ok=True)
        _write_out(os.path.join(config.out, "report.txt"), report.render() + "\n")
        _write_out(os.path.join(config.out, "bins.csv"), bins_csv(report.bins))
        degradation_figure(report.bins, os.path.join(config.out, "degradation.png"))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="amrgen", description="Transition-based AMR-to-text generation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, help_text: str, *, positionals: tuple[str, ...] = (),
            flags: tuple[str, ...] = ()) -> None:
        p = sub.add_parser(name, help=help_text)
        for pos in positionals:
            p.add_argument(pos)
        p.add_argument("--config", help="flat key=value settings file")
        for flag in flags:
            kwargs = {}
            if flag in ("k", "hidden", "emb_dim", "edge_dim", "enc_steps", "beam",
                        "epochs", "seed"):
                kwargs["type"] = int
            elif flag == "len_reward":
                kwargs["type"] = float
            elif flag == "decoder":
                kwargs["choices"] = DECODERS
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, **kwargs)

    add("oracle", "write action traces for an aligned corpus",
        flags=("corpus", "k", "out"))
    add("train", "fit a decoder and write a checkpoint",
        flags=("corpus", "model", "decoder", "k", "hidden", "emb_dim", "edge_dim",
               "enc_steps", "epochs", "seed", "embeddings", "out"))
    add("generate", "decode sentences for PENMAN graphs",
        positionals=("input",), flags=("model", "beam", "len_reward", "out"))
    add("eval", "score candidates against references",
        positionals=("candidates", "references"), flags=("corpus", "out"))
    add("inspect", "render each example's run as a configuration table",
        flags=("corpus", "k", "out"))
    return parser


def merge_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, overridden by the config file, overridden by flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(_read_data(args.config)))
    for name in _CONFIG_KEYS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return replace(RunConfig(), **values)


def run(command: str, config: RunConfig, positionals: tuple[str, ...] = ()) -> int:
    config.validate()
    if command == "oracle":
        return _cmd_oracle(config)
    if command == "inspect":
        return _cmd_inspect(config)
    if command == "train":
        return _cmd_train(config)
    if command == "generate":
        return _cmd_generate(config, positionals[0])
    if command == "eval":
        return _cmd_eval(config, positionals[0], positionals[1])
    raise BadConfig(f"unknown command {command!r}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = merge_config(args)
        if args.command == "generate":
            positionals = (args.input,)
        elif args.command == "eval":
            positionals = (args.candidates, args.references)
        else:
            positionals = ()
        return run(args.command, config, positionals)
    except (TreewidthExceeded, NoCompleteHypothesis) as err:
        print(f"amrgen: search failure: {err}", file=sys.stderr)
        return EXIT_SEARCH
    except (OSError, ValueError) as err:
        print(f"amrgen: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
