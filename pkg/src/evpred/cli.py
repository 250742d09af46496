"""Command-line entry point.

Subcommands: split, train, predict, evaluate, gradcheck, synth.
Exit codes: 0 success, 2 format/argument error, 3 integrity error,
4 divergence or failed check.

Run configs are flat ``key=value`` text files with a stable key order so
that runs diff cleanly; command-line flags override config-file values.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .corpus import (Vocabulary, build_vocabulary, load_embeddings,
                     load_pair_file, split_descript, split_random, tokenize)
from .errors import FormatError, IntegrityError, TrainingDivergedError
from .evaluation import (ParaphraseInventory, bleu_by_length_bucket,
                         bleu_corpus, paraphrase_accuracy, render_report)
from .seq2seq import (GRADCHECK_VARIANTS, LR_GRID, ModelConfig, TrainSchedule,
                      build_model, gradcheck_model, greedy_decode,
                      load_checkpoint, save_checkpoint, train_loop)
from .synth import SyntheticSpec, generate

GRADCHECK_TOLERANCE = 1e-4


@dataclass
class RunConfig:
    """All the knobs of a training run; defaults follow the standard recipe
    (300 hidden units, 300-dim embeddings, dropout 0.5, batch 64, up to 100
    epochs, 5000-word vocabulary cap)."""

    train_path: str = ""
    dev_path: str = ""
    out_dir: str = "run"
    cell: str = "lstm"
    layers: int = 2
    attention: bool = False
    bidirectional: bool = True
    hidden: int = 300
    embed_dim: int = 300
    dropout: float = 0.5
    batch: int = 64
    lr: float = 0.001
    epochs: int = 100
    seed: int = 0
    vocab_size: int = 5000
    embeddings: str = ""
    max_decode_len: int = 30
    grad_clip: float = 0.0


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, path=None) -> RunConfig:
    by_name = {f.name: f for f in fields(RunConfig)}
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError("expected key=value", path=path, line=lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in by_name:
            raise FormatError(f"unknown config key {key!r}", path=path, line=lineno)
        ftype = by_name[key].type
        try:
            if ftype in ("bool", bool):
                if value not in ("true", "false"):
                    raise ValueError
                value = value == "true"
            elif ftype in ("int", int):
                value = int(value)
            elif ftype in ("float", float):
                value = float(value)
        except ValueError:
            raise FormatError(f"bad value for {key!r}: {value!r}",
                              path=path, line=lineno) from None
        setattr(cfg, key, value)
    return cfg


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on|off")
    return value == "on"


_FLAG_TO_FIELD = {
    "train": "train_path",
    "dev": "dev_path",
    "out": "out_dir",
    "cell": "cell",
    "layers": "layers",
    "attention": "attention",
    "bidirectional": "bidirectional",
    "hidden": "hidden",
    "embed_dim": "embed_dim",
    "dropout": "dropout",
    "batch": "batch",
    "lr": "lr",
    "epochs": "epochs",
    "seed": "seed",
    "vocab_size": "vocab_size",
    "embeddings": "embeddings",
    "max_decode_len": "max_decode_len",
    "grad_clip": "grad_clip",
}


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run-config file (flags override it)")
    p.add_argument("--train", help="training pair-corpus file")
    p.add_argument("--dev", help="development pair-corpus file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--cell", choices=("lstm", "gru"))
    p.add_argument("--layers", type=int)
    p.add_argument("--attention", type=_onoff, metavar="on|off")
    p.add_argument("--bidirectional", type=_onoff, metavar="on|off")
    p.add_argument("--hidden", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float,
                   help=f"initial Adam learning rate; conventionally swept over {LR_GRID}")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--embeddings", help="pretrained embedding file (text format)")
    p.add_argument("--max-decode-len", dest="max_decode_len", type=int)
    p.add_argument("--grad-clip", dest="grad_clip", type=float,
                   help="global gradient-norm clip; 0 disables (default)")


def resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = parse_config(Path(args.config).read_text(encoding="utf-8"),
                           path=args.config)
    else:
        cfg = RunConfig()
    for flag, field_name in _FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, field_name, v)
    return cfg


# ---------------------------------------------------------------------------
# subcommands

def cmd_split(args) -> int:
    corpus = load_pair_file(args.input)
    if args.mode == "descript":
        train, dev, test = split_descript(corpus)
    else:
        fractions = tuple(float(x) for x in args.fractions.split(","))
        train, dev, test = split_random(corpus, fractions, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train.write(out / "train.pairs")
    dev.write(out / "dev.pairs")
    test.write(out / "test.pairs")
    counts = f"train={len(train)}\ndev={len(dev)}\ntest={len(test)}\n"
    (out / "counts.txt").write_text(counts, encoding="utf-8")
    print(counts, end="")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if not cfg.train_path or not cfg.dev_path:
        raise ValueError("train and dev corpora are required (--train/--dev)")
    train_corpus = load_pair_file(cfg.train_path)
    dev_corpus = load_pair_file(cfg.dev_path)
    if len(train_corpus) == 0:
        raise ValueError("training corpus is empty")
    vocab = build_vocabulary(train_corpus, cfg.vocab_size)
    pretrained = None
    if cfg.embeddings:
        pretrained = load_embeddings(cfg.embeddings, vocab, cfg.embed_dim,
                                     seed=cfg.seed)
    model_cfg = ModelConfig(
        cell=cfg.cell, layers=cfg.layers, attention=cfg.attention,
        bidirectional=cfg.bidirectional, hidden=cfg.hidden,
        embed_dim=cfg.embed_dim, vocab_size=len(vocab), dropout=cfg.dropout,
        max_decode_len=cfg.max_decode_len)
    model = build_model(model_cfg, seed=cfg.seed, pretrained=pretrained,
                        vocab_hash=vocab.sha256())
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")

    history_rows = ["epoch\ttrain_loss\tdev_bleu"]

    def on_epoch(stats, is_best, m):
        history_rows.append(f"{stats.epoch}\t{stats.train_loss!r}\t{stats.dev_bleu!r}")
        (out / "history.tsv").write_text("\n".join(history_rows) + "\n",
                                         encoding="utf-8")
        if is_best:
            save_checkpoint(out / "checkpoint.evp", m)
        print(f"epoch {stats.epoch}: loss={stats.train_loss:.6f} "
              f"dev_bleu={stats.dev_bleu:.6f}{' *' if is_best else ''}")

    schedule = TrainSchedule(epochs=cfg.epochs, batch_size=cfg.batch, lr=cfg.lr,
                             seed=cfg.seed, grad_clip=cfg.grad_clip)
    best_epoch, history = train_loop(model, vocab, train_corpus, dev_corpus,
                                     schedule, on_epoch=on_epoch)
    print(f"best epoch {best_epoch} dev_bleu={history[best_epoch - 1].dev_bleu:.6f}")
    return 0


def _read_source_lines(path):
    """Source sentences, one per line; lines with a TAB are pair lines and
    contribute their source column."""
    sources = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.rstrip("\n").split("\t")[0]
            tokens = tokenize(text)
            if not tokens:
                raise FormatError("empty source line", path=path, line=lineno)
            sources.append(tokens)
    return sources


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    vocab_path = args.vocab or str(Path(args.checkpoint).parent / "vocab.txt")
    vocab = Vocabulary.load(vocab_path)
    if model.vocab_hash and vocab.sha256() != model.vocab_hash:
        raise IntegrityError(
            f"vocabulary {vocab_path} does not match the checkpoint's hash")
    sources = _read_source_lines(args.input)
    with open(args.output, "w", encoding="utf-8") as f:
        for tokens in sources:
            ids = vocab.encode(tokens)
            pred = vocab.decode(greedy_decode(model, ids))
            f.write(" ".join(pred) + "\n")
    print(f"wrote {len(sources)} predictions to {args.output}")
    return 0


def _read_token_lines(path):
    with open(path, "r", encoding="utf-8") as f:
        return [tokenize(line.rstrip("\n")) for line in f]


def cmd_evaluate(args) -> int:
    predictions = _read_token_lines(args.predictions)
    if args.pairs:
        corpus = load_pair_file(args.pairs)
        sources = [list(p.source) for p in corpus]
        references = [list(p.target) for p in corpus]
    else:
        if not args.references or not args.sources:
            raise ValueError("need --pairs or both --references and --sources")
        references = _read_token_lines(args.references)
        sources = _read_token_lines(args.sources)
    if not (len(predictions) == len(references) == len(sources)):
        raise ValueError(
            f"misaligned line counts: {len(predictions)} predictions, "
            f"{len(references)} references, {len(sources)} sources")
    bleu = bleu_corpus(predictions, references)
    buckets = bleu_by_length_bucket(sources, predictions, references)
    accuracy = None
    if args.inventory:
        inventory = ParaphraseInventory.load(args.inventory)
        accuracy = paraphrase_accuracy(predictions, references, inventory,
                                       sources=sources)
        near_path = args.near_misses
        if near_path is None:
            base = Path(args.report).parent if args.report else Path(".")
            near_path = base / "near_misses.tsv"
        with open(near_path, "w", encoding="utf-8") as f:
            for src, tgt, pred in accuracy.near_misses:
                f.write(f"{' '.join(src)}\t{' '.join(tgt)}\t{' '.join(pred)}\n")
    report = render_report(bleu, buckets, accuracy)
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    print(report, end="")
    return 0


def cmd_gradcheck(args) -> int:
    variants = [
        (cell, layers, att) for cell, layers, att in GRADCHECK_VARIANTS
        if (args.cell is None or cell == args.cell)
        and (args.layers is None or layers == args.layers)
        and (args.attention is None or att == args.attention)
    ]
    if not variants:
        raise ValueError("no variant matches the given filters")
    failed = False
    for cell, layers, att in variants:
        err = gradcheck_model(cell, layers, att, corrupt=args.corrupt)
        ok = err < GRADCHECK_TOLERANCE
        failed = failed or not ok
        label = f"{cell}-{layers}layer-{'att' if att else 'nonatt'}"
        print(f"{label} max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    return 4 if failed else 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        num_scenarios=args.scenarios,
        events_per_scenario=args.events,
        paraphrases_per_event=args.paraphrases,
        seed=args.seed,
        rounds=args.rounds,
        ambiguous=args.ambiguous,
        filler_len=args.filler_len,
    )
    result = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_pairs(out / "corpus.pairs")
    result.write_inventory(out / "inventory.tsv")
    print(f"pairs={len(result.pairs)}")
    print(f"paraphrase_sets={result.inventory.num_sets()}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evpred",
        description="Event-prediction seq2seq toolkit (train, decode, evaluate).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="split a pair corpus into train/dev/test")
    p.add_argument("input")
    p.add_argument("--mode", choices=("descript", "random"), default="descript",
                   help="descript: positional 8/1/1 (5th pair of every 10 to dev, "
                        "10th to test); random: seeded shuffle split")
    p.add_argument("--fractions", default="0.8,0.1,0.1",
                   help="train,dev,test fractions for random mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model, keeping the best-dev-BLEU epoch")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="greedy-decode predictions for source lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True,
                   help="pair file or one source sentence per line")
    p.add_argument("--output", required=True)
    p.add_argument("--vocab", help="vocabulary file (default: next to checkpoint)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against references")
    p.add_argument("--predictions", required=True)
    p.add_argument("--pairs", help="pair file supplying sources and references")
    p.add_argument("--references", help="reference sentences, one per line")
    p.add_argument("--sources", help="source sentences, one per line")
    p.add_argument("--inventory", help="gold paraphrase-set file")
    p.add_argument("--report", help="also write the report to this file")
    p.add_argument("--near-misses", dest="near_misses",
                   help="near-miss export path (default near_misses.tsv)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient check over model variants")
    p.add_argument("--cell", choices=("lstm", "gru"))
    p.add_argument("--layers", type=int, choices=(1, 2))
    p.add_argument("--attention", type=_onoff, metavar="on|off")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--scenarios", type=int, default=5)
    p.add_argument("--events", type=int, default=10)
    p.add_argument("--paraphrases", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--ambiguous", action="store_true",
                   help="two successors per event, disambiguated by a trailing cue")
    p.add_argument("--filler-len", dest="filler_len", type=int, default=6,
                   help="ambiguous mode: filler tokens between event and cue")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return 3
    except TrainingDivergedError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
