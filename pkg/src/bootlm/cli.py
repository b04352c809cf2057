"""Command-line entry point: ``bootlm <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .errors import BootLMError, DataError, NumericError

logger = logging.getLogger("bootlm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{path}: no such file")
    return p


def _read_lines(path: Path) -> list[str]:
    return _existing(str(path)).read_text(encoding="utf-8").splitlines()


def cmd_prep(args) -> int:
    from .corpus_prep import SourceKind, preprocess_text

    source = SourceKind.parse(args.source)
    text = _existing(args.input).read_text(encoding="utf-8")
    Path(args.output).write_text(preprocess_text(text, source), encoding="utf-8", newline="\n")
    return EXIT_OK


def cmd_train_tokenizer(args) -> int:
    from .tokenizer import recommend_vocab_size, train_wordpiece

    corpus = [line for path in args.input for line in _read_lines(Path(path))]
    size = args.size
    if args.candidates:
        size = recommend_vocab_size(corpus, sorted(args.candidates), min_frequency=args.min_frequency)
        logger.info("recommended vocabulary size: %d", size)
    if size is None:
        raise UsageError("train-tokenizer: one of --size or --candidates is required")
    vocab = train_wordpiece(corpus, size, args.min_frequency)
    vocab.save(args.output)
    print(f"wrote {len(vocab)} entries to {args.output}")
    return EXIT_OK


def _load_scorer(checkpoint: str, vocab_path: str | None, boundaries: bool):
    from .checkpoint import load_checkpoint
    from .pll import PLLScorer
    from .tokenizer import Vocabulary, WordPieceTokenizer

    ckpt = load_checkpoint(_existing(checkpoint))
    if vocab_path is not None:
        vocab = Vocabulary.load(_existing(vocab_path))
    elif ckpt.vocab is not None:
        vocab = Vocabulary(ckpt.vocab)
    else:
        raise DataError("checkpoint carries no vocabulary; pass --vocab")
    if len(vocab) != ckpt.config.vocab_size:
        raise DataError(f"vocabulary has {len(vocab)} entries, model expects {ckpt.config.vocab_size}")
    return PLLScorer(ckpt.student, WordPieceTokenizer(vocab), boundaries=boundaries)


def cmd_pretrain(args) -> int:
    from .config import RunConfig
    from .tokenizer import Vocabulary, WordPieceTokenizer
    from .trainer import BootstrapTrainer, chunk_tokens

    try:
        run = RunConfig.load(_existing(args.config))
    except ValueError as exc:
        raise DataError(f"{args.config}: {exc}") from exc
    train_path = Path(args.data) if args.data else run.data.get("train")
    vocab_path = Path(args.vocab) if args.vocab else run.data.get("vocab")
    if train_path is None or vocab_path is None:
        raise DataError("training data and vocabulary must be given (data.train / data.vocab or --data / --vocab)")
    train = run.train
    if args.seed is not None:
        from dataclasses import replace
        train = replace(train, seed=args.seed)

    vocab = Vocabulary.load(_existing(str(vocab_path)))
    if len(vocab) != run.model.vocab_size:
        raise DataError(f"vocabulary has {len(vocab)} entries, model.vocab_size is {run.model.vocab_size}")
    if vocab.mask_id != run.model.mask_id:
        raise DataError("model.mask_id does not match the vocabulary's [MASK] id")
    tok = WordPieceTokenizer(vocab)
    ids = [i for line in _read_lines(train_path) for i in tok.encode(line).ids]
    chunks = chunk_tokens(ids, train.seq_len)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = BootstrapTrainer(run.model, train)

    def report(m):
        if m.step % args.log_every == 0 or m.step == train.steps - 1:
            logger.info("step %d  L=%.4f  L_LB=%.4f  L_LM=%.4f  acc=%.3f  lr=%.2e  tau=%.5f  var=%.3g",
                        m.step, m.loss_total, m.loss_lb, m.loss_lm, m.mlm_accuracy, m.lr, m.tau,
                        m.target_variance)

    trainer.fit(chunks, out_dir=out, on_step=report, vocab=vocab.entries)
    return EXIT_OK


def cmd_score_pairs(args) -> int:
    from .pll import pair_accuracy, read_pairs_jsonl

    scorer = _load_scorer(args.checkpoint, args.vocab, args.boundaries)
    pairs = read_pairs_jsonl(_existing(args.pairs))
    overall, per_task = pair_accuracy(pairs, scorer, args.temperature)
    for task, acc in per_task.items():
        print(f"{task}\t{acc:.4f}")
    print(f"overall\t{overall:.4f}")
    return EXIT_OK


def cmd_sweep_temperature(args) -> int:
    from .pll import default_temperature_grid, read_pairs_jsonl, temperature_sweep

    scorer = _load_scorer(args.checkpoint, args.vocab, args.boundaries)
    pairs = read_pairs_jsonl(_existing(args.pairs))
    grid = args.grid if args.grid else default_temperature_grid()
    profile = temperature_sweep(pairs, scorer, grid)
    profile.write_csv(args.out)
    print(profile.summary())
    return EXIT_OK


def cmd_inspect_checkpoint(args) -> int:
    from .checkpoint import read_raw

    meta, arrays = read_raw(_existing(args.checkpoint))
    print(f"mode: {meta['mode']}  step: {meta.get('step', 0)}  "
          f"vocab: {len(meta['vocab']) if meta.get('vocab') else 'none'}")
    for key, value in meta["model"].items():
        print(f"model.{key} = {value}")
    total = 0
    for name, a in arrays.items():
        total += a.size
        print(f"{name}\t{'x'.join(map(str, a.shape))}")
    print(f"{len(arrays)} arrays, {total} parameters")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bootlm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("prep", help="normalize one source corpus file")
    p.add_argument("--source", required=True, help="source kind, e.g. childes or gutenberg")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train-tokenizer", help="train a WordPiece vocabulary")
    p.add_argument("--input", required=True, nargs="+")
    p.add_argument("--output", required=True)
    p.add_argument("--size", type=int)
    p.add_argument("--candidates", type=int, nargs="+",
                   help="pick the largest size whose items are frequent enough")
    p.add_argument("--min-frequency", type=int, default=2)
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("pretrain", help="latent-bootstrapping pretraining")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoints and metrics.csv")
    p.add_argument("--data", help="override data.train")
    p.add_argument("--vocab", help="override data.vocab")
    p.add_argument("--seed", type=int)
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_pretrain)

    for name, func, help_ in (
        ("score-pairs", cmd_score_pairs, "minimal-pair accuracy at one temperature"),
        ("sweep-temperature", cmd_sweep_temperature, "confidence profile over a temperature grid"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--pairs", required=True, help="JSON Lines with sentence_good, sentence_bad, UID")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--vocab", help="vocabulary file (defaults to the one stored in the checkpoint)")
        p.add_argument("--boundaries", action="store_true", help="add and score [BOS]/[EOS]")
        if name == "score-pairs":
            p.add_argument("--temperature", type=float, default=1.0)
        else:
            p.add_argument("--out", required=True)
            p.add_argument("--grid", type=float, nargs="+")
        p.set_defaults(func=func)

    p = sub.add_parser("inspect-checkpoint", help="print config and array table")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect_checkpoint)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    threads = os.environ.get("BOOTLM_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, OSError, UnicodeDecodeError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except BootLMError as exc:
        logger.error("%s", exc)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
