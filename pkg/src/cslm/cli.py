"""Command-line entry point: ``cslm {synth,train,eval,translate,project,generate,matrix}``.

Every subcommand accepts ``--config FILE`` with flat ``key=value`` lines whose
keys are the long flag names (dashes or underscores). Flags given on the
command line override the file. Failures print one JSON line on stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .corpus import Corpus, CorpusError, Vocabulary, load_bilingual_dict, load_corpus
from .evaluate import EvalError, SELECTORS, generate, pca_project, perplexity_report, separability_score, translate_eval
from .experiment import (REGIMES, DataBundle, format_table, format_tsv, load_bundle, run_cell, run_matrix,
                         write_json)
from .model import ModelError, make_partition
from .regularizers import COVARIANCES, RegularizerConfig, RegularizerError
from .synth import SynthConfig, write_synthetic
from .training import TrainConfig, TrainError

logger = logging.getLogger("cslm")

CONFIG_ECHO = "config.txt"
_SKIP_ECHO = {"config", "func", "command", "verbose"}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- value parsing

def _seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _paths(text: str) -> list[str]:
    return [p for p in str(text).split(",") if p]


def _words(text: str) -> list[str]:
    return [w for w in str(text).replace(",", " ").split() if w]


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def read_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip().replace("-", "_")] = v.strip()
    return values


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    """Turn config-file strings into typed parser defaults."""
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in values.items():
        if key in _SKIP_ECHO:
            continue
        action = actions.get(key)
        if action is None:
            raise UsageError(f"unknown config key {key!r} for '{parser.prog}'")
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[key] = _bool(raw)
            elif action.type is not None:
                defaults[key] = action.type(raw)
            else:
                defaults[key] = raw
        except (argparse.ArgumentTypeError, ValueError) as e:
            raise UsageError(f"config key {key!r}: {e}")
        if action.choices is not None and defaults[key] not in action.choices:
            raise UsageError(f"config key {key!r}: {raw!r} not one of {sorted(action.choices)}")
    parser.set_defaults(**defaults)


def _echo_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def resolved_config(args: argparse.Namespace) -> str:
    lines = [f"# cslm {args.command}"]
    for k in sorted(vars(args)):
        v = getattr(args, k)
        if k in _SKIP_ECHO or v is None:
            continue
        lines.append(f"{k}={_echo_value(v)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- shared helpers

def _prepare_out(out: str | Path, force: bool) -> Path:
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()):
        if not force:
            raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(args, out: Path) -> None:
    (out / CONFIG_ECHO).write_text(resolved_config(args), encoding="utf-8")


def _bundle(args) -> DataBundle:
    d = Path(args.data) if args.data else None

    def pick(explicit, name):
        if explicit:
            return explicit
        if d is None:
            raise UsageError(f"need --data or an explicit path for {name}")
        return str(d / name)

    test = args.test or ([str(d / "test.cs"), str(d / "test.mono")] if d is not None else None)
    if not test:
        raise UsageError("need --data or --test")
    lexicon = args.lexicon or (str(d / "lexicon.tsv") if d is not None and (d / "lexicon.tsv").exists() else None)
    paths = [pick(args.train_l1, "train.l1"), pick(args.train_l2, "train.l2"), pick(args.valid, "valid.mix"),
             *test, pick(args.l1_words, "l1.words"), pick(args.l2_words, "l2.words")]
    for p in paths + ([lexicon] if lexicon else []):
        if not Path(p).is_file():
            raise UsageError(f"missing file {p}")
    return load_bundle(paths[0], paths[1], paths[2], test, paths[-2], paths[-1], lexicon, args.vocab_min_freq)


def _train_config(args) -> TrainConfig:
    constraint = getattr(args, "constraint", "none")
    if args.weight <= 0 and constraint != "none":
        raise UsageError("--weight must be positive when a constraint is selected")
    reg = RegularizerConfig.named(constraint, args.weight, ridge=args.ridge,
                                  relative_ridge=not args.absolute_ridge, covariance=args.covariance)
    return TrainConfig(lr=args.lr, dropout=args.dropout, hidden=args.hidden, patience=args.patience,
                       max_epochs=args.max_epochs, batch_size=args.batch_size, seeds=args.seeds, reg=reg,
                       normalize=getattr(args, "normalize", False), clip_norm=args.clip_norm)


def _load_model(args) -> tuple:
    vocab = Vocabulary.load(args.vocab)
    params, header = load_checkpoint(args.checkpoint, vocab)
    return vocab, params, header


def _emit(obj, out: Path | None, name: str) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if out is not None:
        (out / name).write_text(text + "\n", encoding="utf-8")


def _fmt_ppl(v) -> str:
    return "-" if v is None else f"{v:.3f}"


# --------------------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    cfg = SynthConfig(vocab_size=args.vocab_size, sentences=args.sentences, cs_sentences=args.cs_sentences,
                      valid_sentences=args.valid_sentences, valid_cs=args.valid_cs,
                      test_sentences=args.test_sentences, min_len=args.min_len, max_len=args.max_len,
                      states=args.states, transition_alpha=args.transition_alpha,
                      emission_zipf=args.emission_zipf, switch_prob=args.switch_prob, seed=args.seed)
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(str(e))
    out = _prepare_out(args.out, args.force)
    _echo(args, out)
    written = write_synthetic(cfg, out)
    print(json.dumps({"out": str(out), "files": [p.name for p in written], "seed": cfg.seed}))
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    bundle = _bundle(args)
    out = _prepare_out(args.out, args.force)
    _echo(args, out)
    bundle.vocab.save(out / "vocab.tsv")
    cell = run_cell(bundle, cfg, args.regime, "", out, args.translate_min_freq, args.subst_prob, args.concat_n,
                    args.data_seed)
    summary = cell.summary()
    summary["checkpoints"] = [f"{cfg.digest()}-seed{s}/best.ckpt" for s in cfg.seeds]
    write_json(out / "summary.json", summary)
    (out / "summary.txt").write_text(format_table([cell]), encoding="utf-8")
    print(format_table([cell]), end="")
    return 0


def cmd_eval(args) -> int:
    vocab, params, _ = _load_model(args)
    corpus = Corpus([], np.zeros(0, dtype=np.int8))
    for p in args.corpus:
        corpus = corpus + load_corpus(p, vocab)
    if not len(corpus):
        raise UsageError("evaluation corpus is empty")
    rep = perplexity_report(params, corpus, vocab)
    out = _prepare_out(args.out, args.force) if args.out else None
    if out is not None:
        _echo(args, out)
        table = "\n".join(f"{k:<8}{_fmt_ppl(rep.ppl[k]):>12}{rep.counts[k]:>10}" for k in SELECTORS)
        (out / "eval.txt").write_text(f"{'subset':<8}{'ppl':>12}{'tokens':>10}\n{table}\n", encoding="utf-8")
    _emit({"checkpoint": str(args.checkpoint), "vocab_size": len(vocab), **rep.to_dict()}, out, "eval.json")
    return 0


def cmd_translate(args) -> int:
    vocab, params, _ = _load_model(args)
    dictionary = load_bilingual_dict(args.dict, vocab)
    rep = translate_eval(params.W, vocab, dictionary, args.min_freq, args.direction)
    out = _prepare_out(args.out, args.force) if args.out else None
    if out is not None:
        _echo(args, out)
    _emit({"checkpoint": str(args.checkpoint), "dictionary_pairs": len(dictionary),
           "dictionary_dropped": dictionary.dropped, **rep.to_dict()}, out, "translate.json")
    return 0


def cmd_project(args) -> int:
    vocab, params, _ = _load_model(args)
    proj = pca_project(params.W, make_partition(vocab), 2)
    lines = proj.to_tsv_lines(vocab)
    info = {"checkpoint": str(args.checkpoint), "points": len(lines),
            "explained_ratio": [float(v) for v in proj.explained_ratio],
            "separability": separability_score(proj)}
    if args.out:
        out = _prepare_out(args.out, args.force)
        _echo(args, out)
        (out / "projection.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        _emit(info, out, "projection.json")
    else:
        print("\n".join(lines))
    return 0


def cmd_generate(args) -> int:
    vocab, params, _ = _load_model(args)
    prefixes = [_words(p) for p in args.prefix or []]
    if args.prefix_file:
        with open(args.prefix_file, encoding="utf-8") as f:
            prefixes += [line.split() for line in f if line.strip()]
    if not prefixes:
        raise UsageError("give --prefix or --prefix-file")
    rows = []
    for i, words in enumerate(prefixes):
        ids = [int(t) for t in vocab.encode(words)]
        for k in range(args.samples):
            seed = None if args.seed is None else args.seed + 1000 * i + k
            full = generate(params, ids, args.max_len, args.strategy, args.temperature, seed)
            rows.append(" ".join(words) + "\t" + " ".join(vocab.decode(full[len(ids):])))
    text = "\n".join(rows) + "\n"
    if args.out:
        out = _prepare_out(args.out, args.force)
        _echo(args, out)
        (out / "generated.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_matrix(args) -> int:
    base = _train_config(args)
    bundle = _bundle(args)
    out = _prepare_out(args.out, args.force)
    _echo(args, out)
    bundle.vocab.save(out / "vocab.tsv")
    for r in args.regimes:
        if r not in REGIMES:
            raise UsageError(f"unknown regime {r!r}; expected one of {REGIMES}")
    norms = {"off": (False,), "on": (True,), "both": (False, True)}[args.norms]
    cells = run_matrix(bundle, base, out, args.regimes, args.constraints, norms, args.weight,
                       args.translate_min_freq, args.subst_prob, args.concat_n, args.data_seed,
                       progress=logger.info)
    table = format_table(cells)
    (out / "table.txt").write_text(table, encoding="utf-8")
    (out / "table.tsv").write_text(format_tsv(cells), encoding="utf-8")
    write_json(out / "summary.json", [c.summary() for c in cells])
    print(table, end="")
    return 0


# --------------------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; command-line flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _data_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help="directory written by 'cslm synth' (fills any path not given explicitly)")
    g.add_argument("--train-l1")
    g.add_argument("--train-l2")
    g.add_argument("--valid")
    g.add_argument("--test", type=_paths, help="comma-separated test corpora")
    g.add_argument("--l1-words")
    g.add_argument("--l2-words")
    g.add_argument("--lexicon", help="bilingual dictionary (needed for subst and for MRR/P@10)")
    g.add_argument("--vocab-min-freq", type=int, default=1)
    g.add_argument("--regime", choices=REGIMES, default="mono")
    g.add_argument("--subst-prob", type=float, default=0.2)
    g.add_argument("--concat-n", type=int, default=None, help="pseudo-CS sentences to add (default: smaller corpus size)")
    g.add_argument("--data-seed", type=int, default=0)
    g.add_argument("--translate-min-freq", type=int, default=20,
                   help="frequency threshold for the MRR/P@10 columns of the summary")


def _train_flags(p: argparse.ArgumentParser, with_constraint: bool = True) -> None:
    g = p.add_argument_group("model and optimisation")
    if with_constraint:
        g.add_argument("--constraint", default="none", help="none, skld, cd or skld+cd")
        g.add_argument("--normalize", action="store_true", help="keep language rows of W at unit norm")
    g.add_argument("--weight", type=float, default=1.0, help="constraint weight")
    g.add_argument("--ridge", type=float, default=1e-4)
    g.add_argument("--absolute-ridge", action="store_true", help="ridge is absolute, not scaled by tr(S)/z")
    g.add_argument("--covariance", choices=COVARIANCES, default="auto")
    g.add_argument("--hidden", type=int, default=64)
    g.add_argument("--lr", type=float, default=0.001)
    g.add_argument("--dropout", type=float, default=0.3)
    g.add_argument("--patience", type=int, default=10)
    g.add_argument("--max-epochs", type=int, default=40)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--clip-norm", type=float, default=5.0)
    g.add_argument("--seeds", "--seed", dest="seeds", type=_seeds, default=(1, 2, 3),
                   help="comma-separated seed list")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True, help="vocab.tsv written by 'cslm train'")


def build_parser() -> Parser:
    parser = Parser(prog="cslm", description="Code-switching LSTM language models with output-embedding constraints")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic twin-language corpus")
    _common(p)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--vocab-size", "--l1-vocab", "--l2-vocab", dest="vocab_size", type=int, default=200,
                   help="words per language (both languages share it)")
    p.add_argument("--sentences", type=int, default=5000, help="training sentences per language")
    p.add_argument("--cs-sentences", type=int, default=1000)
    p.add_argument("--valid-sentences", type=int, default=500)
    p.add_argument("--valid-cs", type=int, default=500)
    p.add_argument("--test-sentences", type=int, default=500)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--states", type=int, default=20)
    p.add_argument("--transition-alpha", type=float, default=0.1)
    p.add_argument("--emission-zipf", type=float, default=1.0)
    p.add_argument("--switch-prob", type=float, default=0.25)
    p.set_defaults(func=cmd_synth, out="synth")

    p = sub.add_parser("train", help="train one configuration over several seeds")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    p.set_defaults(func=cmd_train, out="runs/train")

    p = sub.add_parser("eval", help="five perplexities of a checkpoint")
    _common(p)
    _model_flags(p)
    p.add_argument("--corpus", type=_paths, required=True, help="comma-separated corpora")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("translate", help="word translation MRR and P@10")
    _common(p)
    _model_flags(p)
    p.add_argument("--dict", required=True)
    p.add_argument("--min-freq", type=int, default=80, help="keep words with frequency strictly above this")
    p.add_argument("--direction", choices=("L1-L2", "L2-L1"), default="L1-L2")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("project", help="2-D PCA of the output embeddings as TSV")
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("generate", help="complete prefixes with the model")
    _common(p)
    _model_flags(p)
    p.add_argument("--prefix", action="append", help="space-separated prefix tokens (repeatable)")
    p.add_argument("--prefix-file")
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--strategy", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("matrix", help="run the regime x constraint x normalization grid")
    _common(p)
    _data_flags(p)
    _train_flags(p, with_constraint=False)
    p.add_argument("--regimes", type=_words, default=list(REGIMES))
    p.add_argument("--constraints", type=_words, default=["none", "skld", "cd"])
    p.add_argument("--norms", choices=("off", "on", "both"), default="both")
    p.set_defaults(func=cmd_matrix, out="runs/matrix")
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, read_config_file(args.config))
        args = parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as e:
        _fail("usage", str(e), 2)
    except (CheckpointError, CorpusError, EvalError, ModelError, RegularizerError, TrainError, ValueError) as e:
        _fail(type(e).__name__, str(e), 1)
    except OSError as e:
        _fail("io", f"{e.strerror or e}: {e.filename}" if e.filename else str(e), 1)
    return 1


def _fail(kind: str, message: str, code: int):
    sys.stderr.write(json.dumps({"error": kind, "message": " ".join(message.split())}) + "\n")
    sys.exit(code)


if __name__ == "__main__":
    sys.exit(main())
