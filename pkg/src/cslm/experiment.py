"""Data regimes, multi-seed cells and the constraint/normalization grid."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import (BilingualDict, Corpus, Vocabulary, build_vocabulary, load_bilingual_dict, load_corpus,
                     load_wordlists, read_tagged, sentence_concatenation, word_substitution)
from .evaluate import SELECTORS, EvalError, pca_project, perplexity_report, separability_score, translate_eval
from .model import make_partition
from .regularizers import RegularizerConfig
from .synth import SyntheticBilingual
from .training import SeedRun, TrainConfig, train

REGIMES = ("mono", "subst", "concat")
PPL_COLUMNS = ("ZH", "EN", "CS", "CSP", "OVERALL")
PPL_HEADERS = ("ZH", "EN", "CS-PPL", "CSP-PPL", "Overall")


@dataclass
class DataBundle:
    vocab: Vocabulary
    train_l1: Corpus
    train_l2: Corpus
    valid: Corpus
    test: Corpus
    lexicon: BilingualDict | None = None


def bundle_from_synthetic(data: SyntheticBilingual) -> DataBundle:
    return DataBundle(data.vocab, data.l1, data.l2, data.valid, data.cs_test + data.test_mono, data.lexicon)


def load_bundle(train_l1: str | Path, train_l2: str | Path, valid: str | Path, test: Sequence[str | Path],
                l1_words: str | Path, l2_words: str | Path, lexicon: str | Path | None = None,
                min_freq: int = 1) -> DataBundle:
    """Build the vocabulary from the two training files and load everything against it."""
    tag_of = load_wordlists(l1_words, l2_words)
    vocab = build_vocabulary(read_tagged(train_l1, tag_of) + read_tagged(train_l2, tag_of), min_freq)
    tests = [load_corpus(p, vocab) for p in test]
    test_corpus = tests[0]
    for t in tests[1:]:
        test_corpus = test_corpus + t
    lex = load_bilingual_dict(lexicon, vocab) if lexicon else None
    return DataBundle(vocab, load_corpus(train_l1, vocab), load_corpus(train_l2, vocab),
                      load_corpus(valid, vocab), test_corpus, lex)


def training_corpus(bundle: DataBundle, regime: str, subst_prob: float = 0.2, concat_n: int | None = None,
                    data_seed: int = 0) -> Corpus:
    """Monolingual data, or one fixed pseudo-CS corpus built from it.

    ``subst`` replaces the monolingual sentences by their substituted copies;
    ``concat`` appends ``concat_n`` (default: the smaller corpus size)
    concatenated sentences.
    """
    mono = bundle.train_l1 + bundle.train_l2
    if regime == "mono":
        return mono
    if regime == "subst":
        if bundle.lexicon is None:
            raise ValueError("word substitution needs a bilingual dictionary")
        return word_substitution(mono, bundle.lexicon, subst_prob, data_seed, bundle.vocab)
    if regime == "concat":
        n = concat_n if concat_n is not None else min(len(bundle.train_l1), len(bundle.train_l2))
        return sentence_concatenation(bundle.train_l1, bundle.train_l2, n, data_seed)
    raise ValueError(f"unknown data regime {regime!r}; expected one of {REGIMES}")


@dataclass
class SeedMetrics:
    seed: int
    ppl: dict[str, float | None]
    counts: dict[str, int]
    best_epoch: int
    epochs: int
    mrr: float | None = None
    p_at_10: float | None = None
    separability: float | None = None
    history: list[dict] = field(default_factory=list)


@dataclass
class CellResult:
    label: str
    regime: str
    config: TrainConfig
    seeds: list[SeedMetrics]
    runs: list[SeedRun] = field(default_factory=list, repr=False)

    def mean(self, key: str) -> float | None:
        vals = []
        for s in self.seeds:
            v = s.ppl.get(key) if key in SELECTORS else getattr(s, key)
            if v is None:
                return None
            vals.append(v)
        return float(np.mean(vals))

    def summary(self) -> dict:
        return {
            "label": self.label,
            "regime": self.regime,
            "constraint": self.config.reg.name,
            "normalize": self.config.normalize,
            "config": self.config.to_dict(),
            "mean": {k: self.mean(k) for k in (*PPL_COLUMNS, "mrr", "p_at_10", "separability")},
            "seeds": [
                {"seed": s.seed, "ppl": s.ppl, "counts": s.counts, "best_epoch": s.best_epoch,
                 "epochs": s.epochs, "mrr": s.mrr, "p_at_10": s.p_at_10, "separability": s.separability,
                 "history": s.history}
                for s in self.seeds
            ],
        }


def evaluate_run(run: SeedRun, bundle: DataBundle, freq_threshold: int | None = None) -> SeedMetrics:
    rep = perplexity_report(run.params, bundle.test, bundle.vocab)
    m = SeedMetrics(run.seed, rep.ppl, rep.counts, run.log.best_epoch, len(run.log.records))
    m.history = [{"epoch": r.epoch, "ce": r.ce, "skld": r.skld, "cd": r.cd, "total": r.total,
                  "valid_ppl": r.valid_ppl} for r in run.log.records]
    if bundle.lexicon is not None and freq_threshold is not None:
        try:
            tr = translate_eval(run.params.W, bundle.vocab, bundle.lexicon, freq_threshold)
            m.mrr, m.p_at_10 = tr.mrr, tr.p_at_10
        except EvalError:
            pass
    m.separability = separability_score(pca_project(run.params.W, make_partition(bundle.vocab)))
    return m


def run_cell(bundle: DataBundle, cfg: TrainConfig, regime: str = "mono", label: str = "",
             run_dir: str | Path | None = None, freq_threshold: int | None = None,
             subst_prob: float = 0.2, concat_n: int | None = None, data_seed: int = 0,
             keep_params: bool = False) -> CellResult:
    """Train every seed of one configuration and evaluate on ``bundle.test``."""
    corpus = training_corpus(bundle, regime, subst_prob, concat_n, data_seed)
    runs = train(corpus, bundle.valid, bundle.vocab, cfg, run_dir)
    metrics = [evaluate_run(r, bundle, freq_threshold) for r in runs]
    return CellResult(label, regime, cfg, metrics, runs if keep_params else [])


# rows (a)-(r): three data regimes x {baseline, SKLD, CD}, then the same with normalization
MATRIX_ROWS = [
    (chr(ord("a") + 9 * norm + 3 * ri + ci), regime, constraint, bool(norm))
    for norm in (0, 1)
    for ri, regime in enumerate(REGIMES)
    for ci, constraint in enumerate(("none", "skld", "cd"))
]


def run_matrix(bundle: DataBundle, base: TrainConfig, out_dir: str | Path | None = None,
               regimes: Sequence[str] = REGIMES, constraints: Sequence[str] = ("none", "skld", "cd"),
               norms: Sequence[bool] = (False, True), weight: float = 1.0, freq_threshold: int | None = None,
               subst_prob: float = 0.2, concat_n: int | None = None, data_seed: int = 0,
               progress=None) -> list[CellResult]:
    cells = []
    for label, regime, constraint, norm in MATRIX_ROWS:
        if regime not in regimes or constraint not in constraints or norm not in norms:
            continue
        reg = replace(base.reg, **{f: getattr(RegularizerConfig.named(constraint, weight), f)
                                   for f in ("skld_weight", "cd_weight")})
        cfg = replace(base, reg=reg, normalize=norm)
        cell_dir = Path(out_dir) / f"row-{label}" if out_dir is not None else None
        if progress:
            progress(f"row ({label}) {regime} {constraint} norm={'on' if norm else 'off'}")
        cells.append(run_cell(bundle, cfg, regime, label, cell_dir, freq_threshold, subst_prob, concat_n,
                              data_seed))
    return cells


def _fmt(v: float | None, width: int = 10) -> str:
    return f"{'-':>{width}}" if v is None else f"{v:>{width}.3f}"


def format_table(cells: Sequence[CellResult]) -> str:
    """Seed-averaged perplexities, one row per cell, fixed decimals."""
    head = f"{'row':<5}{'data':<8}{'constraint':<11}{'norm':<6}" + "".join(f"{h:>10}" for h in PPL_HEADERS)
    lines = [head, "-" * len(head)]
    for c in cells:
        label = f"({c.label})" if c.label else ""
        lines.append(f"{label:<5}{c.regime:<8}{c.config.reg.name:<11}{'yes' if c.config.normalize else 'no':<6}"
                     + "".join(_fmt(c.mean(k)) for k in PPL_COLUMNS))
    return "\n".join(lines) + "\n"


def format_tsv(cells: Sequence[CellResult]) -> str:
    cols = ["row", "data", "constraint", "norm", *PPL_HEADERS, "MRR", "P@10", "separability"]
    lines = ["\t".join(cols)]
    for c in cells:
        vals = [c.mean(k) for k in (*PPL_COLUMNS, "mrr", "p_at_10", "separability")]
        lines.append("\t".join([c.label, c.regime, c.config.reg.name, "yes" if c.config.normalize else "no"]
                               + ["" if v is None else f"{v:.6f}" for v in vals]))
    return "\n".join(lines) + "\n"


def write_json(path: str | Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
