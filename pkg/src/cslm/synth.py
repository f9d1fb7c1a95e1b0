"""Twin-language synthetic corpora.

Both languages are emitted by one hidden Markov grammar over shared abstract
states. Each abstract word has one surface form per language, so the two
vocabularies are disjoint and the ground-truth lexicon is one-to-one.
Code-switched sentences follow the same grammar but flip surface language
at random positions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import BilingualDict, Corpus, Lang, Vocabulary, build_vocabulary


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 200           # per language
    sentences: int = 5000           # training sentences per language
    cs_sentences: int = 1000
    valid_sentences: int = 500      # held-out monolingual sentences per language
    valid_cs: int = 500
    test_sentences: int = 500       # monolingual test sentences per language
    min_len: int = 4
    max_len: int = 12
    states: int = 20
    transition_alpha: float = 0.1   # Dirichlet concentration of each transition row
    emission_zipf: float = 1.0
    switch_prob: float = 0.25
    seed: int = 7

    def validate(self) -> None:
        for name in ("vocab_size", "sentences", "cs_sentences", "states", "min_len", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if min(self.valid_sentences, self.valid_cs, self.test_sentences) < 0:
            raise ValueError("validation and test sizes must be non-negative")
        if self.max_len < max(self.min_len, 2):
            raise ValueError("max_len must be >= min_len and >= 2")
        if self.states > self.vocab_size:
            raise ValueError("need at least one word per grammar state")
        if not 0.0 < self.switch_prob <= 1.0:
            raise ValueError("switch_prob must lie in (0, 1]")
        if self.transition_alpha <= 0:
            raise ValueError("transition_alpha must be positive")


class Grammar(NamedTuple):
    start: np.ndarray        # (S,)
    trans: np.ndarray        # (S, S)
    state_of: np.ndarray     # (K,) abstract word -> state
    emit: np.ndarray         # (K,) emission prob of a word within its state
    members: list            # state -> abstract word ids
    start_cdf: np.ndarray
    trans_cdf: np.ndarray
    emit_cdf: list


class SyntheticText(NamedTuple):
    l1: list[list[str]]
    l2: list[list[str]]
    cs_test: list[list[str]]
    valid: list[list[str]]
    test_mono: list[list[str]]
    lexicon: list[tuple[str, str]]
    l1_words: list[str]
    l2_words: list[str]


class SyntheticBilingual(NamedTuple):
    l1: Corpus
    l2: Corpus
    cs_test: Corpus
    lexicon: BilingualDict
    valid: Corpus
    test_mono: Corpus
    vocab: Vocabulary


def _grammar(cfg: SynthConfig, rng: np.random.Generator) -> Grammar:
    S, K = cfg.states, cfg.vocab_size
    start = rng.dirichlet(np.ones(S))
    trans = rng.dirichlet(np.full(S, cfg.transition_alpha), size=S)
    state_of = np.empty(K, dtype=np.int64)
    state_of[rng.permutation(K)] = np.arange(K) % S
    emit = np.empty(K)
    members = []
    for s in range(S):
        ids = np.flatnonzero(state_of == s)
        w = 1.0 / np.arange(1, len(ids) + 1) ** cfg.emission_zipf
        emit[ids[rng.permutation(len(ids))]] = w / w.sum()
        members.append(ids)
    return Grammar(start, trans, state_of, emit, members, np.cumsum(start), np.cumsum(trans, axis=1),
                   [np.cumsum(emit[ids]) for ids in members])


def _draw(cdf: np.ndarray, rng: np.random.Generator) -> int:
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)


def _sample_abstract(g: Grammar, length: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(length, dtype=np.int64)
    s = _draw(g.start_cdf, rng)
    for t in range(length):
        if t:
            s = _draw(g.trans_cdf[s], rng)
        out[t] = g.members[s][_draw(g.emit_cdf[s], rng)]
    return out


def _switch_pattern(length: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Per-position language (0/1) with at least one switch."""
    lang = np.empty(length, dtype=np.int64)
    lang[0] = rng.integers(2)
    for t in range(1, length):
        lang[t] = 1 - lang[t - 1] if rng.random() < p else lang[t - 1]
    if np.all(lang == lang[0]):
        cut = int(rng.integers(1, length))
        lang[cut:] = 1 - lang[0]
    return lang


def synthesize_text(cfg: SynthConfig) -> SyntheticText:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    g = _grammar(cfg, rng)
    K = cfg.vocab_size
    width = len(str(K - 1))
    l1_surface = [f"a{i:0{width}d}" for i in range(K)]
    perm = rng.permutation(K)
    l2_surface = [f"b{perm[i]:0{width}d}" for i in range(K)]
    surfaces = (l1_surface, l2_surface)

    def length(lo):
        return int(rng.integers(lo, cfg.max_len + 1))

    def mono(n, lang):
        return [[surfaces[lang][k] for k in _sample_abstract(g, length(cfg.min_len), rng)] for _ in range(n)]

    def mixed(n):
        out = []
        for _ in range(n):
            words = _sample_abstract(g, length(max(cfg.min_len, 2)), rng)
            langs = _switch_pattern(len(words), cfg.switch_prob, rng)
            out.append([surfaces[la][k] for k, la in zip(words, langs)])
        return out

    l1 = mono(cfg.sentences, 0)
    l2 = mono(cfg.sentences, 1)
    cs_test = mixed(cfg.cs_sentences)
    valid = mono(cfg.valid_sentences, 0) + mono(cfg.valid_sentences, 1) + mixed(cfg.valid_cs)
    test_mono = mono(cfg.test_sentences, 0) + mono(cfg.test_sentences, 1)
    lexicon = list(zip(l1_surface, l2_surface))
    return SyntheticText(l1, l2, cs_test, valid, test_mono, lexicon, l1_surface, sorted(l2_surface))


def generate_synthetic_bilingual(cfg: SynthConfig, min_freq: int = 1) -> SyntheticBilingual:
    """Synthesize the twin corpora and index them against a training vocabulary.

    The vocabulary is built from the two monolingual training corpora only;
    lexicon pairs whose words never occur in training are dropped.
    """
    text = synthesize_text(cfg)
    tagged = [[(w, Lang.L1) for w in s] for s in text.l1] + [[(w, Lang.L2) for w in s] for s in text.l2]
    vocab = build_vocabulary(tagged, min_freq=min_freq)
    pairs, dropped = [], 0
    for a, b in text.lexicon:
        if a in vocab.id_of and b in vocab.id_of:
            pairs.append((vocab.id_of[a], vocab.id_of[b]))
        else:
            dropped += 1
    return SyntheticBilingual(
        Corpus.from_tokens(text.l1, vocab),
        Corpus.from_tokens(text.l2, vocab),
        Corpus.from_tokens(text.cs_test, vocab),
        BilingualDict(pairs, dropped),
        Corpus.from_tokens(text.valid, vocab),
        Corpus.from_tokens(text.test_mono, vocab),
        vocab,
    )


SYNTH_FILES = ("train.l1", "train.l2", "test.cs", "lexicon.tsv", "valid.mix", "test.mono", "l1.words", "l2.words")


def write_synthetic(cfg: SynthConfig, out_dir: str | Path) -> list[Path]:
    """Write the synthetic corpora, lexicon, wordlists and a manifest.

    ``test.cs`` holds only code-switched sentences; monolingual test text
    goes to ``test.mono``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = synthesize_text(cfg)

    def lines(path, rows):
        with open(out / path, "w", encoding="utf-8") as f:
            for r in rows:
                f.write(r + "\n")
        return out / path

    written = [
        lines("train.l1", (" ".join(s) for s in text.l1)),
        lines("train.l2", (" ".join(s) for s in text.l2)),
        lines("test.cs", (" ".join(s) for s in text.cs_test)),
        lines("lexicon.tsv", (f"{a}\t{b}" for a, b in text.lexicon)),
        lines("valid.mix", (" ".join(s) for s in text.valid)),
        lines("test.mono", (" ".join(s) for s in text.test_mono)),
        lines("l1.words", text.l1_words),
        lines("l2.words", text.l2_words),
    ]
    manifest = {"generator": "twin-hmm", "config": asdict(cfg), "files": list(SYNTH_FILES)}
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return written + [out / "manifest.json"]
