"""Vocabularies with language tags, corpora, bilingual dictionaries and
pseudo code-switching data (word substitution, sentence concatenation)."""

from __future__ import annotations

import enum
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNK, BOS, EOS = "<unk>", "<s>", "</s>"
SPECIALS = (UNK, BOS, EOS)
UNK_ID, BOS_ID, EOS_ID = 0, 1, 2
DEFAULT_MAX_LEN = 400


class Lang(enum.IntEnum):
    L1 = 0
    L2 = 1
    SPECIAL = 2


class SentClass(enum.IntEnum):
    MONO_L1 = 0
    MONO_L2 = 1
    CS = 2


class CorpusError(ValueError):
    pass


@dataclass
class Vocabulary:
    tokens: list[str]
    tags: np.ndarray
    freqs: np.ndarray
    id_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.tags = np.asarray(self.tags, dtype=np.int8)
        self.freqs = np.asarray(self.freqs, dtype=np.int64)
        self.id_of = {t: i for i, t in enumerate(self.tokens)}
        if len(self.id_of) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")
        if not (len(self.tags) == len(self.freqs) == len(self.tokens)):
            raise CorpusError("tokens, tags and freqs must have equal length")
        if tuple(self.tokens[:3]) != SPECIALS:
            raise CorpusError(f"vocabulary must start with {SPECIALS}")
        if np.any(self.tags[:3] != Lang.SPECIAL) or np.any(self.tags[3:] == Lang.SPECIAL):
            raise CorpusError("exactly the unk/bos/eos entries are tagged SPECIAL")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def unk(self) -> int:
        return self.id_of[UNK]

    @property
    def bos(self) -> int:
        return self.id_of[BOS]

    @property
    def eos(self) -> int:
        return self.id_of[EOS]

    def lookup(self, token: str) -> int:
        return self.id_of.get(token, self.id_of[UNK])

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.lookup(t) for t in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def ids_with_tag(self, tag: Lang) -> np.ndarray:
        return np.flatnonzero(self.tags == tag)

    def fingerprint(self) -> str:
        """sha256 over (token, tag) pairs in id order; frequencies excluded."""
        h = hashlib.sha256()
        for tok, tag in zip(self.tokens, self.tags):
            h.update(tok.encode("utf-8"))
            h.update(b"\t%d\n" % int(tag))
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok, tag, fr in zip(self.tokens, self.tags, self.freqs):
                f.write(f"{tok}\t{Lang(int(tag)).name}\t{int(fr)}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens, tags, freqs = [], [], []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise CorpusError(f"{path}:{lineno}: expected token<TAB>tag<TAB>freq")
                tokens.append(parts[0])
                tags.append(Lang[parts[1]])
                freqs.append(int(parts[2]))
        return cls(tokens, tags, freqs)


def build_vocabulary(sentences: Iterable[Iterable[tuple[str, Lang]]], min_freq: int = 1) -> Vocabulary:
    """Collect a tagged vocabulary.

    Specials come first (unk, bos, eos); the rest is sorted by frequency
    descending with lexicographic tie-break. Tokens below ``min_freq`` are
    left out and will map to unk.
    """
    counts: Counter[str] = Counter()
    tag_of: dict[str, Lang] = {}
    for sent in sentences:
        for tok, tag in sent:
            tag = Lang(tag)
            if tok in SPECIALS or tag == Lang.SPECIAL:
                raise CorpusError(f"token {tok!r} collides with a special symbol")
            prev = tag_of.setdefault(tok, tag)
            if prev != tag:
                raise CorpusError(f"token {tok!r} tagged both {prev.name} and {tag.name}")
            counts[tok] += 1
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    dropped = sum(counts[t] for t in counts if counts[t] < min_freq)
    tokens = list(SPECIALS) + kept
    tags = [Lang.SPECIAL] * 3 + [tag_of[t] for t in kept]
    freqs = [dropped, 0, 0] + [counts[t] for t in kept]
    return Vocabulary(tokens, tags, freqs)


def load_wordlists(l1_path: str | Path, l2_path: str | Path) -> dict[str, Lang]:
    """Read the per-language wordlists (one token per line) into a tag map."""
    tag_of: dict[str, Lang] = {}
    for path, lang in ((l1_path, Lang.L1), (l2_path, Lang.L2)):
        with open(path, encoding="utf-8") as f:
            for line in f:
                tok = line.strip()
                if not tok:
                    continue
                if tag_of.setdefault(tok, lang) != lang:
                    raise CorpusError(f"token {tok!r} listed in both wordlists")
    return tag_of


def read_tagged(path: str | Path, tag_of: dict[str, Lang]) -> list[list[tuple[str, Lang]]]:
    """Tag every token of a corpus file from a wordlist map.

    Untagged tokens are left out of the result (they become unk when the
    file is later loaded against the vocabulary).
    """
    out = []
    missing = 0
    with open(path, encoding="utf-8") as f:
        for line in f:
            sent = []
            for tok in line.split():
                tag = tag_of.get(tok)
                if tag is None:
                    missing += 1
                else:
                    sent.append((tok, tag))
            out.append(sent)
    if missing:
        logger.warning("%s: %d tokens missing from wordlists", path, missing)
    return out


def classify(ids: Sequence[int], vocab: Vocabulary) -> SentClass | None:
    """Sentence class from the tags of its non-special tokens (None if there are none)."""
    tags = vocab.tags[np.asarray(ids, dtype=np.int64)]
    has1 = bool(np.any(tags == Lang.L1))
    has2 = bool(np.any(tags == Lang.L2))
    if has1 and has2:
        return SentClass.CS
    if has1:
        return SentClass.MONO_L1
    if has2:
        return SentClass.MONO_L2
    return None


@dataclass
class Corpus:
    sentences: list[np.ndarray]
    labels: np.ndarray
    skipped: int = 0

    def __post_init__(self):
        self.sentences = [np.asarray(s, dtype=np.int64) for s in self.sentences]
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if len(self.labels) != len(self.sentences):
            raise CorpusError("one label per sentence required")

    def __len__(self) -> int:
        return len(self.sentences)

    @classmethod
    def from_ids(cls, sentences: Iterable[Sequence[int]], vocab: Vocabulary) -> "Corpus":
        sents, labels, skipped = [], [], 0
        for s in sentences:
            s = np.asarray(s, dtype=np.int64)
            if len(s) and s.max() >= len(vocab):
                raise CorpusError("token id out of vocabulary range")
            label = classify(s, vocab) if len(s) else None
            if label is None:
                skipped += 1
                continue
            sents.append(s)
            labels.append(label)
        return cls(sents, labels, skipped)

    @classmethod
    def from_tokens(cls, sentences: Iterable[Sequence[str]], vocab: Vocabulary) -> "Corpus":
        return cls.from_ids((vocab.encode(s) for s in sentences), vocab)

    def subset(self, label: SentClass) -> "Corpus":
        keep = np.flatnonzero(self.labels == label)
        return Corpus([self.sentences[i] for i in keep], self.labels[keep])

    def __add__(self, other: "Corpus") -> "Corpus":
        return Corpus(self.sentences + other.sentences, np.concatenate([self.labels, other.labels]))

    def n_tokens(self) -> int:
        return int(sum(len(s) for s in self.sentences))

    def to_lines(self, vocab: Vocabulary) -> list[str]:
        return [" ".join(vocab.decode(s)) for s in self.sentences]


def load_corpus(path: str | Path, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> Corpus:
    """One sentence per line, whitespace-tokenized. OOV tokens map to unk.

    Empty lines (and lines with nothing but unk) are skipped and counted in
    ``Corpus.skipped``.
    """
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read corpus {path}: {e}") from e
    sents = []
    skipped = 0
    with f:
        for lineno, line in enumerate(f, 1):
            toks = line.split()
            if not toks:
                skipped += 1
                continue
            if len(toks) > max_len:
                raise CorpusError(f"{path}:{lineno}: sentence length {len(toks)} exceeds max_len={max_len}")
            sents.append(vocab.encode(toks))
    corpus = Corpus.from_ids(sents, vocab)
    corpus.skipped += skipped
    if corpus.skipped:
        logger.info("%s: skipped %d empty or untaggable lines", path, corpus.skipped)
    return corpus


@dataclass
class BilingualDict:
    """Ordered, de-duplicated (L1 id, L2 id) pairs."""

    pairs: list[tuple[int, int]]
    dropped: int = 0

    def __post_init__(self):
        seen = set()
        uniq = []
        for p in self.pairs:
            p = (int(p[0]), int(p[1]))
            if p not in seen:
                seen.add(p)
                uniq.append(p)
        self.pairs = uniq

    def __len__(self) -> int:
        return len(self.pairs)

    def validate(self, vocab: Vocabulary) -> None:
        for a, b in self.pairs:
            if vocab.tags[a] != Lang.L1 or vocab.tags[b] != Lang.L2:
                raise CorpusError(f"pair ({vocab.tokens[a]}, {vocab.tokens[b]}) is not an L1-L2 pair")

    def counterparts(self, bidirectional: bool = True) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for a, b in self.pairs:
            out.setdefault(a, []).append(b)
            if bidirectional:
                out.setdefault(b, []).append(a)
        return out


def load_bilingual_dict(path: str | Path, vocab: Vocabulary) -> BilingualDict:
    """Read a MUSE-style two-column dictionary.

    Either column may hold the L1 word; pairs are stored L1-first. Pairs with
    an out-of-vocabulary side (or two words of the same language) are dropped
    and counted.
    """
    pairs = []
    dropped = 0
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read dictionary {path}: {e}") from e
    with f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise CorpusError(f"{path}:{lineno}: expected two whitespace-separated columns")
            a, b = (vocab.id_of.get(t) for t in parts)
            if a is None or b is None:
                dropped += 1
                continue
            ta, tb = vocab.tags[a], vocab.tags[b]
            if ta == Lang.L1 and tb == Lang.L2:
                pairs.append((a, b))
            elif ta == Lang.L2 and tb == Lang.L1:
                pairs.append((b, a))
            else:
                dropped += 1
    d = BilingualDict(pairs, dropped)
    logger.info("%s: retained %d pairs, dropped %d", path, len(d), dropped)
    return d


def word_substitution(corpus: Corpus, dictionary: BilingualDict, p: float, seed: int,
                      vocab: Vocabulary, bidirectional: bool = True) -> Corpus:
    """Replace each dictionary-covered token with a translation with probability ``p``.

    The replacement is drawn uniformly among the token's counterparts;
    tokens outside the dictionary are left alone. Sentences are relabeled.
    """
    if not 0.0 <= p <= 1.0:
        raise CorpusError(f"substitution probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    mapping = dictionary.counterparts(bidirectional)
    out = []
    for sent in corpus.sentences:
        new = sent.copy()
        for t, tok in enumerate(sent):
            targets = mapping.get(int(tok))
            if targets is None:
                continue
            if rng.random() < p:
                new[t] = targets[int(rng.integers(len(targets)))] if len(targets) > 1 else targets[0]
        out.append(new)
    return Corpus(out, [classify(s, vocab) for s in out])


def sentence_concatenation(c1: Corpus, c2: Corpus, n: int, seed: int) -> Corpus:
    """Append ``n`` pseudo-CS sentences to ``c1 + c2``.

    Each is one sentence drawn from each corpus (uniform, with replacement),
    joined in a random order with no separator.
    """
    if n <= 0:
        raise CorpusError("number of concatenated sentences must be positive")
    if not len(c1) or not len(c2):
        raise CorpusError("both corpora must be non-empty")
    rng = np.random.default_rng(seed)
    pseudo, labels = [], []
    for _ in range(n):
        i, j = int(rng.integers(len(c1))), int(rng.integers(len(c2)))
        a, b = c1.sentences[i], c2.sentences[j]
        pseudo.append(np.concatenate([a, b]) if rng.random() < 0.5 else np.concatenate([b, a]))
        la, lb = c1.labels[i], c2.labels[j]
        labels.append(la if la == lb else SentClass.CS)
    return c1 + c2 + Corpus(pseudo, labels)
