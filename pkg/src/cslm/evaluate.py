"""Measurements: perplexity variants, code-switch points, word translation,
PCA of the output projection, language separability and text generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, UNK_ID, BilingualDict, Corpus, Lang, SentClass, Vocabulary
from .model import ModelParams, PartitionView, lstm_step, sentence_log_probs, zero_state

SELECTORS = ("ZH", "EN", "CS", "CSP", "OVERALL")
_CLASS_OF = {"ZH": SentClass.MONO_L1, "EN": SentClass.MONO_L2, "CS": SentClass.CS}


class EvalError(ValueError):
    pass


def cs_points(tags: Sequence[int]) -> list[int]:
    """Positions whose language differs from the previous non-special token."""
    points = []
    prev = None
    for t, tag in enumerate(tags):
        if tag == Lang.SPECIAL:
            continue
        if prev is not None and tag != prev:
            points.append(t)
        prev = tag
    return points


@dataclass
class PerplexityReport:
    ppl: dict[str, float | None]
    counts: dict[str, int]

    def to_dict(self) -> dict:
        return {"ppl": dict(self.ppl), "counts": dict(self.counts)}


def _ppl(total: float, n: int) -> float | None:
    return math.exp(-total / n) if n else None


def perplexity_report(params: ModelParams, corpus: Corpus, vocab: Vocabulary,
                      log_probs: list[np.ndarray] | None = None) -> PerplexityReport:
    """All five perplexities in one pass.

    Targets are the sentence tokens plus eos; eos counts toward its
    sentence's class and OVERALL, never toward CSP.
    """
    if params.vocab_size != len(vocab):
        raise EvalError("model and vocabulary sizes differ")
    if log_probs is None:
        log_probs = sentence_log_probs(params, corpus.sentences)
    sums = dict.fromkeys(SELECTORS, 0.0)
    counts = dict.fromkeys(SELECTORS, 0)
    for sent, label, lp in zip(corpus.sentences, corpus.labels, log_probs):
        key = {SentClass.MONO_L1: "ZH", SentClass.MONO_L2: "EN", SentClass.CS: "CS"}[SentClass(int(label))]
        s = float(lp.sum())
        sums[key] += s
        counts[key] += len(lp)
        sums["OVERALL"] += s
        counts["OVERALL"] += len(lp)
        if label == SentClass.CS:
            pts = cs_points(vocab.tags[sent])
            sums["CSP"] += float(lp[pts].sum())
            counts["CSP"] += len(pts)
    return PerplexityReport({k: _ppl(sums[k], counts[k]) for k in SELECTORS}, counts)


def perplexity(params: ModelParams, corpus: Corpus, vocab: Vocabulary, selector: str) -> float | None:
    """One perplexity; None when the selector has no targets in ``corpus``."""
    if selector not in SELECTORS:
        raise EvalError(f"unknown selector {selector!r}; expected one of {SELECTORS}")
    return perplexity_report(params, corpus, vocab).ppl[selector]


@dataclass
class TranslationReport:
    mrr: float
    p_at_10: float
    pairs: int
    freq_threshold: int
    direction: str
    ranks: list[int] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, "p@10": self.p_at_10, "pairs": self.pairs,
                "freq_threshold": self.freq_threshold, "direction": self.direction}


def _unit(rows: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / np.where(n == 0.0, 1.0, n)


def translate_eval(W: np.ndarray, vocab: Vocabulary, dictionary: BilingualDict, freq_threshold: int = 80,
                   direction: str = "L1-L2") -> TranslationReport:
    """Rank other-language words by cosine similarity of their W rows.

    Only words with training frequency strictly above ``freq_threshold`` take
    part, as sources and as candidates. Ties go to the lower token id. With
    several valid targets the best rank counts.
    """
    if direction not in ("L1-L2", "L2-L1"):
        raise EvalError("direction must be 'L1-L2' or 'L2-L1'")
    frequent = vocab.freqs > freq_threshold
    targets_of: dict[int, set[int]] = {}
    for a, b in dictionary.pairs:
        if frequent[a] and frequent[b]:
            src, tgt = (a, b) if direction == "L1-L2" else (b, a)
            targets_of.setdefault(src, set()).add(tgt)
    if not targets_of:
        raise EvalError(f"no dictionary pair has both words above frequency {freq_threshold}; lower the threshold")
    other = Lang.L2 if direction == "L1-L2" else Lang.L1
    cands = np.flatnonzero((vocab.tags == other) & frequent)
    U = _unit(W)
    ranks = []
    for src in sorted(targets_of):
        sims = U[cands] @ U[src]
        order = cands[np.lexsort((cands, -sims))]
        position = {tok: r for r, tok in enumerate(order, 1)}
        ranks.append(min(position[t] for t in targets_of[src]))
    r = np.asarray(ranks, dtype=np.float64)
    return TranslationReport(float(np.mean(1.0 / r)), float(np.mean(r <= 10)), len(ranks), freq_threshold,
                             direction, ranks)


@dataclass
class Projection2D:
    ids: np.ndarray
    tags: np.ndarray
    coords: np.ndarray              # (n, k)
    eigenvalues: np.ndarray         # (k,)
    explained_ratio: np.ndarray     # (k,)

    def to_tsv_lines(self, vocab: Vocabulary) -> list[str]:
        lines = []
        for i, tag, xy in zip(self.ids, self.tags, self.coords):
            lines.append("\t".join([vocab.tokens[i], Lang(int(tag)).name] + [repr(float(v)) for v in xy]))
        return lines


def pca_project(W: np.ndarray, part: PartitionView, k: int = 2) -> Projection2D:
    """Project the language rows of W on the top-k eigenvectors of their covariance.

    Each component's sign makes its largest-magnitude entry positive.
    """
    ids = part.languages
    rows = W[ids]
    if len(rows) < k + 1:
        raise EvalError(f"need at least {k + 1} rows for a {k}-component projection")
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / len(rows)
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    total = vals.sum()
    if total <= 0.0:
        raise EvalError("rows are identical; covariance is degenerate")
    vecs = vecs[:, :k]
    lead = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[lead, np.arange(k)])
    tags = np.concatenate([np.full(len(part.l1), Lang.L1), np.full(len(part.l2), Lang.L2)])
    return Projection2D(ids, tags, centered @ vecs, vals[:k].copy(), vals[:k] / total)


def _best_threshold_accuracy(values: np.ndarray, y: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v, lab = values[order], y[order]
    n = len(v)
    # split after position i (0..n): left predicted class 0, right class 1
    left0 = np.concatenate([[0], np.cumsum(lab == 0)])
    right1 = (lab == 1).sum() - np.concatenate([[0], np.cumsum(lab == 1)])
    acc = (left0 + right1) / n
    valid = np.ones(n + 1, dtype=bool)
    valid[1:n] = v[1:] != v[:-1]
    acc = acc[valid]
    return float(np.max(np.maximum(acc, 1.0 - acc)))


def separability_score(proj: Projection2D) -> float:
    """Accuracy of the better of a one-axis threshold and a nearest-centroid rule."""
    y = (proj.tags == Lang.L2).astype(np.int64)
    if y.min() == y.max():
        raise EvalError("both languages must be present")
    best = max(_best_threshold_accuracy(proj.coords[:, a], y) for a in range(proj.coords.shape[1]))
    c0 = proj.coords[y == 0].mean(axis=0)
    c1 = proj.coords[y == 1].mean(axis=0)
    d0 = np.sum((proj.coords - c0) ** 2, axis=1)
    d1 = np.sum((proj.coords - c1) ** 2, axis=1)
    centroid_acc = float(np.mean((d1 < d0) == (y == 1)))
    return max(best, centroid_acc)


def generate(params: ModelParams, prefix: Sequence[int], max_len: int, strategy: str = "greedy",
             temperature: float = 1.0, seed: int | None = None) -> list[int]:
    """Extend ``prefix`` by up to ``max_len`` tokens, stopping at eos.

    bos and unk are never emitted. The result holds the prefix and the
    completion, without eos.
    """
    if len(prefix) == 0:
        raise EvalError("prefix must be non-empty")
    if strategy not in ("greedy", "sample"):
        raise EvalError("strategy must be 'greedy' or 'sample'")
    if strategy == "sample" and temperature <= 0:
        raise EvalError("temperature must be positive")
    rng = np.random.default_rng(seed)
    out = [int(t) for t in prefix]
    if max_len <= 0:
        return out
    state = zero_state(params.hidden)
    for tok in [BOS_ID] + out:
        state = lstm_step(params, params.emb[tok], state)
    for _ in range(max_len):
        logits = params.W @ state.h
        logits[[BOS_ID, UNK_ID]] = -np.inf
        if strategy == "greedy":
            nxt = int(np.argmax(logits))
        else:
            s = logits / temperature
            p = np.exp(s - s.max())
            p /= p.sum()
            nxt = int(rng.choice(len(p), p=p))
        if nxt == EOS_ID:
            break
        out.append(nxt)
        state = lstm_step(params, params.emb[nxt], state)
    return out


def contains_switch(ids: Sequence[int], vocab: Vocabulary) -> bool:
    return len(cs_points(vocab.tags[np.asarray(ids, dtype=np.int64)])) > 0
