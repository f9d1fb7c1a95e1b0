"""Cross-entropy plus constraint training with BPTT, Adam and unit-norm projection."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .corpus import Corpus, Vocabulary
from .model import (ModelParams, PartitionView, forward_batch, init_params, make_partition,
                    normalize_rows, pad_batch, sentence_log_probs)
from .regularizers import RegularizerConfig, constraint_loss

logger = logging.getLogger(__name__)


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    dropout: float = 0.3
    hidden: int = 64
    patience: int = 10
    max_epochs: int = 40
    batch_size: int = 32
    seeds: tuple[int, ...] = (1, 2, 3)
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    normalize: bool = False
    clip_norm: float = 5.0

    def validate(self) -> None:
        if self.lr <= 0:
            raise TrainError("learning rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainError("dropout must lie in [0, 1)")
        if self.hidden < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise TrainError("hidden, batch_size and max_epochs must be positive")
        if self.patience < 1:
            raise TrainError("patience must be at least 1")
        if not self.seeds:
            raise TrainError("at least one seed is required")
        if self.clip_norm <= 0:
            raise TrainError("clip_norm must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def digest(self) -> str:
        """Short hash of everything but the seed list (runs are named by hash + seed)."""
        d = self.to_dict()
        d.pop("seeds")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]


# --------------------------------------------------------------------------- loss and gradients

def _prepare(batch: Sequence[np.ndarray]):
    if len(batch) == 0:
        raise TrainError("empty batch")
    return pad_batch(batch)


def _cross_entropy(cache, targets):
    picked = cache.target_log_probs(targets)
    return -float(picked.sum()) / len(picked), len(picked)


def total_loss(params: ModelParams, batch: Sequence[np.ndarray], part: PartitionView,
               reg: RegularizerConfig, dropout: float = 0.0,
               rng: np.random.Generator | None = None) -> tuple[float, dict[str, float]]:
    """Mean per-token cross-entropy plus the weighted constraint terms.

    The breakdown holds ce, the unweighted skld/cd values and the total.
    """
    inputs, targets, mask = _prepare(batch)
    cache = forward_batch(params, inputs, dropout, rng, mask)
    ce, _ = _cross_entropy(cache, targets)
    cv = constraint_loss(params.W, part, reg)
    total = ce + cv.loss
    return total, {"ce": ce, "skld": cv.components["skld"], "cd": cv.components["cd"], "total": total}


def backward(params: ModelParams, batch: Sequence[np.ndarray], part: PartitionView,
             reg: RegularizerConfig, dropout: float = 0.0,
             rng: np.random.Generator | None = None) -> tuple[ModelParams, dict[str, float]]:
    """Full BPTT gradients of ``total_loss`` (same arguments, same breakdown)."""
    inputs, targets, mask = _prepare(batch)
    cache = forward_batch(params, inputs, dropout, rng, mask)
    ce, n = _cross_entropy(cache, targets)
    T, B = inputs.shape
    z = params.hidden

    # the cache is consumed: probs become dlogits, gates become gate pre-activation grads
    dlogits = cache.probs
    dlogits[np.arange(n), targets[cache.sel]] -= 1.0
    dlogits /= n

    grads = params.zeros_like()
    grads.W = dlogits.T @ cache.out
    d_out = dlogits @ params.W
    if cache.drop is not None:
        d_out *= cache.drop
    dh_out = np.zeros((T, B, z))
    dh_out[cache.sel] = d_out
    dh_out = np.ascontiguousarray(dh_out.transpose(0, 2, 1))

    wx, wh = params.lstm_w[:z], params.lstm_w[z:]
    wh = np.ascontiguousarray(wh)
    dh_next = np.zeros((z, B))
    dc_next = np.zeros((z, B))
    for t in range(T - 1, -1, -1):
        g = cache.gates[t]
        i, f, gc, o = g[:z], g[z:2 * z], g[2 * z:3 * z], g[3 * z:]
        tc = cache.tanh_c[t]
        dh = dh_out[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da_i = dc * gc * i * (1.0 - i)
        da_f = dc * cache.c[t] * f * (1.0 - f)
        da_g = dc * i * (1.0 - gc * gc)
        da_o = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        g[:z], g[z:2 * z], g[2 * z:3 * z], g[3 * z:] = da_i, da_f, da_g, da_o
        dh_next = wh @ g
    da2 = cache.gates.transpose(0, 2, 1).reshape(-1, 4 * z)
    grads.lstm_w[:z] = cache.x.reshape(-1, z).T @ da2
    grads.lstm_w[z:] = cache.h[:-1].transpose(0, 2, 1).reshape(-1, z).T @ da2
    grads.lstm_b = da2.sum(axis=0)
    ids = inputs.ravel()
    order = np.argsort(ids, kind="stable")
    uniq, starts = np.unique(ids[order], return_index=True)
    grads.emb[uniq] = np.add.reduceat((da2 @ wx.T)[order], starts)

    cv = constraint_loss(params.W, part, reg)
    if reg.active:
        grads.W[part.l1] += cv.grad_l1
        grads.W[part.l2] += cv.grad_l2
    total = ce + cv.loss
    return grads, {"ce": ce, "skld": cv.components["skld"], "cd": cv.components["cd"], "total": total}


# --------------------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        arrays = params.arrays()
        return cls({k: np.zeros_like(a) for k, a in arrays.items()}, {k: np.zeros_like(a) for k, a in arrays.items()})


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, lr: float) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update. Updates ``params`` and ``state`` in place and returns both."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    for k, p in p_arrays.items():
        if g_arrays[k].shape != p.shape or state.m[k].shape != p.shape:
            raise TrainError(f"shape mismatch for {k}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, p in p_arrays.items():
        g = g_arrays[k]
        m, v = state.m[k], state.v[k]
        tmp = np.multiply(g, 1.0 - state.beta1)
        m *= state.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - state.beta2
        v *= state.beta2
        v += tmp
        # p -= lr * (m / bc1) / (sqrt(v / bc2) + eps), without temporaries
        np.divide(v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / bc1
        p -= tmp
    return params, state


def clip_gradients(grads: ModelParams, max_norm: float) -> bool:
    """Scale all gradients in place so their global l2 norm is at most ``max_norm``."""
    arrays = grads.arrays().values()
    norm = float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))
    if norm > max_norm:
        for a in arrays:
            a *= max_norm / norm
        return True
    return False


def project_normalize(params: ModelParams, part: PartitionView, enabled: bool = True) -> ModelParams:
    """Put every language row of W back on the unit sphere; specials are untouched."""
    if enabled:
        rows = part.languages
        params.W[rows] = normalize_rows(params.W[rows])
    return params


# --------------------------------------------------------------------------- training loop

@dataclass
class EpochRecord:
    epoch: int
    ce: float
    skld: float
    cd: float
    total: float
    valid_ppl: float
    seconds: float
    clipped: int


@dataclass
class TrainLog:
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    max_norm_deviation: float = 0.0

    @property
    def best_valid_ppl(self) -> float:
        return min(r.valid_ppl for r in self.records)


@dataclass
class SeedRun:
    seed: int
    params: ModelParams
    log: TrainLog


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def corpus_ppl(params: ModelParams, corpus: Corpus) -> float:
    lps = sentence_log_probs(params, corpus.sentences)
    total = sum(float(lp.sum()) for lp in lps)
    n = sum(len(lp) for lp in lps)
    return float(np.exp(-total / n))


def _norm_deviation(params: ModelParams, part: PartitionView) -> float:
    return float(np.max(np.abs(np.linalg.norm(params.W[part.languages], axis=1) - 1.0)))


def train_seed(train_corpus: Corpus, valid_corpus: Corpus, vocab: Vocabulary, cfg: TrainConfig, seed: int,
               run_dir: str | Path | None = None,
               on_step: Callable[[ModelParams], None] | None = None) -> SeedRun:
    """Train one model; the returned params are those of the best validation epoch."""
    part = make_partition(vocab)
    params = init_params(len(vocab), cfg.hidden, seed)
    rng = np.random.default_rng([seed, 1])
    state = AdamState.for_params(params)
    project_normalize(params, part, cfg.normalize)
    log = TrainLog(seed)
    stopper = EarlyStopping(cfg.patience)
    best = params.copy()
    out_dir = None
    if run_dir is not None:
        out_dir = Path(run_dir) / f"{cfg.digest()}-seed{seed}"
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "train.log").write_text("")
    sents = train_corpus.sentences
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(sents))
        sums = {"ce": 0.0, "skld": 0.0, "cd": 0.0, "total": 0.0}
        steps = clipped = 0
        for k in range(0, len(order), cfg.batch_size):
            batch = [sents[i] for i in order[k:k + cfg.batch_size]]
            grads, parts = backward(params, batch, part, cfg.reg, cfg.dropout, rng)
            if clip_gradients(grads, cfg.clip_norm):
                clipped += 1
            adam_step(params, grads, state, cfg.lr)
            project_normalize(params, part, cfg.normalize)
            if cfg.normalize:
                log.max_norm_deviation = max(log.max_norm_deviation, _norm_deviation(params, part))
            if on_step is not None:
                on_step(params)
            for key in sums:
                sums[key] += parts[key]
            steps += 1
        ppl = corpus_ppl(params, valid_corpus)
        rec = EpochRecord(epoch, sums["ce"] / steps, sums["skld"] / steps, sums["cd"] / steps,
                          sums["total"] / steps, ppl, time.perf_counter() - t0, clipped)
        log.records.append(rec)
        if clipped:
            logger.debug("seed %d epoch %d: clipped %d of %d steps", seed, epoch, clipped, steps)
        logger.info("seed %d epoch %d ce %.4f skld %.4f cd %.4f valid ppl %.3f",
                    seed, epoch, rec.ce, rec.skld, rec.cd, ppl)
        if out_dir is not None:
            with open(out_dir / "train.log", "a", encoding="utf-8") as f:
                f.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
        if stopper.update(epoch, ppl):
            best = params.copy()
            if out_dir is not None:
                save_checkpoint(out_dir / "best.ckpt", best, vocab,
                                {"seed": seed, "epoch": epoch, "valid_ppl": ppl, "config": cfg.to_dict()})
        if stopper.should_stop:
            break
    log.best_epoch = stopper.best_epoch
    return SeedRun(seed, best, log)


def train(train_corpus: Corpus, valid_corpus: Corpus, vocab: Vocabulary, cfg: TrainConfig,
          run_dir: str | Path | None = None) -> list[SeedRun]:
    """Train one model per seed in ``cfg.seeds``."""
    cfg.validate()
    if not len(train_corpus) or not len(valid_corpus):
        raise TrainError("training and validation corpora must be non-empty")
    make_partition(vocab)
    for c in (train_corpus, valid_corpus):
        if any(len(s) and s.max() >= len(vocab) for s in c.sentences):
            raise TrainError("corpus ids exceed the vocabulary")
    return [train_seed(train_corpus, valid_corpus, vocab, cfg, seed, run_dir) for seed in cfg.seeds]
