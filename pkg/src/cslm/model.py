"""Single-layer LSTM language model with an untied, bias-free output projection.

Gate layout of the packed LSTM weights is [input, forget, cell, output]; the
weights act on the concatenation [x; h]. Arrays are time-major: (T, B, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np
from .corpus import BOS_ID, EOS_ID, Lang, Vocabulary

INIT_SCALE = 0.08


class ModelError(ValueError):
    pass


@dataclass
class ModelParams:
    emb: np.ndarray       # (V, z) input embedding
    lstm_w: np.ndarray    # (2z, 4z) acting on [x; h]
    lstm_b: np.ndarray    # (4z,)
    W: np.ndarray         # (V, z) output projection, row i is token i's output embedding

    @property
    def vocab_size(self) -> int:
        return self.W.shape[0]

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{k: np.zeros_like(v) for k, v in self.arrays().items()})


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


def init_params(V: int, z: int, seed: int) -> ModelParams:
    if V < 3 or z < 1:
        raise ModelError(f"need V >= 3 and z >= 1, got V={V}, z={z}")
    rng = np.random.default_rng(seed)
    emb = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(V, z))
    lstm_w = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(2 * z, 4 * z))
    W = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(V, z))
    lstm_b = np.zeros(4 * z)
    lstm_b[z:2 * z] = 1.0
    return ModelParams(emb, lstm_w, lstm_b, W)


def sigmoid(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Logistic function via exp, several times faster than scipy's expit here."""
    out = np.negative(x, out=out)
    with np.errstate(over="ignore"):
        np.exp(out, out=out)
    out += 1.0
    return np.reciprocal(out, out=out)


def zero_state(z: int, batch: int | None = None) -> LstmState:
    shape = (z,) if batch is None else (batch, z)
    return LstmState(np.zeros(shape), np.zeros(shape))


def lstm_step(params: ModelParams, x: np.ndarray, state: LstmState) -> LstmState:
    """One LSTM recurrence. ``x`` and the state may carry a leading batch axis."""
    z = params.hidden
    if x.shape[-1] != z or state.h.shape[-1] != z or state.c.shape[-1] != z:
        raise ModelError(f"expected vectors of size {z}")
    a = np.concatenate([x, state.h], axis=-1) @ params.lstm_w + params.lstm_b
    i = sigmoid(a[..., :z])
    f = sigmoid(a[..., z:2 * z])
    g = np.tanh(a[..., 2 * z:3 * z])
    o = sigmoid(a[..., 3 * z:])
    c = f * state.c + i * g
    return LstmState(o * np.tanh(c), c)


class BatchCache(NamedTuple):
    inputs: np.ndarray     # (T, B) ids
    x: np.ndarray          # (T, B, z) embedded inputs
    h: np.ndarray          # (T+1, z, B); h[0] is the zero initial state
    c: np.ndarray          # (T+1, z, B)
    tanh_c: np.ndarray     # (T, z, B) tanh of c[1:]
    gates: np.ndarray      # (T, 4z, B) post-activation i, f, g, o
    sel: tuple             # positions (np.nonzero of the mask) fed to the output layer
    drop: np.ndarray | None  # (N, z) inverted-dropout multipliers at the selected positions
    out: np.ndarray        # (N, z) LSTM output after dropout
    shifted: np.ndarray    # (N, V) logits minus their row max
    probs: np.ndarray      # (N, V)
    log_norm: np.ndarray   # (N,) log of each row's partition sum (relative to the max)

    def log_probs(self) -> np.ndarray:
        return self.shifted - self.log_norm[:, None]

    def target_log_probs(self, targets: np.ndarray) -> np.ndarray:
        """log p of ``targets[sel]`` at each selected position, shape (N,)."""
        tgt = targets[self.sel]
        return self.shifted[np.arange(len(tgt)), tgt] - self.log_norm


def forward_batch(params: ModelParams, inputs: np.ndarray, dropout: float = 0.0,
                  rng: np.random.Generator | None = None, mask: np.ndarray | None = None) -> BatchCache:
    """Run the LSTM over a padded (T, B) id matrix, keeping what BPTT needs.

    The recurrence runs batch-minor so every gate block is contiguous. The
    output layer is evaluated only where ``mask`` is true (everywhere by
    default), in row-major (t, b) order.
    """
    T, B = inputs.shape
    z = params.hidden
    x = params.emb[inputs]
    wx, wh = params.lstm_w[:z], params.lstm_w[z:]
    gates = np.matmul(wx.T, x.transpose(0, 2, 1))
    gates += params.lstm_b[:, None]
    wh_t = np.ascontiguousarray(wh.T)
    h = np.zeros((T + 1, z, B))
    c = np.zeros((T + 1, z, B))
    tanh_c = np.empty((T, z, B))
    for t in range(T):
        gt = gates[t]
        gt += wh_t @ h[t]
        sigmoid(gt[:2 * z], out=gt[:2 * z])
        np.tanh(gt[2 * z:3 * z], out=gt[2 * z:3 * z])
        sigmoid(gt[3 * z:], out=gt[3 * z:])
        ct = c[t + 1]
        np.multiply(gt[z:2 * z], c[t], out=ct)
        ct += gt[:z] * gt[2 * z:3 * z]
        np.tanh(ct, out=tanh_c[t])
        np.multiply(gt[3 * z:], tanh_c[t], out=h[t + 1])
    if mask is None:
        mask = np.ones((T, B), dtype=bool)
    sel = np.nonzero(mask)
    out = h[1:].transpose(0, 2, 1)[sel]
    drop = None
    if dropout > 0.0:
        if rng is None:
            raise ModelError("train-mode dropout needs a random generator")
        drop = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
        out *= drop
    shifted = out @ params.W.T
    shifted -= shifted.max(axis=1)[:, None]
    probs = np.exp(shifted)
    total = probs.sum(axis=1)
    probs /= total[:, None]
    return BatchCache(inputs, x, h, c, tanh_c, gates, sel, drop, out, shifted, probs, np.log(total))


def forward(params: ModelParams, token_ids: Sequence[int], dropout_rate: float = 0.0,
            mode: str = "eval", seed: int | None = None) -> np.ndarray:
    """Per-position next-token distributions y_i = softmax(W h_i), shape (T, V)."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or len(ids) == 0:
        raise ModelError("forward needs a non-empty 1-D id sequence")
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise ModelError("token id out of range")
    if not 0.0 <= dropout_rate < 1.0:
        raise ModelError("dropout_rate must lie in [0, 1)")
    if mode not in ("train", "eval"):
        raise ModelError(f"unknown mode {mode!r}")
    if mode == "train" and dropout_rate > 0:
        cache = forward_batch(params, ids[:, None], dropout_rate, np.random.default_rng(seed))
    else:
        cache = forward_batch(params, ids[:, None])
    return cache.probs


def pad_batch(sentences: Sequence[np.ndarray], pad: int = EOS_ID):
    """Inputs are bos + tokens, targets are tokens + eos; (T, B) arrays and a bool mask."""
    B = len(sentences)
    T = max(len(s) for s in sentences) + 1
    inputs = np.full((T, B), pad, dtype=np.int64)
    targets = np.full((T, B), pad, dtype=np.int64)
    mask = np.zeros((T, B), dtype=bool)
    for b, s in enumerate(sentences):
        n = len(s)
        inputs[0, b] = BOS_ID
        inputs[1:n + 1, b] = s
        targets[:n, b] = s
        targets[n, b] = EOS_ID
        mask[:n + 1, b] = True
    return inputs, targets, mask


def log_prob_sequence(params: ModelParams, sentence: Sequence[int]) -> np.ndarray:
    """log p(w_t | w_<t) for every target of bos + sentence + eos (length len+1)."""
    s = np.asarray(sentence, dtype=np.int64)
    inputs = np.concatenate([[BOS_ID], s])
    targets = np.concatenate([s, [EOS_ID]])
    return forward_batch(params, inputs[:, None]).target_log_probs(targets[:, None])


def sentence_log_probs(params: ModelParams, sentences: Sequence[np.ndarray],
                       batch_size: int = 256) -> list[np.ndarray]:
    """Batched eval-mode ``log_prob_sequence`` over many sentences."""
    order = np.argsort([len(s) for s in sentences], kind="stable")
    out: list[np.ndarray | None] = [None] * len(sentences)
    for k in range(0, len(order), batch_size):
        idx = order[k:k + batch_size]
        inputs, targets, mask = pad_batch([sentences[i] for i in idx])
        picked = np.zeros(mask.shape)
        picked[mask] = forward_batch(params, inputs, mask=mask).target_log_probs(targets)
        for b, i in enumerate(idx):
            out[i] = picked[:len(sentences[i]) + 1, b]
    return out


def normalize_rows(W: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """Return a copy of W whose selected rows (default: all) have unit l2 norm."""
    out = np.array(W, dtype=np.float64, copy=True)
    sel = np.arange(len(out)) if rows is None else np.asarray(rows)
    norms = np.linalg.norm(out[sel], axis=1)
    if np.any(norms == 0.0):
        bad = sel[np.flatnonzero(norms == 0.0)[0]]
        raise ModelError(f"row {bad} has zero norm and cannot be normalized")
    out[sel] /= norms[:, None]
    return out


class PartitionView(NamedTuple):
    l1: np.ndarray
    l2: np.ndarray
    special: np.ndarray

    @property
    def languages(self) -> np.ndarray:
        return np.concatenate([self.l1, self.l2])


def partition_output(W: np.ndarray, vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray, PartitionView]:
    """Split the output projection into its L1 and L2 row blocks."""
    if W.shape[0] != len(vocab):
        raise ModelError(f"W has {W.shape[0]} rows but the vocabulary has {len(vocab)} tokens")
    part = make_partition(vocab)
    return W[part.l1], W[part.l2], part


def make_partition(vocab: Vocabulary) -> PartitionView:
    part = PartitionView(vocab.ids_with_tag(Lang.L1), vocab.ids_with_tag(Lang.L2), vocab.ids_with_tag(Lang.SPECIAL))
    if len(part.l1) == 0 or len(part.l2) == 0:
        raise ModelError("both languages need at least one vocabulary entry")
    return part
