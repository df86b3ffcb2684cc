"""LSTM encoder-decoder with additive attention, written out in numpy with manual backprop.

Decoder step ``i`` reads ``y(i-1)``, the previous state ``h(i-1)`` and the
attention context computed from ``h(i-1)``; the output distribution is a
softmax over ``[h(i); context]``.  With ``attention="source_and_target"`` the
memory also holds the decoder's own top-layer states for ``y0 .. y(i-2)``.

Parameters live in a plain ``dict[str, np.ndarray]``.  Every function keeps
the dtype of the parameters it is given.
"""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import (LOG_ZERO, ConditionalSequenceModel, DimensionMismatch, NonFinite,
                   TokenSequence, Vocabulary)
from .glimpse import (GlimpseConfig, GlimpseExample, assemble_encoder_input, glimpse_start,
                      split_into_glimpses, vanilla_example)

ATTENTION_MODES = ("source_only", "source_and_target")
SOURCE, TARGET = 0, 1

ParamSet = dict  # dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    num_layers: int = 1
    attention: str = "source_only"
    carry_encoder_state: bool = True

    def __post_init__(self):
        if min(self.vocab_size, self.embed_dim, self.hidden_dim, self.num_layers) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    V, E, H = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim
    shapes = {"enc.embed": (V, E), "dec.embed": (V, E)}
    for side in ("enc", "dec"):
        for layer in range(cfg.num_layers):
            if layer > 0:
                n_in = H
            else:
                n_in = E if side == "enc" else E + H
            shapes[f"{side}.lstm{layer}.W"] = (4 * H, n_in + H)
            shapes[f"{side}.lstm{layer}.b"] = (4 * H,)
    shapes.update({"att.Wq": (H, H), "att.Um": (H, H), "att.v": (H,),
                   "out.W": (V, 2 * H), "out.b": (V,)})
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float64, scale: float = 0.08) -> ParamSet:
    rng = np.random.default_rng(seed)
    return {name: rng.uniform(-scale, scale, size=shape).astype(dtype)
            for name, shape in param_shapes(cfg).items()}


def param_count(params: ParamSet) -> int:
    return sum(p.size for p in params.values())


def num_layers(params: ParamSet) -> int:
    return sum(1 for k in params if k.startswith("enc.lstm") and k.endswith(".W"))


def check_params(params: ParamSet, cfg: ModelConfig) -> None:
    shapes = param_shapes(cfg)
    if set(shapes) != set(params):
        raise DimensionMismatch(f"parameter names differ: {sorted(set(shapes) ^ set(params))}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise DimensionMismatch(f"{name}: expected {shape}, got {params[name].shape}")
        if not np.all(np.isfinite(params[name])):
            raise NonFinite(f"{name} has non-finite entries")


# ---------------------------------------------------------------------------
# primitives


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _masked_softmax(e, mask):
    e = np.where(mask, e, -np.inf)
    e = e - e.max(axis=-1, keepdims=True)
    w = np.exp(e)
    return w / w.sum(axis=-1, keepdims=True)


def _cell(x, h, c, W, b):
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ W.T + b
    H = h.shape[-1]
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    o = _sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return o * tc, c_new, (xh, i, f, o, g, c, tc)


def _cell_backward(dh, dc, cache, W, dW, db):
    xh, i, f, o, g, c_prev, tc = cache
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([dct * g * i * (1.0 - i),
                         dct * c_prev * f * (1.0 - f),
                         do * o * (1.0 - o),
                         dct * i * (1.0 - g * g)], axis=-1)
    dW += dz.T @ xh
    db += dz.sum(axis=0)
    dxh = dz @ W
    n_in = xh.shape[-1] - dh.shape[-1]
    return dxh[:, :n_in], dxh[:, n_in:], dct * f


def _attend(q, mem, mem_proj, mask, params):
    """Additive attention; returns (context, weights, tanh activations)."""
    a = np.tanh(mem_proj + (q @ params["att.Wq"].T)[:, None, :])
    w = _masked_softmax(a @ params["att.v"], mask)
    ctx = np.einsum("br,brh->bh", w, mem)
    return ctx, w, a


# ---------------------------------------------------------------------------
# single-sequence inference API


class DecoderState(NamedTuple):
    h: tuple  # per-layer hidden vectors
    c: tuple  # per-layer cell vectors
    i: int = 0


@dataclass(frozen=True)
class AttentionMemory:
    rows: np.ndarray       # (positions, hidden_dim)
    origin: tuple          # SOURCE or TARGET per row

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise DimensionMismatch("attention memory needs at least one row")
        if len(self.origin) != self.rows.shape[0]:
            raise DimensionMismatch("one origin tag per memory row")

    def extend(self, h) -> "AttentionMemory":
        """Append a decoder state as an annotation row for an already-decoded token."""
        return AttentionMemory(np.vstack([self.rows, np.asarray(h)[None, :]]),
                               self.origin + (TARGET,))


def encode(params: ParamSet, tokens: Sequence[int], carry_encoder_state: bool = True):
    """Run the encoder; return its annotation memory and the decoder's initial state."""
    tokens = list(tokens)
    if not tokens:
        raise DimensionMismatch("encoder input must be non-empty")
    V = params["enc.embed"].shape[0]
    if min(tokens) < 0 or max(tokens) >= V:
        raise DimensionMismatch("encoder token outside vocabulary")
    L = num_layers(params)
    Hd = params["att.Wq"].shape[0]
    dt = params["enc.embed"].dtype
    h = [np.zeros((1, Hd), dt) for _ in range(L)]
    c = [np.zeros((1, Hd), dt) for _ in range(L)]
    rows = []
    for tok in tokens:
        x = params["enc.embed"][[tok]]
        for layer in range(L):
            h[layer], c[layer], _ = _cell(x, h[layer], c[layer],
                                          params[f"enc.lstm{layer}.W"], params[f"enc.lstm{layer}.b"])
            x = h[layer]
        rows.append(h[-1][0])
    memory = AttentionMemory(np.array(rows), (SOURCE,) * len(rows))
    if carry_encoder_state:
        state = DecoderState(tuple(v[0] for v in h), tuple(v[0] for v in c), 0)
    else:
        state = DecoderState(tuple(np.zeros(Hd, dt) for _ in range(L)),
                             tuple(np.zeros(Hd, dt) for _ in range(L)), 0)
    return memory, state


def attention(h_prev: DecoderState, memory: AttentionMemory, params: ParamSet):
    """Context vector for the query ``h_prev`` (top layer); also returns the weights."""
    if memory.rows.shape[1] != params["att.Um"].shape[1]:
        raise DimensionMismatch("memory width differs from hidden size")
    q = np.asarray(h_prev.h[-1])[None, :]
    mem = memory.rows[None]
    proj = mem @ params["att.Um"].T
    ctx, w, _ = _attend(q, mem, proj, np.ones((1, mem.shape[1]), bool), params)
    return ctx[0], w[0]


def decode_step(params: ParamSet, state: DecoderState, prev_token: int, memory: AttentionMemory):
    """One decoder step; returns (next-token distribution, new state)."""
    V = params["dec.embed"].shape[0]
    if not 0 <= prev_token < V:
        raise DimensionMismatch(f"token {prev_token} outside vocabulary")
    ctx, _ = attention(state, memory, params)
    x = np.concatenate([params["dec.embed"][prev_token], ctx])[None, :]
    hs, cs = [], []
    for layer in range(len(state.h)):
        h, c, _ = _cell(x, state.h[layer][None, :], state.c[layer][None, :],
                        params[f"dec.lstm{layer}.W"], params[f"dec.lstm{layer}.b"])
        hs.append(h[0])
        cs.append(c[0])
        x = h
    logits = np.concatenate([hs[-1], ctx]) @ params["out.W"].T + params["out.b"]
    probs = _softmax(logits)
    return probs, DecoderState(tuple(hs), tuple(cs), state.i + 1)


# ---------------------------------------------------------------------------
# batched teacher-forced forward / backward


class Batch(NamedTuple):
    enc: np.ndarray        # (B, S) int
    enc_mask: np.ndarray   # (B, S) bool
    dec_in: np.ndarray     # (B, T) int
    dec_out: np.ndarray    # (B, T) int
    dec_mask: np.ndarray   # (B, T) bool


def make_batch(examples: Sequence[GlimpseExample]) -> Batch:
    n = len(examples)
    S = max(len(e.encoder_input) for e in examples)
    T = max(len(e.decoder_input) for e in examples)
    enc = np.zeros((n, S), np.int64)
    enc_mask = np.zeros((n, S), bool)
    dec_in = np.zeros((n, T), np.int64)
    dec_out = np.zeros((n, T), np.int64)
    dec_mask = np.zeros((n, T), bool)
    for b, ex in enumerate(examples):
        if len(ex.decoder_input) != len(ex.decoder_output):
            raise DimensionMismatch("decoder input and output lengths differ")
        if not ex.encoder_input or not ex.decoder_input:
            raise DimensionMismatch("empty encoder or decoder sequence")
        enc[b, :len(ex.encoder_input)] = ex.encoder_input
        enc_mask[b, :len(ex.encoder_input)] = True
        dec_in[b, :len(ex.decoder_input)] = ex.decoder_input
        dec_out[b, :len(ex.decoder_output)] = ex.decoder_output
        dec_mask[b, :len(ex.decoder_input)] = True
    return Batch(enc, enc_mask, dec_in, dec_out, dec_mask)


def _forward(params: ParamSet, cfg: ModelConfig, batch: Batch):
    """Teacher-forced pass; returns (log-prob of each output token (B, T), cache)."""
    L, dt = cfg.num_layers, params["enc.embed"].dtype
    n, S = batch.enc.shape
    T = batch.dec_in.shape[1]
    Hd = cfg.hidden_dim
    V = cfg.vocab_size
    if batch.enc.max() >= V or batch.dec_in.max() >= V or batch.dec_out.max() >= V:
        raise DimensionMismatch("token id outside vocabulary")

    h = [np.zeros((n, Hd), dt) for _ in range(L)]
    c = [np.zeros((n, Hd), dt) for _ in range(L)]
    enc_caches, annotations = [], []
    for t in range(S):
        m = batch.enc_mask[:, t:t + 1]
        x = params["enc.embed"][batch.enc[:, t]]
        step = []
        for layer in range(L):
            hn, cn, cache = _cell(x, h[layer], c[layer],
                                  params[f"enc.lstm{layer}.W"], params[f"enc.lstm{layer}.b"])
            h[layer] = np.where(m, hn, h[layer])
            c[layer] = np.where(m, cn, c[layer])
            step.append(cache)
            x = h[layer]
        enc_caches.append(step)
        annotations.append(h[-1])
    src = np.stack(annotations, axis=1)                 # (n, S, H)
    src_proj = src @ params["att.Um"].T

    if not cfg.carry_encoder_state:
        h = [np.zeros((n, Hd), dt) for _ in range(L)]
        c = [np.zeros((n, Hd), dt) for _ in range(L)]

    target_mode = cfg.attention == "source_and_target"
    tgt_rows, tgt_proj = [], []
    dec_caches = []
    out_logp = np.zeros((n, T), dt)
    for t in range(T):
        m = batch.dec_mask[:, t:t + 1]
        q = h[-1]
        if target_mode and tgt_rows:
            mem = np.concatenate([src, np.stack(tgt_rows, axis=1)], axis=1)
            proj = np.concatenate([src_proj, np.stack(tgt_proj, axis=1)], axis=1)
            mask = np.concatenate([batch.enc_mask, batch.dec_mask[:, :len(tgt_rows)]], axis=1)
        else:
            mem, proj, mask = src, src_proj, batch.enc_mask
        ctx, w, a = _attend(q, mem, proj, mask, params)
        x = np.concatenate([params["dec.embed"][batch.dec_in[:, t]], ctx], axis=-1)
        step = []
        for layer in range(L):
            hn, cn, cache = _cell(x, h[layer], c[layer],
                                  params[f"dec.lstm{layer}.W"], params[f"dec.lstm{layer}.b"])
            h[layer] = np.where(m, hn, h[layer])
            c[layer] = np.where(m, cn, c[layer])
            step.append(cache)
            x = h[layer]
        feat = np.concatenate([h[-1], ctx], axis=-1)
        logp = _log_softmax(feat @ params["out.W"].T + params["out.b"])
        out_logp[:, t] = logp[np.arange(n), batch.dec_out[:, t]]
        dec_caches.append((q, mem, w, a, step, feat, logp))
        if target_mode:
            tgt_rows.append(h[-1])
            tgt_proj.append(h[-1] @ params["att.Um"].T)
    out_logp = np.where(batch.dec_mask, out_logp, 0.0)
    return out_logp, (enc_caches, src, dec_caches)


def _backward(params: ParamSet, cfg: ModelConfig, batch: Batch, cache, dlogp):
    """Gradients of ``sum(dlogp * logp_out)`` with respect to every parameter."""
    enc_caches, src, dec_caches = cache
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    L = cfg.num_layers
    n, S = batch.enc.shape
    T = batch.dec_in.shape[1]
    Hd = cfg.hidden_dim
    dt = src.dtype
    dh = [np.zeros((n, Hd), dt) for _ in range(L)]
    dc = [np.zeros((n, Hd), dt) for _ in range(L)]
    d_src = np.zeros_like(src)
    d_tgt = np.zeros((n, T, Hd), dt)
    Wq, Um, v = params["att.Wq"], params["att.Um"], params["att.v"]
    target_mode = cfg.attention == "source_and_target"
    rows = np.arange(n)

    for t in reversed(range(T)):
        q, mem, w, a, step, feat, logp = dec_caches[t]
        m = batch.dec_mask[:, t:t + 1]
        dlogits = -np.exp(logp) * dlogp[:, t:t + 1]
        dlogits[rows, batch.dec_out[:, t]] += dlogp[:, t]
        grads["out.W"] += dlogits.T @ feat
        grads["out.b"] += dlogits.sum(axis=0)
        dfeat = dlogits @ params["out.W"]
        dh[-1] = dh[-1] + dfeat[:, :Hd]
        if target_mode:
            dh[-1] = dh[-1] + d_tgt[:, t]
        dctx = dfeat[:, Hd:]
        dx = None
        for layer in reversed(range(L)):
            if dx is not None:
                dh[layer] = dh[layer] + dx
            dh_new, dc_new = np.where(m, dh[layer], 0.0), np.where(m, dc[layer], 0.0)
            dx, dh_prev, dc_prev = _cell_backward(dh_new, dc_new, step[layer],
                                                  params[f"dec.lstm{layer}.W"],
                                                  grads[f"dec.lstm{layer}.W"],
                                                  grads[f"dec.lstm{layer}.b"])
            dh[layer] = dh_prev + np.where(m, 0.0, dh[layer])
            dc[layer] = dc_prev + np.where(m, 0.0, dc[layer])
        E = params["dec.embed"].shape[1]
        np.add.at(grads["dec.embed"], batch.dec_in[:, t], dx[:, :E])
        dctx = dctx + dx[:, E:]
        # attention backward
        dw = np.einsum("bh,brh->br", dctx, mem)
        dmem = w[:, :, None] * dctx[:, None, :]
        de = w * (dw - (w * dw).sum(axis=-1, keepdims=True))
        grads["att.v"] += np.einsum("br,brh->h", de, a)
        da = de[:, :, None] * v * (1.0 - a * a)
        dWq_q = da.sum(axis=1)
        grads["att.Wq"] += dWq_q.T @ q
        grads["att.Um"] += np.einsum("bra,brh->ah", da, mem)
        dmem += da @ Um
        dh[-1] = dh[-1] + dWq_q @ Wq
        d_src += dmem[:, :S]
        if mem.shape[1] > S:
            d_tgt[:, :mem.shape[1] - S] += dmem[:, S:]

    if cfg.carry_encoder_state:
        dh_e, dc_e = dh, dc
    else:
        dh_e = [np.zeros((n, Hd), dt) for _ in range(L)]
        dc_e = [np.zeros((n, Hd), dt) for _ in range(L)]
    for t in reversed(range(S)):
        m = batch.enc_mask[:, t:t + 1]
        dh_e[-1] = dh_e[-1] + d_src[:, t]
        dx = None
        for layer in reversed(range(L)):
            if dx is not None:
                dh_e[layer] = dh_e[layer] + dx
            dh_new, dc_new = np.where(m, dh_e[layer], 0.0), np.where(m, dc_e[layer], 0.0)
            dx, dh_prev, dc_prev = _cell_backward(dh_new, dc_new, enc_caches[t][layer],
                                                  params[f"enc.lstm{layer}.W"],
                                                  grads[f"enc.lstm{layer}.W"],
                                                  grads[f"enc.lstm{layer}.b"])
            dh_e[layer] = dh_prev + np.where(m, 0.0, dh_e[layer])
            dc_e[layer] = dc_prev + np.where(m, 0.0, dc_e[layer])
        np.add.at(grads["enc.embed"], batch.enc[:, t], dx)
    return grads


def example_log_probs(params: ParamSet, cfg: ModelConfig, examples: Sequence[GlimpseExample]) -> np.ndarray:
    """Summed output log-probability of each example under teacher forcing."""
    logp, _ = _forward(params, cfg, make_batch(examples))
    return logp.sum(axis=1)


def loss_and_gradients(params: ParamSet, cfg: ModelConfig, batch: Sequence[GlimpseExample]):
    """Mean per-token cross-entropy over the batch and its gradient."""
    b = make_batch(batch)
    logp, cache = _forward(params, cfg, b)
    count = b.dec_mask.sum()
    loss = -logp.sum() / count
    if not np.isfinite(loss):
        raise NonFinite(f"loss is {loss}")
    dlogp = np.where(b.dec_mask, -1.0 / count, 0.0).astype(logp.dtype)
    return float(loss), _backward(params, cfg, b, cache, dlogp)


def sgd_step(params: ParamSet, grads: ParamSet, lr: float) -> ParamSet:
    new = {k: p - lr * grads[k] for k, p in params.items()}
    _check_finite(new)
    return new


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float | None = 5.0


def adam_init(params: ParamSet) -> dict:
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()},
            "t": 0}


def adam_step(params: ParamSet, grads: ParamSet, moments: dict, hyper: AdamHyper = AdamHyper()):
    """Adam with optional global-norm clipping; returns (new params, new moments)."""
    if hyper.clip is not None:
        norm = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
        if norm > hyper.clip:
            grads = {k: g * (hyper.clip / norm) for k, g in grads.items()}
    t = moments["t"] + 1
    b1, b2 = hyper.beta1, hyper.beta2
    m = {k: b1 * moments["m"][k] + (1 - b1) * g for k, g in grads.items()}
    v = {k: b2 * moments["v"][k] + (1 - b2) * g * g for k, g in grads.items()}
    step = hyper.lr * np.sqrt(1 - b2 ** t) / (1 - b1 ** t)
    new = {k: (p - step * m[k] / (np.sqrt(v[k]) + hyper.eps)).astype(p.dtype) for k, p in params.items()}
    _check_finite(new)
    return new, {"m": m, "v": v, "t": t}


def _check_finite(params: ParamSet) -> None:
    for k, p in params.items():
        if not np.all(np.isfinite(p)):
            raise NonFinite(f"{k} became non-finite")


# ---------------------------------------------------------------------------
# sequence-model adapter


class NeuralSeq2Seq(ConditionalSequenceModel):
    """Wraps a trained parameter set as a ``ConditionalSequenceModel``.

    With ``glimpse_k`` set, the target prefix before the current glimpse is
    moved onto the encoder exactly as during glimpse training, so the model is
    evaluated autoregressively one glimpse at a time.
    """

    def __init__(self, params: ParamSet, cfg: ModelConfig, vocab: Vocabulary, glimpse_k: int | None = None):
        check_params(params, cfg)
        if cfg.vocab_size != len(vocab):
            raise DimensionMismatch("model and vocabulary sizes differ")
        self.params = {k: v.copy() for k, v in params.items()}
        for v in self.params.values():
            v.setflags(write=False)
        self.cfg = cfg
        self.vocab = vocab
        self.glimpse_k = glimpse_k
        self._encode = functools.lru_cache(maxsize=512)(self._encode_uncached)

    def _encode_uncached(self, tokens: tuple):
        return encode(self.params, tokens, self.cfg.carry_encoder_state)

    def _split(self, source, prefix):
        if self.glimpse_k is None:
            return (*source, self.vocab.eos_id), prefix
        start = glimpse_start(len(prefix) - 1, self.glimpse_k)
        return assemble_encoder_input(source, prefix[1:start], self.vocab.eos_id), prefix[start:]

    def next_token_distribution(self, source, prefix) -> np.ndarray:
        enc_input, dec_input = self._split(tuple(source), tuple(prefix))
        memory, state = self._encode(enc_input)
        target_mode = self.cfg.attention == "source_and_target"
        for j, tok in enumerate(dec_input):
            if target_mode and j >= 1:
                memory = memory.extend(state.h[-1])
            probs, state = decode_step(self.params, state, tok, memory)
        return probs.astype(np.float64)

    def examples(self, source, target) -> list[GlimpseExample]:
        if self.glimpse_k is None:
            return [vanilla_example(source, target, self.vocab)]
        return split_into_glimpses(source, target, GlimpseConfig(self.glimpse_k), self.vocab)

    def sequence_log_prob(self, source, target) -> float:
        return float(self.batch_sequence_log_prob([(source, target)])[0])

    def batch_sequence_log_prob(self, pairs, batch_size: int = 256) -> np.ndarray:
        owners, examples = [], []
        for n, (s, t) in enumerate(pairs):
            for ex in self.examples(s, t):
                owners.append(n)
                examples.append(ex)
        out = np.zeros(len(pairs))
        for lo in range(0, len(examples), batch_size):
            chunk = examples[lo:lo + batch_size]
            lp = example_log_probs(self.params, self.cfg, chunk).astype(np.float64)
            np.add.at(out, owners[lo:lo + batch_size], lp)
        return np.where(np.isfinite(out), out, LOG_ZERO)


# ---------------------------------------------------------------------------
# checkpoint files

MAGIC = b"GLMP"
FORMAT_VERSION = 1


def save_checkpoint(path, tensors: dict) -> None:
    """Write named tensors as little-endian float32 in the GLMP layout."""
    parts = [MAGIC, struct.pack("<B", FORMAT_VERSION), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a GLMP checkpoint")
    if data[4] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {data[4]}")
    (count,) = struct.unpack_from("<I", data, 5)
    off = 9
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims).astype(np.float32)
        off += 4 * size
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after last tensor")
    return out
