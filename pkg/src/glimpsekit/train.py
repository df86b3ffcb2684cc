"""Mini-batch training for the vanilla, target-attention and glimpse variants."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .core import Vocabulary
from .glimpse import GlimpseConfig, GlimpseExample, split_into_glimpses, vanilla_example
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    lr: float = 1e-2
    optimizer: str = "adam"
    glimpse_k: int | None = None
    seed: int = 0
    log_every: int = 50
    ckpt_every: int = 0
    time_budget: float | None = None

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")


def training_examples(pairs, vocab: Vocabulary, glimpse_k: int | None) -> list[GlimpseExample]:
    if glimpse_k is None:
        return [vanilla_example(s, t, vocab) for s, t in pairs]
    cfg = GlimpseConfig(glimpse_k)
    return [g for s, t in pairs for g in split_into_glimpses(s, t, cfg, vocab)]


def batch_at(examples: Sequence, batch_size: int, seed: int, step: int) -> list:
    """The mini-batch used at ``step``; a pure function of (seed, step) so runs can resume."""
    per_epoch = max(1, -(-len(examples) // batch_size))
    epoch, k = divmod(step, per_epoch)
    order = derive_rng(seed, "shuffle", epoch).permutation(len(examples))
    return [examples[i] for i in order[k * batch_size:(k + 1) * batch_size]]


@dataclass
class TrainState:
    params: nn.ParamSet
    moments: dict | None = None
    step: int = 0
    losses: list = field(default_factory=list)


def train(state: TrainState, cfg: nn.ModelConfig, examples: Sequence[GlimpseExample], tcfg: TrainConfig,
          on_log: Callable[[int, float], None] | None = None,
          on_checkpoint: Callable[[TrainState], None] | None = None) -> TrainState:
    """Run optimisation steps from ``state.step`` up to ``tcfg.steps`` (or the time budget)."""
    if not examples:
        raise ValueError("no training examples")
    params = state.params
    moments = state.moments
    if tcfg.optimizer == "adam" and moments is None:
        moments = nn.adam_init(params)
    hyper = nn.AdamHyper(lr=tcfg.lr)
    start = time.perf_counter()
    step = state.step
    window = []
    while step < tcfg.steps:
        if tcfg.time_budget is not None and time.perf_counter() - start >= tcfg.time_budget:
            break
        batch = batch_at(examples, tcfg.batch_size, tcfg.seed, step)
        loss, grads = nn.loss_and_gradients(params, cfg, batch)
        if tcfg.optimizer == "adam":
            params, moments = nn.adam_step(params, grads, moments, hyper)
        else:
            params = nn.sgd_step(params, grads, tcfg.lr)
        step += 1
        state.losses.append(loss)
        window.append(loss)
        if tcfg.log_every and step % tcfg.log_every == 0:
            if on_log:
                on_log(step, float(np.mean(window)))
            window = []
        if tcfg.ckpt_every and step % tcfg.ckpt_every == 0 and on_checkpoint:
            on_checkpoint(TrainState(params, moments, step, state.losses))
    state.params, state.moments, state.step = params, moments, step
    return state


def smoothed(losses: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing moving average; entry ``i`` averages losses ``i-window+1 .. i``."""
    x = np.asarray(losses, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    out = np.empty_like(x)
    for i in range(len(x)):
        lo = max(0, i - window + 1)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


class TrainLog:
    """``step,loss,ppl`` rows in a CSV file; ppl is exp of the mean training loss over the log window.

    A fresh run (``start_step=0``) truncates the file.  A resumed run keeps the
    rows up to its starting step, so the log of an interrupted-and-resumed run
    matches the uninterrupted one.
    """

    HEADER = "step,loss,ppl\n"

    def __init__(self, path, start_step: int = 0):
        self.path = Path(path)
        kept = []
        if start_step > 0 and self.path.exists():
            for line in self.path.read_text().splitlines()[1:]:
                if line and int(line.split(",", 1)[0]) <= start_step:
                    kept.append(line + "\n")
        self.path.write_text(self.HEADER + "".join(kept))

    def write(self, step: int, loss: float) -> None:
        with self.path.open("a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([step, f"{loss:.6f}", f"{float(np.exp(loss)):.6f}"])


# ---------------------------------------------------------------------------
# checkpoints carrying optimiser state

_ATTN = {name: i for i, name in enumerate(nn.ATTENTION_MODES)}


def save_state(path, state: TrainState, cfg: nn.ModelConfig, glimpse_k: int | None) -> None:
    tensors = {k: v.astype(np.float32) for k, v in state.params.items()}
    meta = [cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.num_layers, _ATTN[cfg.attention],
            int(cfg.carry_encoder_state), glimpse_k or 0, state.step,
            state.moments["t"] if state.moments else 0]
    tensors["meta.config"] = np.array(meta, np.float32)
    if state.moments:
        for k in state.params:
            tensors[f"adam.m.{k}"] = state.moments["m"][k]
            tensors[f"adam.v.{k}"] = state.moments["v"][k]
    nn.save_checkpoint(path, tensors)


def load_state(path):
    """Return (TrainState, ModelConfig, glimpse_k) from a checkpoint written by ``save_state``."""
    tensors = nn.load_checkpoint(path)
    meta = [int(x) for x in tensors.pop("meta.config")]
    cfg = nn.ModelConfig(vocab_size=meta[0], embed_dim=meta[1], hidden_dim=meta[2], num_layers=meta[3],
                         attention=nn.ATTENTION_MODES[meta[4]], carry_encoder_state=bool(meta[5]))
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    moments = None
    if any(k.startswith("adam.") for k in tensors):
        moments = {"m": {k: tensors[f"adam.m.{k}"] for k in params},
                   "v": {k: tensors[f"adam.v.{k}"] for k in params},
                   "t": meta[8]}
    nn.check_params(params, cfg)
    return TrainState(params, moments, meta[7]), cfg, (meta[6] or None)
