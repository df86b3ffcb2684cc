"""Glimpse-model data transformation and full-sequence perplexity.

A target ``y0 .. yN`` is cut along decoder time steps into consecutive
windows of ``K`` steps.  For the window starting at step ``jK`` the encoder
sees the source, then ``y1 .. y(jK-1)``, then one EOS; the decoder reads
``y(jK) .. y(jK+K-1)`` and predicts ``y(jK+1) .. y(jK+K)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .core import (LOG_ZERO, ConditionalSequenceModel, EmptyTarget, TokenSequence, Vocabulary,
                   check_complete)


@dataclass(frozen=True)
class GlimpseConfig:
    K: int = 10

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("glimpse length K must be >= 1")


class GlimpseExample(NamedTuple):
    encoder_input: TokenSequence
    decoder_input: TokenSequence
    decoder_output: TokenSequence


def assemble_encoder_input(source: Sequence[int], target_prefix: Sequence[int], eos_id: int) -> TokenSequence:
    """``source ++ target_prefix ++ EOS``; ``target_prefix`` must not contain SOS."""
    return (*source, *target_prefix, eos_id)


def glimpse_start(num_decoded: int, K: int) -> int:
    """Decoder step at which the glimpse containing position ``num_decoded`` begins."""
    return (num_decoded // K) * K


def split_into_glimpses(source, target, cfg: GlimpseConfig, vocab: Vocabulary) -> list[GlimpseExample]:
    source, target = tuple(source), tuple(target)
    if len(target) < 2:
        raise EmptyTarget("target has no predicted symbols")
    check_complete(vocab, target)
    if not source:
        raise ValueError("source must be non-empty")
    n = len(target) - 1
    out = []
    for start in range(0, n, cfg.K):
        stop = min(start + cfg.K, n)
        out.append(GlimpseExample(
            assemble_encoder_input(source, target[1:start], vocab.eos_id),
            target[start:stop],
            target[start + 1:stop + 1],
        ))
    return out


def vanilla_example(source, target, vocab: Vocabulary) -> GlimpseExample:
    """The ordinary seq2seq training pair: whole source on the encoder, whole target on the decoder."""
    source, target = tuple(source), tuple(target)
    if len(target) < 2:
        raise EmptyTarget("target has no predicted symbols")
    return GlimpseExample((*source, vocab.eos_id), target[:-1], target[1:])


def make_training_stream(pairs, cfg: GlimpseConfig | None, rng: np.random.Generator,
                         vocab: Vocabulary, epochs: int | None = 1) -> Iterator[GlimpseExample]:
    """Yield every glimpse of every pair once per epoch, in a seeded shuffled order.

    ``cfg=None`` gives the vanilla stream.  ``epochs=None`` repeats forever.
    """
    if cfg is None:
        examples = [vanilla_example(s, t, vocab) for s, t in pairs]
    else:
        examples = [g for s, t in pairs for g in split_into_glimpses(s, t, cfg, vocab)]
    epoch = 0
    while epochs is None or epoch < epochs:
        for i in rng.permutation(len(examples)):
            yield examples[i]
        epoch += 1


def make_vanilla_stream(pairs, rng: np.random.Generator, vocab: Vocabulary, epochs: int = 1):
    examples = []
    for s, t in pairs:
        s, t = tuple(s), tuple(t)
        examples.append(GlimpseExample(s + (vocab.eos_id,), t[:-1], t[1:]))
    for _ in range(epochs):
        for i in rng.permutation(len(examples)):
            yield examples[i]


def glimpse_count(num_predicted: int, K: int) -> int:
    return math.ceil(num_predicted / K)


def perplexity(model: ConditionalSequenceModel, pairs) -> float:
    """exp of the mean negative log-likelihood per predicted token over whole targets."""
    pairs = [(tuple(s), tuple(t)) for s, t in pairs]
    if not pairs:
        raise ValueError("no pairs to evaluate")
    logps = model.batch_sequence_log_prob(pairs)
    if np.any(logps == LOG_ZERO):
        return math.inf
    count = sum(len(t) - 1 for _, t in pairs)
    return float(np.exp(-math.fsum(logps.tolist()) / count))
