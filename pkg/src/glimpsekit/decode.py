"""Decoders: beam search, stochastic beam sampling and segment-by-segment reranking.

Every decoder talks to a ``ConditionalSequenceModel`` with the original source
and the full target prefix.  Models trained on glimpses move the already
chosen prefix onto their encoder themselves (see ``NeuralSeq2Seq``), so the
same code drives the oracle and the neural models.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .core import (LOG_ZERO, NORM_TOL, ConditionalSequenceModel, DegenerateDistribution, EmptyPool,
                   OracleModel, TokenSequence, logsumexp, oracle_marginal, safe_log)
from .corpus import detokenize


@dataclass(frozen=True)
class Beam:
    tokens: TokenSequence
    logp: float = 0.0
    finished: bool = False


@dataclass(frozen=True)
class DecodeParams:
    B: int = 2
    D: int = 10
    H: int = 10
    Q: int = 15
    alpha: float = 0.8
    max_segments: int = 8
    backoff_threshold_chars: int = 40
    beam_size: int = 8
    max_len: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.B, self.D, self.H, self.Q, self.max_segments, self.beam_size) < 1:
            raise ValueError("B, D, H, Q, max_segments and beam_size must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")


@dataclass(frozen=True)
class ScoredSegment:
    segment: TokenSequence
    logp_conditional: float
    score_S: float = 0.0
    log_score: float = LOG_ZERO
    flagged: bool = False


class Hypothesis(NamedTuple):
    tokens: TokenSequence
    score: float
    logp: float
    forced: bool = False


def continuation_log_prob(model: ConditionalSequenceModel, source, prefix, continuation) -> float:
    """log P(continuation | source, prefix), summed token by token."""
    if isinstance(model, OracleModel):
        return model.class_log_prob(model.source_class(source), (prefix[-1], *continuation))
    total = 0.0
    cur = tuple(prefix)
    for tok in continuation:
        p = model.next_token_distribution(source, cur)[tok]
        if p <= 0.0:
            return LOG_ZERO
        total += math.log(p)
        cur += (tok,)
    return total


def _checked_distribution(model, source, prefix) -> np.ndarray:
    dist = np.asarray(model.next_token_distribution(source, prefix), dtype=np.float64)
    if not np.all(np.isfinite(dist)) or np.any(dist < 0) or abs(dist.sum() - 1.0) > NORM_TOL:
        raise DegenerateDistribution(f"next-token distribution sums to {dist.sum()!r}")
    return dist


# ---------------------------------------------------------------------------
# deterministic baselines


def length_normalized(logp: float, length: int, alpha: float | None) -> float:
    """Ranking score ``logp / length**alpha`` (plain ``logp`` when alpha is None)."""
    if alpha is None or logp == LOG_ZERO:
        return logp
    return logp / (length ** alpha)


def greedy_decode(model: ConditionalSequenceModel, source, max_len: int) -> TokenSequence:
    v = model.vocab
    out = (v.sos_id,)
    while len(out) < max_len:
        tok = int(np.argmax(model.next_token_distribution(source, out)))
        out += (tok,)
        if tok == v.eos_id:
            return out
    return out + (v.eos_id,)


def beam_search(model: ConditionalSequenceModel, source, B: int, max_len: int,
                alpha: float | None = None) -> list[Hypothesis]:
    """Standard beam search over natural-log scores.

    Completed hypotheses are retired to a pool; the search stops once ``B``
    are complete, no live beams remain, or ``max_len`` symbols are reached.
    Beams still open at ``max_len`` get an EOS appended (``forced=True``) and
    rank after every naturally finished hypothesis.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    v = model.vocab
    source = tuple(source)
    live = [Beam((v.sos_id,))]
    done, forced = [], []
    for step in range(1, max_len + 1):
        cands = []
        for beam in live:
            logd = safe_log(model.next_token_distribution(source, beam.tokens))
            if step == max_len:
                if logd[v.eos_id] > LOG_ZERO:
                    done.append(Beam(beam.tokens + (v.eos_id,), beam.logp + logd[v.eos_id], True))
                else:
                    forced.append(Beam(beam.tokens + (v.eos_id,), beam.logp, True))
                continue
            for tok in np.flatnonzero(logd > LOG_ZERO):
                tok = int(tok)
                cands.append(Beam(beam.tokens + (tok,), beam.logp + float(logd[tok]), tok == v.eos_id))
        if step == max_len:
            break
        cands.sort(key=lambda b: -b.logp)
        live = []
        for rank, c in enumerate(cands):
            if c.finished:
                if rank < B:
                    done.append(c)
            elif len(live) < B:
                live.append(c)
            if rank >= B - 1 and len(live) >= B:
                break
        if not live:
            break
        if len(done) >= B:
            # log-probabilities only fall as a beam grows, so a live beam can at
            # best reach logp / max_len**alpha; stop once none can overtake the
            # B-th best finished hypothesis
            kth = sorted((length_normalized(b.logp, len(b.tokens) - 1, alpha) for b in done), reverse=True)[B - 1]
            reach = max(b.logp for b in live) / (max_len ** alpha if alpha is not None else 1.0)
            if reach <= kth:
                break

    def ranked(beams, force):
        hyps = [Hypothesis(b.tokens, length_normalized(b.logp, len(b.tokens) - 1, alpha), b.logp, force)
                for b in beams]
        return sorted(hyps, key=lambda h: (-h.score, h.tokens))

    return ranked(done, False) + ranked(forced, True)


# ---------------------------------------------------------------------------
# stochastic beam search


def stochastic_beam_step(beams: Sequence[Beam], model: ConditionalSequenceModel, source, D: int, B: int,
                         rng: np.random.Generator) -> list[Beam]:
    """One step of two-step sampling.

    Each beam draws ``D`` tokens i.i.d. from its next-token distribution;
    duplicates collapse.  A softmax over the accumulated log-probabilities of
    all resulting extensions then picks up to ``B`` of them without
    replacement.  Extensions ending in EOS come back with ``finished=True``.
    """
    if not beams or len(beams) > B:
        raise ValueError("need between 1 and B input beams")
    eos = model.vocab.eos_id
    exts = []
    for beam in beams:
        if beam.finished:
            raise ValueError("finished beams cannot be extended")
        dist = _checked_distribution(model, source, beam.tokens)
        drawn = np.unique(rng.choice(len(dist), size=D, p=dist / dist.sum()))
        for tok in drawn:
            tok = int(tok)
            exts.append(Beam(beam.tokens + (tok,), beam.logp + math.log(dist[tok]), tok == eos))
    logits = np.array([e.logp for e in exts])
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    k = min(B, int(np.count_nonzero(probs)))
    picked = rng.choice(len(exts), size=k, replace=False, p=probs)
    return [exts[i] for i in picked]


def generate_segment_candidates(model: ConditionalSequenceModel, source, chosen_prefix,
                                params: DecodeParams, rng: np.random.Generator) -> list[ScoredSegment]:
    """Up to ``B`` distinct continuations of at most ``H`` tokens (unscored, logp filled).

    Segments that reach EOS early are retired and the remaining width shrinks
    accordingly, so the result never exceeds ``B`` candidates.
    """
    prefix = tuple(chosen_prefix)
    n0 = len(prefix)
    live = [Beam(prefix)]
    finished = []
    for _ in range(params.H):
        width = params.B - len(finished)
        if not live or width < 1:
            break
        step = stochastic_beam_step(live[:width], model, source, params.D, width, rng)
        finished.extend(b for b in step if b.finished)
        live = [b for b in step if not b.finished]
    return [ScoredSegment(b.tokens[n0:], b.logp) for b in finished + live]


def draw_phi(pool: Sequence[TokenSequence], source, Q: int, rng: np.random.Generator):
    """Sample up to ``Q`` prompts from ``pool`` without replacement, skipping the true source.

    Returns ``(prompts, indices into pool)``.
    """
    source = tuple(source)
    allowed = [i for i, p in enumerate(pool) if tuple(p) != source]
    if not allowed:
        raise EmptyPool("prompt pool has no prompt other than the source")
    k = min(Q, len(allowed))
    idx = sorted(int(i) for i in rng.choice(allowed, size=k, replace=False))
    return [tuple(pool[i]) for i in idx], idx


def score_segment(model: ConditionalSequenceModel, segment, source, chosen_prefix,
                  phi: Sequence[TokenSequence]) -> ScoredSegment:
    """Prompt-normalised score P(seg | x, prefix) / sum over phi of P(seg | x', prefix)."""
    if not phi:
        raise EmptyPool("normalisation set is empty")
    segment = tuple(segment)
    num = continuation_log_prob(model, source, chosen_prefix, segment)
    den = logsumexp([continuation_log_prob(model, p, chosen_prefix, segment) for p in phi])
    if den == LOG_ZERO:
        return ScoredSegment(segment, num, 0.0, LOG_ZERO, True)
    log_s = num - den
    return ScoredSegment(segment, num, float(np.exp(log_s)), log_s, False)


def _selection_key(c: ScoredSegment):
    return (-c.log_score, -c.logp_conditional, c.segment)


def _finite_or_none(x):
    return float(x) if np.isfinite(x) else None


@dataclass
class SegmentDecodeResult:
    tokens: TokenSequence
    trace: list = field(default_factory=list)
    forced_eos: bool = False


def segment_decode(model: ConditionalSequenceModel, source, pool: Sequence[TokenSequence],
                   params: DecodeParams, rng: np.random.Generator) -> SegmentDecodeResult:
    """Generate a response segment by segment, keeping the best prompt-normalised candidate each round."""
    v = model.vocab
    source = tuple(source)
    phi, phi_idx = draw_phi(pool, source, params.Q, rng)
    prefix = (v.sos_id,)
    trace = []
    for rnd in range(params.max_segments):
        cands = generate_segment_candidates(model, source, prefix, params, rng)
        scored = [score_segment(model, c.segment, source, prefix, phi) for c in cands]
        best = min(range(len(scored)), key=lambda i: _selection_key(scored[i]))
        trace.append({
            "round": rnd,
            "candidates": [{"tokens": list(c.segment), "text": detokenize(c.segment, v),
                            "logp": _finite_or_none(c.logp_conditional), "S": _finite_or_none(c.score_S),
                            "log_S": _finite_or_none(c.log_score), "flagged": c.flagged}
                           for c in scored],
            "chosen_index": best,
            "phi_indices": phi_idx,
        })
        prefix += scored[best].segment
        if prefix[-1] == v.eos_id:
            return SegmentDecodeResult(prefix, trace, False)
    return SegmentDecodeResult(prefix + (v.eos_id,), trace, True)


def trace_to_jsonl(trace: Sequence[dict]) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in trace)


def rerank_by_marginal(model: ConditionalSequenceModel, candidates: Sequence[TokenSequence], source,
                       pool: Sequence[TokenSequence], exact: bool = False) -> list[tuple[TokenSequence, float]]:
    """Order complete candidates by log P(y|x) - log P(y), descending and stable.

    P(y) is the mean of P(y|x') over ``pool``; with ``exact=True`` and an
    oracle model it is the oracle's exact marginal instead.
    """
    if not pool and not exact:
        raise EmptyPool("marginal estimate needs a non-empty pool")
    scored = []
    for y in candidates:
        y = tuple(y)
        cond = model.sequence_log_prob(tuple(source), y)
        if exact:
            if not isinstance(model, OracleModel):
                raise TypeError("exact marginals are only available for the oracle")
            marg = float(safe_log(oracle_marginal(model, y)))
        else:
            marg = logsumexp([model.sequence_log_prob(tuple(p), y) for p in pool]) - math.log(len(pool))
        scored.append((y, _normalized_difference(cond, marg)))
    return sorted(scored, key=lambda t: -t[1])


def _normalized_difference(num: float, den: float) -> float:
    if den == LOG_ZERO:
        return LOG_ZERO
    return num - den


def backoff_respond(baseline_output: str, our_output: str, threshold_chars: int = 40) -> tuple[str, str]:
    """Keep the plain beam-search reply when it is shorter than the threshold."""
    if len(baseline_output) < threshold_chars:
        return baseline_output, "baseline"
    return our_output, "segment_model"


# ---------------------------------------------------------------------------

STRATEGIES = ("beam", "beam_lennorm", "segment", "backoff")


def respond(model: ConditionalSequenceModel, source, strategy: str, params: DecodeParams,
            pool: Sequence[TokenSequence], rng: np.random.Generator) -> dict:
    """Decode one prompt with a named strategy.

    Returns a dict with ``tokens``, ``text``, ``provenance``, ``trace`` and,
    for ``backoff``, the ``baseline_text`` that drove the decision.
    """
    v = model.vocab
    source = tuple(source)

    def beam(alpha):
        return beam_search(model, source, params.beam_size, params.max_len, alpha)[0].tokens

    if strategy == "beam":
        toks = beam(None)
        return {"tokens": toks, "text": detokenize(toks, v), "provenance": "baseline", "trace": []}
    if strategy == "beam_lennorm":
        toks = beam(params.alpha)
        return {"tokens": toks, "text": detokenize(toks, v), "provenance": "baseline", "trace": []}
    if strategy == "segment":
        res = segment_decode(model, source, pool, params, rng)
        return {"tokens": res.tokens, "text": detokenize(res.tokens, v), "provenance": "segment_model",
                "trace": res.trace}
    if strategy == "backoff":
        base = beam(None)
        base_text = detokenize(base, v)
        if len(base_text) < params.backoff_threshold_chars:
            return {"tokens": base, "text": base_text, "provenance": "baseline", "trace": [],
                    "baseline_text": base_text}
        res = segment_decode(model, source, pool, params, rng)
        ours = detokenize(res.tokens, v)
        text, tag = backoff_respond(base_text, ours, params.backoff_threshold_chars)
        return {"tokens": res.tokens, "text": text, "provenance": tag, "trace": res.trace,
                "baseline_text": base_text}
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
