"""N-choose-K retrieval accuracy and response length / diversity statistics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .core import (LOG_ZERO, ConditionalSequenceModel, EmptyPool, InsufficientData, OracleModel,
                   TokenSequence, logsumexp, oracle_marginal, safe_log)
from .decode import draw_phi
from .seeding import derive_rng

SCHEMES = ("no_norm", "marginal_norm", "prompt_norm")


@dataclass(frozen=True)
class ScoringScheme:
    kind: str = "no_norm"
    pool: tuple | None = None     # prompts for the normalised schemes
    Q: int = 15                   # prompts drawn per trial for prompt_norm
    exact_marginal: bool = False  # oracle only: use the true marginal for marginal_norm

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.Q < 1:
            raise ValueError("Q must be >= 1")


class RetrievalTrial(NamedTuple):
    prompt: TokenSequence
    true_response: TokenSequence
    distractors: tuple


def _diff(num: float, den: float) -> float:
    if den == LOG_ZERO:
        return LOG_ZERO if num == LOG_ZERO else math.inf
    return num - den


def score_candidate(scheme: ScoringScheme, model: ConditionalSequenceModel, prompt, candidate,
                    pool: Sequence[TokenSequence] | None) -> float:
    """Log-domain retrieval score of ``candidate`` for ``prompt``.

    ``pool`` is the marginal pool for ``marginal_norm`` and the normalisation
    set itself for ``prompt_norm``.
    """
    prompt, candidate = tuple(prompt), tuple(candidate)
    cond = model.sequence_log_prob(prompt, candidate)
    if scheme.kind == "no_norm":
        return cond
    if scheme.kind == "marginal_norm" and scheme.exact_marginal:
        if not isinstance(model, OracleModel):
            raise TypeError("exact marginals need the oracle model")
        return _diff(cond, float(safe_log(oracle_marginal(model, candidate))))
    if not pool:
        raise EmptyPool(f"{scheme.kind} needs a non-empty prompt pool")
    total = logsumexp([model.sequence_log_prob(tuple(p), candidate) for p in pool])
    if scheme.kind == "marginal_norm":
        return _diff(cond, total - math.log(len(pool)))
    return _diff(cond, total)


def build_trials(dataset: Sequence[tuple], N: int, trials: int, seed: int) -> list[RetrievalTrial]:
    """Fixed trial set: trial ``t`` depends only on (seed, t)."""
    if N < 2:
        raise ValueError("N must be >= 2")
    if len(dataset) < N:
        raise InsufficientData(f"need at least N={N} pairs, have {len(dataset)}")
    out = []
    for t in range(trials):
        rng = derive_rng(seed, "trial", t)
        i = int(rng.integers(len(dataset)))
        prompt, truth = (tuple(x) for x in dataset[i])
        distractors = []
        for j in rng.permutation(len(dataset)):
            if j == i or tuple(dataset[j][1]) == truth:
                continue
            distractors.append(tuple(dataset[j][1]))
            if len(distractors) == N - 1:
                break
        if len(distractors) < N - 1:
            raise InsufficientData("not enough distinct responses for distractors")
        out.append(RetrievalTrial(prompt, truth, tuple(distractors)))
    return out


def rank_of_truth(true_score: float, other_scores: Sequence[float]) -> int:
    """0-based rank of the true response; ties count against it."""
    return sum(1 for s in other_scores if s >= true_score)


Scorer = Callable[[RetrievalTrial, TokenSequence, np.random.Generator], float]


def n_choose_k(model: ConditionalSequenceModel | None, dataset, N: int, K: int,
               scheme: ScoringScheme | Scorer, trials: int | Sequence[RetrievalTrial], seed: int = 0) -> float:
    """Fraction of trials in which the true response ranks among the top ``K`` of ``N``.

    ``scheme`` may also be a callable ``(trial, candidate, rng) -> score``,
    e.g. a random-score control.  ``trials`` is either a count or a prebuilt
    trial list (to compare schemes on the same trials).
    """
    if not 0 < K < N:
        raise ValueError("need 0 < K < N")
    if isinstance(trials, int):
        trials = build_trials(dataset, N, trials, seed)
    if not trials:
        raise InsufficientData("no trials")
    pool = None
    if isinstance(scheme, ScoringScheme) and scheme.kind != "no_norm":
        pool = list(scheme.pool) if scheme.pool is not None else _unique_prompts(dataset)
    hits = 0
    for t, trial in enumerate(trials):
        rng = derive_rng(seed, "score", t)
        cands = (trial.true_response, *trial.distractors)
        if callable(scheme) and not isinstance(scheme, ScoringScheme):
            scores = [scheme(trial, c, rng) for c in cands]
        else:
            norm = pool
            if scheme.kind == "prompt_norm":
                norm, _ = draw_phi(pool, trial.prompt, scheme.Q, rng)
            scores = [score_candidate(scheme, model, trial.prompt, c, norm) for c in cands]
        if rank_of_truth(scores[0], scores[1:]) < K:
            hits += 1
    return hits / len(trials)


def _unique_prompts(dataset) -> list[TokenSequence]:
    seen = {}
    for s, _ in dataset:
        seen.setdefault(tuple(s), None)
    return list(seen)


def random_scorer(trial, candidate, rng: np.random.Generator) -> float:
    return float(rng.random())


def binomial_ci95(p: float, n: int) -> float:
    return 1.96 * math.sqrt(max(p * (1 - p), 0.0) / n)


def write_eval_report(path, scheme: str, N: int, K: int, trials: int, accuracy: float) -> dict:
    report = {"scheme": scheme, "N": N, "K": K, "trials": trials, "accuracy": accuracy,
              "ci95": binomial_ci95(accuracy, trials)}
    Path(path).write_text(json.dumps(report, sort_keys=True) + "\n", encoding="utf-8")
    return report


def length_stats(responses: Sequence[str], thresholds: Sequence[int]) -> list[tuple[int, int, float]]:
    """Rows ``(threshold, count longer than threshold, fraction)`` by character length."""
    lengths = np.sort(np.array([len(r) for r in responses], dtype=np.int64))
    n = len(lengths)
    rows = []
    for th in thresholds:
        count = int(n - np.searchsorted(lengths, th, side="right"))
        rows.append((int(th), count, count / n if n else 0.0))
    return rows


def write_length_report(path, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "count", "fraction"])
        for th, count, frac in rows:
            w.writerow([th, count, f"{frac:.6f}"])


def distinct_ngram_ratio(responses: Sequence[Sequence[str]], n: int) -> float:
    """Distinct n-grams over total n-grams across all tokenised responses."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seen = set()
    total = 0
    for toks in responses:
        toks = list(toks)
        for i in range(len(toks) - n + 1):
            seen.add(tuple(toks[i:i + n]))
            total += 1
    return len(seen) / total if total else 0.0
