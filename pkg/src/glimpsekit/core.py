"""Shared types, the conditional sequence-model contract and the exact oracle model.

Token sequences are plain tuples of vocabulary ids.  A complete target starts
with ``sos_id`` and ends with ``eos_id``; sources carry no sentinels.  All
log-probabilities are natural logs and ``LOG_ZERO`` (``-inf``) stands for
log 0.
"""
from __future__ import annotations

import abc
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TokenSequence = tuple  # tuple[int, ...]

SOS, EOS, UNK = "<s>", "</s>", "<unk>"
LOG_ZERO = -np.inf

# tolerance used when checking that a distribution is normalised
NORM_TOL = 1e-6


class GlimpseKitError(Exception):
    pass


class CompletedSequence(GlimpseKitError):
    """The prefix already ends in end-of-sequence."""


class DimensionMismatch(GlimpseKitError):
    pass


class DegenerateDistribution(GlimpseKitError):
    pass


class NonFinite(GlimpseKitError):
    pass


class EmptyPool(GlimpseKitError):
    pass


class EmptyTarget(GlimpseKitError):
    pass


class InsufficientData(GlimpseKitError):
    pass


def safe_log(p):
    """Natural log that maps 0 to ``LOG_ZERO`` without raising warnings."""
    with np.errstate(divide="ignore"):
        return np.log(p)


def logsumexp(values) -> float:
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return LOG_ZERO
    m = a.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(a - m).sum()))


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple
    sos_id: int = 0
    eos_id: int = 1
    unk_id: int = 2
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        ids = {self.sos_id, self.eos_id, self.unk_id}
        if len(ids) != 3 or not all(0 <= i < len(tokens) for i in ids):
            raise ValueError("sentinel ids must be distinct valid indices")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(tokens)})

    @classmethod
    def from_tokens(cls, words: Iterable[str]) -> "Vocabulary":
        """Build a vocabulary with the sentinels at ids 0, 1, 2 followed by ``words``."""
        return cls((SOS, EOS, UNK, *words))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def lookup(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def ids(self, tokens: Iterable[str]) -> TokenSequence:
        return tuple(self.lookup(t) for t in tokens)

    def strings(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if lines[:3] != [SOS, EOS, UNK]:
            raise ValueError(f"{path}: vocabulary must start with {SOS}, {EOS}, {UNK}")
        return cls(tuple(lines))


def check_ids(ids: Sequence[int], size: int) -> None:
    for i in ids:
        if not 0 <= i < size:
            raise DimensionMismatch(f"token id {i} outside vocabulary of size {size}")


def check_prefix(vocab: Vocabulary, source: Sequence[int], prefix: Sequence[int]) -> None:
    n = len(vocab)
    check_ids(source, n)
    check_ids(prefix, n)
    if not prefix or prefix[0] != vocab.sos_id:
        raise ValueError("prefix must begin with the start-of-sequence id")
    if prefix[-1] == vocab.eos_id:
        raise CompletedSequence("prefix already ends with end-of-sequence")
    if vocab.eos_id in prefix[:-1]:
        raise ValueError("end-of-sequence may only appear as the final token")


def check_complete(vocab: Vocabulary, target: Sequence[int]) -> None:
    check_ids(target, len(vocab))
    if len(target) < 2 or target[0] != vocab.sos_id or target[-1] != vocab.eos_id:
        raise ValueError("target must start with SOS and end with EOS")
    if vocab.eos_id in target[1:-1] or vocab.sos_id in target[1:]:
        raise ValueError("sentinels may only appear at the ends of a target")


class ConditionalSequenceModel(abc.ABC):
    """Anything that yields P(next token | source, prefix).

    Implementations are immutable after construction.  ``sequence_log_prob``
    walks the prefix with ``next_token_distribution``; subclasses override it
    when they have a faster exact route.
    """

    vocab: Vocabulary

    @abc.abstractmethod
    def next_token_distribution(self, source: TokenSequence, prefix: TokenSequence) -> np.ndarray:
        ...

    def sequence_log_prob(self, source: TokenSequence, target: TokenSequence) -> float:
        total = 0.0
        for i in range(1, len(target)):
            p = self.next_token_distribution(source, tuple(target[:i]))[target[i]]
            if p <= 0.0:
                return LOG_ZERO
            total += float(np.log(p))
        return total

    def batch_sequence_log_prob(self, pairs: Sequence[tuple]) -> np.ndarray:
        return np.array([self.sequence_log_prob(s, t) for s, t in pairs], dtype=np.float64)


def next_token_distribution(model: ConditionalSequenceModel, source, prefix) -> np.ndarray:
    source, prefix = tuple(source), tuple(prefix)
    check_prefix(model.vocab, source, prefix)
    return model.next_token_distribution(source, prefix)


def sequence_log_prob(model: ConditionalSequenceModel, source, target) -> float:
    """Sum of per-step natural-log conditionals; ``LOG_ZERO`` if any factor is 0."""
    source, target = tuple(source), tuple(target)
    check_ids(source, len(model.vocab))
    check_complete(model.vocab, target)
    return model.sequence_log_prob(source, target)


class OracleModel(ConditionalSequenceModel):
    """First-order Markov response model whose rows depend on a class of the source.

    The class is ``sum(source) % num_classes``.  ``transitions`` has shape
    ``(num_classes, |V|, |V|)``; row ``[c, t]`` is P(next | class c, previous t).
    The row for ``eos_id`` is never consulted.
    """

    def __init__(self, vocab: Vocabulary, transitions, prompts: Sequence[TokenSequence] = (),
                 priors: Sequence[float] = ()):
        self.vocab = vocab
        table = np.array(transitions, dtype=np.float64)
        n = len(vocab)
        if table.ndim != 3 or table.shape[1:] != (n, n):
            raise DimensionMismatch(f"transition table must be (classes, {n}, {n}), got {table.shape}")
        self.num_classes = table.shape[0]
        self.prompts = tuple(tuple(int(i) for i in p) for p in prompts)
        self.priors = np.array(priors, dtype=np.float64)
        self._validate(table)
        table.setflags(write=False)
        self.transitions = table
        self._log_table = safe_log(table)
        self._log_table.setflags(write=False)

    def _validate(self, table: np.ndarray) -> None:
        v = self.vocab
        live = [t for t in range(len(v)) if t != v.eos_id]
        rows = table[:, live, :]
        if not np.all(np.isfinite(rows)) or np.any(rows < 0):
            raise ValueError("transition probabilities must be finite and nonnegative")
        if not np.allclose(rows.sum(axis=-1), 1.0, rtol=0.0, atol=1e-9):
            raise ValueError("every transition row must sum to 1 within 1e-9")
        if np.any(rows[:, :, v.sos_id] > 0):
            raise ValueError("start-of-sequence cannot be generated")
        for c in range(self.num_classes):
            reach = {v.eos_id}
            changed = True
            while changed:
                changed = False
                for t in live:
                    if t not in reach and any(table[c, t, u] > 0 for u in reach):
                        reach.add(t)
                        changed = True
            missing = [v.tokens[t] for t in live if t not in reach]
            if missing:
                raise ValueError(f"class {c}: end-of-sequence unreachable from {missing}")
        if len(self.prompts) != len(self.priors):
            raise ValueError("need exactly one prior per prompt")
        if self.prompts:
            if np.any(self.priors < 0) or abs(self.priors.sum() - 1.0) > 1e-9:
                raise ValueError("prompt priors must be nonnegative and sum to 1 within 1e-9")
            for p in self.prompts:
                check_ids(p, len(v))
                if not p or {v.sos_id, v.eos_id} & set(p):
                    raise ValueError("prompts must be non-empty and sentinel-free")

    def source_class(self, source: Sequence[int]) -> int:
        return int(sum(source)) % self.num_classes

    def next_token_distribution(self, source, prefix) -> np.ndarray:
        return self.transitions[self.source_class(source), prefix[-1]].copy()

    def sequence_log_prob(self, source, target) -> float:
        t = np.asarray(target)
        return float(self._log_table[self.source_class(source), t[:-1], t[1:]].sum())

    def class_log_prob(self, cls: int, target: Sequence[int]) -> float:
        t = np.asarray(target)
        return float(self._log_table[cls, t[:-1], t[1:]].sum())

    @classmethod
    def load(cls, path) -> "OracleModel":
        """Read an oracle definition (see README for the JSON layout)."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "OracleModel":
        for key in ("vocab", "classes", "transitions", "prompts"):
            if key not in data:
                raise ValueError(f"oracle definition lacks '{key}'")
        words = list(data["vocab"])
        if words[:3] != [SOS, EOS, UNK]:
            raise ValueError(f"oracle vocab must start with {SOS}, {EOS}, {UNK}")
        vocab = Vocabulary(tuple(words))
        n, k = len(vocab), int(data["classes"])
        table = np.zeros((k, n, n))
        for c in range(k):
            rows = data["transitions"].get(str(c))
            if rows is None:
                raise ValueError(f"no transitions for class {c}")
            for token, probs in rows.items():
                if token not in vocab:
                    raise ValueError(f"unknown token {token!r} in transitions")
                if len(probs) != n:
                    raise DimensionMismatch(f"row {c}/{token} has {len(probs)} entries, expected {n}")
                table[c, vocab.lookup(token)] = probs
        prompts = [tuple(vocab.lookup(w) if w in vocab else _unknown(w) for w in p["tokens"])
                   for p in data["prompts"]]
        priors = [float(p["prior"]) for p in data["prompts"]]
        return cls(vocab, table, prompts, priors)

    def to_dict(self) -> dict:
        v = self.vocab
        return {
            "vocab": list(v.tokens),
            "classes": self.num_classes,
            "transitions": {
                str(c): {v.tokens[t]: self.transitions[c, t].tolist()
                         for t in range(len(v)) if t != v.eos_id}
                for c in range(self.num_classes)
            },
            "prompts": [{"tokens": v.strings(p), "prior": float(q)}
                        for p, q in zip(self.prompts, self.priors)],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")


def _unknown(word):
    raise ValueError(f"prompt token {word!r} not in oracle vocab")


def oracle_marginal(model: OracleModel, target) -> float:
    """Exact P(target) = sum over the prompt support of prior(x) * P(target | x)."""
    target = tuple(target)
    check_complete(model.vocab, target)
    if not model.prompts:
        raise EmptyPool("oracle has no prompt support")
    by_class = {}
    total = 0.0
    for prompt, prior in zip(model.prompts, model.priors):
        c = model.source_class(prompt)
        if c not in by_class:
            by_class[c] = float(np.exp(model.class_log_prob(c, target)))
        total += prior * by_class[c]
    return total


def oracle_sample(model: OracleModel, source, rng: np.random.Generator, max_len: int) -> TokenSequence:
    """Draw a complete target; EOS is forced once ``max_len`` symbols have been generated."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    v = model.vocab
    c = model.source_class(source)
    out = [v.sos_id]
    while len(out) < max_len:
        tok = int(rng.choice(len(v), p=model.transitions[c, out[-1]]))
        out.append(tok)
        if tok == v.eos_id:
            return tuple(out)
    out.append(v.eos_id)
    return tuple(out)


def enumerate_targets(vocab: Vocabulary, max_len: int):
    """Every complete target with at most ``max_len`` predicted symbols (EOS included)."""
    inner = [t for t in range(len(vocab)) if t not in (vocab.sos_id, vocab.eos_id)]

    def rec(prefix):
        yield prefix + (vocab.eos_id,)
        if len(prefix) < max_len:
            for t in inner:
                yield from rec(prefix + (t,))

    yield from rec((vocab.sos_id,))
