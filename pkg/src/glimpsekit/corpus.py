"""Reply-tree pair extraction, tokenisation, vocabulary building and synthetic corpora."""
from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import OracleModel, TokenSequence, Vocabulary, oracle_sample

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"\w+|[^\w\s]")
# punctuation glued to the preceding / following word when detokenising
_CLOSE = set(".,!?;:%)]}")
_OPEN = set("([{$#")
_JOIN = set("'-/")


@dataclass(frozen=True)
class ThreadMessage:
    id: str
    parent_id: str | None
    text: str


@dataclass(frozen=True)
class Pair:
    prompt: str
    response: str


def split_words(text: str) -> list[str]:
    """Lower-case words, with every punctuation character as its own token."""
    return _TOKEN.findall(text.lower())


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    return vocab.ids(split_words(text))


def join_words(words: Sequence[str]) -> str:
    out = []
    glue = True
    for w in words:
        if out and not glue and w not in _CLOSE and w not in _JOIN:
            out.append(" ")
        out.append(w)
        glue = w in _OPEN or w in _JOIN
    return "".join(out)


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Render ids as text, dropping the start/end sentinels."""
    words = [vocab.tokens[i] for i in ids if i not in (vocab.sos_id, vocab.eos_id)]
    return join_words(words)


def normalize(text: str) -> str:
    """The canonical text form that ``detokenize(tokenize(text))`` reproduces."""
    return join_words(split_words(text))


def read_threads(path) -> tuple[list[ThreadMessage], int]:
    """Parse a JSON-lines thread file; returns (messages, number of malformed rows)."""
    messages, bad = [], 0
    seen = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            msg = ThreadMessage(str(row["id"]),
                                None if row.get("parent_id") is None else str(row["parent_id"]),
                                str(row["text"]))
        except (ValueError, KeyError, TypeError):
            bad += 1
            continue
        if msg.id in seen:
            bad += 1
            continue
        seen.add(msg.id)
        messages.append(msg)
    return messages, bad


def extract_pairs(messages: Sequence[ThreadMessage]) -> list[Pair]:
    """One (parent text, child text) pair per reply edge, depth-first by id."""
    by_id = {}
    for m in messages:
        by_id.setdefault(m.id, m)
    children = defaultdict(list)
    roots, dangling = [], 0
    for m in by_id.values():
        if m.parent_id is None:
            roots.append(m.id)
        elif m.parent_id not in by_id or m.parent_id == m.id:
            dangling += 1
            roots.append(m.id)
        else:
            children[m.parent_id].append(m.id)
    if dangling:
        log.warning("dropped %d reply edges with missing parents", dangling)

    pairs, empty = [], 0
    visited = set()
    stack = sorted(roots, reverse=True)
    while stack:
        node = stack.pop()
        if node in visited:
            continue
        visited.add(node)
        kids = sorted(children[node])
        for kid in kids:
            prompt, response = by_id[node].text, by_id[kid].text
            if normalize(prompt) and normalize(response):
                pairs.append(Pair(prompt, response))
            else:
                empty += 1
        stack.extend(reversed(kids))
    if empty:
        log.warning("skipped %d pairs that were empty after normalisation", empty)
    return pairs


def build_vocab(pairs: Iterable[Pair], max_size: int) -> Vocabulary:
    """Most frequent words (ties broken alphabetically) after the three sentinels."""
    if max_size < 4:
        raise ValueError("max_size must leave room for at least one word")
    counts = Counter()
    for p in pairs:
        counts.update(split_words(p.prompt))
        counts.update(split_words(p.response))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    base = Vocabulary.from_tokens(())
    words = [w for w, _ in ranked if w not in base][:max_size - 3]
    return Vocabulary.from_tokens(words)


def encode_pair(pair: Pair, vocab: Vocabulary) -> tuple[TokenSequence, TokenSequence]:
    target = (vocab.sos_id, *tokenize(pair.response, vocab), vocab.eos_id)
    return tokenize(pair.prompt, vocab), target


def synth_corpus(oracle: OracleModel, n_pairs: int, rng: np.random.Generator, max_len: int = 64):
    """Sample prompts from the oracle prior and responses from the oracle.

    Returns ``(pairs, token_pairs)``: text pairs and the exact (source, target) ids.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if not oracle.prompts:
        raise ValueError("oracle has no prompt support")
    v = oracle.vocab
    picks = rng.choice(len(oracle.prompts), size=n_pairs, p=oracle.priors)
    token_pairs, pairs = [], []
    for k in picks:
        src = oracle.prompts[int(k)]
        tgt = oracle_sample(oracle, src, rng, max_len)
        token_pairs.append((src, tgt))
        pairs.append(Pair(detokenize(src, v), detokenize(tgt, v)))
    return pairs, token_pairs


def write_pairs(path, pairs: Iterable[Pair]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"prompt": p.prompt, "response": p.response}, ensure_ascii=False) + "\n")


def read_pairs(path) -> list[Pair]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            out.append(Pair(row["prompt"], row["response"]))
    return out


def read_prompt_pool(path) -> list[str]:
    """One prompt per line; blank lines are ignored."""
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


def write_prompt_pool(path, prompts: Iterable[str]) -> None:
    Path(path).write_text("".join(p + "\n" for p in prompts), encoding="utf-8")
