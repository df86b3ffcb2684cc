"""Random oracle fixtures for tests, demos and desk-scale experiments."""
from __future__ import annotations

import string

import numpy as np

from .core import OracleModel, Vocabulary


def make_words(n: int, rng: np.random.Generator, min_len: int = 3, max_len: int = 7) -> list[str]:
    words: list[str] = []
    seen = set()
    letters = np.array(list(string.ascii_lowercase))
    while len(words) < n:
        w = "".join(rng.choice(letters, size=int(rng.integers(min_len, max_len + 1))))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def random_oracle(rng: np.random.Generator, n_words: int = 4, classes: int = 3, eos_mass: float = 0.3,
                  concentration: float = 1.0, n_prompts: int = 6, prompt_len=(1, 4), unk_mass: float = 0.0,
                  words=None) -> OracleModel:
    """Oracle whose every row puts exactly ``eos_mass`` on EOS and a Dirichlet draw on the words."""
    words = list(words) if words is not None else make_words(n_words, rng)
    vocab = Vocabulary.from_tokens(words)
    n = len(vocab)
    table = np.zeros((classes, n, n))
    content = np.arange(3, n)
    for c in range(classes):
        for t in range(n):
            if t == vocab.eos_id:
                continue
            table[c, t, vocab.eos_id] = eos_mass
            table[c, t, vocab.unk_id] = unk_mass
            table[c, t, content] = (1.0 - eos_mass - unk_mass) * rng.dirichlet(np.full(len(content), concentration))
    prompts = []
    while len(prompts) < n_prompts:
        p = tuple(int(x) for x in rng.choice(content, size=int(rng.integers(prompt_len[0], prompt_len[1] + 1))))
        if p not in prompts:
            prompts.append(p)
    priors = rng.dirichlet(np.ones(n_prompts))
    priors /= priors.sum()
    return OracleModel(vocab, table, prompts, priors)


def deterministic_oracle(rng: np.random.Generator, n_words: int = 4, classes: int = 2,
                         n_prompts: int = 4) -> OracleModel:
    """Every row is one-hot; each class follows its own acyclic chain ending in EOS."""
    words = make_words(n_words, rng)
    vocab = Vocabulary.from_tokens(words)
    n = len(vocab)
    table = np.zeros((classes, n, n))
    for c in range(classes):
        order = [int(t) for t in rng.permutation(np.arange(3, n))]

        def pick(cands):
            return cands[int(rng.integers(len(cands)))]

        # each word points only further along ``order`` (or to EOS), so there are no cycles
        table[c, vocab.sos_id, pick(order + [vocab.eos_id])] = 1.0
        table[c, vocab.unk_id, pick(order + [vocab.eos_id])] = 1.0
        for j, t in enumerate(order):
            table[c, t, pick(order[j + 1:] + [vocab.eos_id])] = 1.0
    content = np.arange(3, n)
    prompts = []
    while len(prompts) < n_prompts:
        p = tuple(int(x) for x in rng.choice(content, size=int(rng.integers(1, 4))))
        if p not in prompts:
            prompts.append(p)
    return OracleModel(vocab, table, prompts, np.full(n_prompts, 1.0 / n_prompts))


def uniform_oracle(n_words: int) -> OracleModel:
    """Every generatable token (words, UNK and EOS) is equally likely."""
    vocab = Vocabulary.from_tokens([f"w{i}" for i in range(n_words)])
    n = len(vocab)
    row = np.ones(n)
    row[vocab.sos_id] = 0.0
    row /= row.sum()
    table = np.tile(row, (1, n, 1))
    return OracleModel(vocab, table, [(3,)], [1.0])


def corpus_oracle(seed: int = 0, n_words: int = 12, classes: int = 3, eos_mass: float = 0.05,
                  concentration: float = 0.3, n_prompts: int = 30) -> OracleModel:
    """Mid-sized oracle with long responses (mean about ``1/eos_mass`` symbols) for training runs."""
    rng = np.random.default_rng(seed)
    return random_oracle(rng, n_words=n_words, classes=classes, eos_mass=eos_mass,
                         concentration=concentration, n_prompts=n_prompts, prompt_len=(2, 6))


def long_response_oracle(seed: int = 0, n_words: int = 16, classes: int = 3, n_prompts: int = 200) -> OracleModel:
    """Responses can run long, but EOS right after the start is the single likeliest outcome.

    Beam search without length normalisation therefore settles on very short
    replies, while sampled segments keep going.
    """
    rng = np.random.default_rng(seed)
    words = make_words(n_words, rng, min_len=6, max_len=9)
    vocab = Vocabulary.from_tokens(words)
    n = len(vocab)
    content = np.arange(3, n)
    table = np.zeros((classes, n, n))
    for c in range(classes):
        for t in range(n):
            if t == vocab.eos_id:
                continue
            eos = 0.35 if t == vocab.sos_id else 0.08
            table[c, t, vocab.eos_id] = eos
            table[c, t, content] = (1.0 - eos) * rng.dirichlet(np.full(len(content), 0.5))
    prompts = []
    while len(prompts) < n_prompts:
        p = tuple(int(x) for x in rng.choice(content, size=int(rng.integers(2, 7))))
        if p not in prompts:
            prompts.append(p)
    return OracleModel(vocab, table, prompts, np.full(n_prompts, 1.0 / n_prompts))


def mixed_length_oracle(seed: int = 0, n_words: int = 12, classes: int = 2, chain_len: int = 6,
                        chain_noise: float = 0.04, n_prompts: int = 200) -> OracleModel:
    """Even classes are terse, odd classes are chatty.

    A terse class ends early (EOS is the likeliest first symbol).  A chatty
    class follows one likely chain of ``chain_len`` long words before EOS, so
    plain beam search returns a reply of well over 40 characters.  Chain rows
    put ``chain_noise`` on leaving the chain (half on EOS, half spread over the
    words), so sampling still varies.
    """
    rng = np.random.default_rng(seed)
    words = make_words(n_words, rng, min_len=6, max_len=9)
    vocab = Vocabulary.from_tokens(words)
    n = len(vocab)
    content = np.arange(3, n)
    eos = vocab.eos_id
    table = np.zeros((classes, n, n))
    for c in range(classes):
        for t in range(n):
            if t != eos:
                table[c, t, eos] = 0.35 if t == vocab.sos_id else 0.1
                table[c, t, content] = (1.0 - table[c, t, eos]) * rng.dirichlet(np.full(len(content), 0.5))
        if c % 2 == 1:
            chain = [vocab.sos_id] + [int(t) for t in rng.permutation(content)[:chain_len]]
            for a, b in zip(chain, chain[1:] + [eos]):
                table[c, a, :] = 0.0
                table[c, a, b] = 1.0 - chain_noise
                table[c, a, eos] += chain_noise / 2
                table[c, a, content] += chain_noise / 2 / len(content)
    prompts = []
    while len(prompts) < n_prompts:
        p = tuple(int(x) for x in rng.choice(content, size=int(rng.integers(1, 6))))
        if p not in prompts:
            prompts.append(p)
    return OracleModel(vocab, table, prompts, np.full(n_prompts, 1.0 / n_prompts))
