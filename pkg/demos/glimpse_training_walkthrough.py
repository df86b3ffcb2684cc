"""Show how a long target is cut into glimpses, then train a vanilla and a glimpse model.

Each glimpse example moves the target prefix onto the encoder (followed by the
end marker) and asks the decoder to produce only the next K tokens.  Training
on glimpses should cost little or nothing in perplexity compared with training
on whole targets; both are compared here with the entropy rate of the oracle
that generated the data.

Run:  python demos/glimpse_training_walkthrough.py [seconds_per_model]
"""
import math
import sys

import numpy as np

from glimpsekit import corpus, nn, synthetic, train
from glimpsekit.glimpse import GlimpseConfig, perplexity, split_into_glimpses


def show_split(oracle, pair, k):
    src, tgt = pair
    words = oracle.vocab.tokens
    fmt = lambda ids: " ".join(words[i] for i in ids)
    print(f"source : {fmt(src)}")
    print(f"target : {fmt(tgt)}  ({len(tgt) - 1} predicted symbols)\n")
    for j, g in enumerate(split_into_glimpses(src, tgt, GlimpseConfig(k), oracle.vocab)):
        print(f"glimpse {j}: encoder [{fmt(g.encoder_input)}]")
        print(f"           decoder in  [{fmt(g.decoder_input)}]  ->  out [{fmt(g.decoder_output)}]")
    print()


def entropy_rate(oracle, steps=2000):
    """exp of the mean per-token entropy under the oracle, by propagating state occupancy."""
    T = oracle.transitions
    with np.errstate(divide="ignore", invalid="ignore"):
        row_h = -np.where(T > 0, T * np.log(T), 0.0).sum(axis=-1)
    h = n = 0.0
    for prompt, prior in zip(oracle.prompts, oracle.priors):
        c = oracle.source_class(prompt)
        state = np.eye(len(oracle.vocab))[oracle.vocab.sos_id]
        for _ in range(steps):
            state[oracle.vocab.eos_id] = 0.0
            h += prior * (state @ row_h[c])
            n += prior * state.sum()
            state = state @ T[c]
    return math.exp(h / n)


def main(budget=20.0):
    oracle = synthetic.corpus_oracle(0)
    _, pairs = corpus.synth_corpus(oracle, 3000, np.random.default_rng(0), max_len=200)
    long_pair = max(pairs[:50], key=lambda p: len(p[1]))
    show_split(oracle, (long_pair[0], long_pair[1][:12] + (oracle.vocab.eos_id,)), k=4)

    train_pairs, dev = pairs[:2700], pairs[2700:]
    cfg = nn.ModelConfig(len(oracle.vocab), embed_dim=32, hidden_dim=64)
    print(f"oracle entropy rate bound exp(H) = {entropy_rate(oracle):.3f}")
    for name, k in (("vanilla", None), ("glimpse K=10", 10)):
        state = train.TrainState(nn.init_params(cfg, seed=0, dtype=np.float32))
        examples = train.training_examples(train_pairs, oracle.vocab, k)
        tcfg = train.TrainConfig(steps=10**9, batch_size=64, lr=1e-2, glimpse_k=k, seed=1, time_budget=budget)
        state = train.train(state, cfg, examples, tcfg)
        ppl = perplexity(nn.NeuralSeq2Seq(state.params, cfg, oracle.vocab, k), dev)
        print(f"{name:13s} {len(examples):6d} examples, {state.step:5d} steps in {budget:.0f}s, dev ppl {ppl:.3f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 20.0)
