"""Walk through segment-by-segment reranked decoding on a synthetic oracle.

The oracle has two kinds of prompts: terse ones whose replies end quickly and
chatty ones whose replies follow a long word chain.  We decode every prompt
with plain beam search and with the segment decoder, show a trace of the
segment choices for one prompt, and compare the length profiles.

Run:  python demos/segment_decoding_walkthrough.py
"""
import numpy as np

from glimpsekit import synthetic
from glimpsekit.corpus import detokenize
from glimpsekit.decode import DecodeParams, respond
from glimpsekit.evalkit import length_stats
from glimpsekit.seeding import derive_rng


def main():
    oracle = synthetic.long_response_oracle(0)
    params = DecodeParams(H=10, max_segments=8, max_len=20)
    print(f"oracle: {len(oracle.vocab)} symbols, {len(oracle.prompts)} prompts\n")

    # One prompt in detail: the trace lists, per round, the B candidates and their scores.
    src = oracle.prompts[0]
    out = respond(oracle, src, "segment", params, oracle.prompts, derive_rng(0, "decode", 0))
    print("prompt :", detokenize(src, oracle.vocab))
    print("beam   :", repr(respond(oracle, src, "beam", params, oracle.prompts, derive_rng(0, "decode", 0))["text"]))
    print("segment:", out["text"])
    for row in out["trace"][:3]:
        print(f"  round {row['round']}:")
        for j, c in enumerate(row["candidates"]):
            mark = "*" if j == row["chosen_index"] else " "
            print(f"    {mark} logp {c['logp']:8.3f}  log S {c['log_S']:7.3f}  {c['text']!r}")
    print()

    texts = {"beam": [], "segment": []}
    for i, prompt in enumerate(oracle.prompts):
        for strategy in texts:
            texts[strategy].append(respond(oracle, prompt, strategy, params, oracle.prompts,
                                           derive_rng(0, "decode", i))["text"])
    print("threshold  beam  segment   (fraction of replies longer than threshold)")
    rows = {s: length_stats(t, [20, 40, 60, 80, 100]) for s, t in texts.items()}
    for (thr, _, fb), (_, _, fs) in zip(rows["beam"], rows["segment"]):
        print(f"{thr:9d}  {fb:4.2f}  {fs:7.2f}")
    print("\nmean reply length: beam %.1f chars, segment %.1f chars"
          % (np.mean([len(t) for t in texts["beam"]]), np.mean([len(t) for t in texts["segment"]])))


if __name__ == "__main__":
    main()
