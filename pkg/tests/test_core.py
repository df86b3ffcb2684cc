import itertools
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glimpsekit import synthetic
from glimpsekit.core import (LOG_ZERO, CompletedSequence, DimensionMismatch, OracleModel, Vocabulary,
                             enumerate_targets, next_token_distribution, oracle_marginal, oracle_sample,
                             sequence_log_prob)

from conftest import table_walk


def test_vocabulary_lookup_is_inverse():
    v = Vocabulary.from_tokens(["a", "b", "c"])
    assert (v.sos_id, v.eos_id, v.unk_id) == (0, 1, 2)
    for i, t in enumerate(v.tokens):
        assert v.lookup(t) == i
    assert v.lookup("zzz") == v.unk_id


def test_vocabulary_rejects_duplicates():
    with pytest.raises(ValueError):
        Vocabulary(("<s>", "</s>", "<unk>", "a", "a"))


def test_vocabulary_file_round_trip(tmp_path):
    v = Vocabulary.from_tokens(["x", "y"])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v


def test_deterministic_row_gives_one_hot():
    v = Vocabulary.from_tokens(["a"])
    table = np.zeros((1, 4, 4))
    table[0, :, 3] = 1.0
    table[0, 3, :] = 0.0
    table[0, 3, 1] = 1.0
    m = OracleModel(v, table)
    assert next_token_distribution(m, (3,), (0,)).tolist() == [0, 0, 0, 1]
    assert next_token_distribution(m, (3, 3), (0, 3)).tolist() == [0, 1, 0, 0]


def test_uniform_rows():
    v = Vocabulary.from_tokens(["a"])
    table = np.full((1, 4, 4), 0.25)
    table[:, :, 0] = 0.0
    table[:, :, 1:] = 1 / 3
    m = OracleModel(v, table)
    d = next_token_distribution(m, (3,), (0, 3))
    assert d.sum() == pytest.approx(1.0, abs=1e-12)


def test_uniform_sequence_log_prob():
    v = Vocabulary.from_tokens(["a", "b"])
    table = np.zeros((1, 5, 5))
    table[:, :, 1:] = 0.25
    m = OracleModel(v, table)
    assert sequence_log_prob(m, (3,), (0, 3, 4, 1)) == pytest.approx(3 * math.log(0.25), abs=1e-12)


def test_deterministic_path_has_log_prob_zero():
    m = synthetic.deterministic_oracle(np.random.default_rng(3), n_words=6, classes=1)
    src = m.prompts[0]
    y = [0]
    while y[-1] != 1:
        y.append(int(np.argmax(m.next_token_distribution(src, tuple(y)))))
    assert sequence_log_prob(m, src, y) == 0.0


def test_completed_prefix_rejected(small_oracle):
    with pytest.raises(CompletedSequence):
        next_token_distribution(small_oracle, (3,), (0, 3, 1))


def test_out_of_range_rejected(small_oracle):
    with pytest.raises(DimensionMismatch):
        next_token_distribution(small_oracle, (99,), (0,))
    with pytest.raises(DimensionMismatch):
        sequence_log_prob(small_oracle, (3,), (0, 42, 1))


def test_zero_probability_is_log_zero():
    v = Vocabulary.from_tokens(["a", "b"])
    table = np.zeros((1, 5, 5))
    table[:, :, 1] = 0.5
    table[:, :, 3] = 0.5
    m = OracleModel(v, table)
    assert sequence_log_prob(m, (3,), (0, 4, 1)) == LOG_ZERO
    # the generic walk agrees with the table fast path
    assert super(OracleModel, m).sequence_log_prob((3,), (0, 4, 1)) == LOG_ZERO


def test_sequence_log_prob_matches_table_walk(small_oracle):
    rng = np.random.default_rng(0)
    for _ in range(50):
        src = small_oracle.prompts[int(rng.integers(len(small_oracle.prompts)))]
        tgt = oracle_sample(small_oracle, src, rng, 8)
        c = sum(src) % 3
        expected = table_walk(small_oracle.transitions.tolist(), c, tgt)
        assert math.exp(sequence_log_prob(small_oracle, src, tgt)) == pytest.approx(expected, rel=1e-12)


def test_generic_walk_matches_fast_path(small_oracle):
    rng = np.random.default_rng(1)
    for _ in range(20):
        src = small_oracle.prompts[0]
        tgt = oracle_sample(small_oracle, src, rng, 8)
        slow = super(OracleModel, small_oracle).sequence_log_prob(src, tgt)
        assert slow == pytest.approx(small_oracle.sequence_log_prob(src, tgt), abs=1e-12)


def test_oracle_validation():
    v = Vocabulary.from_tokens(["a"])
    bad = np.zeros((1, 4, 4))
    bad[0, :, 3] = 1.0          # 'a' forever, EOS unreachable
    with pytest.raises(ValueError, match="unreachable"):
        OracleModel(v, bad)
    bad2 = np.full((1, 4, 4), 0.3)
    with pytest.raises(ValueError, match="sum"):
        OracleModel(v, bad2)


def test_marginal_single_prompt(small_oracle):
    m = OracleModel(small_oracle.vocab, small_oracle.transitions, [small_oracle.prompts[0]], [1.0])
    y = (0, 3, 4, 1)
    assert oracle_marginal(m, y) == pytest.approx(math.exp(sequence_log_prob(m, m.prompts[0], y)), rel=1e-12)


def test_marginal_same_class_prompts(small_oracle):
    # (3,) and (3, 3, 3) share class 0 under modulus 3
    m = OracleModel(small_oracle.vocab, small_oracle.transitions, [(3,), (3, 3, 3, 3)], [0.5, 0.5])
    y = (0, 5, 3, 1)
    assert oracle_marginal(m, y) == pytest.approx(math.exp(sequence_log_prob(m, (3,), y)), rel=1e-12)


def test_marginal_three_classes_by_enumeration(small_oracle):
    T = small_oracle.transitions.tolist()
    prompts = [(3,), (4,), (5,)]          # classes 0, 1, 2
    priors = [0.2, 0.3, 0.5]
    m = OracleModel(small_oracle.vocab, small_oracle.transitions, prompts, priors)
    for y in [(0, 3, 1), (0, 4, 5, 1), (0, 1)]:
        expected = sum(q * table_walk(T, sum(p) % 3, y) for p, q in zip(prompts, priors))
        assert oracle_marginal(m, y) == pytest.approx(expected, rel=1e-12)


def test_total_mass_by_exhaustive_enumeration(small_oracle):
    # |V| = 6 (3 generatable words + UNK, EOS); EOS mass 0.35 per row
    v = small_oracle.vocab
    max_len = 6
    src = small_oracle.prompts[0]
    targets = list(enumerate_targets(v, max_len))
    total = sum(math.exp(sequence_log_prob(small_oracle, src, y)) for y in targets)
    # truncation mass is (1-0.35)^6 = 0.075 here, so account for it exactly
    assert total == pytest.approx(1.0 - 0.65 ** max_len, abs=1e-9)


def test_total_mass_is_one_when_truncation_negligible():
    v = Vocabulary.from_tokens(["a", "b"])
    rng = np.random.default_rng(2)
    table = np.zeros((2, 5, 5))
    for c in range(2):
        for t in (0, 2, 3, 4):
            table[c, t, 1] = 0.95
            table[c, t, 3:] = 0.05 * rng.dirichlet([1, 1])
    m = OracleModel(v, table, [(3,), (4,)], [0.5, 0.5])
    targets = list(enumerate_targets(v, 6))
    for src in m.prompts:
        total = sum(math.exp(sequence_log_prob(m, src, y)) for y in targets)
        assert total == pytest.approx(1.0, abs=1e-6)
    assert sum(oracle_marginal(m, y) for y in targets) == pytest.approx(1.0, abs=1e-6)


def test_sample_deterministic():
    m = synthetic.deterministic_oracle(np.random.default_rng(4))
    rng = np.random.default_rng(0)
    outs = {oracle_sample(m, m.prompts[0], rng, 20) for _ in range(20)}
    assert len(outs) == 1


def test_sample_first_token_frequencies():
    v = Vocabulary.from_tokens(["a", "b"])
    table = np.zeros((1, 5, 5))
    table[0, :, :] = [0.0, 0.1, 0.0, 0.6, 0.3]
    m = OracleModel(v, table)
    rng = np.random.default_rng(5)
    n = 100_000
    first = np.array([oracle_sample(m, (3,), rng, 2)[1] for _ in range(n)])
    for tok, p in [(1, 0.1), (3, 0.6), (4, 0.3)]:
        sigma = math.sqrt(n * p * (1 - p))
        assert abs((first == tok).sum() - n * p) <= 3 * sigma


def test_sample_length_cap(small_oracle):
    rng = np.random.default_rng(0)
    for _ in range(200):
        y = oracle_sample(small_oracle, (3,), rng, 2)
        assert y[0] == 0 and y[-1] == 1 and len(y) - 1 <= 2


def test_oracle_json_round_trip(tmp_path, small_oracle):
    small_oracle.save(tmp_path / "o.json")
    m = OracleModel.load(tmp_path / "o.json")
    assert np.array_equal(m.transitions[:, [0, 2, 3, 4, 5]], small_oracle.transitions[:, [0, 2, 3, 4, 5]])
    assert m.prompts == small_oracle.prompts


def test_oracle_loader_validates(tmp_path, small_oracle):
    d = small_oracle.to_dict()
    d["prompts"][0]["prior"] = 5.0
    with pytest.raises(ValueError):
        OracleModel.from_dict(d)
    d = small_oracle.to_dict()
    del d["classes"]
    with pytest.raises(ValueError):
        OracleModel.from_dict(d)


def test_concurrent_queries_agree(small_oracle):
    src, prefix = small_oracle.prompts[1], (0, 3, 4)
    ref = small_oracle.next_token_distribution(src, prefix)
    results = []

    def work():
        for _ in range(200):
            results.append(small_oracle.next_token_distribution(src, prefix))

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(np.array_equal(r, ref) for r in results)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), length=st.integers(0, 5), src_len=st.integers(1, 4))
def test_distributions_normalised(seed, length, src_len):
    rng = np.random.default_rng(seed)
    m = synthetic.random_oracle(rng, n_words=4, classes=3, unk_mass=0.05)
    src = tuple(int(x) for x in rng.integers(3, len(m.vocab), src_len))
    prefix = (0, *(int(x) for x in rng.integers(3, len(m.vocab), length)))
    d = next_token_distribution(m, src, prefix)
    assert np.all(d >= 0) and abs(d.sum() - 1) <= 1e-6
    assert np.array_equal(d, next_token_distribution(m, src, prefix))


def test_enumerate_targets_count():
    v = Vocabulary.from_tokens(["a", "b"])
    # 3 generatable non-EOS tokens (UNK, a, b); lengths 0..4 before EOS
    assert len(list(enumerate_targets(v, 5))) == sum(3 ** k for k in range(5))
    assert all(len(y) - 1 <= 5 for y in enumerate_targets(v, 5))
    assert len(set(itertools.islice(enumerate_targets(v, 5), None))) == 121
