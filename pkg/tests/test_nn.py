import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glimpsekit import nn
from glimpsekit.core import Vocabulary, next_token_distribution
from glimpsekit.glimpse import GlimpseExample
from glimpsekit.nn import (AttentionMemory, DecoderState, ModelConfig, NeuralSeq2Seq, attention, decode_step,
                           encode, init_params, loss_and_gradients)


def _cfg(**kw):
    base = dict(vocab_size=9, embed_dim=4, hidden_dim=5)
    base.update(kw)
    return ModelConfig(**base)


def _random_examples(rng, V, n=3, max_src=5, max_dec=5):
    out = []
    for _ in range(n):
        s = rng.integers(0, V, rng.integers(1, max_src + 1))
        T = rng.integers(1, max_dec + 1)
        out.append(GlimpseExample(tuple(int(x) for x in s), tuple(int(x) for x in rng.integers(0, V, T)),
                                  tuple(int(x) for x in rng.integers(0, V, T))))
    return out


def finite_difference_check(params, cfg, examples, coords, eps=1e-4, floor=1e-7):
    """Largest relative error between analytic and central-difference gradients."""
    _, grads = loss_and_gradients(params, cfg, examples)
    worst = 0.0
    for name, idx in coords:
        p = {k: v.copy() for k, v in params.items()}
        p[name][idx] += eps
        up, _ = loss_and_gradients(p, cfg, examples)
        p[name][idx] -= 2 * eps
        down, _ = loss_and_gradients(p, cfg, examples)
        num = (np.longdouble(up) - np.longdouble(down)) / (2 * eps)
        ana = grads[name][idx]
        worst = max(worst, float(abs(ana - num) / max(abs(ana), abs(num), floor)))
    return worst


def random_coords(params, rng, n):
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    flat = rng.choice(sizes.sum(), size=n, replace=False)
    bounds = np.cumsum(sizes)
    out = []
    for f in flat:
        j = int(np.searchsorted(bounds, f, side="right"))
        local = int(f - (bounds[j - 1] if j else 0))
        out.append((names[j], np.unravel_index(local, params[names[j]].shape)))
    return out


def test_encode_single_row():
    p = init_params(_cfg(), seed=0)
    mem, state = encode(p, [3])
    assert mem.rows.shape == (1, 5)
    assert len(state.h) == 1


def test_encode_zero_params_rows_equal():
    p = {k: np.zeros_like(v) for k, v in init_params(_cfg(), seed=0).items()}
    mem, _ = encode(p, [3, 4, 5, 6])
    assert np.all(mem.rows == mem.rows[0])


def test_encode_random_params_finite():
    p = init_params(_cfg(), seed=1, scale=1.0)
    mem, state = encode(p, [1, 2, 3, 4, 5])
    assert mem.rows.shape[0] == 5
    assert np.all(np.isfinite(mem.rows)) and all(np.all(np.isfinite(h)) for h in state.h)


def test_encode_without_carry_starts_at_zero():
    p = init_params(_cfg(), seed=1)
    _, state = encode(p, [3, 4], carry_encoder_state=False)
    assert all(np.all(h == 0) for h in state.h)


def test_attention_single_row_is_identity():
    p = init_params(_cfg(), seed=2)
    row = np.arange(5.0)
    ctx, w = attention(DecoderState((np.ones(5),), (np.zeros(5),)), AttentionMemory(row[None], (0,)), p)
    assert np.array_equal(ctx, row) and w.tolist() == [1.0]


def test_attention_identical_rows():
    p = init_params(_cfg(), seed=2)
    row = np.linspace(-1, 1, 5)
    ctx, _ = attention(DecoderState((np.ones(5),), (np.zeros(5),)), AttentionMemory(np.stack([row, row]), (0, 0)), p)
    assert np.allclose(ctx, row, atol=1e-15)


def test_attention_matches_rederived_softmax():
    p = init_params(_cfg(), seed=3, scale=1.0)
    rng = np.random.default_rng(0)
    mem = rng.normal(size=(4, 5))
    q = rng.normal(size=5)
    ctx, w = attention(DecoderState((q,), (np.zeros(5),)), AttentionMemory(mem, (0,) * 4), p)
    scores = [sum(p["att.v"][a] * math.tanh(sum(p["att.Wq"][a, b] * q[b] + p["att.Um"][a, b] * mem[j, b]
                                                   for b in range(5))) for a in range(5)) for j in range(4)]
    z = [math.exp(s) for s in scores]
    ref = [x / sum(z) for x in z]
    assert np.allclose(w, ref, atol=1e-10, rtol=0)
    assert np.allclose(ctx, np.array(ref) @ mem, atol=1e-10, rtol=0)
    assert abs(w.sum() - 1) < 1e-12 and np.all(w >= 0)


def test_decode_step_normalised_and_advances():
    p = init_params(_cfg(), seed=4, scale=1.0)
    mem, state = encode(p, [3, 4, 5])
    probs, new = decode_step(p, state, 0, mem)
    assert abs(probs.sum() - 1) < 1e-6 and new.i == state.i + 1


def test_zero_output_projection_is_uniform():
    p = init_params(_cfg(), seed=4, scale=1.0)
    p["out.W"][:] = 0.0
    p["out.b"][:] = 0.0
    mem, state = encode(p, [3, 4])
    probs, _ = decode_step(p, state, 0, mem)
    assert np.all(probs == 1.0 / 9)


@pytest.mark.parametrize("attn", nn.ATTENTION_MODES)
@pytest.mark.parametrize("glimpse_k", [None, 1, 3])
@pytest.mark.parametrize("layers", [1, 2])
def test_stepwise_equals_batched_log_prob(attn, glimpse_k, layers):
    vocab = Vocabulary.from_tokens([f"w{i}" for i in range(6)])
    cfg = ModelConfig(len(vocab), 6, 7, layers, attn)
    p = init_params(cfg, seed=5, scale=0.5)
    model = NeuralSeq2Seq(p, cfg, vocab, glimpse_k)
    rng = np.random.default_rng(1)
    for _ in range(5):
        src = tuple(int(x) for x in rng.integers(3, 9, rng.integers(1, 5)))
        tgt = (0, *(int(x) for x in rng.integers(3, 9, rng.integers(0, 8))), 1)
        stepwise = sum(math.log(next_token_distribution(model, src, tgt[:i])[tgt[i]]) for i in range(1, len(tgt)))
        assert model.sequence_log_prob(src, tgt) == pytest.approx(stepwise, abs=1e-8)


def test_target_attention_matches_source_only_before_two_tokens():
    vocab = Vocabulary.from_tokens([f"w{i}" for i in range(5)])
    p = init_params(ModelConfig(len(vocab), 4, 5), seed=6, scale=0.5)
    a = NeuralSeq2Seq(p, ModelConfig(len(vocab), 4, 5, attention="source_only"), vocab)
    b = NeuralSeq2Seq(p, ModelConfig(len(vocab), 4, 5, attention="source_and_target"), vocab)
    src = (3, 4, 5)
    assert np.array_equal(a.next_token_distribution(src, (0,)), b.next_token_distribution(src, (0,)))
    assert not np.allclose(a.next_token_distribution(src, (0, 3, 4)), b.next_token_distribution(src, (0, 3, 4)))


def test_adapter_normalised_over_random_inputs():
    vocab = Vocabulary.from_tokens([f"w{i}" for i in range(17)])
    assert len(vocab) == 20
    cfg = ModelConfig(20, 8, 12)
    model = NeuralSeq2Seq(init_params(cfg, seed=7, scale=0.3), cfg, vocab)
    rng = np.random.default_rng(2)
    for _ in range(100):
        src = tuple(int(x) for x in rng.integers(3, 20, rng.integers(1, 6)))
        prefix = (0, *(int(x) for x in rng.integers(3, 20, rng.integers(0, 6))))
        d = next_token_distribution(model, src, prefix)
        assert abs(d.sum() - 1.0) <= 1e-6 and np.all(d >= 0)


def test_loss_zero_when_outputs_certain():
    cfg = _cfg()
    p = init_params(cfg, seed=0)
    p["out.W"][:] = 0.0
    p["out.b"][:] = 0.0
    p["out.b"][3] = 60.0
    ex = [GlimpseExample((4, 5), (0, 3, 3), (3, 3, 3)), GlimpseExample((6,), (0,), (3,))]
    loss, grads = loss_and_gradients(p, cfg, ex)
    assert loss == pytest.approx(0.0, abs=1e-20)
    assert max(np.abs(g).max() for g in grads.values()) < 1e-20


def test_duplicate_example_keeps_mean_loss():
    cfg = _cfg()
    p = init_params(cfg, seed=1, scale=0.5)
    ex = _random_examples(np.random.default_rng(0), 9, n=1)
    a, _ = loss_and_gradients(p, cfg, ex)
    b, _ = loss_and_gradients(p, cfg, ex * 2)
    assert a == pytest.approx(b, abs=1e-14)


@pytest.mark.parametrize("attn", nn.ATTENTION_MODES)
@pytest.mark.parametrize("carry", [True, False])
def test_gradients_match_finite_differences(attn, carry):
    cfg = ModelConfig(vocab_size=7, embed_dim=4, hidden_dim=5, num_layers=2, attention=attn,
                      carry_encoder_state=carry)
    p = init_params(cfg, seed=11, scale=0.5)
    assert nn.param_count(p) <= 2000
    rng = np.random.default_rng(3)
    ex = _random_examples(rng, 7)
    assert finite_difference_check(p, cfg, ex, random_coords(p, rng, 60)) <= 1e-4


def test_sgd_analytic_step():
    w = {"w": np.array(1.0)}
    assert float(nn.sgd_step(w, {"w": 2 * w["w"]}, 0.1)["w"]) == pytest.approx(0.8, abs=1e-15)


def test_zero_gradient_or_rate_leaves_params():
    p = init_params(_cfg(), seed=0)
    zeros = {k: np.zeros_like(v) for k, v in p.items()}
    ones = {k: np.ones_like(v) for k, v in p.items()}
    for new in (nn.sgd_step(p, zeros, 0.1), nn.sgd_step(p, ones, 0.0),
                nn.adam_step(p, zeros, nn.adam_init(p))[0],
                nn.adam_step(p, ones, nn.adam_init(p), nn.AdamHyper(lr=0.0))[0]):
        assert all(np.array_equal(new[k], p[k]) for k in p)


def test_updates_do_not_mutate_inputs():
    p = init_params(_cfg(), seed=0)
    before = {k: v.copy() for k, v in p.items()}
    g = {k: np.ones_like(v) for k, v in p.items()}
    nn.sgd_step(p, g, 0.5)
    nn.adam_step(p, g, nn.adam_init(p))
    assert all(np.array_equal(before[k], p[k]) for k in p)


def test_nonfinite_update_raises():
    p = {"w": np.array([1.0])}
    with pytest.raises(nn.NonFinite):
        nn.sgd_step(p, {"w": np.array([np.inf])}, 1.0)


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    p = init_params(_cfg(num_layers=2), seed=9, dtype=np.float32)
    nn.save_checkpoint(tmp_path / "c.glmp", p)
    q = nn.load_checkpoint(tmp_path / "c.glmp")
    assert list(q) == list(p)
    for k in p:
        assert q[k].dtype == np.float32 and q[k].tobytes() == p[k].tobytes()
    assert (tmp_path / "c.glmp").read_bytes()[:5] == b"GLMP\x01"


def test_checkpoint_layout(tmp_path):
    nn.save_checkpoint(tmp_path / "c.glmp", {"ab": np.array([[1.5, -2.0]], np.float32)})
    raw = (tmp_path / "c.glmp").read_bytes()
    expected = (b"GLMP" + bytes([1]) + (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"ab"
                + (2).to_bytes(4, "little") + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                + np.array([1.5, -2.0], "<f4").tobytes())
    assert raw == expected


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE\x01")
    with pytest.raises(ValueError):
        nn.load_checkpoint(tmp_path / "x")


def test_params_shapes_validated():
    cfg = _cfg()
    p = init_params(cfg)
    p["out.b"] = np.zeros(3)
    with pytest.raises(nn.DimensionMismatch):
        nn.check_params(p, cfg)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), attn=st.sampled_from(nn.ATTENTION_MODES), prefix_len=st.integers(0, 6))
def test_decode_step_always_normalised(seed, attn, prefix_len):
    rng = np.random.default_rng(seed)
    vocab = Vocabulary.from_tokens([f"w{i}" for i in range(5)])
    cfg = ModelConfig(len(vocab), 4, 6, attention=attn)
    model = NeuralSeq2Seq(init_params(cfg, seed=seed, scale=2.0), cfg, vocab, glimpse_k=int(rng.integers(1, 4)))
    src = tuple(int(x) for x in rng.integers(3, 8, rng.integers(1, 4)))
    prefix = (0, *(int(x) for x in rng.integers(3, 8, prefix_len)))
    d = model.next_token_distribution(src, prefix)
    assert abs(d.sum() - 1) <= 1e-6 and np.all(d >= 0)
