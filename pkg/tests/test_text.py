import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxfusion import tensor as T
from ctxfusion.nn import init_params
from ctxfusion.text import (
    CLS,
    PAD,
    SEP,
    SPECIALS,
    UNK,
    TextEncoder,
    Vocabulary,
    build_vocab,
    detokenize,
    preset,
    stack,
    tokenize_fixed,
    word_tokens,
)


def encoder(cfg, seed=0):
    params = init_params(TextEncoder.shapes(cfg), np.random.default_rng(seed))
    return TextEncoder(cfg, params), params


def test_vocab_frequency_order():
    assert build_vocab("a a b", 6).tokens == list(SPECIALS) + ["a", "b"]
    v = build_vocab("Great food. Great!", 10)
    assert v.id("great") < v.id("food")
    assert build_vocab("x x y", 5).tokens == list(SPECIALS) + ["x"]


def test_vocab_ties_break_lexicographically():
    assert build_vocab("b a c", 6).tokens[4:] == ["a", "b"]


def test_vocab_errors(tmp_path):
    with pytest.raises(ValueError):
        build_vocab("", 10)
    with pytest.raises(ValueError):
        build_vocab("a", 4)
    with pytest.raises(ValueError):
        Vocabulary(["a", "b"])


def test_vocab_round_trips_through_file(tmp_path):
    v = build_vocab("the cat sat on the mat .", 20)
    v.save(tmp_path / "vocab.txt")
    assert Vocabulary.load(tmp_path / "vocab.txt").tokens == v.tokens


def test_empty_text():
    seq = tokenize_fixed(build_vocab("a", 5), "", 4)
    assert seq.ids.tolist() == [CLS, SEP, PAD, PAD] and seq.n_tokens == 2


def test_truncation_keeps_real_token_last():
    v = build_vocab("w", 5)
    seq = tokenize_fixed(v, "w " * 1000, 512)
    assert seq.n_tokens == 512 and seq.ids[-1] == v.id("w")


def test_unknown_words_map_to_unk():
    v = Vocabulary(list(SPECIALS) + ["good"])
    assert tokenize_fixed(v, "good food", 6).ids.tolist() == [CLS, v.id("good"), UNK, SEP, PAD, PAD]


def test_punctuation_tokens():
    assert word_tokens("Great food. Great!") == ["great", "food", ".", "great", "!"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["alpha", "beta", "gamma", "delta", ",", "."]), max_size=30))
def test_detokenize_round_trip(words):
    v = Vocabulary(list(SPECIALS) + ["alpha", "beta", "gamma", "delta", ",", "."])
    seq = tokenize_fixed(v, " ".join(words), len(words) + 2)
    assert detokenize(v, seq) == words


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 40), st.integers(2, 20))
def test_n_tokens_monotone_then_flat(n, len_max):
    v = build_vocab("w", 5)
    counts = [tokenize_fixed(v, "w " * k, len_max).n_tokens for k in range(n + 1)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] == min(n + 2, len_max)


def test_encode_shape_and_pooler():
    cfg = preset("micro", vocab_size=20)
    enc, params = encoder(cfg)
    ids = np.random.default_rng(0).integers(0, 20, (3, cfg.len_max))
    states = enc.encode(ids, np.ones_like(ids))
    assert states.shape == (3, cfg.len_max, cfg.d_model)
    pooled = enc.pooler_output(states)
    assert pooled.shape == (3, cfg.d_model) and np.all(np.abs(pooled.data) < 1)
    params["encoder.pooler.W"].data[...] = 0.0
    assert np.all(enc.pooler_output(states).data == 0.0)


def test_encode_rejects_bad_ids():
    cfg = preset("micro", vocab_size=20)
    enc, _ = encoder(cfg)
    with pytest.raises(IndexError):
        enc.encode(np.full((1, cfg.len_max), 20), np.ones((1, cfg.len_max)))
    with pytest.raises(T.ShapeError):
        enc.encode(np.zeros((1, cfg.len_max + 1), int), np.ones((1, cfg.len_max + 1)))


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        preset("micro", n_heads=3)
    with pytest.raises(ValueError):
        preset("huge")
    assert preset("paper-base").vocab_size == 30522


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 11), st.integers(0, 2**31))
def test_pad_region_does_not_touch_real_states(n_real, seed):
    rng = np.random.default_rng(seed)
    cfg = preset("micro", vocab_size=30)
    enc, _ = encoder(cfg, seed % 7)
    ids = rng.integers(4, 30, (2, cfg.len_max))
    ids[1, :n_real] = ids[0, :n_real]
    mask = np.zeros((2, cfg.len_max), np.uint8)
    mask[:, :n_real] = 1
    ids[0, n_real:] = PAD
    states = enc.encode(ids, mask).data
    np.testing.assert_allclose(states[0, :n_real], states[1, :n_real], atol=1e-9)


def test_trimmed_width_matches_full():
    cfg = preset("micro", vocab_size=30)
    enc, _ = encoder(cfg)
    seqs = stack([tokenize_fixed(build_vocab("a b c", 7), t, cfg.len_max) for t in ("a b", "c a b c")])
    full = enc.encode(seqs.ids, seqs.mask).data
    short = enc.encode(seqs.ids[:, :6], seqs.mask[:, :6]).data
    np.testing.assert_allclose(short, full[:, :6], atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_encode_gradients_when_unfrozen(seed):
    rng = np.random.default_rng(seed)
    cfg = preset("micro", vocab_size=15, frozen=False)
    enc, params = encoder(cfg, seed)
    for p in params.values():
        p.data += rng.normal(0, 0.2, p.shape)
    ids = rng.integers(0, 15, (2, cfg.len_max))
    mask = np.ones_like(ids)
    mask[0, 8:] = 0
    f = lambda _: T.sum(T.tanh(enc.pooler_output(enc.encode(ids, mask))))  # noqa: E731
    for name, p in params.items():
        coords = rng.choice(p.size, min(p.size, 4), replace=False)
        assert T.grad_check(f, p, coords=coords) < 1e-4, name
