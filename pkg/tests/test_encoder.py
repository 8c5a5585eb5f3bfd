import json

import numpy as np
import pytest

from sept.encoder import (LEARNABLE, PromptTokens, TextEncoder, Tokenizer,
                          context_prompt, fixed_prompt)
from sept.errors import InputError, ShapeError

from oracles import fd_gradient


def test_tokenize_deterministic():
    tok = Tokenizer(vocab_size=128)
    assert tok.tokenize("dog") == tok.tokenize("dog")


def test_tokenize_lowercasing():
    tok = Tokenizer(vocab_size=128, lowercase=True)
    assert tok.tokenize("Dog") == tok.tokenize("dog")


def test_tokenize_two_words_in_range():
    tok = Tokenizer(vocab_size=128)
    ids = tok.tokenize("dog barking")
    assert len(ids) == 2 and all(0 <= i < 128 for i in ids)


def test_tokenize_empty_rejected():
    tok = Tokenizer()
    for text in ("", "   ", "\t\n"):
        with pytest.raises(InputError):
            tok.tokenize(text)


def test_tokenize_truncates_to_max_len():
    tok = Tokenizer(max_len=4)
    assert len(tok.tokenize("a b c d e f g")) == 4


def test_prompt_tokens_distinct_learnable():
    with pytest.raises(ShapeError):
        PromptTokens(kinds=(LEARNABLE, LEARNABLE), ids=(0, 0))


def test_encode_unit_norm(small_encoder):
    ctx = np.zeros((2, small_encoder.dim))
    prompt = context_prompt(2, small_encoder.tokenize("dog barking"))
    z = small_encoder.encode(prompt, ctx)
    assert abs(np.linalg.norm(z) - 1.0) <= 1e-12


def test_all_fixed_prompt_ignores_context(small_encoder):
    prompt = fixed_prompt(small_encoder.tokenize("dog barking"))
    z1 = small_encoder.encode(prompt, np.zeros((3, small_encoder.dim)))
    z2 = small_encoder.encode(prompt, np.full((3, small_encoder.dim), 7.5))
    assert np.array_equal(z1, z2)


def test_encode_bitwise_deterministic(small_encoder):
    rng = np.random.default_rng(3)
    ctx = rng.normal(0, 0.1, (2, small_encoder.dim))
    prompt = context_prompt(2, small_encoder.tokenize("rain"))
    assert np.array_equal(small_encoder.encode(prompt, ctx),
                          small_encoder.encode(prompt, ctx))


def test_encode_golden_vector(golden_dir):
    enc = TextEncoder(dim=8, hidden=16, vocab_size=512, max_len=16, seed=42)
    z = enc.encode(context_prompt(2, enc.tokenize("a")), np.zeros((2, 8)))
    with open(golden_dir / "encode_seed42.json") as f:
        expected = np.asarray(json.load(f)["vector"])
    assert np.allclose(z, expected, atol=1e-10)


def test_vjp_zero_for_all_fixed(small_encoder):
    prompt = fixed_prompt(small_encoder.tokenize("dog"))
    g = small_encoder.encode_vjp(prompt, np.zeros((2, small_encoder.dim)),
                                 np.ones(small_encoder.dim))
    assert np.array_equal(g, np.zeros((2, small_encoder.dim)))


def test_vjp_zero_upstream(small_encoder):
    rng = np.random.default_rng(0)
    ctx = rng.normal(0, 0.1, (2, small_encoder.dim))
    prompt = context_prompt(2, small_encoder.tokenize("dog"))
    g = small_encoder.encode_vjp(prompt, ctx, np.zeros(small_encoder.dim))
    assert np.array_equal(g, np.zeros_like(ctx))


def test_vjp_linearity(small_encoder):
    rng = np.random.default_rng(1)
    ctx = rng.normal(0, 0.1, (2, small_encoder.dim))
    prompt = context_prompt(2, small_encoder.tokenize("dog barking"))
    u = rng.normal(size=small_encoder.dim)
    w = rng.normal(size=small_encoder.dim)
    a, b = 0.7, -1.3
    lhs = small_encoder.encode_vjp(prompt, ctx, a * u + b * w)
    rhs = a * small_encoder.encode_vjp(prompt, ctx, u) \
        + b * small_encoder.encode_vjp(prompt, ctx, w)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_vjp_matches_finite_differences_bulk():
    enc = TextEncoder(dim=8, hidden=16, vocab_size=256, max_len=16, seed=11)
    rng = np.random.default_rng(5)
    words = ["dog", "rain storm", "quiet piano chord", "siren", "wind"]
    worst = 0.0
    for trial in range(100):
        m = int(rng.integers(1, 4))
        ctx = rng.normal(0, 0.3, (m, 8))
        prompt = context_prompt(m, enc.tokenize(words[trial % len(words)]))
        upstream = rng.normal(size=8)
        analytic = enc.encode_vjp(prompt, ctx, upstream)
        fd = fd_gradient(lambda c: float(upstream @ enc.encode(prompt, c)), ctx)
        rel = np.abs(analytic - fd) / (1.0 + np.abs(analytic))
        worst = max(worst, rel.max())
    assert worst <= 1e-6


def test_vjp_rows_absent_from_prompt_are_zero(small_encoder):
    # context has 4 rows but the prompt only uses rows 0 and 2
    ids = small_encoder.tokenize("dog")
    prompt = PromptTokens(kinds=(LEARNABLE, LEARNABLE) + (0,) * len(ids),
                          ids=(0, 2) + tuple(ids))
    rng = np.random.default_rng(2)
    ctx = rng.normal(0, 0.1, (4, small_encoder.dim))
    g = small_encoder.encode_vjp(prompt, ctx, rng.normal(size=small_encoder.dim))
    assert np.array_equal(g[1], np.zeros(small_encoder.dim))
    assert np.array_equal(g[3], np.zeros(small_encoder.dim))
    assert np.linalg.norm(g[0]) > 0 and np.linalg.norm(g[2]) > 0


def test_weights_frozen(small_encoder):
    with pytest.raises(ValueError):
        small_encoder.table[0, 0] = 1.0
    with pytest.raises(ValueError):
        small_encoder.w1[0, 0] = 1.0


def test_serialization_bitwise_roundtrip(small_encoder, tmp_path):
    path = tmp_path / "enc.json"
    small_encoder.save(path)
    loaded = TextEncoder.load(path)
    assert loaded.weights_hash() == small_encoder.weights_hash()
    rng = np.random.default_rng(4)
    ctx = rng.normal(0, 0.1, (2, small_encoder.dim))
    prompt = context_prompt(2, small_encoder.tokenize("dog barking"))
    assert np.array_equal(small_encoder.encode(prompt, ctx),
                          loaded.encode(prompt, ctx))


def test_same_seed_same_weights():
    a = TextEncoder(dim=8, hidden=16, seed=3)
    b = TextEncoder(dim=8, hidden=16, seed=3)
    assert a.weights_hash() == b.weights_hash()
    assert a.weights_hash() != TextEncoder(dim=8, hidden=16, seed=4).weights_hash()


def test_prompt_too_long_rejected(small_encoder):
    with pytest.raises(ShapeError):
        small_encoder.encode(fixed_prompt([0] * (small_encoder.max_len + 1)))
