import numpy as np
import pytest

from diffocr.vocab import DEFAULT_CHARSET, build_vocab, decode_text, encode


def test_build_vocab_english_charset():
    v = build_vocab(DEFAULT_CHARSET)
    assert v.n_chars == 36
    assert v.eos_id == 36
    assert v.mask_id == 37
    assert v.total_internal == 38
    assert v.n_classes == 37  # chars + EOS, never MASK


def test_build_vocab_tiny():
    v = build_vocab("ab")
    assert (v.n_chars, v.eos_id, v.mask_id) == (2, 2, 3)


def test_build_vocab_rejects_duplicates():
    with pytest.raises(ValueError, match="'a'"):
        build_vocab("aba")
    with pytest.raises(ValueError):
        build_vocab("")


def test_encode_pads_with_eos():
    v = build_vocab("ab")
    np.testing.assert_array_equal(encode("ab", v, 4), [0, 1, 2, 2])
    np.testing.assert_array_equal(encode("", v, 3), [2, 2, 2])


def test_encode_rejects_unknown_and_too_long():
    v = build_vocab("ab")
    with pytest.raises(ValueError, match="'c'"):
        encode("abc", v, 8)
    with pytest.raises(ValueError):
        encode("abab", v, 4)  # needs strict room for EOS


def test_encode_lowercases():
    v = build_vocab(DEFAULT_CHARSET)
    np.testing.assert_array_equal(encode("AbC", v, 5), encode("abc", v, 5))


def test_decode_first_eos_rule():
    v = build_vocab("ab")
    assert decode_text(np.array([0, 1, 2, 0]), v) == "ab"
    assert decode_text(np.array([2, 0, 1, 2]), v) == ""
    assert decode_text(np.array([0, 1, 0, 1]), v) == "abab"  # no EOS -> all L chars


def test_decode_rejects_mask():
    v = build_vocab("ab")
    with pytest.raises(ValueError, match="unfinished"):
        decode_text(np.array([0, 1, 3, 2]), v)


def test_round_trip_random_texts():
    v = build_vocab(DEFAULT_CHARSET)
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(0, 24))
        text = "".join(rng.choice(list(DEFAULT_CHARSET), size=n))
        out = decode_text(encode(text, v, 25), v)
        assert out == text
        assert "$" not in out
