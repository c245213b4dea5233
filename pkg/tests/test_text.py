import numpy as np
import pytest

from promptrestore.text import (PAD, PromptEncoder, TextEncoderConfig, Vocab,
                                split_tokens, tokenize)


def test_vocab_sorted_deterministic():
    a, b = Vocab(), Vocab()
    assert a.tokens == b.tokens == sorted(a.tokens)
    assert PAD in a.index and "<unk>" in a.index


def test_vocab_round_trip_serialization():
    v = Vocab()
    w = Vocab.deserialize(v.serialize())
    assert v.tokens == w.tokens
    assert v.content_hash() == w.content_hash()


def test_tokenize_example_prompt():
    v = Vocab()
    ids = tokenize("Remove rain, lowlight.", v, 8)
    words = [v.tokens[i] for i in ids]
    assert words[:5] == ["remove", "rain", ",", "lowlight", "."]
    assert words[5:] == [PAD] * 3


def test_tokenize_empty_is_all_pad():
    v = Vocab()
    ids = tokenize("", v, 6)
    assert (ids == v.pad_id).all()


def test_tokenize_deterministic():
    v = Vocab()
    a = tokenize("Remove haze.", v, 10)
    b = tokenize("Remove haze.", v, 10)
    np.testing.assert_array_equal(a, b)


def test_tokenize_unknown_word_maps_to_unk():
    v = Vocab()
    ids = tokenize("Remove gremlins.", v, 5)
    assert ids[1] == v.unk_id


def test_tokenize_truncates_with_warning():
    v = Vocab()
    with pytest.warns(UserWarning, match="truncated"):
        ids = tokenize("remove " * 30, v, 10)
    assert len(ids) == 10


def test_split_keeps_punctuation_tokens():
    assert split_tokens("There are rain, snow in the image.") == \
        ["there", "are", "rain", ",", "snow", "in", "the", "image", "."]


def make_encoder(c=48, length=20, seed=0):
    v = Vocab()
    cfg = TextEncoderConfig(vocab_size=len(v), length=length)
    return v, PromptEncoder(cfg, c, np.random.default_rng(seed))


def test_encoder_output_shapes_match_channel_ladder():
    v, enc = make_encoder(c=48)
    ids = tokenize("Remove blur.", v, 20)
    wide, mid = enc(ids)
    assert wide.shape == (20, 384)
    assert mid.shape == (20, 192)


def test_encoder_deterministic_for_all_pad():
    v, enc = make_encoder(c=16)
    ids = tokenize("", v, 20)
    a = enc(ids)[0].data
    b = enc(ids)[0].data
    np.testing.assert_array_equal(a, b)


def test_encoder_distinguishes_prompts():
    # one-token difference must change the encoding even before training
    v, enc = make_encoder(c=16)
    a = enc(tokenize("Remove rain.", v, 20))[0].data
    b = enc(tokenize("Remove snow.", v, 20))[0].data
    assert np.abs(a - b).max() > 1e-6


def test_encoder_rejects_bad_length():
    v, enc = make_encoder(c=16)
    with pytest.raises(ValueError):
        enc(np.zeros(7, dtype=np.int64))


def test_encoder_rejects_out_of_range_id():
    v, enc = make_encoder(c=16)
    ids = np.full(20, len(v), dtype=np.int64)
    with pytest.raises(IndexError):
        enc(ids)
