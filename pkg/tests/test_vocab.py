import pytest

from hiercap.vocab import (
    END_ID,
    PAD_ID,
    RESERVED,
    START_ID,
    UNK_ID,
    Vocabulary,
)


def _vocab(extra=("a", "pond")):
    return Vocabulary(list(RESERVED) + list(extra))


def test_reserved_ids_are_stable():
    vocab = _vocab()
    assert vocab.words[START_ID] == "<start>"
    assert vocab.words[END_ID] == "<end>"
    assert vocab.words[PAD_ID] == "<pad>"
    assert vocab.words[UNK_ID] == "<unk>"


def test_encode_decode_roundtrip():
    vocab = _vocab()
    ids = vocab.encode(["a", "pond"])
    assert vocab.decode(ids) == ["a", "pond"]


def test_unknown_words_map_to_unk():
    vocab = _vocab()
    assert vocab.encode(["mystery"]) == [UNK_ID]


def test_rejects_missing_reserved_prefix():
    with pytest.raises(ValueError):
        Vocabulary(["a", "pond"])


def test_rejects_duplicates():
    with pytest.raises(ValueError):
        Vocabulary(list(RESERVED) + ["a", "a"])


def test_len_and_equality():
    assert len(_vocab()) == 6
    assert _vocab() == _vocab()
    assert _vocab() != _vocab(extra=("a", "road"))
