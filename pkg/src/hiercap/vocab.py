"""Bidirectional word/index mapping with reserved control tokens."""

from __future__ import annotations

START = "<start>"
END = "<end>"
PAD = "<pad>"
UNK = "<unk>"
RESERVED = (START, END, PAD, UNK)

START_ID, END_ID, PAD_ID, UNK_ID = 0, 1, 2, 3


class Vocabulary:
    def __init__(self, words: list[str]):
        """``words`` is the full index->word list, reserved tokens first."""
        if list(words[:4]) != list(RESERVED):
            raise ValueError(f"vocabulary must start with {RESERVED}")
        if len(set(words)) != len(words):
            raise ValueError("vocabulary contains duplicate words")
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.words[i] for i in ids]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words
