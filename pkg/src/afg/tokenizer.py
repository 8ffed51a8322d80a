"""Character-level tokenizer with a reserved block for pad/eos/sep/unk.

Keeps the whole stack free of external vocabulary files: every string maps to
lowercase characters from a fixed charset, unknown characters to <unk>.
"""

from __future__ import annotations

import numpy as np

PAD, EOS, SEP, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<eos>", "<sep>", "<unk>")

DEFAULT_CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789 .,?!'-"


class CharTokenizer:
    def __init__(self, charset: str = DEFAULT_CHARSET, lowercase: bool = True):
        if len(set(charset)) != len(charset):
            raise ValueError("charset has duplicate characters")
        self.charset = charset
        self.lowercase = lowercase
        self._to_id = {ch: i + len(RESERVED) for i, ch in enumerate(charset)}
        self._to_char = {i: ch for ch, i in self._to_id.items()}

    @property
    def vocab_size(self) -> int:
        return len(RESERVED) + len(self.charset)

    def encode(self, text: str) -> np.ndarray:
        if self.lowercase:
            text = text.lower()
        return np.array([self._to_id.get(ch, UNK) for ch in text], dtype=np.int64)

    def decode(self, ids, strip_reserved: bool = True) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i < len(RESERVED):
                if not strip_reserved:
                    out.append(RESERVED[i])
                continue
            out.append(self._to_char.get(i, ""))
        return "".join(out)
