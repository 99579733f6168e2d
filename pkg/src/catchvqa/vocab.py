"""Closed 64-symbol vocabulary shared by data, model and metrics."""

PAD = "<pad>"
END = "<end>"

_WORDS = [
    PAD, END,
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "how", "many", "bright", "dim", "blobs", "?",
    "is", "there", "an", "anomaly", "any", "shape", "irregular",
    "what", "the", "sum", "total", "+", "=",
    "which", "bar", "tallest", "shortest",
    "first", "second", "third", "fourth", "fifth",
    "yes", "no",
]

TOKENS = _WORDS + [f"<r{i}>" for i in range(64 - len(_WORDS))]
assert len(TOKENS) == 64 and len(set(TOKENS)) == 64

TOKEN_TO_ID = {t: i for i, t in enumerate(TOKENS)}
PAD_ID = TOKEN_TO_ID[PAD]
END_ID = TOKEN_TO_ID[END]
VOCAB_SIZE = len(TOKENS)

ORDINALS = ["first", "second", "third", "fourth", "fifth"]


def encode(words):
    if isinstance(words, str):
        words = words.split()
    return [TOKEN_TO_ID[w] for w in words]


def decode(ids):
    return [TOKENS[i] for i in ids]


def strip_end(ids):
    """Tokens before the first END (END itself excluded)."""
    out = []
    for i in ids:
        if i == END_ID:
            break
        out.append(int(i))
    return out
