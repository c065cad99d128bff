"""
Word-level vocabulary and text-to-text encoding.
"""

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

from app.core.exceptions import DataError
from app.utils.hashing import sha256_text
from app.utils.io import write_text

PAD, EOS, UNK = "<pad>", "</s>", "<unk>"
SPECIAL_TOKENS = (PAD, EOS, UNK)
PAD_ID, EOS_ID, UNK_ID = 0, 1, 2

TASK_PREFIX = "classification: "
PREFIX_TOKENS = tuple(TASK_PREFIX.split())
LABEL_TOKENS = ("0", "1")
MANDATORY_TOKENS = PREFIX_TOKENS + LABEL_TOKENS
RESERVED_TOKENS = SPECIAL_TOKENS + MANDATORY_TOKENS

# Decoder start position reuses the pad id
DECODER_START_ID = PAD_ID


@dataclass(frozen=True)
class TokenSequence:
    """Token ids of one sequence."""

    ids: Tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token <-> id mapping; position in ``tokens`` is the id."""

    tokens: Tuple[str, ...]
    token_to_id: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tokens[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise DataError(f"vocabulary must start with {RESERVED_TOKENS}")
        mapping = {tok: i for i, tok in enumerate(self.tokens)}
        if len(mapping) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def id_to_token(self) -> Dict[int, str]:
        return dict(enumerate(self.tokens))

    @property
    def specials(self) -> Dict[str, int]:
        return {PAD: PAD_ID, EOS: EOS_ID, UNK: UNK_ID}

    @property
    def digest(self) -> str:
        return sha256_text("\n".join(self.tokens))

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


def build_vocab(texts: Iterable[str], max_size: int) -> Vocabulary:
    """
    Build a vocabulary from cleaned texts.

    Words are ranked by frequency, ties broken lexicographically, and cut so
    the vocabulary holds at most ``max_size`` tokens including the reserved ones.

    Raises:
        DataError: If max_size cannot hold the reserved tokens
    """
    if max_size < len(RESERVED_TOKENS):
        raise DataError(f"max_size {max_size} is below the {len(RESERVED_TOKENS)} reserved tokens")

    counts = Counter(tok for text in texts for tok in text.split())
    for tok in RESERVED_TOKENS:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    room = max_size - len(RESERVED_TOKENS)
    return Vocabulary(RESERVED_TOKENS + tuple(tok for tok, _ in ranked[:room]))


def save_vocab(vocab: Vocabulary, path: Union[str, Path]) -> Path:
    """One token per line, UTF-8; line position is the id."""
    return write_text(path, "".join(tok + "\n" for tok in vocab.tokens))


def load_vocab(path: Union[str, Path]) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().split("\n")
    if tokens and tokens[-1] == "":
        tokens.pop()
    return Vocabulary(tuple(tokens))


def encode_source(text: str, vocab: Vocabulary, max_len: int = 64) -> TokenSequence:
    """
    Encode ``classification: <text> </s>``.

    Text tokens past ``max_len`` (prefix and EOS included) are dropped from the tail.
    """
    room = max_len - len(PREFIX_TOKENS) - 1
    if room < 0:
        raise DataError(f"max_len {max_len} cannot hold the task prefix and EOS")
    words = text.split()[:room]
    ids = [vocab.id_of(tok) for tok in PREFIX_TOKENS]
    ids.extend(vocab.id_of(tok) for tok in words)
    ids.append(EOS_ID)
    return TokenSequence(tuple(ids))


def encode_target(label: int, vocab: Optional[Vocabulary] = None) -> TokenSequence:
    """
    Encode a binary label as its digit string followed by EOS.

    Raises:
        DataError: If the label is not 0 or 1
    """
    if isinstance(label, bool) or label not in (0, 1):
        raise DataError(f"target label must be 0 or 1, got {label!r}")
    token = LABEL_TOKENS[label]
    token_id = (vocab or _RESERVED_VOCAB).token_to_id[token]
    return TokenSequence((token_id, EOS_ID))


def decode(ids: Union[TokenSequence, Sequence[int]], vocab: Vocabulary) -> str:
    """
    Join tokens with single spaces, stopping at the first EOS and skipping PAD.

    Raises:
        DataError: If an id is outside the vocabulary
    """
    if isinstance(ids, TokenSequence):
        ids = ids.ids
    words = []
    for token_id in ids:
        token_id = int(token_id)
        if not 0 <= token_id < len(vocab):
            raise DataError(f"token id {token_id} outside vocabulary of size {len(vocab)}")
        if token_id == EOS_ID:
            break
        if token_id == PAD_ID:
            continue
        words.append(vocab.tokens[token_id])
    return " ".join(words)


@dataclass(frozen=True)
class EncodedExample:
    """Teacher-forcing triple for one paragraph."""

    par_id: str
    src: TokenSequence
    tgt_in: TokenSequence
    targets: TokenSequence


def encode_example(
    par_id: str,
    text: str,
    label: int,
    vocab: Vocabulary,
    max_len: int = 64,
) -> EncodedExample:
    """Source ids, decoder input shifted right from the start position, and targets."""
    targets = encode_target(label, vocab)
    tgt_in = TokenSequence((DECODER_START_ID,) + targets.ids[:-1])
    return EncodedExample(par_id, encode_source(text, vocab, max_len), tgt_in, targets)


_RESERVED_VOCAB = Vocabulary(RESERVED_TOKENS)
