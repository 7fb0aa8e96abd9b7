"""
Corpus loading and batching. Raw text is tokenized byte by byte
(vocabulary 256). Pre-tokenized corpora use the binary format

    b"ESTK1" | u32 vocab | u64 count | count * u16 token ids

with every integer little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from typeguard import typechecked

from est_engine.exceptions import CorpusError
from est_engine.sampler import STREAM_EVAL, SamplerSeed

MAGIC = b"ESTK1"
HEADER = struct.Struct("<5sIQ")
BYTE_VOCAB = 256
TOKEN_DTYPE = np.dtype("<u2")


def tokenize_text(text: str) -> np.ndarray:
    """UTF-8 bytes of `text` as token ids."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)


def decode_tokens(tokens: np.ndarray) -> str:
    """Byte tokens back to text. Invalid UTF-8 is replaced."""
    return bytes(np.asarray(tokens, dtype=np.uint8)).decode("utf-8", errors="replace")


def _check_range(name: str, tokens: np.ndarray, vocab: int) -> None:
    bad = np.flatnonzero(tokens >= vocab)
    if bad.size:
        position = int(bad[0])
        raise CorpusError(
            name,
            f"token id {int(tokens[position])} at position {position} "
            f"is >= vocab {vocab}",
        )


def _is_utf8(raw: bytes) -> bool:
    try:
        raw.decode("utf-8")
    except UnicodeDecodeError:
        return False
    return True


def _is_token_file(raw: bytes) -> bool:
    """
    Whether `raw` is in the binary format. Text that merely starts with the
    magic bytes is still text: the header must agree with the payload
    length, or the bytes must not decode as UTF-8.
    """
    if not raw.startswith(MAGIC):
        return False
    if len(raw) >= HEADER.size:
        _, _, count = HEADER.unpack_from(raw)
        if len(raw) == HEADER.size + count * TOKEN_DTYPE.itemsize:
            return True
    return not _is_utf8(raw)


def _parse_token_file(name: str, raw: bytes) -> np.ndarray:
    if len(raw) < HEADER.size:
        raise CorpusError(name, "truncated token file header")
    _, file_vocab, count = HEADER.unpack_from(raw)
    expected = HEADER.size + count * TOKEN_DTYPE.itemsize
    if len(raw) != expected:
        raise CorpusError(
            name,
            f"token file declares {count} tokens but holds "
            f"{len(raw) - HEADER.size} payload bytes",
        )
    tokens = np.frombuffer(raw, dtype=TOKEN_DTYPE, offset=HEADER.size).astype(np.int64)
    _check_range(name, tokens, file_vocab)
    return tokens


@typechecked
def load_corpus(
    path: str | Path, vocab: int = BYTE_VOCAB, min_tokens: int = 1
) -> np.ndarray:
    """
    Load a corpus as a 1-D array of token ids.

    Args:
        path: Raw UTF-8 text or a binary token file.
        vocab: Model vocabulary; every id must be below it.
        min_tokens: Fewest tokens accepted, normally `seq_len + 1`.

    Raises:
        CorpusError: If the file is unreadable, not valid UTF-8, too
            short, or holds an id outside the vocabulary.

    Example:
        >>> load_corpus("ab.txt")  # containing "ab"
        array([97, 98])
    """
    path = Path(path)
    name = str(path)
    try:
        raw = path.read_bytes()
    except OSError as ex:
        raise CorpusError(name, f"cannot be read ({ex.strerror or ex})") from ex

    if _is_token_file(raw):
        tokens = _parse_token_file(name, raw)
    elif _is_utf8(raw):
        tokens = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    else:
        raise CorpusError(name, "is neither a token file nor UTF-8 text")

    _check_range(name, tokens, vocab)
    if tokens.size < max(1, min_tokens):
        raise CorpusError(
            name,
            f"holds {tokens.size} tokens, at least {max(1, min_tokens)} are needed",
        )
    return tokens


@typechecked
def write_token_file(path: str | Path, tokens: np.ndarray, vocab: int) -> None:
    """
    Write tokens in the binary corpus format.

    Raises:
        CorpusError: If an id does not fit the vocabulary or 16 bits.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if vocab > 2**16:
        raise CorpusError(str(path), f"vocab {vocab} does not fit 16-bit token ids")
    if tokens.size and tokens.min() < 0:
        raise CorpusError(str(path), "token ids must be non-negative")
    _check_range(str(path), tokens, vocab)
    header = HEADER.pack(MAGIC, vocab, tokens.size)
    Path(path).write_bytes(header + tokens.astype(TOKEN_DTYPE).tobytes())


@typechecked
def next_batch(
    corpus: np.ndarray, batch_size: int, seq_len: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """
    Random windows of the corpus, with targets shifted one token ahead
    of the inputs.

    Returns:
        `(inputs, targets)`, each `[batch_size, seq_len]`.

    Raises:
        CorpusError: If the corpus is shorter than `seq_len + 1`.
    """
    if corpus.size < seq_len + 1:
        raise CorpusError(
            "<in memory>",
            f"holds {corpus.size} tokens, at least {seq_len + 1} are needed",
        )
    starts = rng.integers(0, corpus.size - seq_len, size=batch_size)
    windows = corpus[starts[:, None] + np.arange(seq_len + 1)]
    return windows[:, :-1], windows[:, 1:]


def eval_batches(
    corpus: np.ndarray,
    n_batches: int,
    batch_size: int,
    seq_len: int,
    seed: SamplerSeed,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """The fixed evaluation batches of a seed. Independent of training randomness."""
    rng = seed.generator(STREAM_EVAL)
    return [next_batch(corpus, batch_size, seq_len, rng) for _ in range(n_batches)]
