from pathlib import Path

import numpy as np
import pytest

from est_engine.exceptions import CorpusError
from est_engine.sampler import SamplerSeed
from est_engine.training import (
    decode_tokens,
    load_corpus,
    next_batch,
    tokenize_text,
    write_token_file,
)
from est_engine.training.data import eval_batches


def test_tokenize_text__bytes():
    np.testing.assert_array_equal(tokenize_text("ab é"), [97, 98, 32, 195, 169])
    assert decode_tokens(tokenize_text("ab é")) == "ab é"


def test_load_corpus__text(text_corpus_file: Path):
    tokens = load_corpus(text_corpus_file)

    assert tokens.size == 44 * 20
    assert decode_tokens(tokens[:9]) == "the quick"


def test_load_corpus__token_file(tmp_path: Path):
    path = tmp_path / "tokens.bin"
    write_token_file(path, np.array([5, 1000, 49999]), vocab=50000)

    tokens = load_corpus(path, vocab=50000)

    np.testing.assert_array_equal(tokens, [5, 1000, 49999])


def test_load_corpus__token_outside_model_vocab(tmp_path: Path):
    path = tmp_path / "tokens.bin"
    write_token_file(path, np.array([5, 300]), vocab=1000)

    with pytest.raises(CorpusError) as ex:
        load_corpus(path, vocab=256)

    assert "token id 300 at position 1 is >= vocab 256" in str(ex.value)


def test_load_corpus__truncated_token_file(tmp_path: Path):
    path = tmp_path / "tokens.bin"
    write_token_file(path, np.array([1, 2, 65535]), vocab=2**16)
    path.write_bytes(path.read_bytes()[:-1])

    with pytest.raises(CorpusError) as ex:
        load_corpus(path, vocab=2**16)

    assert "declares 3 tokens but holds 5 payload bytes" in str(ex.value)


def test_load_corpus__text_starting_with_magic(tmp_path: Path):
    """
    Verify that a text corpus that happens to begin with the token file magic
    is still read as text.
    """
    path = tmp_path / "notes.txt"
    path.write_text("ESTK1 release notes\n", encoding="utf-8")

    tokens = load_corpus(path)

    assert decode_tokens(tokens) == "ESTK1 release notes\n"


def test_load_corpus__missing(tmp_path: Path):
    with pytest.raises(CorpusError) as ex:
        load_corpus(tmp_path / "missing.txt")

    assert "cannot be read" in str(ex.value)


def test_load_corpus__not_utf8(tmp_path: Path):
    path = tmp_path / "latin1.txt"
    path.write_bytes("caf\xe9".encode("latin-1"))

    with pytest.raises(CorpusError):
        load_corpus(path)


def test_load_corpus__empty(tmp_path: Path):
    path = tmp_path / "empty.txt"
    path.write_text("", encoding="utf-8")

    with pytest.raises(CorpusError):
        load_corpus(path)


def test_load_corpus__too_short(text_corpus_file: Path):
    with pytest.raises(CorpusError) as ex:
        load_corpus(text_corpus_file, min_tokens=10_000)

    assert "at least 10000 are needed" in str(ex.value)


def test_write_token_file__vocab_too_large(tmp_path: Path):
    with pytest.raises(CorpusError):
        write_token_file(tmp_path / "t.bin", np.array([1]), vocab=2**17)


def test_next_batch__targets_are_shifted(tiny_corpus):
    rng = SamplerSeed().generator()

    inputs, targets = next_batch(tiny_corpus, 4, 8, rng)

    assert inputs.shape == targets.shape == (4, 8)
    np.testing.assert_array_equal(inputs[:, 1:], targets[:, :-1])


def test_next_batch__deterministic(tiny_corpus):
    a = next_batch(tiny_corpus, 4, 8, SamplerSeed(seed=3).generator())
    b = next_batch(tiny_corpus, 4, 8, SamplerSeed(seed=3).generator())

    np.testing.assert_array_equal(a[0], b[0])


def test_next_batch__corpus_too_short():
    with pytest.raises(CorpusError):
        next_batch(np.arange(8), 1, 8, np.random.default_rng(0))


def test_next_batch__exact_length_corpus():
    inputs, targets = next_batch(np.arange(9), 2, 8, np.random.default_rng(0))

    np.testing.assert_array_equal(inputs[0], np.arange(8))
    np.testing.assert_array_equal(targets[1], np.arange(1, 9))


def test_eval_batches__fixed_per_seed(tiny_corpus):
    a = eval_batches(tiny_corpus, 3, 2, 8, SamplerSeed(seed=1))
    b = eval_batches(tiny_corpus, 3, 2, 8, SamplerSeed(seed=1))

    assert len(a) == 3
    for (x, _), (y, _) in zip(a, b):
        np.testing.assert_array_equal(x, y)
