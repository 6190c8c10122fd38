"""Shared fixtures: a small synthetic corpus, its vocabulary, and paths."""

import pytest

from mrgen.data import Corpus, vocab_texts as corpus_texts
from mrgen.mr import E2E_SCHEMA
from mrgen.synthetic import synthetic_corpus
from mrgen.tokenizer import schema_specials, train_vocab


@pytest.fixture(scope="session")
def small_corpus() -> Corpus:
    return synthetic_corpus(40, seed=11)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return train_vocab(corpus_texts(small_corpus), 600, "bpe",
                       specials=schema_specials(E2E_SCHEMA))


@pytest.fixture(scope="session")
def word_vocab(small_corpus):
    return train_vocab(corpus_texts(small_corpus), 600, "word",
                       specials=schema_specials(E2E_SCHEMA))
