"""Shared fixtures: a tiny synthetic corpus and a small randomly
initialised model, reused across the unit tests."""

import random

import numpy as np
import pytest

from cachenmt import model as m
from cachenmt.corpus import SynthConfig, build_vocab, generate_synthetic
from cachenmt.model import ModelConfig


TINY_SYNTH = SynthConfig(src_vocab_size=20, tgt_vocab_size=26, n_documents=4,
                         sentences_per_document=3, sentence_len_range=(2, 4),
                         n_ambiguous_types=2, seed=1)


@pytest.fixture(scope="session")
def tiny_corpus():
    corpus, lexicon = generate_synthetic(TINY_SYNTH)
    return corpus, lexicon


@pytest.fixture(scope="session")
def tiny_vocabs(tiny_corpus):
    corpus, _ = tiny_corpus
    return build_vocab(corpus, 64)


@pytest.fixture()
def tiny_model(tiny_vocabs):
    """Small model with a strong random init (useful, non-degenerate
    distributions without any training)."""
    src_vocab, tgt_vocab = tiny_vocabs
    cfg = ModelConfig(d_emb=6, d=8, cache_capacity=5, max_sentence_len=20,
                      beam_width=3)
    store = m.init_parameters(cfg, len(src_vocab), len(tgt_vocab), seed=0)
    rng = np.random.default_rng(12)
    for _, t in store.items():
        t.data = rng.uniform(-0.8, 0.8, size=t.data.shape)
    return cfg, store


@pytest.fixture()
def tiny_pairs(tiny_corpus, tiny_vocabs):
    corpus, _ = tiny_corpus
    src_vocab, tgt_vocab = tiny_vocabs
    return [(src_vocab.encode(s), tgt_vocab.encode(t))
            for s, t in corpus.sentence_pairs()]


@pytest.fixture()
def rng():
    return random.Random(12345)
