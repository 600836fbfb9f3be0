"""Beam search against independent oracles (greedy loop, full enumeration),
document translation write-back semantics, hypothesis replay, and the
matching-position histogram."""

import numpy as np
import pytest

from cachenmt import autodiff as ad
from cachenmt import model as m
from cachenmt.cache import Cache, cache_write
from cachenmt.decoding import (Hypothesis, PositionHistogram, beam_search,
                               rescore_hypothesis, translate_document)
from cachenmt.model import ModelConfig
from cachenmt.vocab import BOS, EOS


TINY = ModelConfig(d_emb=4, d=5, cache_capacity=4, max_sentence_len=6,
                   beam_width=2)


def tiny_store(seed=0, src_v=6, tgt_v=6, scale=0.9):
    store = m.init_parameters(TINY, src_v, tgt_v, seed)
    rng = np.random.default_rng(seed)
    for _, t in store.items():
        t.data = rng.uniform(-scale, scale, size=t.data.shape)
    return store


def step_logp(store, y_prev, s_prev, enc):
    """Independent single-step oracle built from the model primitives."""
    q = m.attention_query(store, y_prev, s_prev)
    _, c = m.attend(store, q, enc)
    s = m.decoder_step(store, y_prev, s_prev, c)
    p = m.output_distribution(store, TINY, y_prev, s, c).data
    return np.log(p), s


def greedy_decode(store, src_ids, max_len):
    with ad.no_grad():
        enc = m.encode(store, TINY, src_ids)
        s_prev = m.initial_state(store, enc)
        tokens, total, y_prev = [], 0.0, BOS
        for _ in range(max_len):
            logp, s = step_logp(store, y_prev, s_prev, enc)
            y = int(np.argmax(logp))
            total += logp[y]
            tokens.append(y)
            if y == EOS:
                return tokens, total, True
            s_prev, y_prev = s, y
    return tokens, total, False


def enumerate_best(store, src_ids, max_len, vocab_size):
    """Exhaustive DFS over every token sequence up to max_len."""
    with ad.no_grad():
        enc = m.encode(store, TINY, src_ids)
        s0 = m.initial_state(store, enc)
        completed, open_ended = [], []

        def walk(tokens, total, s_prev, y_prev):
            if len(tokens) == max_len:
                open_ended.append((tokens, total))
                return
            logp, s = step_logp(store, y_prev, s_prev, enc)
            for y in range(vocab_size):
                seq = tokens + [y]
                score = total + logp[y]
                if y == EOS:
                    completed.append((seq, score))
                else:
                    walk(seq, score, s, y)

        walk([], 0.0, s0, BOS)
    pool = completed if completed else open_ended
    return max(pool, key=lambda p: p[1])


class TestBeamOracles:
    @pytest.mark.parametrize("seed", [0, 1, 2, 5, 9])
    def test_beam_one_equals_greedy(self, seed):
        store = tiny_store(seed)
        src = [4, 5, 4]
        hyp = beam_search(store, TINY, src, beam_width=1, max_len=6)
        tokens, total, complete = greedy_decode(store, src, 6)
        assert hyp.tokens == tokens
        assert hyp.log_prob == pytest.approx(total, abs=1e-12)
        assert hyp.complete == complete

    @pytest.mark.parametrize("seed", [0, 3, 7])
    def test_exhaustive_beam_equals_enumeration(self, seed):
        store = tiny_store(seed)
        src = [4, 5]
        max_len, vocab = 4, 6
        hyp = beam_search(store, TINY, src, beam_width=vocab ** max_len,
                          max_len=max_len)
        best_tokens, best_score = enumerate_best(store, src, max_len, vocab)
        assert hyp.tokens == best_tokens
        assert hyp.log_prob == pytest.approx(best_score, abs=1e-10)

    def test_wider_beam_never_scores_worse(self):
        store = tiny_store(4)
        src = [4, 5, 4]
        scores = [beam_search(store, TINY, src, beam_width=w, max_len=5).log_prob
                  for w in (1, 2, 4, 8)]
        for narrow, wide in zip(scores, scores[1:]):
            assert wide >= narrow - 1e-12

    def test_invalid_beam_width_rejected(self):
        store = tiny_store(0)
        with pytest.raises(ValueError):
            beam_search(store, TINY, [4], beam_width=0)

    def test_unknown_fusion_rejected(self):
        store = tiny_store(0)
        with pytest.raises(ValueError):
            beam_search(store, TINY, [4], fusion_mode="wide")

    def test_forced_close_without_eos(self):
        store = tiny_store(0)
        hyp = beam_search(store, TINY, [4, 5], beam_width=1, max_len=1)
        if not hyp.complete:
            assert len(hyp.tokens) == 1 and hyp.tokens[-1] != EOS

    def test_length_normalization_changes_preference_only_by_length(self):
        store = tiny_store(6)
        src = [4, 5]
        plain = beam_search(store, TINY, src, beam_width=4, max_len=5)
        normed = beam_search(store, TINY, src, beam_width=4, max_len=5,
                             length_normalize=True)
        # both must be drawn from the same candidate set; scores consistent
        assert rescore_hypothesis(store, TINY, src, normed) == pytest.approx(
            normed.log_prob, abs=1e-10)
        assert rescore_hypothesis(store, TINY, src, plain) == pytest.approx(
            plain.log_prob, abs=1e-10)


class TestReplayInvariant:
    @pytest.mark.parametrize("fusion", ["none", "deep", "shallow"])
    def test_rescore_matches_search_score(self, fusion):
        store = tiny_store(2)
        if fusion == "deep":
            m.add_cache_parameters(store, TINY)
        if fusion == "shallow":
            m.add_shallow_parameters(store, TINY)
        cache = None
        if fusion != "none":
            cache = Cache(TINY.cache_capacity)
            warm = beam_search(store, TINY, [4, 5], beam_width=2, max_len=4)
            cache_write(cache, warm.steps)
        hyp = beam_search(store, TINY, [5, 4], beam_width=3, max_len=5,
                          cache=cache, fusion_mode=fusion)
        replayed = rescore_hypothesis(store, TINY, [5, 4], hyp, cache=cache,
                                      fusion_mode=fusion)
        assert replayed == pytest.approx(hyp.log_prob, abs=1e-10)


class TestTranslateDocument:
    def test_first_sentence_identical_to_cache_free(self):
        store = tiny_store(1)
        m.add_cache_parameters(store, TINY)
        sentences = [[4, 5], [5, 4]]
        fused = translate_document(store, TINY, sentences, fusion_mode="deep",
                                   beam_width=2, max_len=5)
        plain = beam_search(store, TINY, sentences[0], beam_width=2, max_len=5)
        assert fused[0].tokens == plain.tokens
        assert fused[0].log_prob == plain.log_prob  # bit-identical path

    def test_fusion_none_matches_independent_decoding(self):
        store = tiny_store(1)
        sentences = [[4, 5], [5, 4], [4, 4]]
        doc = translate_document(store, TINY, sentences, fusion_mode="none",
                                 beam_width=2, max_len=5)
        for src, hyp in zip(sentences, doc):
            solo = beam_search(store, TINY, src, beam_width=2, max_len=5)
            assert hyp.tokens == solo.tokens
            assert hyp.log_prob == solo.log_prob

    def test_write_back_populates_cache(self):
        store = tiny_store(1)
        m.add_cache_parameters(store, TINY)
        cache = Cache(TINY.cache_capacity)
        translate_document(store, TINY, [[4, 5], [5, 4]], fusion_mode="deep",
                           cache=cache, beam_width=2, max_len=5)
        assert not cache.empty

    def test_persistent_cache_carries_across_documents(self):
        store = tiny_store(1)
        m.add_cache_parameters(store, TINY)
        cache = Cache(TINY.cache_capacity)
        translate_document(store, TINY, [[4, 5]], fusion_mode="deep",
                           cache=cache, beam_width=2, max_len=5)
        stamp = cache.stamp
        translate_document(store, TINY, [[5, 4]], fusion_mode="deep",
                           cache=cache, beam_width=2, max_len=5)
        assert cache.stamp > stamp

    def test_empty_document_rejected(self):
        store = tiny_store(0)
        with pytest.raises(ValueError):
            translate_document(store, TINY, [])

    def test_histogram_accumulated_after_first_sentence(self):
        store = tiny_store(1)
        m.add_cache_parameters(store, TINY)
        hist = PositionHistogram(TINY.cache_capacity)
        translate_document(store, TINY, [[4, 5], [5, 4], [4, 4]],
                           fusion_mode="deep", histogram=hist,
                           beam_width=2, max_len=5)
        assert hist.count > 0


class TestPositionHistogram:
    def test_averages_normalized(self):
        hist = PositionHistogram(4)
        hist.accumulate(np.array([0.5, 0.5]))
        hist.accumulate(np.array([1.0]))
        avg = hist.averages()
        assert avg.sum() == pytest.approx(1.0, abs=1e-12)
        assert avg.shape == (4,)

    def test_rejects_unnormalized_mass(self):
        hist = PositionHistogram(4)
        with pytest.raises(ValueError):
            hist.accumulate(np.array([0.4, 0.4]))

    def test_empty_histogram_raises(self):
        with pytest.raises(ValueError):
            PositionHistogram(4).averages()

    def test_report_format(self):
        hist = PositionHistogram(3)
        hist.accumulate(np.array([0.7, 0.3]))
        lines = hist.report().strip().split("\n")
        assert len(lines) == 3
        ages, masses = zip(*(l.split("\t") for l in lines))
        assert list(ages) == ["0", "1", "2"]
        assert sum(float(x) for x in masses) == pytest.approx(1.0, abs=1e-9)
