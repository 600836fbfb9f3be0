"""Model components: encoder/attention/decoder shapes and hand-checkable
values, parameter bookkeeping, and the binary checkpoint format."""

import math

import numpy as np
import pytest

from cachenmt import autodiff as ad
from cachenmt import model as m
from cachenmt.autodiff import Tensor
from cachenmt.cache import cache_parameter_count
from cachenmt.model import ModelConfig, load_checkpoint, save_checkpoint


CFG = ModelConfig(d_emb=6, d=8, cache_capacity=5, max_sentence_len=20,
                  beam_width=3)


def make_store(seed=0, src_v=13, tgt_v=13, scale=0.5, cfg=CFG):
    store = m.init_parameters(cfg, src_v, tgt_v, seed)
    rng = np.random.default_rng(seed)
    for _, t in store.items():
        t.data = rng.uniform(-scale, scale, size=t.data.shape)
    return store


class TestModelConfig:
    def test_context_width_is_twice_hidden(self):
        assert CFG.l == 2 * CFG.d

    def test_validate_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            ModelConfig(d=0).validate()
        with pytest.raises(ValueError):
            ModelConfig(beam_width=0).validate()
        with pytest.raises(ValueError):
            ModelConfig(cache_capacity=-1).validate()

    def test_dict_round_trip(self):
        assert ModelConfig.from_dict(CFG.to_dict()) == CFG


class TestEncoder:
    def test_shapes(self):
        store = make_store()
        enc = m.encode(store, CFG, [4, 5, 6, 7])
        assert enc.J == 4
        assert enc.h.shape == (4, CFG.l)
        assert enc.proj.shape == (CFG.d, 4)
        assert enc.bwd_first.shape == (CFG.d,)

    def test_rejects_empty_source(self):
        store = make_store()
        with pytest.raises(ValueError):
            m.encode(store, CFG, [])

    def test_backward_half_depends_on_future_tokens(self):
        store = make_store()
        a = m.encode(store, CFG, [4, 5, 6]).h.data
        b = m.encode(store, CFG, [4, 5, 7]).h.data
        # forward half at position 0 sees only token 4; backward half differs
        np.testing.assert_array_equal(a[0, :CFG.d], b[0, :CFG.d])
        assert not np.array_equal(a[0, CFG.d:], b[0, CFG.d:])


class TestAttention:
    def test_alignment_weights_sum_to_one(self):
        store = make_store()
        enc = m.encode(store, CFG, [4, 5, 6])
        q = m.attention_query(store, 4, m.initial_state(store, enc))
        alpha, c = m.attend(store, q, enc)
        assert alpha.data.sum() == pytest.approx(1.0, abs=1e-12)
        assert c.shape == (CFG.l,)

    def test_context_from_hand_set_energies(self):
        # energies [ln 3, 0] -> weights [0.75, 0.25]
        store = make_store()
        enc = m.encode(store, CFG, [4, 5])
        energies = Tensor(np.array([math.log(3.0), 0.0]))
        alpha, c = m.context_from_energies(energies, enc)
        np.testing.assert_allclose(alpha.data, [0.75, 0.25], atol=1e-12)
        expected = 0.75 * enc.h.data[0] + 0.25 * enc.h.data[1]
        np.testing.assert_allclose(c.data, expected, atol=1e-12)

    def test_single_position_gets_all_mass(self):
        store = make_store()
        enc = m.encode(store, CFG, [4])
        q = m.attention_query(store, 4, m.initial_state(store, enc))
        alpha, c = m.attend(store, q, enc)
        np.testing.assert_allclose(alpha.data, [1.0], atol=1e-15)
        np.testing.assert_allclose(c.data, enc.h.data[0], atol=1e-15)


class TestDecoder:
    def test_zero_weights_halve_previous_state(self):
        # with all GRU weights zero: z = r = sigmoid(0) = 0.5,
        # candidate = tanh(0) = 0, so s_t = (1 - z) * s_prev = 0.5 * s_prev
        store = make_store()
        for name, t in store.items():
            if name.startswith("dec."):
                t.data[:] = 0.0
        s_prev = Tensor(np.arange(CFG.d, dtype=np.float64))
        c_t = Tensor(np.ones(CFG.l))
        s = m.decoder_step(store, 4, s_prev, c_t)
        np.testing.assert_allclose(s.data, 0.5 * s_prev.data, atol=1e-15)

    def test_output_distribution_is_probability_vector(self):
        store = make_store()
        enc = m.encode(store, CFG, [4, 5])
        s0 = m.initial_state(store, enc)
        q = m.attention_query(store, 4, s0)
        _, c = m.attend(store, q, enc)
        s = m.decoder_step(store, 4, s0, c)
        p = m.output_distribution(store, CFG, 4, s, c)
        assert p.data.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(p.data > 0)

    def test_initial_state_in_tanh_range(self):
        store = make_store()
        enc = m.encode(store, CFG, [4, 5, 6])
        s0 = m.initial_state(store, enc)
        assert np.all(np.abs(s0.data) < 1.0)


class TestParameterBookkeeping:
    def test_gate_parameter_count_matches_formula(self):
        store = make_store()
        before = store.num_scalars()
        m.add_cache_parameters(store, CFG)
        added = store.num_scalars() - before
        assert added == cache_parameter_count(CFG.d, CFG.l)

    def test_gate_parameters_start_at_zero(self):
        store = make_store()
        m.add_cache_parameters(store, CFG)
        for name in ("gamma.U", "gamma.V", "gamma.W"):
            np.testing.assert_array_equal(store[name].data, 0.0)

    def test_shallow_parameters_shapes(self):
        store = make_store()
        m.add_shallow_parameters(store, CFG)
        assert store["shallow.u"].shape == (CFG.d,)
        assert store["shallow.v"].shape == (CFG.l,)
        assert store["shallow.w"].shape == (CFG.d,)

    def test_theta_names_exclude_gate(self):
        store = make_store()
        m.add_cache_parameters(store, CFG)
        assert not any(n.startswith("gamma.") for n in m.theta_names(store))

    def test_init_deterministic_by_seed(self):
        a = m.init_parameters(CFG, 13, 13, seed=5)
        b = m.init_parameters(CFG, 13, 13, seed=5)
        for name in a.names():
            np.testing.assert_array_equal(a[name].data, b[name].data)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, tiny_vocabs):
        src_vocab, tgt_vocab = tiny_vocabs
        store = make_store(seed=2, src_v=len(src_vocab), tgt_v=len(tgt_vocab))
        m.add_cache_parameters(store, CFG)
        store["gamma.U"].data[:] = np.pi
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, CFG, src_vocab, tgt_vocab, store,
                        meta={"phase": "test"})
        cfg2, src2, tgt2, store2, meta = load_checkpoint(path)
        assert cfg2 == CFG
        assert src2.all_tokens() == src_vocab.all_tokens()
        assert tgt2.all_tokens() == tgt_vocab.all_tokens()
        assert meta["phase"] == "test"
        assert store2.names() == store.names()
        for name in store.names():
            assert store2[name].data.tobytes() == store[name].data.tobytes()

    def test_trainable_flags_survive(self, tmp_path, tiny_vocabs):
        src_vocab, tgt_vocab = tiny_vocabs
        store = make_store(src_v=len(src_vocab), tgt_v=len(tgt_vocab))
        store.freeze_all()
        m.add_cache_parameters(store, CFG)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, CFG, src_vocab, tgt_vocab, store)
        _, _, _, store2, _ = load_checkpoint(path)
        trainable = {n for n, _ in store2.trainable_items()}
        assert trainable == {"gamma.U", "gamma.V", "gamma.W"}

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOT-A-CKPT 1\nDATA\n")
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)

    def test_forward_identical_after_reload(self, tmp_path, tiny_vocabs):
        src_vocab, tgt_vocab = tiny_vocabs
        store = make_store(seed=4, src_v=len(src_vocab), tgt_v=len(tgt_vocab))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, CFG, src_vocab, tgt_vocab, store)
        _, _, _, store2, _ = load_checkpoint(path)
        with ad.no_grad():
            enc1 = m.encode(store, CFG, [4, 5, 6])
            enc2 = m.encode(store2, CFG, [4, 5, 6])
        assert enc1.h.data.tobytes() == enc2.h.data.tobytes()
