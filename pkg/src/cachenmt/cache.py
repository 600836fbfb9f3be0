"""Continuous cache over translation history.

Fixed-capacity key-value memory: keys are attention contexts, values are
decoder states, each slot tagged with the target word it produced. Matching
is a plain dot-product softmax (no learned matching parameters, no
temperature). Writes happen once per fully generated sentence; an existing
slot for the same word is averaged into (halving its past), a new word
fills an empty slot or evicts the least recently touched one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .model import DecoderStep, ModelConfig
from .vocab import BOS, EOS, PAD


@dataclass
class CacheSlot:
    key: np.ndarray        # attention context c_i (l,)
    value: np.ndarray      # decoder state s_i (d,)
    indicator: int         # target word id, never PAD/BOS/EOS
    last_touched: int


class Cache:
    """Slot array plus a word -> slot index (one slot per indicator word)."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.slots: list[CacheSlot] = []
        self.word_index: dict[int, int] = {}
        self.stamp = 0

    def __len__(self):
        return len(self.slots)

    @property
    def empty(self) -> bool:
        return not self.slots

    def _touch(self) -> int:
        self.stamp += 1
        return self.stamp

    def keys_matrix(self) -> np.ndarray:
        return np.stack([s.key for s in self.slots])

    def values_matrix(self) -> np.ndarray:
        return np.stack([s.value for s in self.slots])

    def recency_ranks(self) -> np.ndarray:
        """rank[i] = age of slot i; 0 = most recently touched."""
        order = sorted(range(len(self.slots)),
                       key=lambda i: -self.slots[i].last_touched)
        ranks = np.empty(len(self.slots), dtype=np.int64)
        for age, i in enumerate(order):
            ranks[i] = age
        return ranks


def reset(cache: Cache) -> Cache:
    cache.slots = []
    cache.word_index = {}
    cache.stamp = 0
    return cache


def cache_match(c_t: np.ndarray, cache: Cache) -> np.ndarray:
    """Softmax over dot products of the query with occupied slot keys."""
    if cache.empty:
        raise ValueError("cache_match on an empty cache")
    dots = cache.keys_matrix() @ np.asarray(c_t, dtype=np.float64)
    return ad.softmax_stable(dots)


def cache_read(probs: np.ndarray, cache: Cache) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] != len(cache.slots):
        raise ValueError("matching distribution length != occupied slot count")
    return cache.values_matrix().T @ probs


def gate(s_t: Tensor, c_t: Tensor, m_t: Tensor, store: ParameterStore) -> Tensor:
    """lambda_t = sigmoid(U s_t + V c_t + W m_t), element-wise."""
    return ad.sigmoid(store["gamma.U"] @ s_t + store["gamma.V"] @ c_t
                      + store["gamma.W"] @ m_t)


def combine(s_t: Tensor, m_t: Tensor | None, lam_t: Tensor | None) -> Tensor:
    """(1 - lambda) * s + lambda * m; with both absent, s_t unchanged."""
    if (m_t is None) != (lam_t is None):
        raise ValueError("m_t and lambda_t must both be present or both absent")
    if m_t is None:
        return s_t
    return (1.0 - lam_t) * s_t + lam_t * m_t


def scalar_gate(s_t: Tensor, c_t: Tensor, m_t: Tensor, store: ParameterStore) -> Tensor:
    """Scalar gate for shallow fusion: sigma(u.s + v.c + w.m)."""
    pre = ad.dot(store["shallow.u"], s_t) + ad.dot(store["shallow.v"], c_t) \
        + ad.dot(store["shallow.w"], m_t)
    return ad.sigmoid(pre)


def cache_word_distribution(probs: np.ndarray, cache: Cache, vocab_size: int) -> np.ndarray:
    """P_cache: summed matching mass of slots indicating each word."""
    p = np.zeros(vocab_size)
    for prob, slot in zip(probs, cache.slots):
        p[slot.indicator] += prob
    return p


def shallow_fusion_prob(p_vocab: np.ndarray, cache: Cache, c_t: np.ndarray,
                        lam_t: float) -> np.ndarray:
    """(1 - lam) * P_vocab + lam * P_cache; empty cache returns P_vocab."""
    if not 0.0 <= lam_t <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    if cache.empty:
        return np.asarray(p_vocab, dtype=np.float64)
    probs = cache_match(c_t, cache)
    p_cache = cache_word_distribution(probs, cache, len(p_vocab))
    return (1.0 - lam_t) * np.asarray(p_vocab, dtype=np.float64) + lam_t * p_cache


_EXCLUDED_INDICATORS = {PAD, BOS, EOS}


def cache_write(cache: Cache, steps: list[DecoderStep],
                averaging: bool = True) -> Cache:
    """Write a finished sentence's (c_t, s_t, y_t) triples, in order.

    averaging=False is the ablation: an existing slot for the same word is
    replaced outright instead of averaged.
    """
    if cache.capacity == 0:
        return cache
    for step in steps:
        y = step.y
        if y in _EXCLUDED_INDICATORS:
            continue
        key = np.array(step.c, dtype=np.float64)
        value = np.array(step.s, dtype=np.float64)
        if y in cache.word_index:
            i = cache.word_index[y]
            slot = cache.slots[i]
            if averaging:
                slot.key = (slot.key + key) / 2.0
                slot.value = (slot.value + value) / 2.0
            else:
                slot.key = key
                slot.value = value
            slot.last_touched = cache._touch()
        elif len(cache.slots) < cache.capacity:
            cache.slots.append(CacheSlot(key, value, y, cache._touch()))
            cache.word_index[y] = len(cache.slots) - 1
        else:
            i = min(range(len(cache.slots)),
                    key=lambda j: (cache.slots[j].last_touched, j))
            old = cache.slots[i]
            del cache.word_index[old.indicator]
            cache.slots[i] = CacheSlot(key, value, y, cache._touch())
            cache.word_index[y] = i
    return cache


def cache_parameter_count(d: int, l: int) -> int:
    """Trainable size of the gate matrices {U, V, W}: 2*d^2 + d*l."""
    return 2 * d * d + d * l


def dump_records(cache: Cache, tgt_tokens, full_vectors: bool = False) -> list[dict]:
    """One record per slot for the inspect-cache CLI dump."""
    records = []
    for i, slot in enumerate(cache.slots):
        rec = {
            "slot": i,
            "indicator": tgt_tokens(slot.indicator),
            "last_touched": slot.last_touched,
            "key_norm": float(np.linalg.norm(slot.key)),
            "value_norm": float(np.linalg.norm(slot.value)),
        }
        if full_vectors:
            rec["key"] = [float(x) for x in slot.key]
            rec["value"] = [float(x) for x in slot.value]
        records.append(rec)
    return records
