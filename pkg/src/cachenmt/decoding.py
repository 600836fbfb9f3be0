"""Beam-search decoding with cache fusion, document translation with 1-best
write-back, and the matching-position histogram."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import cache as cachemod
from . import model as m
from .autodiff import ParameterStore, Tensor
from .cache import Cache
from .model import DecoderStep, ModelConfig
from .vocab import BOS, EOS

FUSION_MODES = ("none", "deep", "shallow")


@dataclass
class Hypothesis:
    tokens: list[int]                  # generated ids; ends with EOS when complete
    log_prob: float                    # sum of the chosen per-step log-probs
    steps: list[DecoderStep] = field(default_factory=list)
    complete: bool = False


class PositionHistogram:
    """Average matching probability mass by slot recency rank (age 0 = newest)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.sums = np.zeros(capacity)
        self.count = 0

    def accumulate(self, age_mass: np.ndarray):
        if abs(age_mass.sum() - 1.0) > 1e-9:
            raise ValueError("per-step matching mass must sum to 1")
        self.sums[:age_mass.shape[0]] += age_mass
        self.count += 1

    def averages(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("histogram has no accumulated steps")
        avg = self.sums / self.count
        return avg / avg.sum()

    def report(self) -> str:
        """Machine-readable table: one 'age<TAB>mass' line per bucket."""
        lines = [f"{age}\t{mass:.10f}" for age, mass in enumerate(self.averages())]
        return "\n".join(lines) + "\n"


@dataclass
class _Beam:
    tokens: list[int]
    log_prob: float
    s_prev: Tensor
    steps: list[DecoderStep]


def _step_distribution(store: ParameterStore, cfg: ModelConfig, y_prev: int,
                       s_prev: Tensor, enc, cache: Cache | None,
                       fusion_mode: str):
    """One decoder step: returns (log P over vocab, c, s, s_til, lam, age_mass)."""
    q = m.attention_query(store, y_prev, s_prev)
    _, c = m.attend(store, q, enc)
    s = m.decoder_step(store, y_prev, s_prev, c)

    cache_live = (fusion_mode != "none" and cache is not None
                  and cache.capacity > 0 and not cache.empty)
    age_mass = None
    if not cache_live:
        s_til, lam_np = s, np.zeros(cfg.d)
        p = m.output_distribution(store, cfg, y_prev, s_til, c).data
    elif fusion_mode == "deep":
        probs = cachemod.cache_match(c.data, cache)
        m_t = Tensor(cachemod.cache_read(probs, cache))
        lam = cachemod.gate(s, c, m_t, store)
        s_til = cachemod.combine(s, m_t, lam)
        lam_np = lam.data.copy()
        p = m.output_distribution(store, cfg, y_prev, s_til, c).data
        age_mass = _mass_by_age(probs, cache)
    elif fusion_mode == "shallow":
        s_til, lam_np = s, np.zeros(cfg.d)
        probs = cachemod.cache_match(c.data, cache)
        m_t = cachemod.cache_read(probs, cache)
        lam = cachemod.scalar_gate(s, c, Tensor(m_t), store).item()
        p_vocab = m.output_distribution(store, cfg, y_prev, s, c).data
        p = cachemod.shallow_fusion_prob(p_vocab, cache, c.data, lam)
        age_mass = _mass_by_age(probs, cache)
    else:
        raise ValueError(f"unknown fusion mode {fusion_mode!r}")
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    return logp, c, s, s_til, lam_np, age_mass


def _mass_by_age(probs: np.ndarray, cache: Cache) -> np.ndarray:
    ranks = cache.recency_ranks()
    mass = np.zeros(len(cache.slots))
    for i, p in enumerate(probs):
        mass[ranks[i]] += p
    return mass


def beam_search(store: ParameterStore, cfg: ModelConfig, src_ids: list[int],
                cache: Cache | None = None, beam_width: int | None = None,
                max_len: int | None = None, fusion_mode: str = "none",
                length_normalize: bool = False) -> Hypothesis:
    """Highest-scoring hypothesis; the cache is read-only during the search.

    Hypotheses that never emit EOS are forcibly closed at max_len. The caller
    writes the winner's trace back to the cache.
    """
    if fusion_mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {fusion_mode!r}")
    beam_width = beam_width if beam_width is not None else cfg.beam_width
    max_len = max_len if max_len is not None else cfg.max_sentence_len
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")

    with ad.no_grad():
        enc = m.encode(store, cfg, src_ids)
        s0 = m.initial_state(store, enc)
        live = [_Beam([], 0.0, s0, [])]
        closed: list[Hypothesis] = []
        for t in range(1, max_len + 1):
            candidates: list[tuple[float, int, _Beam, int, tuple]] = []
            for bi, beam in enumerate(live):
                y_prev = beam.tokens[-1] if beam.tokens else BOS
                logp, c, s, s_til, lam_np, age_mass = _step_distribution(
                    store, cfg, y_prev, beam.s_prev, enc, cache, fusion_mode)
                for y in np.argsort(-logp)[:beam_width]:
                    candidates.append((beam.log_prob + logp[y], bi, beam,
                                       int(y), (c, s, s_til, lam_np, age_mass)))
            candidates.sort(key=lambda item: (-item[0], item[1], item[3]))
            next_live: list[_Beam] = []
            for score, _, beam, y, (c, s, s_til, lam_np, age_mass) in candidates:
                step = DecoderStep(t=t, c=c.data.copy(), s=s.data.copy(),
                                   s_tilde=s_til.data.copy(), lam=lam_np.copy(),
                                   y=y, age_mass=age_mass)
                if y == EOS:
                    if len(closed) < 4 * beam_width:
                        closed.append(Hypothesis(beam.tokens + [y], score,
                                                 beam.steps + [step], True))
                elif len(next_live) < beam_width:
                    next_live.append(_Beam(beam.tokens + [y], score, s,
                                           beam.steps + [step]))
            live = next_live
            if not live:
                break
        for beam in live:  # forcibly closed, no EOS emitted
            closed.append(Hypothesis(beam.tokens, beam.log_prob, beam.steps, False))

    def score(h: Hypothesis) -> float:
        if length_normalize and h.tokens:
            return h.log_prob / len(h.tokens)
        return h.log_prob

    completed = [h for h in closed if h.complete]
    pool = completed if completed else closed
    return max(pool, key=score)


def translate_document(store: ParameterStore, cfg: ModelConfig,
                       sentences: list[list[int]], fusion_mode: str = "none",
                       cache: Cache | None = None,
                       histogram: PositionHistogram | None = None,
                       beam_width: int | None = None,
                       max_len: int | None = None,
                       averaging: bool = True,
                       length_normalize: bool = False) -> list[Hypothesis]:
    """Translate a document in order; write each 1-best trace after the
    sentence finishes. Pass a non-fresh cache to persist across documents."""
    if not sentences:
        raise ValueError("empty document")
    if cache is None:
        cache = Cache(cfg.cache_capacity if fusion_mode != "none" else 0)
    results = []
    for src_ids in sentences:
        hyp = beam_search(store, cfg, src_ids, cache=cache,
                          beam_width=beam_width, max_len=max_len,
                          fusion_mode=fusion_mode,
                          length_normalize=length_normalize)
        if fusion_mode != "none":
            cachemod.cache_write(cache, hyp.steps, averaging=averaging)
            if histogram is not None:
                for step in hyp.steps:
                    if step.age_mass is not None:
                        histogram.accumulate(step.age_mass)
        results.append(hyp)
    return results


def rescore_hypothesis(store: ParameterStore, cfg: ModelConfig,
                       src_ids: list[int], hyp: Hypothesis,
                       cache: Cache | None = None,
                       fusion_mode: str = "none") -> float:
    """Replay a hypothesis token by token; returns the summed log-prob."""
    total = 0.0
    with ad.no_grad():
        enc = m.encode(store, cfg, src_ids)
        s_prev = m.initial_state(store, enc)
        y_prev = BOS
        for y in hyp.tokens:
            logp, _, s, _, _, _ = _step_distribution(
                store, cfg, y_prev, s_prev, enc, cache, fusion_mode)
            total += float(logp[y])
            s_prev, y_prev = s, y
    return total
