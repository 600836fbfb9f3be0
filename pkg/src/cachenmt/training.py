"""Two-pass training: likelihood pretraining of the base model, then
fine-tuning of the cache gate parameters only, with the base frozen.

During fine-tuning the documents are walked in order with a teacher-forced
cache: after each sentence's loss is accumulated, its forced (c_t, s_t, y_t)
triples are written to the cache before the next sentence. The forced
representations are constants with respect to the gate parameters, so the
base forward pass runs off-tape.
"""

from __future__ import annotations

import contextlib
import random
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import cache as cachemod
from . import model as m
from .autodiff import ParameterStore, Tensor
from .cache import Cache
from .corpus import DocumentCorpus
from .model import DecoderStep, ModelConfig
from .vocab import BOS, EOS, Vocab


@dataclass
class TrainConfig:
    optimizer: str = "sgd"        # "sgd" or "adadelta"
    lr: float = 0.5
    epochs: int = 5
    batch_size: int = 8
    clip_norm: float = 5.0
    seed: int = 0

    def validate(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.optimizer not in ("sgd", "adadelta"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def sentence_nll(store: ParameterStore, cfg: ModelConfig,
                 src_ids: list[int], tgt_ids: list[int],
                 cache: Cache | None = None, use_cache: bool = False,
                 fusion: str = "deep", frozen_base: bool = False,
                 dropout_rng: np.random.Generator | None = None,
                 ) -> tuple[Tensor, list[DecoderStep]]:
    """Teacher-forced negative log-likelihood plus the per-step trace.

    tgt_ids excludes BOS/EOS; EOS is appended internally. With use_cache off
    (or the cache empty) the loss is bit-identical to the baseline path.
    """
    base_ctx = ad.no_grad if frozen_base else contextlib.nullcontext
    zero_lam = np.zeros(cfg.d)

    with base_ctx():
        enc = m.encode(store, cfg, src_ids)
        s_prev = m.initial_state(store, enc)

    loss: Tensor | None = None
    trace: list[DecoderStep] = []
    y_prev = BOS
    targets = list(tgt_ids) + [EOS]
    for t, y in enumerate(targets, start=1):
        with base_ctx():
            q = m.attention_query(store, y_prev, s_prev)
            _, c = m.attend(store, q, enc)
            s = m.decoder_step(store, y_prev, s_prev, c)

        cache_live = (use_cache and cache is not None
                      and cache.capacity > 0 and not cache.empty)
        if not cache_live:
            s_til, lam_np = s, zero_lam
            logits = m.output_logits(store, cfg, y_prev, s_til, c, dropout_rng)
            step_loss = ad.nll_from_logits(logits, y)
        elif fusion == "deep":
            probs = cachemod.cache_match(c.data, cache)
            m_t = Tensor(cachemod.cache_read(probs, cache))
            lam = cachemod.gate(s, c, m_t, store)
            s_til = cachemod.combine(s, m_t, lam)
            lam_np = lam.data.copy()
            logits = m.output_logits(store, cfg, y_prev, s_til, c, dropout_rng)
            step_loss = ad.nll_from_logits(logits, y)
        elif fusion == "shallow":
            s_til, lam_np = s, zero_lam
            probs = cachemod.cache_match(c.data, cache)
            m_t = Tensor(cachemod.cache_read(probs, cache))
            lam = cachemod.scalar_gate(s, c, m_t, store)
            p_vocab = m.output_distribution(store, cfg, y_prev, s, c, dropout_rng)
            p_cache_y = float(cachemod.cache_word_distribution(
                probs, cache, p_vocab.data.shape[0])[y])
            p_y = (1.0 - lam) * ad.pick(p_vocab, y) + lam * p_cache_y
            step_loss = -ad.log(p_y)
        else:
            raise ValueError(f"unknown fusion mode {fusion!r}")

        loss = step_loss if loss is None else loss + step_loss
        trace.append(DecoderStep(t=t, c=c.data.copy(), s=s.data.copy(),
                                 s_tilde=s_til.data.copy(), lam=lam_np, y=y))
        s_prev = s
        y_prev = y
    assert loss is not None
    return loss, trace


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    tune_metric: float | None = None

    def as_dict(self) -> dict:
        return {"epoch": self.epoch, "pass": self.phase, "loss": self.loss,
                "tune_metric": self.tune_metric}


def _encode_pairs(corpus: DocumentCorpus, src_vocab: Vocab, tgt_vocab: Vocab,
                  max_len: int) -> list[tuple[list[int], list[int]]]:
    pairs = []
    for src, tgt in corpus.sentence_pairs():
        if len(src) <= max_len and len(tgt) + 1 <= max_len:
            pairs.append((src_vocab.encode(src), tgt_vocab.encode(tgt)))
    return pairs


def corpus_nll(store: ParameterStore, cfg: ModelConfig,
               pairs: list[tuple[list[int], list[int]]]) -> float:
    """Mean per-token teacher-forced NLL, baseline path, off-tape."""
    total, tokens = 0.0, 0
    with ad.no_grad():
        for src_ids, tgt_ids in pairs:
            loss, _ = sentence_nll(store, cfg, src_ids, tgt_ids)
            total += loss.item()
            tokens += len(tgt_ids) + 1
    return total / max(tokens, 1)


def _optimizer_step(store: ParameterStore, tcfg: TrainConfig,
                    ada: ad.AdadeltaState | None):
    ad.clip_gradients(store, tcfg.clip_norm)
    if tcfg.optimizer == "adadelta":
        assert ada is not None
        ada.step(store)
    else:
        ad.sgd_step(store, tcfg.lr)
    store.zero_grad()


def pretrain(corpus: DocumentCorpus, tcfg: TrainConfig, cfg: ModelConfig,
             src_vocab: Vocab, tgt_vocab: Vocab,
             tune_corpus: DocumentCorpus | None = None,
             store: ParameterStore | None = None,
             ) -> tuple[ParameterStore, list[EpochRecord]]:
    """Maximum-likelihood training of the base parameters.

    Shuffles at sentence level each epoch; keeps the snapshot with the best
    tuning-set per-token NLL when a tune corpus is given.
    """
    tcfg.validate()
    if corpus.num_sentences() == 0:
        raise ValueError("empty corpus")
    if store is None:
        store = m.init_parameters(cfg, len(src_vocab), len(tgt_vocab), tcfg.seed)
    pairs = _encode_pairs(corpus, src_vocab, tgt_vocab, cfg.max_sentence_len)
    tune_pairs = (_encode_pairs(tune_corpus, src_vocab, tgt_vocab,
                                cfg.max_sentence_len)
                  if tune_corpus is not None else None)
    shuffler = random.Random(tcfg.seed)
    dropout_rng = (np.random.default_rng(tcfg.seed)
                   if cfg.dropout_rate > 0 else None)
    ada = ad.AdadeltaState() if tcfg.optimizer == "adadelta" else None

    records: list[EpochRecord] = []
    best_metric, best_snap = None, None
    for epoch in range(1, tcfg.epochs + 1):
        order = list(range(len(pairs)))
        shuffler.shuffle(order)
        total, tokens = 0.0, 0
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            for i in batch:
                src_ids, tgt_ids = pairs[i]
                loss, _ = sentence_nll(store, cfg, src_ids, tgt_ids,
                                       dropout_rng=dropout_rng)
                n_tok = len(tgt_ids) + 1
                scaled = loss * (1.0 / (n_tok * len(batch)))
                scaled.backward()
                total += loss.item()
                tokens += n_tok
            _optimizer_step(store, tcfg, ada)
        epoch_loss = total / max(tokens, 1)
        if not np.isfinite(epoch_loss):
            raise RuntimeError(f"training diverged at epoch {epoch} (loss NaN)")
        tune_metric = corpus_nll(store, cfg, tune_pairs) if tune_pairs else None
        records.append(EpochRecord(epoch, "pretrain", epoch_loss, tune_metric))
        if tune_metric is not None and (best_metric is None
                                        or tune_metric < best_metric):
            best_metric, best_snap = tune_metric, store.snapshot()
    if best_snap is not None:
        store.load_snapshot(best_snap)
    return store, records


def finetune(corpus: DocumentCorpus, store: ParameterStore, tcfg: TrainConfig,
             cfg: ModelConfig, src_vocab: Vocab, tgt_vocab: Vocab,
             fusion: str = "deep",
             tune_corpus: DocumentCorpus | None = None,
             ) -> list[EpochRecord]:
    """Train the cache gate only; the base parameters are frozen in place.

    Documents are processed in order with one cache each, populated by the
    teacher-forced traces of preceding sentences; one update per document.
    """
    tcfg.validate()
    if cfg.cache_capacity <= 0:
        raise ValueError("fine-tuning requires cache_capacity > 0")
    if fusion not in ("deep", "shallow"):
        raise ValueError(f"unknown fusion mode {fusion!r}")

    store.freeze_all()
    if fusion == "deep":
        m.add_cache_parameters(store, cfg)
        gamma = ("gamma.U", "gamma.V", "gamma.W")
    else:
        m.add_shallow_parameters(store, cfg)
        gamma = ("shallow.u", "shallow.v", "shallow.w")
    for name in gamma:
        store.set_trainable(name, True)

    docs = [
        [(src_vocab.encode(src), tgt_vocab.encode(tgt)) for src, tgt in doc
         if len(src) <= cfg.max_sentence_len and len(tgt) + 1 <= cfg.max_sentence_len]
        for doc in corpus.documents
    ]
    ada = ad.AdadeltaState() if tcfg.optimizer == "adadelta" else None

    records: list[EpochRecord] = []
    best_metric, best_snap = None, None
    for epoch in range(1, tcfg.epochs + 1):
        total, tokens = 0.0, 0
        for doc in docs:
            cache = Cache(cfg.cache_capacity)
            n_doc_tok = sum(len(t) + 1 for _, t in doc)
            for src_ids, tgt_ids in doc:
                loss, trace = sentence_nll(store, cfg, src_ids, tgt_ids,
                                           cache=cache, use_cache=True,
                                           fusion=fusion, frozen_base=True)
                (loss * (1.0 / n_doc_tok)).backward()
                total += loss.item()
                tokens += len(tgt_ids) + 1
                cachemod.cache_write(cache, trace)
            _optimizer_step(store, tcfg, ada)
        epoch_loss = total / max(tokens, 1)
        if not np.isfinite(epoch_loss):
            raise RuntimeError(f"fine-tuning diverged at epoch {epoch} (loss NaN)")
        tune_metric = (finetune_nll(store, cfg, tune_corpus, src_vocab,
                                    tgt_vocab, fusion)
                       if tune_corpus is not None else None)
        records.append(EpochRecord(epoch, f"finetune-{fusion}", epoch_loss,
                                   tune_metric))
        if tune_metric is not None and (best_metric is None
                                        or tune_metric < best_metric):
            best_metric, best_snap = tune_metric, store.snapshot()
    if best_snap is not None:
        store.load_snapshot(best_snap)
    return records


def finetune_nll(store: ParameterStore, cfg: ModelConfig,
                 corpus: DocumentCorpus, src_vocab: Vocab, tgt_vocab: Vocab,
                 fusion: str = "deep") -> float:
    """Mean per-token NLL through the cache path, teacher-forced, off-tape."""
    total, tokens = 0.0, 0
    with ad.no_grad():
        for doc in corpus.documents:
            cache = Cache(cfg.cache_capacity)
            for src, tgt in doc:
                src_ids, tgt_ids = src_vocab.encode(src), tgt_vocab.encode(tgt)
                loss, trace = sentence_nll(store, cfg, src_ids, tgt_ids,
                                           cache=cache, use_cache=True,
                                           fusion=fusion, frozen_base=True)
                total += loss.item()
                tokens += len(tgt_ids) + 1
                cachemod.cache_write(cache, trace)
    return total / max(tokens, 1)
