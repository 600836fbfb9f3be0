"""Baseline attention encoder-decoder.

Single-layer bidirectional GRU encoder; conditional GRU decoder whose
attention query combines the previous state with the fed-back embedding of
the last generated word; additive (tanh) alignment energies; a single
affine + softmax output layer. The output layer accepts either the raw
decoder state or the cache-fused state with the same parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .vocab import Vocab

INIT_SCALE = 0.08  # uniform [-0.08, 0.08] initialization


@dataclass
class ModelConfig:
    d_emb: int = 24
    d: int = 32
    cache_capacity: int = 25
    max_sentence_len: int = 80
    beam_width: int = 10
    dropout_rate: float = 0.0

    @property
    def l(self) -> int:
        # attention-context width: forward || backward encoder halves
        return 2 * self.d

    def validate(self):
        if self.d_emb <= 0 or self.d <= 0 or self.max_sentence_len <= 0:
            raise ValueError("dimensions must be positive")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.cache_capacity < 0:
            raise ValueError("cache_capacity must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})
        cfg.validate()
        return cfg


@dataclass
class EncoderStates:
    h: Tensor                  # (J, l) rows h_j
    proj: Tensor               # (d, J) precomputed Ua @ h_j per column
    bwd_first: Tensor          # backward-direction state at source position 1
    J: int


@dataclass
class DecoderStep:
    """Per-timestep record; the unit written to the cache."""
    t: int
    c: np.ndarray              # attention context (l,)
    s: np.ndarray              # decoder state (d,)
    s_tilde: np.ndarray        # combined state (d,)
    lam: np.ndarray            # gate vector, all-zero sentinel when cache unused
    y: int                     # emitted / forced word id
    age_mass: np.ndarray | None = None  # matching mass by slot recency rank


# -- parameter construction ---------------------------------------------------

_GRU_SUFFIXES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")


def _add_gru(store: ParameterStore, prefix: str, d_in: int, d: int,
             rng: np.random.Generator):
    def u(shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    for gate in "zrh":
        store.add(f"{prefix}.W{gate}", u((d, d_in)))
        store.add(f"{prefix}.U{gate}", u((d, d)))
        store.add(f"{prefix}.b{gate}", np.zeros(d))


def init_parameters(cfg: ModelConfig, src_vocab_size: int, tgt_vocab_size: int,
                    seed: int) -> ParameterStore:
    rng = np.random.default_rng(seed)
    store = ParameterStore()

    def u(shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    d, de, l = cfg.d, cfg.d_emb, cfg.l
    store.add("src_emb", u((src_vocab_size, de)))
    store.add("tgt_emb", u((tgt_vocab_size, de)))
    _add_gru(store, "enc_f", de, d, rng)
    _add_gru(store, "enc_b", de, d, rng)
    store.add("att.Wq", u((d, d)))
    store.add("att.We", u((d, de)))
    store.add("att.bq", np.zeros(d))
    store.add("att.Wa", u((d, d)))
    store.add("att.Ua", u((d, l)))
    store.add("att.ba", np.zeros(d))
    store.add("att.va", u((d,)))
    _add_gru(store, "dec", de + l, d, rng)
    store.add("init.W", u((d, d)))
    store.add("init.b", np.zeros(d))
    store.add("out.W", u((tgt_vocab_size, de + d + l)))
    store.add("out.b", np.zeros(tgt_vocab_size))
    return store


def theta_names(store: ParameterStore) -> list[str]:
    """Base-model parameter names (everything outside gamma/shallow)."""
    return [n for n in store.names()
            if not n.startswith("gamma.") and not n.startswith("shallow.")]


def add_cache_parameters(store: ParameterStore, cfg: ModelConfig):
    """Deep-fusion gate matrices, zero-initialized (gate starts at 0.5)."""
    d, l = cfg.d, cfg.l
    for name, shape in (("gamma.U", (d, d)), ("gamma.V", (d, l)), ("gamma.W", (d, d))):
        if name not in store:
            store.add(name, np.zeros(shape))


def add_shallow_parameters(store: ParameterStore, cfg: ModelConfig):
    """Scalar-gate vectors for shallow fusion, zero-initialized."""
    d, l = cfg.d, cfg.l
    for name, shape in (("shallow.u", (d,)), ("shallow.v", (l,)), ("shallow.w", (d,))):
        if name not in store:
            store.add(name, np.zeros(shape))


# -- forward pieces -----------------------------------------------------------


def gru_cell(store: ParameterStore, prefix: str, x: Tensor, h: Tensor) -> Tensor:
    z = ad.sigmoid(store[f"{prefix}.Wz"] @ x + store[f"{prefix}.Uz"] @ h
                   + store[f"{prefix}.bz"])
    r = ad.sigmoid(store[f"{prefix}.Wr"] @ x + store[f"{prefix}.Ur"] @ h
                   + store[f"{prefix}.br"])
    cand = ad.tanh(store[f"{prefix}.Wh"] @ x + store[f"{prefix}.Uh"] @ (r * h)
                   + store[f"{prefix}.bh"])
    return (1.0 - z) * h + z * cand


def encode(store: ParameterStore, cfg: ModelConfig, src_ids: list[int]) -> EncoderStates:
    J = len(src_ids)
    if J == 0:
        raise ValueError("empty source sentence")
    if J > cfg.max_sentence_len:
        raise ValueError(f"source length {J} exceeds max_sentence_len")
    n_src = store["src_emb"].data.shape[0]
    if any(i < 0 or i >= n_src for i in src_ids):
        raise ValueError("source word id out of vocabulary range")

    embs = [ad.row(store["src_emb"], i) for i in src_ids]
    zero = Tensor(np.zeros(cfg.d))
    fwd: list[Tensor] = []
    h = zero
    for e in embs:
        h = gru_cell(store, "enc_f", e, h)
        fwd.append(h)
    bwd: list[Tensor] = [None] * J  # type: ignore[list-item]
    h = zero
    for j in range(J - 1, -1, -1):
        h = gru_cell(store, "enc_b", embs[j], h)
        bwd[j] = h
    rows = [ad.concat([fwd[j], bwd[j]]) for j in range(J)]
    H = ad.stack_rows(rows)
    proj = _matmul_bt(store["att.Ua"], H)
    return EncoderStates(h=H, proj=proj, bwd_first=bwd[0], J=J)


def _matmul_bt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T for a (d,l) parameter and b (J,l) encoder matrix."""
    out_data = a.data @ b.data.T
    rg = (a.requires_grad or b.requires_grad) and ad.grad_enabled()
    if not rg:
        return Tensor(out_data)

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data)
        if b.requires_grad:
            b._accum(g.T @ a.data)

    return Tensor(out_data, True, (a, b), backward)


def initial_state(store: ParameterStore, enc: EncoderStates) -> Tensor:
    return ad.tanh(store["init.W"] @ enc.bwd_first + store["init.b"])


def attention_query(store: ParameterStore, y_prev: int, s_prev: Tensor) -> Tensor:
    """Combine s_{t-1} with the fed-back embedding of y_{t-1}."""
    e = ad.row(store["tgt_emb"], y_prev)
    return ad.tanh(store["att.Wq"] @ s_prev + store["att.We"] @ e + store["att.bq"])


def alignment_energies(store: ParameterStore, q: Tensor, enc: EncoderStates) -> Tensor:
    act = ad.tanh(ad.add_col(enc.proj, store["att.Wa"] @ q + store["att.ba"]))
    return ad.matmul_t(act, store["att.va"])  # (J,)


def context_from_energies(energies: Tensor, enc: EncoderStates) -> tuple[Tensor, Tensor]:
    alpha = ad.softmax(energies)
    c = ad.matmul_t(enc.h, alpha)
    return alpha, c


def attend(store: ParameterStore, q: Tensor, enc: EncoderStates) -> tuple[Tensor, Tensor]:
    """(alpha, c_t): alignment distribution over J and the context vector."""
    return context_from_energies(alignment_energies(store, q, enc), enc)


def decoder_step(store: ParameterStore, y_prev: int, s_prev: Tensor,
                 c_t: Tensor) -> Tensor:
    x = ad.concat([ad.row(store["tgt_emb"], y_prev), c_t])
    return gru_cell(store, "dec", x, s_prev)


def output_logits(store: ParameterStore, cfg: ModelConfig, y_prev: int,
                  state: Tensor, c_t: Tensor,
                  dropout_rng: np.random.Generator | None = None) -> Tensor:
    x = ad.concat([ad.row(store["tgt_emb"], y_prev), state, c_t])
    if dropout_rng is not None and cfg.dropout_rate > 0.0:
        # drop whole input components (embedding / state / context) so no
        # single pathway can monopolise the readout
        keep = 1.0 - cfg.dropout_rate
        group = (dropout_rng.random(3) < keep) / keep
        mask = np.repeat(group, [cfg.d_emb, state.data.shape[0],
                                 c_t.data.shape[0]])
        x = x * Tensor(mask)
    return store["out.W"] @ x + store["out.b"]


def output_distribution(store: ParameterStore, cfg: ModelConfig, y_prev: int,
                        state: Tensor, c_t: Tensor,
                        dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Probability over the target vocabulary; `state` may be s_t or the
    cache-fused state, with the same parameters either way."""
    return ad.softmax(output_logits(store, cfg, y_prev, state, c_t, dropout_rng))


# -- checkpoint format --------------------------------------------------------

CKPT_MAGIC = "CACHENMT-CKPT"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, cfg: ModelConfig, src_vocab: Vocab,
                    tgt_vocab: Vocab, store: ParameterStore,
                    meta: dict | None = None):
    """Self-describing header + named raw little-endian float64 arrays."""
    lines = [f"{CKPT_MAGIC} {CKPT_VERSION}"]
    for key, value in sorted((meta or {}).items()):
        lines.append(f"meta.{key}={value}")
    for key, value in sorted(cfg.to_dict().items()):
        lines.append(f"config.{key}={value}")
    lines.append("vocab.src=" + " ".join(src_vocab.all_tokens()))
    lines.append("vocab.tgt=" + " ".join(tgt_vocab.all_tokens()))
    names = store.names()
    for name in names:
        t = store[name]
        shape = ",".join(str(s) for s in t.data.shape) or "scalar"
        flag = 1 if store.is_trainable(name) else 0
        lines.append(f"param={name} {flag} {shape}")
    lines.append("DATA")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("utf-8"))
        for name in names:
            f.write(store[name].data.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, Vocab, Vocab,
                                               ParameterStore, dict]:
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.index(b"DATA\n")
    header = raw[:sep].decode("utf-8").splitlines()
    blob = raw[sep + len(b"DATA\n"):]
    if not header or not header[0].startswith(CKPT_MAGIC):
        raise ValueError("not a checkpoint file (bad magic)")
    version = int(header[0].split()[1])
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")

    meta: dict = {}
    cfg_kv: dict = {}
    vocabs: dict[str, Vocab] = {}
    params: list[tuple[str, bool, tuple[int, ...]]] = []
    for line in header[1:]:
        if line.startswith("meta."):
            k, v = line[len("meta."):].split("=", 1)
            meta[k] = v
        elif line.startswith("config."):
            k, v = line[len("config."):].split("=", 1)
            cfg_kv[k] = v
        elif line.startswith("vocab.src="):
            vocabs["src"] = Vocab.from_token_list(line.split("=", 1)[1].split())
        elif line.startswith("vocab.tgt="):
            vocabs["tgt"] = Vocab.from_token_list(line.split("=", 1)[1].split())
        elif line.startswith("param="):
            name, flag, shape_s = line[len("param="):].split(" ")
            shape = () if shape_s == "scalar" else tuple(
                int(s) for s in shape_s.split(","))
            params.append((name, flag == "1", shape))

    fields = ModelConfig.__dataclass_fields__
    typed = {}
    for k, v in cfg_kv.items():
        if k not in fields:
            continue
        ftype = fields[k].type
        typed[k] = float(v) if "float" in str(ftype) else int(v)
    cfg = ModelConfig.from_dict(typed)

    store = ParameterStore()
    offset = 0
    for name, trainable, shape in params:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += n * 8
        store.add(name, arr.copy(), trainable=trainable)
    return cfg, vocabs["src"], vocabs["tgt"], store, meta
