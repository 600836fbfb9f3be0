"""Document-aware parallel corpora and the synthetic ambiguity testbed.

File format: UTF-8 text, one sentence pair per line as "source<TAB>target"
with space-separated tokens; a blank line terminates each document. The
synthetic generator produces word-for-word translatable documents in which
some source types are ambiguous: their first in-document occurrence comes
with a sense-marker token, later occurrences do not, so resolving them
requires cross-sentence history.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .vocab import Vocab

SentencePair = tuple[list[str], list[str]]
Document = list[SentencePair]


class CorpusFormatError(ValueError):
    pass


@dataclass
class DocumentCorpus:
    documents: list[Document] = field(default_factory=list)

    def __len__(self):
        return len(self.documents)

    def sentence_pairs(self) -> list[SentencePair]:
        return [pair for doc in self.documents for pair in doc]

    def num_sentences(self) -> int:
        return sum(len(doc) for doc in self.documents)


def save_corpus(corpus: DocumentCorpus, path: str | Path):
    with open(path, "w", encoding="utf-8") as f:
        for doc in corpus.documents:
            for src, tgt in doc:
                f.write(" ".join(src) + "\t" + " ".join(tgt) + "\n")
            f.write("\n")


def load_corpus(path: str | Path) -> DocumentCorpus:
    documents: list[Document] = []
    current: Document = []
    prev_blank = True  # file start behaves like a fresh document boundary
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if line.strip() == "":
                if prev_blank:
                    raise CorpusFormatError(
                        f"line {lineno}: duplicate blank line / empty document")
                documents.append(current)
                current = []
                prev_blank = True
                continue
            prev_blank = False
            if "\t" not in line:
                raise CorpusFormatError(f"line {lineno}: missing tab separator")
            src_text, tgt_text = line.split("\t", 1)
            src = src_text.split()
            tgt = tgt_text.split()
            if not src or not tgt:
                raise CorpusFormatError(f"line {lineno}: empty sentence side")
            current.append((src, tgt))
    if current:
        documents.append(current)
    if not documents:
        raise CorpusFormatError("corpus file contains no documents")
    return DocumentCorpus(documents)


def build_vocab(corpus: DocumentCorpus, max_size: int) -> tuple[Vocab, Vocab]:
    """Keep the most frequent tokens per side (ties lexicographic)."""
    src_counts: Counter = Counter()
    tgt_counts: Counter = Counter()
    for src, tgt in corpus.sentence_pairs():
        src_counts.update(src)
        tgt_counts.update(tgt)
    if not src_counts:
        raise ValueError("empty corpus")

    def top(counts: Counter) -> list[str]:
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [tok for tok, _ in ranked[:max(0, max_size - 4)]]

    return Vocab(top(src_counts)), Vocab(top(tgt_counts))


# -- ground-truth lexicon ---------------------------------------------------


@dataclass
class Lexicon:
    """source type -> list of (sense_marker or None, target type)."""

    entries: dict[str, list[tuple[str | None, str]]] = field(default_factory=dict)

    def add(self, source: str, marker: str | None, target: str):
        self.entries.setdefault(source, []).append((marker, target))

    def is_ambiguous(self, source: str) -> bool:
        return len(self.entries.get(source, [])) > 1

    def targets(self, source: str) -> list[str]:
        return [t for _, t in self.entries.get(source, [])]

    def target_for_marker(self, source: str, marker: str) -> str | None:
        for m, t in self.entries.get(source, []):
            if m == marker:
                return t
        return None

    def markers(self, source: str) -> list[str]:
        return [m for m, _ in self.entries.get(source, []) if m is not None]

    def __contains__(self, source: str) -> bool:
        return source in self.entries


def save_lexicon(lexicon: Lexicon, path: str | Path):
    with open(path, "w", encoding="utf-8") as f:
        for source, pairs in lexicon.entries.items():
            for marker, target in pairs:
                f.write(f"{source}\t{marker if marker else '-'}\t{target}\n")


def load_lexicon(path: str | Path) -> Lexicon:
    lex = Lexicon()
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusFormatError(f"line {lineno}: expected 3 tab-separated fields")
            source, marker, target = parts
            lex.add(source, None if marker == "-" else marker, target)
    return lex


# -- synthetic generator ------------------------------------------------------


@dataclass
class SynthConfig:
    src_vocab_size: int = 60
    tgt_vocab_size: int = 84
    n_documents: int = 2000
    sentences_per_document: int = 6
    sentence_len_range: tuple[int, int] = (3, 6)
    n_ambiguous_types: int = 8
    senses_per_type: int = 2  # fixed; makes the 50% ceiling analytic
    amb_per_document: int = 1
    marker_policy: str = "first-occurrence"
    remark_rate: float = 0.35  # chance a later (reduced) mention repeats its marker
    seed: int = 0

    def validate(self):
        if self.senses_per_type != 2:
            raise ValueError("senses_per_type is fixed at 2")
        if self.n_documents <= 0 or self.sentences_per_document <= 0:
            raise ValueError("counts must be positive")
        if self.sentence_len_range[0] < 1:
            raise ValueError("sentence lengths must be >= 1")
        if self.n_filler_types() < 4:
            raise ValueError("vocab too small for requested ambiguous type counts")

    def n_filler_types(self) -> int:
        # source side holds: ambiguous full + reduced forms, 2 markers each,
        # a companion each, fillers, 4 reserved
        return self.src_vocab_size - 4 - 5 * self.n_ambiguous_types


class SyntheticGenerator:
    """Builds a fixed lexicon from the config, then samples documents."""

    def __init__(self, cfg: SynthConfig):
        cfg.validate()
        self.cfg = cfg
        self.lexicon = Lexicon()
        self.amb_types = [f"amb{k}" for k in range(cfg.n_ambiguous_types)]
        self.fillers = [f"src{i}" for i in range(cfg.n_filler_types())]
        # each ambiguous concept has a full form (introduced with a sense
        # marker) and a reduced form used on subsequent mentions, with
        # sense-specific target translations for both
        for k in range(cfg.n_ambiguous_types):
            for s in range(2):
                self.lexicon.add(f"amb{k}", f"mark{k}{s}", f"AMB{k}{'AB'[s]}")
                self.lexicon.add(f"amb{k}r", f"mark{k}{s}", f"AMB{k}{'AB'[s]}r")
        for k in range(cfg.n_ambiguous_types):
            for s in range(2):
                self.lexicon.add(f"mark{k}{s}", None, f"MARK{k}{s}")
            # sense-agreeing companion (a pronoun-like token) following every
            # mention of concept k; gives full and reduced mentions shared
            # local context and must agree with the concept's sense
            for s in range(2):
                self.lexicon.add(f"comp{k}", f"mark{k}{s}", f"COMP{k}{'AB'[s]}")
        for i in range(cfg.n_filler_types()):
            self.lexicon.add(f"src{i}", None, f"tgt{i}")

    def translate_token(self, token: str, sense_by_type: dict[str, int]) -> str:
        pairs = self.lexicon.entries[token]
        if len(pairs) == 1:
            return pairs[0][1]
        return pairs[sense_by_type[token]][1]

    def generate_documents(self, n_docs: int, rng: random.Random) -> DocumentCorpus:
        cfg = self.cfg
        documents = []
        for _ in range(n_docs):
            amb_chosen = rng.sample(self.amb_types,
                                    min(cfg.amb_per_document, len(self.amb_types)))
            senses = {a: rng.randrange(2) for a in amb_chosen}
            for a in amb_chosen:
                senses[a + "r"] = senses[a]
                senses[f"comp{self.amb_types.index(a)}"] = senses[a]
            # schedule: type -> sentence indices; index 0 of the list carries the marker
            n_sent = cfg.sentences_per_document
            schedule: dict[int, list[tuple[str, bool]]] = {i: [] for i in range(n_sent)}
            for a in amb_chosen:
                first = rng.randrange(max(1, n_sent - 2))
                schedule[first].append((a, True))
                later = [i for i in range(first + 1, n_sent) if rng.random() < 0.6]
                if not later and first + 1 < n_sent:
                    later = [rng.randrange(first + 1, n_sent)]
                for i in later:
                    schedule[i].append((a + "r", rng.random() < cfg.remark_rate))
            doc: Document = []
            for i in range(n_sent):
                lo, hi = cfg.sentence_len_range
                length = rng.randint(lo, hi)
                # a sense marker sits directly before its ambiguous token,
                # like a classifier or determiner; shuffle groups, not tokens
                groups: list[list[str]] = []
                n_tokens = 0
                for a, with_marker in schedule[i]:
                    group = [a]
                    if with_marker:
                        group.insert(0, self.lexicon.entries[a][senses[a]][0])
                    k = self.amb_types.index(a[:-1] if a.endswith("r") else a)
                    group.append(f"comp{k}")
                    groups.append(group)
                    n_tokens += len(group)
                while n_tokens < length:
                    groups.append([rng.choice(self.fillers)])
                    n_tokens += 1
                rng.shuffle(groups)
                src = [tok for group in groups for tok in group]
                tgt = [self.translate_token(t, senses) for t in src]
                doc.append((src, tgt))
            documents.append(doc)
        return DocumentCorpus(documents)


def generate_synthetic(cfg: SynthConfig) -> tuple[DocumentCorpus, Lexicon]:
    gen = SyntheticGenerator(cfg)
    rng = random.Random(cfg.seed)
    return gen.generate_documents(cfg.n_documents, rng), gen.lexicon
