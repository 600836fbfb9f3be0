"""Evaluation: corpus BLEU, document translation consistency, and
ambiguous-token accuracy against the synthetic ground-truth lexicon."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import Lexicon

TokenDocs = list[list[list[str]]]  # documents -> sentences -> tokens


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: list[list[str]], references: list[list[str]],
         max_n: int = 4, smooth: bool = True) -> float:
    """Corpus-level case-insensitive 4-gram BLEU with brevity penalty.

    smooth=True adds 1 to numerator and denominator for n >= 2 (desk-scale
    default); smooth=False is the exact NIST-style computation.
    """
    if not hypotheses:
        raise ValueError("empty corpus")
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference list length mismatch")

    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = [t.lower() for t in hyp]
        ref = [t.lower() for t in ref]
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h_counts = _ngrams(hyp, n)
            r_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r_counts[g]) for g, c in h_counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)

    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        num, den = matches[n - 1], totals[n - 1]
        if smooth and n >= 2:
            num, den = num + 1, den + 1
        if num == 0 or den == 0:
            return 0.0
        log_sum += math.log(num / den)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_sum / max_n)


@dataclass
class ConsistencyResult:
    rate: float
    n_repeated_types: int
    n_consistent: int
    skipped_unknown: int  # source tokens outside the lexicon
    unresolved: int       # occurrences whose sentence shows no or >1 candidate


def consistency_rate(source_docs: TokenDocs, hyp_docs: TokenDocs,
                     lexicon: Lexicon) -> ConsistencyResult:
    """Fraction of repeated source types translated identically per document.

    A type's occurrence resolves to whichever of its lexicon candidates
    appears in the corresponding hypothesis sentence; zero or multiple
    candidates leave the occurrence unresolved and the type inconsistent.
    """
    if len(source_docs) != len(hyp_docs):
        raise ValueError("documents not aligned 1:1")
    n_types = n_consistent = skipped = unresolved = 0
    for src_doc, hyp_doc in zip(source_docs, hyp_docs):
        occurrences: dict[str, list[int]] = {}
        for si, sent in enumerate(src_doc):
            for tok in sent:
                if tok not in lexicon:
                    skipped += 1
                    continue
                occurrences.setdefault(tok, []).append(si)
        for tok, sents in occurrences.items():
            if len(sents) < 2:
                continue
            n_types += 1
            candidates = set(lexicon.targets(tok))
            resolved: list[str | None] = []
            for si in sents:
                present = candidates.intersection(hyp_doc[si])
                if len(present) == 1:
                    resolved.append(next(iter(present)))
                else:
                    resolved.append(None)
                    unresolved += 1
            if None not in resolved and len(set(resolved)) == 1:
                n_consistent += 1
    rate = n_consistent / n_types if n_types else 1.0
    return ConsistencyResult(rate, n_types, n_consistent, skipped, unresolved)


@dataclass
class AmbiguityResult:
    later_accuracy: float
    first_accuracy: float
    n_later: int
    n_first: int
    per_type: dict[str, tuple[int, int]] = field(default_factory=dict)


def ambiguous_accuracy(source_docs: TokenDocs, hyp_docs: TokenDocs,
                       lexicon: Lexicon) -> AmbiguityResult:
    """Sense accuracy for ambiguous source types, split into marker-bearing
    first occurrences and marker-free later occurrences.

    An occurrence counts as correct when the hypothesis sentence contains
    the correct-sense target and not the wrong-sense one.
    """
    if len(source_docs) != len(hyp_docs):
        raise ValueError("documents not aligned 1:1")
    first_hits = first_total = later_hits = later_total = 0
    per_type: dict[str, list[int]] = {}
    for src_doc, hyp_doc in zip(source_docs, hyp_docs):
        doc_tokens = {t for sent in src_doc for t in sent}
        for si, sent in enumerate(src_doc):
            for tok in sorted(set(sent)):
                if not lexicon.is_ambiguous(tok):
                    continue
                sense_target = None
                for marker in lexicon.markers(tok):
                    if marker in doc_tokens:
                        sense_target = lexicon.target_for_marker(tok, marker)
                        break
                if sense_target is None:
                    continue  # no marker in document: sense unknowable, skip
                wrong = [t for t in lexicon.targets(tok) if t != sense_target]
                hyp = hyp_doc[si]
                correct = sense_target in hyp and not any(w in hyp for w in wrong)
                marked_here = any(m in sent for m in lexicon.markers(tok))
                stats = per_type.setdefault(tok, [0, 0])
                if marked_here:
                    first_total += 1
                    first_hits += int(correct)
                else:
                    later_total += 1
                    later_hits += int(correct)
                    stats[0] += int(correct)
                    stats[1] += 1
    return AmbiguityResult(
        later_accuracy=later_hits / later_total if later_total else 0.0,
        first_accuracy=first_hits / first_total if first_total else 0.0,
        n_later=later_total, n_first=first_total,
        per_type={k: (v[0], v[1]) for k, v in per_type.items()},
    )
