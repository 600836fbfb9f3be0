"""Command-line experiment lifecycle.

Subcommands: gen-data | pretrain | finetune | translate | evaluate |
inspect-cache | sweep. Every flag has a config-file equivalent (JSON via
--config); precedence is flag > file > default. Each run writes its outputs
plus a manifest. Exit codes: 0 success, 1 usage error, 2 data/contract error.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import __version__
from . import cache as cachemod
from . import experiment as exp
from . import metrics as metricsmod
from . import training as trainmod
from .cache import Cache
from .corpus import (CorpusFormatError, DocumentCorpus, SynthConfig,
                     SyntheticGenerator, build_vocab, load_corpus,
                     load_lexicon, save_corpus, save_lexicon)
from .decoding import PositionHistogram, translate_document
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1, not argparse's default 2
        usage = self.format_usage()
        raise UsageError(f"{message}\n{usage}")


def _write_manifest(out_path: Path, subcommand: str, resolved: dict,
                    seed, inputs: list[str], outputs: list[str]):
    manifest = {
        "subcommand": subcommand,
        "config": resolved,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "code_version": __version__,
    }
    path = out_path / "manifest.json" if out_path.is_dir() \
        else out_path.with_name(out_path.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """flag > config file > default."""
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text())
    resolved = {}
    for key, default in defaults.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _add(parser, *names, **kw):
    kw.setdefault("default", None)
    parser.add_argument(*names, **kw)


def _load_source_documents(path: str) -> list[list[list[str]]]:
    """Corpus file or source-only file (no tabs) -> source token documents."""
    docs: list[list[list[str]]] = []
    current: list[list[str]] = []
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.rstrip("\n")
            if not line.strip():
                if current:
                    docs.append(current)
                    current = []
                continue
            src = line.split("\t", 1)[0].split()
            current.append(src)
    if current:
        docs.append(current)
    if not docs:
        raise CorpusFormatError("no documents in input file")
    return docs


# -- subcommand handlers ------------------------------------------------------


def _cmd_gen_data(args) -> int:
    defaults = dict(seed=0, train_docs=2000, tune_docs=100, test_docs=200,
                    src_vocab=60, tgt_vocab=84, sentences_per_doc=6,
                    len_min=3, len_max=6, ambiguous_types=8, amb_per_doc=1,
                    out="data")
    r = _resolve(args, defaults)
    synth = SynthConfig(
        src_vocab_size=r["src_vocab"], tgt_vocab_size=r["tgt_vocab"],
        n_documents=r["train_docs"], sentences_per_document=r["sentences_per_doc"],
        sentence_len_range=(r["len_min"], r["len_max"]),
        n_ambiguous_types=r["ambiguous_types"], amb_per_document=r["amb_per_doc"],
        seed=r["seed"])
    gen = SyntheticGenerator(synth)
    rng = random.Random(r["seed"])
    out = Path(r["out"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, n in (("train", r["train_docs"]), ("tune", r["tune_docs"]),
                    ("test", r["test_docs"])):
        corpus = gen.generate_documents(n, rng)
        save_corpus(corpus, out / f"{name}.txt")
        outputs.append(str(out / f"{name}.txt"))
    save_lexicon(gen.lexicon, out / "lexicon.tsv")
    outputs.append(str(out / "lexicon.tsv"))
    _write_manifest(out, "gen-data", r, r["seed"], [], outputs)
    return 0


def _cmd_pretrain(args) -> int:
    defaults = dict(data=None, tune=None, out="base.ckpt", epochs=5,
                    batch_size=8, lr=0.5, optimizer="sgd", clip_norm=5.0,
                    seed=0, dims=32, emb_dim=24, max_sentence_len=80,
                    vocab_size=200, dropout=0.0, cache_size=25, beam=10)
    r = _resolve(args, defaults)
    if not r["data"]:
        raise UsageError("--data is required")
    corpus = load_corpus(r["data"])
    tune = load_corpus(r["tune"]) if r["tune"] else None
    cfg = ModelConfig(d_emb=r["emb_dim"], d=r["dims"],
                      cache_capacity=r["cache_size"],
                      max_sentence_len=r["max_sentence_len"],
                      beam_width=r["beam"], dropout_rate=r["dropout"])
    cfg.validate()
    tcfg = TrainConfig(optimizer=r["optimizer"], lr=r["lr"], epochs=r["epochs"],
                       batch_size=r["batch_size"], clip_norm=r["clip_norm"],
                       seed=r["seed"])
    src_vocab, tgt_vocab = build_vocab(corpus, r["vocab_size"])
    store, records = trainmod.pretrain(corpus, tcfg, cfg, src_vocab, tgt_vocab,
                                       tune_corpus=tune)
    out = Path(r["out"])
    save_checkpoint(out, cfg, src_vocab, tgt_vocab, store,
                    meta={"pass": "pretrain"})
    log_path = out.with_name(out.name + ".log.jsonl")
    with open(log_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec.as_dict()) + "\n")
    _write_manifest(out, "pretrain", r, r["seed"],
                    [r["data"]] + ([r["tune"]] if r["tune"] else []),
                    [str(out), str(log_path)])
    return 0


def _cmd_finetune(args) -> int:
    defaults = dict(data=None, tune=None, model=None, out="tuned.ckpt",
                    fusion="deep", cache_size=25, epochs=3, batch_size=8,
                    lr=0.5, optimizer="sgd", clip_norm=5.0, seed=0)
    r = _resolve(args, defaults)
    if not r["data"] or not r["model"]:
        raise UsageError("--data and --model are required")
    corpus = load_corpus(r["data"])
    tune = load_corpus(r["tune"]) if r["tune"] else None
    cfg, src_vocab, tgt_vocab, store, meta = load_checkpoint(r["model"])
    cfg.cache_capacity = r["cache_size"]
    cfg.validate()
    tcfg = TrainConfig(optimizer=r["optimizer"], lr=r["lr"], epochs=r["epochs"],
                       batch_size=r["batch_size"], clip_norm=r["clip_norm"],
                       seed=r["seed"])
    records = trainmod.finetune(corpus, store, tcfg, cfg, src_vocab, tgt_vocab,
                                fusion=r["fusion"], tune_corpus=tune)
    out = Path(r["out"])
    save_checkpoint(out, cfg, src_vocab, tgt_vocab, store,
                    meta={"pass": "finetune", "fusion": r["fusion"]})
    log_path = out.with_name(out.name + ".log.jsonl")
    with open(log_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec.as_dict()) + "\n")
    _write_manifest(out, "finetune", r, r["seed"],
                    [r["data"], r["model"]], [str(out), str(log_path)])
    return 0


def _translate_docs(r: dict, store, cfg, src_vocab, tgt_vocab,
                    source_docs) -> tuple[list, PositionHistogram | None]:
    capacity = r["cache_size"] if r["cache_size"] is not None \
        else cfg.cache_capacity
    cfg.cache_capacity = capacity
    fusion = r["fusion"]
    histogram = (PositionHistogram(capacity)
                 if fusion != "none" and capacity > 0 else None)
    shared = Cache(capacity) if r["persist_cache_across_docs"] else None
    hyp_docs = []
    for doc in source_docs:
        sentences = [src_vocab.encode(src) for src in doc]
        hyps = translate_document(
            store, cfg, sentences, fusion_mode=fusion, cache=shared,
            histogram=histogram, beam_width=r["beam"], max_len=r["max_len"],
            averaging=(r["overwrite_averaging"] != "off"),
            length_normalize=bool(r["length_normalize"]))
        hyp_docs.append([tgt_vocab.decode(h.tokens) for h in hyps])
    return hyp_docs, histogram


_TRANSLATE_DEFAULTS = dict(model=None, input=None, out="translations.txt",
                           fusion="none", cache_size=None, beam=None,
                           max_len=None, persist_cache_across_docs=False,
                           overwrite_averaging="on", length_normalize=False,
                           histogram=None)


def _cmd_translate(args) -> int:
    r = _resolve(args, _TRANSLATE_DEFAULTS)
    if not r["model"] or not r["input"]:
        raise UsageError("--model and --input are required")
    cfg, src_vocab, tgt_vocab, store, _ = load_checkpoint(r["model"])
    source_docs = _load_source_documents(r["input"])
    if r["beam"] is None:
        r["beam"] = cfg.beam_width
    hyp_docs, histogram = _translate_docs(r, store, cfg, src_vocab, tgt_vocab,
                                          source_docs)
    out = Path(r["out"])
    with open(out, "w", encoding="utf-8") as f:
        for doc in hyp_docs:
            for sent in doc:
                f.write(" ".join(sent) + "\n")
            f.write("\n")
    outputs = [str(out)]
    if r["histogram"] and histogram is not None and histogram.count > 0:
        Path(r["histogram"]).write_text(histogram.report())
        outputs.append(r["histogram"])
    _write_manifest(out, "translate", r, None, [r["model"], r["input"]], outputs)
    return 0


def _cmd_evaluate(args) -> int:
    defaults = dict(src=None, hyp=None, ref=None, lexicon=None,
                    out="metrics.jsonl", smooth=True)
    r = _resolve(args, defaults)
    for key in ("src", "hyp", "ref"):
        if not r[key]:
            raise UsageError(f"--{key} is required")
    source_docs = _load_source_documents(r["src"])
    hyp_docs = _load_source_documents(r["hyp"])
    ref_corpus = load_corpus(r["ref"])
    ref_docs = [[tgt for _, tgt in doc] for doc in ref_corpus.documents]
    flat_hyp = [s for d in hyp_docs for s in d]
    flat_ref = [s for d in ref_docs for s in d]
    record: dict = {"bleu": metricsmod.bleu(flat_hyp, flat_ref,
                                            smooth=bool(r["smooth"]))}
    if r["lexicon"]:
        lexicon = load_lexicon(r["lexicon"])
        amb = metricsmod.ambiguous_accuracy(source_docs, hyp_docs, lexicon)
        cons = metricsmod.consistency_rate(source_docs, hyp_docs, lexicon)
        record.update({
            "ambiguous_later_accuracy": amb.later_accuracy,
            "ambiguous_first_accuracy": amb.first_accuracy,
            "n_later_occurrences": amb.n_later,
            "consistency_rate": cons.rate,
            "n_repeated_types": cons.n_repeated_types,
            "skipped_unknown_tokens": cons.skipped_unknown,
        })
    out = Path(r["out"])
    with open(out, "w") as f:
        f.write(json.dumps(record) + "\n")
    print(json.dumps(record))
    _write_manifest(out, "evaluate", r, None,
                    [r[k] for k in ("src", "hyp", "ref", "lexicon") if r[k]],
                    [str(out)])
    return 0


def _cmd_inspect_cache(args) -> int:
    defaults = dict(model=None, input=None, doc_index=0, out="cache_dump.jsonl",
                    fusion="deep", cache_size=None, beam=None, max_len=None,
                    full_vectors=False)
    r = _resolve(args, defaults)
    if not r["model"] or not r["input"]:
        raise UsageError("--model and --input are required")
    cfg, src_vocab, tgt_vocab, store, _ = load_checkpoint(r["model"])
    source_docs = _load_source_documents(r["input"])
    if r["doc_index"] >= len(source_docs):
        raise CorpusFormatError(f"doc index {r['doc_index']} out of range")
    if r["cache_size"] is not None:
        cfg.cache_capacity = r["cache_size"]
    doc = source_docs[r["doc_index"]]
    cache = Cache(cfg.cache_capacity)
    translate_document(store, cfg, [src_vocab.encode(s) for s in doc],
                       fusion_mode=r["fusion"], cache=cache,
                       beam_width=r["beam"], max_len=r["max_len"])
    records = cachemod.dump_records(cache, tgt_vocab.token,
                                    full_vectors=bool(r["full_vectors"]))
    out = Path(r["out"])
    with open(out, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    _write_manifest(out, "inspect-cache", r, None,
                    [r["model"], r["input"]], [str(out)])
    return 0


def _cmd_sweep(args) -> int:
    defaults = dict(model=None, input=None, ref=None, lexicon=None,
                    cache_sizes="0,4,8,16,25", fusion="deep", beam=None,
                    max_len=None, out="sweep.jsonl",
                    persist_cache_across_docs=False, overwrite_averaging="on",
                    length_normalize=False)
    r = _resolve(args, defaults)
    if not r["model"] or not r["input"] or not r["ref"]:
        raise UsageError("--model, --input and --ref are required")
    cfg, src_vocab, tgt_vocab, store, _ = load_checkpoint(r["model"])
    source_docs = _load_source_documents(r["input"])
    ref_corpus = load_corpus(r["ref"])
    ref_docs = [[tgt for _, tgt in doc] for doc in ref_corpus.documents]
    lexicon = load_lexicon(r["lexicon"]) if r["lexicon"] else None
    sizes = [int(s) for s in str(r["cache_sizes"]).split(",")]
    if r["beam"] is None:
        r["beam"] = cfg.beam_width
    out = Path(r["out"])
    with open(out, "w") as f:
        for size in sizes:
            rr = dict(r, cache_size=size, histogram=None)
            rr["fusion"] = r["fusion"] if size > 0 else "none"
            hyp_docs, _ = _translate_docs(rr, store, cfg, src_vocab,
                                          tgt_vocab, source_docs)
            flat_hyp = [s for d in hyp_docs for s in d]
            flat_ref = [s for d in ref_docs for s in d]
            record = {"cache_size": size,
                      "bleu": metricsmod.bleu(flat_hyp, flat_ref)}
            if lexicon is not None:
                amb = metricsmod.ambiguous_accuracy(source_docs, hyp_docs,
                                                    lexicon)
                cons = metricsmod.consistency_rate(source_docs, hyp_docs,
                                                   lexicon)
                record["ambiguous_later_accuracy"] = amb.later_accuracy
                record["consistency_rate"] = cons.rate
            f.write(json.dumps(record) + "\n")
            print(json.dumps(record))
    _write_manifest(out, "sweep", r, None,
                    [r[k] for k in ("model", "input", "ref", "lexicon") if r[k]],
                    [str(out)])
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="cachenmt", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def new(name, handler):
        p = sub.add_parser(name)
        p.set_defaults(handler=handler)
        _add(p, "--config", help="JSON file with flag equivalents")
        return p

    p = new("gen-data", _cmd_gen_data)
    _add(p, "--seed", type=int)
    _add(p, "--out")
    _add(p, "--train-docs", type=int)
    _add(p, "--tune-docs", type=int)
    _add(p, "--test-docs", type=int)
    _add(p, "--src-vocab", type=int)
    _add(p, "--tgt-vocab", type=int)
    _add(p, "--sentences-per-doc", type=int)
    _add(p, "--len-min", type=int)
    _add(p, "--len-max", type=int)
    _add(p, "--ambiguous-types", type=int)
    _add(p, "--amb-per-doc", type=int)

    p = new("pretrain", _cmd_pretrain)
    _add(p, "--data")
    _add(p, "--tune")
    _add(p, "--out")
    _add(p, "--epochs", type=int)
    _add(p, "--batch-size", type=int)
    _add(p, "--lr", type=float)
    _add(p, "--optimizer", choices=["sgd", "adadelta"])
    _add(p, "--clip-norm", type=float)
    _add(p, "--seed", type=int)
    _add(p, "--dims", type=int)
    _add(p, "--emb-dim", type=int)
    _add(p, "--max-sentence-len", type=int)
    _add(p, "--vocab-size", type=int)
    _add(p, "--dropout", type=float)
    _add(p, "--cache-size", type=int)
    _add(p, "--beam", type=int)

    p = new("finetune", _cmd_finetune)
    _add(p, "--data")
    _add(p, "--tune")
    _add(p, "--model")
    _add(p, "--out")
    _add(p, "--fusion", choices=["deep", "shallow"])
    _add(p, "--cache-size", type=int)
    _add(p, "--epochs", type=int)
    _add(p, "--batch-size", type=int)
    _add(p, "--lr", type=float)
    _add(p, "--optimizer", choices=["sgd", "adadelta"])
    _add(p, "--clip-norm", type=float)
    _add(p, "--seed", type=int)

    p = new("translate", _cmd_translate)
    _add(p, "--model")
    _add(p, "--input")
    _add(p, "--out")
    _add(p, "--fusion", choices=["none", "deep", "shallow"])
    _add(p, "--cache-size", type=int)
    _add(p, "--beam", type=int)
    _add(p, "--max-len", type=int)
    _add(p, "--persist-cache-across-docs", action="store_const", const=True)
    _add(p, "--overwrite-averaging", choices=["on", "off"])
    _add(p, "--length-normalize", action="store_const", const=True)
    _add(p, "--histogram")

    p = new("evaluate", _cmd_evaluate)
    _add(p, "--src")
    _add(p, "--hyp")
    _add(p, "--ref")
    _add(p, "--lexicon")
    _add(p, "--out")
    _add(p, "--smooth", type=int)

    p = new("inspect-cache", _cmd_inspect_cache)
    _add(p, "--model")
    _add(p, "--input")
    _add(p, "--doc-index", type=int)
    _add(p, "--out")
    _add(p, "--fusion", choices=["none", "deep", "shallow"])
    _add(p, "--cache-size", type=int)
    _add(p, "--beam", type=int)
    _add(p, "--max-len", type=int)
    _add(p, "--full-vectors", action="store_const", const=True)

    p = new("sweep", _cmd_sweep)
    _add(p, "--model")
    _add(p, "--input")
    _add(p, "--ref")
    _add(p, "--lexicon")
    _add(p, "--cache-sizes")
    _add(p, "--fusion", choices=["deep", "shallow"])
    _add(p, "--beam", type=int)
    _add(p, "--max-len", type=int)
    _add(p, "--out")
    _add(p, "--overwrite-averaging", choices=["on", "off"])

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage())
        return args.handler(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (CorpusFormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
