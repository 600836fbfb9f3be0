#!/usr/bin/env python3
"""Run the full two-pass experiment: generate a document corpus, pretrain the
baseline, fine-tune the cache-fusion gates, and report document-level metrics
for each fusion mode.

Example (the desk-scale headline run, ~20 minutes on one core):

    python scripts/run_experiment.py --docs 2000 --epochs 12 --seed 0

Smaller smoke run:

    python scripts/run_experiment.py --docs 300 --epochs 30 --test-docs 60
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cachenmt.corpus import SynthConfig
from cachenmt.experiment import PipelineConfig, run_pipeline
from cachenmt.model import ModelConfig, save_checkpoint
from cachenmt.training import TrainConfig


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--docs", type=int, default=2000)
    p.add_argument("--tune-docs", type=int, default=100)
    p.add_argument("--test-docs", type=int, default=200)
    p.add_argument("--amb-per-doc", type=int, default=3)
    p.add_argument("--dims", type=int, default=32)
    p.add_argument("--emb-dim", type=int, default=24)
    p.add_argument("--cache-size", type=int, default=25)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--finetune-epochs", type=int, default=4)
    p.add_argument("--optimizer", choices=["sgd", "adadelta"],
                   default="adadelta")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fusion", nargs="+", default=["none", "deep", "shallow"])
    p.add_argument("--save-model", help="write the tuned checkpoint here")
    p.add_argument("--out", help="write one JSON metrics record here")
    return p.parse_args()


def main():
    a = parse_args()
    cfg = PipelineConfig(
        synth=SynthConfig(n_documents=a.docs, amb_per_document=a.amb_per_doc,
                          seed=a.seed),
        model=ModelConfig(d_emb=a.emb_dim, d=a.dims,
                          cache_capacity=a.cache_size,
                          beam_width=a.beam, dropout_rate=a.dropout),
        pretrain=TrainConfig(optimizer=a.optimizer, epochs=a.epochs,
                             seed=a.seed),
        finetune=TrainConfig(optimizer=a.optimizer, epochs=a.finetune_epochs,
                             seed=a.seed),
        tune_docs=a.tune_docs, test_docs=a.test_docs, decode_beam=a.beam,
    )
    t0 = time.time()
    result = run_pipeline(cfg, fusion_modes=tuple(a.fusion), verbose=True)
    elapsed = time.time() - t0
    record = {"seed": a.seed, "elapsed_sec": round(elapsed, 1),
              "metrics": result.metrics}
    if result.histogram is not None:
        record["histogram"] = result.histogram.report()
    print(json.dumps(record, indent=2))
    if a.save_model:
        save_checkpoint(a.save_model, cfg.model, result.src_vocab,
                        result.tgt_vocab, result.store,
                        meta={"seed": a.seed})
    if a.out:
        Path(a.out).write_text(json.dumps(record) + "\n")


if __name__ == "__main__":
    main()
