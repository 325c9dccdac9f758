#!/usr/bin/env python3
"""Run the grounded-embedding experiment on a synthetic grouped corpus.

Generates the default 5-group corpus with foley and word-relatedness pairs,
runs the full pipeline over a few seeds, and prints the aggregate metrics
next to an untrained baseline so the effect of training is visible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from soundvec.corpus import save_corpus
from soundvec.embed import TrainConfig, load_embeddings
from soundvec.pipeline import PipelineConfig, run_pipeline
from soundvec.rank import nearest_neighbors
from soundvec.synth import (
    SyntheticSpec,
    generate_synthetic,
    make_foley_pairs,
    make_wordsim_pairs,
    synthetic_feature_schema,
)


def write_inputs(out: Path, spec: SyntheticSpec) -> dict[str, Path]:
    records, _ = generate_synthetic(spec)
    corpus = out / "corpus.jsonl"
    save_corpus(records, corpus)
    foley = out / "foley.tsv"
    with foley.open("w", encoding="utf-8") as fh:
        for pair in make_foley_pairs(spec, 20):
            fh.write(f"{pair.target}\t{pair.technique}\n")
    wordsim = out / "wordsim.tsv"
    with wordsim.open("w", encoding="utf-8") as fh:
        for pair in make_wordsim_pairs(spec, 40):
            fh.write(f"{pair.word_a}\t{pair.word_b}\t{pair.human_score}\n")
    return {"corpus": corpus, "foley": foley, "wordsim": wordsim}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="synthetic-run", help="work directory")
    ap.add_argument("--seeds", default="0,1,2", help="comma-separated train seeds")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--dims", type=int, default=16)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec()
    inputs = write_inputs(out, spec)

    config = PipelineConfig(
        corpus_path=str(inputs["corpus"]),
        out_dir=str(out / "runs"),
        schema=synthetic_feature_schema(spec),
        k=spec.groups,
        dims=args.dims,
        train=TrainConfig(epochs=args.epochs, init="random"),
        eval_ks=[1, 10],
        foley_path=str(inputs["foley"]),
        wordsim_paths={"synthetic": str(inputs["wordsim"])},
        seeds=[int(s) for s in args.seeds.split(",")],
    )
    run_dir = run_pipeline(config)
    metrics = json.loads((run_dir / "metrics.json").read_text(encoding="utf-8"))
    agg = metrics["aggregate"]

    print(f"run directory: {run_dir}")
    for k, st in sorted(agg["retrieval"]["recall_at"].items(), key=lambda kv: int(kv[0])):
        print(f"{'recall@' + k + ':':<17} {st['mean']:.3f} +/- {st['std']:.3f}")
    st = agg["foley"]["mean_rank"]
    chance = metrics["per_seed"][str(config.seeds[0])]["foley"]["chance_rank"]
    print(f"{'foley mean rank:':<17} {st['mean']:.2f} +/- {st['std']:.2f} (chance {chance:.1f})")
    st = agg["wordsim"]["synthetic"]["spearman"]
    print(f"{'wordsim rho:':<17} {st['mean']:.3f} +/- {st['std']:.3f}")
    print(f"{'final loss:':<17} {agg['final_train_loss']['mean']:.4f}")

    model = load_embeddings(run_dir / f"embeddings-seed{config.seeds[0]}.txt")
    probe = model.vocab.words[0]
    pretty = ", ".join(
        f"{w} ({score:.2f})" for w, score in nearest_neighbors(probe, model, 5)
    )
    print(f"neighbors of {probe!r}: {pretty}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
