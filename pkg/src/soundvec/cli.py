"""Command-line interface.

Subcommands cover each pipeline stage individually (ingest, synth,
cluster, train, eval-*) plus `pipeline` for a full configured run and
`neighbors` for embedding inspection.  Exit codes: 0 success, 1 usage
error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .cluster import assign_corpus, kmeans_fit, load_cluster_model, save_cluster_model
from .corpus import (
    build_vocabulary,
    load_corpus,
    load_foley_pairs,
    load_wordsim_pairs,
    save_corpus,
)
from .embed import (
    TrainConfig,
    init_embeddings,
    load_embeddings,
    load_pretrained,
    save_embeddings,
    train,
    train_tag_cbow,
)
from .errors import DataError, NumericError
from .features import (
    DEFAULT_DESCRIPTOR_DIMS,
    FeatureSchema,
    apply_standardizer,
    fit_standardizer,
    summarize_corpus,
)
from .pipeline import load_config, run_from_manifest, run_pipeline
from .rank import eval_foley, eval_retrieval, eval_wordsim, nearest_neighbors
from .synth import (
    SyntheticSpec,
    generate_synthetic,
    make_foley_pairs,
    make_wordsim_pairs,
)

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract wants 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser, root: bool) -> None:
    # on subparsers the defaults are suppressed so they never clobber a
    # value the user passed before the subcommand name
    d = None if root else argparse.SUPPRESS
    parser.add_argument("--config", default=d, help="JSON or TOML config file")
    parser.add_argument("--seed", type=int, default=d, help="override the default seed")
    parser.add_argument("--out", default=d, help="output directory")
    parser.add_argument(
        "--quiet",
        action="store_true",
        default=False if root else argparse.SUPPRESS,
        help="suppress progress logging",
    )


def parse_schema_arg(text: str) -> dict[str, int]:
    """Parse `name:dims,name:dims` into a descriptor-dims mapping."""
    out: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, dims = part.partition(":")
        if not sep or not name.strip():
            raise DataError(f"bad schema entry {part!r}; expected name:dims")
        try:
            out[name.strip()] = int(dims)
        except ValueError:
            raise DataError(f"bad schema dims in {part!r}") from None
    if not out:
        raise DataError("schema string holds no entries")
    return out


def _schema_from(args: argparse.Namespace) -> FeatureSchema:
    if getattr(args, "schema", None):
        return FeatureSchema(descriptor_dims=parse_schema_arg(args.schema))
    return FeatureSchema(descriptor_dims=dict(DEFAULT_DESCRIPTOR_DIMS))


def _need_out(args: argparse.Namespace) -> Path:
    if not args.out:
        raise DataError("this command needs --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args: argparse.Namespace, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def _write_json(path: Path, obj) -> None:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %s", path)


def _print_table(rows: list[tuple[str, str]]) -> None:
    width = max(len(label) for label, _ in rows)
    for label, value in rows:
        print(f"{label:<{width}}  {value}")


# ---------------------------------------------------------------- commands


def cmd_ingest(args: argparse.Namespace) -> int:
    records = load_corpus(args.corpus)
    tags = {t for r in records for t in r.tags}
    with_features = sum(
        1 for r in records if r.feature_vector is not None or r.descriptors
    )
    _print_table(
        [
            ("sounds", str(len(records))),
            ("unique tags", str(len(tags))),
            ("with audio features", str(with_features)),
        ]
    )
    if args.out:
        out = _need_out(args)
        save_corpus(records, out / "corpus.jsonl")
        log.info("wrote %s", out / "corpus.jsonl")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    out = _need_out(args)
    spec = SyntheticSpec(
        groups=args.groups,
        tags_per_group=args.tags_per_group,
        sounds_per_group=args.sounds_per_group,
        tags_per_sound=args.tags_per_sound,
        caption_tokens_per_sound=args.caption_tokens,
        feature_dim=args.feature_dim,
        group_separation=args.separation,
        noise_std=args.noise_std,
        seed=_seed(args),
    )
    try:
        records, groups = generate_synthetic(spec)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_corpus(records, out / "corpus.jsonl")
    _write_json(out / "groups.json", groups)
    if args.foley_pairs > 0:
        pairs = make_foley_pairs(spec, args.foley_pairs)
        with (out / "foley.tsv").open("w", encoding="utf-8") as fh:
            for p in pairs:
                fh.write(f"{p.target}\t{p.technique}\n")
    if args.wordsim_pairs > 0:
        pairs = make_wordsim_pairs(spec, args.wordsim_pairs)
        with (out / "wordsim.tsv").open("w", encoding="utf-8") as fh:
            for p in pairs:
                fh.write(f"{p.word_a}\t{p.word_b}\t{p.human_score}\n")
    print(f"wrote {len(records)} sounds across {spec.groups} groups to {out}")
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    out = _need_out(args)
    records = load_corpus(args.corpus)
    schema = _schema_from(args)
    X = summarize_corpus(records, schema)
    standardizer = fit_standardizer(X)
    Xs = apply_standardizer(standardizer, X)
    model = kmeans_fit(
        Xs,
        args.k,
        seed=_seed(args),
        max_iter=args.max_iter,
        tol=args.tol,
        standardizer=standardizer,
    )
    assignments = assign_corpus(model, records, schema)
    save_cluster_model(model, out / "cluster-model.json")
    _write_json(out / "assignments.json", assignments)
    _print_table(
        [
            ("k", str(model.k)),
            ("inertia", f"{model.inertia:.6f}"),
            ("iterations", str(model.iterations_run)),
        ]
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    out = _need_out(args)
    records = load_corpus(args.corpus)
    config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        momentum=args.momentum,
        seed=_seed(args),
        init=args.init,
        lr_decay=args.lr_decay,
    )
    pretrained = None
    if args.pretrained:
        pretrained = load_pretrained(args.pretrained, args.dims)
    elif config.init == "pretrained":
        raise DataError("--init pretrained needs --pretrained VECTORS")
    words = pretrained.words() if pretrained is not None else None
    vocab = build_vocabulary(records, pretrained_words=words)

    if args.objective == "tag-cbow":
        model, trace = train_tag_cbow(records, vocab, args.dims, config, pretrained)
    else:
        if not args.assignments:
            raise DataError("objective 'cluster' needs --assignments from `cluster`")
        try:
            raw = json.loads(Path(args.assignments).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read assignments: {exc}") from exc
        if not isinstance(raw, dict) or not raw:
            raise DataError("assignments file must be a nonempty id->cluster map")
        assignments = {str(k): int(v) for k, v in raw.items()}
        k = args.k if args.k else max(assignments.values()) + 1
        model = init_embeddings(
            vocab, args.dims, config.init, pretrained, k, config.seed
        )
        model, trace = train(records, assignments, model, config)

    save_embeddings(model, out / "embeddings.txt")
    _write_json(out / "train-trace.json", {"epoch_mean_loss": trace})
    if trace:
        _print_table(
            [
                ("epochs", str(len(trace))),
                ("first epoch loss", f"{trace[0]:.6f}"),
                ("final epoch loss", f"{trace[-1]:.6f}"),
            ]
        )
    return 0


def cmd_eval_retrieval(args: argparse.Namespace) -> int:
    records = load_corpus(args.corpus)
    model = load_embeddings(args.embeddings)
    ks = sorted({int(k) for k in args.ks.split(",") if k.strip()})
    if not ks:
        raise DataError("--ks holds no values")
    report = eval_retrieval(records, model, ks=ks)
    rows = [(f"recall@{k}", f"{100.0 * report.recall_at[k]:.2f}%") for k in ks]
    rows.append(("queries", str(report.num_queries)))
    rows.append(("skipped", str(report.num_skipped_queries)))
    _print_table(rows)
    if args.out:
        out = _need_out(args)
        _write_json(
            out / "retrieval.json",
            {
                "recall_at": {str(k): report.recall_at[k] for k in ks},
                "num_queries": report.num_queries,
                "num_skipped_queries": report.num_skipped_queries,
            },
        )
    return 0


def cmd_eval_foley(args: argparse.Namespace) -> int:
    pairs = load_foley_pairs(args.pairs)
    model = load_embeddings(args.embeddings)
    report = eval_foley(pairs, model)
    _print_table(
        [
            ("mean rank", f"{report.mean_rank:.2f}"),
            ("chance rank", f"{report.chance_rank:.2f}"),
            ("pairs", str(len(report.per_pair_ranks))),
            ("skipped", str(report.num_skipped)),
        ]
    )
    if args.out:
        out = _need_out(args)
        _write_json(
            out / "foley.json",
            {
                "mean_rank": report.mean_rank,
                "chance_rank": report.chance_rank,
                "per_pair_ranks": report.per_pair_ranks,
                "num_skipped": report.num_skipped,
            },
        )
    return 0


def cmd_eval_wordsim(args: argparse.Namespace) -> int:
    pairs = load_wordsim_pairs(args.pairs)
    model = load_embeddings(args.embeddings)
    report = eval_wordsim(pairs, model)
    _print_table(
        [
            ("spearman", f"{report.spearman_rho:.4f}"),
            ("pairs used", str(report.pairs_used)),
            ("skipped", str(report.pairs_skipped)),
        ]
    )
    if args.out:
        out = _need_out(args)
        _write_json(
            out / "wordsim.json",
            {
                "spearman": report.spearman_rho,
                "pairs_used": report.pairs_used,
                "pairs_skipped": report.pairs_skipped,
            },
        )
    return 0


def cmd_neighbors(args: argparse.Namespace) -> int:
    model = load_embeddings(args.embeddings)
    for word, score in nearest_neighbors(args.word, model, args.n):
        print(f"{word}\t{score:.4f}")
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    if args.manifest:
        run_dir = run_from_manifest(args.manifest, out_dir=args.out)
    else:
        if not args.config:
            raise DataError("pipeline needs --config CONFIG or --manifest MANIFEST")
        config = load_config(args.config)
        if args.out:
            config = dataclasses.replace(config, out_dir=args.out)
        if args.std and len(config.seeds) == 1:
            config = dataclasses.replace(config, seeds=list(range(5)))
        run_dir = run_pipeline(config)
    print(f"run directory: {run_dir}")
    metrics_path = run_dir / "metrics.json"
    metrics = json.loads(metrics_path.read_text(encoding="utf-8"))
    agg = metrics.get("aggregate", {})
    rows: list[tuple[str, str]] = []
    for k, st in agg.get("retrieval", {}).get("recall_at", {}).items():
        rows.append(
            (f"recall@{k}", f"{100.0 * st['mean']:.2f}% ± {100.0 * st['std']:.2f}")
        )
    if "foley" in agg:
        st = agg["foley"]["mean_rank"]
        rows.append(("foley mean rank", f"{st['mean']:.2f} ± {st['std']:.2f}"))
    for name, entry in agg.get("wordsim", {}).items():
        st = entry["spearman"]
        rows.append((f"wordsim[{name}]", f"{st['mean']:.4f} ± {st['std']:.4f}"))
    if rows:
        _print_table(rows)
    return 0


# ---------------------------------------------------------------- wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="soundvec", description=__doc__)
    _add_common(parser, root=True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate and normalize a JSONL corpus")
    _add_common(p, root=False)
    p.add_argument("corpus")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a grouped synthetic corpus")
    _add_common(p, root=False)
    p.add_argument("--groups", type=int, default=5)
    p.add_argument("--tags-per-group", type=int, default=20)
    p.add_argument("--sounds-per-group", type=int, default=100)
    p.add_argument("--tags-per-sound", type=int, default=5)
    p.add_argument("--caption-tokens", type=int, default=5)
    p.add_argument("--feature-dim", type=int, default=10)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--foley-pairs", type=int, default=0)
    p.add_argument("--wordsim-pairs", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="standardize features and fit k-means")
    _add_common(p, root=False)
    p.add_argument("corpus")
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--schema", help="descriptor schema as name:dims,name:dims")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="train embeddings on tag bags")
    _add_common(p, root=False)
    p.add_argument("corpus")
    p.add_argument("--assignments", help="id->cluster JSON from `cluster`")
    p.add_argument("--objective", choices=["cluster", "tag-cbow"], default="cluster")
    p.add_argument("--dims", type=int, default=300)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--init", choices=["pretrained", "random"], default="random")
    p.add_argument(
        "--lr-decay", choices=["linear-to-zero", "constant"], default="linear-to-zero"
    )
    p.add_argument("--pretrained", help="word-vector text file")
    p.add_argument("-k", type=int, help="cluster count (default: inferred)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-retrieval", help="caption-to-sound recall@k")
    _add_common(p, root=False)
    p.add_argument("corpus", help="test-pool JSONL corpus")
    p.add_argument("embeddings")
    p.add_argument("--ks", default="1,10,50,100")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("eval-foley", help="rank technique phrases for targets")
    _add_common(p, root=False)
    p.add_argument("pairs", help="target<TAB>technique TSV")
    p.add_argument("embeddings")
    p.set_defaults(func=cmd_eval_foley)

    p = sub.add_parser("eval-wordsim", help="Spearman against human ratings")
    _add_common(p, root=False)
    p.add_argument("pairs", help="word<TAB>word<TAB>score TSV")
    p.add_argument("embeddings")
    p.set_defaults(func=cmd_eval_wordsim)

    p = sub.add_parser("neighbors", help="nearest neighbors of a word")
    _add_common(p, root=False)
    p.add_argument("word")
    p.add_argument("-n", type=int, default=5)
    p.add_argument("--embeddings", required=True)
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("pipeline", help="run the full configured pipeline")
    _add_common(p, root=False)
    p.add_argument("--manifest", help="replay a recorded run")
    p.add_argument(
        "--std",
        action="store_true",
        help="report mean and deviation over 5 seeds when the config lists one",
    )
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (DataError, OSError) as exc:
        log.error("%s", exc)
        return 2
    except (NumericError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
