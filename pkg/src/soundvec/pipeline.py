"""End-to-end experiment pipeline with content-addressed, replayable runs.

A run executes ingest -> split -> summarize -> standardize -> cluster (or
K selection) -> frozen assignment -> train -> save embeddings -> evaluate,
then writes a manifest holding the full config, versions, artifact hashes
and metrics.  Rerunning the same config (or replaying a manifest) must
reproduce every embedding file and the metric JSON byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import platform
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .cluster import assign_corpus, kmeans_fit, save_cluster_model
from .corpus import (
    SoundRecord,
    build_vocabulary,
    load_corpus,
    load_foley_pairs,
    load_wordsim_pairs,
    split_corpus,
)
from .embed import (
    EmbeddingModel,
    PretrainedVectors,
    TrainConfig,
    init_embeddings,
    load_pretrained,
    save_embeddings,
    train,
    train_tag_cbow,
)
from .errors import DataError
from .features import (
    DEFAULT_DESCRIPTOR_DIMS,
    FeatureSchema,
    apply_standardizer,
    fit_standardizer,
    summarize_corpus,
)
from .rank import eval_foley, eval_retrieval, eval_wordsim

log = logging.getLogger(__name__)

K_SELECT = "select"
OBJECTIVE_CLUSTER = "cluster"
OBJECTIVE_TAG_CBOW = "tag-cbow"

DEFAULT_K_CANDIDATES = (10, 20, 30, 40, 50)
DEFAULT_EVAL_KS = (1, 10, 50, 100)


@dataclass
class PipelineConfig:
    """Everything a run needs; hashable to a stable run-directory name."""

    corpus_path: str
    out_dir: str
    pretrained_path: str | None = None
    foley_path: str | None = None
    wordsim_paths: dict[str, str] = field(default_factory=dict)
    schema: dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_DESCRIPTOR_DIMS)
    )
    k: int | str = K_SELECT
    k_candidates: list[int] = field(default_factory=lambda: list(DEFAULT_K_CANDIDATES))
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    dims: int = 300
    objective: str = OBJECTIVE_CLUSTER
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_ks: list[int] = field(default_factory=lambda: list(DEFAULT_EVAL_KS))
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self) -> None:
        if isinstance(self.k, str):
            if self.k != K_SELECT:
                raise ValueError(f'k must be a positive integer or "{K_SELECT}"')
            if not self.k_candidates:
                raise ValueError("k_candidates must be nonempty when k is selected")
        elif self.k < 1:
            raise ValueError("k must be >= 1")
        if self.dims < 1:
            raise ValueError("dims must be >= 1")
        if self.objective not in (OBJECTIVE_CLUSTER, OBJECTIVE_TAG_CBOW):
            raise ValueError(f"unknown objective {self.objective!r}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if not self.eval_ks or any(k < 1 for k in self.eval_ks):
            raise ValueError("eval_ks must be positive integers")

    def feature_schema(self) -> FeatureSchema:
        return FeatureSchema(descriptor_dims=dict(self.schema))


def config_to_dict(config: PipelineConfig) -> dict:
    d = dataclasses.asdict(config)
    d["split_ratios"] = list(config.split_ratios)
    return d


def config_from_dict(obj: dict) -> PipelineConfig:
    """Build a config from a plain dict (parsed JSON/TOML), rejecting typos."""
    if not isinstance(obj, dict):
        raise DataError("pipeline config must be a mapping")
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(obj) - known
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    if "corpus_path" not in obj or "out_dir" not in obj:
        raise DataError("config requires corpus_path and out_dir")
    kwargs = dict(obj)
    if "train" in kwargs:
        tr = kwargs["train"]
        if not isinstance(tr, dict):
            raise DataError("config key 'train' must be a mapping")
        tr_known = {f.name for f in dataclasses.fields(TrainConfig)}
        tr_unknown = set(tr) - tr_known
        if tr_unknown:
            raise DataError(f"unknown train config keys: {sorted(tr_unknown)}")
        try:
            kwargs["train"] = TrainConfig(**tr)
        except ValueError as exc:
            raise DataError(f"bad train config: {exc}") from exc
    if "split_ratios" in kwargs:
        ratios = kwargs["split_ratios"]
        if not isinstance(ratios, (list, tuple)) or len(ratios) != 3:
            raise DataError("split_ratios must hold three numbers")
        kwargs["split_ratios"] = tuple(float(r) for r in ratios)
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad pipeline config: {exc}") from exc


def load_config(path: str | Path) -> PipelineConfig:
    """Read a JSON (.json) or TOML (anything else) config file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    else:
        try:
            obj = tomllib.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
            raise DataError(f"config {path} is not valid TOML: {exc}") from exc
    return config_from_dict(obj)


def config_hash(config: PipelineConfig) -> str:
    """sha256 over the canonical JSON form; names the run directory."""
    canon = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _hash_assignments(assignments: dict[str, int]) -> str:
    canon = json.dumps(assignments, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_json(path: Path, obj) -> None:
    # sorted keys and no timestamps anywhere, so reruns are byte-identical
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@contextmanager
def _stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except Exception as exc:
        log.error("stage %s failed: %s", name, exc)
        raise


def best_candidate(scores: dict[int, float]) -> int:
    """Highest score wins; exact ties go to the smallest K."""
    if not scores:
        raise DataError("no surviving candidates to choose from")
    return min(scores, key=lambda k: (-scores[k], k))


def _train_one(
    train_records: list[SoundRecord],
    assignments: dict[str, int],
    vocab_records: list[SoundRecord],
    pretrained: PretrainedVectors | None,
    k: int,
    dims: int,
    train_template: TrainConfig,
    seed: int,
) -> tuple[EmbeddingModel, list[float]]:
    """Init-and-train for one seed; the template's seed field is overridden."""
    cfg = dataclasses.replace(train_template, seed=seed)
    words = pretrained.words() if cfg.init == "pretrained" and pretrained else None
    vocab = build_vocabulary(vocab_records, pretrained_words=words)
    model = init_embeddings(vocab, dims, cfg.init, pretrained, k, seed)
    return train(train_records, assignments, model, cfg)


def select_k(
    candidates: list[int],
    train_records: list[SoundRecord],
    val_records: list[SoundRecord],
    config: PipelineConfig,
    pretrained: PretrainedVectors | None = None,
) -> int:
    """Pick K by validation recall@10 of the resulting embeddings.

    Each candidate gets a full cluster -> assign -> train -> evaluate pass
    on the train/val splits.  A candidate that fails any stage is dropped
    with a logged reason; if all fail, the run cannot proceed.
    """
    if not candidates:
        raise DataError("k_candidates is empty")
    if not val_records:
        raise DataError("k selection needs a nonempty validation split")
    schema = config.feature_schema()
    X = summarize_corpus(train_records, schema)
    standardizer = fit_standardizer(X)
    Xs = apply_standardizer(standardizer, X)
    scores: dict[int, float] = {}
    for k in candidates:
        try:
            cluster = kmeans_fit(Xs, k, seed=config.seeds[0], standardizer=standardizer)
            assignments = assign_corpus(cluster, train_records, schema)
            model, _ = _train_one(
                train_records,
                assignments,
                train_records,
                pretrained,
                k,
                config.dims,
                config.train,
                config.seeds[0],
            )
            report = eval_retrieval(val_records, model, ks=[10])
            scores[k] = report.recall_at[10]
            log.info("candidate k=%d: val recall@10 = %.4f", k, scores[k])
        except Exception as exc:  # noqa: BLE001 - candidate isolation is the point
            log.warning("candidate k=%d dropped: %s", k, exc)
    if not scores:
        raise DataError("every k candidate failed; see logged reasons")
    return best_candidate(scores)


def _aggregate(per_seed: dict[str, dict]) -> dict:
    """Mean and population std over seeds for every scalar metric."""

    def stats(values: list[float]) -> dict:
        arr = np.asarray(values, dtype=np.float64)
        return {"mean": float(arr.mean()), "std": float(arr.std())}

    agg: dict = {}
    seeds = sorted(per_seed)
    first = per_seed[seeds[0]]
    if "retrieval" in first:
        agg["retrieval"] = {
            "recall_at": {
                k: stats([per_seed[s]["retrieval"]["recall_at"][k] for s in seeds])
                for k in first["retrieval"]["recall_at"]
            }
        }
    if "foley" in first:
        agg["foley"] = {
            "mean_rank": stats([per_seed[s]["foley"]["mean_rank"] for s in seeds])
        }
    if "wordsim" in first:
        agg["wordsim"] = {
            name: {
                "spearman": stats(
                    [per_seed[s]["wordsim"][name]["spearman"] for s in seeds]
                )
            }
            for name in first["wordsim"]
        }
    if "final_train_loss" in first:
        agg["final_train_loss"] = stats(
            [per_seed[s]["final_train_loss"] for s in seeds]
        )
    return agg


def _evaluate_seed(
    model: EmbeddingModel,
    test_records: list[SoundRecord],
    config: PipelineConfig,
    foley_pairs,
    wordsim_sets,
) -> dict:
    out: dict = {}
    report = eval_retrieval(test_records, model, ks=list(config.eval_ks))
    out["retrieval"] = {
        "recall_at": {str(k): report.recall_at[k] for k in config.eval_ks},
        "num_queries": report.num_queries,
        "num_skipped_queries": report.num_skipped_queries,
    }
    if foley_pairs is not None:
        fr = eval_foley(foley_pairs, model)
        out["foley"] = {
            "mean_rank": fr.mean_rank,
            "chance_rank": fr.chance_rank,
            "num_pairs": len(fr.per_pair_ranks),
            "num_skipped": fr.num_skipped,
            "per_pair_ranks": fr.per_pair_ranks,
        }
    if wordsim_sets:
        out["wordsim"] = {}
        for name, pairs in wordsim_sets.items():
            wr = eval_wordsim(pairs, model)
            out["wordsim"][name] = {
                "spearman": wr.spearman_rho,
                "pairs_used": wr.pairs_used,
                "pairs_skipped": wr.pairs_skipped,
            }
    return out


def run_pipeline(config: PipelineConfig) -> Path:
    """Execute a full run; returns the content-addressed run directory.

    The directory is owned via an exclusive lock file for the duration of
    the run.  Artifacts from a failed run are left in place for debugging;
    only the lock is released.
    """
    digest = config_hash(config)
    run_dir = Path(config.out_dir) / f"run-{digest[:12]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        with lock.open("x", encoding="utf-8") as fh:
            fh.write(f"{os.getpid()}\n")
    except FileExistsError:
        raise DataError(
            f"run directory {run_dir} is locked by another process; "
            f"remove {lock} if that process is gone"
        ) from None
    try:
        _run_stages(config, run_dir, digest)
    finally:
        lock.unlink(missing_ok=True)
    return run_dir


def _run_stages(config: PipelineConfig, run_dir: Path, digest: str) -> None:
    schema = config.feature_schema()
    artifacts: dict[str, str] = {}

    with _stage("ingest"):
        records = load_corpus(config.corpus_path)
        pretrained = None
        if config.pretrained_path is not None:
            pretrained = load_pretrained(config.pretrained_path, config.dims)
        foley_pairs = (
            load_foley_pairs(config.foley_path) if config.foley_path else None
        )
        wordsim_sets = {
            name: load_wordsim_pairs(p) for name, p in sorted(config.wordsim_paths.items())
        }

    with _stage("split"):
        split = split_corpus(records, config.split_ratios, seed=config.seeds[0])
        _write_json(
            run_dir / "splits.json",
            {
                "train": [r.id for r in split.train],
                "val": [r.id for r in split.val],
                "test": [r.id for r in split.test],
            },
        )
        artifacts["splits.json"] = _hash_file(run_dir / "splits.json")

    selected_k: int | None = None
    assignment_hashes: dict[str, str] = {}
    per_seed_metrics: dict[str, dict] = {}

    if config.objective == OBJECTIVE_CLUSTER:
        with _stage("summarize"):
            X = summarize_corpus(split.train, schema)
        with _stage("standardize"):
            standardizer = fit_standardizer(X)
            Xs = apply_standardizer(standardizer, X)
        with _stage("select-k" if config.k == K_SELECT else "fix-k"):
            if config.k == K_SELECT:
                selected_k = select_k(
                    list(config.k_candidates), split.train, split.val, config, pretrained
                )
                log.info("selected k = %d", selected_k)
            else:
                selected_k = int(config.k)

    words = None
    if config.train.init == "pretrained" and pretrained is not None:
        words = pretrained.words()

    for seed in config.seeds:
        tag = str(seed)
        if config.objective == OBJECTIVE_CLUSTER:
            with _stage(f"cluster[seed={seed}]"):
                cluster = kmeans_fit(
                    Xs, selected_k, seed=seed, standardizer=standardizer
                )
                name = f"cluster-seed{seed}.json"
                save_cluster_model(cluster, run_dir / name)
                artifacts[name] = _hash_file(run_dir / name)
            with _stage(f"assign[seed={seed}]"):
                # assignments are frozen here; training must see exactly this map
                assignments = assign_corpus(cluster, split.train, schema)
                assignment_hashes[tag] = _hash_assignments(assignments)
                name = f"assignments-seed{seed}.json"
                _write_json(run_dir / name, assignments)
                artifacts[name] = _hash_file(run_dir / name)
            with _stage(f"train[seed={seed}]"):
                model, trace = _train_one(
                    split.train,
                    assignments,
                    split.train,
                    pretrained,
                    selected_k,
                    config.dims,
                    config.train,
                    seed,
                )
                assert _hash_assignments(assignments) == assignment_hashes[tag], (
                    "assignment map changed between freezing and training"
                )
        else:
            with _stage(f"train[seed={seed}]"):
                cfg = dataclasses.replace(config.train, seed=seed)
                vocab = build_vocabulary(split.train, pretrained_words=words)
                model, trace = train_tag_cbow(
                    split.train, vocab, config.dims, cfg, pretrained
                )

        with _stage(f"save-embeddings[seed={seed}]"):
            name = f"embeddings-seed{seed}.txt"
            save_embeddings(model, run_dir / name)
            artifacts[name] = _hash_file(run_dir / name)

        with _stage(f"evaluate[seed={seed}]"):
            metrics = _evaluate_seed(
                model, split.test, config, foley_pairs, wordsim_sets
            )
            if trace:
                metrics["final_train_loss"] = trace[-1]
                metrics["loss_trace"] = trace
            per_seed_metrics[tag] = metrics

    with _stage("report"):
        metrics_obj = {
            "per_seed": per_seed_metrics,
            "aggregate": _aggregate(per_seed_metrics),
        }
        _write_json(run_dir / "metrics.json", metrics_obj)
        artifacts["metrics.json"] = _hash_file(run_dir / "metrics.json")
        manifest = {
            "config": config_to_dict(config),
            "config_hash": digest,
            "selected_k": selected_k,
            "assignment_hashes": assignment_hashes,
            "artifacts": artifacts,
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "soundvec": __version__,
            },
        }
        _write_json(run_dir / "manifest.json", manifest)


def run_from_manifest(manifest_path: str | Path, out_dir: str | None = None) -> Path:
    """Replay a recorded run from its manifest's embedded config.

    `out_dir` redirects the replay so the original artifacts survive for
    comparison; artifact bytes must not depend on the output location.
    """
    path = Path(manifest_path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "config" not in obj:
        raise DataError(f"manifest {path} has no embedded config")
    cfg_dict = dict(obj["config"])
    if out_dir is not None:
        cfg_dict["out_dir"] = out_dir
    config = config_from_dict(cfg_dict)
    return run_pipeline(config)
