"""Pipeline config handling, k selection, and full-run reproducibility."""

from __future__ import annotations

import dataclasses
import hashlib
import json

import pytest

from soundvec.corpus import load_corpus, save_corpus, split_corpus
from soundvec.embed import TrainConfig
from soundvec.errors import DataError
from soundvec.pipeline import (
    PipelineConfig,
    best_candidate,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    run_from_manifest,
    run_pipeline,
    select_k,
)
from soundvec.synth import (
    SyntheticSpec,
    generate_synthetic,
    make_foley_pairs,
    make_wordsim_pairs,
    synthetic_feature_schema,
)

TINY_SPEC = SyntheticSpec(
    groups=2,
    tags_per_group=10,
    sounds_per_group=12,
    tags_per_sound=3,
    caption_tokens_per_sound=3,
    feature_dim=4,
    group_separation=10.0,
    noise_std=0.5,
    seed=0,
)

CONTENT_ARTIFACTS = [
    "splits.json",
    "cluster-seed0.json",
    "assignments-seed0.json",
    "embeddings-seed0.txt",
    "metrics.json",
]


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    """A 24-sound two-group corpus with foley and wordsim files on disk."""
    root = tmp_path_factory.mktemp("tiny-corpus")
    records, _ = generate_synthetic(TINY_SPEC)
    corpus = root / "corpus.jsonl"
    save_corpus(records, corpus)

    foley = root / "foley.tsv"
    with foley.open("w", encoding="utf-8") as fh:
        for pair in make_foley_pairs(TINY_SPEC, 6):
            fh.write(f"{pair.target}\t{pair.technique}\n")

    wordsim = root / "wordsim.tsv"
    with wordsim.open("w", encoding="utf-8") as fh:
        for pair in make_wordsim_pairs(TINY_SPEC, 8):
            fh.write(f"{pair.word_a}\t{pair.word_b}\t{pair.human_score}\n")

    return {"corpus": corpus, "foley": foley, "wordsim": wordsim}


def _tiny_config(tiny_corpus, out_dir, **overrides) -> PipelineConfig:
    base = dict(
        corpus_path=str(tiny_corpus["corpus"]),
        out_dir=str(out_dir),
        schema=synthetic_feature_schema(TINY_SPEC),
        k=2,
        dims=8,
        train=TrainConfig(epochs=3, init="random"),
        eval_ks=[1, 2],
        seeds=[0],
    )
    base.update(overrides)
    return PipelineConfig(**base)


class TestConfigSerialization:
    def test_dict_round_trip(self, tiny_corpus, tmp_path):
        config = _tiny_config(tiny_corpus, tmp_path)
        assert config_from_dict(config_to_dict(config)) == config

    def test_json_file_round_trip(self, tiny_corpus, tmp_path):
        config = _tiny_config(tiny_corpus, tmp_path / "runs")
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config_to_dict(config)), encoding="utf-8")
        assert load_config(path) == config

    def test_toml_file(self, tiny_corpus, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text(
            "\n".join(
                [
                    f'corpus_path = "{tiny_corpus["corpus"]}"',
                    f'out_dir = "{tmp_path / "runs"}"',
                    "k = 2",
                    "dims = 8",
                    "eval_ks = [1, 2]",
                    "seeds = [0]",
                    "[schema]",
                    "synthetic = 2",
                    "[train]",
                    "epochs = 3",
                    'init = "random"',
                ]
            )
            + "\n",
            encoding="utf-8",
        )
        config = load_config(path)
        assert config.k == 2
        assert config.train.epochs == 3
        assert config.schema == {"synthetic": 2}

    def test_unknown_key_rejected(self):
        with pytest.raises(DataError, match="klusters"):
            config_from_dict(
                {"corpus_path": "c", "out_dir": "o", "klusters": 5}
            )

    def test_unknown_train_key_rejected(self):
        with pytest.raises(DataError, match="warmup"):
            config_from_dict(
                {"corpus_path": "c", "out_dir": "o", "train": {"warmup": 1}}
            )

    def test_required_paths_enforced(self):
        with pytest.raises(DataError, match="corpus_path"):
            config_from_dict({"out_dir": "o"})

    def test_split_ratio_arity_enforced(self):
        with pytest.raises(DataError, match="three"):
            config_from_dict(
                {"corpus_path": "c", "out_dir": "o", "split_ratios": [0.8, 0.2]}
            )

    def test_unreadable_config_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            load_config(tmp_path / "none.toml")

    def test_invalid_json_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope", encoding="utf-8")
        with pytest.raises(DataError, match="not valid JSON"):
            load_config(path)

    def test_invalid_toml_config(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("= broken", encoding="utf-8")
        with pytest.raises(DataError, match="not valid TOML"):
            load_config(path)


class TestConfigValidation:
    def test_bad_k(self):
        with pytest.raises(ValueError):
            PipelineConfig(corpus_path="c", out_dir="o", k=0)
        with pytest.raises(ValueError):
            PipelineConfig(corpus_path="c", out_dir="o", k="auto")

    def test_select_needs_candidates(self):
        with pytest.raises(ValueError, match="k_candidates"):
            PipelineConfig(corpus_path="c", out_dir="o", k="select", k_candidates=[])

    def test_bad_dims_objective_seeds_ks(self):
        with pytest.raises(ValueError):
            PipelineConfig(corpus_path="c", out_dir="o", dims=0)
        with pytest.raises(ValueError):
            PipelineConfig(corpus_path="c", out_dir="o", objective="magic")
        with pytest.raises(ValueError):
            PipelineConfig(corpus_path="c", out_dir="o", seeds=[])
        with pytest.raises(ValueError):
            PipelineConfig(corpus_path="c", out_dir="o", eval_ks=[0])

    def test_feature_schema_view(self):
        config = PipelineConfig(corpus_path="c", out_dir="o", schema={"a": 3})
        assert config.feature_schema().feature_length == 6


class TestConfigHash:
    def test_stable_for_equal_configs(self, tiny_corpus, tmp_path):
        a = _tiny_config(tiny_corpus, tmp_path)
        b = _tiny_config(tiny_corpus, tmp_path)
        digest = config_hash(a)
        assert digest == config_hash(b)
        assert len(digest) == 64
        assert set(digest) <= set("0123456789abcdef")

    def test_sensitive_to_any_field(self, tiny_corpus, tmp_path):
        base = _tiny_config(tiny_corpus, tmp_path)
        changed = dataclasses.replace(base, dims=16)
        assert config_hash(base) != config_hash(changed)


class TestBestCandidate:
    def test_singleton(self):
        assert best_candidate({30: 0.4}) == 30

    def test_highest_score_wins(self):
        assert best_candidate({10: 0.3, 20: 0.6, 40: 0.5}) == 20

    def test_tie_goes_to_smaller_k(self):
        assert best_candidate({20: 0.5, 10: 0.5}) == 10

    def test_empty_is_fatal(self):
        with pytest.raises(DataError):
            best_candidate({})


class TestSelectK:
    def test_singleton_candidate(self, tiny_corpus, tmp_path):
        config = _tiny_config(tiny_corpus, tmp_path)
        records = load_corpus(tiny_corpus["corpus"])
        split = split_corpus(records, config.split_ratios, seed=0)
        assert select_k([4], split.train, split.val, config) == 4

    def test_result_is_one_of_the_candidates_and_stable(self, tiny_corpus, tmp_path):
        config = _tiny_config(tiny_corpus, tmp_path)
        records = load_corpus(tiny_corpus["corpus"])
        split = split_corpus(records, config.split_ratios, seed=0)
        first = select_k([2, 3], split.train, split.val, config)
        second = select_k([2, 3], split.train, split.val, config)
        assert first in (2, 3)
        assert first == second

    def test_empty_candidates(self, tiny_corpus, tmp_path):
        config = _tiny_config(tiny_corpus, tmp_path)
        records = load_corpus(tiny_corpus["corpus"])
        split = split_corpus(records, config.split_ratios, seed=0)
        with pytest.raises(DataError):
            select_k([], split.train, split.val, config)


class TestRunPipeline:
    def test_artifacts_and_manifest(self, tiny_corpus, tmp_path):
        config = _tiny_config(
            tiny_corpus,
            tmp_path / "runs",
            foley_path=str(tiny_corpus["foley"]),
            wordsim_paths={"syn": str(tiny_corpus["wordsim"])},
        )
        run_dir = run_pipeline(config)
        assert run_dir.name == f"run-{config_hash(config)[:12]}"
        assert not (run_dir / ".lock").exists()
        for name in CONTENT_ARTIFACTS + ["manifest.json"]:
            assert (run_dir / name).exists(), name

        manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
        assert set(manifest) == {
            "config",
            "config_hash",
            "selected_k",
            "assignment_hashes",
            "artifacts",
            "versions",
        }
        assert manifest["selected_k"] == 2
        assert manifest["config_hash"] == config_hash(config)
        assert config_from_dict(manifest["config"]) == config
        assert set(manifest["assignment_hashes"]) == {"0"}
        for name, digest in manifest["artifacts"].items():
            actual = hashlib.sha256((run_dir / name).read_bytes()).hexdigest()
            assert actual == digest, name

        metrics = json.loads((run_dir / "metrics.json").read_text(encoding="utf-8"))
        seed_metrics = metrics["per_seed"]["0"]
        assert set(seed_metrics["retrieval"]["recall_at"]) == {"1", "2"}
        assert seed_metrics["foley"]["num_pairs"] + seed_metrics["foley"][
            "num_skipped"
        ] == 6
        assert "syn" in seed_metrics["wordsim"]
        assert len(seed_metrics["loss_trace"]) == 3
        assert metrics["aggregate"]["retrieval"]["recall_at"]["1"]["std"] == 0.0

    def test_artifact_bytes_do_not_depend_on_the_output_location(
        self, tiny_corpus, tmp_path
    ):
        config_a = _tiny_config(tiny_corpus, tmp_path / "a")
        config_b = _tiny_config(tiny_corpus, tmp_path / "b")
        dir_a = run_pipeline(config_a)
        dir_b = run_pipeline(config_b)
        for name in CONTENT_ARTIFACTS:
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name

    def test_rerun_in_place_is_byte_identical(self, tiny_corpus, tmp_path):
        config = _tiny_config(tiny_corpus, tmp_path / "runs")
        first_dir = run_pipeline(config)
        before = {
            name: (first_dir / name).read_bytes()
            for name in CONTENT_ARTIFACTS + ["manifest.json"]
        }
        second_dir = run_pipeline(config)
        assert second_dir == first_dir
        for name, blob in before.items():
            assert (first_dir / name).read_bytes() == blob, name

    def test_locked_run_dir_is_refused(self, tiny_corpus, tmp_path):
        config = _tiny_config(tiny_corpus, tmp_path / "runs")
        run_dir = tmp_path / "runs" / f"run-{config_hash(config)[:12]}"
        run_dir.mkdir(parents=True)
        (run_dir / ".lock").write_text("12345\n", encoding="utf-8")
        with pytest.raises(DataError, match="locked"):
            run_pipeline(config)
        # the foreign lock is not cleaned up by the refused run
        assert (run_dir / ".lock").exists()

    def test_seed_aggregation(self, tiny_corpus, tmp_path):
        config = _tiny_config(tiny_corpus, tmp_path / "runs", seeds=[0, 1])
        run_dir = run_pipeline(config)
        assert (run_dir / "embeddings-seed0.txt").exists()
        assert (run_dir / "embeddings-seed1.txt").exists()
        metrics = json.loads((run_dir / "metrics.json").read_text(encoding="utf-8"))
        values = [
            metrics["per_seed"][s]["retrieval"]["recall_at"]["1"] for s in ("0", "1")
        ]
        agg = metrics["aggregate"]["retrieval"]["recall_at"]["1"]
        mean = sum(values) / 2
        var = sum((v - mean) ** 2 for v in values) / 2
        assert agg["mean"] == pytest.approx(mean)
        assert agg["std"] == pytest.approx(var**0.5)

    def test_k_selection_with_a_singleton_candidate(self, tiny_corpus, tmp_path):
        config = _tiny_config(
            tiny_corpus, tmp_path / "runs", k="select", k_candidates=[2]
        )
        run_dir = run_pipeline(config)
        manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["selected_k"] == 2

    def test_tag_cbow_objective(self, tiny_corpus, tmp_path):
        config = _tiny_config(
            tiny_corpus, tmp_path / "runs", objective="tag-cbow", dims=6
        )
        run_dir = run_pipeline(config)
        assert (run_dir / "embeddings-seed0.txt").exists()
        assert not (run_dir / "cluster-seed0.json").exists()
        manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["selected_k"] is None
        assert manifest["assignment_hashes"] == {}


class TestRunFromManifest:
    def test_replay_reproduces_artifact_bytes(self, tiny_corpus, tmp_path):
        config = _tiny_config(tiny_corpus, tmp_path / "orig")
        orig_dir = run_pipeline(config)
        replay_dir = run_from_manifest(
            orig_dir / "manifest.json", out_dir=str(tmp_path / "replay")
        )
        assert replay_dir != orig_dir
        for name in CONTENT_ARTIFACTS:
            assert (orig_dir / name).read_bytes() == (replay_dir / name).read_bytes()

    def test_manifest_without_config_is_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"artifacts": {}}', encoding="utf-8")
        with pytest.raises(DataError, match="no embedded config"):
            run_from_manifest(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            run_from_manifest(tmp_path / "none.json")

    def test_malformed_manifest(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{bad", encoding="utf-8")
        with pytest.raises(DataError, match="not valid JSON"):
            run_from_manifest(path)
