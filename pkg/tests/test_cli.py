"""End-to-end CLI flows through main(), plus exit-code contract checks."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

import soundvec.cli as cli
from soundvec.cli import main, parse_schema_arg
from soundvec.corpus import load_corpus
from soundvec.errors import DataError, NumericError

SYNTH_ARGS = [
    "--groups", "2",
    "--tags-per-group", "10",
    "--sounds-per-group", "12",
    "--tags-per-sound", "3",
    "--caption-tokens", "3",
    "--feature-dim", "4",
    "--noise-std", "0.5",
    "--foley-pairs", "6",
    "--wordsim-pairs", "8",
]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-synth")
    rc = main(["synth", "--out", str(out), "--seed", "0", "--quiet", *SYNTH_ARGS])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def cluster_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-cluster")
    rc = main(
        [
            "cluster",
            str(synth_dir / "corpus.jsonl"),
            "-k", "2",
            "--schema", "synthetic:2",
            "--out", str(out),
            "--quiet",
        ]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def train_dir(synth_dir, cluster_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-train")
    rc = main(
        [
            "train",
            str(synth_dir / "corpus.jsonl"),
            "--assignments", str(cluster_dir / "assignments.json"),
            "--dims", "8",
            "--epochs", "3",
            "--out", str(out),
            "--quiet",
        ]
    )
    assert rc == 0
    return out


class TestExitCodes:
    def test_no_command_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc_info:
            main(["frobnicate"])
        assert exc_info.value.code == 1

    def test_missing_required_argument_is_usage_error(self, synth_dir):
        with pytest.raises(SystemExit) as exc_info:
            main(["cluster", str(synth_dir / "corpus.jsonl")])
        assert exc_info.value.code == 1

    def test_missing_corpus_is_data_error(self, tmp_path):
        assert main(["ingest", str(tmp_path / "absent.jsonl"), "--quiet"]) == 2

    def test_malformed_corpus_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n", encoding="utf-8")
        assert main(["ingest", str(bad), "--quiet"]) == 2

    def test_numeric_failure_maps_to_three(self, monkeypatch):
        def explode(args):
            raise NumericError("lost precision")

        monkeypatch.setattr(cli, "cmd_cluster", explode)
        assert main(["cluster", "whatever.jsonl", "-k", "2", "--quiet"]) == 3


class TestParseSchemaArg:
    def test_two_entries(self):
        assert parse_schema_arg("mfcc:13, zcr:1") == {"mfcc": 13, "zcr": 1}

    def test_missing_colon(self):
        with pytest.raises(DataError, match="name:dims"):
            parse_schema_arg("mfcc")

    def test_non_integer_dims(self):
        with pytest.raises(DataError, match="dims"):
            parse_schema_arg("mfcc:thirteen")

    def test_empty_string(self):
        with pytest.raises(DataError, match="no entries"):
            parse_schema_arg(" , ")


class TestSynthCommand:
    def test_outputs_exist(self, synth_dir):
        for name in ("corpus.jsonl", "groups.json", "foley.tsv", "wordsim.tsv"):
            assert (synth_dir / name).exists(), name
        records = load_corpus(synth_dir / "corpus.jsonl")
        assert len(records) == 24
        groups = json.loads((synth_dir / "groups.json").read_text(encoding="utf-8"))
        assert set(groups.values()) == {0, 1}
        assert len(groups) == 24

    def test_root_level_flags_reach_the_subcommand(self, tmp_path):
        rc = main(
            ["--out", str(tmp_path), "--seed", "0", "--quiet", "synth", *SYNTH_ARGS]
        )
        assert rc == 0
        assert (tmp_path / "corpus.jsonl").exists()

    def test_determinism_across_invocations(self, synth_dir, tmp_path):
        rc = main(["synth", "--out", str(tmp_path), "--seed", "0", "--quiet", *SYNTH_ARGS])
        assert rc == 0
        assert (tmp_path / "corpus.jsonl").read_bytes() == (
            synth_dir / "corpus.jsonl"
        ).read_bytes()


class TestIngestCommand:
    def test_summary_and_normalized_copy(self, synth_dir, tmp_path, capsys):
        rc = main(
            [
                "ingest",
                str(synth_dir / "corpus.jsonl"),
                "--out", str(tmp_path),
                "--quiet",
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "sounds" in out
        assert "24" in out
        assert (tmp_path / "corpus.jsonl").exists()


class TestClusterCommand:
    def test_artifacts(self, cluster_dir, synth_dir):
        model = json.loads(
            (cluster_dir / "cluster-model.json").read_text(encoding="utf-8")
        )
        assert model["k"] == 2
        assignments = json.loads(
            (cluster_dir / "assignments.json").read_text(encoding="utf-8")
        )
        records = load_corpus(synth_dir / "corpus.jsonl")
        assert set(assignments) == {r.id for r in records}
        assert set(assignments.values()) <= {0, 1}


class TestTrainCommand:
    def test_artifacts(self, train_dir):
        text = (train_dir / "embeddings.txt").read_text(encoding="utf-8")
        header = text.splitlines()[0].split()
        assert int(header[1]) == 8
        trace = json.loads(
            (train_dir / "train-trace.json").read_text(encoding="utf-8")
        )
        assert len(trace["epoch_mean_loss"]) == 3

    def test_cluster_objective_requires_assignments(self, synth_dir, tmp_path):
        rc = main(
            [
                "train",
                str(synth_dir / "corpus.jsonl"),
                "--dims", "8",
                "--out", str(tmp_path),
                "--quiet",
            ]
        )
        assert rc == 2

    def test_tag_cbow_objective_needs_no_assignments(self, synth_dir, tmp_path):
        rc = main(
            [
                "train",
                str(synth_dir / "corpus.jsonl"),
                "--objective", "tag-cbow",
                "--dims", "6",
                "--epochs", "2",
                "--out", str(tmp_path),
                "--quiet",
            ]
        )
        assert rc == 0
        assert (tmp_path / "embeddings.txt").exists()


class TestEvalCommands:
    def test_retrieval(self, synth_dir, train_dir, capsys):
        rc = main(
            [
                "eval-retrieval",
                str(synth_dir / "corpus.jsonl"),
                str(train_dir / "embeddings.txt"),
                "--ks", "1,5",
                "--quiet",
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "recall@1" in out
        assert "recall@5" in out

    def test_retrieval_json_report(self, synth_dir, train_dir, tmp_path):
        rc = main(
            [
                "eval-retrieval",
                str(synth_dir / "corpus.jsonl"),
                str(train_dir / "embeddings.txt"),
                "--ks", "1,5",
                "--out", str(tmp_path),
                "--quiet",
            ]
        )
        assert rc == 0
        report = json.loads((tmp_path / "retrieval.json").read_text(encoding="utf-8"))
        assert set(report["recall_at"]) == {"1", "5"}
        assert report["num_queries"] + report["num_skipped_queries"] == 24

    def test_foley(self, synth_dir, train_dir, capsys):
        rc = main(
            [
                "eval-foley",
                str(synth_dir / "foley.tsv"),
                str(train_dir / "embeddings.txt"),
                "--quiet",
            ]
        )
        assert rc == 0
        assert "mean rank" in capsys.readouterr().out

    def test_wordsim(self, synth_dir, train_dir, capsys):
        rc = main(
            [
                "eval-wordsim",
                str(synth_dir / "wordsim.tsv"),
                str(train_dir / "embeddings.txt"),
                "--quiet",
            ]
        )
        assert rc == 0
        assert "spearman" in capsys.readouterr().out


class TestNeighborsCommand:
    def test_prints_n_tab_separated_lines(self, synth_dir, train_dir, capsys):
        word = load_corpus(synth_dir / "corpus.jsonl")[0].tags[0]
        rc = main(
            [
                "neighbors", word,
                "-n", "3",
                "--embeddings", str(train_dir / "embeddings.txt"),
                "--quiet",
            ]
        )
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        for line in lines:
            name, score = line.split("\t")
            assert name != word
            float(score)

    def test_unknown_word(self, train_dir):
        rc = main(
            [
                "neighbors", "zzgone",
                "--embeddings", str(train_dir / "embeddings.txt"),
                "--quiet",
            ]
        )
        assert rc == 2


class TestPipelineCommand:
    def _config_path(self, synth_dir, tmp_path):
        config = {
            "corpus_path": str(synth_dir / "corpus.jsonl"),
            "out_dir": str(tmp_path / "runs"),
            "schema": {"synthetic": 2},
            "k": 2,
            "dims": 8,
            "train": {"epochs": 2, "init": "random"},
            "eval_ks": [1, 2],
            "seeds": [0],
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config), encoding="utf-8")
        return path

    def test_config_run_prints_run_dir(self, synth_dir, tmp_path, capsys):
        path = self._config_path(synth_dir, tmp_path)
        rc = main(["pipeline", "--config", str(path), "--quiet"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "run directory:" in out
        assert "recall@1" in out

    def test_without_config_or_manifest(self):
        assert main(["pipeline", "--quiet"]) == 2

    def test_std_expands_to_five_seeds(self, synth_dir, tmp_path, capsys):
        path = self._config_path(synth_dir, tmp_path)
        rc = main(["pipeline", "--config", str(path), "--std", "--quiet"])
        assert rc == 0
        out = capsys.readouterr().out
        run_dir = out.split("run directory:")[1].splitlines()[0].strip()
        metrics = json.loads(
            Path(run_dir, "metrics.json").read_text(encoding="utf-8")
        )
        assert set(metrics["per_seed"]) == {"0", "1", "2", "3", "4"}

    def test_manifest_replay(self, synth_dir, tmp_path, capsys):
        path = self._config_path(synth_dir, tmp_path)
        assert main(["pipeline", "--config", str(path), "--quiet"]) == 0
        first = capsys.readouterr().out
        run_dir = first.split("run directory:")[1].splitlines()[0].strip()
        rc = main(
            [
                "pipeline",
                "--manifest", f"{run_dir}/manifest.json",
                "--out", str(tmp_path / "replay"),
                "--quiet",
            ]
        )
        assert rc == 0
        replay_out = capsys.readouterr().out
        replay_dir = replay_out.split("run directory:")[1].splitlines()[0].strip()
        assert replay_dir != run_dir
        original = Path(run_dir, "metrics.json").read_bytes()
        replayed = Path(replay_dir, "metrics.json").read_bytes()
        assert original == replayed
