"""Corpus ingestion: sound records, tokenization, vocabulary, splits, eval pairs.

File formats:
  - corpus: JSON lines, one record per line with keys
    {"id", "tags", "caption", "descriptors"?, "feature_vector"?}
  - foley pairs: TSV "target<TAB>technique"
  - word-similarity pairs: TSV "word_a<TAB>word_b<TAB>score"
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

_TOKEN_SPLIT = re.compile(r"[\W_]+", re.UNICODE)


@dataclass(eq=False)
class SoundRecord:
    """One sound: its id, user tags, caption and audio features.

    Tags are lowercase and deduplicated (first occurrence wins).  At least
    one of `descriptors` (per-frame matrices, frames x dims) or
    `feature_vector` (fixed-length summary) is present.
    """

    id: str
    tags: list[str]
    caption: str
    descriptors: dict[str, np.ndarray] | None = None
    feature_vector: np.ndarray | None = None


@dataclass
class Vocabulary:
    """Bidirectional word <-> index map; indices are dense in [0, len)."""

    words: list[str]
    index: dict[str, int] = field(repr=False)

    @classmethod
    def from_words(cls, words: list[str]) -> "Vocabulary":
        index = {}
        for i, w in enumerate(words):
            if not w or w != w.lower():
                raise ValueError(f"vocabulary word {w!r} must be nonempty lowercase")
            if w in index:
                raise ValueError(f"duplicate vocabulary word {w!r}")
            index[w] = i
        return cls(words=list(words), index=index)

    def lookup(self, idx: int) -> str:
        return self.words[idx]

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def __len__(self) -> int:
        return len(self.words)


@dataclass
class CorpusSplit:
    train: list[SoundRecord]
    val: list[SoundRecord]
    test: list[SoundRecord]


@dataclass(frozen=True)
class FoleyPair:
    """A sound to fake and the technique that fakes it, both free text."""

    target: str
    technique: str


@dataclass(frozen=True)
class WordSimPair:
    word_a: str
    word_b: str
    human_score: float


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def normalize_tags(tags: list[str]) -> list[str]:
    """Lowercase, drop empties, dedup keeping first occurrence."""
    seen = {}
    for tag in tags:
        low = tag.lower()
        if low and low not in seen:
            seen[low] = None
    return list(seen)


def _record_from_obj(obj: dict, lineno: int) -> SoundRecord:
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: record is not a JSON object")
    for key in ("id", "tags", "caption"):
        if key not in obj:
            raise DataError(f"line {lineno}: missing required key {key!r}")
    rec_id = obj["id"]
    if not isinstance(rec_id, str) or not rec_id:
        raise DataError(f"line {lineno}: id must be a nonempty string")
    if not isinstance(obj["tags"], list) or not all(
        isinstance(t, str) for t in obj["tags"]
    ):
        raise DataError(f"line {lineno}: tags must be a list of strings")
    if not isinstance(obj["caption"], str):
        raise DataError(f"line {lineno}: caption must be a string")
    tags = normalize_tags(obj["tags"])
    if not tags:
        raise DataError(f"line {lineno}: record {rec_id!r} has no usable tags")

    descriptors = None
    if obj.get("descriptors") is not None:
        if not isinstance(obj["descriptors"], dict):
            raise DataError(f"line {lineno}: descriptors must be a mapping")
        descriptors = {}
        for name, frames in obj["descriptors"].items():
            try:
                mat = np.asarray(frames, dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise DataError(
                    f"line {lineno}: descriptor {name!r} is not numeric: {exc}"
                ) from exc
            if mat.ndim != 2:
                raise DataError(
                    f"line {lineno}: descriptor {name!r} must be a rectangular"
                    f" frames x dims matrix"
                )
            descriptors[name] = mat

    feature_vector = None
    if obj.get("feature_vector") is not None:
        try:
            feature_vector = np.asarray(obj["feature_vector"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise DataError(f"line {lineno}: feature_vector is not numeric: {exc}") from exc
        if feature_vector.ndim != 1:
            raise DataError(f"line {lineno}: feature_vector must be a flat vector")

    if descriptors is None and feature_vector is None:
        raise DataError(
            f"line {lineno}: record {rec_id!r} carries neither descriptors"
            f" nor a feature_vector"
        )
    return SoundRecord(
        id=rec_id,
        tags=tags,
        caption=obj["caption"],
        descriptors=descriptors,
        feature_vector=feature_vector,
    )


def load_corpus(path: str | Path) -> list[SoundRecord]:
    """Load and validate a JSON-lines corpus; errors name the offending line."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    records: list[SoundRecord] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON: {exc.msg}") from exc
            rec = _record_from_obj(obj, lineno)
            if rec.id in seen_ids:
                raise DataError(f"line {lineno}: duplicate id {rec.id!r}")
            seen_ids.add(rec.id)
            records.append(rec)
    return records


def save_corpus(records: list[SoundRecord], path: str | Path) -> None:
    """Write records as JSON lines; inverse of load_corpus on valid corpora."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            obj: dict = {"id": rec.id, "tags": rec.tags, "caption": rec.caption}
            if rec.descriptors is not None:
                obj["descriptors"] = {
                    name: mat.tolist() for name, mat in rec.descriptors.items()
                }
            if rec.feature_vector is not None:
                obj["feature_vector"] = rec.feature_vector.tolist()
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def build_vocabulary(
    records: list[SoundRecord], pretrained_words: set[str] | None = None
) -> Vocabulary:
    """Unique tags across records, optionally intersected with a pretrained set.

    Ordered by descending corpus frequency (number of records carrying the
    tag), ties broken lexicographically, so indices are stable across runs.
    """
    if not records:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for rec in records:
        counts.update(rec.tags)
    kept = {
        w: c
        for w, c in counts.items()
        if pretrained_words is None or w in pretrained_words
    }
    if not kept:
        raise DataError("vocabulary is empty after pretrained-intersection filtering")
    words = sorted(kept, key=lambda w: (-kept[w], w))
    retained = len(kept) / len(counts)
    log.info(
        "vocabulary: %d of %d tags retained (%.2f%%)",
        len(kept),
        len(counts),
        100.0 * retained,
    )
    return Vocabulary.from_words(words)


def split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """(train, val, test) counts: floor(ratio*n) for val/test, remainder to train."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"degenerate split ratios {ratios}: all must be > 0")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise DataError(f"split ratios {ratios} must sum to 1")
    n_val = int(ratios[1] * n)
    n_test = int(ratios[2] * n)
    return n - n_val - n_test, n_val, n_test


def split_corpus(
    records: list[SoundRecord],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> CorpusSplit:
    """Seeded shuffle then contiguous train/val/test partition.

    Val and test get floor(ratio * N) records each; the remainder goes to
    train.  Same seed, same split.
    """
    if not records:
        raise DataError("cannot split an empty corpus")
    n_train, n_val, _ = split_sizes(len(records), ratios)
    order = np.random.default_rng(seed).permutation(len(records))
    shuffled = [records[i] for i in order]
    return CorpusSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
    )


def load_foley_pairs(path: str | Path) -> list[FoleyPair]:
    """Load "target<TAB>technique" pairs; both sides must tokenize nonempty."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"foley pair file not found: {path}")
    pairs: list[FoleyPair] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise DataError(
                    f"line {lineno}: expected 2 tab-separated fields, got {len(fields)}"
                )
            target, technique = fields
            if not tokenize(target) or not tokenize(technique):
                raise DataError(f"line {lineno}: phrase tokenizes to nothing")
            pairs.append(FoleyPair(target=target, technique=technique))
    if not pairs:
        raise DataError(f"foley pair file is empty: {path}")
    return pairs


def load_wordsim_pairs(path: str | Path) -> list[WordSimPair]:
    """Load "word_a<TAB>word_b<TAB>score" relatedness pairs."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"word-similarity file not found: {path}")
    pairs: list[WordSimPair] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3:
                raise DataError(
                    f"line {lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            word_a, word_b, score_text = fields
            if not word_a or not word_b:
                raise DataError(f"line {lineno}: empty word")
            try:
                score = float(score_text)
            except ValueError as exc:
                raise DataError(f"line {lineno}: bad score {score_text!r}") from exc
            if not math.isfinite(score):
                raise DataError(f"line {lineno}: score must be finite")
            pairs.append(WordSimPair(word_a=word_a, word_b=word_b, human_score=score))
    if not pairs:
        raise DataError(f"word-similarity file is empty: {path}")
    return pairs
