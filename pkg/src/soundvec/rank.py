"""Cosine ranking and the three evaluation protocols.

Sounds are represented by averaging the embeddings of their in-vocab tags;
free-text queries are tokenized and averaged the same way.  Rankings are
by descending cosine with ties broken by ascending id, so every report is
deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .corpus import FoleyPair, SoundRecord, WordSimPair, tokenize
from .embed import EmbeddingModel
from .errors import DataError

log = logging.getLogger(__name__)


class EmptyBagError(DataError):
    """Every word of a bag fell outside the vocabulary."""


@dataclass
class IndexEntry:
    sound_id: str
    vector: np.ndarray
    skipped_tags: int


@dataclass
class SoundIndex:
    """Retrieval pool: one averaged tag embedding per indexed sound.

    Sounds with zero in-vocab tags are excluded and counted.
    """

    entries: list[IndexEntry]
    num_excluded: int = 0


@dataclass
class RetrievalReport:
    recall_at: dict[int, float]
    num_queries: int
    num_skipped_queries: int
    per_query_ranks: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class FoleyReport:
    """Mean rank of the true technique among itself plus every vocab word.

    chance_rank records (|V| + 1) / 2, the expected rank of a uniformly
    random placement among the |V| vocabulary decoys.
    """

    mean_rank: float
    per_pair_ranks: list[int]
    chance_rank: float
    num_skipped: int = 0


@dataclass
class WordSimReport:
    spearman_rho: float
    pairs_used: int
    pairs_skipped: int


def embed_bag(words: list[str], model: EmbeddingModel) -> np.ndarray:
    """Mean projection row over the in-vocab tokens of the given words.

    Words are tokenize-normalized first; out-of-vocabulary tokens are
    skipped.  Raises EmptyBagError when nothing survives, so callers can
    decide between skipping and failing.
    """
    indices = []
    for word in words:
        for token in tokenize(word):
            idx = model.vocab.index.get(token)
            if idx is not None:
                indices.append(idx)
    if not indices:
        raise EmptyBagError(f"no in-vocabulary tokens in {words!r}")
    return model.projection[np.asarray(indices, dtype=np.intp)].mean(axis=0)


def embed_tags(record: SoundRecord, model: EmbeddingModel) -> tuple[np.ndarray | None, int]:
    """Average of the record's in-vocab tag rows (direct lookup, no tokenize).

    Returns (vector or None, count of skipped tags).
    """
    indices = [model.vocab.index[t] for t in record.tags if t in model.vocab.index]
    skipped = len(record.tags) - len(indices)
    if not indices:
        return None, skipped
    return model.projection[np.asarray(indices, dtype=np.intp)].mean(axis=0), skipped


def build_sound_index(records: list[SoundRecord], model: EmbeddingModel) -> SoundIndex:
    entries: list[IndexEntry] = []
    excluded = 0
    for rec in records:
        vec, skipped = embed_tags(rec, model)
        if vec is None:
            excluded += 1
            continue
        entries.append(IndexEntry(sound_id=rec.id, vector=vec, skipped_tags=skipped))
    return SoundIndex(entries=entries, num_excluded=excluded)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """u.v / (|u||v|); both vectors must be nonzero.

    The denominator is sqrt(|u|^2 * |v|^2) rather than a product of two
    norms: sqrt(s*s) == s exactly under round-to-nearest, so cosine(u, u)
    is exactly 1.0 and antipodal integer vectors score exactly -1.0.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    uu = float(np.dot(u, u))
    vv = float(np.dot(v, v))
    if uu == 0.0 or vv == 0.0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(np.dot(u, v) / math.sqrt(uu * vv))


def rank_sounds(query: np.ndarray, index: SoundIndex) -> list[tuple[str, float]]:
    """All indexed sounds by descending cosine to the query; ties by ascending id."""
    if not index.entries:
        raise DataError("cannot rank against an empty sound index")
    scored = [(e.sound_id, cosine(query, e.vector)) for e in index.entries]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def _rank_of(target_id: str, target_score: float, scored: list[tuple[str, float]]) -> int:
    # position under the (-score, id) ordering without sorting
    rank = 1
    for sound_id, score in scored:
        if sound_id == target_id:
            continue
        if score > target_score or (score == target_score and sound_id < target_id):
            rank += 1
    return rank


def eval_retrieval(
    test_records: list[SoundRecord],
    model: EmbeddingModel,
    ks: list[int] = (1, 10, 50, 100),
) -> RetrievalReport:
    """Caption-to-sound retrieval over the full test pool.

    Every test sound is indexed by its averaged tag embedding; each test
    caption queries the pool and recall@k counts queries whose own sound
    lands in the top k.  Queries with an empty caption embedding, or whose
    sound has no in-vocab tags, are skipped and counted.
    """
    if not test_records:
        raise DataError("no test records to evaluate")
    ks = sorted(set(int(k) for k in ks))
    if any(k < 1 for k in ks):
        raise DataError(f"recall cutoffs must be positive, got {ks}")
    index = build_sound_index(test_records, model)
    indexed_ids = {e.sound_id for e in index.entries}
    scored_cache = [(e.sound_id, e.vector) for e in index.entries]

    hits = {k: 0 for k in ks}
    ranks: list[tuple[str, int]] = []
    skipped = 0
    for rec in test_records:
        if rec.id not in indexed_ids:
            skipped += 1
            continue
        try:
            query = embed_bag(tokenize(rec.caption), model)
        except EmptyBagError:
            skipped += 1
            continue
        qn = float(np.linalg.norm(query))
        if qn == 0.0:
            skipped += 1
            continue
        scored = [(sid, cosine(query, vec)) for sid, vec in scored_cache]
        own_score = next(s for sid, s in scored if sid == rec.id)
        rank = _rank_of(rec.id, own_score, scored)
        ranks.append((rec.id, rank))
        for k in ks:
            if rank <= k:
                hits[k] += 1
    if not ranks:
        raise DataError("every retrieval query was skipped")
    n = len(ranks)
    return RetrievalReport(
        recall_at={k: hits[k] / n for k in ks},
        num_queries=n,
        num_skipped_queries=skipped,
        per_query_ranks=ranks,
    )


def chance_mean_rank(vocab_size: int) -> float:
    """Expected rank of a uniformly random item among vocab_size candidates."""
    return (vocab_size + 1) / 2


def eval_foley(pairs: list[FoleyPair], model: EmbeddingModel) -> FoleyReport:
    """Rank each pair's true technique against one decoy per vocabulary word.

    Candidates are scored by cosine to the embedded target phrase.  The
    technique's rank is 1 + the number of decoys scoring strictly higher
    plus the number of decoys tying it: ties count against the technique,
    so degenerate constant embeddings cannot score well.  Pairs whose
    target or technique embeds to nothing are skipped and counted.
    """
    if not pairs:
        raise DataError("no foley pairs to evaluate")
    vocab_size = len(model.vocab)
    if np.any(np.linalg.norm(model.projection, axis=1) == 0.0):
        raise DataError("model contains zero embedding rows; cosine is undefined")

    per_pair_ranks: list[int] = []
    skipped = 0
    for pair in pairs:
        try:
            target_vec = embed_bag(tokenize(pair.target), model)
            technique_vec = embed_bag(tokenize(pair.technique), model)
        except EmptyBagError:
            skipped += 1
            continue
        if float(np.linalg.norm(target_vec)) == 0.0 or (
            float(np.linalg.norm(technique_vec)) == 0.0
        ):
            skipped += 1
            continue
        # every candidate goes through the same cosine call, so exact ties
        # between the technique and decoys survive float arithmetic
        technique_score = cosine(target_vec, technique_vec)
        rank = 1
        for i in range(vocab_size):
            decoy_score = cosine(target_vec, model.projection[i])
            if decoy_score >= technique_score:
                rank += 1
        per_pair_ranks.append(rank)
    if not per_pair_ranks:
        raise DataError("every foley pair was skipped")
    return FoleyReport(
        mean_rank=float(np.mean(per_pair_ranks)),
        per_pair_ranks=per_pair_ranks,
        chance_rank=chance_mean_rank(vocab_size),
        num_skipped=skipped,
    )


def spearman(xs: list[float], ys: list[float]) -> float:
    """Pearson correlation of fractional ranks; ties get average ranks."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise DataError("spearman needs two equal-length vectors")
    if xs.shape[0] < 2:
        raise DataError("spearman needs at least 2 observations")
    rx = rankdata(xs, method="average")
    ry = rankdata(ys, method="average")
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sx = float(np.dot(dx, dx))
    sy = float(np.dot(dy, dy))
    if sx == 0.0 or sy == 0.0:
        raise DataError("spearman is undefined for a constant input")
    return float(np.dot(dx, dy) / math.sqrt(sx * sy))


def eval_wordsim(pairs: list[WordSimPair], model: EmbeddingModel) -> WordSimReport:
    """Spearman agreement between embedding cosines and human scores.

    Pairs with either word out of vocabulary are skipped and counted.
    """
    if not pairs:
        raise DataError("no word-similarity pairs to evaluate")
    model_scores: list[float] = []
    human_scores: list[float] = []
    skipped = 0
    for pair in pairs:
        ia = model.vocab.index.get(pair.word_a.lower())
        ib = model.vocab.index.get(pair.word_b.lower())
        if ia is None or ib is None:
            skipped += 1
            continue
        model_scores.append(cosine(model.projection[ia], model.projection[ib]))
        human_scores.append(pair.human_score)
    if len(model_scores) < 2:
        raise DataError(f"only {len(model_scores)} usable pairs; need at least 2")
    return WordSimReport(
        spearman_rho=spearman(model_scores, human_scores),
        pairs_used=len(model_scores),
        pairs_skipped=skipped,
    )


def nearest_neighbors(
    word: str, model: EmbeddingModel, n: int
) -> list[tuple[str, float]]:
    """Top-n other vocabulary words by cosine to the query word's row."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = model.vocab.index.get(word)
    if idx is None:
        raise DataError(f"word {word!r} is not in the vocabulary")
    query = model.projection[idx]
    scored = [
        (other, cosine(query, model.projection[i]))
        for i, other in enumerate(model.vocab.words)
        if i != idx
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:n]
