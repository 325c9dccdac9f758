"""Synthetic grouped corpora for desk-scale experiments and tests.

Each group owns a private tag pool and a well-separated mean feature
vector; sounds sample disjoint tag and caption-token sets from their
group's pool and sit at the group mean plus Gaussian noise.  Generation is
deterministic for a fixed seed, down to the bytes of the written files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import FoleyPair, SoundRecord, WordSimPair

DEFAULT_GROUPS = 5
DEFAULT_TAGS_PER_GROUP = 20
DEFAULT_SOUNDS_PER_GROUP = 100


@dataclass
class SyntheticSpec:
    groups: int = DEFAULT_GROUPS
    tags_per_group: int = DEFAULT_TAGS_PER_GROUP
    sounds_per_group: int = DEFAULT_SOUNDS_PER_GROUP
    tags_per_sound: int = 5
    caption_tokens_per_sound: int = 5
    feature_dim: int = 10
    group_separation: float = 10.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.groups, self.tags_per_group, self.sounds_per_group) < 1:
            raise ValueError("groups, tags_per_group, sounds_per_group must be >= 1")
        if self.tags_per_sound < 1 or self.caption_tokens_per_sound < 0:
            raise ValueError("bad per-sound tag/caption counts")
        if self.tags_per_sound + self.caption_tokens_per_sound > self.tags_per_group:
            raise ValueError(
                "tags_per_sound + caption_tokens_per_sound exceeds the group tag pool"
            )
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.group_separation < 0 or self.noise_std < 0:
            raise ValueError("group_separation and noise_std must be >= 0")


def group_tag_pool(group: int, tags_per_group: int) -> list[str]:
    """Alphanumeric lowercase tags private to one group (tokenizer-safe)."""
    return [f"g{group}w{j}" for j in range(tags_per_group)]


def group_means(spec: SyntheticSpec) -> np.ndarray:
    """Group mean vectors, pairwise separated by at least group_separation."""
    if spec.groups <= spec.feature_dim:
        # scaled standard-basis rows: pairwise distance separation * sqrt(2)
        means = np.zeros((spec.groups, spec.feature_dim))
        for g in range(spec.groups):
            means[g, g] = spec.group_separation
        return means
    # more groups than dimensions: random directions rescaled so the
    # closest pair sits exactly at the separation
    rng = np.random.default_rng(spec.seed + 1)
    means = rng.standard_normal((spec.groups, spec.feature_dim))
    dists = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
    closest = dists[~np.eye(spec.groups, dtype=bool)].min()
    if closest <= 0:
        raise ValueError("degenerate group means; pick another seed")
    return means * (spec.group_separation / closest)


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[list[SoundRecord], dict[str, int]]:
    """Generate records plus the id -> group map that created them.

    A sound's tags and its caption tokens are disjoint samples (without
    replacement) from the same group pool, so captions never leak the
    record's own tags.
    """
    rng = np.random.default_rng(spec.seed)
    means = group_means(spec)
    records: list[SoundRecord] = []
    groups: dict[str, int] = {}
    n_pick = spec.tags_per_sound + spec.caption_tokens_per_sound
    counter = 0
    for g in range(spec.groups):
        pool = group_tag_pool(g, spec.tags_per_group)
        for _ in range(spec.sounds_per_group):
            sound_id = f"snd{counter:05d}"
            counter += 1
            picked = rng.choice(spec.tags_per_group, size=n_pick, replace=False)
            tags = [pool[i] for i in picked[: spec.tags_per_sound]]
            caption_tokens = [pool[i] for i in picked[spec.tags_per_sound :]]
            feature = means[g] + spec.noise_std * rng.standard_normal(spec.feature_dim)
            records.append(
                SoundRecord(
                    id=sound_id,
                    tags=tags,
                    caption=" ".join(caption_tokens),
                    feature_vector=feature,
                )
            )
            groups[sound_id] = g
    return records, groups


def synthetic_feature_schema(spec: SyntheticSpec) -> dict[str, int]:
    """Descriptor-dims mapping whose feature length matches the generator.

    Generated records carry plain feature vectors, so the schema is a
    single pseudo-descriptor covering half the vector length.
    """
    if spec.feature_dim % 2 != 0:
        raise ValueError("synthetic feature_dim must be even to pose as mean+variance")
    return {"synthetic": spec.feature_dim // 2}


def make_foley_pairs(
    spec: SyntheticSpec,
    n_pairs: int,
    phrase_len: int = 3,
    seed: int | None = None,
) -> list[FoleyPair]:
    """Within-group foley analogues: target and technique phrases drawn
    disjointly from one group's tag pool."""
    if 2 * phrase_len > spec.tags_per_group:
        raise ValueError("phrase_len too large for the group tag pool")
    rng = np.random.default_rng(spec.seed + 2 if seed is None else seed)
    pairs: list[FoleyPair] = []
    for i in range(n_pairs):
        g = i % spec.groups
        pool = group_tag_pool(g, spec.tags_per_group)
        picked = rng.choice(spec.tags_per_group, size=2 * phrase_len, replace=False)
        target = " ".join(pool[j] for j in picked[:phrase_len])
        technique = " ".join(pool[j] for j in picked[phrase_len:])
        pairs.append(FoleyPair(target=target, technique=technique))
    return pairs


def make_wordsim_pairs(
    spec: SyntheticSpec, n_pairs: int, seed: int | None = None
) -> list[WordSimPair]:
    """Relatedness pairs scored 1.0 for same-group words, 0.0 otherwise."""
    if spec.tags_per_group < 2:
        raise ValueError("need at least two tags per group for distinct word pairs")
    rng = np.random.default_rng(spec.seed + 3 if seed is None else seed)
    pairs: list[WordSimPair] = []
    for i in range(n_pairs):
        same = i % 2 == 0 or spec.groups < 2
        ga = int(rng.integers(spec.groups))
        if same:
            gb = ga
        else:
            gb = int((ga + 1 + rng.integers(spec.groups - 1)) % spec.groups)
        pool_a = group_tag_pool(ga, spec.tags_per_group)
        pool_b = group_tag_pool(gb, spec.tags_per_group)
        wa = pool_a[int(rng.integers(spec.tags_per_group))]
        wb = pool_b[int(rng.integers(spec.tags_per_group))]
        while same and wb == wa:
            wb = pool_b[int(rng.integers(spec.tags_per_group))]
        pairs.append(WordSimPair(word_a=wa, word_b=wb, human_score=1.0 if same else 0.0))
    return pairs
