"""Fixed-length audio feature vectors: per-descriptor mean/variance + z-scoring.

A sound's per-frame descriptor matrices are summarized into one vector:
the per-dimension mean over frames for every descriptor (in schema order),
followed by the per-dimension population variance in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import SoundRecord
from .errors import DataError

DEFAULT_DESCRIPTOR_DIMS = {
    "mfcc": 13,
    "spectral_contrast": 6,
    "dissonance": 1,
    "zero_crossing_rate": 1,
    "spectral_moments": 5,
    "pitch_salience": 1,
}

STD_FLOOR = 1e-12


@dataclass
class FeatureSchema:
    """Ordered map descriptor name -> per-frame dimensionality."""

    descriptor_dims: dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_DESCRIPTOR_DIMS)
    )

    def __post_init__(self) -> None:
        if not self.descriptor_dims:
            raise ValueError("schema needs at least one descriptor")
        for name, dims in self.descriptor_dims.items():
            if dims < 1:
                raise ValueError(f"descriptor {name!r} has dimensionality {dims} < 1")

    @property
    def total_dim(self) -> int:
        return sum(self.descriptor_dims.values())

    @property
    def feature_length(self) -> int:
        # mean block then variance block
        return 2 * self.total_dim


@dataclass
class Standardizer:
    """Per-dimension means and stds; constant dimensions keep std 1."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if self.means.shape != self.stds.shape or self.means.ndim != 1:
            raise ValueError("means and stds must be vectors of equal length")
        if np.any(self.stds <= 0):
            raise ValueError("stds must be positive")

    @classmethod
    def identity(cls, length: int) -> "Standardizer":
        return cls(means=np.zeros(length), stds=np.ones(length))


def summarize(record: SoundRecord, schema: FeatureSchema) -> np.ndarray:
    """Mean-then-variance summary of a record's descriptors.

    Records that already carry a feature_vector of the schema's length are
    passed through verbatim.
    """
    if record.feature_vector is not None:
        vec = np.asarray(record.feature_vector, dtype=np.float64)
        if vec.shape != (schema.feature_length,):
            raise DataError(
                f"record {record.id!r}: feature_vector has length {vec.shape[0]},"
                f" schema expects {schema.feature_length}"
            )
        if not np.all(np.isfinite(vec)):
            raise DataError(f"record {record.id!r}: non-finite feature_vector")
        return vec
    if record.descriptors is None:
        raise DataError(f"record {record.id!r}: no descriptors and no feature_vector")

    means: list[np.ndarray] = []
    variances: list[np.ndarray] = []
    for name, dims in schema.descriptor_dims.items():
        if name not in record.descriptors:
            raise DataError(f"record {record.id!r}: missing descriptor {name!r}")
        mat = record.descriptors[name]
        if mat.shape[0] < 1:
            raise DataError(f"record {record.id!r}: descriptor {name!r} has no frames")
        if mat.shape[1] != dims:
            raise DataError(
                f"record {record.id!r}: descriptor {name!r} has {mat.shape[1]} dims,"
                f" schema expects {dims}"
            )
        if not np.all(np.isfinite(mat)):
            raise DataError(f"record {record.id!r}: non-finite values in {name!r}")
        means.append(mat.mean(axis=0))
        variances.append(mat.var(axis=0))  # population variance, defined for 1 frame
    return np.concatenate(means + variances)


def summarize_corpus(records: list[SoundRecord], schema: FeatureSchema) -> np.ndarray:
    """Stack per-record summaries into an N x feature_length matrix."""
    if not records:
        return np.empty((0, schema.feature_length))
    return np.stack([summarize(rec, schema) for rec in records])


def fit_standardizer(X: np.ndarray) -> Standardizer:
    """Per-column mean/population-std; stds below the floor become 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("standardizer needs a matrix with at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise DataError("standardizer input contains non-finite values")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds < STD_FLOOR, 1.0, stds)
    return Standardizer(means=means, stds=stds)


def apply_standardizer(standardizer: Standardizer, x: np.ndarray) -> np.ndarray:
    """(x - means) / stds; accepts one vector or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != standardizer.means.shape[0]:
        raise ValueError(
            f"feature length {x.shape[-1]} does not match standardizer"
            f" length {standardizer.means.shape[0]}"
        )
    return (x - standardizer.means) / standardizer.stds
