"""K-means over standardized feature vectors.

The fitted model turns a sound into a cluster index; that index is the
training target for the embedding model, so the assignment map is computed
once and frozen before any training happens.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import SoundRecord
from .errors import DataError, NumericError
from .features import FeatureSchema, Standardizer, apply_standardizer, summarize

log = logging.getLogger(__name__)


@dataclass
class ClusterModel:
    """K centroids over the standardized feature space.

    `inertia` is the sum of squared distances of the fit points to their
    assigned centroids; `inertia_history` holds the per-iteration values
    (diagnostic, not persisted).
    """

    k: int
    centroids: np.ndarray
    standardizer: Standardizer
    inertia: float
    iterations_run: int
    inertia_history: list[float] | None = None


def _squared_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (N, k) matrix of squared euclidean distances
    diff = X[:, None, :] - centroids[None, :, :]
    return np.einsum("nkf,nkf->nk", diff, diff)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    centroids[0] = X[rng.integers(n)]
    closest = np.einsum("nf,nf->n", X - centroids[0], X - centroids[0])
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            probs = closest / total
        else:
            # all remaining points coincide with chosen centroids
            probs = np.full(n, 1.0 / n)
        idx = rng.choice(n, p=probs)
        centroids[j] = X[idx]
        d = np.einsum("nf,nf->n", X - centroids[j], X - centroids[j])
        closest = np.minimum(closest, d)
    return centroids


def kmeans_fit(
    X: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-6,
    standardizer: Standardizer | None = None,
) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding, deterministic for a fixed seed.

    Stops when the relative inertia improvement drops below `tol` or after
    `max_iter` iterations.  Empty clusters are repaired by re-seeding them
    at the point currently farthest from its assigned centroid, which keeps
    the model's output arity at exactly k.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("kmeans input must be an N x F matrix")
    n = X.shape[0]
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds the number of points n={n}")
    if not np.all(np.isfinite(X)):
        raise NumericError("kmeans input contains non-finite values")
    if standardizer is None:
        standardizer = Standardizer.identity(X.shape[1])

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(X, k, rng)

    prev_inertia = np.inf
    history: list[float] = []
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        d2 = _squared_distances(X, centroids)
        labels = np.argmin(d2, axis=1)  # ties go to the lowest index

        # repair empty clusters before the centroid update
        point_d2 = d2[np.arange(n), labels]
        for c in range(k):
            if not np.any(labels == c):
                far = int(np.argmax(point_d2))
                centroids[c] = X[far]
                labels[far] = c
                point_d2[far] = 0.0

        for c in range(k):
            centroids[c] = X[labels == c].mean(axis=0)

        d2 = _squared_distances(X, centroids)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), labels].sum())
        assert inertia <= prev_inertia + 1e-9, "inertia increased across an iteration"
        history.append(inertia)

        if prev_inertia == 0.0 or (
            np.isfinite(prev_inertia)
            and (prev_inertia - inertia) < tol * max(prev_inertia, 1e-300)
        ):
            converged = True
            prev_inertia = inertia
            break
        prev_inertia = inertia

    if not converged:
        log.warning("kmeans did not converge within %d iterations", max_iter)
    return ClusterModel(
        k=k,
        centroids=centroids,
        standardizer=standardizer,
        inertia=prev_inertia,
        iterations_run=iterations,
        inertia_history=history,
    )


def assign(model: ClusterModel, x: np.ndarray) -> int:
    """Nearest-centroid index for one standardized vector; ties take the lowest."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.centroids.shape[1],):
        raise ValueError(
            f"vector length {x.shape} does not match centroid width"
            f" {model.centroids.shape[1]}"
        )
    d2 = np.einsum("kf,kf->k", model.centroids - x, model.centroids - x)
    return int(np.argmin(d2))


def assign_corpus(
    model: ClusterModel, records: list[SoundRecord], schema: FeatureSchema
) -> dict[str, int]:
    """Standardize-then-assign every record; the result is frozen before training."""
    assignments: dict[str, int] = {}
    for rec in records:
        x = apply_standardizer(model.standardizer, summarize(rec, schema))
        assignments[rec.id] = assign(model, x)
    return assignments


def save_cluster_model(model: ClusterModel, path: str | Path) -> None:
    obj = {
        "k": model.k,
        "centroids": model.centroids.tolist(),
        "standardizer": {
            "means": model.standardizer.means.tolist(),
            "stds": model.standardizer.stds.tolist(),
        },
        "inertia": model.inertia,
    }
    Path(path).write_text(json.dumps(obj), encoding="utf-8")


def load_cluster_model(path: str | Path) -> ClusterModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"cluster model file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
        centroids = np.asarray(obj["centroids"], dtype=np.float64)
        standardizer = Standardizer(
            means=np.asarray(obj["standardizer"]["means"], dtype=np.float64),
            stds=np.asarray(obj["standardizer"]["stds"], dtype=np.float64),
        )
        model = ClusterModel(
            k=int(obj["k"]),
            centroids=centroids,
            standardizer=standardizer,
            inertia=float(obj["inertia"]),
            iterations_run=0,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed cluster model file {path}: {exc}") from exc
    if model.centroids.ndim != 2 or model.centroids.shape[0] != model.k:
        raise DataError(f"cluster model file {path}: centroid shape does not match k")
    return model
