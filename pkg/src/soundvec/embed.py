"""Tag-bag embedding model and its training loops.

A bag of tags is embedded by averaging projection rows; a linear output
layer plus softmax turns that average into a distribution over targets.
The main objective predicts a sound's audio cluster from its tags
(negative log-likelihood of the assigned cluster); the tag-context
ablation predicts each tag from the other tags of the same sound (CBOW
over tag sets, full softmax over the vocabulary).

Both trainers run sequential single-example SGD with classical momentum
and are bit-deterministic for a fixed corpus and config.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import SoundRecord, Vocabulary
from .errors import DataError, NumericError

log = logging.getLogger(__name__)

LOSS_CLAMP = 1e-300

INIT_PRETRAINED = "pretrained"
INIT_RANDOM = "random"
DECAY_CONSTANT = "constant"
DECAY_LINEAR = "linear-to-zero"


@dataclass(eq=False)
class EmbeddingModel:
    """Projection rows (one per word) and an optional output layer.

    projection: |V| x D, row i embeds vocab word i.
    output: D x K linear layer mapping bag averages to target logits;
    None for models loaded for ranking only.
    """

    vocab: Vocabulary
    projection: np.ndarray
    output: np.ndarray | None = None

    @property
    def dims(self) -> int:
        return self.projection.shape[1]

    @property
    def k(self) -> int:
        return 0 if self.output is None else self.output.shape[1]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            vocab=self.vocab,
            projection=self.projection.copy(),
            output=None if self.output is None else self.output.copy(),
        )


@dataclass
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.025
    momentum: float = 0.9
    seed: int = 0
    init: str = INIT_PRETRAINED
    lr_decay: str = DECAY_LINEAR

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.init not in (INIT_PRETRAINED, INIT_RANDOM):
            raise ValueError(f"unknown init {self.init!r}")
        if self.lr_decay not in (DECAY_CONSTANT, DECAY_LINEAR):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")


@dataclass
class PretrainedVectors:
    """Word -> vector map loaded from a text embedding file."""

    vectors: dict[str, np.ndarray]
    dims: int

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[word]

    def words(self) -> set[str]:
        return set(self.vectors)


@dataclass
class VelocityState:
    """Momentum buffers; projection-row buffers appear on first touch."""

    projection_rows: dict[int, np.ndarray] = field(default_factory=dict)
    output: np.ndarray | None = None


def init_embeddings(
    vocab: Vocabulary,
    dims: int,
    init: str,
    pretrained: PretrainedVectors | None,
    k: int,
    seed: int,
) -> EmbeddingModel:
    """Build a fresh model: projection from pretrained rows or a seeded
    uniform [-0.5/D, 0.5/D]; output always seeded uniform [-1/sqrt(D), 1/sqrt(D)].
    """
    if dims < 1:
        raise ValueError("dims must be >= 1")
    if k < 2:
        raise ValueError("k must be >= 2 for a trainable model")
    rng = np.random.default_rng(seed)
    if init == INIT_PRETRAINED:
        if pretrained is None:
            raise DataError("pretrained init requested but no vectors supplied")
        if pretrained.dims != dims:
            raise DataError(
                f"pretrained vectors have {pretrained.dims} dims, expected {dims}"
            )
        projection = np.empty((len(vocab), dims), dtype=np.float64)
        for i, word in enumerate(vocab.words):
            if word not in pretrained:
                raise DataError(f"vocabulary word {word!r} has no pretrained vector")
            projection[i] = pretrained[word]
    elif init == INIT_RANDOM:
        projection = rng.uniform(-0.5 / dims, 0.5 / dims, size=(len(vocab), dims))
    else:
        raise ValueError(f"unknown init {init!r}")
    bound = 1.0 / math.sqrt(dims)
    output = rng.uniform(-bound, bound, size=(dims, k))
    return EmbeddingModel(vocab=vocab, projection=projection, output=output)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-logit subtraction)."""
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def forward(
    model: EmbeddingModel, tag_indices: list[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Bag average of projection rows -> output logits -> softmax.

    Returns (hidden, probs).  tag_indices must be nonempty, in-range and
    already deduplicated.
    """
    if model.output is None:
        raise ValueError("model has no output layer")
    if len(tag_indices) == 0:
        raise ValueError("tag bag is empty")
    idx = np.asarray(tag_indices, dtype=np.intp)
    if idx.min() < 0 or idx.max() >= model.projection.shape[0]:
        raise ValueError(f"tag index out of range for |V|={model.projection.shape[0]}")
    hidden = model.projection[idx].mean(axis=0)
    probs = softmax(hidden @ model.output)
    return hidden, probs


def loss(probs: np.ndarray, target: int) -> float:
    """Negative log-likelihood of the target class."""
    if not 0 <= target < probs.shape[0]:
        raise ValueError(f"target {target} out of range for K={probs.shape[0]}")
    return -math.log(max(float(probs[target]), LOSS_CLAMP))


def gradients(
    model: EmbeddingModel, tag_indices: list[int], target: int
) -> tuple[dict[int, np.ndarray], np.ndarray]:
    """Analytic gradients of the NLL wrt participating projection rows and output.

    With delta = probs - onehot(target): the output gradient is the outer
    product hidden x delta, and every participating row receives
    (output @ delta) / |T|.
    """
    hidden, probs = forward(model, tag_indices)
    if not 0 <= target < probs.shape[0]:
        raise ValueError(f"target {target} out of range for K={probs.shape[0]}")
    delta = probs.copy()
    delta[target] -= 1.0
    grad_output = np.outer(hidden, delta)
    grad_hidden = (model.output @ delta) / len(tag_indices)
    row_grads = {int(i): grad_hidden for i in tag_indices}
    return row_grads, grad_output


def sgd_step(
    model: EmbeddingModel,
    velocity: VelocityState,
    grads: tuple[dict[int, np.ndarray], np.ndarray],
    lr: float,
    momentum: float,
) -> tuple[EmbeddingModel, VelocityState]:
    """Classical momentum update, in place: v <- m*v - lr*g; param <- param + v."""
    row_grads, grad_output = grads
    for i, g in row_grads.items():
        v = velocity.projection_rows.get(i)
        if v is None:
            v = np.zeros(model.dims)
        v = momentum * v - lr * g
        velocity.projection_rows[i] = v
        model.projection[i] += v
    if grad_output.shape != model.output.shape:
        raise ValueError("output gradient shape mismatch")
    if velocity.output is None:
        velocity.output = np.zeros_like(model.output)
    velocity.output = momentum * velocity.output - lr * grad_output
    model.output += velocity.output
    return model, velocity


def _in_vocab_indices(record: SoundRecord, vocab: Vocabulary) -> list[int]:
    # dedup preserving order; ingest already dedups but records may be built by hand
    seen: dict[int, None] = {}
    for tag in record.tags:
        idx = vocab.index.get(tag)
        if idx is not None:
            seen.setdefault(idx, None)
    return list(seen)


def _learning_rate(config: TrainConfig, step: int, total_steps: int) -> float:
    if config.lr_decay == DECAY_LINEAR and total_steps > 0:
        return config.learning_rate * (1.0 - step / total_steps)
    return config.learning_rate


def train(
    train_records: list[SoundRecord],
    assignments: dict[str, int],
    model: EmbeddingModel,
    config: TrainConfig,
) -> tuple[EmbeddingModel, list[float]]:
    """Train the cluster-prediction objective.

    Per epoch: seeded shuffle, then one forward/backward/update pass per
    record (batch size 1).  Tags outside the vocabulary are skipped;
    records with no in-vocab tags are dropped (count logged).  Returns the
    trained model (the input is left untouched) and the per-epoch mean
    loss trace.
    """
    if model.output is None:
        raise ValueError("model has no output layer")
    if model.k < 2:
        raise ValueError("training needs K >= 2 clusters")
    prepared: list[tuple[list[int], int]] = []
    skipped_records = 0
    oov_tags = 0
    for rec in train_records:
        if rec.id not in assignments:
            raise DataError(f"record {rec.id!r} has no cluster assignment")
        target = assignments[rec.id]
        if not 0 <= target < model.k:
            raise DataError(
                f"record {rec.id!r}: cluster {target} out of range for K={model.k}"
            )
        idxs = _in_vocab_indices(rec, model.vocab)
        oov_tags += len(set(rec.tags)) - len(idxs)
        if not idxs:
            skipped_records += 1
            continue
        prepared.append((idxs, target))
    if skipped_records or oov_tags:
        log.info(
            "training: %d records dropped (no in-vocab tags), %d OOV tags skipped",
            skipped_records,
            oov_tags,
        )
    if not prepared:
        raise DataError("no trainable records: every tag fell outside the vocabulary")

    trained = model.copy()
    if config.epochs == 0:
        return trained, []

    rng = np.random.default_rng(config.seed)
    velocity = VelocityState()
    total_steps = config.epochs * len(prepared)
    step = 0
    trace: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(prepared))
        epoch_loss = 0.0
        for i in order:
            idxs, target = prepared[i]
            _, probs = forward(trained, idxs)
            epoch_loss += loss(probs, target)
            grads = gradients(trained, idxs, target)
            lr = _learning_rate(config, step, total_steps)
            sgd_step(trained, velocity, grads, lr, config.momentum)
            step += 1
        mean_loss = epoch_loss / len(prepared)
        if not math.isfinite(mean_loss):
            raise NumericError(f"training diverged: epoch mean loss {mean_loss}")
        trace.append(mean_loss)
    return trained, trace


def train_tag_cbow(
    train_records: list[SoundRecord],
    vocab: Vocabulary,
    dims: int,
    config: TrainConfig,
    pretrained: PretrainedVectors | None = None,
) -> tuple[EmbeddingModel, list[float]]:
    """Tag-context ablation: predict each tag from the sound's other tags.

    For every record whose tag set has >= 2 in-vocab tags, each tag in turn
    becomes the target and the remaining tags the context bag; prediction
    is a full softmax over the vocabulary.  Singleton tag sets contribute
    nothing.  Update rule and determinism contract match `train`.
    """
    model = init_embeddings(
        vocab, dims, config.init, pretrained, k=len(vocab), seed=config.seed
    )
    prepared: list[list[int]] = []
    n_events = 0
    for rec in train_records:
        idxs = _in_vocab_indices(rec, vocab)
        if len(idxs) >= 2:
            prepared.append(idxs)
            n_events += len(idxs)
    if not prepared:
        raise DataError(
            "tag-context training has no records with >= 2 in-vocab tags"
        )
    if config.epochs == 0:
        return model, []

    rng = np.random.default_rng(config.seed)
    velocity = VelocityState()
    total_steps = config.epochs * n_events
    step = 0
    trace: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(prepared))
        epoch_loss = 0.0
        for i in order:
            idxs = prepared[i]
            for pos in range(len(idxs)):
                target = idxs[pos]
                context = idxs[:pos] + idxs[pos + 1 :]
                _, probs = forward(model, context)
                epoch_loss += loss(probs, target)
                grads = gradients(model, context, target)
                lr = _learning_rate(config, step, total_steps)
                sgd_step(model, velocity, grads, lr, config.momentum)
                step += 1
        mean_loss = epoch_loss / n_events
        if not math.isfinite(mean_loss):
            raise NumericError(f"training diverged: epoch mean loss {mean_loss}")
        trace.append(mean_loss)
    return model, trace


def _looks_like_header(line: str) -> bool:
    fields = line.split()
    if len(fields) != 2:
        return False
    try:
        int(fields[0])
        int(fields[1])
    except ValueError:
        return False
    return True


def load_pretrained(
    path: str | Path, expected_dims: int | None = None
) -> PretrainedVectors:
    """Load a text embedding file: optional "<count> <dim>" header, then
    one "word v1 ... vD" line per word."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")
    vectors: dict[str, np.ndarray] = {}
    dims: int | None = None
    declared_count: int | None = None
    with path.open("r", encoding="utf-8") as fh:
        first = True
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if first and _looks_like_header(line):
                declared_count, dims = (int(f) for f in line.split())
                first = False
                continue
            first = False
            fields = line.rstrip("\n").split(" ")
            word = fields[0]
            if not word:
                raise DataError(f"line {lineno}: empty word")
            try:
                vec = np.asarray([float(f) for f in fields[1:] if f], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"line {lineno}: bad vector component: {exc}") from exc
            if dims is None:
                dims = vec.shape[0]
            if vec.shape[0] != dims:
                raise DataError(
                    f"line {lineno}: vector has {vec.shape[0]} components, expected {dims}"
                )
            if word in vectors:
                raise DataError(f"line {lineno}: duplicate word {word!r}")
            vectors[word] = vec
    if not vectors or dims is None or dims == 0:
        raise DataError(f"embedding file {path} contains no vectors")
    if declared_count is not None and declared_count != len(vectors):
        raise DataError(
            f"embedding file {path}: header declares {declared_count} words,"
            f" found {len(vectors)}"
        )
    if expected_dims is not None and dims != expected_dims:
        raise DataError(
            f"embedding file {path} has {dims} dims, expected {expected_dims}"
        )
    return PretrainedVectors(vectors=vectors, dims=dims)


def save_embeddings(model: EmbeddingModel, path: str | Path) -> None:
    """Write "<count> <dim>" then one row per word, 17 significant digits
    (round-trips float64 exactly)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{len(model.vocab)} {model.dims}\n")
        for i, word in enumerate(model.vocab.words):
            row = " ".join(f"{v:.17g}" for v in model.projection[i])
            fh.write(f"{word} {row}\n")


def load_embeddings(path: str | Path) -> EmbeddingModel:
    """Load projection + vocabulary from a text embedding file (no output layer)."""
    pretrained = load_pretrained(path)
    words = list(pretrained.vectors)  # file order
    vocab = Vocabulary.from_words(words)
    projection = np.stack([pretrained.vectors[w] for w in words])
    return EmbeddingModel(vocab=vocab, projection=projection, output=None)
