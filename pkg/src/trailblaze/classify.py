"""One-vs-rest linear SVMs trained by averaged stochastic subgradient descent,
plus the leave-one-actor-out evaluation harness with blended confusion matrices."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import fisher_vector, fit_gmm


@dataclass(frozen=True)
class LabeledVideo:
    """An encoded video ready for the classifier."""

    fv: np.ndarray
    label: str
    actor: str


@dataclass(frozen=True)
class VideoSample:
    """A video's raw descriptor set; Fisher vectors are computed per fold."""

    clip_id: str
    label: str
    actor: str
    descriptors: np.ndarray  # (T, N), T may be 0


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray  # (C, D)
    biases: np.ndarray   # (C,)
    labels: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.weights) or len(self.biases) != len(self.weights):
            raise ValueError("one weight vector and bias per class required")
        if not np.isfinite(self.weights).all() or not np.isfinite(self.biases).all():
            raise ValueError("model parameters must be finite")


@dataclass
class ConfusionMatrix:
    """Rows are actual classes, columns predicted."""

    counts: np.ndarray
    labels: tuple

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (len(self.labels), len(self.labels)):
            raise ValueError("counts must be CxC")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")


def derive_seed(seed: int, tag: str) -> int:
    """Stable per-item seed derived from the master seed and a string tag."""
    return zlib.crc32(f"{seed}:{tag}".encode()) & 0xFFFFFFFF


def train(examples, C: float = 1.0, epochs: int = 50, seed: int = 0) -> SvmModel:
    """Averaged Pegasos-style subgradient descent on the one-vs-rest hinge loss.

    lambda = 1/(C*n); learning rate 1/(lambda*t); the returned weights are
    the average over all iterates, which makes training deterministic and
    stable given the seed.
    """
    examples = list(examples)
    labels = tuple(sorted({e.label for e in examples}))
    if len(labels) < 2:
        raise ValueError("need at least 2 classes to train")
    index = {lab: i for i, lab in enumerate(labels)}
    X = np.stack([np.asarray(e.fv, dtype=np.float64) for e in examples])
    Y = -np.ones((len(examples), len(labels)))
    for i, e in enumerate(examples):
        Y[i, index[e.label]] = 1.0

    n, dim = X.shape
    lam = 1.0 / (C * n)
    W = np.zeros((len(labels), dim))
    b = np.zeros(len(labels))
    W_sum = np.zeros_like(W)
    b_sum = np.zeros_like(b)
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            x = X[i]
            margins = Y[i] * (W @ x + b)
            W *= 1.0 - eta * lam
            viol = margins < 1.0
            if viol.any():
                W[viol] += (eta * Y[i, viol])[:, None] * x[None]
                b[viol] += eta * Y[i, viol]
            W_sum += W
            b_sum += b
    return SvmModel(weights=W_sum / t, biases=b_sum / t, labels=labels)


def predict(model: SvmModel, fv) -> str:
    """Argmax class score; ties break toward the earlier class label."""
    x = np.asarray(fv, dtype=np.float64)
    if x.shape != (model.weights.shape[1],):
        raise ValueError(f"feature dimension {x.shape} does not match model "
                         f"{model.weights.shape[1]}")
    scores = model.weights @ x + model.biases
    return model.labels[int(np.argmax(scores))]


def accuracy(cm: ConfusionMatrix) -> float:
    total = int(cm.counts.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm.counts)) / total


def leave_one_actor_out(videos, k: int = 64, C: float = 1.0, epochs: int = 50,
                        seed: int = 0, max_iters: int = 100,
                        gmm_max_points: int = 100_000,
                        standardize: bool = False) -> ConfusionMatrix:
    """One fold per actor: the fold's videos are tested against a codebook
    and SVM fit on the remaining actors only; fold confusion matrices are
    summed into the blended matrix."""
    videos = list(videos)
    actors = sorted({v.actor for v in videos})
    if len(actors) < 2:
        raise ValueError("need at least 2 actors")
    labels = tuple(sorted({v.label for v in videos}))
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)

    for actor in actors:
        train_videos = [v for v in videos if v.actor != actor]
        test_videos = [v for v in videos if v.actor == actor]
        assert not {v.clip_id for v in train_videos} & {v.clip_id for v in test_videos}
        fold_labels = {v.label for v in train_videos}
        if fold_labels != set(labels):
            missing = sorted(set(labels) - fold_labels)
            raise ValueError(f"fold for actor {actor} misses classes {missing} in training")

        fold_seed = derive_seed(seed, f"fold:{actor}")
        pool = np.vstack([v.descriptors for v in train_videos if len(v.descriptors)])
        if len(pool) > gmm_max_points:
            rng = np.random.default_rng(fold_seed)
            pool = pool[rng.choice(len(pool), gmm_max_points, replace=False)]
        mean = pool.mean(axis=0) if standardize else np.zeros(pool.shape[1])
        scale = pool.std(axis=0) if standardize else np.ones(pool.shape[1])
        scale = np.where(scale > 0, scale, 1.0)
        codebook = fit_gmm((pool - mean) / scale, k=k, seed=fold_seed,
                           max_iters=max_iters)

        def encode(v):
            if len(v.descriptors) == 0:
                return fisher_vector(np.zeros((0, codebook.dim)), codebook)
            return fisher_vector((v.descriptors - mean) / scale, codebook)

        model = train([LabeledVideo(encode(v), v.label, v.actor) for v in train_videos],
                      C=C, epochs=epochs, seed=fold_seed)
        for v in test_videos:
            counts[index[v.label], index[predict(model, encode(v))]] += 1
    return ConfusionMatrix(counts=counts, labels=labels)


# ---------------------------------------------------------------------------
# File formats


def write_model(path, model: SvmModel) -> None:
    lines = []
    for lab, w, bias in zip(model.labels, model.weights, model.biases):
        lines.append(lab)
        lines.append(" ".join(repr(float(x)) for x in w))
        lines.append(repr(float(bias)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_model(path) -> SvmModel:
    lines = Path(path).read_text().splitlines()
    lines = [l for l in lines if l.strip()]
    if len(lines) % 3 != 0 or not lines:
        raise ValueError("malformed model file")
    labels, weights, biases = [], [], []
    for i in range(0, len(lines), 3):
        labels.append(lines[i].strip())
        weights.append(np.array([float(x) for x in lines[i + 1].split()]))
        biases.append(float(lines[i + 2]))
    return SvmModel(weights=np.stack(weights), biases=np.array(biases),
                    labels=tuple(labels))


def write_confusion_csv(path, cm: ConfusionMatrix) -> None:
    lines = ["," + ",".join(cm.labels)]
    for lab, row in zip(cm.labels, cm.counts):
        lines.append(lab + "," + ",".join(str(int(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_confusion_csv(path) -> ConfusionMatrix:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    labels = tuple(lines[0].split(",")[1:])
    counts = np.array([[int(x) for x in line.split(",")[1:]] for line in lines[1:]])
    return ConfusionMatrix(counts=counts, labels=labels)
