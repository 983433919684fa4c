"""Synthetic benchmark: frozen encoder, class vocabulary, prompts, datasets,
and the two label-corruption schemes."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .encoder import (
    EncoderConfig,
    EncoderWeights,
    argmax_lowest,
    class_embeddings,
    init_encoder,
    posterior_rows,
)
from .errors import InvalidValue, ZeroVector
from .numeric import NORM_EPS, kernels, stream
from .numeric import rng as rngmod

# Calibrated image-noise level; see README "Calibration" and
# ``ptnoise.calibration.calibrate_sigma``.
DEFAULT_SIGMA = 0.04
# Scale of the truth and template prompt entries; see README "Calibration".
DEFAULT_PROMPT_STD = 0.5

NOISE_KINDS = ("random", "confusion")


@dataclass(frozen=True)
class WorldConfig:
    class_count: int = 10
    shots_per_class: int = 16
    test_per_class: int = 100
    pool_per_class: int = 64
    image_noise_std: float = DEFAULT_SIGMA
    prompt_std: float = DEFAULT_PROMPT_STD
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise InvalidValue("world.class_count", ">= 2")
        for name in ("shots_per_class", "test_per_class", "pool_per_class"):
            if getattr(self, name) < 1:
                raise InvalidValue(f"world.{name}", ">= 1")
        if not self.image_noise_std >= 0:
            raise InvalidValue("world.image_noise_std", ">= 0")
        if not self.prompt_std > 0:
            raise InvalidValue("world.prompt_std", "> 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        enc = EncoderConfig(**doc.pop("encoder", {}))
        return cls(encoder=enc, **doc)


@dataclass
class World:
    config: WorldConfig
    weights: EncoderWeights
    truth_prompt: np.ndarray
    template_prompt: np.ndarray
    vocab: np.ndarray
    prototypes: np.ndarray

    @property
    def n_classes(self):
        return self.vocab.shape[0]

    @property
    def temperature(self):
        return self.config.encoder.temperature

    def equal(self, other):
        return (
            self.config == other.config
            and self.weights.equal(other.weights)
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("truth_prompt", "template_prompt", "vocab", "prototypes")
            )
        )

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "weights": self.weights.to_dict(),
            "truth_prompt": self.truth_prompt.tolist(),
            "template_prompt": self.template_prompt.tolist(),
            "vocab": self.vocab.tolist(),
            "prototypes": self.prototypes.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        arr = lambda k: np.asarray(doc[k], dtype=np.float64)  # noqa: E731
        return cls(
            config=WorldConfig.from_dict(doc["config"]),
            weights=EncoderWeights.from_dict(doc["weights"]),
            truth_prompt=arr("truth_prompt"),
            template_prompt=arr("template_prompt"),
            vocab=arr("vocab"),
            prototypes=arr("prototypes"),
        )


@dataclass
class EmbeddingDataset:
    images: np.ndarray
    true_labels: np.ndarray
    observed_labels: np.ndarray
    n_classes: int
    clean_flags: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.observed_labels = np.asarray(self.observed_labels, dtype=np.int64)
        if self.clean_flags is None:
            self.clean_flags = self.observed_labels == self.true_labels

    def __len__(self):
        return len(self.true_labels)

    def copy(self):
        return EmbeddingDataset(
            self.images.copy(),
            self.true_labels.copy(),
            self.observed_labels.copy(),
            self.n_classes,
            self.clean_flags.copy(),
        )

    def with_observed(self, observed):
        observed = np.asarray(observed, dtype=np.int64)
        return EmbeddingDataset(
            self.images, self.true_labels, observed, self.n_classes, observed == self.true_labels
        )

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return EmbeddingDataset(
            self.images[idx],
            self.true_labels[idx],
            self.observed_labels[idx],
            self.n_classes,
            self.clean_flags[idx],
        )

    def equal(self, other):
        return self.n_classes == other.n_classes and all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("images", "true_labels", "observed_labels", "clean_flags")
        )

    def n_corrupted(self):
        return int((~self.clean_flags).sum())


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "random"
    rate: float = 0.0
    confusion_matrix: tuple | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidValue("noise.kind", f"one of {NOISE_KINDS}")
        if not 0.0 <= self.rate <= 1.0:
            raise InvalidValue("noise.rate", "0 <= rate <= 1")

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}


def generate_world(config: WorldConfig) -> World:
    enc = config.encoder
    d, m, k = enc.token_dim, enc.context_len, config.class_count
    weights = init_encoder(enc, config.seed)
    vocab = stream(config.seed, rngmod.VOCAB).normal(0.0, 1.0 / math.sqrt(d), (k, d))
    truth = stream(config.seed, rngmod.TRUTH_PROMPT).normal(0.0, config.prompt_std, (m, d))
    template = stream(config.seed, rngmod.TEMPLATE_PROMPT).normal(0.0, config.prompt_std, (m, d))
    protos = class_embeddings(weights, truth, vocab)
    return World(config, weights, truth, template, vocab, protos)


def sample_dataset(world: World, split="train", config: WorldConfig | None = None) -> EmbeddingDataset:
    """Noisy unit-norm views of the class prototypes, ``per_class`` rows each."""
    config = config or world.config
    per_class = {
        "train": config.shots_per_class,
        "test": config.test_per_class,
        "pool": config.pool_per_class,
    }[split]
    g = stream(config.seed, rngmod.SPLIT, rngmod.SPLIT_TAGS[split])
    k, e = world.prototypes.shape
    sigma = config.image_noise_std
    images = np.empty((k * per_class, e))
    labels = np.repeat(np.arange(k), per_class)
    for i, c in enumerate(labels):
        for attempt in range(2):
            x = world.prototypes[c] + sigma * g.standard_normal(e)
            try:
                images[i] = kernels.l2_normalize_rows(x[None, :], NORM_EPS)[0][0]
                break
            except ZeroVector:
                if attempt == 1:
                    raise
    return EmbeddingDataset(images, labels, labels.copy(), k)


def corruption_count(rate, n):
    # round away binary-fraction fuzz (0.29 * 100 -> 28.999...) before flooring
    return int(math.floor(round(rate * n, 9)))


def _pick_indices(n, rate, seed):
    count = corruption_count(rate, n)
    return np.sort(stream(seed, rngmod.NOISE, 0).choice(n, size=count, replace=False))


def inject_random_noise(data: EmbeddingDataset, rate, seed) -> EmbeddingDataset:
    """Relabel exactly floor(rate * N) samples, each to a uniformly drawn wrong class."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    idx = _pick_indices(len(data), rate, seed)
    observed = data.true_labels.copy()
    offsets = stream(seed, rngmod.NOISE, 1).integers(0, data.n_classes - 1, size=len(idx))
    true = data.true_labels[idx]
    observed[idx] = np.where(offsets < true, offsets, offsets + 1)
    return data.with_observed(observed)


def inject_confusion_noise(data: EmbeddingDataset, rate, confusion, seed) -> EmbeddingDataset:
    """Relabel the same samples ``inject_random_noise`` would pick, each to the
    wrong class the confusion matrix favors most for its true class."""
    conf = np.asarray(confusion, dtype=np.float64)
    k = data.n_classes
    if conf.shape != (k, k) or np.any(conf < 0) or not np.allclose(conf.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("confusion must be a K x K row-stochastic matrix")
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    off = conf.copy()
    np.fill_diagonal(off, -np.inf)
    favored = np.argmax(off, axis=1)  # ties -> lowest index
    idx = _pick_indices(len(data), rate, seed)
    observed = data.true_labels.copy()
    observed[idx] = favored[data.true_labels[idx]]
    return data.with_observed(observed)


def random_prompt(world: World, generator, std=0.02, length=None):
    m = world.config.encoder.context_len if length is None else length
    return generator.normal(0.0, std, (m, world.config.encoder.token_dim))


def zero_shot_accuracy(world: World, prompt, data: EmbeddingDataset):
    embs = class_embeddings(world.weights, prompt, world.vocab)
    pred = argmax_lowest(posterior_rows(data.images, embs, world.temperature))
    return float(np.mean(pred == data.true_labels))


def zero_shot_confusion(world: World, data: EmbeddingDataset, runs=100, seed=0, prompt_std=0.02):
    """Row-normalized confusion of random-prompt zero-shot predictions, averaged over runs."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    k = world.n_classes
    g = stream(seed, rngmod.CONFUSION)
    counts_per_class = np.bincount(data.true_labels, minlength=k).astype(np.float64)
    acc = np.zeros((k, k))
    for _ in range(runs):
        embs = class_embeddings(world.weights, random_prompt(world, g, prompt_std), world.vocab)
        pred = argmax_lowest(posterior_rows(data.images, embs, world.temperature))
        c = np.zeros((k, k))
        np.add.at(c, (data.true_labels, pred), 1.0)
        acc += c
    with np.errstate(invalid="ignore", divide="ignore"):
        out = acc / (runs * counts_per_class[:, None])
    empty = counts_per_class == 0
    out[empty] = 1.0 / k
    return out


def confusion_from_predictions(true_labels, predicted, k):
    c = np.zeros((k, k))
    np.add.at(c, (np.asarray(true_labels), np.asarray(predicted)), 1.0)
    rows = c.sum(axis=1, keepdims=True)
    return np.divide(c, rows, out=np.full_like(c, 1.0 / k), where=rows > 0)


# -- files ----------------------------------------------------------------------


def write_dataset_csv(data: EmbeddingDataset, path):
    e = data.images.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "true_label", "observed_label", "clean_flag"] + [f"e{j}" for j in range(e)])
        for i in range(len(data)):
            w.writerow(
                [i, int(data.true_labels[i]), int(data.observed_labels[i]), int(data.clean_flags[i])]
                + [repr(float(v)) for v in data.images[i]]
            )


def read_dataset_csv(path, n_classes):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    true = np.array([int(r[1]) for r in body], dtype=np.int64)
    observed = np.array([int(r[2]) for r in body], dtype=np.int64)
    flags = np.array([bool(int(r[3])) for r in body])
    images = np.array([[float(v) for v in r[4:]] for r in body], dtype=np.float64)
    return EmbeddingDataset(images, true, observed, n_classes, flags)


def write_sidecar(path, world_config: WorldConfig, **extra):
    doc = {"world": world_config.to_dict(), **extra}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_seed(config: WorldConfig, seed) -> WorldConfig:
    return replace(config, seed=int(seed))
