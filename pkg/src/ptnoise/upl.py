"""Unsupervised prompt tuning from zero-shot pseudo labels.

Baseline UPL keeps the most confident pseudo-labeled samples of each class;
the robust variant samples them at random and can train with GCE. Both train
several prompts and average their posteriors at test time.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import argmax_lowest, class_embeddings, posterior_rows
from .errors import EmptyClass, InvalidValue
from .instrumentation import RunReport
from .losses import LossSpec
from .methods import MethodSpec, TrainConfig, build_method_state, state_class_rows, train
from .numeric import stream
from .numeric import rng as rngmod
from .world import EmbeddingDataset, World, WorldConfig, generate_world, sample_dataset, with_seed

SELECTIONS = ("topk", "random")


@dataclass(frozen=True)
class UplConfig:
    per_class: int = 16
    selection: str = "random"
    loss: LossSpec = field(default_factory=lambda: LossSpec("GCE"))
    ensemble_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.per_class < 1:
            raise InvalidValue("upl.per_class", ">= 1")
        if self.selection not in SELECTIONS:
            raise InvalidValue("upl.selection", f"one of {SELECTIONS}")
        if self.loss.kind not in ("CE", "GCE"):
            raise InvalidValue("upl.loss.kind", "CE or GCE")
        if self.ensemble_size < 1:
            raise InvalidValue("upl.ensemble_size", ">= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class PseudoLabelSet:
    indices: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    images: np.ndarray
    hidden_true: np.ndarray  # precision reporting only
    n_classes: int

    def __len__(self):
        return len(self.labels)


def pseudo_label(world: World, unlabeled: EmbeddingDataset, prompt=None) -> PseudoLabelSet:
    """Label every sample with the zero-shot argmax (template prompt by default)."""
    if len(unlabeled) == 0:
        raise ValueError("empty unlabeled pool")
    prompt = world.template_prompt if prompt is None else prompt
    probs = posterior_rows(unlabeled.images, class_embeddings(world.weights, prompt, world.vocab),
                           world.temperature)
    labels = argmax_lowest(probs)
    return PseudoLabelSet(
        indices=np.arange(len(unlabeled)),
        labels=labels.astype(np.int64),
        confidences=probs[np.arange(len(labels)), labels],
        images=unlabeled.images,
        hidden_true=unlabeled.true_labels.copy(),
        n_classes=world.n_classes,
    )


def select_samples(pool: PseudoLabelSet, per_class, strategy, seed=0) -> EmbeddingDataset:
    """Pick ``per_class`` members of every pseudo-class.

    Short classes contribute everything they have; the gap is recorded in
    ``meta['shortfall']`` (class -> members available).
    """
    if len(pool) == 0:
        raise ValueError("empty pool")
    if strategy not in SELECTIONS:
        raise ValueError(f"unknown selection strategy {strategy!r}")
    chosen, shortfall = [], {}
    for c in range(pool.n_classes):
        members = np.flatnonzero(pool.labels == c)
        if len(members) < per_class:
            shortfall[c] = int(len(members))
            if len(members) == 0:
                warnings.warn(EmptyClass(f"pseudo-class {c} has no members"), stacklevel=2)
            chosen.append(members)
            continue
        if strategy == "topk":
            # stable sort on -confidence: ties keep the lower index first
            order = np.argsort(-pool.confidences[members], kind="stable")
            chosen.append(np.sort(members[order[:per_class]]))
        else:
            g = stream(seed, rngmod.SELECTION, c)
            chosen.append(np.sort(g.choice(members, size=per_class, replace=False)))
    idx = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.intp)
    data = EmbeddingDataset(
        pool.images[idx], pool.hidden_true[idx], pool.labels[idx], pool.n_classes
    )
    data.meta["pool_indices"] = pool.indices[idx].tolist()
    data.meta["shortfall"] = shortfall
    return data


def train_ensemble(world: World, selected: EmbeddingDataset, config: UplConfig, train_cfg: TrainConfig):
    if len(selected) == 0:
        raise ValueError("nothing selected to train on")
    spec = MethodSpec("PromptTuning")
    models = []
    for i in range(config.ensemble_size):
        seed = config.seed + i
        cfg = TrainConfig(train_cfg.epochs, train_cfg.batch_size, train_cfg.lr, train_cfg.momentum,
                          config.loss, seed)
        state, _ = train(build_method_state(spec, world, seed), spec, selected, cfg)
        models.append(state)
    return models


def ensemble_posteriors(models, images):
    images = np.atleast_2d(images)
    total = None
    for m in models:
        p = posterior_rows(images, state_class_rows(m), m.temperature)
        total = p if total is None else total + p
    return total / len(models)


def ensemble_predict(models, world, image):
    if not models:
        raise ValueError("need at least one model")
    return ensemble_posteriors(models, np.reshape(image, (1, -1)))[0]


def ensemble_accuracy(models, test: EmbeddingDataset):
    pred = argmax_lowest(ensemble_posteriors(models, test.images))
    return float(np.mean(pred == test.true_labels))


def pseudo_precision(data):
    """Fraction of pseudo labels that match the hidden true labels."""
    if isinstance(data, PseudoLabelSet):
        pseudo, true = data.labels, data.hidden_true
    else:
        pseudo, true = data.observed_labels, data.true_labels
    if len(pseudo) == 0:
        raise ValueError("empty set")
    return float(np.mean(pseudo == true))


# (name, selection, loss kind); zero-shot is reported alongside
UPL_VARIANTS = (
    ("UPL", "topk", "CE"),
    ("RobustUPL", "random", "CE"),
    ("RobustUPL", "random", "GCE"),
)


def run_upl_comparison(seeds, world_config: WorldConfig | None = None, train_config: TrainConfig | None = None,
                       upl_config: UplConfig | None = None, log=None):
    """Zero-shot vs. top-K/CE UPL vs. random-K (CE and GCE) robust UPL, per world seed."""
    world_config = world_config or WorldConfig()
    train_config = train_config or TrainConfig()
    upl_config = upl_config or UplConfig()
    reports = []
    for seed in seeds:
        wcfg = with_seed(world_config, seed)
        t0 = time.perf_counter()
        world = generate_world(wcfg)
        pool_data = sample_dataset(world, "pool")
        test = sample_dataset(world, "test")
        pool = pseudo_label(world, pool_data)
        zs = ensemble_accuracy([build_method_state(MethodSpec("ZeroShot"), world, seed)], test)
        base = dict(world_seed=int(seed), noise={"kind": "pseudo", "rate": None},
                    train=train_config.to_dict(), world=wcfg.to_dict())
        reports.append(RunReport(
            method={"kind": "ZeroShot", "context_len": None}, loss={"kind": "none", "q": None},
            accuracy=zs, pseudo_precision=pseudo_precision(pool),
            wall_ms=int(round((time.perf_counter() - t0) * 1000)), **base,
        ))
        for name, selection, loss_kind in UPL_VARIANTS:
            t0 = time.perf_counter()
            loss = LossSpec(loss_kind)
            cfg = UplConfig(upl_config.per_class, selection, loss, upl_config.ensemble_size, seed)
            selected = select_samples(pool, cfg.per_class, selection, seed)
            models = train_ensemble(world, selected, cfg, train_config)
            notes = [f"{'empty' if n == 0 else 'shortfall'} class {c}: {n} < {cfg.per_class}"
                     for c, n in sorted(selected.meta["shortfall"].items())]
            reports.append(RunReport(
                method={"kind": name, "context_len": None, "selection": selection,
                        "ensemble_size": cfg.ensemble_size, "per_class": cfg.per_class},
                loss=loss.to_dict(), accuracy=ensemble_accuracy(models, test),
                pseudo_precision=pseudo_precision(selected),
                wall_ms=int(round((time.perf_counter() - t0) * 1000)), notes=notes, **base,
            ))
            if log:
                log(f"seed={seed} {name}[{selection},{loss_kind}] acc={reports[-1].accuracy:.4f} "
                    f"precision={reports[-1].pseudo_precision:.3f}")
    return reports
