"""Adaptation strategies and the shared momentum-SGD training loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .encoder import (
    WEIGHT_NAMES,
    EncoderWeights,
    argmax_lowest,
    class_embeddings,
    class_embeddings_on_tape,
    posterior_on_tape,
    posterior_rows,
)
from .errors import DegenerateProbability, InvalidCombination, InvalidValue
from .losses import LossSpec, kernel_args
from .numeric import Tape, kernels, stream, NORM_EPS
from .numeric import rng as rngmod
from .world import EmbeddingDataset, World

KINDS = (
    "PromptTuning",
    "ClassifierR",
    "ClassifierC",
    "TEncFT",
    "FullPromptTuning",
    "CLSTuning",
    "ZeroShot",
)
CLASSIFIER_KINDS = ("ClassifierR", "ClassifierC")
_CTX0_OK = ("ZeroShot", "CLSTuning", "TEncFT")
PROMPT_INIT_STD = 0.02
PAPER_LR = 0.002
# Default step size. A 16-shot, 10-class world gives 5 batches per epoch, so
# 50 epochs are 250 steps; the larger rate keeps lr * steps in the range a
# full-size 16-shot dataset reaches at PAPER_LR.
DEFAULT_LR = 0.01


@dataclass(frozen=True)
class MethodSpec:
    kind: str = "PromptTuning"
    context_len: int | None = None  # None: the encoder's full context length

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidValue("method.kind", f"one of {KINDS}")
        if self.context_len is not None:
            if self.context_len < 0:
                raise InvalidValue("method.context_len", ">= 0")
            if self.context_len == 0 and self.kind not in _CTX0_OK:
                raise InvalidCombination(f"context_len 0 is not allowed for {self.kind}")

    @property
    def label(self):
        return self.kind if self.context_len is None else f"{self.kind}@ctx{self.context_len}"

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = DEFAULT_LR
    momentum: float = 0.9
    loss: LossSpec = field(default_factory=LossSpec)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidValue("train.epochs", ">= 0")
        if self.batch_size < 1:
            raise InvalidValue("train.batch_size", ">= 1")
        if not self.lr >= 0:
            raise InvalidValue("train.lr", ">= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidValue("train.momentum", "0 <= momentum < 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class MethodState:
    """Parameters of one strategy.

    ``trainable`` lists the tensor names the optimizer touches: ``prompt``,
    ``vocab``, ``classifier`` or ``enc.<weight>``. Everything else is held by
    reference and never written.
    """

    kind: str
    encoder: EncoderWeights
    vocab: np.ndarray
    prompt: np.ndarray | None
    classifier: np.ndarray | None
    temperature: float
    trainable: tuple = ()
    momentum: dict = field(default_factory=dict)

    @property
    def n_classes(self):
        return self.vocab.shape[0]

    def get(self, name):
        if name.startswith("enc."):
            return getattr(self.encoder, name[4:])
        return getattr(self, name)

    def _set(self, name, value):
        if name.startswith("enc."):
            setattr(self.encoder, name[4:], value)
        else:
            setattr(self, name, value)

    def snapshot(self):
        """Shallow copy whose tensors may be rebound without touching ``self``."""
        enc = self.encoder.copy() if any(n.startswith("enc.") for n in self.trainable) else self.encoder
        return replace(self, encoder=enc, momentum=dict(self.momentum))

    def n_parameters(self):
        return int(sum(self.get(n).size for n in self.trainable))

    def tensors(self):
        out = {"vocab": self.vocab}
        if self.prompt is not None:
            out["prompt"] = self.prompt
        if self.classifier is not None:
            out["classifier"] = self.classifier
        for n in WEIGHT_NAMES:
            out["enc." + n] = getattr(self.encoder, n)
        return out

    def to_dict(self):
        doc = {
            "kind": self.kind,
            "trainable": list(self.trainable),
            "temperature": self.temperature,
            "vocab": self.vocab.tolist(),
            "prompt": None if self.prompt is None else self.prompt.tolist(),
            "classifier": None if self.classifier is None else self.classifier.tolist(),
        }
        if any(n.startswith("enc.") for n in self.trainable):
            doc["encoder"] = self.encoder.to_dict()
        return doc


def _resolve_ctx(spec: MethodSpec, world: World):
    full = world.config.encoder.context_len
    m = full if spec.context_len is None else spec.context_len
    if m > full:
        raise InvalidCombination(f"context_len {m} exceeds encoder context {full}")
    return m


def build_method_state(spec: MethodSpec, world: World, seed=0) -> MethodState:
    m = _resolve_ctx(spec, world)
    d = world.config.encoder.token_dim
    e = world.config.encoder.embed_dim
    k = world.n_classes
    template = world.template_prompt[:m]
    learned_prompt = stream(seed, rngmod.METHOD_INIT, 0).normal(0.0, PROMPT_INIT_STD, (m, d))
    base = dict(encoder=world.weights, vocab=world.vocab, prompt=template, classifier=None,
                temperature=world.temperature)
    kind = spec.kind
    if kind == "PromptTuning":
        st = MethodState(kind, **{**base, "prompt": learned_prompt}, trainable=("prompt",))
    elif kind == "ClassifierR":
        rows = stream(seed, rngmod.METHOD_INIT, 1).normal(0.0, 1.0 / math.sqrt(e), (k, e))
        st = MethodState(kind, **{**base, "classifier": rows}, trainable=("classifier",))
    elif kind == "ClassifierC":
        rows = class_embeddings(world.weights, template, world.vocab)
        st = MethodState(kind, **{**base, "classifier": rows}, trainable=("classifier",))
    elif kind == "TEncFT":
        st = MethodState(kind, **{**base, "encoder": world.weights.copy()},
                         trainable=tuple("enc." + n for n in WEIGHT_NAMES))
    elif kind == "FullPromptTuning":
        st = MethodState(kind, **{**base, "prompt": learned_prompt, "vocab": world.vocab.copy()},
                         trainable=("prompt", "vocab"))
    elif kind == "CLSTuning":
        st = MethodState(kind, **{**base, "vocab": world.vocab.copy()}, trainable=("vocab",))
    else:
        st = MethodState(kind, **base, trainable=())
    st.momentum = {n: np.zeros_like(st.get(n)) for n in st.trainable}
    return st


def state_class_rows(state: MethodState):
    """K x e unit rows the posterior compares images against."""
    if state.classifier is not None:
        return kernels.l2_normalize_rows(state.classifier, NORM_EPS)[0]
    prompt = state.prompt if state.prompt is not None and len(state.prompt) else None
    return class_embeddings(state.encoder, prompt, state.vocab)


def forward_on_tape(tape: Tape, state: MethodState, images):
    """Record the posterior of ``images`` on ``tape``.

    Returns ``(probs_node, {trainable name: leaf id})``.
    """
    leaves = {}

    def put(name, value):
        if name in state.trainable:
            leaves[name] = tape.leaf(value)
            return leaves[name]
        return tape.const(value)

    if state.classifier is not None:
        rows = tape.l2_normalize_rows(put("classifier", state.classifier))
    else:
        w = {n: put("enc." + n, getattr(state.encoder, n)) for n in WEIGHT_NAMES}
        has_prompt = state.prompt is not None and len(state.prompt) > 0
        p = put("prompt", state.prompt) if has_prompt else None
        v = put("vocab", state.vocab)
        rows = class_embeddings_on_tape(tape, w, state.encoder.pos, p, v, state.n_classes)
    probs = posterior_on_tape(tape, tape.const(images), rows, state.temperature)
    return probs, leaves


def loss_and_grads(state: MethodState, images, labels, loss: LossSpec):
    """Mean loss over the batch and its gradient for each trainable tensor."""
    tape = Tape()
    probs, leaves = forward_on_tape(tape, state, images)
    out = tape.mean_loss(probs, labels, kernel_args(loss))
    names = list(state.trainable)
    grads = tape.gradients([leaves[n] for n in names], out) if names else []
    return tape.value(out)[0, 0], dict(zip(names, grads))


def forward_posterior(state: MethodState, spec: MethodSpec, world: World, image):
    return posterior_rows(np.reshape(image, (1, -1)), state_class_rows(state), state.temperature)[0]


def predict(state: MethodState, images):
    return argmax_lowest(posterior_rows(images, state_class_rows(state), state.temperature))


def evaluate_accuracy(state: MethodState, spec: MethodSpec, world: World, test: EmbeddingDataset):
    if len(test) == 0:
        raise ValueError("empty test set")
    return float(np.mean(predict(state, test.images) == test.true_labels))


def cosine_lr(epoch, total_epochs, lr0):
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def train(state: MethodState, spec: MethodSpec, data: EmbeddingDataset, config: TrainConfig, probe=None):
    """Momentum SGD (v <- m*v + g; theta <- theta - lr*v) over shuffled batches.

    ``probe(state, epoch)`` is called on the pre-update state at the start of
    every epoch. Returns ``(new_state, history)``; ``state`` is not modified.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    state = state.snapshot()
    history = []
    n = len(data)
    kargs = kernel_args(config.loss)
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr)
        if probe is not None:
            probe(state, epoch)
        order = stream(config.seed, rngmod.SHUFFLE, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            tape = Tape()
            probs, leaves = forward_on_tape(tape, state, data.images[idx])
            try:
                out = tape.mean_loss(probs, data.observed_labels[idx], kargs)
            except DegenerateProbability as exc:
                raise DegenerateProbability(
                    f"{exc} (method={spec.kind}, epoch={epoch}, batch_start={start})"
                ) from exc
            total += tape.value(out)[0, 0] * len(idx)
            if not state.trainable or lr == 0.0:
                continue
            names = state.trainable
            grads = tape.gradients([leaves[nm] for nm in names], out)
            for nm, g in zip(names, grads):
                v = config.momentum * state.momentum[nm] + g
                state.momentum[nm] = v
                state._set(nm, state.get(nm) - lr * v)
        history.append({"epoch": epoch, "lr": lr, "train_loss": total / n})
    return state, history
