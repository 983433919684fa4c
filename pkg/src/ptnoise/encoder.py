"""The frozen text encoder and the cosine posterior built on it.

One attention layer plus one tanh MLP, both residual, reading out the last
position. A prompt for class ``c`` is ``[p_1, ..., p_M, w_c]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DimMismatch, InvalidValue, TemperatureNonPositive
from .numeric import Tape, kernels, stream
from .numeric import rng as rngmod

WEIGHT_NAMES = ("wq", "wk", "wv", "w1", "b1", "w2", "b2", "wout")


@dataclass(frozen=True)
class EncoderConfig:
    token_dim: int = 16
    embed_dim: int = 16
    context_len: int = 16
    hidden_width: int | None = None
    temperature: float = 0.01

    def __post_init__(self):
        if self.hidden_width is None:
            object.__setattr__(self, "hidden_width", 2 * self.token_dim)
        for name in ("token_dim", "embed_dim", "context_len", "hidden_width"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise InvalidValue(f"encoder.{name}", "integer >= 1")
        if not self.temperature > 0:
            raise TemperatureNonPositive(f"temperature={self.temperature}")

    def to_dict(self):
        return asdict(self)


@dataclass
class EncoderWeights:
    config: EncoderConfig
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    w1: np.ndarray
    b1: np.ndarray  # 1 x h
    w2: np.ndarray
    b2: np.ndarray  # 1 x d
    wout: np.ndarray
    pos: np.ndarray  # (M + 1) x d, never trained

    def trainables(self):
        return {n: getattr(self, n) for n in WEIGHT_NAMES}

    def copy(self):
        return EncoderWeights(
            self.config, **{f.name: getattr(self, f.name).copy() for f in fields(self) if f.name != "config"}
        )

    def to_dict(self):
        out = {"config": self.config.to_dict()}
        for f in fields(self):
            if f.name != "config":
                out[f.name] = getattr(self, f.name).tolist()
        return out

    @classmethod
    def from_dict(cls, doc):
        cfg = EncoderConfig(**doc["config"])
        arrays = {n: np.asarray(doc[n], dtype=np.float64) for n in WEIGHT_NAMES + ("pos",)}
        return cls(cfg, **arrays)

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def equal(self, other):
        """Bitwise equality of every array."""
        return self.config == other.config and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in WEIGHT_NAMES + ("pos",)
        )


def sinusoid_table(positions, dim):
    pos = np.arange(positions, dtype=np.float64)[:, None]
    i = np.arange(dim)
    rates = 1.0 / np.power(10000.0, (2 * (i // 2)) / dim)
    angles = pos * rates[None, :]
    return np.where(i % 2 == 0, np.sin(angles), np.cos(angles))


def init_encoder(config: EncoderConfig, seed) -> EncoderWeights:
    d, e, h = config.token_dim, config.embed_dim, config.hidden_width
    g = stream(seed, rngmod.ENCODER)
    std = 1.0 / math.sqrt(d)
    return EncoderWeights(
        config=config,
        wq=g.normal(0.0, std, (d, d)),
        wk=g.normal(0.0, std, (d, d)),
        wv=g.normal(0.0, std, (d, d)),
        w1=g.normal(0.0, std, (d, h)),
        b1=np.zeros((1, h)),
        w2=g.normal(0.0, std, (h, d)),
        b2=np.zeros((1, d)),
        wout=g.normal(0.0, std, (d, e)),
        pos=sinusoid_table(config.context_len + 1, d),
    )


def assemble_prompt(prompt, classname):
    """Stack the prompt rows (possibly none) above the classname token."""
    w = np.asarray(classname, dtype=np.float64).reshape(1, -1)
    if prompt is None or len(prompt) == 0:
        return w.copy()
    p = np.asarray(prompt, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != w.shape[1]:
        raise DimMismatch(f"prompt tokens {p.shape} vs classname dim {w.shape[1]}")
    return np.vstack([p, w])


# -- tape builders ----------------------------------------------------------


def weight_nodes(tape: Tape, weights: EncoderWeights, trainable=False):
    """Put the encoder weights on ``tape`` as leaves or constants."""
    put = tape.leaf if trainable else tape.const
    return {n: put(getattr(weights, n)) for n in WEIGHT_NAMES}


def _check_len(weights, length):
    if length > weights.config.context_len + 1:
        raise DimMismatch(f"sequence length {length} exceeds context_len + 1")


def encode_tokens_on_tape(tape, w, pos, tokens):
    """Literal full-sequence encoder; returns the 1 x e unit readout node."""
    vals = tape.value(tokens)
    length, d = vals.shape
    x0 = tape.add(tokens, tape.const(pos[:length]))
    q = tape.matmul(x0, w["wq"])
    k = tape.matmul(x0, w["wk"])
    v = tape.matmul(x0, w["wv"])
    att = tape.softmax_rows(tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / math.sqrt(d)))
    x1 = tape.add(x0, tape.matmul(att, v))
    ones = tape.const(np.ones((length, 1)))
    hid = tape.tanh(tape.add(tape.matmul(x1, w["w1"]), tape.matmul(ones, w["b1"])))
    x2 = tape.add(x1, tape.add(tape.matmul(hid, w["w2"]), tape.matmul(ones, w["b2"])))
    f = tape.matmul(tape.select_row(x2, length - 1), w["wout"])
    return tape.l2_normalize_rows(f)


def class_embeddings_on_tape(tape, w, pos, prompt, vocab, n_classes):
    """K x e class embeddings for a shared prompt node (or None for Ctx-0).

    Only the readout position feeds the output, so the attention query and
    the MLP are evaluated for that row alone, and the prompt's keys and values
    are computed once and shared by every class. The result equals
    :func:`encode_tokens_on_tape` applied per class.
    """
    d = tape.value(vocab).shape[1]
    if prompt is not None:
        m = tape.value(prompt).shape[0]
        if tape.value(prompt).shape[1] != d:
            raise DimMismatch(f"prompt dim {tape.value(prompt).shape[1]} vs classname dim {d}")
        xp = tape.add(prompt, tape.const(pos[:m]))
        kp = tape.matmul(xp, w["wk"])
        vp = tape.matmul(xp, w["wv"])
    else:
        m = 0
    pos_c = tape.const(pos[m : m + 1])
    inv_sqrt_d = 1.0 / math.sqrt(d)
    rows = []
    for c in range(n_classes):
        xc = tape.add(tape.select_row(vocab, c), pos_c)
        kc = tape.matmul(xc, w["wk"])
        vc = tape.matmul(xc, w["wv"])
        if m:
            kc = tape.concat_rows((kp, kc))
            vc = tape.concat_rows((vp, vc))
        qc = tape.matmul(xc, w["wq"])
        att = tape.softmax_rows(tape.scale(tape.matmul(qc, tape.transpose(kc)), inv_sqrt_d))
        x1 = tape.add(xc, tape.matmul(att, vc))
        hid = tape.tanh(tape.add(tape.matmul(x1, w["w1"]), w["b1"]))
        x2 = tape.add(x1, tape.add(tape.matmul(hid, w["w2"]), w["b2"]))
        rows.append(tape.l2_normalize_rows(tape.matmul(x2, w["wout"])))
    return tape.concat_rows(rows) if len(rows) > 1 else rows[0]


def posterior_on_tape(tape, images, class_embs, temperature):
    if not temperature > 0:
        raise TemperatureNonPositive(f"temperature={temperature}")
    sims = tape.matmul(images, tape.transpose(class_embs))
    return tape.softmax_rows(tape.scale(sims, 1.0 / temperature))


# -- value-level API ----------------------------------------------------------


def encode_text(weights: EncoderWeights, tokens):
    """Unit-norm text embedding (length e) of an L x d token matrix."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != weights.config.token_dim:
        raise DimMismatch(f"tokens {tokens.shape} vs token_dim {weights.config.token_dim}")
    _check_len(weights, tokens.shape[0])
    tape = Tape()
    out = encode_tokens_on_tape(tape, weight_nodes(tape, weights), weights.pos, tape.const(tokens))
    return tape.value(out)[0].copy()


def class_embeddings(weights: EncoderWeights, prompt, vocab):
    vocab = np.asarray(vocab, dtype=np.float64)
    m = 0 if prompt is None else len(prompt)
    _check_len(weights, m + 1)
    tape = Tape()
    p = tape.const(prompt) if m else None
    out = class_embeddings_on_tape(
        tape, weight_nodes(tape, weights), weights.pos, p, tape.const(vocab), vocab.shape[0]
    )
    return tape.value(out).copy()


def posterior_rows(images, class_embs, temperature):
    """Posterior for each row of ``images``."""
    if not temperature > 0:
        raise TemperatureNonPositive(f"temperature={temperature}")
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    sims = images @ np.asarray(class_embs, dtype=np.float64).T
    return kernels.softmax_rows(sims * (1.0 / temperature))


def posterior(f_v, class_embs, temperature):
    return posterior_rows(np.reshape(f_v, (1, -1)), class_embs, temperature)[0]


def argmax_lowest(probs):
    """Row-wise argmax; ties go to the lowest class index (numpy's rule)."""
    return np.argmax(np.atleast_2d(probs), axis=1)
