"""Training objectives on the posterior of the observed class.

Each scalar function takes a probability vector and a label. The batched,
tape-facing versions live in the row kernels; :func:`kernel_args` translates a
:class:`LossSpec` into their argument tuple.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateProbability, InvalidQ, InvalidValue
from .numeric._kernels_py import CE, GCE, NCERCE, PROB_FLOOR, SCE

KINDS = ("CE", "GCE", "SCE", "NCERCE")
_CODES = {"CE": CE, "GCE": GCE, "SCE": SCE, "NCERCE": NCERCE}
_AB_DEFAULTS = {"SCE": (0.1, 1.0), "NCERCE": (1.0, 1.0)}


@dataclass(frozen=True)
class LossSpec:
    kind: str = "CE"
    q: float = 0.7
    alpha: float | None = None
    beta: float | None = None
    clip: float = -4.0  # value standing in for log(0) in the reverse term

    def __post_init__(self):
        if self.kind not in _CODES:
            raise InvalidValue("loss.kind", f"one of {KINDS}")
        if not 0.0 < self.q <= 1.0:
            raise InvalidQ(f"q={self.q} outside (0, 1]")
        if not self.clip < 0.0:
            raise InvalidValue("loss.clip", "clip < 0")
        a, b = _AB_DEFAULTS.get(self.kind, (1.0, 1.0))
        if self.alpha is None:
            object.__setattr__(self, "alpha", a)
        if self.beta is None:
            object.__setattr__(self, "beta", b)
        if self.alpha < 0 or self.beta < 0:
            raise InvalidValue("loss.alpha/beta", "alpha >= 0 and beta >= 0")

    def to_dict(self):
        return asdict(self)


def kernel_args(spec: LossSpec):
    return (_CODES[spec.kind], float(spec.q), float(spec.alpha), float(spec.beta), float(spec.clip))


def _pc(probs, label):
    return float(np.asarray(probs, dtype=np.float64)[label])


def ce_loss(probs, label):
    p = _pc(probs, label)
    if p <= PROB_FLOOR:
        raise DegenerateProbability(f"p[{label}]={p:g}")
    return -math.log(p)


def gce_loss(probs, label, q=0.7):
    """``(1 - p**q) / q``: cross-entropy as q -> 0, mean absolute error at q = 1."""
    if not 0.0 < q <= 1.0:
        raise InvalidQ(f"q={q} outside (0, 1]")
    p = _pc(probs, label)
    return (1.0 - p**q) / q


def reverse_ce(probs, label, clip=-4.0):
    # one-hot target: every off-label log term is clipped to ``clip``
    return -clip * (1.0 - _pc(probs, label))


def sce_loss(probs, label, alpha=0.1, beta=1.0, clip=-4.0):
    return alpha * ce_loss(probs, label) + beta * reverse_ce(probs, label, clip)


def nce_rce_loss(probs, label, alpha=1.0, beta=1.0, clip=-4.0):
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p <= PROB_FLOOR):
        raise DegenerateProbability("posterior entry underflowed")
    logs = -np.log(p)
    nce = logs[label] / logs.sum()
    return alpha * nce + beta * reverse_ce(p, label, clip)


def loss_value(spec: LossSpec, probs, label):
    if spec.kind == "CE":
        return ce_loss(probs, label)
    if spec.kind == "GCE":
        return gce_loss(probs, label, spec.q)
    if spec.kind == "SCE":
        return sce_loss(probs, label, spec.alpha, spec.beta, spec.clip)
    return nce_rce_loss(probs, label, spec.alpha, spec.beta, spec.clip)


def loss_grad_probs(spec: LossSpec, probs, label):
    """Analytic d(loss)/d(probs) as a length-K vector."""
    p = np.asarray(probs, dtype=np.float64)
    g = np.zeros_like(p)
    pc = p[label]
    if spec.kind == "CE":
        if pc <= PROB_FLOOR:
            raise DegenerateProbability(f"p[{label}]={pc:g}")
        g[label] = -1.0 / pc
    elif spec.kind == "GCE":
        g[label] = -(pc ** (spec.q - 1.0))
    elif spec.kind == "SCE":
        if pc <= PROB_FLOOR:
            raise DegenerateProbability(f"p[{label}]={pc:g}")
        g[label] = -spec.alpha / pc + spec.beta * spec.clip
    else:
        if np.any(p <= PROB_FLOOR):
            raise DegenerateProbability("posterior entry underflowed")
        logs = -np.log(p)
        a, s = logs[label], logs.sum()
        g = spec.alpha * a / (s * s) / p
        g[label] += -spec.alpha / (pc * s) + spec.beta * spec.clip
    return g
