"""Pure-numpy row kernels. Reference backend; the Cython module mirrors it."""

import numpy as np

from ..errors import DegenerateProbability, ZeroVector

PROB_FLOOR = 1e-300

CE, GCE, SCE, NCERCE = 0, 1, 2, 3


def softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(p, g):
    return p * (g - (g * p).sum(axis=1, keepdims=True))


def l2_normalize_rows(x, eps):
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt((x * x).sum(axis=1))
    if np.any(norms <= eps):
        raise ZeroVector(f"row norm {norms.min():.3g} <= {eps:g}")
    return x / norms[:, None], norms


def l2_normalize_rows_backward(y, norms, g):
    return (g - y * (g * y).sum(axis=1, keepdims=True)) / norms[:, None]


def tanh_backward(t, g):
    return g * (1.0 - t * t)


def loss_rows(p, labels, kind, q, alpha, beta, clip):
    """Per-row loss values and d(loss_i)/d(p_i) for a batch of posteriors."""
    p = np.asarray(p, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    rows = np.arange(p.shape[0])
    pc = p[rows, labels]
    grad = np.zeros_like(p)
    if kind == CE:
        if np.any(pc <= PROB_FLOOR):
            raise DegenerateProbability("observed-class probability underflowed")
        loss = -np.log(pc)
        grad[rows, labels] = -1.0 / pc
    elif kind == GCE:
        if q < 1.0 and np.any(pc <= 0.0):
            raise DegenerateProbability("observed-class probability is zero")
        loss = (1.0 - pc**q) / q
        grad[rows, labels] = -(pc ** (q - 1.0))
    elif kind == SCE:
        if np.any(pc <= PROB_FLOOR):
            raise DegenerateProbability("observed-class probability underflowed")
        loss = alpha * -np.log(pc) + beta * (-clip) * (1.0 - pc)
        grad[rows, labels] = -alpha / pc + beta * clip
    elif kind == NCERCE:
        if np.any(p <= PROB_FLOOR):
            raise DegenerateProbability("posterior entry underflowed")
        logs = -np.log(p)
        a = logs[rows, labels]
        s = logs.sum(axis=1)
        loss = alpha * (a / s) + beta * (-clip) * (1.0 - pc)
        # d(a/s)/dp_j = (a/p_j - s*[j == c]/p_c) / s^2
        grad = alpha * (a / (s * s))[:, None] / p
        grad[rows, labels] += -alpha / (pc * s) + beta * clip
    else:
        raise ValueError(f"unknown loss kind code {kind}")
    return loss, grad
