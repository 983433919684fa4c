"""Dense float64 linear algebra with a small reverse-mode tape."""

import numpy as np

from ..errors import ZeroVector
from . import kernels
from .rng import stream
from .tape import NORM_EPS, SUPPORTED_OPS, Tape, as_matrix, finite_diff_check, grad


def l2_normalize_row(v):
    """Return ``v / ||v||``; raises ZeroVector when ``||v|| <= 1e-12``."""
    v = np.asarray(v, dtype=np.float64).reshape(1, -1)
    if v.size == 0:
        raise ValueError("empty vector")
    out, _ = kernels.l2_normalize_rows(v, NORM_EPS)
    return out[0]


def softmax_row(z):
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    return kernels.softmax_rows(z)[0]


__all__ = [
    "NORM_EPS",
    "SUPPORTED_OPS",
    "Tape",
    "ZeroVector",
    "as_matrix",
    "finite_diff_check",
    "grad",
    "kernels",
    "l2_normalize_row",
    "softmax_row",
    "stream",
]
