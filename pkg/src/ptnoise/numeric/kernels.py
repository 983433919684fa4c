"""Backend selection for the row kernels.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy implementation in ``_kernels_py`` is. ``set_backend`` swaps at runtime
(tests and the benchmark use it to compare the two).
"""

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_NAMES = (
    "softmax_rows",
    "softmax_rows_backward",
    "l2_normalize_rows",
    "l2_normalize_rows_backward",
    "tanh_backward",
    "loss_rows",
)

BACKEND = None


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


def set_backend(name):
    """Route every kernel through ``name`` ('cython' or 'python')."""
    global BACKEND
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        mod = _compiled
    elif name == "python":
        mod = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    g = globals()
    for n in _NAMES:
        g[n] = getattr(mod, n)
    BACKEND = name


set_backend("cython" if _compiled is not None else "python")
