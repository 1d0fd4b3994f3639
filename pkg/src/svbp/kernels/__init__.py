"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports cleanly. Set
``SVBP_BACKEND=python`` before import to force the fallback, or call
:func:`use_backend` at runtime (tests and the benchmark do this).

Kernels
-------
rbf_stein
    Attraction and repulsion halves of the Stein direction for the RBF
    kernel ``exp(-|a-b|^2 / h)``.
message_reduce
    Row-wise log-sum-exp plus softmax-weighted gradient reduction.
distance_pairwise
    ``-alpha (|x_s - x_t| - L)^2`` and its gradient in ``x_s``, all pairs.
collision_pairwise
    Truncated power-law collision penalty summed over timesteps, all pairs.
rbf_sum
    Sum of RBF Gram entries without materializing the Gram matrix.
grid_conditional_draw
    Inverse-CDF draw from a grid conditional of a distance-coupled node.
"""

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = (
    "rbf_stein",
    "message_reduce",
    "distance_pairwise",
    "collision_pairwise",
    "rbf_sum",
    "grid_conditional_draw",
)

BACKEND = "python"


def available_backends():
    return ["compiled", "python"] if _ckernels is not None else ["python"]


def use_backend(name):
    """Switch every kernel in this module to ``name`` ('compiled' or 'python')."""
    global BACKEND
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        impl = _ckernels
    elif name == "python":
        impl = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    g = globals()
    for fn in _NAMES:
        g[fn] = _wrap(getattr(impl, fn), fn)
    BACKEND = name


def _wrap(fn, name):
    # compiled kernels take C-contiguous float64 buffers
    if name in ("rbf_sum",):
        def call(A, B, h):
            return fn(_c(A), _c(B), float(h))
    elif name == "grid_conditional_draw":
        def call(base, grid, nbr, L, alpha, u, work):
            return fn(_c(base), _c(grid), _c(nbr), _c(L), _c(alpha), float(u), work)
    elif name == "collision_pairwise":
        def call(ps, pt, alphas, r, beta, dmin):
            return fn(_c(ps), _c(pt), _c(alphas), float(r), float(beta), float(dmin))
    elif name == "distance_pairwise":
        def call(xs, xt, L, alpha):
            return fn(_c(xs), _c(xt), float(L), float(alpha))
    elif name == "rbf_stein":
        def call(Z, G, h):
            return fn(_c(Z), _c(G), float(h))
    else:
        def call(logits, grads):
            return fn(_c(logits), _c(grads))
    call.__name__ = name
    call.__doc__ = getattr(_pykernels, name).__doc__
    return call


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


_requested = os.environ.get("SVBP_BACKEND", "").strip().lower()
if _requested == "python" or _ckernels is None:
    use_backend("python")
else:
    use_backend("compiled")
