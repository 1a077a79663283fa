"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback
is used. Setting ``ABDUCTIVE_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py
from ._kernels_py import JVS_EPS, LN_EPS  # noqa: F401  shared by both backends

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

NAMES = (
    "cross_jaccard_forward",
    "cross_jaccard_backward",
    "bilinear_forward",
    "bilinear_backward",
    "max_pool_forward",
    "max_pool_backward",
    "layer_norm_forward",
    "layer_norm_backward",
)

BACKEND = None


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def use_backend(name):
    """Switch every kernel to ``name`` ('compiled' or 'python')."""
    global BACKEND
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        mod = _compiled
    elif name == "python":
        mod = _kernels_py
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    g = globals()
    for fn in NAMES:
        g[fn] = getattr(mod, fn)
    BACKEND = name


if _compiled is not None and os.environ.get("ABDUCTIVE_PURE_PYTHON", "") not in ("1", "true"):
    use_backend("compiled")
else:
    use_backend("python")
