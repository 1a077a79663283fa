import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from abductive import _kernels_py, kernels

compiled = pytest.importorskip("abductive._kernels")


def _cases(rng, n, d, db):
    a, b = rng.normal(size=(n, d)), rng.normal(size=(n + 1, d))
    w, denom = _kernels_py.cross_jaccard_forward(a, b)
    h, W, o = rng.normal(size=db), rng.normal(size=(db, db, db)), rng.normal(size=(n, db))
    _, t = _kernels_py.bilinear_forward(h, W, o)
    x = rng.normal(size=(n, d))
    _, idx = _kernels_py.max_pool_forward(x)
    gain, shift = rng.normal(size=d), rng.normal(size=d)
    _, xhat, inv = _kernels_py.layer_norm_forward(x, gain, shift)
    return {
        "cross_jaccard_forward": (a, b),
        "cross_jaccard_backward": (rng.normal(size=w.shape), a, b, w, denom),
        "bilinear_forward": (h, W, o),
        "bilinear_backward": (rng.normal(size=(n, db)), h, W, o, t),
        "max_pool_forward": (x,),
        "max_pool_backward": (rng.normal(size=d), idx, n),
        "layer_norm_forward": (x, gain, shift),
        "layer_norm_backward": (rng.normal(size=(n, d)), xhat, inv, gain),
    }


def _assert_same(u, v):
    if isinstance(u, tuple):
        assert len(u) == len(v)
        for a, b in zip(u, v):
            _assert_same(a, b)
    else:
        np.testing.assert_allclose(v, u, rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("name", kernels.NAMES)
def test_compiled_matches_python(name, seed):
    rng = np.random.default_rng(seed)
    n, d, db = 1 + seed % 5, 2 + seed, 1 + seed % 4
    args = _cases(rng, n, d, db)[name]
    _assert_same(getattr(_kernels_py, name)(*args), getattr(compiled, name)(*args))


def test_max_pool_ties_agree():
    x = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 2.0]])
    _, i_py = _kernels_py.max_pool_forward(x)
    _, i_c = compiled.max_pool_forward(x)
    np.testing.assert_array_equal(np.asarray(i_c), [0, 0])
    np.testing.assert_array_equal(np.asarray(i_py), [0, 0])


def test_use_backend_switches_every_kernel():
    kernels.use_backend("python")
    assert kernels.BACKEND == "python"
    assert all(getattr(kernels, n) is getattr(_kernels_py, n) for n in kernels.NAMES)
    kernels.use_backend("compiled")
    assert all(getattr(kernels, n) is getattr(compiled, n) for n in kernels.NAMES)
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_env_var_forces_fallback():
    env = dict(os.environ, ABDUCTIVE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from abductive import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_model_logits_agree_across_backends():
    from abductive.models import NEURAL_KINDS, build_model
    from abductive.verify import TOY_DIMS, toy_config, toy_inputs

    inp = toy_inputs(np.random.default_rng(3), 4)
    for kind in NEURAL_KINDS:
        model = build_model(toy_config(kind), TOY_DIMS, seed=1)
        kernels.use_backend("python")
        a = model.forward(inp)[0]
        kernels.use_backend("compiled")
        b = model.forward(inp)[0]
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
