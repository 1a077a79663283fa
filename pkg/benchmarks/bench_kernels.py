"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 2000] [--json out.json]

Each kernel runs on the same inputs under both backends; the outputs are
compared before timing so a speedup never hides a wrong answer. A second
table times one forward + backward pass of every model at the synthetic
default widths under each backend.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from abductive import _kernels_py, kernels


def _cases(rng, n, d, db):
    a = rng.normal(size=(n, d))
    b = rng.normal(size=(n, d))
    w, denom = _kernels_py.cross_jaccard_forward(a, b)
    dw = rng.normal(size=w.shape)
    h = rng.normal(size=db)
    W = rng.normal(size=(db, db, db))
    o = rng.normal(size=(n, db))
    _, t = _kernels_py.bilinear_forward(h, W, o)
    dout = rng.normal(size=(n, db))
    x = rng.normal(size=(n, d))
    _, idx = _kernels_py.max_pool_forward(x)
    gain, shift = rng.normal(size=d), rng.normal(size=d)
    _, xhat, inv = _kernels_py.layer_norm_forward(x, gain, shift)
    return {
        "cross_jaccard_forward": (a, b),
        "cross_jaccard_backward": (dw, a, b, w, denom),
        "bilinear_forward": (h, W, o),
        "bilinear_backward": (dout, h, W, o, t),
        "max_pool_forward": (x,),
        "max_pool_backward": (rng.normal(size=d), idx, n),
        "layer_norm_forward": (x, gain, shift),
        "layer_norm_backward": (rng.normal(size=(n, d)), xhat, inv, gain),
    }


def _same(u, v):
    if isinstance(u, tuple):
        return all(_same(a, b) for a, b in zip(u, v))
    return np.allclose(u, v, rtol=1e-10, atol=1e-12)


def run(n=12, d=64, db=64, repeat=2000, seed=0):
    if "compiled" not in kernels.available_backends():
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    from abductive import _kernels as compiled

    rng = np.random.default_rng(seed)
    rows = []
    for name, args in _cases(rng, n, d, db).items():
        f_py, f_c = getattr(_kernels_py, name), getattr(compiled, name)
        if not _same(f_py(*args), f_c(*args)):
            sys.exit(f"{name}: compiled and python outputs differ")
        reps = max(1, repeat // 20) if name.startswith("bilinear") else repeat
        t_py = min(timeit.repeat(lambda: f_py(*args), number=reps, repeat=3)) / reps
        t_c = min(timeit.repeat(lambda: f_c(*args), number=reps, repeat=3)) / reps
        rows.append({"kernel": name, "python_us": 1e6 * t_py, "compiled_us": 1e6 * t_c,
                     "speedup": t_py / t_c})
    return rows


def run_models(n=12, repeat=50, seed=0):
    from abductive.models import NEURAL_KINDS, DataDims, ModelConfig, build_model
    from abductive.relation import RelationInputs

    rng = np.random.default_rng(seed)
    dims = DataDims(32, 11, 8)
    inp = RelationInputs(rng.normal(size=(1, 32)), rng.normal(size=(n, 32)),
                         rng.normal(size=(n, 32)), rng.normal(size=(1, 11)),
                         rng.normal(size=(n, 11)), tuple(range(n)))
    rows = []
    for kind in NEURAL_KINDS:
        model = build_model(ModelConfig(model_kind=kind), dims, seed=seed)

        def step():
            logits, cache = model.forward(inp)
            model.backward(np.ones_like(logits), cache)

        times = {}
        for backend in ("python", "compiled"):
            kernels.use_backend(backend)
            times[backend] = min(timeit.repeat(step, number=repeat, repeat=3)) / repeat
        rows.append({"model": kind, "python_ms": 1e3 * times["python"],
                     "compiled_ms": 1e3 * times["compiled"],
                     "speedup": times["python"] / times["compiled"]})
    kernels.use_backend("compiled")
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--n", type=int, default=12, help="relations per snapshot")
    p.add_argument("--d", type=int, default=64, help="row width")
    p.add_argument("--db", type=int, default=64, help="bilinear width")
    p.add_argument("--repeat", type=int, default=2000)
    p.add_argument("--json", help="also write the rows here")
    args = p.parse_args(argv)
    rows = run(args.n, args.d, args.db, args.repeat)
    print(f"{'kernel':<24}{'python us':>12}{'compiled us':>14}{'speedup':>10}")
    for r in rows:
        print(f"{r['kernel']:<24}{r['python_us']:>12.1f}{r['compiled_us']:>14.1f}{r['speedup']:>9.1f}x")
    model_rows = run_models(args.n)
    print()
    print(f"{'model step':<24}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for r in model_rows:
        print(f"{r['model']:<24}{r['python_ms']:>12.2f}{r['compiled_ms']:>14.2f}{r['speedup']:>9.2f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump({"kernels": rows, "models": model_rows}, f, indent=2)


if __name__ == "__main__":
    main()
