"""Property suite behind ``abductive verify``.

Each check returns a :class:`CheckResult`; a check fails either by
returning ``passed=False`` or by raising (the exception text becomes the
detail). Everything is seeded, so repeated runs print the same verdicts.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace

import numpy as np

from . import diffmath as dm
from .diffmath import Param, ParamStore
from .evaluation import average_precision, evaluate, mean_ap
from .models import DataDims, ModelConfig, NEURAL_KINDS, build_model, expected_param_count
from .models.layers import EVAL, EncoderLayer, GraphModule
from .relation import (
    ObjectEntry,
    RelationInputs,
    SnapshotRecord,
    build_abduction_dataset,
    build_relation_features,
    filter_last_snapshots,
)

GRAD_TOL = 1e-4
PERM_TOL = 1e-9
AP_TOL = 1e-9
# central-difference step ladder; see diffmath.grad_check
FD_STEPS = (1e-5, 1e-6)

TOY_DIMS = DataDims(d_raw=3, d_emb=2, n_actions=3)


def toy_config(kind, **kw):
    base = dict(model_kind=kind, d_model=8, n_heads=2, d_bilinear=4, d_vis=4, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def toy_inputs(rng, n, dims=TOY_DIMS):
    D, e = dims.d_raw, dims.d_emb
    return RelationInputs(
        rng.normal(size=(1, D)), rng.normal(size=(n, D)), rng.normal(size=(n, D)),
        rng.normal(size=(1, e)), rng.normal(size=(n, e)), tuple(range(n)),
    )


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name:<34} {self.seconds:6.2f}s  {self.detail}"


# -- gradients --------------------------------------------------------------------


def _store(**arrays):
    s = ParamStore()
    for k, v in arrays.items():
        s.add(k, v)
    return s


def _op_cases(rng):
    """(name, store, f(store) -> scalar with grads accumulated) per op."""
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 5))
    d = int(rng.integers(1, 9))
    k = int(rng.integers(1, 9))
    cases = []

    def weighted(out, c):
        return float(np.sum(out * c))

    s = _store(x=rng.normal(size=(n, d)), w=rng.normal(size=(d, k)), b=rng.normal(size=k))
    c = rng.normal(size=(n, k))

    def f(st, c=c):
        x = st["x"].value
        out, cache = dm.linear(x, st["w"], st["b"])
        st["x"].grad += dm.linear_backward(c, cache)
        return weighted(out, c)
    cases.append(("linear", s, f))

    # keep inputs away from the kink at 0
    x = rng.normal(size=(n, d))
    x = np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + 0.05 * (x == 0), x)
    s = _store(x=x)
    c = rng.normal(size=(n, d))

    def f(st, c=c):
        out, mask = dm.relu(st["x"].value)
        st["x"].grad += dm.relu_backward(c, mask)
        return weighted(out, c)
    cases.append(("relu", s, f))

    # with one row the affinity is 2|r|^2 / (2|r|^2 + eps), flat to ~eps
    n2 = max(n, 2)
    s = _store(r=rng.normal(size=(n2, d)))
    c = rng.normal(size=(n2, n2))

    def f(st, c=c):
        out, cache = dm.jaccard_affinity(st["r"].value)
        st["r"].grad += dm.jaccard_affinity_backward(c, cache)
        return weighted(out, c)
    cases.append(("jaccard_affinity", s, f))

    s = _store(a=rng.normal(size=(n, d)), b=rng.normal(size=(m, d)))
    c = rng.normal(size=(n, m))

    def f(st, c=c):
        out, cache = dm.cross_affinity(st["a"].value, st["b"].value)
        da, db = dm.cross_affinity_backward(c, cache)
        st["a"].grad += da
        st["b"].grad += db
        return weighted(out, c)
    cases.append(("cross_affinity", s, f))

    dl = max(d, 2)
    s = _store(x=rng.normal(size=(n, dl)), g=1.0 + 0.3 * rng.normal(size=dl),
               s=0.3 * rng.normal(size=dl))
    c = rng.normal(size=(n, dl))

    def f(st, c=c):
        out, cache = dm.layer_norm(st["x"].value, st["g"], st["s"])
        st["x"].grad += dm.layer_norm_backward(c, cache)
        return weighted(out, c)
    cases.append(("layer_norm", s, f))

    s = _store(x=rng.normal(size=(n, d)))
    c = rng.normal(size=(n, d))
    mask_seed = int(rng.integers(2**31))

    def f(st, c=c):
        out, mask = dm.dropout(st["x"].value, 0.3, True, np.random.default_rng(mask_seed))
        st["x"].grad += dm.dropout_backward(c, mask)
        return weighted(out, c)
    cases.append(("dropout", s, f))

    s = _store(x=rng.normal(size=(n, d)))
    c = rng.normal(size=(n, d))

    def f(st, c=c):
        out, y = dm.softmax_rows(st["x"].value)
        st["x"].grad += dm.softmax_rows_backward(c, y)
        return weighted(out, c)
    cases.append(("softmax_rows", s, f))

    db_ = int(rng.integers(1, 5))
    s = _store(h=rng.normal(size=(1, db_)), W=rng.normal(size=(db_, db_, db_)),
               o=rng.normal(size=(m, db_)))
    c = rng.normal(size=(m, db_))

    def f(st, c=c):
        out, cache = dm.bilinear_form(st["h"].value, st["W"], st["o"].value)
        dh, do = dm.bilinear_form_backward(c, cache)
        st["h"].grad += dh
        st["o"].grad += do
        return weighted(out, c)
    cases.append(("bilinear_form", s, f))

    # distinct column values so the argmax is stable under perturbation
    x = rng.permutation(n * d).reshape(n, d) * 0.1 + 0.01 * rng.normal(size=(n, d))
    s = _store(x=x)
    c = rng.normal(size=(1, d))

    def f(st, c=c):
        out, cache = dm.max_pool_set(st["x"].value)
        st["x"].grad += dm.max_pool_set_backward(c, cache)
        return weighted(out, c)
    cases.append(("max_pool_set", s, f))

    s = _store(x=rng.normal(size=(n, d)))
    c = rng.normal(size=(1, d))

    def f(st, c=c):
        out, cache = dm.mean_pool_set(st["x"].value)
        st["x"].grad += dm.mean_pool_set_backward(c, cache)
        return weighted(out, c)
    cases.append(("mean_pool_set", s, f))

    from .train import margin_loss

    K = int(rng.integers(2, 9))
    target = frozenset(rng.choice(K, int(rng.integers(1, K)), replace=False).tolist())
    logits = rng.normal(size=K) * 2.0
    pos = np.array(sorted(target))
    neg = np.array([a for a in range(K) if a not in target])
    # push every pairwise margin at least 0.01 away from the hinge
    gap = 1.0 - (logits[pos][:, None] - logits[neg][None, :])
    while (np.abs(gap) < 0.01).any():
        logits = rng.normal(size=K) * 2.0
        gap = 1.0 - (logits[pos][:, None] - logits[neg][None, :])
    s = _store(s=logits)

    def f(st, target=target):
        loss, g = margin_loss(st["s"].value, target, 1.0)
        st["s"].grad += g
        return loss
    cases.append(("margin_loss", s, f))
    return cases


def check_op_gradients(seeds=100):
    worst = {}
    for seed in range(seeds):
        rng = np.random.default_rng([seed, 11])
        for name, store, f in _op_cases(rng):
            err = dm.grad_check(f, store, steps=FD_STEPS)
            worst[name] = max(worst.get(name, 0.0), err)
    bad = sorted(k for k, v in worst.items() if not v <= GRAD_TOL)
    top = max(worst.values())
    if bad:
        return False, "gradient mismatch in " + ", ".join(f"{k} ({worst[k]:.1e})" for k in bad)
    return True, f"{len(worst)} ops x {seeds} seeds, max rel err {top:.1e}"


def _model_closures(model, inp):
    def closure(store):
        logits, cache = model.forward(inp)
        model.backward(np.ones_like(logits), cache)
        return float(logits.sum())

    def value(store):
        return float(model.forward(inp)[0].sum())

    return closure, value


def check_model_gradients(seeds=100, kinds=NEURAL_KINDS):
    """Sum-of-logits checks: four sampled coordinates per tensor on seed 0,
    one random direction per tensor on the remaining seeds."""
    worst = {}
    for kind in kinds:
        for seed in range(seeds):
            rng = np.random.default_rng([seed, 13])
            model = build_model(toy_config(kind), TOY_DIMS, seed=seed)
            # nonzero biases and non-unit gains so every path carries gradient
            for p in model.store:
                if p.value.ndim == 1:
                    p.value += 0.1 * rng.normal(size=p.value.shape)
            inp = toy_inputs(rng, int(rng.integers(1, 5)))
            closure, value = _model_closures(model, inp)
            if seed == 0:
                err = dm.grad_check(closure, model.store, per_param=4, rng=rng,
                                    steps=FD_STEPS, value=value)
            else:
                err, _ = dm.directional_grad_check(closure, model.store, rng, value=value,
                                                   steps=FD_STEPS)
            worst[kind] = max(worst.get(kind, 0.0), err)
    bad = sorted(k for k, v in worst.items() if not v <= GRAD_TOL)
    if bad:
        return False, "gradient mismatch in " + ", ".join(f"{k} ({worst[k]:.1e})" for k in bad)
    return True, " ".join(f"{k}={v:.1e}" for k, v in worst.items())


# -- permutation invariance ---------------------------------------------------------


def _permutations(n, rng, sampled=24):
    if n <= 5:
        return list(itertools.permutations(range(n)))
    perms = [tuple(rng.permutation(n)) for _ in range(sampled)]
    return perms + [tuple(range(n - 1, -1, -1))]


def check_permutation_invariance(seeds=50, max_n=8):
    worst = 0.0
    for kind in NEURAL_KINDS:
        for seed in range(seeds):
            rng = np.random.default_rng([seed, 17])
            model = build_model(toy_config(kind, dropout=0.1), TOY_DIMS, seed=seed)
            n = 1 + seed % max_n
            inp = toy_inputs(rng, n)
            base = model.forward(inp)[0]
            for perm in _permutations(n, rng):
                out = model.forward(inp.permuted(perm))[0]
                worst = max(worst, float(np.max(np.abs(out - base))))
            if worst > PERM_TOL:
                return False, f"{kind} seed {seed}: logits moved by {worst:.2e} under permutation"
    return True, f"max |delta logit| {worst:.1e} over {len(NEURAL_KINDS)} models x {seeds} seeds"


def check_equivariance(seeds=20):
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng([seed, 19])
        n, d = int(rng.integers(2, 9)), 8
        store = ParamStore()
        gm = GraphModule(store, "g", d, d, rng)
        enc_g = EncoderLayer(store, "eg", d, 16, rng, "graph")
        enc_a = EncoderLayer(store, "ea", d, 16, rng, "attention", n_heads=2)
        x = rng.normal(size=(n, d))
        perm = rng.permutation(n)
        for f in (lambda z: gm.forward(z)[0], lambda z: enc_g.forward(z, EVAL)[0],
                  lambda z: enc_a.forward(z, EVAL)[0]):
            worst = max(worst, float(np.max(np.abs(f(x[perm]) - f(x)[perm]))))
    # row aggregation sums in permuted order, so equality holds to rounding
    return worst <= 1e-12, f"max row mismatch {worst:.1e}"


def check_model_properties():
    rng = np.random.default_rng(23)
    problems = []
    for kind in NEURAL_KINDS:
        cfg = toy_config(kind)
        m = build_model(cfg, TOY_DIMS, seed=1)
        if m.store.n_params() != expected_param_count(cfg, TOY_DIMS):
            problems.append(f"{kind} parameter count {m.store.n_params()} != "
                            f"{expected_param_count(cfg, TOY_DIMS)}")
        inp = toy_inputs(rng, 3)
        if not np.array_equal(m.forward(inp)[0], m.forward(inp)[0]):
            problems.append(f"{kind} eval forward is not deterministic")
        one = toy_inputs(rng, 1)
        m_mean = build_model(replace(cfg, pooling="mean"), TOY_DIMS, seed=1)
        if not np.array_equal(m.forward(one)[0], m_mean.forward(one)[0]):
            problems.append(f"{kind} max and mean pooling differ for n=1")
    return not problems, "; ".join(problems) or "param counts, determinism, n=1 pooling"


# -- evaluation ------------------------------------------------------------------------


def brute_force_ap(scores, labels):
    """Precision at each positive's rank, ranks computed by explicit counting
    (ties broken by position)."""
    n = len(scores)
    rank = []
    for i in range(n):
        ahead = 0
        for j in range(n):
            if scores[j] > scores[i] or (scores[j] == scores[i] and j < i):
                ahead += 1
        rank.append(ahead + 1)
    precisions = []
    for i in range(n):
        if labels[i]:
            hits = sum(1 for j in range(n) if labels[j] and rank[j] <= rank[i])
            precisions.append(hits / rank[i])
    return sum(precisions) / len(precisions) if precisions else None


def brute_force_map(scores, labels):
    aps = [brute_force_ap(list(scores[:, k]), list(labels[:, k])) for k in range(scores.shape[1])]
    aps = [a for a in aps if a is not None]
    return 100.0 * sum(aps) / len(aps)


def _random_instance(rng):
    n = int(rng.integers(1, 21))
    K = int(rng.integers(1, 9))
    labels = rng.random((n, K)) < rng.uniform(0.1, 0.7)
    labels[rng.integers(n), rng.integers(K)] = True
    if rng.random() < 0.5:
        scores = rng.integers(0, 4, size=(n, K)).astype(float)  # heavy ties
    else:
        scores = rng.normal(size=(n, K))
    return scores, labels


def check_map_oracle(instances=200):
    worst = 0.0
    for i in range(instances):
        rng = np.random.default_rng([i, 29])
        scores, labels = _random_instance(rng)
        worst = max(worst, abs(mean_ap(scores, labels) - brute_force_map(scores, labels)))
    return worst <= AP_TOL, f"max |mAP - brute force| {worst:.1e} on {instances} instances"


def check_ap_properties(instances=100):
    for i in range(instances):
        rng = np.random.default_rng([i, 31])
        scores, labels = _random_instance(rng)
        for k in range(scores.shape[1]):
            ap = average_precision(scores[:, k], labels[:, k])
            if ap is None:
                continue
            if not 0.0 <= ap <= 1.0:
                return False, f"AP {ap} outside [0, 1]"
            if average_precision(np.exp(3.0 * scores[:, k]) - 7.0, labels[:, k]) != ap:
                return False, "AP changed under a strictly monotone score transform"
        if not 0.0 <= mean_ap(scores, labels) <= 100.0:
            return False, "mAP outside [0, 100]"
    return True, "range and monotone invariance"


def check_last_mode_stability():
    """Adding non-final snapshots must not change last-snapshot evaluation."""
    from .relation import AbductionExample

    rng = np.random.default_rng(37)
    videos = [_video(f"v{i}", [{int(a)} for a in rng.integers(0, 4, size=3)], rng) for i in range(6)]
    ds = build_abduction_dataset(videos)
    extra = [AbductionExample(f"x{i}", 0, _snap(f"x{i}", 0, {i % 4}, rng), frozenset({i % 4}))
             for i in range(8)]

    class Scorer:
        n_actions = 4

        def score(self, ex):
            return np.bincount(ex.categories, minlength=4).astype(float) + 0.1 * ex.snapshot_index

    a = evaluate(Scorer(), ds, 4, mode="last")
    b = evaluate(Scorer(), ds + extra, 4, mode="last")
    return a.to_json() == b.to_json(), f"{a.n_examples} last-snapshot examples, report unchanged"


# -- relation / setups -------------------------------------------------------------------


def _snap(video, t, actions, rng, n_obj=2, cats=None):
    cats = cats if cats is not None else rng.integers(0, 4, size=n_obj)
    objs = [ObjectEntry(int(c), rng.normal(size=3), rng.normal(size=3)) for c in cats]
    return SnapshotRecord(video, t, rng.normal(size=3), objs, frozenset(actions))


def _video(vid, actions, rng):
    return [_snap(vid, t, a, rng) for t, a in enumerate(actions)]


def check_setup_semantics():
    rng = np.random.default_rng(41)
    a1, a2, a3 = 1, 2, 3
    video = _video("v", [{a1}, {a2}, {a3}], rng)
    problems = []
    got = [set(ex.target) for ex in build_abduction_dataset([video], "all_past")]
    if got != [{a1}, {a1, a2}, {a1, a2, a3}]:
        problems.append(f"all_past targets {got}")
    got = [(ex.snapshot_index, set(ex.target)) for ex in build_abduction_dataset([video], "last_two")]
    if got != [(1, {a1, a2}), (2, {a2, a3})]:
        problems.append(f"last_two targets {got}")
    for setup in ("all_past", "last_two"):
        if build_abduction_dataset([_video("s", [{a1}], rng)], setup):
            problems.append(f"single-snapshot video kept under {setup}")
    if build_abduction_dataset([], "all_past") != []:
        problems.append("empty video list should give an empty dataset")
    five = [_video(f"w{i}", [{0}, {1}, {2}], rng) for i in range(5)]
    if len(filter_last_snapshots(build_abduction_dataset(five, "all_past"))) != 5:
        problems.append("last-snapshot filter should keep one example per video")
    mixed = [_video("m1", [{0}], rng), _video("m2", [{0}, {1}], rng), _video("m3", [{0}, {1}, {2}, {3}], rng)]
    if len(filter_last_snapshots(build_abduction_dataset(mixed, "all_past"))) != 2:
        problems.append("mixed-length videos: last-snapshot count should equal surviving videos")
    return not problems, "; ".join(problems) or "worked examples reproduced"


def check_relation_invariants(videos=30):
    from .relation import EmbeddingTable, Featurizer, Vocabulary

    rng = np.random.default_rng(43)
    vids = [_video(f"v{i}", [set(rng.integers(0, 5, size=int(rng.integers(0, 3))).tolist())
                             for _ in range(int(rng.integers(1, 5)))], rng) for i in range(videos)]
    ds = build_abduction_dataset(vids, "all_past")
    by_video = {}
    for ex in ds:
        prev = by_video.get(ex.video_id)
        if prev is not None and not prev <= ex.target:
            return False, f"all_past targets shrink in {ex.video_id}"
        by_video[ex.video_id] = ex.target
    again = build_abduction_dataset(vids, "all_past")
    if [(e.video_id, e.snapshot_index, e.target) for e in ds] != [
        (e.video_id, e.snapshot_index, e.target) for e in again
    ]:
        return False, "build_abduction_dataset is not deterministic"
    vocab = Vocabulary([f"o{i}" for i in range(4)], [f"a{i}" for i in range(5)])
    emb = EmbeddingTable.random(["person"] + vocab.objects, 5, seed=3)
    feat = Featurizer(vocab, emb)
    d_vis = 4
    proj = {k: (Param(k + ".w", rng.normal(size=(3, d_vis))), Param(k + ".b", rng.normal(size=d_vis)))
            for k in ("human", "object", "union")}
    for snaps in vids[:10]:
        for s in snaps:
            on = build_relation_features(s, feat, True, proj)
            off = build_relation_features(s, feat, False, proj)
            for a, b in zip(on, off):
                if a.r.size != 3 * d_vis + 2 * emb.dim:
                    return False, f"dim(r) = {a.r.size}"
                if not np.array_equal(a.x_v, b.x_v):
                    return False, "visual prefix changed with the semantics flag"
                if np.any(b.y_s != 0.0):
                    return False, "semantics-off embedding is not zero"
    return True, "monotone targets, determinism, dim(r), visual prefix"


# -- diffmath invariants -------------------------------------------------------------------


def check_diffmath_invariants(seeds=100):
    for seed in range(seeds):
        rng = np.random.default_rng([seed, 47])
        n, d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        x = rng.normal(size=(n, d)) * rng.uniform(0.01, 10.0)
        w, _ = dm.jaccard_affinity(x)
        if np.max(np.abs(w - w.T)) >= 1e-12:
            return False, "jaccard affinity is not symmetric"
        if w.min() < -1 - 1e-9 or w.max() > 1 + 1e-9:
            return False, "jaccard affinity outside [-1, 1]"
        sq = np.sum(x * x, axis=1)
        if np.max(np.abs(np.diag(w) - 2 * sq / (2 * sq + dm.kernels.JVS_EPS))) > 1e-12:
            return False, "jaccard self-affinity differs from 2|x|^2 / (2|x|^2 + eps)"
        # 1 - diag = eps / (2|x|^2 + eps) is below 1e-6 once |x| >= 0.1
        big = np.sqrt(sq) >= 0.1
        if np.any(np.abs(np.diag(w)[big] - 1.0) > 1e-6):
            return False, "jaccard self-affinity is not 1"
        y, _ = dm.softmax_rows(x)
        if np.max(np.abs(y.sum(axis=1) - 1.0)) > 1e-12:
            return False, "softmax rows do not sum to 1"
        y2, _ = dm.softmax_rows(x + rng.normal(size=(n, 1)) * 5.0)
        if np.max(np.abs(y - y2)) > 1e-9:
            return False, "softmax is not shift invariant"
        perm = rng.permutation(n)
        if not np.array_equal(dm.max_pool_set(x)[0], dm.max_pool_set(x[perm])[0]):
            return False, "max pooling depends on row order"
        if np.max(np.abs(dm.mean_pool_set(x)[0] - dm.mean_pool_set(x[perm])[0])) > 1e-12:
            return False, "mean pooling depends on row order"
        if not np.array_equal(dm.relu(x)[0] + dm.relu(-x)[0], np.abs(x)):
            return False, "relu(x) + relu(-x) != |x|"
        out, _ = dm.dropout(x, 0.5, train=False)
        if out is not x:
            return False, "eval-mode dropout is not the identity"
    return True, "affinity, softmax, pooling, relu, dropout"


# -- synthetic world -----------------------------------------------------------------------


def check_oracle_invariants():
    from .synthworld import (
        _subsets,
        generate_episode,
        generate_world,
        observed_pairs,
        oracle_joint,
        oracle_posterior,
    )

    noisy = generate_world(5, n_actions=5)
    rng = np.random.default_rng(53)
    for _ in range(30):
        obs = {(int(rng.integers(noisy.n_objects)), int(rng.integers(noisy.n_predicates)))
               for _ in range(int(rng.integers(1, 6)))}
        for t in (None, 0, 2):
            S, post = oracle_joint(noisy, obs, t)
            if abs(post.sum() - 1.0) > 1e-9:
                return False, "oracle joint does not sum to 1"
            marg = oracle_posterior(noisy, obs, t)
            if marg.min() < 0.0 or marg.max() > 1.0:
                return False, "oracle marginal outside [0, 1]"
    clean = generate_world(7, noise_drop=0.0, noise_spurious=0.0)
    for row in _subsets(clean.n_actions)[1:]:
        acts = np.flatnonzero(row).tolist()
        marg = oracle_posterior(clean, clean.induced(acts))
        if not np.all((marg == 0.0) | (marg == 1.0)):
            return False, f"noiseless marginals not in {{0, 1}} for actions {acts}"
    for seed in range(20):
        ep = generate_episode(clean, seed, 4)
        for step in ep.steps:
            if observed_pairs(step.record) != clean.induced(step.cumulative):
                return False, "noiseless relations differ from the causal closure"
        ep2 = generate_episode(clean, seed, 4)
        for s1, s2 in zip(ep.steps, ep2.steps):
            if s1.record.to_json() != s2.record.to_json():
                return False, "episode generation is not a pure function of the seed"
    return True, "normalization, {0,1} marginals, causal closure, determinism"


# -- training ------------------------------------------------------------------------------


def check_training_invariants():
    from .synthworld import generate_world, synthetic_training_data
    from .train import OptimState, TrainConfig, clip_gradients, margin_loss, optim_step, train_model

    rng = np.random.default_rng(59)
    for _ in range(200):
        K = int(rng.integers(2, 9))
        tgt = frozenset(rng.choice(K, int(rng.integers(1, K)), replace=False).tolist())
        s = rng.normal(size=K) * 2.0
        loss, _ = margin_loss(s, tgt)
        pos = s[sorted(tgt)]
        neg = np.delete(s, sorted(tgt))
        separated = pos.min() - neg.max() >= 1.0
        if loss < 0 or (loss == 0.0) != separated:
            return False, "margin loss is negative or zero without separation"
    store = build_model(toy_config("mlp"), TOY_DIMS, seed=0).store
    for p in store:
        p.grad[...] = rng.normal(size=p.grad.shape) * 10.0
    before = store.flat_value.copy()
    optim_step(store, OptimState(lr=0.0))
    if not np.array_equal(before, store.flat_value):
        return False, "optim_step with lr=0 moved parameters"
    for max_norm in (0.1, 1.0, 5.0, 1e3):
        clip_gradients(store, max_norm)
        if np.linalg.norm(store.flat_grad) > max_norm + 1e-9:
            return False, "post-clip norm exceeds max_norm"
    world = generate_world(3, n_actions=4)
    data = synthetic_training_data(world, 12, 4, seed=2)
    cfg = TrainConfig(epochs=2, lr_init=1e-3, train_subset=10)
    r1 = train_model(toy_config("gnned", dropout=0.1), cfg, data, seed=5)
    r2 = train_model(toy_config("gnned", dropout=0.1), cfg, data, seed=5)
    if r1.curve != r2.curve or not np.array_equal(r1.model.store.flat_value, r2.model.store.flat_value):
        return False, "training is not a pure function of (config, data, seed)"
    return True, "loss sign, lr=0, clipping, training determinism"


# -- runner --------------------------------------------------------------------------------

CHECKS = (
    ("op gradients", check_op_gradients),
    ("model gradients", check_model_gradients),
    ("permutation invariance", check_permutation_invariance),
    ("row equivariance", check_equivariance),
    ("model properties", check_model_properties),
    ("mAP vs brute force", check_map_oracle),
    ("AP properties", check_ap_properties),
    ("last-snapshot stability", check_last_mode_stability),
    ("setup semantics", check_setup_semantics),
    ("relation invariants", check_relation_invariants),
    ("diffmath invariants", check_diffmath_invariants),
    ("oracle invariants", check_oracle_invariants),
    ("training invariants", check_training_invariants),
)


def run_check(name, fn):
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failure of that check only
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def run_all(log=print, only=None):
    results = []
    for name, fn in CHECKS:
        if only and name not in only:
            continue
        res = run_check(name, fn)
        results.append(res)
        if log:
            log(res.line())
    return results
