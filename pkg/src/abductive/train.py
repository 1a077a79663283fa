"""Margin loss, AdamW, plateau scheduling, clipping and the training loop.

One optimizer step per video: the loss is averaged over that video's
snapshot examples.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .diffmath import NumericError, ParamStore
from .evaluation import evaluate
from .models import DataDims, ModelConfig, build_model
from .relation import examples_by_video


class DegenerateTargetError(ValueError):
    pass


class DivergenceError(NumericError):
    pass


# -- loss -----------------------------------------------------------------------


def margin_loss(logits, target, margin=1.0):
    """(1/|A|) sum over positive p, negative n of max(0, margin - (s_p - s_n)).

    Returns the loss and its gradient w.r.t. ``logits`` (0 at the hinge).
    """
    s = np.asarray(logits, dtype=np.float64)
    K = s.size
    pos = np.zeros(K, dtype=bool)
    pos[sorted(target)] = True
    if not pos.any() or pos.all():
        raise DegenerateTargetError("target must contain some but not all classes")
    # viol[p, n] = margin - s_p + s_n
    viol = margin - s[pos][:, None] + s[~pos][None, :]
    active = viol > 0
    loss = viol[active].sum() / K
    grad = np.zeros(K)
    grad[pos] = -active.sum(axis=1) / K
    grad[~pos] = active.sum(axis=0) / K
    return float(loss), grad


# -- optimizer ------------------------------------------------------------------


@dataclass
class OptimState:
    lr: float
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optim_step(params: ParamStore, state: OptimState):
    """AdamW with decoupled weight decay; reads gradients from ``params``."""
    if params.flat_grad is None or not np.isfinite(params.flat_grad).all():
        for p in params:
            if not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient for parameter {p.name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    if params.flat_value is not None:
        pairs = [("*", params.flat_value, params.flat_grad)]
    else:
        pairs = [(p.name, p.value, p.grad) for p in params]
    for name, value, grad in pairs:
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        v = state.v[name]
        if m.shape != value.shape:
            raise ValueError(f"moment buffer shape mismatch for {name}")
        tmp = np.multiply(grad, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(grad, grad, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        if state.weight_decay:
            value *= 1.0 - state.lr * state.weight_decay
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= state.lr / c1
        value -= tmp
    return state


class PlateauScheduler:
    """Halve the learning rate (down to ``lr_min``) whenever the monitored loss
    fails to improve by ``threshold`` (relative) for ``patience`` epochs."""

    def __init__(self, state: OptimState, factor=0.5, lr_min=1e-7, patience=1, threshold=1e-4):
        if not 0.0 < factor < 1.0:
            raise ValueError("factor must be in (0, 1)")
        self.state = state
        self.factor = factor
        self.lr_min = lr_min
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, loss):
        if loss < self.best - self.threshold * abs(self.best) or self.best == math.inf:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.state.lr = max(self.state.lr * self.factor, self.lr_min)
                self.bad_epochs = 0
        return self.state.lr


def plateau_scheduler(scheduler: PlateauScheduler, epoch_train_loss):
    return scheduler.step(epoch_train_loss)


def clip_gradients(params: ParamStore, max_norm=5.0):
    """Scale all gradients so their global L2 norm is at most ``max_norm``.
    Returns the norm before clipping."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    if params.flat_grad is not None:
        norm = math.sqrt(float(np.vdot(params.flat_grad, params.flat_grad)))
    else:
        norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params))
    if norm > max_norm:
        scale = max_norm / norm
        if params.flat_grad is not None:
            params.flat_grad *= scale
        else:
            for p in params:
                p.grad *= scale
    return norm


# -- training -------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    lr_init: float = 1e-5
    lr_min: float = 1e-7
    lr_factor: float = 0.5
    clip_norm: float = 5.0
    margin: float = 1.0
    weight_decay: float = 0.01
    seed: int = 0
    runs: int = 3
    use_scheduler: bool = True
    patience: int = 1
    train_subset: int = 200

    def validate(self):
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.epochs < 0 or self.runs < 1:
            raise ValueError("epochs must be >= 0 and runs >= 1")
        return self

    def to_json(self):
        return asdict(self)


@dataclass
class TrainingData:
    """Train / test examples with the featurizer(s) that turn them into inputs."""

    train: list
    test: list
    featurizers: dict
    dims: DataDims
    embedding: str = "default"

    @property
    def featurizer(self):
        return self.featurizers[self.embedding]

    def with_embedding(self, name):
        if name not in self.featurizers:
            raise KeyError(f"no embedding table named {name!r}")
        f = self.featurizers[name]
        return replace(self, embedding=name, dims=replace(self.dims, d_emb=f.emb.dim))


@dataclass
class TrainResult:
    model: object
    curve: list
    test_map: float
    seed: int


@dataclass
class MultiRunResult:
    runs: list
    map_mean: float
    map_std: float
    config_hash: str


def run_seed(master_seed, run):
    return int(np.random.SeedSequence([int(master_seed), int(run)]).generate_state(1)[0])


def config_hash(model_config, train_config):
    blob = json.dumps({"model": model_config.to_json(), "train": train_config.to_json()},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def train_model(model_config: ModelConfig, train_config: TrainConfig, data: TrainingData,
                seed=None, eval_mode="all", log=None):
    """Train one model; returns the model, the per-epoch curve and test mAP."""
    train_config.validate()
    if not data.train:
        raise ValueError("training set is empty")
    seed = train_config.seed if seed is None else seed
    K = data.dims.n_actions
    model = build_model(model_config, data.dims, seed=seed)
    model.featurizer = data.featurizer
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    videos = examples_by_video(data.train)
    videos = [[ex for ex in v if 0 < len(ex.target) < K] for v in videos]
    videos = [v for v in videos if v]
    inputs = {id(ex): model.inputs_for(ex) for v in videos for ex in v}
    subset = data.train[: train_config.train_subset]

    state = OptimState(lr=train_config.lr_init, weight_decay=train_config.weight_decay)
    sched = PlateauScheduler(state, train_config.lr_factor, train_config.lr_min,
                             train_config.patience)
    curve = []
    for epoch in range(train_config.epochs):
        losses = []
        for vi in rng.permutation(len(videos)):
            exs = videos[vi]
            model.store.zero_grad()
            total = 0.0
            for ex in exs:
                logits, cache = model.forward(inputs[id(ex)], train=True, rng=rng)
                loss, g = margin_loss(logits, ex.target, train_config.margin)
                model.backward(g / len(exs), cache)
                total += loss
            video_loss = total / len(exs)
            if not math.isfinite(video_loss):
                raise DivergenceError(
                    f"loss diverged at epoch {epoch}, video {exs[0].video_id}, lr {state.lr:g}"
                )
            clip_gradients(model.store, train_config.clip_norm)
            optim_step(model.store, state)
            losses.append(video_loss)
        epoch_loss = float(np.mean(losses))
        lr_used = state.lr
        if train_config.use_scheduler:
            sched.step(epoch_loss)
        row = {"epoch": epoch, "loss": epoch_loss, "lr": lr_used,
               "map_train_subset": evaluate(model, subset, K).map if subset else None}
        curve.append(row)
        if log:
            log(row)
    test_map = evaluate(model, data.test, K, mode=eval_mode).map if data.test else float("nan")
    return TrainResult(model, curve, test_map, seed)


def run_seeds(model_config, train_config, data, mode="all", log=None):
    runs = []
    for r in range(train_config.runs):
        seed = run_seed(train_config.seed, r)
        runs.append(train_model(model_config, train_config, data, seed=seed, eval_mode=mode,
                                log=log))
    maps = [r.test_map for r in runs]
    return MultiRunResult(runs, float(np.mean(maps)), float(np.std(maps)),
                          config_hash(model_config, train_config))
