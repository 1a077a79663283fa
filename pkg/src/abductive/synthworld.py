"""Synthetic causal world with a brute-force Bayes oracle.

Generative story for one episode of T snapshots:

* snapshot 0 executes a nonempty action set (each action with prob
  ``p_action``, resampled until nonempty); later snapshots execute each
  action with prob ``p_action``;
* the scene state is cumulative: the executed-so-far set C_t induces the
  union of its actions' (category, predicate) rules;
* each induced relation is independently missing with prob ``noise_drop``;
  a Poisson(``noise_spurious``) number of spurious relations is drawn
  uniformly (with replacement) from the non-induced pairs;
* a snapshot whose observed relation set comes out empty is redrawn.

Feature rendering: human and objects are category prototypes plus Gaussian
noise; the union region is the mean of the human and object prototypes plus
an interaction prototype drawn per (category, predicate), plus noise.
Predicates are therefore visible only through the union feature.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .fileio import write_json
from .relation import (
    PERSON,
    EmbeddingTable,
    ObjectEntry,
    SnapshotRecord,
    Vocabulary,
    build_abduction_dataset,
    target_matrix,
)

MAX_ORACLE_ACTIONS = 16

# Pinned worlds used by the acceptance suite. World seed 0, data seed 1.
PINNED_WORLD_SEED = 0
PINNED_DATA_SEED = 1
PRESETS = {
    "noiseless": dict(noise_drop=0.0, noise_spurious=0.0, feature_noise_sigma=0.0),
    "noisy": {},
    # visual features drowned in noise: the category embedding is the clean cue
    "informative_semantics": dict(feature_noise_sigma=3.0),
}


class ConfigError(ValueError):
    pass


class TractabilityError(ValueError):
    pass


@dataclass
class WorldSpec:
    n_objects: int = 10
    n_predicates: int = 6
    n_actions: int = 8
    p_action: float = 0.35
    noise_drop: float = 0.1
    noise_spurious: float = 0.5
    feature_noise_sigma: float = 0.1
    d_raw: int = 32
    t_min: int = 2
    t_max: int = 5
    max_extra_rules: int = 2
    seed: int = 0
    causal_rules: list = field(default_factory=list)
    human_proto: np.ndarray = None
    object_protos: np.ndarray = None
    interaction_protos: np.ndarray = None

    @property
    def noiseless(self):
        return self.noise_drop == 0.0 and self.noise_spurious == 0.0

    @property
    def n_pairs(self):
        return self.n_objects * self.n_predicates

    def pair_index(self, cat, pred):
        return cat * self.n_predicates + pred

    def rule_matrix(self):
        """K x (n_objects * n_predicates) boolean rule incidence."""
        m = np.zeros((self.n_actions, self.n_pairs), dtype=bool)
        for a, rules in enumerate(self.causal_rules):
            for c, p in rules:
                m[a, self.pair_index(c, p)] = True
        return m

    def induced(self, actions):
        out = set()
        for a in actions:
            out.update(self.causal_rules[a])
        return frozenset(out)

    def vocabulary(self):
        return Vocabulary(
            [f"object{i}" for i in range(self.n_objects)],
            [f"action{i}" for i in range(self.n_actions)],
            [f"predicate{i}" for i in range(self.n_predicates)],
        )

    def embedding_table(self, kind="onehot", dim=None, seed=None):
        names = [PERSON] + self.vocabulary().objects
        if kind == "onehot":
            return EmbeddingTable.onehot(names)
        return EmbeddingTable.random(names, dim or len(names), self.seed if seed is None else seed)

    def to_json(self):
        d = asdict(self)
        d["causal_rules"] = [[list(p) for p in r] for r in self.causal_rules]
        for k in ("human_proto", "object_protos", "interaction_protos"):
            d[k] = d[k].tolist()
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        d["causal_rules"] = [tuple(tuple(p) for p in r) for r in d["causal_rules"]]
        for k in ("human_proto", "object_protos", "interaction_protos"):
            d[k] = np.asarray(d[k], dtype=np.float64)
        return cls(**d)

    def save(self, path):
        write_json(path, self.to_json(), indent=None)


@dataclass
class EpisodeStep:
    actions: frozenset
    cumulative: frozenset
    relations: frozenset
    record: SnapshotRecord


@dataclass
class Episode:
    video_id: str
    steps: list[EpisodeStep]

    @property
    def records(self):
        return [s.record for s in self.steps]


_OVERRIDABLE = {
    "n_objects", "n_predicates", "n_actions", "p_action", "noise_drop", "noise_spurious",
    "feature_noise_sigma", "d_raw", "t_min", "t_max", "max_extra_rules",
}


def generate_world(seed=0, **overrides) -> WorldSpec:
    """Sample rules and prototypes. Every action gets one private relation,
    so distinct action sets always induce distinct relation sets."""
    unknown = set(overrides) - _OVERRIDABLE
    if unknown:
        raise ConfigError(f"unknown world override(s): {sorted(unknown)}")
    w = WorldSpec(seed=seed, **overrides)
    _validate(w)
    rng = np.random.default_rng(seed)
    K, n_obj, n_pred = w.n_actions, w.n_objects, w.n_predicates
    flat = rng.permutation(w.n_pairs)[:K]
    private = [(int(i // n_pred), int(i % n_pred)) for i in flat]
    taken = set(private)
    pool = [(c, p) for c in range(n_obj) for p in range(n_pred) if (c, p) not in taken]
    rules = []
    for a in range(K):
        n_extra = int(rng.integers(0, w.max_extra_rules + 1)) if pool else 0
        extra = [pool[i] for i in rng.choice(len(pool), min(n_extra, len(pool)), replace=False)]
        rules.append(tuple(sorted({private[a], *extra})))
    w.causal_rules = rules
    w.human_proto = rng.normal(size=w.d_raw)
    w.object_protos = rng.normal(size=(n_obj, w.d_raw))
    # one appearance per (category, predicate): how "holding a cup" looks
    w.interaction_protos = rng.normal(size=(n_obj, n_pred, w.d_raw))
    return w


def preset_world(name, seed=PINNED_WORLD_SEED, **overrides) -> WorldSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown world preset {name!r}; expected one of {sorted(PRESETS)}")
    return generate_world(seed, **{**PRESETS[name], **overrides})


def _validate(w: WorldSpec):
    for name in ("p_action", "noise_drop", "feature_noise_sigma", "noise_spurious"):
        v = getattr(w, name)
        if v < 0 or (name in ("p_action", "noise_drop") and v > 1):
            raise ConfigError(f"{name}={v} out of range")
    if w.noise_drop >= 1.0:
        raise ConfigError("noise_drop must be < 1 so that snapshots can be observed")
    if not 0 < w.p_action <= 1:
        raise ConfigError("p_action must be in (0, 1]")
    if min(w.n_objects, w.n_predicates, w.n_actions, w.d_raw) < 1:
        raise ConfigError("vocabulary sizes and d_raw must be positive")
    if w.n_actions > w.n_pairs:
        raise ConfigError(
            f"{w.n_actions} actions need distinct private relations but only "
            f"{w.n_pairs} (category, predicate) pairs exist"
        )
    if not 2 <= w.t_min <= w.t_max:
        raise ConfigError("need 2 <= t_min <= t_max")


def episode_seed(master_seed, i):
    return int(np.random.SeedSequence([int(master_seed), int(i)]).generate_state(1)[0])


def generate_episode(world: WorldSpec, seed, T, video_id=None) -> Episode:
    if T < 2:
        raise ConfigError("an episode needs at least 2 snapshots")
    rng = np.random.default_rng(seed)
    K = world.n_actions
    all_pairs = [(c, p) for c in range(world.n_objects) for p in range(world.n_predicates)]
    video_id = video_id or f"v{seed}"
    sigma = world.feature_noise_sigma
    steps = []
    cumulative = frozenset()
    for t in range(T):
        while True:
            acts = frozenset(np.flatnonzero(rng.random(K) < world.p_action).tolist())
            if t > 0 or acts:
                break
        cumulative = cumulative | acts
        induced = world.induced(cumulative)
        non_induced = [pr for pr in all_pairs if pr not in induced]
        while True:
            keep = rng.random(len(induced)) >= world.noise_drop
            observed = {pr for pr, k in zip(sorted(induced), keep) if k}
            n_spur = int(rng.poisson(world.noise_spurious)) if non_induced else 0
            for j in rng.integers(0, len(non_induced), n_spur) if n_spur else ():
                observed.add(non_induced[j])
            if observed:
                break
        order = sorted(observed)
        order = [order[i] for i in rng.permutation(len(order))]
        human = world.human_proto + sigma * rng.normal(size=world.d_raw)
        objects = []
        for c, p in order:
            feat = world.object_protos[c] + sigma * rng.normal(size=world.d_raw)
            union = (
                0.5 * (world.human_proto + world.object_protos[c])
                + world.interaction_protos[c, p]
                + sigma * rng.normal(size=world.d_raw)
            )
            objects.append(ObjectEntry(c, feat, union, p))
        rec = SnapshotRecord(video_id, t, human, objects, acts)
        steps.append(EpisodeStep(acts, cumulative, frozenset(observed), rec))
    return Episode(video_id, steps)


def generate_episodes(world: WorldSpec, n, seed, prefix="v"):
    out = []
    for i in range(n):
        s = episode_seed(seed, i)
        T = int(np.random.default_rng(s ^ 0x5EED).integers(world.t_min, world.t_max + 1))
        out.append(generate_episode(world, s, T, video_id=f"{prefix}{i:05d}"))
    return out


def observed_pairs(record: SnapshotRecord):
    if any(o.predicate is None for o in record.objects):
        raise ValueError("record carries no predicate ground truth; the oracle needs it")
    return frozenset((o.category, int(o.predicate)) for o in record.objects)


# -- oracle ---------------------------------------------------------------------


def _subsets(K):
    idx = np.arange(2**K)
    return ((idx[:, None] >> np.arange(K)) & 1).astype(bool)


def _log_prior(world, S, snapshot_index):
    K = world.n_actions
    p = world.p_action
    k = S.sum(axis=1)
    with np.errstate(divide="ignore"):
        if snapshot_index is None:
            return k * np.log(p) + (K - k) * np.log1p(-p)
        t = int(snapshot_index)
        q_t = 1.0 - (1.0 - p) ** (t + 1)
        q_prev = 1.0 - (1.0 - p) ** t
        joint_t = q_t**k * (1.0 - q_t) ** (K - k)
        joint_prev = q_prev**k * (1.0 - q_prev) ** (K - k)
        # condition on snapshot 0 executing at least one action
        prior = (joint_t - (1.0 - p) ** K * joint_prev) / (1.0 - (1.0 - p) ** K)
        return np.log(np.clip(prior, 0.0, None))


def _log_likelihood(world, induced, obs):
    """log P(obs | induced) for every row of the boolean ``induced`` matrix."""
    d, lam = world.noise_drop, world.noise_spurious
    P = world.n_pairs
    n_ind = induced.sum(axis=1)
    n_ind_obs = (induced & obs).sum(axis=1)
    n_spur_obs = (~induced & obs).sum(axis=1)
    M = P - n_ind
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = n_ind_obs * np.log1p(-d) + np.where(
            n_ind - n_ind_obs > 0, (n_ind - n_ind_obs) * np.log(d), 0.0
        )
        mu = np.where(M > 0, lam / np.maximum(M, 1), 0.0)
        present = np.where(n_spur_obs > 0, n_spur_obs * np.log(-np.expm1(-mu)), 0.0)
        absent = -(M - n_spur_obs) * mu
        ll = ll + present + absent
        if obs.any():
            # the generator redraws empty snapshots
            p_empty = np.where(M > 0, np.exp(-lam), 1.0) * d**n_ind
            ll = ll - np.log1p(-p_empty)
    return np.where(np.isnan(ll), -np.inf, ll)


def oracle_joint(world: WorldSpec, observed, snapshot_index=None):
    """Posterior over all 2^K action subsets; rows of the subset matrix align."""
    K = world.n_actions
    if K > MAX_ORACLE_ACTIONS:
        raise TractabilityError(f"oracle enumeration limited to {MAX_ORACLE_ACTIONS} actions, got {K}")
    S = _subsets(K)
    rules = world.rule_matrix()
    induced = (S.astype(np.int32) @ rules.astype(np.int32)) > 0
    obs = np.zeros(world.n_pairs, dtype=bool)
    for c, p in observed:
        obs[world.pair_index(c, p)] = True
    logp = _log_prior(world, S, snapshot_index) + _log_likelihood(world, induced, obs)
    top = logp.max()
    if not np.isfinite(top):
        raise ValueError("observation has zero probability under this world")
    post = np.exp(logp - top)
    return S, post / post.sum()


def oracle_posterior(world: WorldSpec, observed, snapshot_index=None):
    """Per-action posterior marginals P(a in C | observed relations)."""
    S, post = oracle_joint(world, observed, snapshot_index)
    return np.clip(post @ S, 0.0, 1.0)


class OracleScorer:
    """Scores examples with oracle marginals (cumulative-set semantics)."""

    def __init__(self, world: WorldSpec, use_snapshot_index=True):
        self.world = world
        self.use_snapshot_index = use_snapshot_index
        self._cache = {}

    def score(self, example):
        rec = example.snapshot
        key = (observed_pairs(rec), rec.snapshot_index if self.use_snapshot_index else None)
        if key not in self._cache:
            self._cache[key] = oracle_posterior(self.world, *key)
        return self._cache[key]


def oracle_map(world: WorldSpec, episodes, mode="all"):
    """mAP (percent) of oracle marginals against cumulative action sets."""
    from .evaluation import mean_ap
    from .relation import filter_last_snapshots

    ds = build_abduction_dataset([e.records for e in episodes], "all_past")
    if mode == "last":
        ds = filter_last_snapshots(ds)
    scorer = OracleScorer(world)
    scores = np.array([scorer.score(ex) for ex in ds])
    return mean_ap(scores, target_matrix(ds, world.n_actions))


def synthetic_training_data(world: WorldSpec, n_train=500, n_test=100, seed=0, setup="all_past",
                            embeddings=None):
    """Generate train/test episodes and package them for training.

    ``embeddings`` maps names to :class:`EmbeddingTable`; defaults to the
    one-hot table under the name 'default'.
    """
    from .models import DataDims
    from .relation import Featurizer
    from .train import TrainingData

    train_eps = generate_episodes(world, n_train, seed, prefix="train")
    test_eps = generate_episodes(world, n_test, seed + 1_000_003, prefix="test")
    vocab = world.vocabulary()
    embeddings = embeddings or {"default": world.embedding_table()}
    featurizers = {k: Featurizer(vocab, e) for k, e in embeddings.items()}
    first = next(iter(embeddings))
    return TrainingData(
        train=build_abduction_dataset([e.records for e in train_eps], setup),
        test=build_abduction_dataset([e.records for e in test_eps], setup),
        featurizers=featurizers,
        dims=DataDims(world.d_raw, embeddings[first].dim, world.n_actions),
        embedding=first,
    )
