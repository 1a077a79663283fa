"""Snapshots, relation representations and abduction datasets.

A snapshot holds one human and a list of object instances. Each object
yields one human-object relation whose representation is

    r = [x_h, x_o, x_u, y_h, y_o]

(visual triplet after projection, then the two semantic embeddings).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .diffmath import DimensionError, Param
from .fileio import read_jsonl, write_json, write_jsonl

SETUPS = ("all_past", "last_two")
PERSON = "person"


class VocabularyError(KeyError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Relation:
    human_id: int
    object_id: int
    object_category: int
    predicate: Optional[int] = None

    def __post_init__(self):
        if self.human_id == self.object_id:
            raise ValueError("a relation needs distinct human and object entities")


@dataclass
class ObjectEntry:
    category: int
    feature: np.ndarray
    union: np.ndarray
    # synthetic ground truth only; never read by a model
    predicate: Optional[int] = None


@dataclass
class SnapshotRecord:
    video_id: str
    snapshot_index: int
    human_feature: np.ndarray
    objects: list[ObjectEntry]
    actions_here: frozenset

    def __post_init__(self):
        if not self.objects:
            raise DataError(f"snapshot {self.video_id}/{self.snapshot_index} has no objects")
        self.actions_here = frozenset(self.actions_here)

    @property
    def categories(self):
        return [o.category for o in self.objects]

    def to_json(self):
        objs = []
        for o in self.objects:
            row = {"cat": int(o.category), "feat": o.feature.tolist(), "union": o.union.tolist()}
            if o.predicate is not None:
                row["pred"] = int(o.predicate)
            objs.append(row)
        return {
            "video_id": self.video_id,
            "t": int(self.snapshot_index),
            "human": self.human_feature.tolist(),
            "objects": objs,
            "actions": sorted(int(a) for a in self.actions_here),
        }

    @classmethod
    def from_json(cls, row):
        try:
            objects = [
                ObjectEntry(
                    int(o["cat"]),
                    np.asarray(o["feat"], dtype=np.float64),
                    np.asarray(o["union"], dtype=np.float64),
                    o.get("pred"),
                )
                for o in row["objects"]
            ]
            return cls(
                str(row["video_id"]),
                int(row["t"]),
                np.asarray(row["human"], dtype=np.float64),
                objects,
                frozenset(int(a) for a in row["actions"]),
            )
        except KeyError as exc:
            raise DataError(f"snapshot record missing field {exc}") from None


@dataclass
class Vocabulary:
    objects: list[str]
    actions: list[str]
    predicates: list[str] = field(default_factory=list)

    def to_json(self):
        return {"objects": self.objects, "actions": self.actions, "predicates": self.predicates}

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        return cls(list(d["objects"]), list(d["actions"]), list(d.get("predicates", [])))

    def save(self, path):
        write_json(path, self.to_json())


@dataclass
class EmbeddingTable:
    vocab: list[str]
    vectors: np.ndarray
    source: str = "pretrained"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape[0] != len(self.vocab):
            raise DimensionError(
                f"{len(self.vocab)} names but {self.vectors.shape[0]} embedding rows"
            )
        self._index = {name: i for i, name in enumerate(self.vocab)}

    @property
    def dim(self):
        return self.vectors.shape[1]

    def lookup(self, name):
        try:
            return self.vectors[self._index[name]]
        except KeyError:
            raise VocabularyError(f"no embedding for category {name!r}") from None

    @classmethod
    def onehot(cls, names):
        return cls(list(names), np.eye(len(names)), "synthetic-onehot")

    @classmethod
    def random(cls, names, dim, seed=0):
        rng = np.random.default_rng(seed)
        vecs = rng.normal(size=(len(names), dim)) / np.sqrt(dim)
        return cls(list(names), vecs, "synthetic-random")

    @classmethod
    def load(cls, path, source="pretrained"):
        rows = read_jsonl(path)
        return cls([r["name"] for r in rows], np.array([r["vec"] for r in rows]), source)

    def save(self, path):
        write_jsonl(path, [{"name": n, "vec": v.tolist()} for n, v in zip(self.vocab, self.vectors)])


@dataclass
class RelationFeature:
    x_v: np.ndarray
    y_s: np.ndarray

    @property
    def r(self):
        return np.concatenate([self.x_v, self.y_s])


@dataclass
class RelationInputs:
    """Raw (unprojected) per-snapshot arrays, one row per relation."""

    human: np.ndarray  # 1 x D_raw
    objects: np.ndarray  # n x D_raw
    unions: np.ndarray  # n x D_raw
    human_emb: np.ndarray  # 1 x d_emb
    object_emb: np.ndarray  # n x d_emb
    categories: tuple

    @property
    def n(self):
        return self.objects.shape[0]

    def permuted(self, perm):
        perm = np.asarray(perm)
        return RelationInputs(
            self.human,
            self.objects[perm],
            self.unions[perm],
            self.human_emb,
            self.object_emb[perm],
            tuple(self.categories[i] for i in perm),
        )


@dataclass
class AbductionExample:
    video_id: str
    snapshot_index: int
    snapshot: SnapshotRecord
    target: frozenset
    is_last_snapshot: bool = False

    @property
    def categories(self):
        return self.snapshot.categories


class Featurizer:
    """Turns snapshots into :class:`RelationInputs` using an embedding table."""

    def __init__(self, vocab: Vocabulary, emb: EmbeddingTable):
        self.vocab = vocab
        self.emb = emb
        self.human_vec = emb.lookup(PERSON)[None, :]
        self._cat_rows = {}

    def category_vector(self, cat):
        if cat not in self._cat_rows:
            if not 0 <= cat < len(self.vocab.objects):
                raise VocabularyError(f"object category index {cat} outside the vocabulary")
            self._cat_rows[cat] = self.emb.lookup(self.vocab.objects[cat])
        return self._cat_rows[cat]

    def inputs(self, s: SnapshotRecord, use_semantics=True):
        obj_emb = np.array([self.category_vector(o.category) for o in s.objects])
        hum_emb = self.human_vec
        if not use_semantics:
            obj_emb = np.zeros_like(obj_emb)
            hum_emb = np.zeros_like(hum_emb)
        return RelationInputs(
            s.human_feature[None, :].astype(np.float64),
            np.array([o.feature for o in s.objects], dtype=np.float64),
            np.array([o.union for o in s.objects], dtype=np.float64),
            hum_emb,
            obj_emb,
            tuple(s.categories),
        )


def project_visual(raw, w: Param, b: Param):
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != w.value.shape[0]:
        raise DimensionError(f"raw feature dim {raw.shape[-1]} != projection input {w.value.shape[0]}")
    return raw @ w.value + b.value.reshape(-1)


def build_relation_features(s: SnapshotRecord, featurizer: Featurizer, use_semantics=True,
                            projections=None):
    """One :class:`RelationFeature` per object in ``s``.

    ``projections`` maps 'human' / 'object' / 'union' to ``(w, b)`` params;
    when omitted the raw features are used unchanged.
    """
    inp = featurizer.inputs(s, use_semantics)

    def proj(slot, x):
        if projections is None:
            return x
        return project_visual(x, *projections[slot])

    xh = proj("human", inp.human[0])
    xo = proj("object", inp.objects)
    xu = proj("union", inp.unions)
    out = []
    for i in range(inp.n):
        out.append(
            RelationFeature(
                np.concatenate([xh, xo[i], xu[i]]),
                np.concatenate([inp.human_emb[0], inp.object_emb[i]]),
            )
        )
    return out


def group_videos(records: Sequence[SnapshotRecord]):
    """Group records by video (first-seen order), sorted by snapshot index."""
    videos: dict[str, list[SnapshotRecord]] = {}
    for r in records:
        videos.setdefault(r.video_id, []).append(r)
    out = []
    for vid, snaps in videos.items():
        snaps = sorted(snaps, key=lambda s: s.snapshot_index)
        idx = [s.snapshot_index for s in snaps]
        if len(set(idx)) != len(idx):
            raise DataError(f"duplicate snapshot index in video {vid}")
        out.append(snaps)
    return out


def build_abduction_dataset(videos, setup="all_past"):
    """Pair each snapshot with the action set it has to abduce.

    all_past: union of the actions of snapshots 0..t.
    last_two: actions of snapshots t-1 and t (the first snapshot is skipped).
    Videos with a single snapshot are dropped, as are examples whose target
    comes out empty.
    """
    if setup not in SETUPS:
        raise ValueError(f"unknown setup {setup!r}; expected one of {SETUPS}")
    out = []
    for snaps in videos:
        if len(snaps) < 2:
            continue
        for a, b in zip(snaps, snaps[1:]):
            if b.snapshot_index <= a.snapshot_index:
                raise DataError(f"snapshots of {a.video_id} are not in increasing order")
        examples = []
        seen = frozenset()
        for t, s in enumerate(snaps):
            seen = seen | s.actions_here
            if setup == "all_past":
                target = seen
            elif t == 0:
                continue
            else:
                target = snaps[t - 1].actions_here | s.actions_here
            if target:
                examples.append(AbductionExample(s.video_id, s.snapshot_index, s, target))
        if examples:
            examples[-1].is_last_snapshot = True
        out.extend(examples)
    return out


def filter_last_snapshots(ds):
    return [ex for ex in ds if ex.is_last_snapshot]


def examples_by_video(ds):
    groups: dict[str, list[AbductionExample]] = {}
    for ex in ds:
        groups.setdefault(ex.video_id, []).append(ex)
    return list(groups.values())


def target_matrix(ds, n_actions):
    y = np.zeros((len(ds), n_actions), dtype=bool)
    for i, ex in enumerate(ds):
        y[i, sorted(ex.target)] = True
    return y


def load_snapshots(path):
    return [SnapshotRecord.from_json(r) for r in read_jsonl(path)]


def save_snapshots(path, records):
    write_jsonl(path, [r.to_json() for r in records])
