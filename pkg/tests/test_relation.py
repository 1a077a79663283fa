import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abductive.diffmath import DimensionError, Param
from abductive.relation import (
    PERSON,
    DataError,
    EmbeddingTable,
    Featurizer,
    SnapshotRecord,
    Vocabulary,
    VocabularyError,
    build_abduction_dataset,
    build_relation_features,
    filter_last_snapshots,
    group_videos,
    load_snapshots,
    project_visual,
    save_snapshots,
)

from conftest import make_snapshot, make_video


def _featurizer(d_emb=None, n_obj=4):
    vocab = Vocabulary([f"o{i}" for i in range(n_obj)], ["a0", "a1", "a2", "a3"])
    names = [PERSON] + vocab.objects
    emb = EmbeddingTable.onehot(names) if d_emb is None else EmbeddingTable.random(names, d_emb)
    return Featurizer(vocab, emb)


def test_project_visual_shapes(rng):
    w = Param("w", rng.normal(size=(2048, 512)) * 0.01)
    b = Param("b", np.zeros(512))
    assert project_visual(rng.normal(size=2048), w, b).shape == (512,)


def test_project_visual_identity_and_bias(rng):
    x = rng.normal(size=4)
    np.testing.assert_array_equal(project_visual(x, Param("w", np.eye(4)), Param("b", np.zeros(4))), x)
    out = project_visual(x[:2], Param("w", np.zeros((2, 2))), Param("b", [1.0, 1.0]))
    np.testing.assert_array_equal(out, [1, 1])
    with pytest.raises(DimensionError):
        project_visual(x, Param("w", np.eye(3)), Param("b", np.zeros(3)))


def test_relation_dimension_at_published_widths(rng):
    vocab = Vocabulary(["cup", "bag", "door"], ["a"])
    emb = EmbeddingTable.random([PERSON] + vocab.objects, 200)
    snap = SnapshotRecord("v", 0, rng.normal(size=2048),
                          [make_snapshot("v", 0, {0}, rng, cats=(c,), d=2048).objects[0] for c in (0, 1, 2)],
                          {0})
    proj = {k: (Param("w", rng.normal(size=(2048, 512)) * 0.01), Param("b", np.zeros(512)))
            for k in ("human", "object", "union")}
    feats = build_relation_features(snap, Featurizer(vocab, emb), projections=proj)
    assert len(feats) == 3
    assert all(f.r.shape == (1936,) for f in feats)


def test_semantics_off_zeroes_tail_and_keeps_visual_prefix(rng):
    f = _featurizer(d_emb=5)
    snap = make_snapshot("v", 0, {0}, rng, cats=(0, 2, 3))
    on = build_relation_features(snap, f, use_semantics=True)
    off = build_relation_features(snap, f, use_semantics=False)
    for a, b in zip(on, off):
        assert not b.r[-10:].any()
        np.testing.assert_array_equal(a.x_v, b.x_v)
        assert a.y_s.any()


def test_unknown_category_names_it(rng):
    f = _featurizer()
    with pytest.raises(VocabularyError, match="7"):
        f.inputs(make_snapshot("v", 0, {0}, rng, cats=(7,)))
    emb = EmbeddingTable.onehot([PERSON, "cup"])
    with pytest.raises(VocabularyError, match="mug"):
        emb.lookup("mug")


def test_setup_worked_examples(rng):
    video = make_video("v", [{1}, {2}, {3}], rng)
    all_past = build_abduction_dataset([video], "all_past")
    assert [set(e.target) for e in all_past] == [{1}, {1, 2}, {1, 2, 3}]
    assert [e.is_last_snapshot for e in all_past] == [False, False, True]
    last_two = build_abduction_dataset([video], "last_two")
    assert [(e.snapshot_index, set(e.target)) for e in last_two] == [(1, {1, 2}), (2, {2, 3})]
    assert last_two[-1].is_last_snapshot


def test_single_snapshot_video_dropped(rng):
    for setup in ("all_past", "last_two"):
        assert build_abduction_dataset([make_video("v", [{0}], rng)], setup) == []
    assert build_abduction_dataset([], "all_past") == []
    with pytest.raises(ValueError):
        build_abduction_dataset([], "everything")


def test_filter_last_snapshots(rng):
    five = [make_video(f"v{i}", [{0}, {1}, {2}], rng) for i in range(5)]
    assert len(filter_last_snapshots(build_abduction_dataset(five))) == 5
    assert filter_last_snapshots([]) == []
    mixed = [make_video("a", [{0}], rng), make_video("b", [{0}, {1}], rng),
             make_video("c", [{0}, {1}, {2}, {3}], rng)]
    assert len(filter_last_snapshots(build_abduction_dataset(mixed))) == 2


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.frozensets(st.integers(0, 5), max_size=3), min_size=1, max_size=6),
                max_size=5))
def test_all_past_targets_monotone_and_deterministic(action_lists):
    rng = np.random.default_rng(0)
    videos = [make_video(f"v{i}", acts, rng) for i, acts in enumerate(action_lists)]
    ds = build_abduction_dataset(videos)
    again = build_abduction_dataset(videos)
    assert [e.target for e in ds] == [e.target for e in again]
    by_video = {}
    for e in ds:
        by_video.setdefault(e.video_id, []).append(e)
    for exs in by_video.values():
        for a, b in zip(exs, exs[1:]):
            assert a.target <= b.target
        assert sum(e.is_last_snapshot for e in exs) == 1 and exs[-1].is_last_snapshot


def test_snapshot_json_round_trip(tmp_path, rng):
    recs = make_video("v", [{0}, {1, 2}], rng) + make_video("w", [{3}, set()], rng)
    path = tmp_path / "snaps.jsonl"
    save_snapshots(path, recs)
    back = load_snapshots(path)
    assert [r.to_json() for r in back] == [r.to_json() for r in recs]
    assert [len(v) for v in group_videos(back)] == [2, 2]


def test_snapshot_without_objects_rejected(rng):
    with pytest.raises(DataError):
        SnapshotRecord("v", 0, rng.normal(size=3), [], {0})
    with pytest.raises(DataError, match="actions"):
        SnapshotRecord.from_json({"video_id": "v", "t": 0, "human": [0.0], "objects": []})


def test_duplicate_snapshot_index_rejected(rng):
    recs = [make_snapshot("v", 0, {0}, rng), make_snapshot("v", 0, {1}, rng)]
    with pytest.raises(DataError, match="duplicate"):
        group_videos(recs)


def test_embedding_table_row_count_checked():
    with pytest.raises(DimensionError):
        EmbeddingTable(["a", "b"], np.zeros((3, 2)))
