import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abductive.evaluation import (
    ABLATION_COLUMNS,
    AblationRow,
    EvaluationError,
    ablation_csv,
    ablation_grid,
    ablation_table,
    average_precision,
    evaluate,
    mean_ap,
    results_table,
    topk_report,
)
from abductive.relation import build_abduction_dataset

from conftest import make_video


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert average_precision([0.9, 0.1], [0, 1]) == 0.5
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6)
    assert average_precision([0.3, 0.2], [0, 0]) is None


def test_map_examples():
    labels = np.array([[1, 0], [0, 1], [1, 0]], bool)
    assert mean_ap(labels.astype(float), labels) == 100.0
    scores = np.array([[0.1, 0.9], [0.9, 0.1]])
    assert mean_ap(scores, np.array([[0, 1], [1, 0]], bool)) == 100.0
    assert mean_ap(np.array([[0.9, 0.2], [0.1, 0.8]]), np.array([[0, 1], [1, 1]], bool)) == 75.0
    with pytest.raises(EvaluationError):
        mean_ap(np.zeros((2, 2)), np.zeros((2, 2), bool))


def _independent_ap(scores, labels):
    # rank by (-score, position); AP = mean precision at each positive
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, total = 0, 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            hits += 1
            total += hits / rank
    return total / hits if hits else None


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.integers(1, 8), st.data())
def test_map_matches_independent_implementation(n, K, data):
    scores = np.array(data.draw(st.lists(st.lists(st.sampled_from([0.0, 0.5, 1.0, 2.5, -1.0]) | st.floats(-3, 3),
                                                  min_size=K, max_size=K), min_size=n, max_size=n)))
    labels = np.array(data.draw(st.lists(st.lists(st.booleans(), min_size=K, max_size=K),
                                         min_size=n, max_size=n)))
    aps = [_independent_ap(list(scores[:, k]), list(labels[:, k])) for k in range(K)]
    aps = [a for a in aps if a is not None]
    if not aps:
        return
    assert abs(mean_ap(scores, labels) - 100.0 * np.mean(aps)) <= 1e-9


class _CategoryScorer:
    n_actions = 4

    def score(self, ex):
        return np.bincount(ex.categories, minlength=4).astype(float)


def _dataset(rng, n_videos=5):
    return build_abduction_dataset([make_video(f"v{i}", [{0}, {1}, {2, 3}], rng, cats=(i % 4, 1))
                                    for i in range(n_videos)])


def test_evaluate_modes(rng):
    ds = _dataset(rng)
    full = evaluate(_CategoryScorer(), ds, 4)
    last = evaluate(_CategoryScorer(), ds, 4, mode="last")
    assert full.n_examples == 15 and last.n_examples == 5
    assert last.setup == "last_snapshot_only"
    assert evaluate(_CategoryScorer(), ds, 4).to_json() == full.to_json()
    assert "mAP" in full.table()


def test_evaluate_errors(rng):
    ds = _dataset(rng)
    with pytest.raises(EvaluationError, match="4 actions"):
        evaluate(_CategoryScorer(), ds, 5)
    with pytest.raises(EvaluationError):
        evaluate(_CategoryScorer(), ds, 4, mode="best")
    with pytest.raises(EvaluationError):
        evaluate(_CategoryScorer(), [], 4)


def test_topk(rng):
    ex = _dataset(rng)[2]

    class OneHot:
        def score(self, ex):
            return np.array([0.0, 0.0, 1.0, 0.0])

    rep = topk_report(OneHot(), ex, k=1)
    assert rep["predicted"] == [2]
    assert topk_report(OneHot(), ex, k=4)["predicted"] == [2, 0, 1, 3]
    assert topk_report(OneHot(), ex)["ground_truth"] == sorted(ex.target)
    with pytest.raises(ValueError):
        topk_report(OneHot(), ex, k=5)


def test_ablation_grid_sizes():
    assert len(ablation_grid(models=("mlp",))) == 8
    assert len(ablation_grid()) == 16
    assert len(ablation_grid(models=("mlp",), semantics=(True,), scheduler=(True,), pooling=("max",))) == 1
    assert len(ablation_grid(models=("mlp",), embeddings=("a", "b"))) == 16


def test_ablation_tables():
    rows = [AblationRow("mlp", True, False, "max", "default", 50.0, 1.0),
            AblationRow("mlp", False, True, "mean", "glove", 40.0, 2.0)]
    csv = ablation_csv(rows).splitlines()
    assert csv[0] == ",".join(ABLATION_COLUMNS)
    assert csv[1] == "mlp,on,off,max,default,50.0000,1.0000"
    text = ablation_table(rows)
    assert "mlp (visual + semantic) max pooling" in text
    assert "mlp (visual + scheduler) mean pooling [glove]" in text


def test_results_table():
    text = results_table([("Rule-based", 12.345), ("BiGED", float("nan"))])
    assert text.splitlines()[1].endswith("12.35")
    assert text.splitlines()[2].endswith("n/a")
