"""Mean average precision, evaluation reports and the ablation harness."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .relation import filter_last_snapshots, target_matrix


class EvaluationError(ValueError):
    pass


def average_precision(scores, labels) -> Optional[float]:
    """Non-interpolated AP; ties keep input order. ``None`` if no positives."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def per_class_ap(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise EvaluationError(f"score {scores.shape} / label {labels.shape} shape mismatch")
    return [average_precision(scores[:, k], labels[:, k]) for k in range(scores.shape[1])]


def mean_ap(scores, labels):
    """Mean of per-class AP over classes with positives, as a percentage."""
    aps = [a for a in per_class_ap(scores, labels) if a is not None]
    if not aps:
        raise EvaluationError("no class has a positive example")
    return 100.0 * float(np.mean(aps))


@dataclass
class EvalReport:
    per_class_ap: list
    map: float
    n_examples: int
    setup: str
    model_id: str
    seed: Optional[int] = None
    absent_classes: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)

    def table(self, action_names=None):
        lines = [f"model={self.model_id} setup={self.setup} n={self.n_examples}"]
        for k, ap in enumerate(self.per_class_ap):
            name = action_names[k] if action_names else f"class{k}"
            lines.append(f"  {name:<16} {'absent' if ap is None else f'{100 * ap:6.2f}'}")
        lines.append(f"  {'mAP':<16} {self.map:6.2f}")
        return "\n".join(lines)


def score_matrix(scorer, examples):
    return np.array([scorer.score(ex) for ex in examples], dtype=np.float64)


def evaluate(scorer, examples, n_actions, mode="all", setup="all_past", model_id="model",
             seed=None):
    """Score every example (eval mode) and summarize as an :class:`EvalReport`."""
    if mode not in ("all", "last"):
        raise EvaluationError(f"unknown evaluation mode {mode!r}")
    width = getattr(scorer, "n_actions", n_actions)
    if width != n_actions:
        raise EvaluationError(f"model predicts {width} actions but the dataset has {n_actions}")
    if mode == "last":
        examples = filter_last_snapshots(examples)
        setup = "last_snapshot_only"
    if not examples:
        raise EvaluationError("nothing to evaluate")
    scores = score_matrix(scorer, examples)
    labels = target_matrix(examples, n_actions)
    aps = per_class_ap(scores, labels)
    return EvalReport(
        per_class_ap=aps,
        map=mean_ap(scores, labels),
        n_examples=len(examples),
        setup=setup,
        model_id=model_id,
        seed=seed,
        absent_classes=[k for k, a in enumerate(aps) if a is None],
    )


def topk_report(scorer, example, k=None, action_names=None):
    """Top-k predicted actions next to the ground truth; k defaults to |truth|."""
    scores = np.asarray(scorer.score(example))
    k = len(example.target) if k is None else k
    if not 1 <= k <= scores.size:
        raise ValueError(f"k={k} must be in [1, {scores.size}]")
    # stable sort on -score breaks ties by class index
    top = np.argsort(-scores, kind="stable")[:k].tolist()
    name = (lambda a: action_names[a]) if action_names else (lambda a: a)
    return {
        "video_id": example.video_id,
        "t": example.snapshot_index,
        "predicted": [name(a) for a in top],
        "ground_truth": [name(a) for a in sorted(example.target)],
    }


# -- ablation -------------------------------------------------------------------

ABLATION_COLUMNS = ("model", "semantics", "scheduler", "pooling", "embedding", "map_mean", "map_std")


@dataclass
class AblationRow:
    model: str
    semantics: bool
    scheduler: bool
    pooling: str
    embedding: str
    map_mean: float
    map_std: float
    maps: list = field(default_factory=list)


def ablation_grid(models=("mlp", "transformer"), semantics=(True, False), scheduler=(True, False),
                  pooling=("max", "mean"), embeddings=("default",)):
    return [
        dict(model=m, semantics=s, scheduler=sc, pooling=p, embedding=e)
        for m in models for s in semantics for sc in scheduler for p in pooling for e in embeddings
    ]


def ablation_suite(base_model_config, train_config, data, grid, runs=None, mode="all",
                   log=None):
    """Train and evaluate every grid cell over ``runs`` seeds.

    ``data`` is an :class:`~abductive.train.TrainingData`; its ``featurizers``
    mapping supplies one featurizer per embedding name in the grid.
    """
    from dataclasses import replace

    from .train import run_seeds

    rows = []
    for cell in grid:
        mcfg = replace(base_model_config, model_kind=cell["model"], use_semantics=cell["semantics"],
                       pooling=cell["pooling"])
        tcfg = replace(train_config, use_scheduler=cell["scheduler"])
        if runs is not None:
            tcfg = replace(tcfg, runs=runs)
        result = run_seeds(mcfg, tcfg, data.with_embedding(cell["embedding"]), mode=mode)
        maps = [r.test_map for r in result.runs]
        rows.append(AblationRow(cell["model"], cell["semantics"], cell["scheduler"], cell["pooling"],
                                cell["embedding"], float(np.mean(maps)), float(np.std(maps)), maps))
        if log:
            log(f"{cell} -> {rows[-1].map_mean:.2f} +/- {rows[-1].map_std:.2f}")
    return rows


def ablation_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        w.writerow([r.model, "on" if r.semantics else "off", "on" if r.scheduler else "off",
                    r.pooling, r.embedding, f"{r.map_mean:.4f}", f"{r.map_std:.4f}"])
    return buf.getvalue()


def ablation_table(rows):
    """Paper-style text table, one block per model."""
    out = []
    for model in dict.fromkeys(r.model for r in rows):
        out.append(f"{'Model':<52} mAP")
        for r in (r for r in rows if r.model == model):
            parts = ["visual"]
            if r.semantics:
                parts.append("semantic")
            if r.scheduler:
                parts.append("scheduler")
            label = f"{model} ({' + '.join(parts)}) {r.pooling} pooling"
            if r.embedding != "default":
                label += f" [{r.embedding}]"
            out.append(f"{label:<52} {r.map_mean:6.2f}")
        out.append("")
    return "\n".join(out)


def results_table(named_maps):
    """Two-column table in the format of the main results."""
    lines = [f"{'Model':<24}Mean Average Precision"]
    for name, value in named_maps:
        cell = "n/a" if value is None or (isinstance(value, float) and math.isnan(value)) else f"{value:.2f}"
        lines.append(f"{name:<24}{cell}")
    return "\n".join(lines)
