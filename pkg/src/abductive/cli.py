"""Command line: generate | train | eval | ablate | verify.

Configs are JSON with the sections ``world`` or ``dataset`` (exactly one),
``generate``, ``model``, ``train``, ``eval`` and ``ablation``, plus the
top-level ``seed`` and ``out``. Unknown keys are rejected. Command-line
flags override the config.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error,
5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4, 5

# learning rate used for synthetic (toy-width) data when the config gives none:
# the published 1e-5 scaled by 100
SYNTHETIC_LR = 1e-3

SECTIONS = {"world", "dataset", "generate", "model", "train", "eval", "ablation", "seed", "out"}
DATASET_KEYS = {"train", "test", "vocab", "embeddings", "world"}
GENERATE_KEYS = {"train_episodes", "test_episodes", "embedding"}
EVAL_KEYS = {"mode", "setup"}
ABLATION_KEYS = {"models", "semantics", "scheduler", "pooling", "embeddings", "runs"}


class ConfigFileError(ValueError):
    pass


def _check_keys(section, d, allowed):
    if not isinstance(d, dict):
        raise ConfigFileError(f"config section {section!r} must be an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigFileError(f"unknown key(s) in {section!r}: {unknown}; allowed: {sorted(allowed)}")


def load_config(path):
    """Read and validate a config file; relative paths resolve against it."""
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise ConfigFileError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"config file {path} is not valid JSON: {exc}") from None
    return validate_config(cfg, os.path.dirname(os.path.abspath(path)))


def validate_config(cfg, base_dir="."):
    from dataclasses import fields

    from .models import ModelConfig
    from .synthworld import _OVERRIDABLE
    from .train import TrainConfig

    _check_keys("top level", cfg, SECTIONS)
    if "world" in cfg and "dataset" in cfg:
        raise ConfigFileError("give either a 'world' section or a 'dataset' section, not both")
    if "world" in cfg:
        _check_keys("world", cfg["world"], _OVERRIDABLE | {"seed", "preset"})
    if "dataset" in cfg:
        ds = dict(cfg["dataset"])
        _check_keys("dataset", ds, DATASET_KEYS)
        for key in ("train", "test", "vocab", "embeddings"):
            if key not in ds:
                raise ConfigFileError(f"dataset section is missing {key!r}")
        for key in ("train", "test", "vocab", "world"):
            if key in ds:
                ds[key] = os.path.join(base_dir, ds[key])
        emb = ds["embeddings"]
        emb = {"default": emb} if isinstance(emb, str) else dict(emb)
        ds["embeddings"] = {k: os.path.join(base_dir, v) for k, v in emb.items()}
        for p in [ds[k] for k in ("train", "test", "vocab", "world") if k in ds] + list(
            ds["embeddings"].values()
        ):
            if not os.path.exists(p):
                raise ConfigFileError(f"dataset path {p} does not exist")
        cfg = {**cfg, "dataset": ds}
    _check_keys("generate", cfg.get("generate", {}), GENERATE_KEYS)
    _check_keys("model", cfg.get("model", {}), {f.name for f in fields(ModelConfig)})
    _check_keys("train", cfg.get("train", {}), {f.name for f in fields(TrainConfig)})
    _check_keys("eval", cfg.get("eval", {}), EVAL_KEYS)
    _check_keys("ablation", cfg.get("ablation", {}), ABLATION_KEYS)
    if "out" in cfg:
        cfg = {**cfg, "out": os.path.join(base_dir, cfg["out"])}
    return cfg


# -- helpers ---------------------------------------------------------------------


def _seed(args, cfg):
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def _out_dir(args, cfg):
    out = args.out or cfg.get("out") or "out"
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigFileError(f"output directory {out} is not writable: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigFileError(f"output directory {out} is not writable")
    return out


def _world(cfg, seed):
    from .synthworld import PRESETS, ConfigError, generate_world

    w = dict(cfg.get("world", {}))
    preset = w.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown world preset {preset!r}; expected one of {sorted(PRESETS)}")
        w = {**PRESETS[preset], **w}
    return generate_world(int(w.pop("seed", seed)), **w)


def _embedding_tables(world, kind):
    if kind == "onehot":
        return {"default": world.embedding_table("onehot")}
    if kind == "random":
        return {"default": world.embedding_table("random", dim=16)}
    raise ConfigFileError(f"generate.embedding must be 'onehot' or 'random', got {kind!r}")


def _setup(args, cfg):
    return getattr(args, "setup", None) or cfg.get("eval", {}).get("setup", "all_past")


def load_training_data(cfg, seed, setup):
    """TrainingData from the dataset section, or generated from the world section."""
    from .models import DataDims
    from .relation import (
        DataError,
        EmbeddingTable,
        Featurizer,
        Vocabulary,
        build_abduction_dataset,
        group_videos,
        load_snapshots,
    )
    from .synthworld import synthetic_training_data
    from .train import TrainingData

    if "dataset" in cfg:
        ds = cfg["dataset"]
        vocab = Vocabulary.load(ds["vocab"])
        tables = {k: EmbeddingTable.load(p) for k, p in ds["embeddings"].items()}
        train = build_abduction_dataset(group_videos(load_snapshots(ds["train"])), setup)
        test = build_abduction_dataset(group_videos(load_snapshots(ds["test"])), setup)
        if not train:
            raise DataError(f"dataset {ds['train']} yields no training examples")
        first = load_snapshots(ds["train"])[0]
        featurizers = {k: Featurizer(vocab, t) for k, t in tables.items()}
        name = next(iter(tables))
        dims = DataDims(first.human_feature.size, tables[name].dim, len(vocab.actions))
        return TrainingData(train, test, featurizers, dims, embedding=name)
    gen = cfg.get("generate", {})
    world = _world(cfg, seed)
    return synthetic_training_data(
        world,
        int(gen.get("train_episodes", 500)),
        int(gen.get("test_episodes", 100)),
        seed=seed,
        setup=setup,
        embeddings=_embedding_tables(world, gen.get("embedding", "onehot")),
    )


def _train_config(args, cfg):
    from .train import TrainConfig

    t = dict(cfg.get("train", {}))
    if "lr_init" not in t and "dataset" not in cfg:
        t["lr_init"] = SYNTHETIC_LR
    for flag in ("epochs", "runs", "lr_init"):
        v = getattr(args, flag, None)
        if v is not None:
            t[flag] = v
    t["seed"] = _seed(args, cfg)
    return TrainConfig(**t).validate()


def _model_config(args, cfg):
    from .models import ModelConfig

    m = dict(cfg.get("model", {}))
    if getattr(args, "model", None):
        m["model_kind"] = args.model
    return ModelConfig(**m).validate()


def _log_line(path, text):
    with open(path, "a", encoding="utf-8") as f:
        f.write(text + "\n")


# -- commands -----------------------------------------------------------------------


def cmd_generate(args, cfg):
    from .fileio import write_json
    from .relation import save_snapshots
    from .synthworld import MAX_ORACLE_ACTIONS, generate_episodes, oracle_map

    if "dataset" in cfg:
        raise ConfigFileError("generate needs a 'world' section, not a 'dataset' section")
    seed = _seed(args, cfg)
    gen = cfg.get("generate", {})
    n_train = args.episodes if args.episodes is not None else int(gen.get("train_episodes", 500))
    n_test = args.test_episodes if args.test_episodes is not None else int(gen.get("test_episodes", 100))
    if n_train <= 0 or n_test < 0:
        raise ConfigFileError("empty dataset requested")
    out = _out_dir(args, cfg)
    world = _world(cfg, seed)
    train_eps = generate_episodes(world, n_train, seed, prefix="train")
    test_eps = generate_episodes(world, n_test, seed + 1_000_003, prefix="test")
    save_snapshots(os.path.join(out, "train.jsonl"), [r for e in train_eps for r in e.records])
    save_snapshots(os.path.join(out, "test.jsonl"), [r for e in test_eps for r in e.records])
    world.vocabulary().save(os.path.join(out, "vocab.json"))
    _embedding_tables(world, gen.get("embedding", "onehot"))["default"].save(
        os.path.join(out, "embeddings.jsonl"))
    world.save(os.path.join(out, "world.json"))
    print(f"wrote {n_train} train / {n_test} test episodes to {out}")
    if test_eps and world.n_actions <= MAX_ORACLE_ACTIONS:
        print(f"oracle mAP (test): {oracle_map(world, test_eps):.2f}")
    return EXIT_OK


def cmd_train(args, cfg):
    import numpy as np

    from .evaluation import evaluate
    from .fileio import write_json, write_jsonl
    from .models import rule_fit, save_checkpoint
    from .train import config_hash, run_seed, train_model

    seed = _seed(args, cfg)
    setup = _setup(args, cfg)
    mode = cfg.get("eval", {}).get("mode", "all")
    out = _out_dir(args, cfg)
    mcfg = _model_config(args, cfg)
    tcfg = _train_config(args, cfg)
    data = load_training_data(cfg, seed, setup)
    K = data.dims.n_actions
    log_path = os.path.join(out, "run.log")
    t0 = time.time()
    if mcfg.model_kind == "rule":
        report = evaluate(rule_fit(data.train, K), data.test, K, mode=mode, setup=setup, model_id="rule")
        summary = {"model_kind": "rule", "setup": setup, "mode": mode, "map_mean": report.map,
                   "map_std": 0.0, "runs": [{"seed": None, "test_map": report.map}],
                   "config_hash": config_hash(mcfg, tcfg)}
        write_json(os.path.join(out, "summary.json"), summary)
        print(f"rule-based mAP {report.map:.2f}")
        return EXIT_OK
    rows, runs = [], []
    for r in range(tcfg.runs):
        s = run_seed(tcfg.seed, r)

        def log(row, r=r, s=s):
            rows.append({"run": r, "seed": s, **row})
            print(f"run {r} epoch {row['epoch']}: loss {row['loss']:.4f} lr {row['lr']:.2e} "
                  f"train-subset mAP {row['map_train_subset']:.2f}", flush=True)

        res = train_model(mcfg, tcfg, data, seed=s, eval_mode=mode, log=log)
        ckpt = os.path.join(out, f"checkpoint_run{r}.ckpt")
        save_checkpoint(res.model, ckpt, extra={"seed": s, "setup": setup,
                                                "embedding": data.embedding})
        runs.append({"seed": s, "test_map": res.test_map, "checkpoint": os.path.basename(ckpt)})
        print(f"run {r}: test mAP {res.test_map:.2f} -> {ckpt}")
    maps = [r["test_map"] for r in runs]
    summary = {
        "model_kind": mcfg.model_kind,
        "setup": setup,
        "mode": mode,
        "map_mean": float(np.mean(maps)),
        "map_std": float(np.std(maps)),
        "runs": runs,
        "config_hash": config_hash(mcfg, tcfg),
        "model": mcfg.to_json(),
        "train": tcfg.to_json(),
    }
    write_jsonl(os.path.join(out, "metrics.jsonl"), rows)
    write_json(os.path.join(out, "summary.json"), summary)
    _log_line(log_path, json.dumps({"command": "train", "seconds": round(time.time() - t0, 3),
                                    "finished": time.strftime("%Y-%m-%dT%H:%M:%S")}))
    print(f"mAP {summary['map_mean']:.2f} +/- {summary['map_std']:.2f} over {tcfg.runs} run(s)")
    return EXIT_OK


def cmd_eval(args, cfg):
    from .evaluation import EvaluationError, evaluate
    from .fileio import atomic_write, write_json
    from .models import load_checkpoint, rule_fit

    seed = _seed(args, cfg)
    setup = _setup(args, cfg)
    mode = args.mode or cfg.get("eval", {}).get("mode", "all")
    out = _out_dir(args, cfg)
    data = load_training_data(cfg, seed, setup)
    K = data.dims.n_actions
    if args.checkpoint is None:
        if (args.model or cfg.get("model", {}).get("model_kind")) != "rule":
            raise ConfigFileError("eval needs --checkpoint (or --model rule)")
        scorer, model_id = rule_fit(data.train, K), "rule"
    else:
        scorer = load_checkpoint(args.checkpoint)
        model_id = scorer.kind
        emb = scorer.checkpoint_extra.get("embedding", data.embedding)
        if emb in data.featurizers:
            data = data.with_embedding(emb)
        if scorer.dims.d_emb != data.dims.d_emb or scorer.dims.d_raw != data.dims.d_raw:
            raise EvaluationError(
                f"checkpoint expects d_raw={scorer.dims.d_raw}, d_emb={scorer.dims.d_emb}; dataset has "
                f"d_raw={data.dims.d_raw}, d_emb={data.dims.d_emb}")
        scorer.featurizer = data.featurizer
    report = evaluate(scorer, data.test, K, mode=mode, setup=setup, model_id=model_id, seed=seed)
    names = None
    if "dataset" in cfg:
        from .relation import Vocabulary

        names = Vocabulary.load(cfg["dataset"]["vocab"]).actions
    table = report.table(names)
    write_json(os.path.join(out, "report.json"), report.to_json())
    atomic_write(os.path.join(out, "report.txt"), (table + "\n").encode())
    print(table)
    return EXIT_OK


def cmd_ablate(args, cfg):
    from .evaluation import ablation_csv, ablation_grid, ablation_suite, ablation_table
    from .fileio import atomic_write, write_json

    seed = _seed(args, cfg)
    setup = _setup(args, cfg)
    mode = cfg.get("eval", {}).get("mode", "all")
    out = _out_dir(args, cfg)
    data = load_training_data(cfg, seed, setup)
    ab = cfg.get("ablation", {})
    grid = ablation_grid(
        models=tuple(ab.get("models", ("mlp", "transformer"))),
        semantics=tuple(ab.get("semantics", (True, False))),
        scheduler=tuple(ab.get("scheduler", (True, False))),
        pooling=tuple(ab.get("pooling", ("max", "mean"))),
        embeddings=tuple(ab.get("embeddings", tuple(data.featurizers))),
    )
    mcfg = _model_config(args, cfg)
    tcfg = _train_config(args, cfg)
    rows = ablation_suite(mcfg, tcfg, data, grid, runs=ab.get("runs"), mode=mode, log=print)
    atomic_write(os.path.join(out, "ablation.csv"), ablation_csv(rows).encode())
    write_json(os.path.join(out, "ablation.json"), [vars(r) for r in rows])
    print(ablation_table(rows))
    return EXIT_OK


def cmd_verify(args, cfg):
    from . import verify

    t0 = time.perf_counter()
    results = verify.run_all(only=set(args.only) if args.only else None)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in "
          f"{time.perf_counter() - t0:.1f}s")
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "verify": cmd_verify,
}


def _global_flags(default):
    # the same flags are accepted before and after the subcommand; the
    # subcommand copies must not overwrite values given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=default)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="cap on BLAS threads")
    common.add_argument("--out", help="output directory")
    return common


def build_parser():
    p = argparse.ArgumentParser(prog="abductive", description=__doc__.split("\n")[0],
                                parents=[_global_flags(None)])
    common = _global_flags(argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    g.add_argument("--episodes", type=int, help="training episodes (default 500)")
    g.add_argument("--test-episodes", type=int, help="test episodes (default 100)")

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--model", choices=("rule", "mlp", "transformer", "gnned", "rbp", "biged"))
    t.add_argument("--setup", choices=("all_past", "last_two"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--runs", type=int)
    t.add_argument("--lr", dest="lr_init", type=float)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or the rule baseline")
    e.add_argument("--checkpoint")
    e.add_argument("--model", choices=("rule",), help="evaluate the rule-based baseline")
    e.add_argument("--mode", choices=("all", "last"))
    e.add_argument("--setup", choices=("all_past", "last_two"))

    a = sub.add_parser("ablate", parents=[common], help="run the ablation grid")
    a.add_argument("--setup", choices=("all_past", "last_two"))

    v = sub.add_parser("verify", parents=[common], help="run the property suite")
    v.add_argument("--only", nargs="*", help="run only the named checks")
    return p


def _set_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        _set_threads(args.threads)

    from .diffmath import NumericError
    from .evaluation import EvaluationError
    from .models import CheckpointError
    from .relation import DataError, VocabularyError
    from .synthworld import ConfigError, TractabilityError
    from .train import DegenerateTargetError

    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigFileError, ConfigError, TractabilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, VocabularyError, CheckpointError, EvaluationError, DegenerateTargetError,
            FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TypeError, ValueError) as exc:
        # dataclass constructors and validators raise these for bad config values
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
