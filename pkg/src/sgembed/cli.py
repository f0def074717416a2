"""Command-line pipeline: generate data, train, evaluate, retrieve, sweep.

Every subcommand writes its outputs (plus a resolved_config.json provenance
dump) into --out, which defaults to $SGEMBED_OUT_DIR or the current
directory. Config files are flat JSON whose keys mirror the flag names;
explicit flags win over file values.

Exit codes: 0 ok; 2 usage error; 3 missing input file; 4 checkpoint
hash/config mismatch; 5 malformed data or config; 6 runtime failure
(diverged training, exhausted sampler); 1 unexpected error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, CheckpointHashMismatch, load_checkpoint
from .evaluate import (
    evaluate,
    evaluate_embeddings,
    noise_sweep,
    random_unit_embeddings,
    retrieval_experiment,
    write_eval_report_csv,
    write_eval_report_json,
    write_ranks_csv,
    write_recall_curve_csv,
    write_retrieval_csv,
    write_sweep_csv,
)
from .model import ModelConfig
from .objectives import (
    DegenerateDistributionError,
    LossConfig,
    SamplerConfig,
    SamplerExhaustedError,
    LOSS_KINDS,
    SAMPLER_KINDS,
)
from .scene import Dataset, DatasetFormatError, load_dataset, save_dataset, split_dataset
from .synth import SynthConfig, dataset_stats, generate, write_stats
from .train import TrainConfig, TrainingDivergedError, train

EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_HASH_MISMATCH = 4
EXIT_BAD_DATA = 5
EXIT_RUNTIME = 6

GRAPHS_FILE = "graphs.jsonl"
SIMILARITY_FILE = "similarity.csv"
VOCAB_FILE = "vocabulary.json"
DEFAULT_SPLIT_RATIOS = (0.7, 0.2, 0.1)

_EPILOG = """exit codes:
  0  success
  2  usage error (unknown flag or bad value)
  3  a referenced input file or directory is missing
  4  checkpoint vocabulary-hash or config mismatch
  5  malformed dataset, config or checkpoint contents
  6  runtime failure (exhausted sampler, diverged training)
  1  unexpected internal error
"""


def _out_dir(args) -> str:
    out = args.out or os.environ.get("SGEMBED_OUT_DIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: invalid config JSON: {e}") from None
    if not isinstance(raw, dict):
        raise DatasetFormatError(f"{path}: config must be a JSON object")
    return raw


def _merged(file_values: dict, args, keys) -> dict:
    """File values overridden by explicitly-passed flags (non-None args)."""
    merged = {k: v for k, v in file_values.items() if k in keys}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _write_resolved_config(out: str, resolved: dict) -> None:
    with open(os.path.join(out, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _dataset_paths(data_dir: str) -> tuple[str, str, str]:
    return (
        os.path.join(data_dir, GRAPHS_FILE),
        os.path.join(data_dir, SIMILARITY_FILE),
        os.path.join(data_dir, VOCAB_FILE),
    )


def _load_data(data_dir: str) -> Dataset:
    graphs_path, sim_path, vocab_path = _dataset_paths(data_dir)
    for p in (graphs_path, sim_path, vocab_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing dataset file: {p}")
    return load_dataset(graphs_path, sim_path, vocab_path)


def _split_from_extra(dataset: Dataset, extra: dict):
    ratios = tuple(extra.get("split_ratios", DEFAULT_SPLIT_RATIOS))
    seed = int(extra.get("split_seed", 0))
    return split_dataset(dataset, ratios, seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

_SYNTH_KEYS = (
    "n_images",
    "n_object_labels",
    "n_relationship_labels",
    "n_topics",
    "objects_min",
    "objects_max",
    "edges_min",
    "edges_max",
    "seed",
)

_TRAIN_KEYS = (
    "label_dim",
    "message_dim",
    "out_dim",
    "num_layers",
    "mlp_hidden",
    "loss",
    "margin",
    "infonce_temperature",
    "ranking_temperature",
    "sampler",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "checkpoint_every",
    "eval_every",
    "split_seed",
)


def _cmd_gen_data(args) -> int:
    out = _out_dir(args)
    values = _merged(_load_config_file(args.config), args, _SYNTH_KEYS)
    config = SynthConfig(**values)
    dataset = generate(config)
    graphs_path, sim_path, vocab_path = _dataset_paths(out)
    save_dataset(dataset, graphs_path, sim_path, vocab_path)
    stats = dataset_stats(dataset)
    write_stats(stats, os.path.join(out, "stats.json"))
    _write_resolved_config(out, {"command": "gen-data", **values})
    print(f"wrote {len(dataset.graphs)} graphs to {out} (median edges: {stats['median_edges']})")
    return 0


def _train_config_from(values: dict) -> TrainConfig:
    model = ModelConfig(
        label_dim=int(values.get("label_dim", 300)),
        message_dim=int(values.get("message_dim", 512)),
        out_dim=int(values.get("out_dim", 300)),
        num_layers=int(values.get("num_layers", 5)),
        mlp_hidden=int(values.get("mlp_hidden", 512)),
    )
    loss = LossConfig(
        kind=values.get("loss", "ranking"),
        margin=float(values.get("margin", 0.5)),
        infonce_temperature=float(values.get("infonce_temperature", 1.0)),
        ranking_temperature=float(values.get("ranking_temperature", 1.0)),
    )
    sampler = SamplerConfig(kind=values.get("sampler", "probability"))
    return TrainConfig(
        model=model,
        loss=loss,
        sampler=sampler,
        epochs=int(values.get("epochs", 100)),
        batch_size=int(values.get("batch_size", 16)),
        learning_rate=float(values.get("learning_rate", 1e-4)),
        seed=int(values.get("seed", 0)),
        checkpoint_every=int(values.get("checkpoint_every", 0)),
        eval_every=int(values.get("eval_every", 1)),
    )


def _cmd_train(args) -> int:
    out = _out_dir(args)
    values = _merged(_load_config_file(args.config), args, _TRAIN_KEYS)
    config = _train_config_from(values)
    split_seed = int(values.get("split_seed", 0))
    dataset = _load_data(args.data)
    dataset = dataset.with_split(split_dataset(dataset, DEFAULT_SPLIT_RATIOS, split_seed))
    _write_resolved_config(out, {"command": "train", "split_ratios": list(DEFAULT_SPLIT_RATIOS), **values})
    extra = {"split_seed": split_seed, "split_ratios": list(DEFAULT_SPLIT_RATIOS)}
    _, entries = train(dataset, config, out_dir=out, extra=extra)
    final = entries[-1].mean_loss if entries else float("nan")
    print(f"trained {config.epochs} epochs (final mean loss: {final:.6f}); checkpoints in {out}")
    return 0


def _checkpoint_and_split(args, dataset: Dataset):
    model, extra = load_checkpoint(args.checkpoint, expected_vocab_hash=dataset.vocab.content_hash())
    if getattr(args, "split_seed", None) is not None:
        extra["split_seed"] = args.split_seed
    extra.setdefault("split_seed", 0)
    split = _split_from_extra(dataset, extra)
    return model, split


def _cmd_eval(args) -> int:
    dataset = _load_data(args.data)
    model, split = _checkpoint_and_split(args, dataset)
    indices = split.indices(args.split)
    out = _out_dir(args)
    report = evaluate(model, dataset, indices)
    baseline = evaluate_embeddings(
        random_unit_embeddings(len(indices), model.config.out_dim, args.seed),
        dataset.similarity.values[np.ix_(list(indices), list(indices))],
    )
    reports = {"model": report, "normal_features": baseline}
    write_eval_report_json(reports, os.path.join(out, "eval_report.json"))
    write_eval_report_csv(reports, os.path.join(out, "eval_report.csv"))
    _write_resolved_config(
        out,
        {"command": "eval", "split": args.split, "seed": args.seed, "checkpoint": os.path.abspath(args.checkpoint)},
    )
    tau = report.row_wise["kendall_tau"]
    print(f"eval[{args.split}] row-wise kendall_tau: {'n/a' if tau is None else '%.4f' % tau}")
    return 0


def _cmd_retrieve(args) -> int:
    dataset = _load_data(args.data)
    model, split = _checkpoint_and_split(args, dataset)
    indices = split.indices(args.split)
    out = _out_dir(args)
    report = retrieval_experiment(model, dataset, indices, args.noise, args.seed)
    write_retrieval_csv([report], os.path.join(out, "retrieval.csv"))
    write_recall_curve_csv(report, os.path.join(out, "recall_curve.csv"))
    if args.per_query_ranks:
        image_ids = [dataset.similarity.image_ids[i] for i in indices]
        write_ranks_csv(report, image_ids, os.path.join(out, "ranks.csv"))
    _write_resolved_config(
        out,
        {
            "command": "retrieve",
            "split": args.split,
            "noise": args.noise,
            "seed": args.seed,
            "checkpoint": os.path.abspath(args.checkpoint),
        },
    )
    print(f"retrieval at noise {args.noise}: mrr={report.mrr:.4f} r@1={report.recall_at[1]:.4f}")
    return 0


def _parse_noise_list(spec: str) -> list[int]:
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in spec.split(",") if tok]


def _cmd_sweep(args) -> int:
    dataset = _load_data(args.data)
    model, split = _checkpoint_and_split(args, dataset)
    indices = split.indices(args.split)
    out = _out_dir(args)
    m_list = _parse_noise_list(args.noise_list)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    rows = []
    for seed in seeds:
        for report in noise_sweep(model, dataset, indices, m_list, seed):
            rows.append((seed, report))
    write_sweep_csv(rows, os.path.join(out, "sweep.csv"))
    _write_resolved_config(
        out,
        {
            "command": "sweep",
            "split": args.split,
            "noise_list": m_list,
            "seeds": seeds,
            "checkpoint": os.path.abspath(args.checkpoint),
        },
    )
    print(f"swept {len(m_list)} noise levels x {len(seeds)} seeds into {out}/sweep.csv")
    return 0


def _cmd_stats(args) -> int:
    dataset = _load_data(args.data)
    stats = dataset_stats(dataset)
    print(json.dumps(stats, indent=1, sort_keys=True))
    if args.out:
        out = _out_dir(args)
        write_stats(stats, os.path.join(out, "stats.json"))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgembed",
        description="Scene-graph image embeddings: synthetic data, training, evaluation, retrieval.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_out(p):
        p.add_argument("--out", help="output directory (default: $SGEMBED_OUT_DIR or '.')")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset", epilog=_EPILOG)
    p.add_argument("--config", help="flat JSON config file with generator fields")
    for key in _SYNTH_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int, help=f"override {key}")
    add_out(p)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory", epilog=_EPILOG)
    p.add_argument("--data", required=True, help="dataset directory (graphs/similarity/vocabulary)")
    p.add_argument("--config", help="flat JSON config file with training fields")
    for key, typ in (
        ("label_dim", int),
        ("message_dim", int),
        ("out_dim", int),
        ("num_layers", int),
        ("mlp_hidden", int),
        ("margin", float),
        ("infonce_temperature", float),
        ("ranking_temperature", float),
        ("epochs", int),
        ("batch_size", int),
        ("learning_rate", float),
        ("seed", int),
        ("checkpoint_every", int),
        ("eval_every", int),
        ("split_seed", int),
    ):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, help=f"override {key}")
    p.add_argument("--loss", choices=LOSS_KINDS, help="objective (default ranking)")
    p.add_argument("--sampler", choices=SAMPLER_KINDS, help="triple sampler (default probability)")
    add_out(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="rank-correlation evaluation of a checkpoint", epilog=_EPILOG)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--seed", type=int, default=0, help="seed for the random-feature baseline")
    p.add_argument("--split-seed", dest="split_seed", type=int, help="override the checkpoint's split seed")
    add_out(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("retrieve", help="noisy-query retrieval experiment", epilog=_EPILOG)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--noise", type=int, required=True, help="number of edges to remove per query")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--per-query-ranks", action="store_true", help="also write ranks.csv")
    add_out(p)
    p.set_defaults(fn=_cmd_retrieve)

    p = sub.add_parser("sweep", help="retrieval metrics over a range of noise levels", epilog=_EPILOG)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--noise-list", default="1..20", help="e.g. '1..20' or '0,2,12'")
    p.add_argument("--seeds", default="0", help="comma-separated retrieval seeds")
    p.add_argument("--split-seed", dest="split_seed", type=int)
    add_out(p)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("stats", help="dataset summary statistics", epilog=_EPILOG)
    p.add_argument("--data", required=True)
    add_out(p)
    p.set_defaults(fn=_cmd_stats)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"FileNotFoundError: {e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (CheckpointHashMismatch,) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_HASH_MISMATCH
    except (SamplerExhaustedError, DegenerateDistributionError, TrainingDivergedError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (DatasetFormatError, CheckpointError, ValueError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_BAD_DATA
    except Exception as e:  # pragma: no cover - safety net
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
