"""Command-line surface: simulate, split, train, evaluate, export-graphs.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
Relative data paths are resolved against ``$VAETPP_DATA_DIR`` when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import data as data_mod
from . import export as export_mod
from . import hawkes as hawkes_mod
from .config import ExperimentConfig
from .data import Dataset, ParseError, ValidationError, load_sequences, split_dataset
from .metrics import evaluate
from .training import TrainingDiverged, load_checkpoint, train


class _UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2; the contract is 1
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise _UsageError(1)


def _resolve(path: str) -> str:
    base = os.environ.get("VAETPP_DATA_DIR")
    if base and not os.path.isabs(path) and not os.path.exists(path):
        return os.path.join(base, path)
    return path


def _load_split_dataset(args, config: ExperimentConfig) -> Dataset:
    ds = load_sequences(_resolve(args.data))
    if getattr(args, "splits", None):
        with open(args.splits, "r", encoding="utf-8") as fh:
            ds.splits = json.load(fh)
    else:
        ds = split_dataset(ds, config.split_fractions, config.seed)
    return ds


def _cmd_simulate(args) -> int:
    config = hawkes_mod.SimulationConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    sequences, truth = hawkes_mod.simulate_dataset(config)
    data_mod.save_sequences(sequences, args.out)
    truth_path = args.truth or args.out + ".truth.json"
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2)
    print(f"wrote {len(sequences)} sequences to {args.out}")
    print(f"wrote ground truth to {truth_path}")
    return 0


def _cmd_split(args) -> int:
    ds = load_sequences(_resolve(args.data))
    ds = split_dataset(ds, tuple(args.fractions), args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(ds.splits, fh, indent=2)
    counts = {name: len(ds.split(name)) for name in data_mod.SPLIT_NAMES}
    print(f"wrote split assignment to {args.out}: {counts}")
    return 0


def _cmd_train(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    ds = _load_split_dataset(args, config)
    result = train(config, ds, out_dir=args.out)
    print(
        f"trained {config.model}: best epoch {result.best_epoch}, "
        f"val NLL/event {result.best_val_nll:.6f}, "
        f"final train NLL/event {result.final_train_nll:.6f}"
    )
    print(f"checkpoint written to {args.out}")
    return 0


def _checkpoint_split(args) -> tuple:
    model, config, meta = load_checkpoint(args.checkpoint)
    ds = load_sequences(_resolve(args.data))
    if getattr(args, "splits", None):
        with open(args.splits, "r", encoding="utf-8") as fh:
            ds.splits = json.load(fh)
    elif meta.get("splits") and all(s.seq_id in meta["splits"] for s in ds.sequences):
        ds.splits = meta["splits"]
    else:
        ds = split_dataset(ds, config.split_fractions, config.seed)
    return model, config, ds


def _cmd_evaluate(args) -> int:
    model, config, ds = _checkpoint_split(args)
    sequences = ds.split(args.split)
    report, records = evaluate(
        model,
        sequences,
        split=args.split,
        model_name=config.model,
        latents=args.latents,
        seed=config.seed,
    )
    print(report.to_json())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
            for record in records:
                fh.write(json.dumps(record) + "\n")
    return 0


def _cmd_export_graphs(args) -> int:
    model, config, ds = _checkpoint_split(args)
    sequences = ds.split(args.split)
    paths = export_mod.export_graphs(model, sequences, args.out)
    print(f"wrote edge table to {paths['table']}")
    print(f"wrote aggregate table to {paths['aggregate']}")
    print(f"wrote {len(paths['plots'])} interval plots to {args.out}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="vaetpp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate piecewise Hawkes ground truth")
    p.add_argument("--config", required=True, help="simulation config JSON")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--truth", help="ground-truth sidecar path (default <out>.truth.json)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("split", help="assign sequences to train/val/test")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output JSON split assignment")
    p.add_argument("--fractions", type=float, nargs=3, default=(0.6, 0.2, 0.2))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--splits", help="split assignment JSON (default: split by config)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="report NLL / RMSE / accuracy on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=data_mod.SPLIT_NAMES)
    p.add_argument("--splits", help="split assignment JSON")
    p.add_argument("--latents", default="posterior", choices=("posterior", "prior"))
    p.add_argument("--out", help="also write the report plus per-sequence records")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("export-graphs", help="export posterior edge probabilities")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=data_mod.SPLIT_NAMES)
    p.add_argument("--splits", help="split assignment JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_export_graphs)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError:
        return 1
    except (ValidationError, ParseError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, hawkes_mod.SimulationLimitError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
