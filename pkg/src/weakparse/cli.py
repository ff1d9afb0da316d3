"""Command line: gen-data, build-index, train, eval, report.

Exit status is 0 on success, 1 for invalid input or configuration and 2 when
a file cannot be read or written.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from . import seq2seq as s2s
from .arith import GrammarMode, Malformed
from .case_filter import load_base_cases
from .data import DatasetError, generate, read_dataset, write_dataset
from .index import CandidateIndex, IndexFormatError, IndexMissing, build_table, persist_index
from .trainer import (
    METRICS_NAME,
    SUMMARY_NAME,
    ConfigError,
    TrainConfig,
    evaluate_accuracy,
    parse_curriculum,
    prepare_examples,
    read_metrics,
    run_training,
)

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
METRIC_FIELDS = ("epoch", "mean_loss", "returned_correct_fraction", "denotation_accuracy", "skipped")

# train settings a config file may carry; flags of the same name win
TRAIN_KEYS = ("train", "test", "index", "base_cases", "out", "supervision", "brackets", "epochs",
              "seed", "curriculum", "init_scale", "dropout", "lr")


class UsageError(ValueError):
    pass


def _on_off(text):
    try:
        return GrammarMode.from_flag(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def cmd_gen_data(args) -> int:
    total = args.train + args.test
    train, test = generate(args.seed, total=total, train=args.train)
    os.makedirs(args.out_dir, exist_ok=True)
    write_dataset(os.path.join(args.out_dir, "train.tsv"), train)
    write_dataset(os.path.join(args.out_dir, "test.tsv"), test)
    print(f"wrote {len(train)} train and {len(test)} test records to {args.out_dir}")
    return EXIT_OK


def cmd_build_index(args) -> int:
    table = build_table(args.max_size)
    sizes = range(2, args.max_size + 1)
    modes = list(GrammarMode) if args.brackets is None else [args.brackets]
    if args.brackets is None:
        os.makedirs(args.out, exist_ok=True)
    for mode in modes:
        path = os.path.join(args.out, f"index.{mode.value}.tsv") if args.brackets is None else args.out
        persist_index(table, sizes, path, mode)
        print(f"wrote {path}")
    return EXIT_OK


def _load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    unknown = set(data) - set(TRAIN_KEYS)
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def resolve_train_settings(args) -> dict:
    """Config file values overlaid with any flag given on the command line."""
    settings = {"supervision": "denotation", "brackets": "on", "epochs": 200, "seed": 0,
                "curriculum": "3:20,5:20,7:160", "base_cases": None,
                "init_scale": s2s.ModelConfig.init_scale, "dropout": s2s.ModelConfig.dropout,
                "lr": 0.001}
    if args.config:
        settings.update(_load_config_file(args.config))
    for key in TRAIN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key in ("train", "test", "out"):
        if not settings.get(key):
            raise UsageError(f"--{key} is required (flag or config file)")
    return settings


def _train_config(settings) -> TrainConfig:
    curriculum = settings["curriculum"]
    if isinstance(curriculum, str):
        curriculum = parse_curriculum(curriculum)
    else:
        curriculum = tuple(tuple(stage) for stage in curriculum)
    try:
        grammar = GrammarMode.from_flag(settings["brackets"])
        model = s2s.ModelConfig(init_scale=float(settings["init_scale"]), dropout=float(settings["dropout"]))
        config = TrainConfig(supervision=settings["supervision"], grammar=grammar, epochs=int(settings["epochs"]),
                             seed=int(settings["seed"]), curriculum=curriculum, lr=float(settings["lr"]),
                             model=model)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    config.validate()
    return config


def cmd_train(args) -> int:
    settings = resolve_train_settings(args)
    config = _train_config(settings)
    index = base_cases = None
    if config.supervision == "denotation":
        if not settings.get("index"):
            raise UsageError("denotation supervision needs --index")
        index = CandidateIndex.load(settings["index"])
        base_cases = load_base_cases(settings["base_cases"])
    train = read_dataset(settings["train"])
    test = read_dataset(settings["test"])

    history = run_training(config, train, test, settings["out"], index, base_cases)
    final = history[-1].denotation_accuracy if history else 0.0
    print(f"final accuracy {final:.4f} after {len(history)} epochs; outputs in {settings['out']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, header = s2s.load_checkpoint(args.checkpoint)
    if args.brackets is not None:
        mode = args.brackets
    elif "grammar" in header.get("extra", {}):
        mode = GrammarMode(header["extra"]["grammar"])
    else:
        raise UsageError("checkpoint does not record its grammar; pass --brackets")
    records = read_dataset(args.test)
    accuracy = evaluate_accuracy(prepare_examples(records, mode), params, mode)
    hits = round(accuracy * len(records))
    print(f"accuracy {accuracy:.4f} ({hits}/{len(records)}) grammar={mode.value}")
    return EXIT_OK


def _run_info(path):
    """Metrics file and run description for a run directory or metrics file."""
    if os.path.isdir(path):
        metrics_path = os.path.join(path, METRICS_NAME)
        summary_path = os.path.join(path, SUMMARY_NAME)
    else:
        metrics_path = path
        summary_path = os.path.join(os.path.dirname(path), SUMMARY_NAME)
    info = {"run": path.rstrip("/"), "supervision": None, "brackets": None, "seed": None}
    if os.path.exists(summary_path):
        with open(summary_path, encoding="utf-8") as fh:
            config = json.load(fh).get("config", {})
        info.update(supervision=config.get("supervision"), brackets=config.get("grammar"), seed=config.get("seed"))
    return metrics_path, info


def summary_table(runs) -> str:
    """Final accuracy per (supervision, grammar); best seed shown, run count in brackets."""
    cells = {}
    for info, metrics in runs:
        if not metrics or info["supervision"] is None:
            continue
        cells.setdefault((info["supervision"], info["brackets"]), []).append(metrics[-1].denotation_accuracy)
    cols = [("brackets", "with brackets"), ("flat", "no brackets")]
    rows = [("gold", "gold logical form"), ("denotation", "denotation only")]
    lines = [f"{'':<20}" + "".join(f"{label:>18}" for _, label in cols)]
    for sup, label in rows:
        line = f"{label:<20}"
        for mode, _ in cols:
            vals = cells.get((sup, mode))
            line += f"{'-':>18}" if not vals else f"{100 * max(vals):>13.1f}% ({len(vals)})"
        lines.append(line)
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    runs = []
    for path in args.runs:
        metrics_path, info = _run_info(path)
        try:
            metrics = read_metrics(metrics_path)
        except ValueError as exc:
            raise UsageError(f"{metrics_path}: {exc}") from None
        runs.append((info, metrics))
    out = open(args.csv, "w", encoding="utf-8", newline="") if args.csv else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        multi = len(runs) > 1
        writer.writerow((("run", "supervision", "brackets", "seed") if multi else ()) + METRIC_FIELDS)
        for info, metrics in runs:
            prefix = (info["run"], info["supervision"], info["brackets"], info["seed"]) if multi else ()
            for m in metrics:
                writer.writerow(prefix + (m.epoch, f"{m.mean_loss:.6f}", f"{m.returned_correct_fraction:.6f}",
                                          f"{m.denotation_accuracy:.6f}", m.skipped))
    finally:
        if args.csv:
            out.close()
    if len(runs) > 1 or args.table:
        table = summary_table(runs)
        if args.table and args.table != "-":
            with open(args.table, "w", encoding="utf-8") as fh:
                fh.write(table)
        else:
            sys.stdout.write(("\n" if not args.csv else "") + table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakparse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample a train/test split of arithmetic utterances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=6000)
    p.add_argument("--test", type=int, default=2000)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-index", help="persist the denotation -> logical forms index")
    p.add_argument("--max-size", type=int, default=4)
    p.add_argument("--brackets", type=_on_off, default=None,
                   help="on or off; omit to write both grammars into the --out directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("train", help="train a parser and write metrics, checkpoint and summary")
    p.add_argument("--config", help="JSON file of settings; flags override it")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--index")
    p.add_argument("--base-cases", dest="base_cases")
    p.add_argument("--out")
    p.add_argument("--supervision", choices=("gold", "denotation"))
    p.add_argument("--brackets", choices=("on", "off"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--curriculum", help='e.g. "3:20,5:20,7:160"')
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="denotation accuracy of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--brackets", type=_on_off, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="per-epoch CSV and a supervision x grammar summary")
    p.add_argument("runs", nargs="+", help="run directories or metrics files")
    p.add_argument("--csv", help="write the CSV here instead of stdout")
    p.add_argument("--table", help="write the summary table here ('-' for stdout)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetError, IndexFormatError, IndexMissing, Malformed,
            s2s.CheckpointError) as exc:
        print(f"weakparse: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"weakparse: {exc.strerror or exc}: {exc.filename or ''}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"weakparse: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
