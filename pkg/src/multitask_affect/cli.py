"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import curate, generate_synthetic, load_dataset, parse_annotations, save_dataset, write_annotations
from .errors import ConfigError, ContractError, DataError, NumericalError
from .metrics import MetricReport, format_table
from .model import DdamfnModel
from .thresholds import DEFAULT_GRID, ThresholdSet, optimize_thresholds
from .trainer import TrainConfig, evaluate, load_model, predict, save_model, train_two_stage

log = logging.getLogger("multitask_affect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _cmd_curate(args) -> int:
    records = parse_annotations(args.annotations)
    kept, report = curate(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_annotations(kept, out / "annotations.csv")
    (out / "curation_report.json").write_text(report.to_json(), encoding="utf-8")
    print(report.to_json())
    return EXIT_OK


def _cmd_synth(args) -> int:
    samples = generate_synthetic(args.n, seed=args.seed, image_size=args.image_size)
    save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _cmd_train(args) -> int:
    raw = TrainConfig.from_file(args.config).to_dict() if args.config else {}
    for item in args.set or []:
        key, value = _parse_override(item)
        raw[key] = value
    if args.mode:
        raw["mode"] = args.mode
    config = TrainConfig.from_dict(raw)
    if not config.train_data:
        raise ConfigError("config needs train_data")
    train, report = load_dataset(config.train_data)
    if not train:
        raise DataError(f"no usable samples in {config.train_data}")
    val = load_dataset(config.val_data)[0] if config.val_data else None

    model = DdamfnModel(config.model_config(), seed=config.seed)
    task = None if config.mode == "multitask" else config.mode
    model, train_log, best_state = train_two_stage(model, train, config, val=val, task=task)
    final = evaluate(model, val or train)
    train_log.final_report = final.to_dict()

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.ckpt.json", model, {"train_config": config.to_dict()})
    if best_state is not None:
        best = DdamfnModel(config.model_config(), seed=None)
        best.load_state_dict(best_state)
        save_model(out / "best.ckpt.json", best, {"train_config": config.to_dict(), "best_epoch": train_log.best_epoch})
    (out / "train_log.json").write_text(train_log.to_json(), encoding="utf-8")
    if report is not None:
        (out / "curation_report.json").write_text(report.to_json(), encoding="utf-8")
    print(final.table(config.mode))
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    data, _ = load_dataset(args.data)
    thresholds = ThresholdSet.load(args.thresholds) if args.thresholds else ThresholdSet()
    report = evaluate(model, data, thresholds)
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    else:
        print(report.to_json())
    print(report.table(Path(args.checkpoint).stem))
    return EXIT_OK


def _cmd_optimize(args) -> int:
    model = load_model(args.checkpoint)
    data, _ = load_dataset(args.data)
    _, _, au_probs = predict(model, data)
    truth = [s.record.au for s in data]
    grid = args.grid or DEFAULT_GRID
    chosen, before, after = optimize_thresholds(au_probs, truth, grid)
    chosen.save(args.out)
    for name, t, b, a in zip(chosen.to_dict(), chosen.values, before, after):
        print(f"{name:>5}  t={t:.2f}  F1@0.5={b:.3f}  F1@t={a:.3f}")
    print(f"macro F1: {before.mean():.4f} -> {after.mean():.4f}")
    return EXIT_OK


def _cmd_report(args) -> int:
    rows = []
    labels = args.labels or [Path(p).stem for p in args.metrics]
    if len(labels) != len(args.metrics):
        raise ConfigError("--labels must match the number of metric files")
    for label, path in zip(labels, args.metrics):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        rows.append((label, MetricReport.from_dict(doc)))
    print(format_table(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multitask-affect", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("curate", help="filter an annotation CSV")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_curate)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="two-stage training from a JSON config")
    p.add_argument("--config")
    p.add_argument("--mode", choices=("multitask", "va", "expr", "au"))
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--thresholds")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("optimize-thresholds", help="tune per-AU thresholds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=float, nargs="+")
    p.set_defaults(fn=_cmd_optimize)

    p = sub.add_parser("report", help="compare metric JSON files")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ContractError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
