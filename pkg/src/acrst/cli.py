"""Command line entry points: run one experiment, sweep several, render reports.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import TOGGLES, ConfigError, ExperimentConfig, config_from_dict
from .dataset import Dataset, ParseError, ValidationError, parse_coco_annotations
from .seeding import derive_seed
from .simloop import EPOCH_CSV_COLUMNS, RunReport, run_experiment
from .synthdata import synthetic_dataset

log = logging.getLogger(__name__)

_SUMMARY_METRICS = [c for c in EPOCH_CSV_COLUMNS if c != "epoch"]


class _UsageError(Exception):
    """Raised for problems that map to exit code 2."""


def _load_config(path_text: str) -> dict:
    path = Path(path_text)
    if not path.is_file():
        raise _UsageError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise _UsageError(
            f"config {path} is not valid JSON: {e.msg} (line {e.lineno} column {e.colno})"
        ) from e


def _build_dataset(config: ExperimentConfig) -> Dataset:
    dc = config.dataset
    if dc.type == "coco_json":
        path = Path(dc.path)
        if not path.is_file():
            raise _UsageError(f"annotation file not found: {path}")
        return parse_coco_annotations(path.read_text(encoding="utf-8"))
    seed = dc.seed if dc.seed is not None else derive_seed(config.seed, "dataset")
    return synthetic_dataset(
        dc.images,
        dc.classes,
        seed,
        width=dc.width,
        height=dc.height,
        mean_extra_instances=dc.mean_extra_instances,
        skew=dc.skew,
        min_box=dc.min_box,
        max_box=dc.max_box,
    )


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    toggles = {}
    for name in args.enable or []:
        toggles[name] = True
    for name in args.disable or []:
        toggles[name] = False
    if toggles:
        config = config.with_toggles(**toggles)
    return config


def _write_run_artifacts(report: RunReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "epochs.csv").write_text(report.epochs_csv(), encoding="utf-8")


def cmd_run(args) -> int:
    config = _apply_overrides(config_from_dict(_load_config(args.config)), args)
    dataset = _build_dataset(config)
    report = run_experiment(config, dataset)
    _write_run_artifacts(report, Path(args.out))
    final = report.summary.get("final", {})
    print(f"run complete: {report.summary['epochs_run']} mutual epochs -> {args.out}")
    for metric in _SUMMARY_METRICS:
        if metric in final:
            value = final[metric]
            print(f"  {metric}: {value:.6f}" if isinstance(value, float) else f"  {metric}: {value}")
    return 0


def _sweep_plan(raw_config: dict) -> tuple[list[dict], list[int] | None]:
    sweep = raw_config.get("sweep")
    if not isinstance(sweep, dict):
        raise _UsageError("sweep command needs a 'sweep' section in the config")
    unknown = set(sweep) - {"runs", "seeds"}
    if unknown:
        raise _UsageError(f"unknown sweep key '{sorted(unknown)[0]}'")
    runs = sweep.get("runs")
    if not runs:
        raise _UsageError("sweep.runs must be a non-empty list")
    for i, spec in enumerate(runs):
        if not isinstance(spec, dict) or "name" not in spec:
            raise _UsageError(f"sweep.runs[{i}] needs a 'name'")
        if set(spec) - {"name", "toggles"}:
            raise _UsageError(f"sweep.runs[{i}] allows only 'name' and 'toggles'")
    seeds = sweep.get("seeds")
    if seeds is not None and (
        not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds)
    ):
        raise _UsageError("sweep.seeds must be a list of integers")
    return runs, seeds


def cmd_sweep(args) -> int:
    raw = _load_config(args.config)
    runs, seeds = _sweep_plan(raw)
    base = config_from_dict(raw)
    base = _apply_overrides(base, args)
    if seeds is None:
        seeds = [base.seed]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for spec in runs:
        for seed in seeds:
            name = str(spec["name"])
            config = dataclasses.replace(base, seed=seed)
            toggles = dict(spec.get("toggles") or {})
            row = {"run": name, "seed": seed}
            try:
                config = config.with_toggles(**toggles)
                for toggle in TOGGLES:
                    row[toggle] = getattr(config, toggle)
                dataset = _build_dataset(config)
                report = run_experiment(config, dataset)
                _write_run_artifacts(report, out_dir / f"{name}__seed{seed}")
                row["status"] = "ok"
                for metric in _SUMMARY_METRICS:
                    row[metric] = report.summary.get("final", {}).get(metric, "")
            except Exception as e:  # noqa: BLE001  (a failed run must not kill the sweep)
                log.warning("sweep run %s seed %s failed: %s", name, seed, e)
                row.setdefault("status", "failed")
                row["status"] = "failed"
                for metric in _SUMMARY_METRICS:
                    row.setdefault(metric, "")
                for toggle in TOGGLES:
                    row.setdefault(toggle, "")
            rows.append(row)

    columns = ["run", "seed", *TOGGLES, "status", *_SUMMARY_METRICS]
    with (out_dir / "summary.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    n_ok = sum(1 for r in rows if r["status"] == "ok")
    print(f"sweep complete: {n_ok}/{len(rows)} runs succeeded -> {out_dir}")
    return 0


def _load_report(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise _UsageError(
            f"corrupt report {path}: {e.msg} (line {e.lineno} column {e.colno})"
        ) from e


def _write_slices(report: dict, slice_dir: Path, prefix: str = "") -> None:
    slice_dir.mkdir(parents=True, exist_ok=True)
    epochs = report.get("epochs", [])
    for metric in _SUMMARY_METRICS:
        rows = [(row["epoch"], row[metric]) for row in epochs]
        name = f"{prefix}{metric}_vs_epoch.csv"
        with (slice_dir / name).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", metric])
            writer.writerows(rows)


def _print_report_summary(label: str, report: dict) -> None:
    summary = report.get("summary", {})
    final = summary.get("final", {})
    parts = [f"epochs={summary.get('epochs_run', '?')}"]
    parts += [
        f"{metric}={final[metric]:.4f}" if isinstance(final.get(metric), float) else f"{metric}={final.get(metric, '')}"
        for metric in _SUMMARY_METRICS
        if metric in final
    ]
    print(f"{label}: " + " ".join(parts))


def cmd_report(args) -> int:
    in_dir = Path(getattr(args, "in"))
    if not in_dir.is_dir():
        raise _UsageError(f"input directory not found: {in_dir}")
    single = in_dir / "report.json"
    sweep_summary = in_dir / "summary.csv"
    if single.is_file():
        report = _load_report(single)
        _print_report_summary(in_dir.name, report)
        _write_slices(report, in_dir / "slices")
        print(f"slices written to {in_dir / 'slices'}")
        return 0
    if sweep_summary.is_file():
        count = 0
        for sub in sorted(p for p in in_dir.iterdir() if p.is_dir()):
            report_path = sub / "report.json"
            if not report_path.is_file():
                continue
            report = _load_report(report_path)
            _print_report_summary(sub.name, report)
            _write_slices(report, in_dir / "slices", prefix=f"{sub.name}__")
            count += 1
        print(f"aggregated {count} runs; slices written to {in_dir / 'slices'}")
        return 0
    raise _UsageError(f"{in_dir} holds neither report.json nor summary.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acrst",
        description="Class-rebalancing self-training simulator for detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_overrides(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--enable", action="append", choices=TOGGLES, metavar="TOGGLE",
            help=f"turn a toggle on ({', '.join(TOGGLES)})",
        )
        p.add_argument(
            "--disable", action="append", choices=TOGGLES, metavar="TOGGLE",
            help="turn a toggle off",
        )

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True, help="path to a JSON config")
    run.add_argument("--out", required=True, help="output directory")
    add_overrides(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a config's sweep plan")
    sweep.add_argument("--config", required=True, help="path to a JSON config with a sweep section")
    sweep.add_argument("--out", required=True, help="output directory")
    add_overrides(sweep)
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="summarize a run or sweep directory")
    report.add_argument("--in", required=True, help="directory written by run or sweep")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (_UsageError, ConfigError, ParseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001  (contract: runtime failures exit 1)
        log.error("run failed: %s", e)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
