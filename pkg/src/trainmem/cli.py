"""Command-line front end: profile one configuration, sweep Pareto grids,
run desk-scale training demonstrations, and execute the acceptance suite.

    trainmem profile --arch wrn-28-2 --config baseline.cfg --out report
    trainmem pareto  --sweep sweep.cfg --out frontier.csv
    trainmem train   --arch desk-cnn --config train.cfg --seed 0
    trainmem verify

Config files are flat `key = value` text.  Set TRAINMEM_LOG=debug|info for
verbosity.  Outputs are deterministic given a seed and inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .archfile import load_arch
from .errors import TrainmemError
from .numerics import NumericFormat
from .pareto import SweepSpec, sweep
from .plan import CheckpointStrategy
from .profiler import CSV_HEADER, TrainingConfig, report_to_csv_row, total_report
from .train import TrainSettings, TrainingDiverged, metrics_to_jsonl, train_desk

log = logging.getLogger("trainmem")


def read_kv_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise TrainmemError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def _parse_density(text: str) -> dict[str, float]:
    density = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            group, frac = part.split("=", 1)
            density[group.strip()] = float(frac)
        else:
            density["*"] = float(part)
    return {k: v for k, v in density.items() if v < 1.0}


def config_from_kv(kv: dict[str, str], graph) -> TrainingConfig:
    density = _parse_density(kv.get("density", ""))
    if "*" in density:
        groups = graph.sparsifiable_groups()
        if not groups:
            raise TrainmemError("density given but the graph has no sparsifiable group")
        density[groups[0]] = density.pop("*")
    minibatch = int(kv.get("minibatch", 100))
    return TrainingConfig(
        density=density,
        precision=NumericFormat.parse(kv.get("precision", "fp32")),
        minibatch=minibatch,
        microbatch=int(kv.get("microbatch", minibatch)),
        strategy=CheckpointStrategy.parse(kv.get("strategy", "none")),
        optimizer_kind=kv.get("optimizer", "sgd_nesterov"),
        batch_unit=kv.get("batch_unit", graph.batch_unit),
    )


def cmd_profile(args) -> int:
    graph = load_arch(args.arch)
    kv = read_kv_file(args.config) if args.config else {}
    config = config_from_kv(kv, graph)
    mem, fl = total_report(graph, config)
    payload = {"arch": graph.name, **mem.to_dict(), **fl.to_dict()}
    csv_text = CSV_HEADER + "\n" + report_to_csv_row(graph.name, config, mem, fl) + "\n"
    if args.out:
        with open(args.out + ".json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(args.out + ".csv", "w") as fh:
            fh.write(csv_text)
        log.info("wrote %s.json and %s.csv", args.out, args.out)
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(csv_text, end="")
    return 0


def cmd_pareto(args) -> int:
    kv = read_kv_file(args.sweep)
    graph = load_arch(kv.get("arch", args.arch or "wrn-28-2"))

    def split(key, default, conv):
        return [conv(x.strip()) for x in kv.get(key, default).split(",") if x.strip()]

    spec = SweepSpec(
        densities=split("densities", "1.0", float),
        precisions=split("precisions", "fp32", NumericFormat.parse),
        microbatches=split("microbatches", kv.get("minibatch", "100"), int),
        strategies=split("strategies", "none", CheckpointStrategy.parse),
        optimizers=split("optimizers", "sgd_nesterov", str),
        minibatch=int(kv.get("minibatch", 100)),
        batch_unit=kv.get("batch_unit", graph.batch_unit),
    )
    warnings: list[str] = []
    points = sweep(graph, spec, warnings)
    for w in warnings:
        log.warning("%s", w)
    lines = [CSV_HEADER + ",on_frontier"]
    for p in points:
        lines.append(report_to_csv_row(graph.name, p.config, p.memory, p.flops)
                     + f",{int(p.on_frontier)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        log.info("wrote %s (%d points)", args.out, len(points))
    else:
        print(text, end="")
    return 0


def cmd_train(args) -> int:
    graph = load_arch(args.arch)
    kv = read_kv_file(args.config) if args.config else {}
    settings = TrainSettings(
        steps=int(kv.get("steps", 200)),
        minibatch=int(kv.get("minibatch", 32)),
        microbatch=int(kv.get("microbatch", kv.get("minibatch", 32))),
        lr=float(kv.get("lr", 0.05)),
        density=float(kv.get("density", 1.0)),
        precision=NumericFormat.parse(kv.get("precision", "fp32")),
        strategy=CheckpointStrategy.parse(kv.get("strategy", "none")),
        optimizer=kv.get("optimizer", "sgd_nesterov"),
        exec_mode=kv.get("exec_mode", "sequential"),
        accumulator_width=int(kv.get("accumulator_width", 32)),
        seed=args.seed,
        rewire_every=int(kv.get("rewire_every", 0)),
        log_every=int(kv.get("log_every", 20)),
    )
    try:
        result = train_desk(graph, settings)
    except TrainingDiverged as e:
        sys.stderr.write(f"training diverged: {e}\n")
        return 2
    out = args.out or "train"
    with open(out + ".metrics.jsonl", "w") as fh:
        fh.write(metrics_to_jsonl(result))
    with open(out + ".rewire.jsonl", "w") as fh:
        fh.write("\n".join(result.rewire_log) + ("\n" if result.rewire_log else ""))
    summary = {
        "final_accuracy": round(result.final_accuracy, 6),
        "steps_skipped": result.steps_skipped,
        "peak_activation_bytes": result.peak_activation_bytes,
        "rewires": len(result.rewire_log),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_verify(args) -> int:
    from .verification import run_all

    return 0 if run_all() else 1


def main(argv=None) -> int:
    level = os.environ.get("TRAINMEM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="trainmem", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="memory/FLOP report for one configuration")
    p.add_argument("--arch", required=True, help="arch file path or preset name")
    p.add_argument("--config", help="flat key=value training configuration")
    p.add_argument("--out", help="output path prefix (.json/.csv)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("pareto", help="sweep a configuration grid, flag the frontier")
    p.add_argument("--sweep", required=True, help="sweep spec (key=value with comma lists)")
    p.add_argument("--arch", help="arch override if the sweep file names none")
    p.add_argument("--out", help="frontier CSV path")
    p.set_defaults(fn=cmd_pareto)

    p = sub.add_parser("train", help="desk-scale training demonstration")
    p.add_argument("--arch", required=True)
    p.add_argument("--config", help="flat key=value training settings")
    p.add_argument("--out", help="output prefix for metrics/rewire logs")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.set_defaults(fn=cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TrainmemError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    except FileNotFoundError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
