"""Command-line surface: gen-synth, train, eval, ablate, gradcheck, report.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure. Every command
is deterministic given config + seed and echoes its effective config."""

from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
from dataclasses import fields
from pathlib import Path

from .checks import run_all_checks
from .config import ConfigError, RunConfig, apply_overrides, load_config_file
from .data import DataError, SynthConfig, generate_synthetic
from .fileio import FormatError, write_task
from .losses import EmptyMaskError
from .report import write_run_outputs
from .routing import STRATEGIES, evaluate_oracle, evaluate_routed
from .trainer import load_run, run_joint, run_sequential, save_run

USAGE_ERRORS = (ConfigError, DataError, FormatError, EmptyMaskError, ValueError)


def _merged_mapping(args) -> dict[str, str]:
    mapping: dict[str, str] = {}
    if getattr(args, "config", None):
        mapping.update(load_config_file(args.config))
    mapping = apply_overrides(mapping, getattr(args, "set", None) or [])
    return mapping


def _synth_config(mapping: dict[str, str]) -> SynthConfig:
    kwargs = {}
    known = {f.name: f for f in fields(SynthConfig)}
    for key, raw in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown gen-synth config key '{key}'")
        ftype = known[key].type
        try:
            if ftype == "int":
                kwargs[key] = int(raw)
            elif ftype == "float":
                kwargs[key] = float(raw)
            elif ftype.startswith("list[int]"):
                kwargs[key] = [int(v) for v in raw.split(",") if v.strip()]
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise ConfigError(f"config key '{key}': {exc}") from exc
    config = SynthConfig(**kwargs)
    config.validate()
    return config


def cmd_gen_synth(args) -> int:
    mapping = _merged_mapping(args)
    config = _synth_config(mapping)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = generate_synthetic(config)
    manifest_paths = []
    for task in tasks:
        manifest = write_task(task, out / f"task_{task.task_id:03d}")
        manifest_paths.append(str(manifest))
    (out / "tasks.txt").write_text("\n".join(manifest_paths) + "\n", encoding="utf-8")
    echo = []
    for f in fields(SynthConfig):
        value = getattr(config, f.name)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        echo.append(f"{f.name} = {value}")
    (out / "config.echo").write_text("\n".join(echo) + "\n", encoding="utf-8")
    print(f"wrote {len(tasks)} tasks under {out}")
    for p in manifest_paths:
        print(p)
    return 0


def _run_config(args) -> RunConfig:
    mapping = _merged_mapping(args)
    if getattr(args, "tasks", None):
        mapping["tasks"] = args.tasks
    if getattr(args, "mode", None):
        mapping["mode"] = args.mode
    return RunConfig.from_mapping(mapping)


def _execute_run(config: RunConfig, run_dir: Path) -> dict:
    state = run_sequential(config) if config.mode == "sequential" else run_joint(config)
    save_run(state, run_dir)
    report = write_run_outputs(state, run_dir)
    return report


def cmd_train(args) -> int:
    config = _run_config(args)
    run_dir = Path(args.out)
    report = _execute_run(config, run_dir)
    final = report["phases"][-1]
    print(f"run complete: {run_dir}")
    print(f"overall routing accuracy: {final['routing']['overall']:.6f}")
    return 0


def _load_run_dir(run_dir: Path):
    echo_path = run_dir / "config.echo"
    if not echo_path.exists():
        raise ConfigError(f"{run_dir} has no config.echo; is it a run directory?")
    mapping = load_config_file(echo_path)
    config = RunConfig.from_mapping(mapping)
    return config, load_run(config, run_dir)


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    config, state = _load_run_dir(run_dir)
    datasets = [t.test for t in state.tasks]
    if args.mode == "oracle":
        result = evaluate_oracle(state.modules, datasets)
    else:
        if args.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy '{args.strategy}'; choose from {STRATEGIES}"
            )
        result = evaluate_routed(
            state.modules,
            datasets,
            args.strategy,
            selector=state.selector.net if state.selector else None,
            memory=state.selector.memory if state.selector else None,
            trace_path=args.trace,
        )
    section = {
        "mode": result.mode,
        "strategy": result.strategy,
        "per_task": {
            state.tasks[j].name: {
                "auroc": te.auroc.value,
                "macro_f1": te.f1.value,
                "skipped_classes": te.auroc.skipped_classes,
                "excluded_uncertain": te.auroc.excluded_uncertain,
            }
            for j, te in sorted(result.per_task.items())
        },
    }
    if result.routing is not None:
        section["routing"] = result.routing.as_dict()
    text = json.dumps(section, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


DEFAULT_CAPACITIES = "0,1000,2500,5000,10000"


def _sub_train(config: RunConfig, run_dir: Path, parallel_procs: list | None) -> None:
    if parallel_procs is None:
        _execute_run(config, run_dir)
        return
    argv = [
        sys.executable,
        "-m",
        "taskgate",
        "train",
        "--out",
        str(run_dir),
        "--tasks",
        ",".join(config.tasks),
    ]
    for line in config.echo_lines():
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "tasks":
            continue
        argv += ["--set", f"{key}={value}"]
    parallel_procs.append(subprocess.Popen(argv))


def _wait_all(procs: list) -> None:
    failures = [p.args for p in procs if p.wait() != 0]
    if failures:
        raise RuntimeError(f"{len(failures)} sweep run(s) failed")


def _final_report(run_dir: Path) -> dict:
    return json.loads((run_dir / "report.txt").read_text(encoding="utf-8"))


def cmd_ablate(args) -> int:
    base = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parallel = args.parallel if args.parallel and args.parallel > 1 else None

    if args.axis == "replay-capacity":
        raw = args.values if args.values is not None else DEFAULT_CAPACITIES
        values = [int(v) for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError("empty value list for replay-capacity sweep")
        procs: list = [] if parallel else None
        run_dirs = []
        for cap in values:
            cfg = RunConfig(**{**base.__dict__, "buffer_capacity": cap})
            run_dir = out / f"run_capacity_{cap:06d}"
            run_dirs.append(run_dir)
            _sub_train(cfg, run_dir, procs)
        if procs:
            _wait_all(procs)
        task_names = _final_report(run_dirs[0])["task_names"]
        rows = []
        for cap, run_dir in zip(values, run_dirs):
            routing = _final_report(run_dir)["phases"][-1]["routing"]
            rows.append(
                [cap]
                + [f"{routing['per_task'][j]:.6f}" for j in range(len(task_names))]
                + [f"{routing['overall']:.6f}"]
            )
        _write_table(
            out / "replay_capacity.csv",
            ["capacity"] + [f"acc_{n}" for n in task_names] + ["overall_acc"],
            rows,
        )
    elif args.axis == "adapter":
        raw = args.values if args.values is not None else "simple,continuum,hope"
        values = [v.strip() for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError("empty value list for adapter sweep")
        procs = [] if parallel else None
        run_dirs = []
        for variant in values:
            cfg = RunConfig(**{**base.__dict__, "adapter": variant})
            run_dir = out / f"run_adapter_{variant}"
            run_dirs.append(run_dir)
            _sub_train(cfg, run_dir, procs)
        if procs:
            _wait_all(procs)
        task_names = _final_report(run_dirs[0])["task_names"]
        rows = []
        for variant, run_dir in zip(values, run_dirs):
            report = _final_report(run_dir)
            final = report["phases"][-1]
            rows.append(
                [variant]
                + [
                    f"{final['routed_selector'][n]['auroc']:.6f}"
                    for n in task_names
                ]
                + [
                    f"{final['routing']['overall']:.6f}",
                    report["trainable"]["total_bytes"],
                    f"{report['trainable']['total_mb']:.6f}",
                ]
            )
        _write_table(
            out / "adapter_variants.csv",
            ["adapter"]
            + [f"auroc_{n}" for n in task_names]
            + ["overall_routing_acc", "param_bytes", "memory_mb"],
            rows,
        )
    elif args.axis == "routing":
        raw = args.values if args.values is not None else ",".join(STRATEGIES)
        strategies = [v.strip() for v in raw.split(",") if v.strip()]
        if not strategies:
            raise ConfigError("empty value list for routing sweep")
        for s in strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy '{s}' in routing sweep")
        if base.buffer_capacity == 0:
            raise ConfigError(
                "routing sweep compares replay on/off; set buffer_capacity > 0"
            )
        settings = [
            ("prototypes_only", 0),
            ("prototypes_replay", base.buffer_capacity),
        ]
        procs = [] if parallel else None
        run_dirs = []
        for name, cap in settings:
            cfg = RunConfig(**{**base.__dict__, "buffer_capacity": cap})
            run_dir = out / f"run_{name}"
            run_dirs.append(run_dir)
            _sub_train(cfg, run_dir, procs)
        if procs:
            _wait_all(procs)
        rows = []
        task_names = None
        for (name, _cap), run_dir in zip(settings, run_dirs):
            _cfg, state = _load_run_dir(run_dir)
            if task_names is None:
                task_names = [t.name for t in state.tasks]
            datasets = [t.test for t in state.tasks]
            for strategy in strategies:
                result = evaluate_routed(
                    state.modules,
                    datasets,
                    strategy,
                    selector=state.selector.net,
                    memory=state.selector.memory,
                )
                acc = result.routing
                rows.append(
                    [name, strategy]
                    + [f"{acc.per_task[j]:.6f}" for j in range(len(task_names))]
                    + [f"{acc.overall:.6f}"]
                )
        _write_table(
            out / "replay_strategies.csv",
            ["setting", "strategy"]
            + [f"acc_{n}" for n in task_names]
            + ["overall_acc"],
            rows,
        )
    else:
        raise ConfigError(f"unknown ablation axis '{args.axis}'")
    print(f"sweep complete: {out}")
    return 0


def _write_table(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_gradcheck(args) -> int:
    results = run_all_checks(tol=args.tol)
    worst = 0.0
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.composite}: max_rel_error={r.max_rel_error:.3e} {status}")
        worst = max(worst, r.max_rel_error)
        ok = ok and r.passed
    print(f"worst composite error: {worst:.3e}")
    return 0 if ok else 2


def cmd_report(args) -> int:
    path = Path(args.run) / "report.txt"
    if not path.exists():
        raise ConfigError(f"no report.txt under {args.run}")
    sys.stdout.write(path.read_text(encoding="utf-8"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskgate",
        description="Continual adapter-routing engine over frozen features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate synthetic multi-task datasets")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("train", help="run sequential or joint training")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--tasks", help="comma-separated task manifest paths, in order")
    p.add_argument("--mode", choices=("sequential", "joint"))
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a finished run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--mode", choices=("oracle", "routed"), required=True)
    p.add_argument("--strategy", default="selector")
    p.add_argument("--trace", help="write per-sample routing trace CSV here")
    p.add_argument("--out", help="also write the report section to this file")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one axis, one full run per value")
    p.add_argument("--axis", required=True, choices=("replay-capacity", "adapter", "routing"))
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--tasks", help="comma-separated task manifest paths")
    p.add_argument("--mode", choices=("sequential", "joint"))
    p.add_argument("--parallel", type=int, default=1, metavar="N")
    p.add_argument("--out", required=True, help="sweep output directory")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all composites")
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("report", help="print a run's report")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
