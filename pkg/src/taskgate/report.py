"""RunReport assembly and serialization: config echo, report.txt (structured
text with stable key order), and the CSV tables under tables/."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .metrics import forgetting
from .routing import EvalResult
from .trainer import RunState


def _metric_dict(result: EvalResult, task_id: int) -> dict:
    te = result.per_task[task_id]
    return {
        "auroc": te.auroc.value,
        "macro_f1": te.f1.value,
        "scored_classes": te.auroc.scored_classes,
        "skipped_classes": te.auroc.skipped_classes,
        "excluded_uncertain": te.auroc.excluded_uncertain,
    }


def _forgetting_block(state: RunState, which: str) -> dict | str:
    """Per-earlier-task AUROC drop between its own phase and the final phase."""
    if state.config.mode != "sequential" or len(state.phases) < 2:
        return "not_applicable"
    final = state.phases[-1]
    per_task = {}
    values = []
    for j in range(len(state.phases) - 1):
        own = getattr(state.phases[j], which).auroc_of(j)
        later = getattr(final, which).auroc_of(j)
        drop = forgetting(own, later)
        per_task[state.tasks[j].name] = drop
        values.append(drop)
    return {"per_task": per_task, "mean": sum(values) / len(values)}


def build_report(state: RunState) -> dict:
    tasks = state.tasks
    report: dict = {
        "mode": state.config.mode,
        "num_tasks": len(tasks),
        "task_names": [t.name for t in tasks],
        "feature_dim": state.feature_dim,
        "trainable": {
            "per_module": {
                t.name: {
                    "params": m.param_count,
                    "bytes": m.param_bytes,
                }
                for t, m in zip(tasks, state.modules)
            },
            "selector_params": sum(
                p.size for p in state.selector.net.parameters()
            )
            if state.selector
            else 0,
            "total_params": state.trainable_params(),
            "total_bytes": state.trainable_bytes(),
            "total_mb": state.trainable_bytes() / (1024.0 * 1024.0),
        },
        "phases": [],
    }
    for snap in state.phases:
        observed = sorted(snap.oracle.per_task)
        phase_entry = {
            "phase": snap.phase,
            "trained_task": snap.trained_task,
            "trainable_bytes": snap.trainable_bytes,
            "trainable_mb": snap.trainable_bytes / (1024.0 * 1024.0),
            "oracle": {
                tasks[j].name: _metric_dict(snap.oracle, j) for j in observed
            },
            "routed_selector": {
                tasks[j].name: _metric_dict(snap.routed, j) for j in observed
            },
            "routing": snap.routed.routing.as_dict(),
        }
        report["phases"].append(phase_entry)
    report["forgetting"] = {
        "oracle": _forgetting_block(state, "oracle"),
        "routed_selector": _forgetting_block(state, "routed"),
    }
    report["config"] = state.config.echo_dict()
    return report


def render_report(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_tables(state: RunState, report: dict, tables_dir: Path) -> None:
    tables_dir.mkdir(parents=True, exist_ok=True)
    task_names = report["task_names"]

    rows = []
    for phase in report["phases"]:
        for name in task_names:
            if name not in phase["oracle"]:
                continue
            rows.append(
                [
                    phase["phase"],
                    phase["trained_task"],
                    name,
                    _fmt(phase["oracle"][name]["auroc"]),
                    _fmt(phase["oracle"][name]["macro_f1"]),
                    _fmt(phase["routed_selector"][name]["auroc"]),
                    _fmt(phase["routed_selector"][name]["macro_f1"]),
                ]
            )
    _write_csv(
        tables_dir / "phase_metrics.csv",
        ["phase", "trained_task", "task", "auroc_oracle", "f1_oracle", "auroc_routed", "f1_routed"],
        rows,
    )

    # one row per training phase: routed AUROC per task, forgetting so far, memory
    rows = []
    for phase in report["phases"]:
        row: list = [phase["phase"], phase["trained_task"]]
        for name in task_names:
            row.append(
                _fmt(phase["routed_selector"][name]["auroc"])
                if name in phase["routed_selector"]
                else ""
            )
        if phase is report["phases"][-1] and isinstance(
            report["forgetting"]["routed_selector"], dict
        ):
            row.append(_fmt(report["forgetting"]["routed_selector"]["mean"]))
        else:
            row.append("")
        row.append(_fmt(phase["trainable_mb"]))
        rows.append(row)
    _write_csv(
        tables_dir / "summary.csv",
        ["phase", "trained_task"]
        + [f"auroc_{name}" for name in task_names]
        + ["forgetting", "memory_mb"],
        rows,
    )

    final = report["phases"][-1]
    routing = final["routing"]
    rows = [
        [name, _fmt(routing["per_task"][j]), routing["totals"][j]]
        for j, name in enumerate(task_names)
    ]
    rows.append(["overall", _fmt(routing["overall"]), sum(routing["totals"])])
    _write_csv(
        tables_dir / "routing_accuracy.csv", ["task", "accuracy", "samples"], rows
    )

    confusion = routing["confusion"]
    rows = [
        [task_names[i]] + [confusion[i][j] for j in range(len(task_names))]
        for i in range(len(task_names))
    ]
    _write_csv(
        tables_dir / "routing_confusion.csv",
        ["true_task"] + [f"routed_{name}" for name in task_names],
        rows,
    )


def write_run_outputs(state: RunState, run_dir: Path | str) -> dict:
    """Write config.echo, report.txt, and tables/*.csv; returns the report."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.echo").write_text(
        "\n".join(state.config.echo_lines()) + "\n", encoding="utf-8"
    )
    report = build_report(state)
    (run_dir / "report.txt").write_text(render_report(report), encoding="utf-8")
    write_tables(state, report, run_dir / "tables")
    return report
