"""CSV and summary-document writers.

Floats are written with 12 significant digits and rows end with a bare
newline, so a fixed seed reproduces the files byte for byte.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        out = format(v, ".12g")
        return "0" if out == "-0" else out
    return str(value)


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(header, rows))
    return path


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isnan(v) or math.isinf(v) else float(format(v, ".12g"))
    return value


def summary_text(doc: dict) -> str:
    return yaml.safe_dump(_plain(doc), sort_keys=False, default_flow_style=None, width=100)


def write_summary(path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(summary_text(doc))
    return path


# --- per-object exporters ---------------------------------------------------------------------


def run_state_rows(run, profile):
    for i, label in enumerate(profile.labels):
        yield i, label, int(run.counts[i]), run.occupancy[i]


def write_run_csv(path, run, profile) -> Path:
    return write_csv(path, ("state", "label", "count", "occupancy"), run_state_rows(run, profile))


def run_summary(run) -> dict:
    return {
        "steps": run.steps,
        "burn_in": run.burn_in,
        "occupancy": run.occupancy,
        "energy_joules": run.energy_joules,
        "mean_power_w": run.mean_power,
        "overload_fraction": run.overload_fraction,
        "late_service_fraction": run.late_service_fraction,
        "unserved_tasks": run.unserved,
        "events": {
            "wake_up_delay": sum(1 for _, k in run.events if k == "wake_up_delay"),
            "overload_entry": sum(1 for _, k in run.events if k == "overload_entry"),
        },
        "generator": run.generator,
    }


def convergence_rows(report):
    for (step, tvd), mean in zip(report.checkpoints, report.mean_tvd):
        yield step, tvd, mean


def ci_rows(report, labels):
    paper = report.ci["paper-formula"]
    wald = report.ci["wald"]
    for i, label in enumerate(labels):
        yield (i, label, report.pi_theory[i], report.pi_mc[i], report.sigma[i], *paper[i], *wald[i])


CONVERGENCE_HEADER = ("checkpoint", "tvd", "mean_tvd")
CI_HEADER = ("state", "label", "pi_theory", "pi_mc", "sigma", "paper_lower", "paper_upper", "wald_lower", "wald_upper")


def write_convergence_csv(directory, report, labels, prefix: str = "converge") -> list[Path]:
    directory = Path(directory)
    return [
        write_csv(directory / f"{prefix}_tvd.csv", CONVERGENCE_HEADER, convergence_rows(report)),
        write_csv(directory / f"{prefix}_ci.csv", CI_HEADER, ci_rows(report, labels)),
    ]


def convergence_summary(report) -> dict:
    return {
        "replicas": report.replicas,
        "seed": report.seed,
        "checkpoints": [c for c, _ in report.checkpoints],
        "tvd": [t for _, t in report.checkpoints],
        "mean_tvd": list(report.mean_tvd),
        "final_tvd": report.final_tvd,
        "tvd_definition": "sum_i |pi_mc_i - pi_theory_i| (no 1/2 factor)",
        "pi_theory": report.pi_theory,
        "pi_mc": report.pi_mc,
        "sigma": report.sigma,
        "ci_methods": list(report.ci),
        "generator": report.generator,
    }


def write_qtable_csv(path, table) -> Path:
    return write_csv(path, ("state", "demand_level", "action", "value"), table.items())


def fleet_occupancy_rows(report, specs):
    for m, (run, spec) in enumerate(zip(report.node_runs, specs)):
        for i, label in enumerate(spec.profile.labels):
            yield report.strategy, m, i, label, run.occupancy[i], run.occupancy[i] * spec.profile.state_power[i]


FLEET_OCCUPANCY_HEADER = ("strategy", "node", "state", "label", "occupancy", "mean_power_w")


def write_fleet_csv(path, report, specs) -> Path:
    return write_csv(path, FLEET_OCCUPANCY_HEADER, fleet_occupancy_rows(report, specs))
