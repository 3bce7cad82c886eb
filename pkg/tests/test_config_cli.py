import subprocess
import sys
import textwrap

import numpy as np
import pytest
import yaml

from edgepower.cli import main
from edgepower.config import ConfigError, load_config, parse_config
from edgepower.experiments import (
    MissingBaselineError,
    cmd_compare,
    cmd_fleet,
    cmd_steady,
    cmd_sweep,
    reduction,
)
from edgepower.reporting import csv_text, fmt

SMALL = {"simulation": {"steps": 2000, "seed": 5}}


def write(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else yaml.safe_dump(doc))
    return p


# --- formatting --------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "value, text",
    [(1 / 3, "0.333333333333"), (636 / 89, "7.14606741573"), (1e-20, "1e-20"), (2, "2"), (-0.0, "0"), (None, ""), (float("nan"), "nan")],
)
def test_fmt(value, text):
    assert fmt(value) == text


def test_csv_rows_are_newline_terminated():
    assert csv_text(("a", "b"), [(1, 0.5)]) == "a,b\n1,0.5\n"


# --- config ------------------------------------------------------------------------------------


def test_defaults():
    cfg = parse_config({})
    assert cfg.matrix.n == 5 and cfg.profile.name == "default"
    assert cfg.checkpoints == [1000, 10000, 100000] and cfg.replicas == 30


def test_malformed_row_sum_names_row(tmp_path):
    doc = {"matrix": [[0.5, 0.4], [0.5, 0.5]], "profile": {"state_power": [1, 2]}}
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, doc))
    assert "row 0" in str(exc.value) and exc.value.location == "matrix"


def test_yaml_error_has_line_and_column(tmp_path):
    p = write(tmp_path, "simulation:\n  steps: [1, 2\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert str(p) in exc.value.location and exc.value.location.count(":") >= 2


@pytest.mark.parametrize(
    "doc, where",
    [
        ({"bogus": 1}, "unknown sections"),
        ({"profile": {"state_power": [1, 2]}}, "profile"),
        ({"sweep": {"row": 0, "column": 1, "values": [1.2]}}, "sweep.values"),
        ({"sweep": {"row": 9, "column": 1, "values": [0.1]}}, "sweep"),
        ({"sweep": {"row": 0, "values": [0.1]}}, "sweep"),
        ({"policies": [{"kind": "sarsa"}]}, "policies[0]"),
        ({"workload": {"kind": "file"}}, "workload"),
        ({"fleet": {"strategies": ["lottery"], "demo": True}}, "fleet.strategies"),
        ({"simulation": {"steps": 0}}, "simulation"),
        ({"profile": {"preset": "jetson"}}, "profile.preset"),
    ],
)
def test_config_errors_carry_location(doc, where):
    with pytest.raises(ConfigError) as exc:
        parse_config(doc)
    assert where in str(exc.value)


def test_profile_from_transitions_and_presets():
    cfg = parse_config(
        {
            "matrix": {"rows": [[0.5, 0.5], [0.2, 0.8]], "labels": ["Low", "High"]},
            "profile": {
                "name": "two",
                "state_power": [1, 3],
                "transition_power": [[0, 2], [1, 0]],
                "edge_latency": [[0, 0.5], [0.25, 0]],
                "labels": ["Low", "High"],
            },
        }
    )
    assert cfg.profile.edge_energy[0, 1] == 1.0 and cfg.profile.edge_energy[1, 0] == 0.25
    pi = parse_config({"matrix": np.eye(4)[[1, 2, 3, 0]].tolist(), "profile": {"preset": "raspberry-pi-4"}})
    assert pi.profile.name == "raspberry-pi-4"


def test_fleet_nodes_section():
    cfg = parse_config(
        {
            "fleet": {
                "nodes": [
                    {"power_scale": 1.0, "capacity": 1},
                    {"power_scale": 2.0, "capacity": 3, "policy": {"kind": "predictive", "noise_sd": 0.2}},
                ],
                "strategies": ["random"],
                "coupling": {"kind": "load-share", "sensitivity": 0.5},
            }
        }
    )
    a, b = cfg.fleet.nodes
    assert b.profile.state_power[3] == 16.0 and b.capacity == 3
    assert b.policy.kind == "predictive"
    assert cfg.fleet.coupling.sensitivity == 0.5


def test_with_seed_overrides():
    assert parse_config(SMALL).with_seed(99).simulation.seed == 99
    assert parse_config(SMALL).with_seed(None).simulation.seed == 5


# --- commands ----------------------------------------------------------------------------------


def test_steady_reference():
    rep = cmd_steady(parse_config({}))
    np.testing.assert_allclose(rep.pi, [0.0562, 0.1124, 0.2247, 0.3146, 0.2921], atol=5e-5)
    assert rep.watts == pytest.approx(7.146, abs=5e-4)


def test_steady_one_state():
    rep = cmd_steady(parse_config({"matrix": [[1.0]], "profile": {"state_power": [3.5]}}))
    assert rep.pi.tolist() == [1.0] and rep.watts == 3.5


def test_sweep_identity_equals_steady(tmp_path):
    cfg = parse_config({"sweep": {"row": 3, "column": 4, "values": [0.15]}})
    (pt,) = cmd_sweep(cfg, out=tmp_path)
    base = cmd_steady(cfg, out=tmp_path)
    assert [fmt(x) for x in pt.pi] == [fmt(x) for x in base.pi]
    assert fmt(pt.watts) == fmt(base.watts)


def test_sweep_directions():
    p34 = cmd_sweep(parse_config({"sweep": {"row": 3, "column": 4, "values": [0.15, 0.25, 0.35]}}))
    assert p34[0].watts < p34[1].watts < p34[2].watts
    p23 = cmd_sweep(parse_config({"sweep": {"row": 2, "column": 3, "values": [0.30, 0.40]}}))
    assert p23[0].pi[3] < p23[1].pi[3]


def test_sweep_reports_infeasible_points(tmp_path):
    cfg = parse_config({"matrix": [[1.0, 0.0], [0.5, 0.5]], "profile": {"state_power": [1, 2]}, "sweep": {"row": 0, "column": 0, "values": [0.5, 1.0]}})
    bad, ok = cmd_sweep(cfg, out=tmp_path)
    assert bad.status.startswith("error") and bad.pi is None
    assert ok.status == "ok"
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "value,pi0,pi1,watts,status"
    assert lines[1].startswith("0.5,,,,error")


def test_compare_against_itself_is_all_zero():
    cfg = parse_config({**SMALL, "policies": [{"kind": "reactive", "name": "a"}, {"kind": "reactive", "name": "b"}]})
    rep = cmd_compare(cfg)
    for r in rep.results:
        assert r.energy_reduction == r.overload_reduction == r.late_service_reduction == 0.0


def test_compare_zero_demand_reactive_below_fixed():
    cfg = parse_config({**SMALL, "workload": {"kind": "zeros"}, "policies": ["reactive", "fixed-matrix"]})
    rep = cmd_compare(cfg)
    assert rep["reactive"].energy_total <= rep["fixed-matrix"].energy_total


def test_compare_requires_baseline():
    with pytest.raises(MissingBaselineError):
        cmd_compare(parse_config({**SMALL, "policies": ["predictive", "fixed-matrix"]}))
    with pytest.raises(MissingBaselineError):
        cmd_compare(parse_config({**SMALL, "policies": ["reactive"]}))
    with pytest.raises(MissingBaselineError):
        cmd_compare(parse_config({**SMALL, "policies": ["reactive", "predictive"], "baseline": "nope"}))


def test_reduction_sign_is_antisymmetric():
    a, b = 120.0, 80.0
    assert np.sign(reduction(a, b)) == -np.sign(reduction(b, a))
    assert reduction(5.0, 5.0) == 0.0 and reduction(0.0, 0.0) == 0.0


def test_compare_with_q_learning_and_file_workload(tmp_path):
    trace = tmp_path / "trace.txt"
    trace.write_text("".join(f"{d}\n" for d in np.random.default_rng(0).poisson(0.5, 2000)))
    doc = {
        **SMALL,
        "workload": {"kind": "file", "path": "trace.txt"},
        "policies": ["reactive", {"kind": "q-learning", "training_ticks": 5000}],
    }
    cfg = load_config(write(tmp_path, doc))
    rep = cmd_compare(cfg, out=tmp_path / "out")
    assert rep["q-learning"].run.steps == 2000
    assert (tmp_path / "out" / "compare.csv").exists()


def test_fleet_single_node_matches_compare():
    node = {"nodes": [{"capacity": 2, "policy": "reactive"}], "strategies": ["greedy-efficiency"]}
    cfg = parse_config({**SMALL, "fleet": node, "policies": ["reactive", "fixed-matrix"]})
    fleet = cmd_fleet(cfg)["greedy-efficiency"]
    single = cmd_compare(cfg)["reactive"]
    assert fleet.node_runs[0].energy_joules == single.run.energy_joules
    assert fleet.node_runs[0].states.tobytes() == single.run.states.tobytes()


# --- CLI ---------------------------------------------------------------------------------------

CLI_DOCS = {
    "steady": {},
    "converge": {"simulation": {"seed": 3}, "converge": {"checkpoints": [100, 1000], "replicas": 4}},
    "compare": {**SMALL, "policies": ["reactive", "predictive", {"kind": "q-learning", "training_ticks": 4000}, "fixed-matrix"]},
    "sweep": {"sweep": {"row": 2, "column": 3, "values": [0.3, 0.35, 0.4]}},
    "fleet": {**SMALL, "workload": {"lambda": 1.5}, "fleet": {"demo": True}},
}


@pytest.mark.parametrize("command", list(CLI_DOCS))
def test_cli_outputs_are_byte_identical(tmp_path, command, capsys):
    cfg = write(tmp_path, CLI_DOCS[command])
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main([command, "--config", str(cfg), "--seed", "12", "--out", str(out)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
    assert any(name.endswith(".csv") for name in outs[0])
    assert any(name.endswith("_summary.txt") for name in outs[0])
    assert all(b.endswith(b"\n") for b in outs[0].values())


def test_cli_seed_changes_output(tmp_path):
    cfg = write(tmp_path, CLI_DOCS["converge"])
    for seed in ("1", "2"):
        assert main(["converge", "--config", str(cfg), "--seed", seed, "--out", str(tmp_path / seed)]) == 0
    assert (tmp_path / "1" / "converge_tvd.csv").read_bytes() != (tmp_path / "2" / "converge_tvd.csv").read_bytes()


def test_cli_reports_validation_error(tmp_path, capsys):
    cfg = write(tmp_path, {"matrix": [[0.5, 0.4], [0.5, 0.5]], "profile": {"state_power": [1, 2]}})
    assert main(["steady", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    err = capsys.readouterr().err
    assert "row 0" in err and "error" in err


def test_cli_missing_file_and_solver_error(tmp_path, capsys):
    assert main(["steady", "--config", str(tmp_path / "absent.yaml")]) != 0
    cfg = write(tmp_path, {"matrix": [[1, 0], [0, 1]], "profile": {"state_power": [1, 2]}})
    assert main(["steady", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    assert "reducible" in capsys.readouterr().err


def test_cli_rejects_bad_seed(tmp_path):
    cfg = write(tmp_path, {})
    with pytest.raises(SystemExit) as exc:
        main(["steady", "--config", str(cfg), "--seed", "-4"])
    assert exc.value.code != 0


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, {})
    proc = subprocess.run(
        [sys.executable, "-m", "edgepower.cli", "steady", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "7.146067" in proc.stdout
    steady = (tmp_path / "o" / "steady.csv").read_text()
    assert steady.splitlines()[1] == "0,Off,0.0561797752809,0,0"


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    for path in sorted(root.glob("*.yaml")):
        load_config(path)
