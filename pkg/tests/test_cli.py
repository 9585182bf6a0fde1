"""Command line entry points and exit codes."""

from __future__ import annotations

import json

import pytest

from simnet.cli import main

SCENARIO = """
population = 8
epochs = 14
seed = 3

[behavior_mix]
HONEST = 1.0

[sources]
price = "42"

[[requests]]
post_epoch = 4
paths = [{ source_key = "price" }]
aggregation = "first"
replication = 3
witness_fee_wit = 6
"""


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "scenario.toml"
    path.write_text(SCENARIO, encoding="utf-8")
    return path


def test_supply_prints_nanowit(capsys):
    assert main(["supply", "--height", "1750000"]) == 0
    out = capsys.readouterr().out.strip()
    assert out == str(875_000_000 * 10**9)


def test_verify_table_flags_misprints(capsys):
    assert main(["verify-table"]) == 0
    out = capsys.readouterr().out
    assert "9605.96" in out and "488.90" in out
    assert "misprint" in out
    assert "worst deviation" in out


def test_verify_table_other_decay(capsys):
    assert main(["verify-table", "--decay", "0.95"]) == 0
    out = capsys.readouterr().out
    assert "no published reference" in out


def test_run_writes_outputs(tmp_path, scenario_file, capsys):
    out_dir = tmp_path / "out"
    assert main(["run", "--scenario", str(scenario_file),
                 "--out", str(out_dir)]) == 0
    assert (out_dir / "metrics.csv").exists()
    assert (out_dir / "snapshot.json").exists()
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["accuracy"] == 1.0


def test_run_flag_overrides(tmp_path, scenario_file):
    out_dir = tmp_path / "out"
    assert main(["run", "--scenario", str(scenario_file),
                 "--out", str(out_dir), "--epochs", "6", "--seed", "9"]) == 0
    lines = (out_dir / "metrics.csv").read_text().strip().split("\n")
    assert len(lines) == 7  # header + 6 epochs


def test_missing_scenario_exit_2(tmp_path, capsys):
    assert main(["run", "--scenario", str(tmp_path / "absent.toml"),
                 "--out", str(tmp_path / "o")]) == 2


def test_invalid_scenario_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(SCENARIO.replace("HONEST = 1.0", "HONEST = 0.5"),
                   encoding="utf-8")
    assert main(["run", "--scenario", str(bad),
                 "--out", str(tmp_path / "o")]) == 2


def test_snapshot_and_resume_round_trip(tmp_path, scenario_file, capsys):
    snap = tmp_path / "mid.json"
    assert main(["snapshot", "--scenario", str(scenario_file),
                 "--out", str(snap), "--at", "7"]) == 0
    resumed_dir = tmp_path / "resumed"
    assert main(["resume", "--snapshot", str(snap),
                 "--out", str(resumed_dir)]) == 0
    direct_dir = tmp_path / "direct"
    assert main(["run", "--scenario", str(scenario_file),
                 "--out", str(direct_dir)]) == 0
    assert (resumed_dir / "metrics.csv").read_bytes() == \
        (direct_dir / "metrics.csv").read_bytes()


def test_corrupt_snapshot_exit_3(tmp_path, scenario_file, capsys):
    snap = tmp_path / "mid.json"
    assert main(["snapshot", "--scenario", str(scenario_file),
                 "--out", str(snap), "--at", "4"]) == 0
    snap.write_text(snap.read_text()[:-40], encoding="utf-8")
    assert main(["resume", "--snapshot", str(snap),
                 "--out", str(tmp_path / "o")]) == 3
