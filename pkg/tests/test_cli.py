from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from cle_lab.cli import EXIT_CONFIG, main, read_records

DISK_EVENT = {"type": "surrounds", "target": {"kind": "disk", "center": [0, 0], "radius": 0.1}}


def _write(tmp_path: Path, cfg: dict, name: str = "cfg.json") -> Path:
    tmp_path.mkdir(parents=True, exist_ok=True)
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _run(tmp_path: Path, cfg: dict, *extra: str) -> Path:
    out = tmp_path / "out"
    assert main(["run", str(_write(tmp_path, cfg)), "--out", str(out), *extra]) == 0
    files = sorted(out.glob("*.jsonl"))
    assert len(files) == 1
    return files[0]


def _estimate_cfg(**kw) -> dict:
    cfg = {"schema_version": 1, "kind": "estimate", "seed": 3,
           "model": {"n": 1.0, "cells_across": 16, "thermalization": 20},
           "events": [DISK_EVENT, {"type": "and", "items": []}], "budget": 60, "chains": 2}
    cfg.update(kw)
    return cfg


def test_estimate_run_records(tmp_path):
    path = _run(tmp_path, _estimate_cfg(snapshots=2))
    recs = read_records(path)
    assert recs[0]["record"] == "config"
    est = [r for r in recs if r.get("type") == "estimate"]
    assert len(est) == 2
    assert est[1]["estimate"]["mean"] == 1.0
    assert 0.0 <= est[0]["estimate"]["mean"] <= 1.0
    assert len([r for r in recs if r.get("type") == "sample"]) == 4
    assert (path.parent / f"{path.stem}.manifest.json").exists()


def test_rerun_is_byte_identical(tmp_path):
    a = _run(tmp_path / "a", _estimate_cfg())
    b = _run(tmp_path / "b", _estimate_cfg(), "--threads", "2")
    assert a.read_bytes() == b.read_bytes()


def test_seed_override_changes_output(tmp_path):
    a = _run(tmp_path / "a", _estimate_cfg())
    b = _run(tmp_path / "b", _estimate_cfg(), "--seed", "4")
    assert a.name != b.name


@pytest.mark.parametrize("cfg", [
    {"schema_version": 1, "kind": "estimate"},
    {"schema_version": 2, "kind": "estimate", "events": [], "budget": 1},
    {"schema_version": 1, "kind": "estimate", "events": [], "budget": 1, "bogus": 1},
    {"schema_version": 1, "kind": "estimate", "budget": 1,
     "events": [{"type": "surrounds", "target": {"kind": "disk", "center": [0.9, 0], "radius": 0.3}}]},
    {"schema_version": 1, "kind": "annulus_check", "events": [], "budget": 1, "params": {"mode": "thcr7"}},
])
def test_malformed_config_exits_2(tmp_path, cfg, capsys):
    p = _write(tmp_path, cfg)
    assert main(["validate", str(p)]) == EXIT_CONFIG
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_unparsable_and_missing_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("kind: [unclosed\n")
    assert main(["validate", str(bad)]) == EXIT_CONFIG
    assert main(["validate", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


def test_yaml_config_validates(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("schema_version: 1\nkind: estimate\nbudget: 5\nevents:\n  - {type: and, items: []}\n")
    assert main(["validate", str(p)]) == 0
    assert capsys.readouterr().out.startswith("ok estimate")


def test_oracle_calibration_record(tmp_path):
    cfg = {"schema_version": 1, "kind": "oracle_calibration", "seed": 1, "budget": 3000,
           "model": {"n": 2.0, "thermalization": 50},
           "params": {"cells": [[0, 0], [1, 0], [0, 1]], "trials": 2, "events_per_trial": 5}}
    rec = read_records(_run(tmp_path, cfg))[1]
    assert rec["type"] == "oracle_calibration"
    assert rec["trials"] == 10
    assert rec["coverage"] >= 0.8


def test_oversized_patch_rejected(tmp_path):
    cfg = {"schema_version": 1, "kind": "oracle_calibration", "budget": 10,
           "params": {"cells": [[q, r] for q in range(3) for r in range(3)]}}
    assert main(["validate", str(_write(tmp_path, cfg))]) == EXIT_CONFIG


def test_render_empty_svg_and_samples(tmp_path):
    path = _run(tmp_path, _estimate_cfg())
    assert main(["render", str(path), "--svg"]) == 0
    empty = path.with_suffix(".empty.svg")
    assert empty.exists() and empty.read_text().startswith("<svg")
    path2 = _run(tmp_path / "s", _estimate_cfg(snapshots=2))
    assert main(["render", str(path2), "--svg"]) == 0
    assert len(list(path2.parent.glob("*.svg"))) == 4


def test_render_needs_a_format(tmp_path):
    path = _run(tmp_path, _estimate_cfg())
    assert main(["render", str(path)]) == EXIT_CONFIG


def test_ratio_identity_csv(tmp_path):
    cfg = {"schema_version": 1, "kind": "corss", "seed": 2, "budget": 60,
           "model": {"n": 1.0, "cells_across": 24, "thermalization": 30},
           "params": {"A": {"kind": "disk", "center": [0, 0], "radius": 0.3},
                      "B": {"kind": "disk", "center": [0, 0], "radius": 1.0},
                      "eps0": 0.2, "eps0_B": 0.3, "min_sep": 1.0}}
    path = _run(tmp_path, cfg)
    assert main(["render", str(path), "--csv"]) == 0
    rows = list(csv.reader(path.with_suffix(".csv").open()))
    assert rows[0] == ["series", "abscissa", "mean", "stderr", "ci_lo", "ci_hi"]
    names = {r[0] for r in rows[1:]}
    assert any(n.endswith("report.left:limit") for n in names)
    assert any(n.endswith("report.right:limit") for n in names)


def test_orphan_records_rejected(tmp_path):
    path = _run(tmp_path, _estimate_cfg())
    with path.open("a") as f:
        f.write(json.dumps({"record": "result", "config_hash": "deadbeef", "index": 99}) + "\n")
    assert main(["render", str(path), "--csv"]) == EXIT_CONFIG


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "cle_lab", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()


def test_estimate_csv_rows(tmp_path):
    path = _run(tmp_path, _estimate_cfg())
    assert main(["render", str(path), "--csv"]) == 0
    rows = list(csv.reader(path.with_suffix(".csv").open()))
    assert len(rows) == 3 and rows[2][2] == "1.0"
