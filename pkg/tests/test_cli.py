import json
import subprocess
import sys

import pytest

from qplab import cli


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


FREE_SCAN = {"potential": {"free": True}, "coupling": 0.0, "scan": {"radii": [10.0, 14.0], "directions": 24}}


def test_scan_success_writes_outputs(tmp_path):
    cfg = _write(tmp_path, FREE_SCAN)
    out = tmp_path / "out"
    assert cli.main(["scan", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert len(manifest["config_hash"]) == 64
    for name in manifest["outputs"]:
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["fraction"] == 1.0
    assert (out / "ring_R10.csv").read_text().startswith("kx,ky,accepted,gap,dominance\n")


def test_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, {"scan": {"radii": [10.0], "directions": 36}})
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["scan", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
        outs.append(out)
    for name in ("ring_R10.csv", "summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    m0, m1 = (json.loads((o / "manifest.json").read_text()) for o in outs)
    assert m0["config_hash"] == m1["config_hash"]


def test_seed_override_changes_results(tmp_path):
    cfg = _write(tmp_path, {"scan": {"radii": [10.0], "directions": 36}})
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["scan", "--config", str(cfg), "--out", str(a), "--threads", "1"])
    cli.main(["scan", "--config", str(cfg), "--out", str(b), "--threads", "1", "--seed", "12"])
    assert json.loads((b / "manifest.json").read_text())["seed"] == 12
    assert (a / "ring_R10.csv").read_bytes() != (b / "ring_R10.csv").read_bytes()


@pytest.mark.parametrize(
    "sub,cfg",
    [
        ("scan", {"unknown_key": 1}),
        ("scan", {"coupling": "strong"}),
        ("scan", {"scan": {"radii": [1.0]}}),
        ("surface", {"surface": {"lambdas": [10.0]}}),
        ("transport", {"transport": {"T0": 10.0, "Tmax": 5.0}}),
        ("stationary", {"stationary": {"z_norms": [5.0]}}),
        ("project", {"project": {"N": 8}}),
        ("scan", {"M": 0}),
    ],
)
def test_config_errors_exit_2_and_write_nothing(tmp_path, sub, cfg):
    out = tmp_path / "out"
    assert cli.main([sub, "--config", str(_write(tmp_path, cfg)), "--out", str(out)]) == 2
    assert not out.exists()


def test_missing_config_file(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["scan", "--config", str(tmp_path / "nope.json"), "--out", str(out)]) == 2
    assert not out.exists()


def test_guard_exit_3_writes_manifest(tmp_path):
    cfg = _write(tmp_path, {"project": {"lambda_floors": [1e6]}})
    out = tmp_path / "out"
    assert cli.main(["project", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "guard"
    assert "EmptyRegion" in manifest["error"]
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]


def test_diophantine_and_stationary(tmp_path):
    out = tmp_path / "dio"
    assert cli.main(["diophantine", "--config", str(_write(tmp_path, {})), "--out", str(out)]) == 0
    rows = (out / "diophantine.csv").read_text().splitlines()
    assert rows[0] == "N,worst_n,margin" and len(rows) == 5
    cfg = _write(tmp_path, {"stationary": {"z_norms": [24.0], "t": [10.0, 20.0]}}, "st.json")
    out = tmp_path / "st"
    assert cli.main(["stationary", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["relerr"][1] < summary["relerr"][0]


def test_project_rows(tmp_path):
    cfg = _write(tmp_path, {"project": {"lambda_floors": [100.0, 140.0]}})
    out = tmp_path / "out"
    assert cli.main(["project", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    lines = (out / "projection.csv").read_text().splitlines()
    assert lines[0] == "lambda_floor,cells,parseval_relerr,idempotence,free_discrepancy,max_u_sup"
    assert len(lines) == 3


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "qplab.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "scan" in res.stdout


def test_schema_file_matches_docs():
    from pathlib import Path

    doc = Path(__file__).resolve().parents[1] / "docs" / "config.schema.json"
    assert json.loads(doc.read_text()) == cli.schema()
