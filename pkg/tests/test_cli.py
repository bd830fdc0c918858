from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest

from ymh import cli
from ymh import lattice as lat


def _run(tmp_path, *argv):
    return cli.main(list(argv))


def _report(path):
    with open(os.path.join(path, "report.json")) as fh:
        return json.load(fh)


def test_verify_flat_unit_el_passes(tmp_path):
    out = tmp_path / "o"
    assert _run(tmp_path, "verify", "--entry", "flat_unit", "--check", "el", "--out", str(out)) == 0
    rep = _report(out)
    (chk,) = rep["checks"]
    assert chk["name"] == "el" and chk["pass"] and chk["defect"] < 1e-8
    assert rep["config_hash"] == cli.ExperimentConfig.from_file(out / "report.json").hash()


def test_verify_trace_on_instanton(tmp_path):
    out = tmp_path / "o"
    assert _run(tmp_path, "verify", "--entry", "bpst_s4", "--check", "trace", "--out", str(out)) == 0
    (chk,) = _report(out)["checks"]
    assert chk["rhs"] == 0.0 and abs(chk["lhs"]) < 1e-3


def test_check_failure_exit_one(tmp_path):
    assert _run(tmp_path, "verify", "--entry", "perturbed", "--check", "el", "--out", str(tmp_path / "o")) == 1
    assert not _report(tmp_path / "o")["checks"][0]["pass"]


def test_config_errors_exit_two(tmp_path):
    out = str(tmp_path / "o")
    assert _run(tmp_path, "verify", "--entry", "nope", "--check", "el", "--out", out) == 2
    assert _run(tmp_path, "verify", "--check", "nothing", "--out", out) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[lattice]\nN = -3\n")
    assert _run(tmp_path, "catalog", "--config", str(bad), "--out", out) == 2
    bad.write_text("[lattice]\nflavour = 1\n")
    assert _run(tmp_path, "catalog", "--config", str(bad), "--out", out) == 2
    bad.write_text("[lattice\n")
    assert _run(tmp_path, "catalog", "--config", str(bad), "--out", out) == 2


def test_io_errors_exit_three(tmp_path):
    out = str(tmp_path / "o")
    assert _run(tmp_path, "flow", "--state", str(tmp_path / "gone.snap"), "--out", out) == 3
    assert _run(tmp_path, "bubble", "--sequence", str(tmp_path / "gone.json"), "--out", out) == 3
    assert _run(tmp_path, "catalog", "--config", str(tmp_path / "gone.toml"), "--out", out) == 3


def test_threads_variable_validated(tmp_path):
    code = "import sys; from ymh.cli import main; sys.exit(main(['catalog', '--out', sys.argv[1]]))"
    env = dict(os.environ, YMH_THREADS="many")
    p = subprocess.run([sys.executable, "-c", code, str(tmp_path / "o")], env=env, capture_output=True)
    assert p.returncode == 2
    env["YMH_THREADS"] = "1"
    p = subprocess.run([sys.executable, "-c", code, str(tmp_path / "o")], env=env, capture_output=True)
    assert p.returncode == 0


@pytest.mark.parametrize("argv", [
    ("verify", "--entry", "bpst_s4", "--check", "slice"),
    ("flow", "--N", "6", "--max-iter", "30"),
    ("lattice-check", "--N", "6", "--probes", "10"),
])
def test_deterministic_reports_byte_identical(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        cli.main(list(argv) + ["--deterministic", "--seed", "7", "--out", str(out)])
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_rerun_from_embedded_config(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    rc = cli.main(["verify", "--entry", "flat_zero", "--check", "trace", "--deterministic",
                   "--seed", "3", "--out", str(a)])
    rc2 = cli.main(["verify", "--check", "trace", "--config", str(a / "report.json"), "--out", str(b)])
    assert rc == rc2 == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_config_text_round_trip():
    cfg = cli.ExperimentConfig()
    cfg.set("lattice", "N", 24)
    cfg.set("run", "entry", "bpst_scaled:rho=0.5")
    cfg.set("flow", "step_rule", "fixed")
    cfg.set("bubble", "ladder", [0.05, 0.1])
    back = cli.ExperimentConfig.from_text(cfg.to_text())
    assert back.values == cfg.values and back.hash() == cfg.hash()
    with pytest.raises(cli.ConfigError):
        cfg.set("flow", "step_rule", "newton")
    with pytest.raises(cli.ConfigError):
        cfg.set("lattice", "colour", 1)


def test_catalog_listing_stable(tmp_path):
    for out in ("a", "b"):
        assert cli.main(["catalog", "--deterministic", "--out", str(tmp_path / out)]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    names = {e["name"] for e in _report(tmp_path / "a")["catalog"]["entries"]}
    assert {"flat_unit", "flat_zero", "bpst_s4", "bpst_scaled", "perturbed"} <= names


def test_flow_saves_snapshot_and_lattice_check_reads_it(tmp_path):
    out = tmp_path / "f"
    assert cli.main(["flow", "--N", "16", "--save", "--seed", "0", "--out", str(out)]) == 0
    assert (out / "energies.csv").exists()
    snap = out / "final.snap"
    assert lat.load_snapshot(snap).N == 16
    assert cli.main(["lattice-check", "--snapshot", str(snap), "--probes", "10", "--out", str(tmp_path / "c")]) == 0


def test_bubble_on_flat_manifest(tmp_path):
    man = tmp_path / "m.json"
    man.write_text(json.dumps({"generator": {"kind": "flat", "N": 16}}))
    out = tmp_path / "b"
    assert cli.main(["bubble", "--sequence", str(man), "--out", str(out)]) == 0
    rep = _report(out)
    assert rep["bubble"]["concentration"]["sigma"] == []
    assert (out / "necks.csv").exists()
