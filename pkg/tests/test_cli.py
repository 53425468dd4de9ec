import json
import subprocess
import sys

import numpy as np
import pytest

from o2proxy import suites
from o2proxy.cli import main
from o2proxy.verify import record


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_mpe_then_offloaded_then_verify(tmp_path, capsys):
    a, b = tmp_path / "mpe", tmp_path / "cpe"
    code, out, _ = run_cli(capsys, "run", "--suite", "cam-phys", "--mode", "mpe", "--out", str(a))
    assert code == 0 and json.loads(out)["status"] == "pass"
    code, out, _ = run_cli(capsys, "run", "--suite", "cam-phys", "--mode", "mpe+cpe",
                           "--n-cpes", "8", "--out", str(b))
    assert code == 0 and json.loads(out)["suites"]["cam-phys"] == ["match"]
    code, out, _ = run_cli(capsys, "verify", str(a), str(b), "--mode", "bit")
    assert code == 0 and json.loads(out)["status"] == "match"


def test_verify_detects_mismatch(tmp_path, capsys):
    x = record("x", np.arange(3.0), tmp_path / "a")
    y = record("x", np.arange(3.0) * 2, tmp_path / "b")
    code, out, _ = run_cli(capsys, "verify", str(x.path), str(y.path))
    assert code == 1
    assert json.loads(out)["comparisons"][0]["first_mismatch"]["index"] == 1


def test_init_bench_counts(capsys):
    code, out, _ = run_cli(capsys, "init-bench", "--n", "64", "--group-size", "8")
    res = json.loads(out)
    assert code == 0
    assert res["hierarchical"]["messages"] == 168
    assert res["flat"]["messages"] == 4032


def test_init_bench_csv_and_config(tmp_path, capsys):
    cfg = tmp_path / "sc.json"
    cfg.write_text(json.dumps({"n": 12, "group_size": 3, "sizes": "random"}))
    code, out, _ = run_cli(capsys, "init-bench", "--config", str(cfg), "--fanout", "2", "--format", "csv")
    assert code == 0 and out.splitlines()[0].startswith("scheme,messages")


def test_report_is_deterministic_apart_from_timing(tmp_path, capsys):
    reports = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        code, _, _ = run_cli(capsys, "run", "--suite", "all", "--n-cpes", "4", "--n-core-groups", "2",
                             "--seed", "12345678901234", "--evp-subcycles", "3", "--out", str(out))
        assert code == 0
        rep = json.loads((out / "report.json").read_text())
        assert set(rep) == {"schema", "config", "status", "results", "timing"}
        rep.pop("timing")
        rep["config"].pop("out")
        reports.append(json.dumps(rep, sort_keys=True))
    assert reports[0] == reports[1]


def test_core_groups_get_distinct_inputs(tmp_path, capsys):
    run_cli(capsys, "run", "--suite", "pop-hmix", "--n-core-groups", "2", "--out", str(tmp_path))
    rep = json.loads((tmp_path / "report.json").read_text())
    digests = [e["sha256"] for e in rep["results"]["pop-hmix"]["core_groups"]]
    assert digests[0] != digests[1]


def test_profile_has_all_categories_and_report_cmd(tmp_path, capsys):
    run_cli(capsys, "run", "--suite", "cam-dyn", "--n-cpes", "4", "--out", str(tmp_path))
    prof = json.loads((tmp_path / "profile.json").read_text())
    assert set(prof["categories"]) == {"MPE_COMPUTE", "CPE_COMPUTE", "COMM", "IO", "IDLE"}
    code, out, _ = run_cli(capsys, "report", str(tmp_path), "--simulated-days", "1")
    rep = json.loads(out)
    assert code == 0 and rep["throughput"]["sdpd"] > 0
    assert sum(v["percent"] for v in rep["categories"].values()) == pytest.approx(100.0, abs=0.01)
    code, out, _ = run_cli(capsys, "report", str(tmp_path / "profile.json"), "--format", "csv")
    assert code == 0 and "category,MPE_COMPUTE" in out


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"suite": "pop-vmix", "mode": "mpe", "preset": "ts010", "n_cpes": 2}))
    code, _, _ = run_cli(capsys, "run", "--config", str(cfg), "--mode", "mpe+cpe", "--out", str(tmp_path / "o"))
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert code == 0
    assert rep["config"]["mode"] == "mpe+cpe" and rep["config"]["ocn_preset"] == "ts010"
    assert rep["results"]["pop-vmix"]["core_groups"][0]["dims"] == [2, 60, 56, 10]


def test_errors_are_json(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", "--n-cpes", "65", "--out", str(tmp_path))
    assert code == 3 and json.loads(err)["error"] == "ConfigError"
    code, _, err = run_cli(capsys, "verify", str(tmp_path / "nope.bin"), str(tmp_path / "nope2.bin"))
    assert code == 3 and json.loads(err)["error"] == "FileNotFoundError"
    code, _, err = run_cli(capsys, "run", "--preset", "ne999", "--out", str(tmp_path))
    assert code == 3


def test_unknown_suite_is_usage_error():
    with pytest.raises(SystemExit) as ei:
        main(["run", "--suite", "land"])
    assert ei.value.code == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "o2proxy.cli", "init-bench", "--n", "4", "--group-size", "2"],
                          capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["hierarchical"]["messages"] == 6


def test_run_config_validation():
    with pytest.raises(suites.ConfigError):
        suites.RunConfig(seed=-1)
    with pytest.raises(suites.ConfigError):
        suites.RunConfig.from_dict({"bogus": 1})
    assert suites.RunConfig().with_preset("ne240").atm_preset == "ne240"
