import json
import logging
import subprocess
import sys

import pytest

from ccmnet.cli import EXIT_CONFIG, EXIT_DECAY, EXIT_FINGERPRINT, EXIT_OK, EXIT_SYNTH, EXIT_VERIFY, main
from ccmnet.config import load_config, shipped_config_path, shipped_configs


def shipped(name):
    return json.loads(shipped_config_path(name).read_text())


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=1))
    return str(path)


def cubic(N, structure, **syn):
    cfg = shipped("cubic_decentralized")
    cfg["name"] = f"cubic_{structure}_{N}"
    cfg["model"] = {"builtin": "cubic", "N": N, "structure": structure}
    cfg["synthesis"].update(syn)
    return cfg


@pytest.fixture(scope="module")
def scalar_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("scalar")
    cfg = str(shipped_config_path("scalar"))
    assert main(["synth", "--config", cfg, "--out-dir", str(out)]) == EXIT_OK
    return cfg, out


# ------------------------------------------------------------------ configs


def test_shipped_configs_validate():
    names = shipped_configs()
    assert {"scalar", "cubic_complete", "cubic_neighbor", "cubic_decentralized", "cubic_infeasible",
            "platoon_h0", "platoon_h1"} <= set(names)
    for name in names:
        load_config(shipped_config_path(name))


def test_malformed_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n "name": "x",\n "model": {,\n}')
    assert main(["synth", "--config", str(path), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert "bad.json:3:" in capsys.readouterr().err


def test_schema_error_names_field(tmp_path, capsys):
    cfg = shipped("scalar")
    cfg["synthesis"]["lambda"] = -1
    cfg["synthesis"]["grid_densty"] = 3
    assert main(["synth", "--config", write_config(tmp_path, cfg)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "synthesis.lambda" in err and "grid_densty" in err


def test_semantic_errors_name_field(tmp_path, capsys):
    cfg = shipped("scalar")
    cfg["model"]["nodes"][0]["f"] = ["x[1][1] +"]
    assert main(["decompose", "--config", write_config(tmp_path, cfg)]) == EXIT_CONFIG
    assert "model.nodes.0" in capsys.readouterr().err
    cfg = shipped("scalar")
    cfg["synthesis"]["region"]["intervals"] = {"x[2][1]": [0, 1]}
    assert main(["decompose", "--config", write_config(tmp_path, cfg)]) == EXIT_CONFIG
    assert "synthesis.region.intervals" in capsys.readouterr().err
    cfg = shipped("scalar")
    cfg["synthesis"]["anchor"] = {"type": "hinf"}
    assert main(["decompose", "--config", write_config(tmp_path, cfg)]) == EXIT_CONFIG
    assert "synthesis.anchor" in capsys.readouterr().err


def test_usage_errors():
    assert main([]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["synth"]) == EXIT_CONFIG


def test_missing_config(tmp_path, capsys):
    assert main(["synth", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    assert "cannot read" in capsys.readouterr().err


def test_high_degree_warning(tmp_path, caplog):
    cfg = shipped("scalar")
    cfg["model"]["nodes"][0]["f"] = ["x[1][1]^7"]
    with caplog.at_level(logging.WARNING):
        load_config(write_config(tmp_path, cfg))
    assert "exceeds 6" in caplog.text


# -------------------------------------------------------------------- synth


def test_synth_scalar_writes_outputs(scalar_run):
    cfg, out = scalar_run
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["report"]["pass"] and cert["lambda"] == 0.5
    timing = json.loads((out / "timing.json").read_text())
    assert timing["status"] == "verified" and timing["seconds"] > 0 and timing["N"] == 1
    assert not list(out.glob(".*.tmp"))


def test_synth_infeasible_exit_2(tmp_path):
    out = tmp_path / "inf"
    code = main(["synth", "--config", str(shipped_config_path("cubic_infeasible")), "--out-dir", str(out)])
    assert code == EXIT_SYNTH
    timing = json.loads((out / "timing.json").read_text())
    assert timing["status"] in ("infeasible", "inconclusive") and "seconds" in timing
    assert not (out / "certificate.json").exists()


def test_synth_budget_exit_2(tmp_path):
    cfg = write_config(tmp_path, cubic(8, "complete"))
    assert main(["synth", "--config", cfg, "--out-dir", str(tmp_path / "b")]) == EXIT_SYNTH
    assert json.loads((tmp_path / "b" / "timing.json").read_text())["status"] == "budget"


def test_synth_is_byte_identical(tmp_path):
    cfg = str(shipped_config_path("cubic_decentralized"))
    for k in (1, 2):
        assert main(["synth", "--config", cfg, "--out-dir", str(tmp_path / f"r{k}"), "--seed", "3"]) == EXIT_OK
    a = (tmp_path / "r1" / "certificate.json").read_bytes()
    assert a == (tmp_path / "r2" / "certificate.json").read_bytes()
    assert json.loads(a)["meta"]["seed"] == 3


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CCMNET_THREADS", "2")
    cfg = str(shipped_config_path("cubic_decentralized"))
    assert main(["synth", "--config", cfg, "--out-dir", str(tmp_path / "t2")]) == EXIT_OK
    monkeypatch.setenv("CCMNET_THREADS", "many")
    assert main(["synth", "--config", cfg, "--out-dir", str(tmp_path / "t3")]) == EXIT_CONFIG


# ------------------------------------------------------------------- verify


def test_verify_pass(scalar_run, capsys):
    cfg, out = scalar_run
    assert main(["verify", "--config", cfg, "--out-dir", str(out)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["pass"]


def test_verify_tampered_certificate_exit_3(scalar_run, tmp_path):
    cfg, out = scalar_run
    data = json.loads((out / "certificate.json").read_text())
    data["lambda"] = 100 * data["lambda"]
    bad = tmp_path / "bad_cert.json"
    bad.write_text(json.dumps(data))
    assert main(["verify", "--config", cfg, "--cert", str(bad)]) == EXIT_VERIFY


def test_fingerprint_mismatch_exit_5(scalar_run, tmp_path):
    _, out = scalar_run
    other = str(shipped_config_path("cubic_decentralized"))
    cert = str(out / "certificate.json")
    assert main(["verify", "--config", other, "--cert", cert]) == EXIT_FINGERPRINT
    assert main(["simulate", "--config", other, "--cert", cert, "--out-dir", str(tmp_path)]) == EXIT_FINGERPRINT


def test_malformed_certificate(scalar_run, tmp_path):
    cfg, _ = scalar_run
    bad = tmp_path / "c.json"
    bad.write_text('{"format": "other"}')
    assert main(["verify", "--config", cfg, "--cert", str(bad)]) == EXIT_CONFIG


# ---------------------------------------------------------------- decompose


def test_decompose_string(tmp_path, capsys):
    assert main(["decompose", "--config", write_config(tmp_path, cubic(8, "neighbor"))]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert "cliques: 7" in out
    assert "sizes: 2 2 2 2 2 2 2" in out
    assert "fill edges: 0" in out
    assert sum(line.startswith("clique ") for line in out) == 7


def test_decompose_complete(tmp_path, capsys):
    assert main(["decompose", "--config", write_config(tmp_path, cubic(4, "complete"))]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert "cliques: 1" in out and "sizes: 4" in out


def test_decompose_four_cycle(tmp_path, capsys):
    cfg = shipped("scalar")
    cfg["model"] = {
        "nodes": [{"f": [f], "b": [["1"]]} for f in
                  ("-x[1][1] + x[2][1]", "-x[2][1] + x[3][1]", "-x[3][1] + x[4][1]", "-x[4][1] + x[1][1]")],
        "g_p": [[2, 1], [3, 2], [4, 3], [1, 4]],
        "g_c": "empty(4)",
    }
    assert main(["decompose", "--config", write_config(tmp_path, cfg)]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    fill = [line for line in out if line.startswith("fill edges")]
    assert fill[0].startswith("fill edges: 1 ")
    assert "cliques: 2" in out


# ----------------------------------------------------------------- simulate


def test_simulate_pass_and_open_loop_fail(scalar_run):
    cfg, out = scalar_run
    assert main(["simulate", "--config", cfg, "--out-dir", str(out)]) == EXIT_OK
    summary = json.loads((out / "decay.json").read_text())
    assert summary["pass"] and len(summary["runs"]) == 10
    assert all(r["rate_fit"] >= 0.9 * 0.5 for r in summary["runs"])
    side = json.loads((out / "trace_000.json").read_text())
    assert side["certificate_fingerprint"] and side["dt"] == 0.01 and side["seed"] == 0
    header = (out / "trace_000.csv").read_text().splitlines()[0]
    assert header == "t,x_1,u_1,xstar_1,err_norm"
    assert main(["simulate", "--config", cfg, "--out-dir", str(out), "--open-loop"]) == EXIT_DECAY
    assert not json.loads((out / "decay_open_loop.json").read_text())["pass"]


def test_simulate_missing_certificate(tmp_path):
    cfg = str(shipped_config_path("scalar"))
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "none")]) == EXIT_CONFIG


def test_simulate_from_target_is_trivial_pass(scalar_run, tmp_path):
    _, out = scalar_run
    cfg = shipped("scalar")
    cfg["scenario"]["x0"] = {"policy": "target"}
    path = write_config(tmp_path, cfg)
    assert main(["simulate", "--config", path, "--cert", str(out / "certificate.json"),
                 "--out-dir", str(tmp_path / "s")]) == EXIT_OK
    run = json.loads((tmp_path / "s" / "decay.json").read_text())["runs"][0]
    assert run["C_fit"] == 0.0


def test_simulate_is_byte_identical(scalar_run, tmp_path):
    cfg, out = scalar_run
    cert = str(out / "certificate.json")
    for k in (1, 2):
        assert main(["simulate", "--config", cfg, "--cert", cert, "--out-dir", str(tmp_path / f"s{k}"),
                     "--seed", "7"]) == EXIT_OK
    for name in ("trace_003.csv", "trace_003.json", "decay.json"):
        assert (tmp_path / "s1" / name).read_bytes() == (tmp_path / "s2" / name).read_bytes()


def test_divergence_exit_4(scalar_run, tmp_path):
    _, out = scalar_run
    cfg = shipped("scalar")
    cfg["model"]["nodes"][0]["f"] = ["x[1][1]^2"]
    cfg["scenario"]["x0"] = {"policy": "explicit", "values": [[3.0]]}
    path = write_config(tmp_path, cfg)
    assert main(["simulate", "--config", path, "--open-loop", "--out-dir", str(tmp_path / "d")]) == EXIT_DECAY
    run = json.loads((tmp_path / "d" / "decay_open_loop.json").read_text())["runs"][0]
    assert run["diverged"]
    assert (tmp_path / "d" / "trace_000.csv").exists()


# ------------------------------------------------------------------- report


def fake_record(root, name, N, structure, seconds, status="verified"):
    d = root / name
    d.mkdir(parents=True)
    rec = {"name": name, "N": N, "structure": structure, "seconds": seconds, "status": status}
    (d / "timing.json").write_text(json.dumps(rec))


def test_report_nine_rows_sorted(tmp_path, capsys):
    root = tmp_path / "runs"
    k = 0
    for structure in ("neighbor", "complete", "decentralized"):
        for N in (8, 2, 4):
            fake_record(root, f"r{k}", N, structure, 0.1 * N)
            k += 1
    fake_record(root, "again", 4, "neighbor", 1.2)
    assert main(["report", str(root)]) == EXIT_OK
    lines = (root / "summary.txt").read_text().splitlines()
    assert len(lines) == 10
    keys = [tuple(line.split()[:2]) for line in lines[1:]]
    assert keys == [(str(N), s) for N in (2, 4, 8) for s in ("complete", "decentralized", "neighbor")]
    csv_rows = (root / "summary.csv").read_text().splitlines()
    assert csv_rows[0].startswith("N,structure,runs")
    row = next(r for r in csv_rows if r.startswith("4,neighbor"))
    assert row.split(",")[2] == "2"


def test_report_skips_dirs_without_timing(tmp_path, caplog):
    root = tmp_path / "runs"
    fake_record(root, "ok", 4, "neighbor", 1.0)
    (root / "orphan").mkdir()
    (root / "orphan" / "certificate.json").write_text("{}")
    with caplog.at_level(logging.WARNING):
        assert main(["report", str(root)]) == EXIT_OK
    assert "orphan" in caplog.text and "skipped" in caplog.text


def test_report_merges_decay(scalar_run, tmp_path, capsys):
    _, out = scalar_run
    assert main(["report", str(out.parent), "--out-dir", str(tmp_path)]) == EXIT_OK
    text = (tmp_path / "summary.txt").read_text()
    assert "scalar" in text


def test_report_empty_dir(tmp_path):
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert main(["report", str(tmp_path / "missing")]) == EXIT_CONFIG


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "ccmnet.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for code in "012345":
        assert f"\n{code}  " in res.stdout
