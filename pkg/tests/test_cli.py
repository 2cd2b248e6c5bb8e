import csv
import glob
import io
import json
import os
import subprocess
import sys

import pytest

from rotorwalk.cli import RunConfig, build_parser, config_from_namespace, main, read_config


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "# schema_version=1"
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def test_missing_order_is_usage_error(capsys, tmp_path):
    code, out, err = run(capsys, "escape-rate", "--d", "2", "--n", "10", "--out", str(tmp_path))
    assert code == 2
    msg = json.loads(err)
    assert msg["error"] == "usage" and msg["exit_code"] == 2 and "--order" in msg["message"]


def test_bad_order_reports_violation(capsys, tmp_path):
    code, _, err = run(capsys, "escape-rate", "--d", "2", "--n", "10", "--order", "e2,e1,-e1,-e2",
                       "--out", str(tmp_path))
    assert code == 2 and "separation" in json.loads(err)["message"]
    code, _, err = run(capsys, "escape-rate", "--d", "2", "--n", "10", "--order", "e1,e1,e2,e2")
    assert code == 2


def test_budget_exhaustion_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "escape-rate", "--d", "2", "--n", "50", "--order", "ccw", "--budget", "3",
                       "--out", str(tmp_path))
    assert code == 3 and json.loads(err)["error"] == "budget"


def test_escape_rate_outputs_and_sidecar(capsys, tmp_path):
    code, out, _ = run(capsys, "escape-rate", "--d", "2", "--n", "300", "--order", "ccw", "--dual",
                       "--out", str(tmp_path))
    assert code == 0
    summary = json.loads(out)
    assert summary["reference"] == pytest.approx(1.5707963267948966) and summary["n"] == 300
    rows = read_csv(summary["csv"])
    assert int(rows[-1]["n"]) == 300
    side = json.load(open(summary["csv"][:-4] + ".json"))
    cfg = RunConfig(**side["config"])
    assert cfg.command == "escape-rate" and cfg.n == 300 and cfg.options == {"dual": True}
    assert RunConfig.from_json(cfg.to_json()) == cfg
    assert glob.glob(os.path.join(tmp_path, "*dual*.csv"))


def test_sidecar_reproduces_run(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    code, out, _ = run(capsys, "escape-rate", "--d", "3", "--n", "200", "--order", "ccw",
                       "--checkpoints", "10,50,200", "--out", str(a))
    assert code == 0
    first = json.loads(out)["csv"]
    cfg = RunConfig(**json.load(open(first[:-4] + ".json"))["config"])
    argv = [cfg.command, "--d", str(cfg.d), "--n", str(cfg.n), "--order", cfg.order, "--rule", cfg.rule,
            "--checkpoints", ",".join(map(str, cfg.checkpoints)), "--out", str(b)]
    assert config_from_namespace(build_parser().parse_args(argv)).checkpoints == cfg.checkpoints
    code, out, _ = run(capsys, *argv)
    assert open(json.loads(out)["csv"]).read() == open(first).read()


def test_cw_ccw_mirror_via_cli(capsys, tmp_path):
    series = {}
    for o in ("ccw", "cw"):
        code, out, _ = run(capsys, "escape-rate", "--d", "2", "--n", "1000", "--order", o,
                           "--out", str(tmp_path / o))
        assert code == 0
        series[o] = [(r["n"], r["I"]) for r in read_csv(json.loads(out)["csv"])]
    assert series["ccw"] == series["cw"]


def test_config_file(capsys, tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# escape run\nd = 2\norder = ccw   # preset\nn = 40\ncheckpoints = 10,40\n")
    assert read_config(str(conf))["order"] == "ccw"
    code, out, _ = run(capsys, "escape-rate", "--config", str(conf), "--out", str(tmp_path / "o"))
    assert code == 0 and json.loads(out)["n"] == 40
    # command-line flags override the file
    code, out, _ = run(capsys, "escape-rate", "--config", str(conf), "--n", "20", "--checkpoints", "20",
                       "--out", str(tmp_path / "p"))
    assert code == 0 and json.loads(out)["n"] == 20
    conf.write_text("bogus = 1\n")
    code, _, err = run(capsys, "escape-rate", "--config", str(conf))
    assert code == 2 and "bogus" in json.loads(err)["message"]
    conf.write_text("n = ten\n")
    assert run(capsys, "escape-rate", "--config", str(conf))[0] == 2


def test_aggregate_pgm_pixel_count(capsys, tmp_path):
    code, out, _ = run(capsys, "aggregate", "--d", "2", "--n", "10000", "--out", str(tmp_path))
    assert code == 0
    (pgm,) = glob.glob(os.path.join(tmp_path, "*.pgm"))
    tokens = open(pgm).read().split()
    assert tokens[0] == "P2"
    w, h = int(tokens[1]), int(tokens[2])
    pix = [int(t) for t in tokens[4:]]
    assert len(pix) == w * h and sum(1 for p in pix if p) == 10000
    assert len(read_csv(glob.glob(os.path.join(tmp_path, "*.csv"))[0])) == 10000


def test_ball_command(capsys, tmp_path):
    code, out, _ = run(capsys, "ball", "--d", "2", "--n", "200", "--r", "10", "--green", "--out", str(tmp_path))
    assert code == 0
    s = json.loads(out)
    assert s["flux_residual"] <= s["bound"] == 6 and s["u0"] > 0 and "nG" in s
    assert run(capsys, "ball", "--d", "2", "--n", "10")[0] == 2  # --r missing


def test_abelian_command(capsys, tmp_path):
    code, out, _ = run(capsys, "abelian", "--fuzz", "1000", "--max-vertices", "12")
    assert code == 0
    rep = json.loads(out)
    assert rep["ok"] and rep["fuzz"]["instances"] == 1000 and rep["fixture"]["distinct_outcomes"] == 1
    from rotorwalk.abelian import grid_graph

    fx = tmp_path / "g.txt"
    fx.write_text(grid_graph(particles=4).dumps())
    code, out, _ = run(capsys, "abelian", "--fixture", str(fx), "--out", str(tmp_path / "o"))
    assert code == 0 and sum(json.loads(out)["fixture"]["placement"]) == 4
    assert os.path.exists(tmp_path / "o" / "abelian.json")


def test_mc_alpha_rerun_is_byte_identical(capsys, tmp_path):
    argv = ["mc-alpha", "--d", "3", "--trials", "1000000", "--radius", "10000", "--seed", "7"]
    outs = []
    for k in range(2):
        code, out, _ = run(capsys, *argv, "--out", str(tmp_path / str(k)))
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1]
    files = [open(tmp_path / str(k) / "mc_alpha_d3_seed7.json", "rb").read() for k in range(2)]
    assert files[0] == files[1]
    rec = json.loads(outs[0])
    assert rec["R"]["seed"] == 7 and abs(rec["R"]["estimate"] - rec["2R"]["estimate"]) < 0.005


def test_calibrate_quick(capsys, tmp_path):
    path = tmp_path / "cal.txt"
    code, out, _ = run(capsys, "calibrate", "--quick", "--path", str(path))
    assert code == 0 and path.read_text().startswith("# rotorwalk calibration v1")
    assert json.loads(out)["a_3"] > 0.4


def test_grid_command(capsys, tmp_path):
    code, out, _ = run(capsys, "grid", "--n", "100", "--dims", "2,3", "--orders", "ccw,cw",
                       "--out", str(tmp_path), "--workers", "2")
    assert code == 0
    rows = [json.loads(ln) for ln in out.splitlines()]
    assert len(rows) == 4 and {(r["d"], r["order"]) for r in rows} == {(2, "ccw"), (2, "cw"), (3, "ccw"),
                                                                        (3, "cw")}
    assert len(glob.glob(os.path.join(tmp_path, "*.csv"))) == 4


def test_out_env_default(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("ROTORWALK_OUT", str(tmp_path))
    code, _, _ = run(capsys, "aggregate", "--d", "2", "--n", "50")
    assert code == 0 and glob.glob(os.path.join(tmp_path, "aggregate", "*.pgm"))


def test_d_below_two_rejected(capsys):
    assert run(capsys, "aggregate", "--d", "1", "--n", "5")[0] == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rotorwalk.cli", "aggregate", "--d", "3", "--n", "30",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["n"] == 30
