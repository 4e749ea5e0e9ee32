import json
import os
import subprocess
import sys

import pytest

from mmaf.cli_io import build_parser, main, parse_config, read_report, write_report
from mmaf.mc_engine import Report
from mmaf.rng_paths import ConfigurationError


def parse(argv, env=None):
    args = build_parser().parse_args(argv)
    return parse_config(args.command, args, env={} if env is None else env)


def test_simulate_defaults_filled():
    cfg, src = parse(["simulate", "--T", "1", "--M", "1000", "--seed", "42"])
    assert (cfg.T, cfg.M, cfg.master_seed) == (1.0, 1000, 42)
    assert cfg.padding == 12 and cfg.reps >= 2
    assert src["master_seed"] == "flag" and src["pad"] == "default"


def test_t_exceeds_T():
    with pytest.raises(ConfigurationError, match="t exceeds T"):
        parse(["clt", "--t", "2", "--T", "1"])


def test_flag_beats_config_file_and_env_beats_flag(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"reps": 50, "n": 32, "p_list": [2, 3]}))
    cfg, src = parse(["clt", "--config", str(path), "--reps", "70"])
    assert cfg.reps == 70 and cfg.n == 32 and cfg.p_list == (2, 3)
    assert src["reps"] == "flag" and src["n"].startswith("config file")
    cfg, src = parse(["clt", "--seed", "5"], env={"MMAF_SEED": "99"})
    assert cfg.master_seed == 99 and src["master_seed"] == "env MMAF_SEED"


def test_unknown_config_key_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"repz": 3}))
    with pytest.raises(ConfigurationError, match="repz"):
        parse(["clt", "--config", str(path)])


def test_cli_error_exit_names_key(tmp_path, capsys):
    assert main(["clt", "--reps", "1", "--out", str(tmp_path)]) == 2
    assert "reps" in capsys.readouterr().err
    assert main(["moments", "--offset", "1.5", "--out", str(tmp_path)]) == 2
    assert "offset" in capsys.readouterr().err


def test_write_report_csv_and_json(tmp_path):
    rep = Report("x", ("rep", "Y"), [(0, 0.1), (1, 1 / 3), (2, float("nan"))], {"a": 1.5})
    p1 = write_report(rep, "csv", tmp_path / "a.csv")
    p2 = write_report(rep, "csv", tmp_path / "b.csv")
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == "rep,Y" and lines[1] == "0,0.10000000000000001"
    assert lines[2] == "1,0.33333333333333331" and lines[3] == "2,nan"
    empty = write_report(Report("x", ("rep", "Y")), "csv", tmp_path / "e.csv")
    assert empty.read_text() == "rep,Y\n"
    pj = write_report(rep, "json", tmp_path / "r.json")
    back = read_report(pj)
    assert back.columns == rep.columns and back.summary == rep.summary
    assert back.rows[:2] == rep.rows[:2]
    write_report(back, "json", tmp_path / "r2.json")
    assert (tmp_path / "r2.json").read_bytes() == pj.read_bytes()


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "--M", "4", "--out", str(blocker / "sub")]) != 0


@pytest.mark.parametrize("argv", [
    ["simulate", "--M", "20", "--n", "4", "--reps", "3"],
    ["clt", "--M", "50", "--n", "48", "--reps", "60", "--kmax", "8", "--dump-occupation"],
    ["moments", "--M", "22", "--reps", "40"],
    ["smalltime", "--reps", "30", "--n", "40", "--kmax", "4", "--t-list", "0.05", "0.02"],
    ["mixing", "--M", "100", "--n", "40", "--reps", "30", "--gap-reps", "200",
     "--coupling-reps", "30", "--decay-lags", "5", "--parts", "gap", "coupling", "decay"],
])
def test_outputs_byte_identical_across_workers(tmp_path, argv):
    outs = []
    for w in ("1", "2"):
        out = tmp_path / f"w{w}"
        assert main(argv + ["--workers", w, "--out", str(out), "--seed", "7"]) == 0
        outs.append(out)
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["outputs"]
    for f in manifest["outputs"]:
        name = os.path.basename(f)
        a, b = (outs[0] / name).read_bytes(), (outs[1] / name).read_bytes()
        assert a and a == b, name


def test_manifest_and_json_format(tmp_path):
    assert main(["clt", "--M", "50", "--n", "48", "--reps", "60", "--kmax", "8",
                 "--format", "json", "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["master_seed"] == m["config"]["master_seed"]
    assert m["provenance"]["reps"] == "flag" and m["duration_s"] >= 0
    rep = read_report(tmp_path / "clt.json")
    assert rep.columns == ("rep", "Y") and len(rep.rows) == 60


def test_module_entry_point(tmp_path):
    env = dict(os.environ, MMAF_SEED="3")
    r = subprocess.run([sys.executable, "-m", "mmaf", "simulate", "--M", "5", "--n", "2",
                        "--out", str(tmp_path)], capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["master_seed"] == 3
    header = (tmp_path / "simulate.csv").read_text().splitlines()[0]
    assert header == "rep,k,i,t,x,mass"
