import json
import subprocess
import sys

import pytest

from bdcutoff.cli import RunConfig, build_parser, config_from_args, main, parse_sizes
from bdcutoff.errors import ConfigError


@pytest.fixture
def files(tmp_path):
    two = tmp_path / "two.json"
    two.write_text(json.dumps({"n": 1, "p": [1.0, 0.0], "q": [0.0, 1.0]}))
    single = tmp_path / "single.json"
    single.write_text(json.dumps({"n": 0, "p": [0.0], "q": [0.0]}))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    biased = tmp_path / "biased.toml"
    biased.write_text('[family]\nname = "biased_rw"\n\n[params]\np = 0.7\n')
    srw = tmp_path / "srw.toml"
    srw.write_text('[family]\nname = "lazy_srw"\n')
    return {"two": str(two), "single": str(single), "bad": str(bad), "biased": str(biased),
            "srw": str(srw), "dir": tmp_path}


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_sizes():
    assert parse_sizes("3,5,9") == [3, 5, 9]
    assert parse_sizes("64:1024:2") == [64, 128, 256, 512, 1024]
    assert parse_sizes("10:20:1.3") == [10, 13, 17]
    for bad in ("", "a,b", "4:2:2", "1:10:1", "5,3"):
        with pytest.raises(ConfigError):
            parse_sizes(bad)


def test_run_config_round_trip():
    args = build_parser().parse_args(["sweep", "--family", "f.toml", "--sizes", "8,16",
                                      "--clock", "both", "--eps", "0.25,0.5"])
    cfg = config_from_args(args)
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.clocks == ["continuous", "discrete"]
    with pytest.raises(ConfigError):
        RunConfig(command="sweep", workers=0)


def test_analyze_two_state(files, capsys):
    code, out, _ = run(["analyze", "--chain", files["two"]], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["gap"] == 2.0
    assert doc["mixing"][0]["value"] == pytest.approx(0.34657359, rel=1e-6)


def test_analyze_single_state(files, capsys):
    code, out, _ = run(["analyze", "--chain", files["single"], "--grid", "0.1:1:2",
                        "--kind", "both"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["gap"] is None
    assert all(m["value"] == 0 for m in doc["mixing"])
    assert set(doc["profiles"][0]["tv"]) == {0.0} and set(doc["profiles"][0]["sep"]) == {0.0}


def test_analyze_csv(files, capsys):
    code, out, _ = run(["analyze", "--chain", files["two"], "--format", "csv"], capsys)
    assert code == 0 and out.startswith("key,value\n") and "gap,2.0" in out


@pytest.mark.parametrize("argv", [
    ["analyze", "--chain", "BAD"], ["analyze"], ["analyze", "--chain", "MISSING"],
    ["sweep", "--family", "BIASED", "--sizes", ""], ["sweep", "--family", "BIASED"],
    ["sweep", "--family", "BIASED", "--sizes", "8,16", "--quantiles", "2"],
    ["distance", "--chain", "TWO"], ["bogus"], ["analyze", "--chain", "TWO", "--eps", "1.5"],
])
def test_config_errors_exit_2(files, capsys, argv):
    sub = {"BAD": files["bad"], "BIASED": files["biased"], "TWO": files["two"],
           "MISSING": str(files["dir"] / "none.json")}
    code, _, err = run([sub.get(a, a) for a in argv], capsys)
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"]["exit_code"] == 2


def test_numeric_error_exit_3(files, capsys):
    # a periodic chain never reaches small discrete distances
    code, _, err = run(["analyze", "--chain", files["two"], "--clock", "discrete"], capsys)
    assert code == 3
    assert json.loads(err)["error"]["type"] == "NumericError"


def test_sweep_biased(files, capsys):
    code, out, _ = run(["sweep", "--family", files["biased"], "--sizes", "64:1024:2",
                        "--format", "csv"], capsys)
    assert code == 0
    verdicts = out.split("\n\n")[1]
    line = [x for x in verdicts.splitlines() if x.startswith("max-tv,continuous")][0]
    assert "cutoff-indicated" in line and "no-cutoff" not in line


def test_sweep_all_rows_failed(files, capsys):
    bad = files["dir"] / "xi.toml"
    bad.write_text('[family]\nname = "bottleneck_srw"\n[params]\nxi = 0.6\n')
    code, out, _ = run(["sweep", "--family", str(bad), "--sizes", "4,8"], capsys)
    assert code == 3
    assert all(r["error"] for r in json.loads(out)["rows"])


def test_sweep_writes_file(files, capsys):
    out_path = files["dir"] / "rep.json"
    code, out, _ = run(["sweep", "--family", files["srw"], "--sizes", "8,16,32",
                        "--out", str(out_path)], capsys)
    assert code == 0 and out == ""
    assert json.loads(out_path.read_text())["schema_version"] == 1


def test_sweep_deterministic_across_workers(files, capsys):
    argv = ["sweep", "--family", files["biased"], "--sizes", "16:256:2", "--eps", "0.25",
            "--format", "csv"]
    outs = {run(argv + ["--workers", w], capsys)[1] for w in ("1", "8", "1")}
    assert len(outs) == 1


def test_distance_csv(files, capsys):
    code, out, _ = run(["distance", "--chain", files["two"], "--grid", "0.1:1:2", "--kind",
                        "both", "--start", "left", "--format", "csv"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "start,clock,t,tv,sep,unimodal"
    assert len(lines) == 1 + 5
    assert lines[1].startswith("left,continuous,0.1,")


def test_random_command(files, capsys):
    code, out, _ = run(["random", "--family", files["srw"], "--sizes", "16,32,64",
                        "--seeds", "0:3", "--dist", "0,1"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert len(doc["rows"]) == 9 and doc["mu"] == "inf"


def test_random_rejects_random_family(files, capsys):
    f = files["dir"] / "r.toml"
    f.write_text('[family]\nname = "lazy_srw"\nseed = 1\ndist = {lo = 0.0, hi = 1.0}\n')
    code, _, _ = run(["random", "--family", str(f), "--sizes", "8"], capsys)
    assert code == 2


def test_verify_passes_and_replays(capsys):
    code, out, _ = run(["verify", "--seed", "0", "--count", "8", "--max-n", "20"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["ok"] and all(c["passed"] == c["instances"] for c in doc["checks"].values())
    again = run(["verify", "--seed", "0", "--count", "8", "--max-n", "20"], capsys)[1]
    assert again == out


def test_verify_json(capsys):
    code, out, _ = run(["verify", "--seed", "3", "--count", "4", "--format", "json"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["ok"] and not doc["failures"]


def test_broken_balance_surfaces(files, capsys):
    f = files["dir"] / "perturbed.json"
    f.write_text(json.dumps({"n": 1, "p": [0.5, 0.0], "q": [0.0, 0.5], "r": [0.5, 0.6]}))
    code, _, err = run(["analyze", "--chain", str(f)], capsys)
    assert code == 2 and "ChainError" in err


def test_console_entry_point(files):
    res = subprocess.run([sys.executable, "-m", "bdcutoff.cli", "analyze", "--chain",
                          files["two"]], capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert json.loads(res.stdout)["gap"] == 2.0
