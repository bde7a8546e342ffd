import json
import math
import subprocess
import sys

import pytest

from qenvelop.cli import run_cli
from qenvelop.fileformats import file_hash, load_model, save_model
from qenvelop.protocols import bb84_model
from qenvelop.trials import load_log


def kv(text):
    out = {}
    for line in text.splitlines():
        if line.startswith("#") or "=" not in line:
            continue
        k, v = line.split("=", 1)
        out.setdefault(k, v)
    return out


@pytest.fixture
def b92_file(tmp_path, b92):
    path = tmp_path / "b92.json"
    save_model(b92, path)
    return path


def test_validate(b92_file, capsys):
    assert run_cli(["validate", "--model", str(b92_file)]) == 0
    assert kv(capsys.readouterr().out)["valid"] == "true"


def test_validate_invalid_model(tmp_path, capsys, b92_file):
    doc = json.loads(b92_file.read_text())
    doc["states"]["send0"] = [[1.0, 0.0], [1.0, 0.0]]
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    assert run_cli(["validate", "--model", str(tmp_path / "bad.json")]) == 1
    out = capsys.readouterr().out
    assert kv(out)["valid"] == "false" and "state norm" in out


def test_table(b92_file, tmp_path):
    out = tmp_path / "t.csv"
    assert run_cli(["table", "--model", str(b92_file), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# tool: qenvelop")
    assert any(line.startswith("# inputs: ") and file_hash(b92_file) in line for line in lines)
    assert "b_A,b_B,b_E,outcome,probability" in lines


def test_check_identity(b92_file, capsys):
    assert run_cli(["check", "--model", str(b92_file)]) == 0
    res = kv(capsys.readouterr().out)
    assert res["holds"] == "true" and float(res["max_deviation"]) == 0.0


def test_envelop_then_check(b92_file, tmp_path, capsys):
    beta, fmap = tmp_path / "beta.json", tmp_path / "map.json"
    assert run_cli(["envelop", "--model", str(b92_file), "--r", "0.3", "--out", str(beta), "--map", str(fmap)]) == 0
    assert kv(capsys.readouterr().out)["beta_dim"] == "4"
    prov = json.loads(beta.read_text())["provenance"]
    assert prov["inputs"]["model"] == file_hash(b92_file) and prov["config"]["r"] == 0.3
    assert json.loads(fmap.read_text())["provenance"] == prov
    assert run_cli(["check", "--model", str(b92_file), "--beta", str(beta), "--map", str(fmap)]) == 0
    res = kv(capsys.readouterr().out)
    assert res["holds"] == "true" and float(res["max_deviation"]) <= 1e-10


def test_check_detects_failure(b92_file, tmp_path, capsys):
    other = tmp_path / "bb84.json"
    save_model(bb84_model(), other)
    beta, fmap = tmp_path / "beta.json", tmp_path / "map.json"
    run_cli(["envelop", "--model", str(b92_file), "--r", "0", "--out", str(beta), "--map", str(fmap)])
    capsys.readouterr()
    # wrong alpha for the map: the map's labels are not alpha's
    assert run_cli(["check", "--model", str(other), "--beta", str(beta), "--map", str(fmap)]) == 1


def test_envelop_out_of_range(b92_file, tmp_path, capsys):
    code = run_cli(["envelop", "--model", str(b92_file), "--r", "1.5", "--out", str(tmp_path / "b"), "--map", str(tmp_path / "m")])
    assert code == 1
    assert "0 <= r < 1" in capsys.readouterr().err
    assert not (tmp_path / "b").exists()


def test_qber_intercept(capsys, tmp_path):
    counts = tmp_path / "counts.csv"
    args = ["qber", "--protocol", "bb84", "--attack", "intercept", "--trials", "100000", "--seed", "7", "--counts", str(counts)]
    assert run_cli(args) == 0
    res = kv(capsys.readouterr().out)
    assert float(res["exact_qber"]) == pytest.approx(0.25, abs=1e-12)
    assert abs(float(res["estimated_qber"]) - 0.25) <= float(res["halfwidth_3sigma"])
    assert res["within_halfwidth"] == "true"
    rows = [line for line in counts.read_text().splitlines() if not line.startswith("#")]
    assert rows[0] == "b_A,b_B,b_E,outcome,count"
    assert sum(int(r.rsplit(",", 1)[1]) for r in rows[1:]) == 100_000


def test_qber_b92_and_leakage(capsys):
    assert run_cli(["qber", "--protocol", "b92", "--theta", str(math.pi / 8), "--trials", "2000", "--seed", "1"]) == 0
    assert float(kv(capsys.readouterr().out)["exact_qber"]) == 0.0
    assert run_cli(["qber", "--attack", "leakage", "--r", "0.5", "--trials", "2000", "--seed", "1"]) == 0
    assert kv(capsys.readouterr().out)["attack"] == "leakage_readout"


def test_qber_bad_theta(capsys):
    assert run_cli(["qber", "--protocol", "b92", "--theta", "2"]) == 1


def test_simulate_and_fit(b92_file, tmp_path, capsys):
    log = tmp_path / "run.tsv"
    assert run_cli(["simulate", "--model", str(b92_file), "--trials", "4000", "--seed", "3", "--out", str(log)]) == 0
    parsed = load_log(log)
    assert len(parsed) == 4000
    assert json.loads(parsed.extra["inputs"])["model"] == file_hash(b92_file)
    assert parsed.model_id == load_model(b92_file).model_id
    capsys.readouterr()
    assert run_cli(["fit", "--model", str(b92_file), "--log", str(log)]) == 0
    out = capsys.readouterr().out
    res = kv(out)
    assert float(res["max_tv"]) < float(res["bound"])
    assert "warning" not in out


def test_simulate_schedule_and_greedy(b92_file, tmp_path):
    sched = tmp_path / "s.tsv"
    sched.write_text("# comment\nsend0\tm0\tpass\nsend1\tm1\tpass\n")
    log = tmp_path / "run.tsv"
    assert run_cli(["simulate", "--model", str(b92_file), "--schedule", str(sched), "--trials", "5", "--seed", "0", "--out", str(log)]) == 0
    assert [c[0] for c in load_log(log).commands()] == ["send0", "send1", "send0", "send1", "send0"]
    assert run_cli(["simulate", "--model", str(b92_file), "--policy", "greedy", "--alice", "send1", "--trials", "5", "--seed", "0", "--out", str(log)]) == 0


def test_bad_schedule_line(b92_file, tmp_path, capsys):
    sched = tmp_path / "s.tsv"
    sched.write_text("send0\tm0\n")
    code = run_cli(["simulate", "--model", str(b92_file), "--schedule", str(sched), "--trials", "5", "--seed", "0", "--out", str(tmp_path / "x")])
    assert code == 2 and "line 1" in capsys.readouterr().err


def test_discriminate(b92_file, capsys):
    assert run_cli(["discriminate", "--model", str(b92_file), "--pair", "send0,send1"]) == 0
    res = kv(capsys.readouterr().out)
    assert float(res["error_probability"]) == pytest.approx((1 - math.sqrt(0.5)) / 2, abs=1e-12)
    assert "povm[send0]" in res
    assert run_cli(["discriminate", "--model", str(b92_file), "--pgm"]) == 0
    assert float(kv(capsys.readouterr().out)["error_probability"]) == pytest.approx(0.1464466, abs=1e-6)


def test_discriminate_unknown_label(b92_file, capsys):
    assert run_cli(["discriminate", "--model", str(b92_file), "--pair", "send0,zz"]) == 1
    assert "'zz'" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert run_cli(["frobnicate"]) == 2
    assert run_cli(["check"]) == 2
    assert run_cli([]) == 2
    assert "usage" in capsys.readouterr().err


def test_io_and_parse_errors(tmp_path, capsys):
    assert run_cli(["validate", "--model", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert run_cli(["validate", "--model", str(tmp_path / "bad.json")]) == 2
    (tmp_path / "log.tsv").write_text("#qenvelop-runlog\tversion=1\tmodel_id=x\tseed=0\trng=philox4x64\n0\ta")
    (tmp_path / "m.json").write_text(json.dumps({"format": "qenvelop-model"}))
    assert run_cli(["fit", "--model", str(tmp_path / "m.json"), "--log", str(tmp_path / "log.tsv")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qenvelop", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "qenvelop" in proc.stdout
