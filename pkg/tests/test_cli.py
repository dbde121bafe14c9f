"""Command-line front end: exit codes, emitters, determinism."""

import json
import subprocess
import sys

import pytest

from flowbox.cli import run

from conftest import S_CONST, S_LIN, S_NONCOMM


@pytest.fixture()
def files(tmp_path):
    def dump(name, doc):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)

    return {
        "s_const": dump("s_const.json", S_CONST),
        "s_lin": dump("s_lin.json", S_LIN),
        "s_noncomm": dump("s_noncomm.json", S_NONCOMM),
        "u_opt": dump("u_opt.json", {
            "kind": "pwc", "breakpoints": [0.0, 0.5, 1.0],
            "left": [[0.0], [0.0], [-2.0]],
            "right": [[0.0], [-2.0], [-2.0]],
        }),
        "u_ramp": dump("u_ramp.json", {
            "kind": "pwl", "breakpoints": [0.0, 0.5, 1.0],
            "left": [[0.0], [1.0], [1.0]],
            "right": [[0.0], [1.0], [1.0]],
        }),
        "a_neg": dump("a_neg.json", {
            "kind": "pwc", "breakpoints": [0.0, 1.0], "values": [[-1.0]],
        }),
        "a_one": dump("a_one.json", {
            "kind": "pwc", "breakpoints": [0.0, 1.0], "values": [[1.0]],
        }),
        "dir": tmp_path,
    }


def test_validate_exit_codes(files):
    out = str(files["dir"] / "v.json")
    assert run(["validate", "--system", files["s_const"],
                "--out", out]) == 0
    assert json.loads(open(out).read())["pass"] is True
    assert run(["validate", "--system", files["s_noncomm"],
                "--out", out]) == 1
    doc = json.loads(open(out).read())
    assert doc["pass"] is False
    assert abs(doc["pairs"][0]["max_norm"] - 1.0) < 0.05


def test_flowbox_audit_through_the_cli(files):
    out = str(files["dir"] / "fb.json")
    assert run(["flowbox", "--system", files["s_lin"], "--out", out]) == 0
    assert json.loads(open(out).read())["max_residual"] <= 1e-6
    assert run(["flowbox", "--system", files["s_noncomm"],
                "--out", out]) == 1


def test_malformed_input_exits_2(files, capsys):
    bad = files["dir"] / "bad.json"
    bad.write_text("{broken")
    code = run(["validate", "--system", str(bad)])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_file_exits_2(files, capsys):
    code = run(["simulate", "--system", files["s_const"],
                "--control", str(files["dir"] / "nope.json"),
                "--ordinary", files["a_one"]])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_bad_flags_exit_2(files, capsys):
    assert run(["simulate", "--system", files["s_const"]]) == 2
    assert run(["no-such-command"]) == 2
    capsys.readouterr()


def test_simulate_rows_and_jump_sides(files):
    out = files["dir"] / "traj.csv"
    code = run(["simulate", "--system", files["s_const"],
                "--control", files["u_opt"], "--ordinary", files["a_one"],
                "--step", "0.01", "--out", str(out)])
    assert code == 0
    text = out.read_text()
    assert text.endswith("\n") and "\r" not in text
    lines = text.splitlines()
    assert lines[0] == "t,x1_left,x1_right,u1_left,u1_right,xi1,a1"
    at_half = [ln for ln in lines[1:] if ln.startswith("0.5,")]
    assert len(at_half) == 2  # one pure row per side of the jump
    left, right = (ln.split(",") for ln in at_half)
    assert left[1] == left[2] and left[3] == left[4]
    assert float(left[3]) == 0.0 and float(right[3]) == -2.0
    final = lines[-1].split(",")
    assert abs(float(final[2]) - (-1.0)) <= 1e-8


def test_json_and_csv_emit_identical_digits(files):
    csv_out = files["dir"] / "t.csv"
    json_out = files["dir"] / "t.json"
    common = ["simulate", "--system", files["s_lin"],
              "--control", files["u_ramp"], "--ordinary", files["a_one"],
              "--step", "0.05"]
    assert run(common + ["--out", str(csv_out)]) == 0
    assert run(common + ["--out", str(json_out), "--format", "json"]) == 0
    rows = csv_out.read_text().splitlines()
    raw = json_out.read_text().splitlines()
    body = [ln.strip().rstrip(",") for ln in raw[1:-1]]
    assert len(body) == len(rows) - 1
    header = rows[0].split(",")
    for row, obj in zip(rows[1:], body):
        for key, field in zip(header, row.split(",")):
            assert f'"{key}": {field}' in obj


def test_adjoint_emits_both_costates(files):
    out = files["dir"] / "adj.csv"
    code = run(["adjoint", "--system", files["s_const"],
                "--control", files["u_opt"], "--ordinary", files["a_neg"],
                "--step", "0.02", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ("t,pi1_1,pi2_1,p1_1_left,p1_1_right,"
                        "p2_1_left,p2_1_right")
    last = lines[-1].split(",")
    assert float(last[1]) == pytest.approx(1.0, abs=1e-12)
    assert float(last[3]) == pytest.approx(1.0, abs=1e-12)
    assert float(last[5]) == pytest.approx(0.0, abs=1e-12)


def test_certify_exit_codes_and_reruns_are_bytewise_equal(files):
    rep1 = files["dir"] / "rep1.json"
    rep2 = files["dir"] / "rep2.json"
    base = ["certify", "--system", files["s_const"],
            "--candidate-u", files["u_opt"],
            "--candidate-a", files["a_neg"], "--step", "0.02"]
    assert run(base + ["--out", str(rep1)]) == 0
    assert run(base + ["--out", str(rep2)]) == 0
    assert rep1.read_bytes() == rep2.read_bytes()
    doc = json.loads(rep1.read_text())
    assert doc["overall_pass"] is True
    assert [c["condition"] for c in doc["conditions"]][:2] == \
        ["H-MIN-U", "H-MIN-A"]

    assert run(["certify", "--system", files["s_const"],
                "--candidate-u", files["u_opt"],
                "--candidate-a", files["a_one"], "--step", "0.02",
                "--out", str(rep1)]) == 1
    assert json.loads(rep1.read_text())["overall_pass"] is False


def test_robustness_is_seeded_and_deterministic(files):
    one = files["dir"] / "r1.json"
    two = files["dir"] / "r2.json"
    base = ["robustness", "--system", files["s_lin"], "--samples", "5",
            "--seed", "7", "--step", "0.02"]
    assert run(base + ["--out", str(one)]) == 0
    assert run(base + ["--out", str(two)]) == 0
    assert one.read_bytes() == two.read_bytes()
    doc = json.loads(one.read_text())
    assert doc["pass"] is True
    assert len(doc["rows"]) == 5
    import math
    assert math.isfinite(doc["max_ratio"])


def test_approx_table_through_the_cli(files):
    out = files["dir"] / "ap.json"
    code = run(["approx", "--system", files["s_const"],
                "--control", files["u_opt"], "--ordinary", files["a_one"],
                "--ks", "10,20", "--step", "0.002", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["pass"] is True
    assert 0.4 <= doc["ratios"][0] <= 0.6


def test_thread_cap_env_is_tolerated(files, monkeypatch):
    monkeypatch.setenv("IMPULSE_THREADS", "2")
    assert run(["validate", "--system", files["s_const"]]) == 0
    monkeypatch.setenv("IMPULSE_THREADS", "not-a-number")
    assert run(["validate", "--system", files["s_const"]]) == 0


def test_console_script_entry_point(files):
    proc = subprocess.run(
        [sys.executable, "-m", "flowbox.cli", "validate",
         "--system", files["s_const"]],
        capture_output=True, text=True)
    assert proc.returncode == 0
