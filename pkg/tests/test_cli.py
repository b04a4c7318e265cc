import json
import subprocess
import sys

import pytest

from qftsum.cli import main


def records(text):
    return [json.loads(line) for line in text.splitlines() if line]


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_run_example(capsys):
    code, out, _ = run_cli(capsys, "run", "--d", "13", "--n", "4", "--len", "8", "--seed", "7", "--keys", "random")
    assert code == 0
    recs = records(out)
    trial, summary = recs
    assert trial["status"] == "Completed"
    assert len(trial["sum"]) == 8 and all(0 <= x < 13 for x in trial["sum"])
    assert trial["correct"] is True
    assert summary["incorrect"] == 0


def test_run_with_key_file(tmp_path, capsys):
    keys = tmp_path / "keys.txt"
    keys.write_text("3 1\n5 2\n9 9\n")
    code, out, _ = run_cli(capsys, "run", "--d", "10", "--n", "3", "--len", "2", "--keys", str(keys))
    assert code == 0
    assert records(out)[0]["sum"] == [7, 2]


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "scenario.json"
    cfg.write_text(json.dumps({"d": 5, "n": 3, "len": 2, "keys": [[1, 1], [2, 2], [4, 0]], "seed": 3}))
    code, out, _ = run_cli(capsys, "run", "--config", str(cfg), "--seed", "4")
    assert code == 0
    recs = records(out)
    assert recs[0]["sum"] == [2, 3]
    assert recs[-1]["cfg"]["seed"] == 4


def test_attack_example_small(capsys):
    code, out, _ = run_cli(
        capsys, "attack", "--strategy", "intercept-resend", "--d", "2", "--decoys", "16", "--trials", "400", "--seed", "1"
    )
    assert code == 0
    summary = records(out)[-1]
    assert summary["oracle_abort_probability"] == pytest.approx(1 - 0.75**16, abs=1e-9)
    assert abs(summary["abort_rate"] - (1 - 0.75**16)) < 0.03


def test_attack_collusion(capsys):
    code, out, _ = run_cli(capsys, "attack", "--strategy", "collude:2,3", "--d", "3", "--n", "3", "--len", "2", "--trials", "3")
    assert code == 0
    summary = records(out)[-1]
    assert summary["p1_recovered"] == 3
    assert summary["colluders"] == [2, 3]


def test_attack_semi_honest(capsys):
    code, out, _ = run_cli(capsys, "attack", "--strategy", "semi-honest-p1", "--d", "4", "--len", "3", "--trials", "2")
    assert code == 0
    summary = records(out)[-1]
    assert summary["mismatches"] == 0
    assert summary["max_posterior_deviation"] <= 1e-9


def test_private_mode(capsys):
    code, out, _ = run_cli(capsys, "private-mode", "--d", "5", "--n", "3", "--len", "4", "--seed", "2")
    assert code == 0
    trial = records(out)[0]
    assert len({tuple(s) for s in trial["sums"].values()}) == 1


def test_oracle_check_example(capsys):
    code, out, _ = run_cli(capsys, "oracle-check", "--dmax", "4", "--nmax", "4")
    assert code == 0
    recs = records(out)
    assert recs[-1]["agree"] is True
    assert {(r["d"], r["n"]) for r in recs if r["record"] == "oracle"} == {(d, n) for d in range(2, 5) for n in range(2, 5)}


@pytest.mark.parametrize(
    "argv,field",
    [
        (["run", "--d", "1"], "--d"),
        (["run", "--n", "2"], "--n"),
        (["run", "--trials", "0"], "--trials"),
        (["attack", "--strategy", "collude:1,2"], "party 1"),
        (["attack", "--strategy", "bogus"], "--strategy"),
        (["attack"], "--strategy"),
        (["run", "--strategy", "intercept-resend"], "attack"),
    ],
)
def test_validation_errors(capsys, argv, field):
    code, _, err = run_cli(capsys, *argv)
    assert code == 2
    assert field in err


def test_key_digit_out_of_range(tmp_path, capsys):
    keys = tmp_path / "k.txt"
    keys.write_text("1\n2\n3\n")
    code, _, err = run_cli(capsys, "run", "--d", "3", "--n", "3", "--keys", str(keys))
    assert code == 2 and "digit 3" in err


def test_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run_cli(capsys, "run", "--config", str(bad))
    assert code == 2 and "config" in err
    bad.write_text(json.dumps({"dd": 3}))
    code, _, err = run_cli(capsys, "run", "--config", str(bad))
    assert code == 2 and "dd" in err


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["explode"])
    assert exc.value.code == 2


def test_outputs_byte_identical(tmp_path, capsys):
    paths = []
    for tag in ("a", "b"):
        out = tmp_path / f"{tag}.jsonl"
        tr = tmp_path / f"{tag}.transcript"
        code, _, _ = run_cli(
            capsys, "attack", "--strategy", "entangle-probe", "--d", "3", "--len", "3", "--trials", "5",
            "--seed", "9", "--out", str(out), "--transcript", str(tr),
        )
        assert code == 0
        paths.append((out.read_bytes(), tr.read_bytes()))
    assert paths[0] == paths[1]
    assert paths[0][1]


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "qftsum.cli", "run", "--d", "3", "--n", "3"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert records(proc.stdout)[0]["status"] == "Completed"
