"""CLI wiring: subcommands run, exit codes signal check failures."""

import numpy as np

from delayrl.cli import main


def test_score_command(capsys):
    assert main(["score", "--alg", "3679.8", "--random", "-58.7",
                 "--free", "3279.2"]) == 0
    out = capsys.readouterr().out
    assert abs(float(out.strip()) - 1.12) < 0.005


def test_golden_command_builtins(capsys):
    assert main(["golden"]) == 0
    out = capsys.readouterr().out
    assert out.count("pass") == 2


def test_golden_command_flags_bad_trace(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("# mode=ordered\n# o_max=2\nt,kind,gen_time,delay\n"
                   "1,gen,1,1\n2,obs,1,1\n3,use,1,1\n")  # use logged one step late
    assert main(["golden", "--trace", str(bad)]) == 1


def test_equivalence_command(capsys):
    assert main(["equivalence", "--env", "pendulum", "--policy", "random",
                 "--o-max", "2", "--seeds", "0", "--steps", "600"]) == 0
    assert "identical" in capsys.readouterr().out


def test_equivalence_command_fails_on_unordered(capsys):
    assert main(["equivalence", "--env", "pendulum", "--policy", "random",
                 "--o-max", "3", "--seeds", "0", "--steps", "600",
                 "--variant", "unordered"]) == 1


def test_run_command_with_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "env: gridworld\nmode: conservative\no_max: 1\nlearner: random\n"
        f"episodes: 20\nseeds: [0, 1]\nout_dir: {tmp_path / 'out'}\n"
    )
    assert main(["run", "-c", str(cfg)]) == 0
    assert (tmp_path / "out" / "curves.csv").exists()
    assert (tmp_path / "out" / "summary.json").exists()


def test_run_command_cli_overrides(tmp_path):
    assert main(["run", "--env", "gridworld", "--learner", "random",
                 "--o-max", "1", "--episodes", "10", "--seeds", "3",
                 "--out-dir", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "curves.csv").read_text()
    assert ",3\n" in text  # seed column carries the override
