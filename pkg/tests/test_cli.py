import pytest

from mechdesign.cli import main
from mechdesign.harness.runner import bundled_scenarios

EXAMPLE5 = str(bundled_scenarios() / "example5.yaml")


def test_run_converges(tmp_path, capsys):
    assert main(["run", "--scenario", EXAMPLE5, "--out", str(tmp_path)]) == 0
    assert "converged" in capsys.readouterr().out
    assert (tmp_path / "example5_report.yaml").exists()


def test_run_bundled_name(tmp_path):
    assert main(["run", "--scenario", "example5_auction_a", "--out", str(tmp_path)]) == 0


def test_run_non_convergence(tmp_path):
    assert main(["run", "--scenario", EXAMPLE5, "--out", str(tmp_path),
                 "--max-steps", "20"]) == 1
    assert (tmp_path / "example5_trace.csv").exists()


def test_run_tolerance_flag(tmp_path):
    assert main(["run", "--scenario", EXAMPLE5, "--out", str(tmp_path), "--tol", "1e-4"]) == 0


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("players: []\n")
    assert main(["run", "--scenario", str(bad)]) == 2
    assert "bad.yaml:1" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "missing.yaml")]) == 2
    assert main(["run", "--scenario", EXAMPLE5, "--max-steps", "0"]) == 2
    with pytest.raises(SystemExit) as err:
        main(["run", "--scenario", EXAMPLE5, "--seed", "-3"])
    assert err.value.code == 2


def test_missing_scenario_flag():
    with pytest.raises(SystemExit) as err:
        main(["run"])
    assert err.value.code == 2


def test_explain(capsys):
    assert main(["explain", "--scenario", EXAMPLE5]) == 0
    out = capsys.readouterr().out
    assert "pricing_mp" in out and "kappa_D = 0.01" in out and "A P = 1 lambda" in out


def test_sweep(tmp_path, capsys):
    assert main(["sweep", "--scenario", "example5_auction_a", "--n", "2,10",
                 "--out", str(tmp_path)]) == 0
    assert "N=10" in capsys.readouterr().out
    assert (tmp_path / "sweep.yaml").exists()


def test_verify_exit_codes(tmp_path):
    assert main(["verify", "--scenario", str(tmp_path)]) == 0
    (tmp_path / "example5.yaml").write_text(
        (bundled_scenarios() / "example5.yaml").read_text().replace("kappa_D: 0.01", "kappa_D: 10"))
    assert main(["verify", "--scenario", str(tmp_path), "--out", str(tmp_path / "v")]) == 1
    assert (tmp_path / "v" / "verify.yaml").exists()
    assert main(["verify", "--scenario", str(tmp_path / "nowhere")]) == 2
