import json
import math

import pytest
from click.testing import CliRunner

from periberg import cellgeom
from periberg.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def straight_cell(tmp_path):
    path = tmp_path / "straight.json"
    cellgeom.rectangle_cell(0.5).save(path)
    return str(path)


def test_map_solve_straight_channel(runner, straight_cell, tmp_path):
    out = tmp_path / "solve"
    result = runner.invoke(
        main, ["map-solve", "--cell", straight_cell, "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    archive = json.loads((out / "map.json").read_text())
    assert abs(archive["rho"] - math.exp(math.pi)) < 1e-6
    assert archive["residual"] < 1e-8
    assert "params" in archive


def test_map_solve_rejects_malformed_cell(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"not": "a cell"}')
    result = runner.invoke(
        main, ["map-solve", "--cell", str(bad), "--out", str(tmp_path / "o")]
    )
    assert result.exit_code == 2
    assert "InvalidCell" in result.output


def test_map_solve_unusable_outdir(runner, straight_cell, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("file, not a directory")
    result = runner.invoke(
        main,
        ["map-solve", "--cell", straight_cell, "--out",
         str(blocker / "sub")],
    )
    assert result.exit_code == 3


def test_kernel_single_point(runner, tmp_path):
    result = runner.invoke(
        main,
        ["kernel", "--h", "0.5", "--z", "0,0", "--w", "0,0", "--out",
         str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    assert "re_K = 0.7853982" in result.output


def test_kernel_grid_cross_method(runner, tmp_path):
    result = runner.invoke(
        main,
        ["kernel", "--h", "0.5", "--method", "all", "--grid", "3", "--out",
         str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    csv_text = (tmp_path / "kernel.csv").read_text()
    summary = csv_text.strip().splitlines()[-1]
    assert "summary_max_deviation" in summary
    assert float(summary.split(",")[-1]) < 1e-5


def test_kernel_empty_grid(runner, tmp_path):
    result = runner.invoke(
        main, ["kernel", "--h", "0.5", "--grid", "0", "--out", str(tmp_path)]
    )
    assert result.exit_code == 2


def test_kernel_reads_map_archive(runner, straight_cell, tmp_path):
    out = tmp_path / "solve"
    runner.invoke(main, ["map-solve", "--cell", straight_cell, "--out",
                         str(out)])
    result = runner.invoke(
        main,
        ["kernel", "--map", str(out / "map.json"), "--z", "0,0", "--w",
         "0,0", "--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    assert "re_K = 0.7853982" in result.output


def test_kernel_output_deterministic(runner, tmp_path):
    args = ["kernel", "--h", "0.5", "--method", "all", "--grid", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert runner.invoke(main, args + ["--out", str(a)]).exit_code == 0
    assert runner.invoke(main, args + ["--out", str(b)]).exit_code == 0
    assert (a / "kernel.csv").read_bytes() == (b / "kernel.csv").read_bytes()


def test_floquet_csv(runner, tmp_path):
    result = runner.invoke(
        main,
        ["floquet", "--h", "0.5", "--fn", "gauss", "--m-trunc", "64",
         "--n-eta", "32", "--nx", "6", "--ny", "6", "--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "floquet.csv").read_text().splitlines()
    assert lines[0].startswith("# periberg ")
    assert lines[1] == "re_z,im_z,eta,re_g,im_g"
    assert len(lines) == 2 + 36 * 32


def test_verify_strip_all_pass(runner, tmp_path):
    report = tmp_path / "report.jsonl"
    result = runner.invoke(
        main, ["verify", "--h", "0.5", "--out", str(report)]
    )
    assert result.exit_code == 0, result.output
    records = [json.loads(line) for line in report.read_text().splitlines()]
    checks = [r for r in records if "check" in r]
    assert len(checks) == 10
    assert all(r["pass"] for r in checks)


def test_verify_detects_wrong_modulus(runner):
    result = runner.invoke(
        main, ["verify", "--h", "0.5", "--perturb-rho", "0.01"]
    )
    assert result.exit_code == 1
    assert "closed_vs_assembly" in result.output
    assert "failed checks" in result.output


def test_verify_zero_tolerance_fails_everything(runner):
    result = runner.invoke(main, ["verify", "--h", "0.5", "--tol", "0"])
    assert result.exit_code == 1
    assert result.output.count('"pass": false') == 10


def test_verify_rejects_negative_tolerance(runner):
    result = runner.invoke(main, ["verify", "--h", "0.5", "--tol", "-1"])
    assert result.exit_code == 2


def test_decay_command(runner, tmp_path):
    result = runner.invoke(
        main, ["decay", "--h", "0.5", "--n-max", "6", "--out", str(tmp_path)]
    )
    assert result.exit_code == 0, result.output
    assert "rate:" in result.output
    assert (tmp_path / "decay.csv").exists()
    assert (tmp_path / "decay.txt").read_text().startswith("# periberg ")


def test_schur_command(runner, tmp_path):
    result = runner.invoke(
        main,
        ["schur", "--h", "0.5", "--weight", "stretched", "--a", "1.0",
         "--b", "0.5", "--window", "8", "--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    assert "sup_row_integral" in result.output


def test_headers_carry_version_and_seed(runner, tmp_path):
    runner.invoke(
        main, ["kernel", "--h", "0.5", "--z", "0,0", "--out", str(tmp_path)]
    )
    first = (tmp_path / "kernel.csv").read_text().splitlines()[0]
    assert first.startswith("# periberg ")
    assert " config " in first
    assert first.rstrip().endswith("seed 0")
