import json

import pytest
from click.testing import CliRunner
from pydantic import ValidationError

from main import cli
from src.models import RunConfig
from src.reports import read_csv_body, summary_path


@pytest.fixture
def runner():
    return CliRunner()


def _manifest(out):
    return json.loads(out.with_name(out.stem + ".manifest.json").read_text(encoding="utf-8"))


def test_engine_check_passes(runner, tmp_path):
    out = tmp_path / "engine.csv"
    result = runner.invoke(cli, ["engine-check", "--n", "60", "--seed", "7", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "PASS" in result.output
    first_line = out.read_text(encoding="utf-8").split("\n")[0]
    assert first_line.startswith("# provenance ")
    assert json.loads(first_line[len("# provenance ") :])["seed"] == 7
    body = read_csv_body(out)
    assert body[0] == ["n", "u", "v", "centered", "u_naive"]
    assert len(body) == 1 + 59
    summary = json.loads(summary_path(str(out), "engine-check", "csv").read_text(encoding="utf-8"))
    assert summary["passed"] is True
    manifest = _manifest(out)
    assert manifest["seed"] == 7
    assert manifest["failed_assertions"] == []


def test_reports_are_reproducible_across_threads(runner, tmp_path):
    first, second = tmp_path / "a" / "run.csv", tmp_path / "b" / "run.csv"
    for out, threads in ((first, "1"), (second, "4")):
        result = runner.invoke(
            cli,
            ["theorem-as", "--process", "iid-uniform", "--kernel", "product", "--n-grid", "10,100", "--reps", "6",
             "--seed", "3", "--threads", threads, "--out", str(out)],
        )
        assert result.exit_code in (0, 1), result.output
    assert first.read_bytes() == second.read_bytes()
    assert first.with_name("run.summary.json").read_bytes() == second.with_name("run.summary.json").read_bytes()


def test_example1_small_ladder(runner, tmp_path):
    out = tmp_path / "example1.csv"
    result = runner.invoke(cli, ["example1", "--levels", "3", "--n", "16", "--sim-seeds", "2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    body = read_csv_body(out)
    assert body[0] == ["level", "n", "which", "S", "u_norm", "paper_norm", "u_norm_exact", "paper_norm_exact", "bound"]
    assert body[-1][:4] == ["3", "192", "N'", "8204"]
    assert body[-1][7] == "2051/9168"
    ab = read_csv_body(tmp_path / "example1.ab.csv")
    assert ab[1][-2:] == ["73/1008", "47/168"]
    assert (tmp_path / "example1.simulation.csv").exists()


def test_example2_small_run(runner, tmp_path):
    out = tmp_path / "example2.csv"
    result = runner.invoke(
        cli,
        ["example2", "--n", "64", "--reps", "200", "--ks-sample", "200", "--gap-n", "16", "--gap-reps", "200",
         "--mcleish-max", "32", "--out", str(out)],
    )
    assert result.exit_code in (0, 1), result.output
    for suffix in ("gap", "mcleish", "histogram", "means"):
        assert (tmp_path / f"example2.{suffix}.csv").exists()
    assert len(read_csv_body(out)) == 201
    names = [assertion["name"] for assertion in _manifest(out)["assertions"]]
    assert "mcleish_sum_squares" in names and "unbounded_means" in names


def test_json_format_writes_one_table_file(runner, tmp_path):
    out = tmp_path / "weak.json"
    result = runner.invoke(cli, ["weak-conv", "--n-grid", "1,10,100", "--format", "json", "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["columns"] == ["n", "function", "value"]
    assert "max" in payload["extra_tables"]
    assert not (tmp_path / "weak.max.csv").exists()


@pytest.mark.parametrize(
    "args",
    [
        ["theorem-as", "--kernel", "nope"],
        ["theorem-as", "--n-grid", "5,3"],
        ["theorem-l1", "--kernel-param", "c"],
        ["engine-check", "--seed", "-1"],
        ["theorem-as", "--process", "gaussian-ar1", "--kernel", "product"],
        ["weak-conv", "--process", "gaussian-ar1"],
    ],
)
def test_usage_errors_exit_two(runner, tmp_path, args):
    result = runner.invoke(cli, args + ["--out", str(tmp_path / "run.csv")])
    assert result.exit_code == 2, result.output


def test_weak_conv_accepts_range_grids(runner, tmp_path):
    out = tmp_path / "weak.csv"
    result = runner.invoke(cli, ["weak-conv", "--n-grid", "1:100:33", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert [row[0] for row in read_csv_body(tmp_path / "weak.max.csv")[1:]] == ["1", "34", "67", "100"]
    assert runner.invoke(cli, ["weak-conv", "--n-grid", "0:10", "--out", str(out)]).exit_code == 2


def test_invalid_process_parameters_still_write_a_manifest(runner, tmp_path):
    out = tmp_path / "weak.csv"
    result = runner.invoke(cli, ["weak-conv", "--process", "rotation", "--alpha", "abc", "--out", str(out)])
    assert result.exit_code == 2, result.output
    manifest = _manifest(out)
    assert manifest["passed"] is False
    assert manifest["error"]["code"] == "INVALID_ARGUMENT"
    assert not out.exists()


def test_failed_assertion_exits_one(runner, tmp_path):
    out = tmp_path / "weak.csv"
    result = runner.invoke(cli, ["weak-conv", "--n-grid", "1,1000", "--tolerance", "1e-9", "--out", str(out)])
    assert result.exit_code == 1, result.output
    assert "FAIL max_deviation" in result.output
    manifest = _manifest(out)
    assert manifest["failed_assertions"] == ["max_deviation"]
    assert manifest["error"]["code"] == "ASSERTION_FAILED"


def test_seed_from_environment(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("UL_SEED", "42")
    out = tmp_path / "engine.csv"
    result = runner.invoke(cli, ["engine-check", "--n", "20", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert _manifest(out)["seed"] == 42


def test_ladder_files(runner, tmp_path):
    ladder = tmp_path / "ladder.json"
    result = runner.invoke(cli, ["write-ladder", "--levels", "5", "--output", str(ladder)])
    assert result.exit_code == 0, result.output
    result = runner.invoke(cli, ["validate-ladder", str(ladder)])
    assert result.exit_code == 0, result.output
    assert "valid ladder with 5 levels" in result.output

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"N": ["2", "3"], "Nprime": ["1", "4", "8"]}), encoding="utf-8")
    result = runner.invoke(cli, ["validate-ladder", str(bad)])
    assert result.exit_code == 1
    assert "N'_ℓ < N_ℓ+1 fails at ℓ=1" in result.output

    broken = tmp_path / "broken.json"
    broken.write_text("[1, 2", encoding="utf-8")
    assert runner.invoke(cli, ["validate-ladder", str(broken)]).exit_code == 2


def test_example1_reads_ladder_files(runner, tmp_path):
    ladder = tmp_path / "ladder.json"
    runner.invoke(cli, ["write-ladder", "--levels", "3", "--output", str(ladder)])
    out = tmp_path / "from-file.csv"
    result = runner.invoke(
        cli, ["example1", "--ladder-file", str(ladder), "--n", "8", "--sim-seeds", "1", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert len(read_csv_body(out)) == 1 + 6


def test_run_config_rejects_unknown_parameters():
    with pytest.raises(ValidationError):
        RunConfig(subcommand="engine-check", parameters={"levels": 3})
    with pytest.raises(ValidationError):
        RunConfig(subcommand="example1", threads=0)


def test_example1_default_ladder(runner, tmp_path):
    out = tmp_path / "example1.csv"
    result = runner.invoke(cli, ["example1", "--out", str(out)])
    assert result.exit_code == 0, result.output
    names = [assertion["name"] for assertion in _manifest(out)["assertions"]]
    assert "subsequence_separation" in names and "n_subsequence_limit" in names
    assert len(read_csv_body(out)) == 1 + 24


def test_weak_conv_defaults(runner, tmp_path):
    result = runner.invoke(cli, ["weak-conv", "--out", str(tmp_path / "weak.csv")])
    assert result.exit_code == 0, result.output


@pytest.mark.slow
@pytest.mark.parametrize("subcommand", ["example2", "theorem-as", "theorem-l1"])
def test_acceptance_defaults(runner, tmp_path, subcommand):
    out = tmp_path / f"{subcommand}.csv"
    result = runner.invoke(cli, [subcommand, "--threads", "4", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert _manifest(out)["passed"] is True


@pytest.mark.slow
def test_iid_product_converges_almost_surely(runner, tmp_path):
    out = tmp_path / "iid.csv"
    result = runner.invoke(
        cli,
        ["theorem-as", "--process", "iid-uniform", "--kernel", "product", "--n-grid", "5000", "--reps", "50",
         "--tolerance", "0.02", "--seed", "0", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    manifest = _manifest(out)
    assert manifest["passed"] is True
    summary = json.loads(summary_path(str(out), "theorem-as", "csv").read_text(encoding="utf-8"))
    assert summary["summary"]["target"] == 0.25
    assert summary["summary"]["fraction_within"] >= 0.95


@pytest.mark.slow
def test_doubling_centered_product_converges_in_l1(runner, tmp_path):
    out = tmp_path / "l1.csv"
    result = runner.invoke(
        cli,
        ["theorem-l1", "--process", "doubling-map", "--kernel", "centered-product", "--n-grid", "4096",
         "--reps", "100", "--tolerance", "0.02", "--seed", "0", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    manifest = _manifest(out)
    assert manifest["passed"] is True
    assert [assertion["name"] for assertion in manifest["assertions"]] == ["final_is_minimum", "final_within_tolerance"]
