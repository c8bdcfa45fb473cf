import json

import pytest

from abacus_sim.cli import CliError, ExperimentConfig, cmd_run, main


@pytest.fixture(scope="module")
def gemm_reports(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    assert main(["run", "--preset", "GEMM", "--instances", "2", "--policy", "interst,interdy", "--out", str(out)]) == 0
    return out


def test_single_run_writes_three_files(tmp_path, capsys):
    assert main(["run", "--preset", "GEMM", "--instances", "1", "--policy", "intrao3", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "gemm_intrao3_flashabacus.dispatch.csv", "gemm_intrao3_flashabacus.events.csv",
        "gemm_intrao3_flashabacus.report"]
    doc = json.loads((tmp_path / "gemm_intrao3_flashabacus.report").read_text())
    assert doc["metrics"]["throughput_bytes_per_s"] > 0
    assert "makespan" in capsys.readouterr().out


def test_all_policies_both_modes():
    cfg = ExperimentConfig(("preset", "GEMM"), ["interst", "interdy", "intraio", "intrao3", "simd"],
                           ["flashabacus", "baseline"])
    runs = cfg.runs()
    assert len(runs) == 9 and ("simd", "flashabacus") not in runs


def test_simd_alone_in_integrated_mode_is_a_usage_error(tmp_path):
    with pytest.raises(CliError):
        cmd_run(ExperimentConfig(("preset", "GEMM"), ["simd"], ["flashabacus"], out=tmp_path))


@pytest.mark.parametrize("argv", [
    ["run", "--mix", "1", "--policy", "fifo"],
    ["run", "--mix", "1", "--mode", "hybrid"],
    ["run", "--mix", "x"],
    ["run"],
    ["run", "--mix", "1", "--set", "nonsense"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("abacus-sim: error: usage:")


def test_unknown_parameter_key(tmp_path, capsys):
    assert main(["run", "--mix", "1", "--set", "warp_factor=9", "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("abacus-sim: error: parameter:")


def test_unknown_mix(tmp_path, capsys):
    assert main(["run", "--mix", "15", "--out", str(tmp_path)]) == 1
    assert "unknown-mix" in capsys.readouterr().err


def test_compare_identity(gemm_reports, tmp_path, capsys):
    st = str(gemm_reports / "gemm_interst_flashabacus.report")
    dy = str(gemm_reports / "gemm_interdy_flashabacus.report")
    twin = tmp_path / "twin.report"
    twin.write_text((gemm_reports / "gemm_interst_flashabacus.report").read_text())
    assert main(["compare", st, str(twin)]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    assert all(r.split()[1:] == ["1.0000"] * 3 for r in rows)
    assert main(["compare", st, dy, "--reference", st]) == 0
    assert float(capsys.readouterr().out.splitlines()[2].split()[1]) > 1.0


def test_compare_of_different_mixes(gemm_reports, tmp_path, capsys):
    assert main(["run", "--preset", "ATAX", "--instances", "1", "--policy", "interst", "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    a = str(gemm_reports / "gemm_interst_flashabacus.report")
    b = str(tmp_path / "atax_interst_flashabacus.report")
    assert main(["compare", a, b]) == 1
    assert capsys.readouterr().err.startswith("abacus-sim: error: report:")


def test_compare_missing_file(tmp_path, capsys):
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 1
    assert capsys.readouterr().err.startswith("abacus-sim: error: io:")


def test_preset_dump_validates(tmp_path, capsys):
    spec = tmp_path / "mix3.toml"
    assert main(["preset", "--mix", "3", "--out", str(spec)]) == 0
    assert main(["validate", str(spec)]) == 0
    assert capsys.readouterr().out.startswith("ok: ")


def test_preset_to_stdout(capsys):
    assert main(["preset", "--preset", "ATAX", "--instances", "1"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("[mix]") and "[app.0.kernel.0.microblock.1]" in out


def _atax_spec(tmp_path, capsys):
    main(["preset", "--preset", "ATAX", "--instances", "1"])
    return capsys.readouterr().out


def test_validate_reports_misalignment(tmp_path, capsys):
    text = _atax_spec(tmp_path, capsys).replace("input_range = [0, 335544320]", "input_range = [4096, 335544320]")
    spec = tmp_path / "bad.toml"
    spec.write_text(text)
    assert main(["validate", str(spec)]) == 1
    assert capsys.readouterr().err.startswith("abacus-sim: error: alignment:")


def test_validate_reports_unknown_key(tmp_path, capsys):
    text = _atax_spec(tmp_path, capsys).replace("serial = true", "serial = true\ncolour = 3")
    spec = tmp_path / "bad.toml"
    spec.write_text(text)
    assert main(["validate", str(spec)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("abacus-sim: error: unknown-key:") and "colour" in err
