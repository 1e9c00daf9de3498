from __future__ import annotations

import csv
import io
import json

import pytest

from cspscale.cli import CSV_COLUMNS, main
from cspscale.costmodel import closed_form_cost
from cspscale.presets import get_preset
from cspscale.report import CostReport
from cspscale.rewrite import cspize, prune_heads


def test_presets_list(run_cli):
    result = run_cli("presets", "list", "--format", "json")
    assert result.returncode == 0
    names = [p["name"] for p in json.loads(result.stdout)]
    assert "yolov4-p7" in names and len(names) == 10


def test_analyze_json_oracle_zero_difference(run_cli):
    result = run_cli("analyze", "yolov4-tiny", "--format", "json", "--oracle")
    assert result.returncode == 0, result.stderr
    data = json.loads(result.stdout)
    assert set(data["difference"].values()) == {0}
    assert CostReport.from_dict(data["closed_form"]) == closed_form_cost(get_preset("yolov4-tiny"))


def test_global_flags_before_subcommand(capsys):
    assert main(["--format", "json", "analyze", "darknet53"]) == 0
    assert json.loads(capsys.readouterr().out)["network"] == "darknet53"


def test_analyze_input_override(capsys):
    assert main(["analyze", "cspdarknet53", "--input", "608", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["input"]["width"] == 608
    assert main(["analyze", "cspdarknet53", "--input", "16"]) == 1


def test_analyze_csv_columns(capsys):
    assert main(["analyze", "darknet53", "--format", "csv", "--oracle"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert {r[0] for r in rows[1:]} == {"closed_form", "oracle"}


def test_analyze_table_shows_humanized_totals(capsys):
    assert main(["analyze", "darknet53+fpnspp"]) == 0
    out = capsys.readouterr().out
    assert "flops 70.72G" in out
    assert "70724486144" in out


def test_compare_matches_cspize_report(capsys):
    assert main(["compare", "darknet53", "cspdarknet53", "--format", "json"]) == 0
    data = json.loads(capsys.readouterr().out)
    _, report = cspize(get_preset("darknet53"), "backbone")
    assert data["reduction"]["flops"] == pytest.approx(report.flops_delta, abs=1e-15)


def test_compare_matches_prune_report(capsys):
    assert main(["compare", "p7", "p7\\P7", "--format", "json"]) == 0
    data = json.loads(capsys.readouterr().out)
    _, report = prune_heads(get_preset("yolov4-p7"), ["P7"])
    assert data["reduction"]["flops"] == pytest.approx(report.flops_delta, abs=1e-15)


def test_compare_self_is_zero(capsys):
    assert main(["compare", "yolov4-csp", "yolov4-csp", "--format", "json"]) == 0
    assert set(json.loads(capsys.readouterr().out)["reduction"].values()) == {0.0}


def test_cspize_writes_file(tmp_path, capsys):
    target = tmp_path / "csp.yaml"
    assert main(["cspize", "pan-spp-neck", "--scope", "neck", "--write", str(target)]) == 0
    assert main(["analyze", str(target), "--format", "json"]) == 0
    out = capsys.readouterr().out
    assert json.loads(out[out.index("{"):])["closed_form"]["flops"] == closed_form_cost(
        get_preset("csppan-spp-neck")
    ).flops


def test_prune_exit_codes(run_cli):
    assert run_cli("prune", "p7", "P7", "P6").returncode == 0
    bad = run_cli("prune", "p7", "P6")
    assert bad.returncode == 3
    assert "non-contiguous" in bad.stderr


def test_scale_json(run_cli):
    budget = str(closed_form_cost(get_preset("yolov4-p6")).flops)
    result = run_cli("scale", "p5", "--input", "1280", "--budget-flops", budget, "--format", "json")
    assert result.returncode == 0, result.stderr
    data = json.loads(result.stdout)
    assert data["width_multiplier"] == "1"
    assert data["stage_depths"] == [1, 3, 15, 15, 7, 7]


def test_scale_requires_budget(capsys):
    assert main(["scale", "p5", "--input", "1280"]) == 1
    assert main(["scale", "p5", "--input", "1280", "--budget-flops", "5"]) == 3


def test_check_tiny(capsys):
    assert main(["check-tiny", "yolov4-tiny", "--tau", "32"]) == 0
    out = capsys.readouterr().out
    assert out.count("[pass]") == 4


def test_exit_codes_for_bad_files(tmp_path, run_cli):
    broken = tmp_path / "broken.yaml"
    broken.write_text("name: x\ninput: {width: 32\n", encoding="utf-8")
    assert run_cli("analyze", str(broken)).returncode == 2
    semantic = tmp_path / "semantic.yaml"
    semantic.write_text(
        "name: x\ninput: {width: 32, height: 32, channels: 16}\nstages:\n"
        "  - {kind: Dark, repeats: 1, base_channels: 16, growth: 4, downsample: false, role: backbone}\n",
        encoding="utf-8",
    )
    result = run_cli("analyze", str(semantic))
    assert result.returncode == 3
    assert "growth forbidden for kind Dark" in result.stderr
    assert run_cli("analyze", "no-such-preset").returncode == 1
    assert run_cli("frobnicate").returncode == 1


def test_export_roundtrip(capsys):
    assert main(["export", "yolov4-tiny"]) == 0
    assert "CspOSA_PCB" in capsys.readouterr().out


def test_output_is_deterministic(run_cli):
    first = run_cli("analyze", "yolov4-p5", "--format", "csv").stdout
    assert first == run_cli("analyze", "yolov4-p5", "--format", "csv").stdout
