"""Tests for the experiment driver: configs, CSV output and exit codes.

The polynomial case is cheap and exact, so whole studies run in well
under a second while still exercising assembly, solve and the error
pipeline end to end.
"""
import json

import numpy as np
import pytest

from phifem import cli
from phifem.cli import (CSV_HEADER, RunConfig, conditioning_study, run_case,
                        sigma_sweep, write_csv)
from phifem.linalg import NoConvergenceError


def _read_rows(path):
    lines = path.read_text().strip().split("\n")
    assert lines[0] == CSV_HEADER
    keys = CSV_HEADER.split(",")
    return [dict(zip(keys, line.split(","))) for line in lines[1:]]


def test_csv_header_is_frozen():
    assert CSV_HEADER == ("h,n_cells,dofs,k,l,sigma,err_l2_rel,err_h1_rel,"
                          "eoc_l2,eoc_h1,kappa,status")


def test_config_from_dict_round_trip():
    cfg = RunConfig.from_dict({"case": "planted", "k": 2, "n": 4,
                               "levels": 2})
    assert cfg.case == "planted"
    assert cfg.k == 2
    assert cfg.l is None and cfg.levelset_degree == 2
    assert cfg.tasks == ("errors",)
    assert cfg.resolved_box() == (0.0, 0.0, 1.0, 1.0)


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"case": "circle", "mesh": 5})


@pytest.mark.parametrize("data", [
    {"case": "pentagon"},
    {"k": 4},
    {"k": 1, "l": 5},
    {"sigma": -1.0},
    {"sigma": float("inf")},
    {"n": 0},
    {"levels": 0},
    {"box": (0.0, 0.0, 0.0, 1.0)},
    {"tasks": ("errors", "plotting")},
    {"sigmas": ()},
    {"sigmas": (1.0, -2.0)},
])
def test_config_rejects_bad_values(data):
    with pytest.raises(ValueError):
        RunConfig.from_dict(data)


def test_polynomial_study_is_exact_on_every_level():
    rows = run_case(RunConfig(case="planted", k=1, n=4, levels=3))
    assert len(rows) == 3
    for i, row in enumerate(rows):
        assert row["status"] == "ok"
        assert row["n_cells"] == 4 * 2 ** i
        assert row["err_l2_rel"] <= 1e-9
        assert row["err_h1_rel"] <= 1e-9
    assert rows[0]["eoc_l2"] is None and rows[0]["eoc_h1"] is None
    assert rows[1]["h"] == pytest.approx(rows[0]["h"] / 2.0, rel=1e-12)


def test_sigma_sweep_groups_rows_by_penalty():
    cfg = RunConfig(case="planted", k=1, n=4, levels=1)
    rows = sigma_sweep(cfg, [1.0, 20.0])
    assert [row["sigma"] for row in rows] == [1.0, 20.0]
    for row in rows:
        assert row["err_l2_rel"] <= 1e-9
    with pytest.raises(ValueError):
        sigma_sweep(cfg, [])


def test_conditioning_study_returns_slope():
    rows, slope = conditioning_study(RunConfig(case="planted", k=1, n=4,
                                               levels=2))
    assert all(row["kappa"] > 0 for row in rows)
    assert all(row["err_l2_rel"] is None for row in rows)
    assert slope is not None
    # kappa grows as the mesh is refined, so the log-log slope is negative
    assert slope < 0


def test_write_csv_formats_blanks_and_floats(tmp_path):
    row = {key: None for key in CSV_HEADER.split(",")}
    row.update({"h": 0.1, "n_cells": 4, "dofs": 30, "k": 1, "l": 1,
                "sigma": 20.0, "status": "ok"})
    out = tmp_path / "table.csv"
    with open(out, "w") as fh:
        write_csv([row], fh, slope=-1.5)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert lines[1] == "0.1,4,30,1,1,20.0,,,,,,ok"
    assert lines[2] == ",,,,,,,,,,-1.5,slope"


def test_main_writes_csv_to_stdout(capsys):
    code = cli.main(["run", "--case", "planted", "--n", "4",
                     "--levels", "1"])
    captured = capsys.readouterr()
    assert code == 0
    lines = captured.out.strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert len(lines) == 2


def test_main_output_is_reproducible(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["run", "--case", "planted", "--n", "4", "--levels", "2"]
    assert cli.main(args + ["--out", str(first)]) == 0
    assert cli.main(args + ["--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_main_flags_override_config_file(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"case": "planted", "k": 2, "n": 4,
                                    "levels": 1}))
    out = tmp_path / "run.csv"
    code = cli.main(["run", "--config", str(cfg_file), "--k", "1",
                     "--out", str(out)])
    assert code == 0
    rows = _read_rows(out)
    assert rows[0]["k"] == "1"


def test_main_conditioning_appends_slope_row(tmp_path):
    out = tmp_path / "kappa.csv"
    code = cli.main(["conditioning", "--case", "planted", "--n", "4",
                     "--levels", "2", "--out", str(out)])
    assert code == 0
    rows = _read_rows(out)
    assert len(rows) == 3
    assert rows[-1]["status"] == "slope"
    assert float(rows[-1]["kappa"]) < 0
    for row in rows[:-1]:
        assert float(row["kappa"]) > 0
        assert row["err_l2_rel"] == ""


def test_main_rejects_bad_configuration(tmp_path, capsys):
    assert cli.main(["run", "--case", "planted", "--k", "9"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"case": "planted", "unknown_key": 1}))
    assert cli.main(["run", "--config", str(bad)]) == 2
    not_object = tmp_path / "list.json"
    not_object.write_text("[1, 2]")
    assert cli.main(["run", "--config", str(not_object)]) == 2
    capsys.readouterr()


def test_main_reports_empty_active_set(tmp_path, capsys):
    cfg_file = tmp_path / "empty.json"
    cfg_file.write_text(json.dumps({"case": "circle", "n": 4, "levels": 1,
                                    "box": [2.0, 2.0, 3.0, 3.0]}))
    code = cli.main(["run", "--config", str(cfg_file)])
    captured = capsys.readouterr()
    assert code == 2
    assert "EmptyActiveSet" in captured.err


def test_main_sigma_sweep_requires_sigmas(capsys):
    code = cli.main(["sigma-sweep", "--case", "planted", "--n", "4",
                     "--levels", "1"])
    assert code == 2
    capsys.readouterr()


def test_main_flags_failed_solves(tmp_path, capsys, monkeypatch):
    def broken_solve(system, tol):
        raise NoConvergenceError("stalled", best=None)

    monkeypatch.setattr(cli, "solve", broken_solve)
    out = tmp_path / "failed.csv"
    code = cli.main(["run", "--case", "planted", "--n", "4", "--levels", "1",
                     "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 3
    assert "no-convergence" in captured.err
    rows = _read_rows(out)
    assert rows[0]["status"] == "no-convergence"
    assert rows[0]["err_l2_rel"] == ""
