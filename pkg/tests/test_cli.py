import json
import subprocess
import sys

import pytest

from conslaw import __version__
from conslaw.cli import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, dumps, main, run


def _main(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out else None


@pytest.mark.parametrize("argv,counts", [
    (["--nmr", "2,2,2", "--mode", "mf", "--tau", "1"], (1, 1, 1)),
    (["--nmr", "2,3,2", "--metric", "mirror"], (2, 2, 2)),
    (["--arch", "relu2", "--dims", "2,2,2", "--mode", "mf", "--tau", "1"], (0, 0, 0)),
])
def test_compare_examples(capsys, argv, counts):
    code, rep = _main(capsys, "compare", *argv)
    assert code == EXIT_OK and rep["agree"]
    assert (rep["counts"]["solver"], rep["counts"]["lie"], rep["counts"]["formula"]) == counts
    assert rep["version"] == __version__ and rep["seed"] == 0
    assert rep["solver"]["witness"] and rep["lie"]["witness"] and rep["config"]["command"] == "compare"


def test_compare_low_degree_exit_one():
    # degree 1 cannot see the quadratic balancedness laws, so the Lie count exceeds the solver
    rep, code = run({"command": "compare", "architecture": {"kind": "linear", "nmr": [2, 2, 2]},
                     "degree": 1})
    assert code == EXIT_MISMATCH
    assert rep["mismatch"]["code"] == "raise degree" and rep["mismatch"]["solver"] == 0


@pytest.mark.parametrize("config", [
    {"command": "compare", "architecture": {"kind": "linear", "nmr": [2, 2, 2]}, "colour": 1},
    {"command": "compare"},
    {"command": "compare", "architecture": {"kind": "linear", "nmr": [2, 2, 2]}, "tau": "x/y",
     "mode": "mf"},
    {"command": "compare", "architecture": {"kind": "conv", "dims": [2, 2, 2]}},
    {"command": "solve", "architecture": {"kind": "linear", "nmr": [2, 2, 2]}, "flow": "nesterov",
     "tau": "1"},
    {"command": "simulate", "architecture": {"kind": "linear", "nmr": [2, 2, 2]}, "mode": "mf"},
])
def test_config_errors_exit_two(config):
    rep, code = run(config)
    assert code == EXIT_CONFIG and "error" in rep


def test_cli_config_error_message(capsys):
    code = main(["compare", "--nmr", "2,2,2", "--metric", "natural"])
    captured = capsys.readouterr()
    assert code == EXIT_CONFIG and "config error" in captured.err


def test_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert main(["count", "--nmr", "2,1,2", "--mode", "mf", "--tau", "1", "--out", str(path)]) == 0
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    # the output path is part of the embedded config; everything else must match byte for byte
    for rep in (ra, rb):
        rep["config"]["output"]["path"] = None
    assert dumps(ra) == dumps(rb) and ra["lie"]["law_count"] == 1


def test_config_file_and_sweep(tmp_path, capsys):
    job = {"command": "solve", "architecture": {"kind": "linear", "nmr": [1, 1, 1]}}
    (tmp_path / "job.json").write_text(json.dumps(job))
    code, rep = _main(capsys, "solve", "--config", str(tmp_path / "job.json"))
    assert code == 0 and rep["solver"]["laws"][0]["vars"] == ["U1", "U2"]
    sweep = {"jobs": [job, {**job, "command": "count"}, {"command": "count"}]}
    (tmp_path / "sweep.json").write_text(json.dumps(sweep))
    code, rep = _main(capsys, "solve", "--config", str(tmp_path / "sweep.json"), "--jobs", "2")
    assert rep["exit_codes"] == [0, 0, 2] and code == 2


def test_closed_form(capsys):
    code, rep = _main(capsys, "closed-form", "--arch", "relu2", "--dims", "2,2,3", "--bias",
                      "--metric", "icnn")
    assert code == 0 and rep["independent"] == 3
    assert all(f["annihilated"] for f in rep["families"])


def test_simulate_csv(tmp_path, capsys):
    out = tmp_path / "drift.csv"
    code = main(["simulate", "--nmr", "2,2,2", "--mu", "1", "--delta", "0.01", "--steps", "20",
                 "--velocity-seed", "3", "--format", "csv", "--out", str(out)])
    assert code == 0
    assert out.read_text().splitlines()[0] == "step,t,loss,law_id,value,drift"
    manifest = json.loads((tmp_path / "drift.csv.manifest.json").read_text())
    assert manifest["start"].startswith("warm") and manifest["tau"] == 1.0
    assert any(law["law_id"].startswith("pca_mf") for law in manifest["laws"])


def test_simulate_tolerance_and_abort(capsys):
    code, rep = _main(capsys, "simulate", "--nmr", "2,2,2", "--delta", "0.01", "--steps", "50",
                      "--tolerance", "1e-12")
    assert code == EXIT_MISMATCH and rep["mismatch"]["code"] == "drift above tolerance"
    code, rep = _main(capsys, "simulate", "--nmr", "2,2,2", "--delta", "20", "--steps", "200")
    assert code == EXIT_MISMATCH and rep["mismatch"]["code"] == "flow aborted"


def test_free_flow(capsys):
    code, rep = _main(capsys, "free-flow", "--seeds", "3")
    assert code == 0 and len(rep["runs"]) == 3 and rep["max_drift"] <= 1e-9


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "conslaw", "--version"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and __version__ in out.stdout
