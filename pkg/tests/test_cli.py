import json

import pytest

from boundary_singular.cli import OUT_ENV, RunConfig, main


def _report(path):
    data = json.loads((path / "report.json").read_text())
    data.pop("timings")
    data["config"].pop("out")
    return data


def test_cell_separable(tmp_path, capsys):
    rc = main(["cell-separable", "--dim", "2", "--p", "3.2", "--out", str(tmp_path)])
    assert rc == 0
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["passed"] and data["checks"]["shooting_residual<=1e-8"]
    assert (tmp_path / "phi.csv").read_text().startswith("alpha,phi\n")
    assert "PASS shooting_residual<=1e-8" in capsys.readouterr().out


def test_runs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["cell-separable", "--dim", "3", "--p", "2.5", "--out", str(d)]) == 0
    assert (a / "phi.csv").read_bytes() == (b / "phi.csv").read_bytes()
    assert _report(a) == _report(b)


@pytest.mark.parametrize(
    "argv,message",
    [
        (["cell-separable", "--dim", "2", "--p", "2.5"], "(N+1)/(N-1)"),
        (["cell-critical", "--dim", "2", "--sigma", "2.0"], "σ must satisfy"),
        (["cell-critical", "--dim", "2", "--tstar", "0.5"], "t_*"),
        (["cell-connection", "--dim", "2", "--p", "3.2", "--delta", "1.5"], "δ must lie"),
        (["glue", "--p", "4"], "(n+1)/(n-1)"),
        (["glue", "--points", "0,0.1"], "2R"),
        (["glue", "--stages", "2"], "stages"),
        (["verify", "--criteria", "9"], "1..8"),
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, argv, message):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert message in capsys.readouterr().err


def test_cell_critical(tmp_path):
    assert main(["cell-critical", "--dim", "2", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["fits"]["lipschitz"] < 1
    assert data["logs"]["contraction"]
    assert (tmp_path / "phi.csv").read_text().startswith("t,alpha,phi\n")


def test_glue(tmp_path):
    rc = main(["glue", "--points", "0", "--level", "2", "--plot-script", "--out", str(tmp_path)])
    assert rc == 0
    data = json.loads((tmp_path / "report.json").read_text())
    assert set(data["files"]) == {"solution.csv", "triangles.csv", "plot_solution.gp"}
    slope = data["fits"]["normal_ray_slopes"][0]
    assert -1.2 < slope < -0.8
    header = (tmp_path / "solution.csv").read_text().splitlines()[0]
    assert header == "x,y,u,v"


def test_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path))
    assert main(["verify", "--criteria", "3"]) == 0
    assert (tmp_path / "verify" / "report.json").exists()


def test_report_summarises_runs(tmp_path, capsys):
    main(["cell-separable", "--dim", "2", "--p", "3.2", "--out", str(tmp_path / "sep")])
    capsys.readouterr()
    assert main(["report", "--root", str(tmp_path), "--out", str(tmp_path / "summary")]) == 0
    out = capsys.readouterr().out
    assert "PASS sep [cell-separable]" in out


def test_run_config_round_trip():
    cfg = RunConfig("glue", {"p": 3.0, "points": "0,2.1"}, 7, "runs/glue")
    assert RunConfig.from_json(cfg.to_json()) == cfg
