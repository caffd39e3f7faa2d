import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from da_forge import cli, config, pipeline
from da_forge.errors import ConfigError, NumericalError
from da_forge.report import Report, emit, to_csv, to_json, to_plotdata

# small grids so that the scenario runs stay fast
FAST = """
[grids]
resolution = 8
directions = 8
c_samples = 11
[umeasure]
seed_curves = 2
envelope_n = 5
mass_n_max = 3
mass_samples = 2000
ell = 20
samples = 500
mixed_samples = 300
[appendix]
appendix_per_axis = 20
"""


def test_pinned_file_round_trips_byte_identically():
    text = config.pinned_text()
    assert config.emit(config.parse(text, config.RunConfig())) == text
    assert config.pinned_defaults().pve_kappa == 4.330762


@settings(max_examples=60)
@given(
    st.integers(1, 50),
    st.integers(1, 4096),
    st.floats(1e-6, 0.05, allow_nan=False),
    st.floats(0.01, 10.0, allow_nan=False),
    st.integers(0, 2**31),
)
def test_parse_emit_round_trip(n, k, delta, kappa, seed):
    cfg = config.RunConfig(pve_n=n, pve_k=k, pve_delta=delta, pve_kappa=kappa, seed=seed, mixed_kappa2=kappa / 10)
    assert config.parse(config.emit(cfg), config.RunConfig()) == cfg


@pytest.mark.parametrize(
    "text",
    [
        "[pve]\nk = many\n",
        "[nowhere]\nx = 1\n",
        "[pve]\nbogus = 1\n",
        "[run]\nscenario = dance\n",
        "[pve]\nk = 0\n",
        "[pve]\nmatrix = C\n",
        "not an ini",
    ],
)
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        config.parse(text)


def test_load_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nseed = 5\n")
    cfg = config.load(p, seed=None, workers=3)
    assert cfg.seed == 5 and cfg.workers == 3
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.ini")


def _report():
    r = Report("appendix-check", {"seed": 0})
    r.add("a", True, value=np.float64(1.5), name="payload")
    r.add("b", None, note="info")
    r.add("c", False, min_margin=-math.inf)
    r.add_series("s", "n", "mass", [(0, 1.0), (1, np.float32(0.5))])
    return r


def test_report_semantics_and_json():
    r = _report()
    assert not r.passed
    assert r.summary_lines() == ["PASS a", "INFO b", "FAIL c", "FAIL appendix-check"]
    d = json.loads(to_json(r))
    assert d["checks"][0]["data"] == {"value": 1.5, "name": "payload"}
    assert d["checks"][2]["data"]["min_margin"] == "-inf"
    assert d["series"]["s"]["points"] == [[0, 1.0], [1, 0.5]]
    empty = json.loads(to_json(Report("x", {})))
    assert empty["passed"] is True and empty["checks"] == []


def test_csv_and_plotdata():
    r = _report()
    files = to_csv(r)
    rows = list(csv.reader(io.StringIO(files["checks.csv"])))
    assert rows[0] == ["name", "passed", "margin_or_value"]
    assert rows[1] == ["a", "1", "1.5"] and rows[2][1] == ""
    assert len(list(csv.reader(io.StringIO(files["series.csv"])))) == 3
    assert to_plotdata(r)["s.dat"].splitlines() == ["# n mass", "0 1.0", "1 0.5"]


def test_emit_writes_timings_separately(tmp_path):
    r = _report()
    r.timings["total"] = 1.0
    names = sorted(p.name for p in emit(r, "json", tmp_path))
    assert names == ["report.json", "timings.json"]
    assert "total" not in (tmp_path / "report.json").read_text()
    with pytest.raises(ConfigError):
        emit(r, "xml", tmp_path)


def test_reports_are_deterministic(tmp_path):
    cfg = config.parse(FAST).replace(scenario="appendix-check")
    a, b = pipeline.run(cfg), pipeline.run(cfg)
    assert to_json(a) == to_json(b)
    assert a.passed and pipeline.exit_code(a) == 0


def test_gibbs_series_length(tmp_path):
    cfg = config.parse(FAST).replace(scenario="gibbs-mass")
    r = pipeline.run(cfg)
    assert r.passed, r.summary_lines()
    _, _, pts = r.series["mass-vs-n"]
    assert [p[0] for p in pts] == list(range(cfg.mass_n_max + 1))
    dat = to_plotdata(r)["mass-vs-n.dat"].splitlines()
    assert len(dat) == cfg.mass_n_max + 2


def test_numerical_errors_map_to_exit_three(monkeypatch):
    def boom(report, ctx):
        raise NumericalError("diverged")

    monkeypatch.setitem(pipeline.PARTS, "appendix-check", [("appendix", boom)])
    r = pipeline.run(config.RunConfig(scenario="appendix-check"))
    assert pipeline.exit_code(r) == 3
    assert r.summary_lines()[-2] == "ERROR NumericalError: diverged"


def _cli(tmp_path, *args, ini=FAST):
    p = tmp_path / "run.ini"
    p.write_text(ini)
    return cli.main([*args, "--config", str(p), "--out", str(tmp_path / "out")])


def test_cli_pass_and_outputs(tmp_path, capsys):
    assert _cli(tmp_path, "appendix-check", "--format", "csv") == 0
    out = capsys.readouterr().out
    assert out.splitlines()[:2] == ["PASS appendix-ratio", "PASS appendix-check"]
    assert (tmp_path / "out" / "checks.csv").exists()
    assert (tmp_path / "out" / "timings.json").exists()


def test_cli_failure_exit_one(tmp_path, capsys):
    ini = FAST + "[pve]\nk = 1\n"
    assert _cli(tmp_path, "construct-pve", ini=ini) == 1
    out = capsys.readouterr().out
    assert "FAIL construct-pve" in out
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["passed"] is False and rep["config"]["pve_k"] == 1


def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main(["dance"]) == 2
    assert _cli(tmp_path, "appendix-check", ini="[pve]\nk = zero\n") == 2
    assert cli.main(["appendix-check", "--config", str(tmp_path / "missing.ini")]) == 2
    capsys.readouterr()
