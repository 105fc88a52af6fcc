import csv
import json
import textwrap

import pytest

from kasplab import cli

QUICK = """\
name = "quick"
seed = 11
checks = ["deficiency", "spectrum", "adequacy", "finmod-battery"]

[operator]
kind = "first_order"
potential = "x"

[grid]
half_width = 20.0
n_points = 801

[spectrum]
count = 5
reference = "sqrt(2*x)"
rtol = 1e-2

[cutoff]
rho = "abs"
indices = [1, 2, 3]

[finmod]
instances = 10
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def _report(path):
    return json.loads(path.read_text())


def test_run_all_pass_writes_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, QUICK)
    code = cli.main(["run", str(cfg), "--out-dir", str(tmp_path / "out"), "--plots"])
    assert code == 0
    rep = _report(tmp_path / "out" / "report.json")
    assert rep["schema_version"] == 1 and rep["all_passed"]
    assert set(rep["checks"]) == {"deficiency", "spectrum", "adequacy", "finmod-battery"}
    assert rep["provenance"]["seed"] == 11
    with open(tmp_path / "out" / "spectra.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "eigenvalue", "domain_tag"]
    assert len(rows) == 11
    assert (tmp_path / "out" / "plots.svg").read_text().startswith("<svg")
    assert "quick: PASS" in capsys.readouterr().out
    # no temporary files left behind by the atomic writes
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["plots.svg", "report.json", "spectra.csv"]


def test_report_is_deterministic(tmp_path):
    cfg = _write(tmp_path, QUICK)
    texts = []
    for j in range(2):
        out = tmp_path / f"r{j}.json"
        assert cli.main(["run", str(cfg), "--json-out", str(out), "--csv-out", str(tmp_path / f"s{j}.csv")]) == 0
        rep = _report(out)
        rep["provenance"].pop("wall_clock_seconds")
        texts.append(json.dumps(rep, sort_keys=True))
    assert texts[0] == texts[1]


def test_every_numeric_result_carries_tolerance(tmp_path):
    cfg = _write(tmp_path, QUICK)
    out = tmp_path / "r.json"
    cli.main(["run", str(cfg), "--json-out", str(out), "--csv-out", str(tmp_path / "s.csv")])
    rep = _report(out)
    assert rep["checks"]["deficiency"]["tolerance"] == 1e-10
    assert rep["checks"]["spectrum"]["tolerance"] == 1e-2
    assert rep["checks"]["adequacy"]["scaled_window"] if "scaled_window" in rep["checks"]["adequacy"] else True
    assert all("tolerance" in v for k, v in rep["checks"]["finmod-battery"].items() if k != "note"
               and isinstance(v, dict))
    assert rep["provenance"]["tolerances"]["exact_identities"] == 1e-12


def test_deficiency_config_exit_codes(tmp_path):
    line = _write(tmp_path, """\
        checks = ["deficiency"]
        [operator]
        potential = "x"
        """, "line.toml")
    half = _write(tmp_path, """\
        checks = ["deficiency"]
        [operator]
        potential = "x"
        interval = ["0", "inf"]
        """, "half.toml")
    assert cli.main(["run", str(line), "--out-dir", str(tmp_path / "a")]) == 0
    assert _report(tmp_path / "a" / "report.json")["checks"]["deficiency"]["esa"] is True
    assert cli.main(["run", str(half), "--out-dir", str(tmp_path / "b")]) == 1
    rep = _report(tmp_path / "b" / "report.json")
    assert rep["checks"]["deficiency"]["esa"] is False
    assert (rep["checks"]["deficiency"]["n_plus"], rep["checks"]["deficiency"]["n_minus"]) == (0, 1)


def test_malformed_potential_reports_line(tmp_path, capsys):
    cfg = _write(tmp_path, """\
        name = "bad"
        checks = ["deficiency"]

        [operator]
        kind = "first_order"
        potential = "x +"
        """)
    assert cli.main(["run", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "line 6" in err and "column 4" in err


@pytest.mark.parametrize("body,fragment", [
    ('checks = ["nonsense"]\n', "unknown checks"),
    ('checks = ["spectrum"]\n[operator]\npotential = "x"\n', "[grid]"),
    ('checks = ["adequacy"]\n[grid]\nn_points = 11\n', "[cutoff]"),
    ('checks = ["deficiency"]\n[operator]\nkind = "dirac"\n', "unknown operator kind"),
    ('checks = [\n', "cfg.toml"),
    ('checks = ["deficiency"]\n[operator]\ninterval = ["0"]\n', "interval"),
])
def test_config_errors_exit_2(tmp_path, capsys, body, fragment):
    cfg = _write(tmp_path, body)
    assert cli.main(["run", str(cfg)]) == 2
    assert fragment in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.toml")]) == 2


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["run"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 2


def test_deficiency_subcommand(tmp_path, capsys):
    assert cli.main(["deficiency", "i_d_dx + x"]) == 0
    assert "(0, 0)" in capsys.readouterr().out
    out = tmp_path / "d.json"
    assert cli.main(["deficiency", "i_d_dx + x", "--interval", "0,inf", "--json-out", str(out)]) == 1
    assert _report(out)["deficiency"]["n_minus"] == 1
    assert cli.main(["deficiency", "-d2_dx2", "--interval", "0,inf"]) == 1
    assert cli.main(["deficiency", "i_d_dx + x +"]) == 2
    assert cli.main(["deficiency", "i_d_dx", "--interval", "0"]) == 2


def test_deficiency_negative_interval_and_operator(capsys):
    assert cli.main(["deficiency", "i_d_dx + x^3", "--interval", "-inf,inf"]) == 0
    assert cli.main(["deficiency", "-d2_dx2 + x^2", "--interval", "-inf,inf"]) == 0
    assert cli.main(["deficiency", "--interval", "-inf,0", "i_d_dx + x"]) == 1


def test_spectrum_subcommand(tmp_path, capsys):
    cfg = _write(tmp_path, QUICK)
    assert cli.main(["spectrum", str(cfg)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "index,eigenvalue,domain_tag" and len(lines) == 11
    out = tmp_path / "s.csv"
    assert cli.main(["spectrum", str(cfg), "--csv-out", str(out), "--grid-n", "1601"]) == 0
    assert '"L=20,n=1601"' in out.read_text()


def test_overrides_change_grid_and_seed(tmp_path):
    cfg = _write(tmp_path, QUICK)
    out = tmp_path / "r.json"
    cli.main(["run", str(cfg), "--json-out", str(out), "--csv-out", str(tmp_path / "s.csv"),
              "--half-width", "15", "--refine", "1", "--seed", "5"])
    prov = _report(out)["provenance"]
    assert prov["grid"] == {"half_width": 15.0, "n_points": 801, "refine": 1}
    assert prov["seed"] == 5


def test_reference_mismatch_fails(tmp_path):
    cfg = _write(tmp_path, QUICK.replace('reference = "sqrt(2*x)"', 'reference = "sqrt(3*x)"'))
    assert cli.main(["run", str(cfg), "--out-dir", str(tmp_path)]) == 1
    rep = _report(tmp_path / "report.json")
    assert rep["checks"]["spectrum"]["verdict"] is False
    assert rep["checks"]["deficiency"]["verdict"] is True


def test_batch_run_writes_per_scenario_dirs(tmp_path):
    a = _write(tmp_path, 'name = "a"\nchecks = ["finmod-battery"]\n[finmod]\ninstances = 3\n', "a.toml")
    b = _write(tmp_path, 'name = "b"\nchecks = ["finmod-battery"]\n[finmod]\ninstances = 3\n', "b.toml")
    assert cli.main(["run", str(a), str(b), "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "a" / "report.json").exists()
    assert (tmp_path / "o" / "b" / "report.json").exists()
    assert cli.main(["run", str(a), str(b), "--json-out", str(tmp_path / "x.json")]) == 2


def test_nonfinite_values_are_sanitized():
    text = cli.dumps_report({"a": float("inf"), "b": [float("nan"), -float("inf")], "c": 1})
    assert json.loads(text) == {"a": "inf", "b": ["nan", "-inf"], "c": 1}
