from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from cantorspec import analysis
from cantorspec.cli import main, parse_config
from cantorspec.errors import ConfigError
from cantorspec.spectrum import SparseSpectrum

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


TOY = {"params": {"alpha": "1", "beta": "0"}, "schedule": {"M_list": [10]}, "S_max": 1000}


def test_build_writes_two_files_and_is_deterministic(tmp_path):
    cfg = _write(tmp_path, TOY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["build", "--config", cfg, "--out", str(a)]) == 0
    assert main(["build", "--config", cfg, "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["spectrum_l1.csv", "stage_l1.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    snap = json.loads((a / "stage_l1.json").read_text())
    assert snap["schema_version"] == 1
    assert snap["schedule"][0]["condition_report"]["prime_count"] == 4
    S = SparseSpectrum.from_json(snap["spectrum"])
    assert S.radius == 1000 and S[0].real == pytest.approx(snap["mass"])
    rows = list(csv.reader((a / "spectrum_l1.csv").open()))
    assert rows[0] == ["s", "re", "im"] and len(rows) == S.nnz + 1


def test_shipped_config_builds(tmp_path):
    assert main(["build", "--config", str(CONFIGS / "toy_single.json"), "--out", str(tmp_path)]) == 0


def test_bad_beta_exit_2(tmp_path, capsys):
    doc = json.loads(json.dumps(TOY))
    doc["params"]["beta"] = 1.2
    assert main(["build", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    assert "-1 < beta < 1" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d.pop("params"), "params"),
    (lambda d: d["params"].update(alpha="abc"), "params.alpha"),
    (lambda d: d["schedule"].update(M_list=[10, 5]), "increasing"),
    (lambda d: d.update(S_max=0), "S_max"),
    (lambda d: d.update(experiment={"k": 2, "l": 3, "p": 4, "q": 2}), "odd"),
])
def test_config_validation(mutate, msg):
    doc = json.loads(json.dumps(TOY))
    mutate(doc)
    with pytest.raises(ConfigError, match=msg):
        parse_config(doc)


def test_missing_config_exit_2(tmp_path):
    assert main(["build", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_budget_exit_3(tmp_path):
    doc = dict(TOY, budget=1e-30)
    assert main(["build", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 3
    assert not (tmp_path / "o").exists() or not any((tmp_path / "o").iterdir())


def test_verify_spectra_oracle_passes(tmp_path, capsys):
    assert main(["verify", "--suite", "spectra-oracle", "--config",
                 str(CONFIGS / "toy_single.json"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "verify_spectra-oracle.json").read_text())
    assert doc["passed"] and doc["report"]["scales"][0]["g_max_abs_diff"] < 1e-6
    assert doc["report"]["scales"][0]["h1_plus_h2_max_abs_diff"] < 1e-6
    assert "PASS spectra-oracle" in capsys.readouterr().out


def test_verify_decay_flat_spectrum_exit_4(tmp_path, capsys):
    flat = SparseSpectrum.from_half(np.full(8193, 0.25))
    spec_file = tmp_path / "flat.json"
    spec_file.write_text(json.dumps(flat.to_json()))
    doc = dict(TOY, verify={"decay": {"spectrum_file": str(spec_file), "certificate_S_max": 2000}})
    assert main(["verify", "--suite", "decay", "--config", _write(tmp_path, doc),
                 "--out", str(tmp_path)]) == 4
    rep = json.loads((tmp_path / "verify_decay.json").read_text())
    assert not rep["passed"]
    assert rep["report"]["fit"]["fitted_slope"] == pytest.approx(0.0, abs=1e-12)
    assert "decay slope" in capsys.readouterr().err


def test_verify_decay_accepts_stage_snapshot(tmp_path):
    cfg = _write(tmp_path, TOY)
    main(["build", "--config", cfg, "--out", str(tmp_path)])
    doc = dict(TOY, verify={"decay": {"spectrum_file": str(tmp_path / "stage_l1.json"),
                                      "certificate_S_max": 1000}})
    code = main(["verify", "--suite", "decay", "--config", _write(tmp_path, doc, "c2.json"),
                 "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "verify_decay.json").read_text())
    assert code == (0 if rep["passed"] else 4)
    assert all(c["passed"] for c in rep["report"]["certificates"])


def test_verify_stability_flags_preconditions(tmp_path, capsys):
    assert main(["verify", "--suite", "stability", "--config", _write(tmp_path, TOY),
                 "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify_stability.json").read_text())["report"]
    assert rep["preconditions_met"] is False
    assert "preconditions unmet" in rep["note"]
    assert rep["surrogate"] is True
    assert "preconditions unmet" in capsys.readouterr().out


def test_verify_regularity_exit_matches_report(tmp_path):
    doc = dict(TOY, verify={"regularity": {"points": 5, "translates_per_scale": 4}})
    code = main(["verify", "--suite", "regularity", "--config", _write(tmp_path, doc),
                 "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "verify_regularity.json").read_text())
    assert code == (0 if rep["passed"] else 4)
    assert len(rep["report"]["fit"]["points"]) == 5


def test_exponents_command(tmp_path, capsys):
    assert main(["exponents", "--config", _write(tmp_path, TOY), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "p_plus = 4.0" in out
    vals = json.loads((tmp_path / "exponents.json").read_text())["values"]
    assert vals["p_plus"] == analysis.critical_exponents(1, 0, 2)["p_plus"]


def test_restriction_command(tmp_path):
    doc = {"params": {"alpha": 1, "beta": 0}, "schedule": {"M_list": [10, 400]},
           "experiment": {"k": 1, "l": 2, "p": [6, 4], "q": 2}}
    cfg = _write(tmp_path, doc)
    assert main(["restriction", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    rows = list(csv.DictReader((tmp_path / "a" / "restriction.csv").open()))
    assert [float(r["p"]) for r in rows] == [6.0, 4.0]
    crit = analysis.critical_exponents(1, 0, 2)
    for r in rows:
        assert float(r["critical_p"]) == crit["p_plus"]
        assert float(r["lower_bound_constant"]) > 0
        assert float(r["ratio"]) > 0
        assert r["fitted_exponent"] == ""
    # p above p_+ is only reported; rerun is byte-identical
    assert main(["restriction", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for n in ("restriction.csv", "restriction.json"):
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_restriction_needs_experiment(tmp_path):
    assert main(["restriction", "--config", _write(tmp_path, TOY), "--out", str(tmp_path)]) == 2


def test_unknown_suite_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--suite", "nope", "--config", _write(tmp_path, TOY)])
    assert exc.value.code == 2


def test_atomic_write_leaves_no_temp_files(tmp_path, monkeypatch):
    from cantorspec import cli
    target = tmp_path / "x.json"
    cli.write_atomic(target, "one\n")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        cli.write_atomic(target, "two\n")
    assert target.read_text() == "one\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.json"]
