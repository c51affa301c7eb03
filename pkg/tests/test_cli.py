import csv
import json
import math

import pytest

from emitqec import cli, runio


def rows(path):
    with open(path) as fh:
        fh.readline()
        return list(csv.DictReader(fh))


def test_config_include_and_override(tmp_path):
    (tmp_path / "base.ini").write_text("[run]\nalpha = 0.3\nd = 4 6 8\nseed = 7\n[timing]\nT_link = 1e5\n")
    (tmp_path / "run.ini").write_text("[run]\ninclude = base.ini\nes = ES-5\npnr = no\np = linspace(0.001, 0.002, 3)\n")
    cfg = runio.load_config(tmp_path / "run.ini", seed=9)
    assert cfg.seed == 9 and cfg.d == [4, 6, 8] and cfg.alpha == [0.3]
    assert cfg.p == pytest.approx([0.001, 0.0015, 0.002])
    assert cfg.timing.T_link == 1e5
    assert cfg.hardware.name == "ES-5" and cfg.hardware.pnr is False and cfg.hardware.alpha == 0.3


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nprotocol = teleport\n")
    with pytest.raises(runio.ConfigError):
        runio.load_config(bad)
    bad.write_text("[run]\nes = ES-42\n")
    with pytest.raises(runio.ConfigError):
        runio.load_config(bad)
    bad.write_text("[run]\nshots = 3\n")
    with pytest.raises(runio.ConfigError):
        runio.load_config(bad)
    loop = tmp_path / "loop.ini"
    loop.write_text("[run]\ninclude = loop.ini\n")
    with pytest.raises(runio.ConfigError):
        runio.load_config(loop)


def test_csv_schema_versions(tmp_path):
    path = runio.write_csv(tmp_path / "q.csv", "qec", [{"p": 0.1, "d": 4}])
    assert runio.read_csv(path, "qec") == [{"p": "0.1", "d": "4"}]
    with pytest.raises(runio.SchemaError):
        runio.read_csv(path, "protocols")
    path.write_text(path.read_text().replace("v1", "v2"))
    with pytest.raises(runio.SchemaError):
        runio.read_csv(path, "qec")


def test_oracle_command(tmp_path):
    assert cli.main(["oracle", "--alpha", "0.25", "--bunching", "--out", str(tmp_path)]) == 0
    out = rows(tmp_path / "oracle.csv")
    assert len(out) == 12
    for r in out:
        if (r["protocol"], r["pnr"]) != ("dc_ghz", "False"):
            assert float(r["P_sim"]) == pytest.approx(float(r["P_oracle"]), abs=1e-9)


def test_protocols_sweep_ideal_gates(tmp_path):
    code = cli.main(["protocols", "--es", "ES-2", "--alpha", "0.1 0.5", "--p", "0",
                     "--out", str(tmp_path)])
    assert code == 0
    out = rows(tmp_path / "protocols.csv")
    assert [float(r["alpha"]) for r in out] == [0.1, 0.5]
    assert all(r["es"] == "ES-2" and r["version"] for r in out)


def test_qec_rows_reproducible(tmp_path):
    args = ["qec", "--es", "ES-2", "--p", "0.002", "--d", "4", "--shots", "300", "--seed", "11"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--threads", "3", "--out", str(tmp_path / "b")]) == 0
    a, b = rows(tmp_path / "a" / "qec.csv"), rows(tmp_path / "b" / "qec.csv")
    assert a[0]["failures"] == b[0]["failures"] and a[0]["point_seed"] == b[0]["point_seed"]
    r = a[0]
    assert float(r["p_L"]) == int(r["failures"]) / 300
    assert float(r["sigma"]) == pytest.approx(math.sqrt(float(r["p_L"]) * (1 - float(r["p_L"])) / 300))


def test_fit_command_reports_error_json(tmp_path):
    path = runio.write_csv(tmp_path / "qec.csv", "qec",
                           [{"p": 0.001, "d": 4, "n_shots": 10, "failures": 1}])
    assert cli.main(["fit", str(path), "--out", str(tmp_path)]) == 0
    assert "error" in json.loads((tmp_path / "fit.json").read_text())


def test_bunching_without_pnr_is_rejected(tmp_path, capsys):
    assert cli.main(["oracle", "--no-pnr", "--bunching", "--out", str(tmp_path)]) == 2
    assert "photon-number-resolving" in capsys.readouterr().err
