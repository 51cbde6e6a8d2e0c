"""Command-line surface: reports, exit codes, configuration errors."""

import json

import pytest

from birthdeath.app.cli import build_parser, load_config, main


def _error(stderr: str) -> dict:
    return json.loads(stderr[stderr.index('{\n  "detail"') :])


@pytest.mark.parametrize(
    "chain, expected",
    [("exit-geometric", "Exit"), ("entrance-geometric", "Entrance"), ("unit", "Natural")],
)
def test_classify(capsys, chain, expected):
    assert main(["--chain", chain, "classify"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["class"] == expected
    assert doc["schema"] == 1


def test_hitting_transform_on_unit_chain(capsys):
    assert main(["--chain", "unit", "hitting", "--i", "0", "--n", "2", "--s", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["transform"][0]["value"] == pytest.approx(0.2, rel=1e-12)
    assert doc["moments"]["mean"] == pytest.approx(3.0, rel=1e-12)
    assert doc["density"][0]["cdf"] == pytest.approx(0.0, abs=1e-12)


def test_csv_output(capsys):
    assert main(["--chain", "unit", "--format", "csv", "hitting", "--n", "3", "--s", "0.5,1"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# transform\ns,value,lower,upper\n")
    assert "# density" in out


def test_output_directory(tmp_path):
    out = tmp_path / "run"
    assert main(["--chain", "unit", "--out", str(out), "--format", "csv", "spectrum", "--kind", "absorbed", "--n", "4"]) == 0
    assert (out / "spectrum.json").exists()
    rows = (out / "spectrum_eigenvalues.csv").read_text().splitlines()
    assert rows[0] == "nu,lambda"
    assert len(rows) == 5


def test_sst_refused_on_natural_chain(capsys):
    assert main(["--chain", "unit", "sst"]) == 4
    err = _error(capsys.readouterr().err)
    assert err["exit_code"] == 4


def test_windowed_sst_accepts_any_chain(capsys):
    assert main(["--chain", "unit", "sst", "--N", "6", "--t", "0.5,2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["dual"]["window"] == 6


def test_malformed_config_file(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text("{ not json")
    assert main(["--config", str(path), "classify"]) == 2
    assert _error(capsys.readouterr().err)["exit_code"] == 2


def test_unknown_config_key(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"chain": "unit", "colour": "red"}))
    assert main(["--config", str(path), "classify"]) == 2
    detail = _error(capsys.readouterr().err)["detail"]
    assert detail[0]["loc"] == "colour"


def test_unknown_chain(capsys):
    assert main(["--chain", "no-such-chain", "classify"]) == 2


def test_undetermined_classification_exits_3(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    chain = {"family": "geometric", "a": {"base": 1, "ratio": 2}, "b": {"base": 2.0002, "ratio": 2}}
    path.write_text(json.dumps({"chain": chain, "policy": {"horizon": 200, "delta": 1e-6}}))
    assert main(["--config", str(path), "classify"]) == 3
    err = _error(capsys.readouterr().err)
    assert err["exit_code"] == 3
    assert err["detail"]["report"]["class"] == "Undetermined"


def test_inline_rates_in_config(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    chain = {"family": "geometric", "a": {"base": 1, "ratio": 1}, "b": {"base": 1, "ratio": 3}}
    path.write_text(json.dumps({"chain": chain}))
    assert main(["--config", str(path), "classify"]) == 0
    assert json.loads(capsys.readouterr().out)["class"] == "Exit"


def test_flags_override_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"chain": "unit", "s": [3.0]}))
    args = build_parser().parse_args(["--config", str(path), "--chain", "regular", "hitting", "--n", "inf"])
    cfg = load_config(args)
    assert cfg.chain == "regular"
    assert cfg.s == [3.0]
    assert cfg.n == float("inf")


def test_negative_state_rejected(capsys):
    assert main(["hitting", "--i", "-1", "--n", "2"]) == 2


def test_simulate_reports_ks(capsys):
    assert main(["--chain", "unit", "--seed", "5", "simulate", "--n", "2", "--samples", "4000", "--s", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert "ks" in doc
    assert doc["exact_transform"][0]["value"] == pytest.approx(0.2, rel=1e-12)


@pytest.mark.slow
def test_verify_quick_without_monte_carlo(tmp_path):
    assert main(["--out", str(tmp_path), "verify", "--quick", "--no-mc"]) == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["passed"] is True
    assert all(c["pass"] for c in doc["checks"] if c["hard"])
