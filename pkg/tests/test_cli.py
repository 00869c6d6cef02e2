import json

import pytest

from rsbound import cli
from rsbound import exact_gibbs as eg


def _cfg(tmp_path, **data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return str(p)


def test_unknown_key_is_a_usage_error(tmp_path, capsys):
    assert cli.main(["entropy", "--config", _cfg(tmp_path, bogus=1), "--out", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_probe_rejects_large_delta(tmp_path):
    assert cli.main(["probe", "--config", _cfg(tmp_path, delta=0.3), "--out", str(tmp_path)]) == 2


def test_threshold_needs_grid(tmp_path):
    assert cli.main(["threshold", "--out", str(tmp_path)]) == 2


def test_mismatched_command(tmp_path):
    assert cli.main(["de", "--config", _cfg(tmp_path, command="probe"), "--out", str(tmp_path)]) == 2


def test_bad_workers(tmp_path):
    assert cli.main(["entropy", "--workers", "0", "--out", str(tmp_path)]) == 2


def test_entropy_output_is_headed_and_deterministic(tmp_path):
    cfg = _cfg(tmp_path, channel={"variant": "BSC", "eps": 0.1}, n=8)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["entropy", "--config", cfg, "--seed", "4", "--out", str(a)]) == 0
    assert cli.main(["entropy", "--config", cfg, "--seed", "4", "--workers", "3", "--out", str(b)]) == 0
    ja = json.loads((a / "entropy.json").read_text())
    assert (a / "entropy.json").read_bytes() == (b / "entropy.json").read_bytes()
    assert ja["seed"] == 4 and len(ja["config_sha256"]) == 64
    assert ja["entropy_bits"] == pytest.approx(ja["entropy"] / 0.6931471805599453)


def test_probe_csv_is_byte_identical(tmp_path):
    cfg = _cfg(tmp_path, channel={"variant": "BSC", "eps": 0.2}, ensemble={"lam": {3: 1.0}, "P": {4: 1.0}}, n_list=[8], n_mc=2, draws=2, N=200, iters=5)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["probe", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["probe", "--config", cfg, "--out", str(b)]) == 0
    text = (a / "probe.csv").read_text()
    assert text.startswith("# config_sha256=")
    assert text == (b / "probe.csv").read_text()


def test_verify_skip_and_pass(tmp_path, capsys):
    cfg = _cfg(tmp_path, channels=["BEC"], seeds=[1], suites=["series", "extrinsic"])
    assert cli.main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "SKIP" in out


def test_verify_catches_injected_fault(tmp_path, monkeypatch, capsys):
    cfg = _cfg(tmp_path, channels=["BSC"], seeds=[1], suites=["correlation"])
    assert cli.main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0
    monkeypatch.setattr(eg, "G2_SIGN", -1.0)
    assert cli.main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_de_writes_population(tmp_path):
    cfg = _cfg(tmp_path, channel={"variant": "BEC", "eps": 0.4}, N=1000, iters=20, n_mc=2000)
    assert cli.main(["de", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "population.csv").exists()
    assert "h_rs" in json.loads((tmp_path / "de.json").read_text())


def test_threshold_small_run(tmp_path, capsys):
    cfg = _cfg(tmp_path, channel={"variant": "BEC"}, eps_grid=[0.46, 0.5], N=2000, iters=60, n_mc=20000, bisect_tol=0.01)
    assert cli.main(["threshold", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("threshold ")
    lines = (tmp_path / "threshold.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256=") and lines[1].startswith("# seed=")
