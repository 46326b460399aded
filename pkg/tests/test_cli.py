import csv
import subprocess
import sys

import pytest

from mpcrange import cli
from mpcrange.constants import NS

SMALL = """
[experiment]
sweep_k = 4, 8
sweep_sigma_ratio = 0.0, 0.5
angles = 36
radii = 0.5m, 1m
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return str(p)


def _obs(tmp_path, text, name="obs.txt"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_observations():
    d, s = cli.parse_observations("# header\n1, 0.1\n\n-2  # comment\n", default_sigma_ns=0.2)
    assert d.tolist() == pytest.approx([1 * NS, -2 * NS])
    assert s.tolist() == pytest.approx([0.1 * NS, 0.2 * NS])


@pytest.mark.parametrize(
    "text,msg",
    [("", "no observations"), ("1\nabc\n", ":2:"), ("1,2,3\n", ":1:"), ("1,-1\n", "non-negative"), ("nan\n", "finite")],
)
def test_parse_observations_errors(text, msg):
    with pytest.raises(cli.InputError, match=msg):
        cli.parse_observations(text, "f")


def test_estimate_async_umvue(tmp_path, capsys):
    code = cli.main(["estimate", _obs(tmp_path, "1\n4\n2\n"), "--async", "--method", "umvue"])
    out = capsys.readouterr().out
    assert code == cli.EXIT_OK
    assert "d_hat_m=0.899377" in out
    assert "epsilon_hat_ns=2.500000" in out


def test_estimate_sync_default(tmp_path, capsys):
    assert cli.main(["estimate", _obs(tmp_path, "1\n-4\n2\n"), "--sync"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "method=SyncUMVUE" in out and "epsilon_hat_ns" not in out


def test_estimate_noisy(tmp_path, capsys):
    path = _obs(tmp_path, "1,0.1\n4,0.1\n2,0.1\n-1,0.1\n")
    assert cli.main(["estimate", path, "--async", "--method", "noisy"]) == cli.EXIT_OK
    assert "converged=true" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["estimate", _obs(tmp_path, "")]) == cli.EXIT_USAGE
    assert cli.main(["estimate", _obs(tmp_path, "1\nx\n")]) == cli.EXIT_USAGE
    assert "obs.txt:2" in capsys.readouterr().err
    assert cli.main(["estimate", str(tmp_path / "missing.txt")]) == cli.EXIT_USAGE
    assert cli.main(["estimate", _obs(tmp_path, "1\n"), "--async"]) == cli.EXIT_DOMAIN
    assert "need ≥2 observations" in capsys.readouterr().err
    solver = ["--method", "noisy", "--sigma", "0.1", "--max-iterations", "1", "--multistart", "1"]
    assert cli.main(["estimate", _obs(tmp_path, "1\n4\n2\n"), *solver]) == cli.EXIT_SOLVER
    assert cli.main(["bogus"]) == cli.EXIT_USAGE
    assert cli.main(["sweep"]) == cli.EXIT_USAGE


def test_bad_config(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[room]\nheight = 3ns\n")
    assert cli.main(["config", "--config", str(p)]) == cli.EXIT_USAGE


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def test_sweep_csv(tmp_path, small_cfg):
    out = tmp_path / "a"
    assert cli.main(["sweep", "--axis", "k", "--config", small_cfg, "--trials", "300", "--out", str(out)]) == 0
    path = out / "sweep_k.csv"
    assert _header(path) == ["axis", "method", "rel_bias", "rel_rmse", "trials", "seed"]
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 2 * 6
    assert (out / "plot_sweep_k.py").exists()
    assert not (out / "sweep_k.png").exists()


def test_outputs_byte_identical(tmp_path, small_cfg):
    args = ["sweep", "--axis", "sigma", "--config", small_cfg, "--trials", "200", "--threads", "2"]
    cli.main(args + ["--out", str(tmp_path / "r1")])
    cli.main(args[:-2] + ["--threads", "1", "--out", str(tmp_path / "r2")])
    a = (tmp_path / "r1" / "sweep_sigma.csv").read_bytes()
    assert a == (tmp_path / "r2" / "sweep_sigma.csv").read_bytes()
    cli.main(args + ["--seed", "2", "--out", str(tmp_path / "r3")])
    assert a != (tmp_path / "r3" / "sweep_sigma.csv").read_bytes()


def test_room_csv(tmp_path):
    assert cli.main(["room", "--mode", "kcount", "--observers", "1", "--out", str(tmp_path)]) == 0
    assert _header(tmp_path / "heatmap.csv") == ["x", "y", "value", "status"]
    rows = list(csv.DictReader(open(tmp_path / "heatmap.csv")))
    assert len(rows) > 1000
    for r in rows:
        assert r["status"] in ("ok", "no_common")
        assert float(r["value"]) == (0 if r["status"] == "no_common" else float(r["value"]))
        assert float(r["value"]) >= 0


def test_circle_csv_env_dir(tmp_path, monkeypatch, small_cfg):
    monkeypatch.setenv("MPCRANGE_OUTPUT_DIR", str(tmp_path))
    assert cli.main(["circle", "--config", small_cfg]) == 0
    assert _header(tmp_path / "circle.csv") == ["d", "method", "rmse", "rel_rmse"]
    methods = {r["method"] for r in csv.DictReader(open(tmp_path / "circle.csv"))}
    assert methods == {"SyncUMVUE", "AsyncUMVUE"}


def test_circle_noise_adds_noisy_mle(tmp_path, small_cfg):
    args = ["circle", "--config", small_cfg, "--noise", "--trials", "3", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    methods = {r["method"] for r in csv.DictReader(open(tmp_path / "circle.csv"))}
    assert {"SyncNoisyMLE", "AsyncNoisyMLE"} <= methods


def test_selftest(capsys):
    assert cli.main(["selftest"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_config_round_trip(capsys):
    assert cli.main(["config", "--seed", "9", "--epsilon-ns", "2"]) == 0
    text = capsys.readouterr().out
    assert "seed = 9" in text and "epsilon = 2e-09s" in text


def test_module_entry_point(tmp_path):
    path = _obs(tmp_path, "1\n4\n2\n")
    r = subprocess.run([sys.executable, "-m", "mpcrange", "estimate", path, "--async"], capture_output=True, text=True)
    assert r.returncode == 0 and "d_hat_m=0.899377" in r.stdout
