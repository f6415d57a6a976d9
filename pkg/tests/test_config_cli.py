import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igff.cli import main
from igff.config import ConfigError, ExperimentConfig, config_from_dict, parse_config, serialize_config

MINIMAL = """
kind: analytics
params: {sigma: [2.0, 1.0], lambda: [0.5, 1.0]}
beta: [0.5, 1.5]
N: [8]
"""


def _read(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


# ---------------------------------------------------------------- config

def test_minimal_config():
    cfg = parse_config(MINIMAL)
    assert cfg.sigma == [2.0, 1.0] and cfg.lam == [0.5, 1.0]
    assert cfg.rho == 0.2 and cfg.rpc.K == 512 and cfg.rounding == "floor"


def test_lambda_order_reported_at_path():
    with pytest.raises(ConfigError) as e:
        parse_config("params: {sigma: [1, 1, 1], lambda: [0.5, 0.4, 1.0]}")
    assert ("params.lambda", "lambda not strictly increasing") in e.value.problems


def test_every_violation_collected():
    raw = {"params": {"sigma": [1.0], "lambda": [1.0]}, "N": [1, 65], "rho": 0, "bogus": 3,
           "field_samples": True, "rpc": {"tail": "drop", "K": 1.5}}
    with pytest.raises(ConfigError) as e:
        config_from_dict(raw)
    paths = {p for p, _ in e.value.problems}
    assert {"N[0]", "N[1]", "rho", "bogus", "field_samples", "rpc.tail", "rpc.K"} <= paths


def test_bool_is_not_an_integer():
    with pytest.raises(ConfigError, match="expected an integer"):
        config_from_dict({"master_seed": True})


def test_bad_yaml():
    with pytest.raises(ConfigError):
        parse_config("params: [")


@given(st.lists(st.floats(0.1, 3.0), min_size=1, max_size=4), st.integers(0, 2**64 - 1),
       st.sampled_from(["analytics", "simulate", "rpc", "verify"]))
def test_round_trip(sig, seed, kind):
    sig = sorted(set(sig), reverse=True)
    lam = [float(x) for x in np.linspace(0, 1, len(sig) + 1)[1:]]
    cfg = ExperimentConfig(kind=kind, sigma=sig, lam=lam, master_seed=seed)
    back = parse_config(serialize_config(cfg))
    assert back == cfg


# ---------------------------------------------------------------- CLI

@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(MINIMAL)
    return p


def test_cli_analytics_and_plotdata(conf, tmp_path):
    out = tmp_path / "out"
    assert main(["analytics", "--config", str(conf), "--out", str(out)]) == 0
    assert (out / "report-analytics.json").exists()
    assert main(["plotdata", "--config", str(conf), "--out", str(out)]) == 0
    hdr, speed = _read(out / "plot_speed.csv")
    assert hdr == ["s", "J", "Jhat"]
    assert np.all(speed[:, 2] >= speed[:, 1] - 1e-12)
    hdr, cdf = _read(out / "plot_overlap_cdf_beta1.5.csv")
    assert hdr[0] == "r" and hdr[-1] == "cdf_closed"
    for col in cdf[:, 1:].T:
        assert np.all((col >= 0) & (col <= 1))
        assert np.all(np.diff(col) >= 0)


def test_cli_config_error_exit(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("params: {sigma: [1, 1, 1], lambda: [0.5, 0.4, 1.0]}\n")
    assert main(["analytics", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["analytics", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_cli_flags_override(conf, tmp_path):
    out = tmp_path / "o"
    assert main(["analytics", "--config", str(conf), "--beta", "0.7", "--out", str(out)]) == 0
    rep = json.loads((out / "report-analytics.json").read_text())
    assert rep["config"]["beta"] == [0.7]


def test_cli_failing_gate_exit(conf, tmp_path):
    # the kink test at the critical temperature does not hold for finite differences
    assert main(["verify", "--config", str(conf), "--gates", "5", "--out", str(tmp_path / "v")]) == 1


def test_empty_beta_list_noted(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(MINIMAL.replace("beta: [0.5, 1.5]", "beta: []"))
    out = tmp_path / "o"
    assert main(["plotdata", "--config", str(p), "--out", str(out)]) == 0
    assert not list(out.glob("plot_overlap_cdf_*.csv"))
    assert (out / "plot_speed.csv").exists()
    assert "note: empty beta list" in capsys.readouterr().out


def test_runs_are_reproducible(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(MINIMAL)
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["simulate", "--config", str(p), "--samples", "4", "--out", str(out)]) == 0
        outs.append(out)
    names = sorted(f.name for f in outs[0].iterdir() if not f.name.startswith("timings"))
    assert names == sorted(f.name for f in outs[1].iterdir() if not f.name.startswith("timings"))
    for n in names:
        a, b = (outs[0] / n).read_bytes(), (outs[1] / n).read_bytes()
        if n.startswith("report"):
            a, b = json.loads(a), json.loads(b)
            a["config"].pop("out")
            b["config"].pop("out")
        assert a == b, n
