import json
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from sbir.cli import main
from sbir.config import ConfigError, load_config, parse_config

SMALL = """
[training]
max_epochs = 60
learning_rate = 3e-3

[sampler]
burn_in = 30
"""


def write_config(tmp_path, body, name="run.toml", small=True):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body) + (SMALL if small else ""))
    return path


def conjugate(tmp_path, algorithm="snpe-c", out="out", extra=""):
    return write_config(
        tmp_path,
        f"""
        seed = 3
        out = "{out}"
        num_samples = 200
        {extra}
        [prior]
        kind = "diagonal-gaussian"
        mean = [0.0, 0.0]
        std = [1.0, 1.0]

        [simulator]
        builtin = "identity-gaussian"
        noise_std = 0.5

        [observation]
        x = [1.0, -1.0]

        [algorithm]
        name = "{algorithm}"
        rounds = 1
        simulations = 1500
        hidden = [16, 16]
        n_flows = 2
        """,
        name=f"{algorithm}-{out}.toml",
    )


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), np.array([[float(v) for v in l.split(",")] for l in lines[1:]]).reshape(-1, len(lines[0].split(",")))


@pytest.fixture(scope="module")
def direct_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("direct")
    cfg = conjugate(tmp)
    assert main(["full", "--config", str(cfg)]) == 0
    return tmp, cfg


def test_full_writes_artifacts(direct_run):
    tmp, _ = direct_run
    out = tmp / "out"
    header, samples = read_csv(out / "samples.csv")
    assert header == ["theta_0", "theta_1"] and samples.shape == (200, 2)
    report = json.loads((out / "report.json").read_text())
    for r in report["rounds"]:
        assert r["valid"] + sum(r["invalid"].values()) == r["requested"]
    assert sorted(report["artifacts"]) == sorted(str(out / f) for f in ("posterior.json", "samples.csv", "report.json"))
    assert report["config"]["seed"] == 3


def test_full_rerun_byte_identical(direct_run, tmp_path):
    tmp, cfg = direct_run
    assert main(["full", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    for name in ("samples.csv", "posterior.json"):
        assert (tmp / "out" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_sample_and_logprob_roundtrip(direct_run, tmp_path, capsys):
    tmp, _ = direct_run
    ckpt = tmp / "out" / "posterior.json"
    s = tmp_path / "s.csv"
    assert main(["sample", "--checkpoint", str(ckpt), "--n", "2000", "--seed", "1", "--out", str(s)]) == 0
    _, samples = read_csv(s)
    assert samples.shape == (2000, 2)
    assert np.all(np.abs(samples.mean(axis=0) - [0.8, -0.8]) < 0.2)
    capsys.readouterr()
    assert main(["logprob", "--checkpoint", str(ckpt), "--theta", str(s)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "theta_0,theta_1,log_prob,normalized"
    vals = np.array([float(l.split(",")[2]) for l in lines[1:]])
    assert vals.size == 2000 and np.all(np.isfinite(vals))
    assert all(l.endswith(",true") for l in lines[1:])


def test_sample_zero_rows(direct_run, tmp_path):
    tmp, _ = direct_run
    s = tmp_path / "empty.csv"
    assert main(["sample", "--checkpoint", str(tmp / "out" / "posterior.json"), "--n", "0", "--out", str(s)]) == 0
    assert s.read_text() == "theta_0,theta_1\n"


def test_missing_checkpoint_exit_2(tmp_path):
    assert main(["sample", "--checkpoint", str(tmp_path / "none.json"), "--n", "3"]) == 2


def test_logprob_outside_support(tmp_path):
    cfg = write_config(
        tmp_path,
        """
        seed = 1
        out = "box"
        num_samples = 10
        [prior]
        kind = "uniform-box"
        low = [-1.0]
        high = [1.0]
        [simulator]
        builtin = "identity-gaussian"
        [observation]
        x = [0.3]
        [algorithm]
        name = "snpe-c"
        simulations = 300
        hidden = [8, 8]
        n_flows = 1
        """,
    )
    assert main(["full", "--config", str(cfg)]) == 0
    theta = tmp_path / "theta.csv"
    theta.write_text("theta_0\n0.2\n1.5\n")
    out = tmp_path / "lp.csv"
    assert main(["logprob", "--config", str(cfg), "--theta", str(theta), "--out", str(out)]) == 0
    rows = [l.split(",") for l in out.read_text().splitlines()[1:]]
    assert np.isfinite(float(rows[0][1])) and rows[1][1] == "-inf"


def test_strict_on_likelihood_family(tmp_path):
    cfg = conjugate(tmp_path, "snle", extra="")
    assert main(["full", "--config", str(cfg)]) == 0
    theta = tmp_path / "t.csv"
    theta.write_text("0.1,0.2\n")
    ckpt = str(tmp_path / "out" / "posterior.json")
    assert main(["logprob", "--checkpoint", ckpt, "--theta", str(theta), "--strict"]) == 3
    assert main(["logprob", "--checkpoint", ckpt, "--theta", str(theta), "--out", str(tmp_path / "o.csv")]) == 0
    assert (tmp_path / "o.csv").read_text().splitlines()[1].endswith(",false")


def test_unknown_algorithm_exit_2(tmp_path, capsys):
    cfg = conjugate(tmp_path, "snpe-z")
    assert main(["full", "--config", str(cfg)]) == 2
    assert "algorithm.name" in capsys.readouterr().err


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"bogus": 1}, "bogus"),
        ({"simulator": {"builtin": "nope"}}, "simulator.builtin"),
        ({"algorithm": {"name": "snle", "rate": 2}}, "algorithm.rate"),
        ({"training": {"patience": 0}}, "training"),
        ({"prior": {"kind": "laplace"}}, "prior"),
    ],
)
def test_config_fail_closed(patch, field):
    raw = {
        "seed": 0,
        "prior": {"kind": "diagonal-gaussian", "mean": [0.0], "std": [1.0]},
        "simulator": {"builtin": "identity"},
        "observation": {"x": [0.0]},
        "algorithm": {"name": "snle"},
    }
    raw.update(patch)
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.field == field


def test_seed_mandatory():
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"prior": {"kind": "diagonal-gaussian", "mean": [0.0], "std": [1.0]}, "simulator": {"builtin": "identity"}})


def test_runtime_failure_exit_4(tmp_path):
    cfg = write_config(
        tmp_path,
        """
        seed = 0
        [prior]
        kind = "diagonal-gaussian"
        mean = [-0.5]
        std = [1.0]
        [simulator]
        builtin = "nan-below-zero"
        [observation]
        x = [0.3]
        [algorithm]
        name = "snpe-c"
        simulations = 300
        """,
    )
    assert main(["full", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4


def simulate_records(tmp_path, sim_block, name, n=8, prior="mean = [0.0, 0.0]\nstd = [1.0, 1.0]"):
    cfg = write_config(
        tmp_path,
        f"""
seed = 5
out = "{name}"
[prior]
kind = "diagonal-gaussian"
{prior}
[simulator]
{sim_block}
""",
        name=f"{name}.toml",
        small=False,
    )
    assert main(["simulate", "--config", str(cfg), "--n", str(n)]) == 0
    return [json.loads(l) for l in (tmp_path / name / "simulations.jsonl").read_text().splitlines()]


def test_simulate_identity(tmp_path):
    recs = simulate_records(tmp_path, 'builtin = "identity"', "ident", n=5)
    assert len(recs) == 5 and all(r["x"] == r["theta"] and r["valid"] for r in recs)


def test_simulate_failures_flagged(tmp_path):
    recs = simulate_records(tmp_path, 'builtin = "nan-below-zero"', "fail", n=40)
    for r in recs:
        assert r["valid"] == (r["theta"][0] >= 0)
        assert (r["x"] is None) == (not r["valid"])
        assert r["reason"] in ("", "nan")
    assert any(not r["valid"] for r in recs) and any(r["valid"] for r in recs)


def test_simulate_external_equals_identity(tmp_path):
    a = simulate_records(tmp_path, 'builtin = "identity"', "a")
    cmd = json.dumps([sys.executable, "-m", "sbir.echo_sim"])
    b = simulate_records(tmp_path, f"command = {cmd}\nworkers = 2", "b")
    assert a == b
    assert (tmp_path / "a" / "simulations.jsonl").read_bytes() == (tmp_path / "b" / "simulations.jsonl").read_bytes()


def test_simulate_workers_identical(tmp_path):
    a = simulate_records(tmp_path, 'builtin = "identity-gaussian"\nworkers = 1', "w1", n=30)
    b = simulate_records(tmp_path, 'builtin = "identity-gaussian"\nworkers = 4', "w4", n=30)
    assert a == b


def test_abc_full(tmp_path):
    cfg = conjugate(tmp_path, "abc", out="abc")
    text = cfg.read_text().replace("simulations = 1500", "simulations = 5000")
    cfg.write_text(text)
    assert main(["full", "--config", str(cfg)]) == 0
    _, samples = read_csv(tmp_path / "abc" / "samples.csv")
    assert samples.shape == (50, 2)
    assert not (tmp_path / "abc" / "posterior.json").exists()


def test_console_entrypoint(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sbir", "sample", "--n", "1"], capture_output=True, text=True)
    assert proc.returncode == 2 and "checkpoint" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "sbir", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = [")
    with pytest.raises(ConfigError):
        load_config(bad)
