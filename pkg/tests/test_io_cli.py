import csv
import json
import math

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from tensorfmri import activation as act
from tensorfmri import config as cfgmod
from tensorfmri import io
from tensorfmri.cli import main, parse_ranks
from tensorfmri.engine import ChainRunner, RunConfig, run_chain
from tensorfmri.simulate import Dataset

SMALL = dict(
    n_subjects=3, n_time=20, n_regions=2, ndim=2, period=10, dim_rate=3.0, dim_floor=2,
    pairs=[[0, 1, 0.9]], iterations=60, burnin=10, n_inner=10, checkpoint_every=10,
)


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    assert invoke("simulate", "--config", cfg, "--seed", 4, "--output", root / "data").exit_code == 0
    res = invoke("fit", root / "data", "--config", cfg, "--ranks", "1..5", "--baseline", "--output", root / "chains")
    assert res.exit_code == 0, res.output
    res = invoke("postprocess", root / "chains", "--dataset", root / "data", "--config", cfg, "--output", root / "results")
    assert res.exit_code == 0, res.output
    return root


# dataset files

def test_dataset_round_trip(tiny_dataset, tmp_path):
    io.write_dataset(tiny_dataset, tmp_path)
    back = io.read_dataset(tmp_path)
    for a, b in zip(tiny_dataset.responses, back.responses):
        assert a.tobytes() == b.tobytes()
    assert back.covariate.tobytes() == tiny_dataset.covariate.tobytes()
    for a, b in zip(tiny_dataset.truth.coefficients, back.truth.coefficients):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.truth.precision, tiny_dataset.truth.precision)
    assert io.dataset_hash(back) == io.dataset_hash(tiny_dataset)


def test_dataset_tampering_detected(tiny_dataset, tmp_path):
    io.write_dataset(tiny_dataset, tmp_path)
    blob = tmp_path / "y_s000_r00.f64"
    raw = bytearray(blob.read_bytes())
    raw[0] ^= 1
    blob.write_bytes(bytes(raw))
    with pytest.raises(io.FormatError):
        io.read_dataset(tmp_path)
    blob.write_bytes(bytes(raw[:-8]))
    with pytest.raises(io.FormatError):
        io.read_dataset(tmp_path)
    with pytest.raises(io.FormatError):
        io.read_dataset(tmp_path / "missing")


def test_chain_round_trip_and_determinism(tiny_dataset, tmp_path):
    cfg = RunConfig(ranks=[2], iterations=15, burnin=5, seed=1, n_inner=10)
    store = run_chain(cfg, tiny_dataset, 2)
    a = io.write_chain(store, tmp_path / "a.tfc", "abc")
    back, header = io.read_chain(a)
    assert back.equal_draws(store) and header["dataset_hash"] == "abc"
    assert back.meta == json.loads(json.dumps(store.meta))
    np.testing.assert_array_equal(back.sweep_seconds, store.sweep_seconds)
    b = io.write_chain(run_chain(cfg, tiny_dataset, 2), tmp_path / "b.tfc", "abc")
    assert a.read_bytes() == b.read_bytes()  # timings live in the sidecar


def test_chain_format_errors(tiny_dataset, tmp_path):
    store = run_chain(RunConfig(ranks=[1], iterations=12, burnin=2, n_inner=5), tiny_dataset, 1)
    path = io.write_chain(store, tmp_path / "c.tfc")
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(io.FormatError):
        io.read_chain(path)
    path.write_bytes(raw + b"\0" * 8)
    with pytest.raises(io.FormatError):
        io.read_chain(path)
    path.write_bytes(b"NOTCHAIN" + raw[8:])
    with pytest.raises(io.FormatError):
        io.read_chain_header(path)


# config

def test_config_defaults_and_errors():
    cfg = cfgmod.validate({})
    assert cfg["ranks"] == [1, 2, 3, 4, 5] and cfg["iterations"] == 1100 and cfg["init"] == "least_squares"
    for bad, field in [({"nope": 1}, "nope"), ({"iterations": 0}, "iterations"), ({"burnin": 2000}, "burnin"),
                       ({"ranks": [0]}, "ranks"), ({"cnr": "x"}, "cnr"), ({"init": "zero"}, "init")]:
        with pytest.raises(cfgmod.ConfigError) as info:
            cfgmod.validate(bad)
        assert info.value.field == field
    assert "n_inner" in cfgmod.describe()


def test_parse_ranks():
    assert parse_ranks("1..5") == [1, 2, 3, 4, 5]
    assert parse_ranks("3,1,1..2") == [1, 2, 3]
    for bad in ("0", "a", "5..1", ""):
        with pytest.raises(ValueError):
            parse_ranks(bad)


# CLI

def test_simulate_is_deterministic(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    for name in ("a", "b"):
        assert invoke("simulate", "--config", cfg, "--seed", 9, "--output", tmp_path / name).exit_code == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fit_writes_one_chain_per_model(workspace):
    chains = sorted(p.name for p in (workspace / "chains").glob("chain_*.tfc"))
    assert chains == [f"chain_rank{r}.tfc" for r in range(1, 6)] + ["chain_vectorized.tfc"]
    digest = json.loads((workspace / "data" / "manifest.json").read_text())["dataset_hash"]
    for name in chains:
        header = io.read_chain_header(workspace / "chains" / name)
        meta = header["meta"]
        assert header["dataset_hash"] == digest and header["n_records"] == 60
        assert meta["iterations"] == 60 and meta["burnin"] == 10 and meta["seed"] == 0
        assert set(meta["hyper"]) >= {"a_lambda", "b_lambda", "a_tau", "b_tau", "a_sigma", "b_sigma", "a_zeta", "b_zeta"}
    assert not list((workspace / "chains").glob("*.ckpt"))


def test_postprocess_outputs(workspace):
    with open(workspace / "results" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["rank"] for r in rows] == [f"rank{r}" for r in range(1, 6)] + ["vectorized"]
    assert list(rows[0]) == ["rank", "log_dic", "rmse_b", "auc", "ci_length", "ci_coverage", "wall_hours"]
    assert all(r[c] != "NA" for r in rows for c in rows[0])
    sel = json.loads((workspace / "results" / "selection.json").read_text())
    assert set(sel) == {r["rank"] for r in rows}
    svgs = {p.name for p in (workspace / "results").glob("*.svg")}
    assert "activation_rank3.svg" in svgs and "connectivity_vectorized.svg" in svgs


def test_report_sorted_by_dic(workspace):
    res = invoke("report", workspace / "results")
    assert res.exit_code == 0
    lines = [l for l in res.output.splitlines() if l.startswith(("* ", "  r", "  v")) and "log_dic" not in l]
    values = [float(l.split()[-6]) for l in lines]
    assert values == sorted(values) and lines[0].startswith("* ")
    assert res.output.strip().endswith(lines[0].split()[1])


def test_missing_truth_gives_na(workspace, tmp_path):
    data = io.read_dataset(workspace / "data")
    bare = Dataset(responses=data.responses, covariate=data.covariate, truth=None, meta=data.meta)
    io.write_dataset(bare, tmp_path / "bare")
    res = invoke("postprocess", workspace / "chains", "--dataset", tmp_path / "bare", "--output", tmp_path / "out")
    assert res.exit_code == 0
    with open(tmp_path / "out" / "metrics.csv") as fh:
        row = next(csv.DictReader(fh))
    assert row["rmse_b"] == row["auc"] == row["ci_coverage"] == "NA" and row["log_dic"] != "NA"


def test_exit_codes(workspace, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("unknown_key: 1\n")
    res = CliRunner().invoke(main, ["simulate", "--config", str(bad), "--output", str(tmp_path / "x")])
    assert res.exit_code == 2 and "unknown_key" in res.output
    res = CliRunner().invoke(main, ["fit", str(workspace / "data"), "--ranks", "0..2", "--output", str(tmp_path / "y")])
    assert res.exit_code == 2

    cfg = tmp_path / "other.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    invoke("simulate", "--config", cfg, "--seed", 99, "--output", tmp_path / "other")
    res = CliRunner().invoke(main, ["postprocess", str(workspace / "chains"), "--dataset", str(tmp_path / "other"), "--output", str(tmp_path / "z")])
    assert res.exit_code == 4

    (tmp_path / "empty").mkdir()
    res = CliRunner().invoke(main, ["postprocess", str(tmp_path / "empty"), "--dataset", str(workspace / "data"), "--output", str(tmp_path / "w")])
    assert res.exit_code == 5
    assert CliRunner().invoke(main, ["report", str(tmp_path / "empty")]).exit_code == 5


def test_sampler_failure_exit_code(workspace, tmp_path, monkeypatch):
    monkeypatch.setattr(act, "update_sigma_y", lambda *a, **k: math.nan)
    res = CliRunner().invoke(main, ["fit", str(workspace / "data"), "--ranks", "1", "--iterations", "5", "--burnin", "0", "--output", str(tmp_path / "f")])
    assert res.exit_code == 3 and "iteration 1" in res.output


def test_resume_reproduces_uninterrupted_chain(workspace, tmp_path):
    cfg = cfgmod.validate({**SMALL, "ranks": [2]})
    data = io.read_dataset(workspace / "data")
    out = tmp_path / "resumed"
    out.mkdir()
    ChainRunner(cfgmod.run_config(cfg), data, 2).run(out / "rank2.ckpt", stop_after=25)
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    res = invoke("fit", workspace / "data", "--config", path, "--ranks", "2", "--resume", "--output", out)
    assert res.exit_code == 0
    assert (out / "chain_rank2.tfc").read_bytes() == (workspace / "chains" / "chain_rank2.tfc").read_bytes()


def test_benchmark_command():
    res = invoke("benchmark", "--draws", 2000, "--repeat", 1, "--sweeps", 2)
    assert res.exit_code == 0 and "speedup" in res.output and "gig" in res.output
