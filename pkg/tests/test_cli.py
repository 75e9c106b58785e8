import json

import numpy as np
import pytest

from smcda import DomainError, LinearGaussian, LinearGaussianParams
from smcda.cli import ConfigError, format_cell, main, parse_config, read_obs_csv, simulate_truth

CONFIGS = {
    "simulate": {"model": {"name": "sv"}, "data": {"T": 12}},
    "filter": {"model": {"name": "sv"}, "algorithm": {"name": "bootstrap", "N": 50}, "data": {"T": 10}},
    "smooth": {"model": {"name": "linear_gaussian", "Phi": 0.8}, "algorithm": {"name": "ffbs", "N": 40, "paths": 20},
               "data": {"T": 10}},
    "enkf": {"model": {"name": "lorenz96", "K": 12}, "algorithm": {"name": "square_root", "N": 15, "inflation": 1.05,
                                                                    "taper_radius": 3.0}, "data": {"T": 10}},
    "pmmh": {"model": {"name": "linear_gaussian", "Phi": 0.5}, "algorithm": {"N": 30, "iterations": 25,
                                                                              "parameters": {"phi": [0.0, 1.0]}},
             "data": {"T": 15}},
    "pgibbs": {"model": {"name": "sv"}, "algorithm": {"N": 10, "iterations": 10, "ancestor_sampling": True,
                                                      "parameters": {"phi": [0.0, 0.99]}}, "data": {"T": 15}},
    "tune-n": {"model": {"name": "linear_gaussian", "Phi": 0.5}, "algorithm": {"N": 20, "reps": 5, "max_rounds": 2},
               "data": {"T": 15}},
}


def run(tmp_path, command, cfg, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return main([command, "--config", str(path), *extra])


def csvs(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.glob("*.csv"))}


def rows(path):
    return path.read_text().splitlines()


@pytest.mark.parametrize("command", sorted(CONFIGS))
def test_rerun_and_threads_byte_identical(tmp_path, command):
    cfg = dict(CONFIGS[command], seed=3)
    outs = []
    for k, threads in enumerate(("1", "1", "4")):
        out = tmp_path / f"run{k}"
        assert run(tmp_path, command, cfg, "--out", str(out), "--threads", threads) == 0
        outs.append(csvs(out))
    assert outs[0] and outs[0] == outs[1] == outs[2]
    assert json.loads((tmp_path / "run0" / "summary.json").read_text())["runtime_seconds"] >= 0


def test_seed_flag_changes_output(tmp_path):
    cfg = dict(CONFIGS["filter"], seed=3)
    run(tmp_path, "filter", cfg, "--out", str(tmp_path / "a"))
    run(tmp_path, "filter", cfg, "--out", str(tmp_path / "b"), "--seed", "4")
    assert csvs(tmp_path / "a") != csvs(tmp_path / "b")


def test_missing_model_block(tmp_path, capsys):
    code = run(tmp_path, "filter", {"algorithm": {"N": 10}, "data": {"T": 5}}, "--out", str(tmp_path))
    assert code == 2
    assert "model" in capsys.readouterr().err


@pytest.mark.parametrize(
    "cfg, key",
    [
        ({"model": {"name": "nope"}, "data": {"T": 5}}, "model.name"),
        ({"model": {"name": "sv", "sigma": -1.0}, "algorithm": {}, "data": {"T": 5}}, "model"),
        ({"model": {"name": "sv"}, "data": {"T": 0}}, "data.T"),
        ({"model": {"name": "sv"}, "algorithm": {"N": "many"}, "data": {"T": 5}}, "algorithm.N"),
        ({"model": {"name": "sv"}, "algorithm": {"name": "stochastic"}, "data": {"T": 5}}, "algorithm.name"),
    ],
)
def test_config_errors_name_key(tmp_path, capsys, cfg, key):
    assert run(tmp_path, "filter", cfg, "--out", str(tmp_path)) == 2
    assert f"'{key}" in capsys.readouterr().err


def test_capability_checked_before_running(tmp_path, capsys):
    cfg = {"model": {"name": "lorenz96", "K": 8}, "algorithm": {"name": "ffbs", "N": 10}, "data": {"T": 3}}
    assert run(tmp_path, "smooth", cfg, "--out", str(tmp_path / "o")) == 2
    assert not (tmp_path / "o").exists()
    assert "transition density" in capsys.readouterr().err


def test_fixed_lag_requires_lag(tmp_path, capsys):
    cfg = {"model": {"name": "sv"}, "algorithm": {"name": "fixed_lag", "N": 10}, "data": {"T": 3}}
    assert run(tmp_path, "smooth", cfg, "--out", str(tmp_path)) == 2
    assert "algorithm.lag" in capsys.readouterr().err


def test_bad_seed_flag(tmp_path):
    assert run(tmp_path, "filter", CONFIGS["filter"], "--seed", "-1") == 2


def test_filter_row_count_and_columns(tmp_path):
    assert run(tmp_path, "filter", dict(CONFIGS["filter"], seed=1), "--out", str(tmp_path)) == 0
    lines = rows(tmp_path / "filter.csv")
    assert lines[0] == "t,mean_1,q05_1,q95_1,ess,max_weight,log_lik_cum"
    assert len(lines) == 11
    assert [ln.split(",")[0] for ln in lines[1:]] == [str(t) for t in range(1, 11)]
    assert b"\r" not in (tmp_path / "filter.csv").read_bytes()


def test_chain_and_smooth_columns(tmp_path):
    run(tmp_path, "pmmh", dict(CONFIGS["pmmh"], seed=1), "--out", str(tmp_path / "p"))
    lines = rows(tmp_path / "p" / "chain.csv")
    assert lines[0] == "iter,theta_1,log_lik_hat,accepted"
    assert len(lines) == 27
    run(tmp_path, "smooth", dict(CONFIGS["smooth"], seed=1), "--out", str(tmp_path / "s"))
    lines = rows(tmp_path / "s" / "smooth.csv")
    assert lines[0] == "s,mean_1,q05_1,q95_1,unique_paths"
    assert len(lines) == 12


def test_enkf_twin_has_rmse(tmp_path):
    run(tmp_path, "enkf", dict(CONFIGS["enkf"], seed=1), "--out", str(tmp_path))
    head = rows(tmp_path / "enkf.csv")[0].split(",")
    assert head[0] == "t" and head[-1] == "rmse" and len(head) == 2 + 2 * 12


def test_runtime_failure_reports_step(tmp_path, capsys):
    obs = tmp_path / "obs.csv"
    obs.write_text("t,y_1\n1,0.5\n2,1e200\n3,0.1\n")
    cfg = {"model": {"name": "linear_gaussian"}, "algorithm": {"N": 20}, "data": {"path": str(obs)}}
    assert run(tmp_path, "filter", cfg, "--out", str(tmp_path / "o")) == 3
    assert "step 2" in capsys.readouterr().err


def test_simulate_single_step(tmp_path):
    assert run(tmp_path, "simulate", {"model": {"name": "sv"}, "data": {"T": 1}}, "--out", str(tmp_path)) == 0
    assert len(rows(tmp_path / "truth.csv")) == 2
    assert len(rows(tmp_path / "obs.csv")) == 2


def test_obs_round_trip(tmp_path):
    run(tmp_path, "simulate", dict(CONFIGS["simulate"], seed=9), "--out", str(tmp_path))
    ys = read_obs_csv(tmp_path / "obs.csv")
    _, expect = simulate_truth(parse_config(CONFIGS["simulate"], "simulate").model.build(), 12, 9)
    np.testing.assert_array_equal(ys, expect.reshape(ys.shape))


def test_simulate_truth_noise_free_limit():
    p = LinearGaussianParams(np.diag([0.9, -0.5]), np.zeros((2, 2)), np.eye(2), 1e-12 * np.eye(2), [1.0, 2.0],
                             np.zeros((2, 2)))
    xs, ys = simulate_truth(LinearGaussian(p), 20, 4)
    np.testing.assert_allclose(ys, xs[1:], atol=1e-5)
    np.testing.assert_allclose(xs[5], [0.9**5, 2.0 * (-0.5) ** 5], atol=1e-12)


def test_simulate_truth_rejects_empty():
    with pytest.raises(DomainError):
        simulate_truth(LinearGaussian(LinearGaussianParams.scalar()), 0, 1)


def test_format_cell():
    assert format_cell(0.1) == "0.10000000000000001"
    assert format_cell(float("nan")) == "NA"
    assert format_cell(float("inf")) == "NA"
    assert format_cell(True) == "1"
    assert format_cell(7) == "7"


def test_config_error_message():
    with pytest.raises(ConfigError, match="config error at 'data'"):
        parse_config({"model": {"name": "sv"}}, "filter")
