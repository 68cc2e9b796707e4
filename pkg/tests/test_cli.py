import json

import pytest

from ifslearn.cli import cmd_copula, cmd_learn, cmd_mixing, main
from ifslearn.config import ConfigError, ExperimentConfig, default_config, load_config

SMALL = dict(copula_grid=16, copula_checkpoints=[100, 1000], copula_seeds=2, spectral_grid=8, T=60, replicates=2)


def write_cfg(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config(write_cfg(tmp_path / "c.json", {"seed": 1, "learning_rate": 0.1}))


def test_config_requires_seed(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        load_config(write_cfg(tmp_path / "c.json", {"T": 10}))


def test_lambda_alias_and_hash_stability(tmp_path):
    a = load_config(write_cfg(tmp_path / "a.json", {"seed": 3, "lambda": 0.05, "theta": 1.0}))
    b = load_config(write_cfg(tmp_path / "b.json", {"theta": 1.0, "lambda": 0.05, "seed": 3}))
    assert a.lam == 0.05 and a.config_hash() == b.config_hash()
    assert a.config_hash() != a.with_overrides(seed=4).config_hash()
    # output location does not change what is computed
    assert a.config_hash() == a.with_overrides(out="elsewhere").config_hash()


def test_default_config_values():
    cfg = default_config()
    assert (cfg.seed, cfg.theta, cfg.lam, cfg.T, cfg.replicates) == (42, 0.75, 0.1, 5000, 50)
    assert cfg.transformation_matrix().entries.tolist() == [[0.25, 0.25], [0.25, 0.25]]


def test_matrix_file_relative_to_config(tmp_path):
    (tmp_path / "m.txt").write_text("orientation: bottom_to_top\n0.2 0.3\n0.1 0.4\n")
    cfg = load_config(write_cfg(tmp_path / "c.json", {"seed": 1, "matrix_file": "m.txt"}))
    assert cfg.transformation_matrix().entries[1, 1] == 0.4


@pytest.mark.parametrize(
    "doc",
    [
        {"seed": 1, "matrix": [[0.5, 0.6], [0.0, 0.0]]},
        {"seed": 1, "theta": 0.5},
        {"seed": 1, "kernel": {"name": "gaussian", "params": {"sigma": 1.0}}},
    ],
)
def test_invalid_configs_exit_2(tmp_path, doc, capsys):
    p = write_cfg(tmp_path / "c.json", {**doc, "out": str(tmp_path / "o")})
    assert main(["copula", "--config", str(p)]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path):
    assert main(["copula", "--config", str(tmp_path / "nope.json")]) == 2
    p = write_cfg(tmp_path / "c.json", {"seed": 1, "matrix_file": "absent.txt", "out": str(tmp_path / "o")})
    assert main(["copula", "--config", str(p)]) == 2


def test_malformed_matrix_file_exits_2(tmp_path):
    (tmp_path / "m.txt").write_text("orientation: bottom_to_top\n0.2 x\n")
    p = write_cfg(tmp_path / "c.json", {"seed": 1, "matrix_file": "m.txt", "out": str(tmp_path / "o")})
    assert main(["copula", "--config", str(p)]) == 2


def test_noise_larger_than_bound_is_rejected(tmp_path):
    p = write_cfg(tmp_path / "c.json", {"seed": 1, **SMALL, "noise_level": 5.0, "out": str(tmp_path / "o")})
    assert main(["learn", "--config", str(p)]) == 2


def test_bounds_needs_thirty_replicates(tmp_path):
    p = write_cfg(tmp_path / "c.json", {"seed": 1, **SMALL, "out": str(tmp_path / "o")})
    assert main(["bounds", "--config", str(p)]) == 2


def test_copula_command_is_deterministic(tmp_path):
    cfg = ExperimentConfig(seed=7, **SMALL)
    a = cmd_copula(cfg, tmp_path / "a")
    b = cmd_copula(cfg, tmp_path / "b")
    assert a.passed
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["files"] == mb["files"] and "copula/convergence.csv" in ma["files"]
    assert ma["config_hash"] == cfg.config_hash()


def test_mixing_command(tmp_path):
    cfg = ExperimentConfig(seed=7, mixing={"n_reps": 5000})
    res = cmd_mixing(cfg, tmp_path)
    assert res.passed and res.mixing.t_mix == 1
    rep = json.loads((tmp_path / "mixing" / "mixing_report.json").read_text())
    assert rep["t_mix"] == 1 and rep["epsilon"] == 0.25


def test_learn_command_small(tmp_path):
    cfg = ExperimentConfig(seed=7, **SMALL)
    res = cmd_learn(cfg, tmp_path)
    seeds = [r.seed for r in res.learn.replicates]
    assert len(set(seeds)) == 2
    rep = json.loads((tmp_path / "learn" / "learn_report.json").read_text())
    assert rep["checks"]["iterate_boundedness"]["passed"] and rep["checks"]["recursion_inequality"]["violations"] == 0
    header = (tmp_path / "learn" / "trace_rep000.csv").read_text().splitlines()[0]
    assert header == "t,gamma,x,y,observation,fx,residual,l2_error,rkhs_norm"
    assert json.loads((tmp_path / "manifest.json").read_text())["replicate_seeds"] == seeds


def test_cli_overrides_and_output(tmp_path, capsys):
    p = write_cfg(tmp_path / "c.json", {"seed": 1, **SMALL})
    code = main(["copula", "--config", str(p), "--seed", "9", "--out", str(tmp_path / "o")])
    out = capsys.readouterr().out
    assert code == 0 and "copula: PASS" in out
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["seed"] == 9
