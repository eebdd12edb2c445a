import csv
from pathlib import Path

import numpy as np
import pytest

from fbsde_lsmc.cli import main, plot_data, write_atomic
from fbsde_lsmc.config import load_config, load_preset, parse_config, preset_names
from fbsde_lsmc.exceptions import ConfigError, DecompositionError

SMALL_LQ = """
[model]
name = lq
a = 0
b = 1
sigma = 0.5
q = 1
r = 1
g_t = 0

[grid]
T = 1
N = 20

[solver]
x0 = 1
M = 200
n_iter = 2
explore_std = 0.3
"""

SMALL_PENDULUM = """
[model]
name = pendulum

[cost]
goal = pi, 0
q_diag = 1, 0.1
r = 0.3
terminal_weight = 1

[grid]
T = 0.4
N = 40

[solver]
x0 = 0, 0
M = 150
n_iter = 2
explore_std = 5
"""


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


class TestConfig:
    def test_pendulum_preset(self):
        cfg = load_preset("pendulum")
        model, cost, solver = cfg.build()
        assert solver.M == 2000 and solver.N == 500 and solver.T == 2 and solver.n_iter == 15
        np.testing.assert_allclose(solver.grid.dt, 0.004)
        assert model.params["sigma"] == 0.1

    def test_cartpole_preset(self):
        cfg = load_preset("cartpole")
        model, cost, solver = cfg.build()
        assert (solver.M, solver.N, solver.T, solver.n_iter) == (5000, 750, 3, 35)
        assert model.params["sigma"] == 1.0

    def test_presets_listed(self):
        assert {"lq", "pendulum", "cartpole"} <= set(preset_names())

    def test_unknown_model_lists_valid_names(self):
        with pytest.raises(ConfigError, match="cartpole, lq, pendulum"):
            parse_config("[model]\nname = rocket\n")

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="lenght"):
            parse_config(SMALL_PENDULUM.replace("name = pendulum", "name = pendulum\nlenght = 2"))

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="extras"):
            parse_config(SMALL_LQ + "\n[extras]\nx = 1\n")

    def test_bad_number_named(self):
        with pytest.raises(ConfigError, match="solver.M"):
            parse_config(SMALL_LQ.replace("M = 200", "M = lots"))

    def test_wrong_goal_length(self):
        with pytest.raises(ConfigError, match="cost.goal"):
            parse_config(SMALL_PENDULUM.replace("goal = pi, 0", "goal = pi"))

    def test_missing_cost_key(self):
        with pytest.raises(ConfigError, match="q_diag"):
            parse_config(SMALL_PENDULUM.replace("q_diag = 1, 0.1\n", ""))

    def test_invalid_grid(self):
        with pytest.raises(ConfigError):
            parse_config(SMALL_LQ.replace("N = 20", "N = 0"))

    def test_lq_decomposition_violation(self):
        text = SMALL_LQ.replace("a = 0", "a = 0, 1; 0, 0").replace("b = 1", "b = 0; 1") \
            .replace("sigma = 0.5", "sigma = 1; 0").replace("q = 1", "q = 1, 0; 0, 1") \
            .replace("g_t = 0", "g_t = 0, 0; 0, 0").replace("x0 = 1", "x0 = 0, 0")
        with pytest.raises(DecompositionError):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.ini")

    def test_parse_error(self):
        with pytest.raises(ConfigError, match="parse error"):
            parse_config("not an ini file")

    def test_pi_tokens_and_echo_round_trip(self):
        cfg = parse_config(SMALL_PENDULUM)
        again = parse_config(cfg.to_ini())
        assert again.to_ini() == cfg.to_ini()
        _, cost, _ = cfg.build()
        assert cost.g(np.array([np.pi, 0.0])) == 0.0


class TestCli:
    def run_solve(self, tmp_path, text, *extra, name="cfg.ini"):
        path = tmp_path / name
        path.write_text(text)
        return main(["solve", str(path), "--out", str(tmp_path / "out"), *extra])

    def test_solve_writes_artifacts(self, tmp_path, capsys):
        rc = self.run_solve(tmp_path, SMALL_LQ, "--dump-trajectories", "--dump-value", "--seed", "4")
        assert rc == 0
        out = tmp_path / "out"
        header, stats = read_csv(out / "stats.csv")
        assert header == ["iter", "cost_mean", "cost_std", "term_state_0", "divergences"]
        assert stats.shape == (2, 5)
        assert "seed = 4" in (out / "config_echo.ini").read_text()
        for j in range(2):
            assert (out / f"trajectories_iter{j}.csv").is_file()
        assert (out / "value.csv").read_text().startswith("n,k,N,t0,T,degree")
        assert not list(out.glob(".*"))

    def test_artifacts_round_trip(self, tmp_path):
        from fbsde_lsmc.config import parse_config as pc
        from fbsde_lsmc.policy import estimate_cost, learn

        self.run_solve(tmp_path, SMALL_LQ, "--dump-trajectories")
        out = tmp_path / "out"
        _, stats = read_csv(out / "stats.csv")
        _, traj = read_csv(out / "trajectories_iter1.csv")
        states = traj[:, 3:].reshape(200, 21, 1)
        np.testing.assert_array_equal(states[:, -1].mean(axis=0), stats[1, 3:4])
        model, cost, solver = pc(SMALL_LQ).build()
        _, st = learn(solver, model, cost)
        assert stats[1, 1] == st[1].cost_mean

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir()
        b.mkdir()
        for d in (a, b):
            assert self.run_solve(d, SMALL_PENDULUM, "--seed", "7") == 0
        assert (a / "out" / "stats.csv").read_bytes() == (b / "out" / "stats.csv").read_bytes()

    def test_validate_riccati(self, tmp_path, capsys):
        assert self.run_solve(tmp_path, SMALL_LQ, "--validate-riccati") == 0
        line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("riccati check")][0]
        assert "oracle" in line and "relative error" in line

    def test_validate_riccati_needs_lq(self, tmp_path, capsys):
        assert self.run_solve(tmp_path, SMALL_PENDULUM, "--validate-riccati") != 0
        assert "lq" in capsys.readouterr().err

    def test_config_error_exit(self, tmp_path, capsys):
        assert self.run_solve(tmp_path, "[model]\nname = rocket\n") != 0
        assert "ConfigError" in capsys.readouterr().err

    def test_config_and_model_exclusive(self, tmp_path, capsys):
        p = tmp_path / "c.ini"
        p.write_text(SMALL_LQ)
        assert main(["solve", str(p), "--model", "lq"]) != 0
        assert main(["solve"]) != 0

    def test_divergence_exit_keeps_partial_stats(self, tmp_path, capsys):
        text = SMALL_PENDULUM.replace("T = 0.4", "T = 2").replace("N = 40", "N = 500") \
            .replace("explore_std = 5", "explore_std = 0").replace("n_iter = 2", "n_iter = 3")
        assert self.run_solve(tmp_path, text) != 0
        err = capsys.readouterr().err
        assert "iteration" in err
        assert (tmp_path / "out" / "stats.csv").read_text().startswith("iter,")

    def test_plot_data(self, tmp_path):
        self.run_solve(tmp_path, SMALL_LQ, "--dump-trajectories")
        out = tmp_path / "out"
        assert main(["plot-data", str(out)]) == 0
        header, band = read_csv(out / "cost_band.csv")
        _, stats = read_csv(out / "stats.csv")
        assert header == ["iter", "mean", "lower", "upper"]
        assert band.shape[0] == 2
        np.testing.assert_allclose(band[:, 2], stats[:, 1] - 3 * stats[:, 2])
        np.testing.assert_allclose(band[:, 3], stats[:, 1] + 3 * stats[:, 2])
        h, mean = read_csv(out / "traj_mean_iter1.csv")
        _, traj = read_csv(out / "trajectories_iter1.csv")
        assert h == ["t", "x0"]
        np.testing.assert_allclose(mean[:, 1], traj[:, 3].reshape(200, 21).mean(axis=0), rtol=1e-15)

    def test_plot_data_zero_problem_is_drift_path(self, tmp_path):
        text = SMALL_LQ.replace("sigma = 0.5", "sigma = 1e-300").replace("explore_std = 0.3", "explore_std = 0")
        text = text.replace("a = 0", "a = -1").replace("q = 1", "q = 0")
        assert self.run_solve(tmp_path, text, "--dump-trajectories") == 0
        plot_data(tmp_path / "out")
        _, mean = read_csv(tmp_path / "out" / "traj_mean_iter0.csv")
        dt = 1 / 20
        np.testing.assert_allclose(mean[:, 1], (1 - dt) ** np.arange(21), rtol=1e-12)

    def test_plot_data_missing_dumps(self, tmp_path, capsys):
        self.run_solve(tmp_path, SMALL_LQ)
        assert main(["plot-data", str(tmp_path / "out")]) != 0
        assert "--dump-trajectories" in capsys.readouterr().err

    def test_plot_data_missing_stats(self, tmp_path, capsys):
        assert main(["plot-data", str(tmp_path)]) != 0
        assert "stats.csv" in capsys.readouterr().err


def test_write_atomic_replaces(tmp_path):
    p = tmp_path / "f.txt"
    write_atomic(p, "one\n")
    write_atomic(p, "two\n")
    assert p.read_text() == "two\n"
    assert [x.name for x in tmp_path.iterdir()] == ["f.txt"]
