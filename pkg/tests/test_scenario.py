import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from opinion_nash import cli
from opinion_nash.scenario import (
    DEFAULTS,
    OUTPUT_ENV,
    ConfigError,
    MonteCarloConfig,
    export_results,
    load_scenario,
    parse_scenario,
    parse_scenario_text,
    read_trajectories,
    run_scenario,
    simulate_ensemble,
    solve_equilibrium,
)

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = sorted((ROOT / "scenarios").glob("*.yaml"))


def small(doc=None, **sections):
    base = {"network": {"n": 3}, "grid": {"t": 1.0, "steps": 50}, "monte_carlo": {"replicas": 4, "seed": 3}}
    base.update(doc or {})
    base.update(sections)
    return parse_scenario(base)


def test_minimal_config_defaults():
    cfg = parse_scenario({"network": {"n": 2}})
    assert cfg.network.n == 2
    assert [(e.i, e.j, e.w) for e in cfg.network.edges] == [(1, 2, 0.5), (2, 1, 0.5)]
    assert cfg.network.stubbornness == (1.0, 1.0)
    assert cfg.regime.type == "full_consensus" and cfg.regime.sigma == DEFAULTS["regime"]["sigma"]
    assert cfg.regime.x0 == (0.2, 0.8)
    assert cfg.grid.steps == 1000 and cfg.s_eval == cfg.grid.t
    assert cfg.h_params.b == 0.5 and cfg.h_params.d == 0.1
    assert cfg.multipliers == ((1.0,), (1.0,))
    assert cfg.solver.follower_drift_sign == 1 and cfg.solver.damping == 0.5


def test_negative_weight_names_field():
    doc = {"network": {"n": 2, "edges": [{"i": 1, "j": 2, "w": -0.1}, {"i": 2, "j": 1, "w": 0.5}]}}
    with pytest.raises(ConfigError) as err:
        parse_scenario(doc)
    assert err.value.path == "network.edges[0].w"
    assert str(err.value).startswith("network.edges[0].w:")


@pytest.mark.parametrize("doc, path", [
    ({"network": {"n": 1}}, "network.n"),
    ({"network": {"n": 2}, "regime": {"type": "mystery"}}, "regime.type"),
    ({"network": {"n": 2}, "regime": {"x0": [0.1, 1.5]}}, "regime.x0[1]"),
    ({"network": {"n": 2}, "grid": {"steps": 0}}, "grid.steps"),
    ({"network": {"n": 2}, "solver": {"follower_drift_sign": 0}}, "solver.follower_drift_sign"),
    ({"network": {"n": 2}, "multiplier": {"coeffs": [0.0, 1.0]}}, "multiplier.coeffs"),
    ({"network": {"n": 3, "leader_id": 1, "edges": [[2, 1, 0.5], [3, 1, 0.5]]}, "regime": {"type": "leader"}},
     "regime.x_tilde"),
    ({"network": {"n": 2}, "bogus": {}}, "bogus"),
])
def test_field_paths_in_errors(doc, path):
    with pytest.raises(ConfigError) as err:
        parse_scenario(doc)
    assert err.value.path == path


def test_full_consensus_needs_common_weights():
    with pytest.raises(ConfigError, match="complete network"):
        parse_scenario({"network": {"n": 2, "edges": [[1, 2, 0.5], [2, 1, 0.6]]}})


def test_yaml_parse_error_has_line():
    with pytest.raises(ConfigError, match=r"^bad.yaml: YAML parse error at line 3, column 1"):
        parse_scenario_text("network:\n  n: 2\n\tm: 1\n", "bad.yaml")


@pytest.mark.parametrize("path", SCENARIOS, ids=lambda p: p.stem)
def test_round_trip_fixed_point(path):
    cfg = load_scenario(path)
    again = parse_scenario_text(cfg.to_yaml())
    assert again == cfg
    assert again.to_yaml() == cfg.to_yaml()


def test_effective_config_echo(tmp_path):
    cfg = load_scenario(SCENARIOS[0], echo_dir=tmp_path)
    assert parse_scenario(yaml.safe_load((tmp_path / "effective_config.yaml").read_text())) == cfg


def test_deterministic_summary_sigma_zero():
    cfg = small(regime={"sigma": 0.0}, monte_carlo={"replicas": 1, "seed": 1})
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert a.path.x.tobytes() == b.path.x.tobytes()
    assert a.summary.spread.tobytes() == b.summary.spread.tobytes()


def test_symmetric_agents_keep_zero_spread_under_common_noise():
    cfg = small(regime={"x0": [0.5, 0.5, 0.5], "sigma": 0.1})
    eq = solve_equilibrium(cfg)
    assert np.ptp(eq.x_star) == 0.0
    # give every agent the same noise by reusing one stream label
    from opinion_nash.sde import NoisePaths, full_consensus_dynamics, simulate_dynamics
    from opinion_nash.equilibrium import FullConsensus
    from opinion_nash.scenario import _coefficients_fc

    base = NoisePaths.generate(3, cfg.grid, [0, 0, 0], cfg.monte_carlo.replicas)
    dyn = full_consensus_dynamics(_coefficients_fc(cfg), FullConsensus(0.1), eq.x0, eq.x_star, cfg.grid)
    path = simulate_dynamics(dyn, cfg.h_params, cfg.grid, base)
    assert np.all(path.x.max(axis=2) - path.x.min(axis=2) == 0.0)


def test_pooled_replicas_match_split_runs():
    cfg = small(monte_carlo={"replicas": 100, "seed": 5})
    eq = solve_equilibrium(cfg)
    whole = simulate_ensemble(cfg, eq)
    first = simulate_ensemble(replace(cfg, monte_carlo=MonteCarloConfig(50, 5, 0)), eq)
    second = simulate_ensemble(replace(cfg, monte_carlo=MonteCarloConfig(50, 5, 50)), eq)
    pooled = np.concatenate([first.x, second.x], axis=0)
    np.testing.assert_array_equal(pooled, whole.x)
    np.testing.assert_array_equal(pooled.mean(axis=0), whole.x.mean(axis=0))


def test_leader_wiring_uses_max_root():
    cfg = load_scenario(ROOT / "scenarios" / "leader_followers.yaml")
    cfg = replace(cfg, monte_carlo=MonteCarloConfig(2, 11, 0))
    res = run_scenario(cfg)
    eq = res.equilibrium
    assert eq.x_bar_1 == max(eq.leader_roots)
    assert eq.x_star[cfg.network.leader_id - 1] == eq.x_bar_1
    assert eq.x_tilde == tuple(0.9 * v for v in cfg.regime.x_star_reference)
    assert res.summary.gap_pass_rate == 1.0


def test_minimal_export(tmp_path):
    cfg = small(grid={"t": 1.0, "steps": 1}, monte_carlo={"replicas": 1, "seed": 0})
    files = export_results(run_scenario(cfg), tmp_path)
    traj = files["trajectories.csv"].read_text().splitlines()
    assert traj[0] == "replica,s,agent,x,u,dB" and len(traj) == 1 + 2 * 3
    summ = files["summary.csv"].read_text().splitlines()
    assert len(summ) == 3
    man = json.loads(files["manifest.json"].read_text())
    assert man["seed"] == 0 and man["config_sha256"] == cfg.sha256()
    assert set(man["files"]) == {"effective_config.yaml", "summary.csv", "equilibrium.csv", "trajectories.csv"}


def test_trajectory_round_trip(tmp_path):
    cfg = small()
    res = run_scenario(cfg)
    files = export_results(res, tmp_path, formats=["trajectories"])
    reps, x, u, dB = read_trajectories(files["trajectories.csv"].read_text(), cfg.grid, cfg.network.n)
    assert reps == res.summary.replicas
    np.testing.assert_array_equal(x, res.path.x)
    np.testing.assert_array_equal(u, res.path.u)
    np.testing.assert_array_equal(dB, res.path.dB)


def test_export_twice_is_byte_identical(tmp_path):
    cfg = small()
    a = export_results(run_scenario(cfg), tmp_path / "a")
    b = export_results(run_scenario(cfg), tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()


def test_output_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    cfg = small()
    assert cfg.outputs.resolve() == tmp_path / "env"


@pytest.fixture
def small_yaml(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump({"network": {"n": 3}, "grid": {"t": 1.0, "steps": 40},
                                 "monte_carlo": {"replicas": 2, "seed": 1}}))
    return p


@pytest.mark.parametrize("command, expect", [
    ("solve", ["equilibrium.csv"]),
    ("simulate", ["summary.csv", "trajectories.csv", "manifest.json"]),
    ("verify", ["verify.json"]),
    ("pde", ["pde_heat.csv", "pde_transition.csv"]),
])
def test_cli_subcommands(small_yaml, tmp_path, capsys, command, expect):
    out = tmp_path / command
    assert cli.main([command, str(small_yaml), "--out", str(out)]) == 0
    for name in expect + ["effective_config.yaml"]:
        assert (out / name).exists()
    if command == "verify":
        assert all(c["passed"] for c in json.loads((out / "verify.json").read_text()))


def test_cli_out_dir_precedence(small_yaml, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["solve", str(small_yaml)]) == 0
    assert (tmp_path / "env" / "equilibrium.csv").exists()
    assert cli.main(["solve", str(small_yaml), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "equilibrium.csv").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("network:\n  n: 2\n  edges:\n    - {i: 1, j: 2, w: -0.1}\n")
    assert cli.main(["solve", str(p), "--out", str(tmp_path)]) == 2
    assert "network.edges[0].w" in capsys.readouterr().err
