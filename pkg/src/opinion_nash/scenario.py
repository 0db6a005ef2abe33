"""Config-driven end-to-end runs: equilibrium solve, ensemble simulation, export.

A scenario is one YAML document::

    network:      {n, edges: [{i, j, w}], stubbornness, leader_id, default_weight}
    regime:       {type: full_consensus | leader, sigma, sigma_1, w_bar, x0, x_tilde, x_star_reference}
    h_params:     {b, d}
    multiplier:   {coeffs} or {per_agent: [[...], ...]}
    grid:         {t, steps}
    monte_carlo:  {replicas, seed, replica_offset}
    solver:       {tol, max_iter, follower_drift_sign, s_eval, damping, couple_control, control}
    outputs:      {directory, formats}

Omitted sections take the defaults below. ``OPINION_NASH_OUTPUT_DIR``
overrides ``outputs.directory``.
"""
from __future__ import annotations

import copy
import hashlib
import io
import json
import math
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import __version__
from . import coefficients as co
from . import kernels
from .coefficients import CoefficientParams, HParams, MultiplierModel
from .cubic import solve_cubic_real
from .equilibrium import (
    AgentSpec,
    Follower,
    FullConsensus,
    GameState,
    Leader,
    feedback_control,
    mean_field_fixed_point,
    opinion_cubic,
    optimal_opinion,
)
from .errors import OpinionNashError, StationarityError
from .network import NetworkSpec, validate_network
from .sde import (
    NoisePaths,
    OpinionPath,
    TimeGrid,
    follower_dynamics,
    full_consensus_dynamics,
    leader_dynamics,
    opinion_gap_bound_check,
    simulate_dynamics,
)

OUTPUT_ENV = "OPINION_NASH_OUTPUT_DIR"
REGIMES = ("full_consensus", "leader")
FORMATS = ("summary", "trajectories", "equilibrium")

DEFAULTS: dict[str, Any] = {
    "network": {"default_weight": 0.5, "default_stubbornness": 1.0, "leader_id": None},
    "regime": {"type": "full_consensus", "sigma": 0.1, "sigma_1": 0.1, "w_bar": 0.5},
    "h_params": {"b": 0.5, "d": 0.1},
    "multiplier": {"coeffs": [1.0]},
    "grid": {"t": 1.0, "steps": 1000},
    "monte_carlo": {"replicas": 20, "seed": 20240101, "replica_offset": 0},
    "solver": {
        "tol": 1e-10,
        "max_iter": 2000,
        "follower_drift_sign": 1,
        "s_eval": None,
        "damping": 0.5,
        "couple_control": False,
        "control": 0.0,
    },
    "outputs": {"directory": "out", "formats": ["summary", "equilibrium", "trajectories"]},
}


class ConfigError(OpinionNashError, ValueError):
    """Invalid scenario document; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class RegimeConfig:
    type: str
    sigma: float
    x0: tuple[float, ...]
    sigma_1: float = 0.1
    w_bar: float = 0.5
    x_tilde: Optional[tuple[float, ...]] = None
    x_star_reference: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class MonteCarloConfig:
    replicas: int
    seed: int
    replica_offset: int = 0


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 2000
    follower_drift_sign: int = 1
    s_eval: Optional[float] = None
    damping: float = 0.5
    couple_control: bool = False
    control: float = 0.0


@dataclass(frozen=True)
class OutputConfig:
    directory: str
    formats: tuple[str, ...]

    def resolve(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.directory)


@dataclass(frozen=True)
class ScenarioConfig:
    network: NetworkSpec
    regime: RegimeConfig
    h_params: HParams
    multipliers: tuple[tuple[float, ...], ...]
    grid: TimeGrid
    monte_carlo: MonteCarloConfig
    solver: SolverConfig
    outputs: OutputConfig

    @property
    def s_eval(self) -> float:
        return self.grid.t if self.solver.s_eval is None else self.solver.s_eval

    def multiplier_models(self) -> list[MultiplierModel]:
        return [MultiplierModel(c, self.grid.t) for c in self.multipliers]

    def to_dict(self) -> dict:
        net = self.network
        reg = {"type": self.regime.type, "sigma": self.regime.sigma, "x0": list(self.regime.x0)}
        if self.regime.type == "leader":
            reg["sigma_1"] = self.regime.sigma_1
            reg["w_bar"] = self.regime.w_bar
            if self.regime.x_tilde is not None:
                reg["x_tilde"] = list(self.regime.x_tilde)
            if self.regime.x_star_reference is not None:
                reg["x_star_reference"] = list(self.regime.x_star_reference)
        return {
            "network": {
                "n": net.n,
                "edges": [{"i": e.i, "j": e.j, "w": e.w} for e in net.edges],
                "stubbornness": list(net.stubbornness),
                "leader_id": net.leader_id,
            },
            "regime": reg,
            "h_params": {"b": self.h_params.b, "d": self.h_params.d},
            "multiplier": {"per_agent": [list(c) for c in self.multipliers]},
            "grid": {"t": self.grid.t, "steps": self.grid.steps},
            "monte_carlo": {
                "replicas": self.monte_carlo.replicas,
                "seed": self.monte_carlo.seed,
                "replica_offset": self.monte_carlo.replica_offset,
            },
            "solver": {
                "tol": self.solver.tol,
                "max_iter": self.solver.max_iter,
                "follower_drift_sign": self.solver.follower_drift_sign,
                "s_eval": self.solver.s_eval,
                "damping": self.solver.damping,
                "couple_control": self.solver.couple_control,
                "control": self.solver.control,
            },
            "outputs": {"directory": self.outputs.directory, "formats": list(self.outputs.formats)},
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()


# ---------------------------------------------------------------------------
# parsing


def _section(doc: dict, name: str) -> dict:
    raw = doc.get(name)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(name, "must be a mapping")
    out = copy.deepcopy(DEFAULTS.get(name, {}))
    out.update(raw)
    return out


def _num(v, path, *, lo=None, lo_strict=False, hi=None, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    v = int(v) if integer else float(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if lo is not None and (v <= lo if lo_strict else v < lo):
        raise ConfigError(path, f"must be {'>' if lo_strict else '>='} {lo} (got {v})")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi} (got {v})")
    return v


def _num_list(v, path, n=None, **kw):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(path, "expected a list")
    if n is not None and len(v) != n:
        raise ConfigError(path, f"expected {n} entries, got {len(v)}")
    return tuple(_num(x, f"{path}[{i}]", **kw) for i, x in enumerate(v))


def _parse_network(sec: dict) -> NetworkSpec:
    if "n" not in sec:
        raise ConfigError("network.n", "agent count is required")
    n = _num(sec["n"], "network.n", lo=2, integer=True)
    edges_raw = sec.get("edges")
    if edges_raw is None:
        wd = _num(sec["default_weight"], "network.default_weight", lo=0)
        edges_raw = [{"i": i, "j": j, "w": wd} for i in range(1, n + 1) for j in range(1, n + 1) if i != j]
    if not isinstance(edges_raw, list):
        raise ConfigError("network.edges", "expected a list")
    edges = []
    seen = set()
    for idx, e in enumerate(edges_raw):
        p = f"network.edges[{idx}]"
        if isinstance(e, (list, tuple)) and len(e) == 3:
            e = {"i": e[0], "j": e[1], "w": e[2]}
        if not isinstance(e, dict) or set(e) != {"i", "j", "w"}:
            raise ConfigError(p, "edge must be {i, j, w}")
        i = _num(e["i"], f"{p}.i", lo=1, hi=n, integer=True)
        j = _num(e["j"], f"{p}.j", lo=1, hi=n, integer=True)
        w = _num(e["w"], f"{p}.w")
        if w < 0:
            raise ConfigError(f"{p}.w", f"negative weight ({w})")
        if i == j:
            raise ConfigError(p, f"self-edge on agent {i}")
        if (i, j) in seen:
            raise ConfigError(p, f"duplicates edge ({i}, {j})")
        seen.add((i, j))
        edges.append((i, j, w))
    k = sec.get("stubbornness")
    if k is None:
        k = [sec["default_stubbornness"]] * n
    elif isinstance(k, (int, float)) and not isinstance(k, bool):
        k = [k] * n
    k = _num_list(k, "network.stubbornness", n, lo=0)
    leader = sec.get("leader_id")
    if leader is not None:
        leader = _num(leader, "network.leader_id", lo=1, hi=n, integer=True)
    spec = NetworkSpec.from_lists(n, edges, k, leader)
    report = validate_network(spec)
    if not report:
        raise ConfigError("network", "; ".join(report.problems))
    return spec


def _parse_regime(sec: dict, n: int) -> RegimeConfig:
    typ = sec["type"]
    if typ not in REGIMES:
        raise ConfigError("regime.type", f"must be one of {REGIMES} (got {typ!r})")
    x0 = sec.get("x0")
    x0 = tuple(float(v) for v in np.linspace(0.2, 0.8, n)) if x0 is None else _num_list(x0, "regime.x0", n, lo=0, hi=1)
    sigma = _num(sec["sigma"], "regime.sigma", lo=0)
    sigma_1 = _num(sec["sigma_1"], "regime.sigma_1", lo=0)
    w_bar = _num(sec["w_bar"], "regime.w_bar", lo=0)
    x_tilde = sec.get("x_tilde")
    x_ref = sec.get("x_star_reference")
    if typ == "leader":
        if x_tilde is not None:
            x_tilde = _num_list(x_tilde, "regime.x_tilde", n - 1)
        if x_ref is not None:
            x_ref = _num_list(x_ref, "regime.x_star_reference", n - 1)
        if x_tilde is None and x_ref is None:
            raise ConfigError("regime.x_tilde", "leader regime needs x_tilde or x_star_reference")
        if x_tilde is not None and x_ref is not None:
            bad = [j for j, (a, b) in enumerate(zip(x_tilde, x_ref)) if not a < b]
            if bad:
                raise ConfigError(f"regime.x_tilde[{bad[0]}]", "assigned opinion must be below the optimal one")
    else:
        x_tilde = x_ref = None
    return RegimeConfig(type=typ, sigma=sigma, x0=x0, sigma_1=sigma_1, w_bar=w_bar, x_tilde=x_tilde,
                        x_star_reference=x_ref)


def _parse_multipliers(sec: dict, n: int, t: float) -> tuple[tuple[float, ...], ...]:
    if "per_agent" in sec:
        rows = sec["per_agent"]
        if not isinstance(rows, list) or len(rows) != n:
            raise ConfigError("multiplier.per_agent", f"expected {n} coefficient lists")
        out = tuple(_num_list(r, f"multiplier.per_agent[{i}]") for i, r in enumerate(rows))
    else:
        out = (_num_list(sec["coeffs"], "multiplier.coeffs"),) * n
    for i, c in enumerate(out):
        p = f"multiplier.per_agent[{i}]" if "per_agent" in sec else "multiplier.coeffs"
        try:
            m = MultiplierModel(c, t)
            co.multiplier_eval(m, np.linspace(0.0, t, 257))
        except OpinionNashError as exc:
            raise ConfigError(p, str(exc)) from None
    return out


def _check_regime_network(spec: NetworkSpec, reg: RegimeConfig):
    n = spec.n
    if reg.type == "full_consensus":
        ws = {e.w for e in spec.edges}
        if len(spec.edges) != n * (n - 1) or len(ws) != 1 or len(set(spec.stubbornness)) != 1:
            raise ConfigError("network", "full_consensus needs a complete network with one common weight and stubbornness")
        if next(iter(ws)) + spec.stubbornness[0] <= 0:
            raise ConfigError("network", "k + n*w must be positive")
    else:
        if spec.leader_id is None:
            raise ConfigError("network.leader_id", "leader regime needs a leader_id")
        for i in range(1, n + 1):
            if i == spec.leader_id:
                continue
            if spec.stubbornness[i - 1] + spec.weight(i, spec.leader_id) <= 0:
                raise ConfigError("network", f"follower {i} needs k_i + w_i1 > 0")
        if spec.stubbornness[spec.leader_id - 1] + n * reg.w_bar <= 0:
            raise ConfigError("regime.w_bar", "k_1 + n*w_bar must be positive")


def parse_scenario(doc: Any) -> ScenarioConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "scenario must be a mapping")
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    if "network" not in doc:
        raise ConfigError("network", "section is required")
    spec = _parse_network(_section(doc, "network"))
    reg = _parse_regime(_section(doc, "regime"), spec.n)
    _check_regime_network(spec, reg)
    hs = _section(doc, "h_params")
    hp = HParams(_num(hs["b"], "h_params.b", lo=0, lo_strict=True), _num(hs["d"], "h_params.d", lo=0, lo_strict=True))
    gs = _section(doc, "grid")
    grid = TimeGrid(_num(gs["t"], "grid.t", lo=0, lo_strict=True), _num(gs["steps"], "grid.steps", lo=1, integer=True))
    mult = _parse_multipliers(_section(doc, "multiplier"), spec.n, grid.t)
    ms = _section(doc, "monte_carlo")
    mc = MonteCarloConfig(
        replicas=_num(ms["replicas"], "monte_carlo.replicas", lo=1, integer=True),
        seed=_num(ms["seed"], "monte_carlo.seed", lo=0, integer=True),
        replica_offset=_num(ms["replica_offset"], "monte_carlo.replica_offset", lo=0, integer=True),
    )
    ss = _section(doc, "solver")
    sign = _num(ss["follower_drift_sign"], "solver.follower_drift_sign", integer=True)
    if sign not in (1, -1):
        raise ConfigError("solver.follower_drift_sign", "must be +1 or -1")
    s_eval = ss["s_eval"]
    if s_eval is not None:
        s_eval = _num(s_eval, "solver.s_eval", lo=0, lo_strict=True, hi=grid.t)
    if not isinstance(ss["couple_control"], bool):
        raise ConfigError("solver.couple_control", "expected true or false")
    solver = SolverConfig(
        tol=_num(ss["tol"], "solver.tol", lo=0, lo_strict=True),
        max_iter=_num(ss["max_iter"], "solver.max_iter", lo=1, integer=True),
        follower_drift_sign=sign,
        s_eval=s_eval,
        damping=_num(ss["damping"], "solver.damping", lo=0, lo_strict=True, hi=1),
        couple_control=ss["couple_control"],
        control=_num(ss["control"], "solver.control"),
    )
    os_ = _section(doc, "outputs")
    fmts = os_["formats"]
    if not isinstance(fmts, list) or any(f not in FORMATS for f in fmts):
        raise ConfigError("outputs.formats", f"entries must be among {FORMATS}")
    out = OutputConfig(directory=str(os_["directory"]), formats=tuple(fmts))
    return ScenarioConfig(spec, reg, hp, mult, grid, mc, solver, out)


def parse_scenario_text(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(source, f"YAML parse error at {where}: {exc.problem}") from None
    return parse_scenario(doc)


def load_scenario(path, echo_dir=None) -> ScenarioConfig:
    """Read, validate and default-fill a scenario file.

    With ``echo_dir`` the effective configuration is written there as
    ``effective_config.yaml``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    cfg = parse_scenario_text(text, str(path))
    if echo_dir is not None:
        d = Path(echo_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "effective_config.yaml").write_text(cfg.to_yaml())
    return cfg


# ---------------------------------------------------------------------------
# running


@dataclass
class Equilibrium:
    """Equilibrium snapshot: opinions and controls at ``s_eval``, by agent label order."""

    s_eval: float
    x0: np.ndarray
    x_star: np.ndarray
    u_star: np.ndarray
    iterations: int = 0
    x_bar_1: Optional[float] = None
    leader_roots: tuple[float, ...] = ()
    x_tilde: tuple[float, ...] = ()


@dataclass
class EnsembleSummary:
    s: np.ndarray
    replicas: tuple[int, ...]
    spread: np.ndarray  # (replicas, steps + 1)
    mean_opinion: np.ndarray  # (steps + 1, agents)
    gap_pass_rate: float
    gap_checks: int
    excursions: np.ndarray
    equilibrium: Equilibrium

    @property
    def spread_mean(self) -> np.ndarray:
        return self.spread.mean(axis=0)

    @property
    def spread_band(self) -> tuple[np.ndarray, np.ndarray]:
        return np.percentile(self.spread, 2.5, axis=0), np.percentile(self.spread, 97.5, axis=0)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    equilibrium: Equilibrium
    path: OpinionPath
    summary: EnsembleSummary


def _coefficients_fc(cfg: ScenarioConfig) -> CoefficientParams:
    net = cfg.network
    return CoefficientParams(k=net.stubbornness[0], w=net.edges[0].w, n=net.n, t=cfg.grid.t)


def _followers(cfg: ScenarioConfig) -> list[int]:
    return [i for i in range(1, cfg.network.n + 1) if i != cfg.network.leader_id]


def _leader_params(cfg: ScenarioConfig) -> CoefficientParams:
    net = cfg.network
    return CoefficientParams(k_1=net.stubbornness[net.leader_id - 1], w_bar=cfg.regime.w_bar, n=net.n, t=cfg.grid.t)


def _follower_params(cfg: ScenarioConfig, i: int) -> CoefficientParams:
    net = cfg.network
    return CoefficientParams(k=net.stubbornness[i - 1], w_i1=net.weight(i, net.leader_id), n=net.n, t=cfg.grid.t)


def _safe_control(regime, st, hp, cp) -> float:
    try:
        return feedback_control(regime, st, hp, cp)
    except StationarityError:
        return math.nan


def solve_equilibrium(cfg: ScenarioConfig) -> Equilibrium:
    """Equilibrium profile at ``s_eval``.

    Full consensus iterates the mean-field profile. In the leader game the
    leader fixes the largest root of its opinion cubic first and every
    follower then optimises against that fixed opinion.
    """
    hp = cfg.h_params
    s = cfg.s_eval
    x0 = np.array(cfg.regime.x0)
    mults = cfg.multiplier_models()
    lams = [co.multiplier_eval(m, s) for m in mults]
    sol = cfg.solver
    if cfg.regime.type == "full_consensus":
        cp = _coefficients_fc(cfg)
        regime = FullConsensus(cfg.regime.sigma)
        agents = [AgentSpec(x0[i], mults[i]) for i in range(len(x0))]
        fp = mean_field_fixed_point(agents, regime, hp, cp, s, tol=sol.tol, max_iter=sol.max_iter,
                                    damping=sol.damping, couple_control=sol.couple_control, control=sol.control)
        x = fp.x_star
        m = float(x.mean())
        xj = (x.sum() - x) / (len(x) - 1)
        u = np.array([
            _safe_control(regime, GameState(s, x[i], xj[i], x0[i], m, 0.0, lams[i]), hp, cp) for i in range(len(x))
        ])
        return Equilibrium(s, x0, x, u, fp.iterations)
    lid = cfg.network.leader_id
    fol = _followers(cfg)
    x_tilde = cfg.regime.x_tilde
    if x_tilde is None:
        x_tilde = tuple(0.9 * v for v in cfg.regime.x_star_reference)
    cpl = _leader_params(cfg)
    leader = Leader(cfg.regime.sigma_1, x_tilde)
    mt = float(np.mean(x_tilde))
    st = GameState(s, x0[lid - 1], mt, x0[lid - 1], mt, sol.control, lams[lid - 1])
    roots = solve_cubic_real(opinion_cubic(leader, st, hp, cpl))
    x_bar = optimal_opinion(leader, st, hp, cpl, roots=roots)
    x_star = np.empty(len(x0))
    u_star = np.empty(len(x0))
    x_star[lid - 1] = x_bar
    u_star[lid - 1] = _safe_control(leader, GameState(s, x_bar, mt, x0[lid - 1], mt, 0.0, lams[lid - 1]), hp, cpl)
    for i in fol:
        cp = _follower_params(cfg, i)
        rg = Follower(cfg.regime.sigma, x_bar, sol.follower_drift_sign)
        sti = GameState(s, x0[i - 1], x_bar, x0[i - 1], 0.0, sol.control, lams[i - 1])
        xi = optimal_opinion(rg, sti, hp, cp)
        x_star[i - 1] = xi
        u_star[i - 1] = _safe_control(rg, GameState(s, xi, x_bar, x0[i - 1], 0.0, 0.0, lams[i - 1]), hp, cp)
    return Equilibrium(s, x0, x_star, u_star, 0, x_bar_1=x_bar, leader_roots=tuple(roots.roots), x_tilde=x_tilde)


def _noise(cfg: ScenarioConfig, labels) -> NoisePaths:
    mc = cfg.monte_carlo
    return NoisePaths.generate(mc.seed, cfg.grid, [l - 1 for l in labels], mc.replicas, mc.replica_offset)


def simulate_ensemble(cfg: ScenarioConfig, eq: Equilibrium) -> OpinionPath:
    """Closed-loop ensemble with agents in label order; noise streams keyed by label."""
    hp = cfg.h_params
    grid = cfg.grid
    mults = cfg.multiplier_models()
    n = cfg.network.n
    if cfg.regime.type == "full_consensus":
        dyn = full_consensus_dynamics(_coefficients_fc(cfg), FullConsensus(cfg.regime.sigma), eq.x0, eq.x_star, grid,
                                      mults)
        return simulate_dynamics(dyn, hp, grid, _noise(cfg, range(1, n + 1)))
    lid = cfg.network.leader_id
    fol = _followers(cfg)
    dl = leader_dynamics(_leader_params(cfg), Leader(cfg.regime.sigma_1, eq.x_tilde), eq.x0[lid - 1], grid,
                         mults[lid - 1])
    pl = simulate_dynamics(dl, hp, grid, _noise(cfg, [lid]))
    df = follower_dynamics(
        [_follower_params(cfg, i) for i in fol],
        [Follower(cfg.regime.sigma, eq.x_bar_1, cfg.solver.follower_drift_sign) for _ in fol],
        [eq.x0[i - 1] for i in fol], grid, [mults[i - 1] for i in fol],
    )
    pf = simulate_dynamics(df, hp, grid, _noise(cfg, fol))
    order = np.argsort([lid] + fol)
    x = np.concatenate([pl.x, pf.x], axis=2)[:, :, order]
    u = np.concatenate([pl.u, pf.u], axis=2)[:, :, order]
    dB = np.concatenate([pl.dB, pf.dB], axis=2)[:, :, order]
    diff = np.concatenate([pl.diffusion, pf.diffusion])[order]
    return OpinionPath(grid=grid, x=x, u=u, dB=dB, regime="leader", diffusion=diff)


def _drift_gap_passes(path: OpinionPath, drift: np.ndarray, i: int, j: int, r: int) -> bool:
    """Running-horizon gap bound with the regime's own drift (agents may differ in drift)."""
    dx = path.x[r, :, i] - path.x[r, :, j]
    dd = (drift[r, :-1, i] - drift[r, :-1, j]) * path.grid.ds
    dn = path.diffusion[i] * path.dB[r, :, i] - path.diffusion[j] * path.dB[r, :, j]
    rhs = abs(dx[0]) + np.abs(np.concatenate([[0.0], np.cumsum(dd)])) + np.abs(np.concatenate([[0.0], np.cumsum(dn)]))
    scale = abs(dx[0]) + np.concatenate([[0.0], np.cumsum(np.abs(dd) + np.abs(dn))])
    return bool(np.all(rhs - np.abs(dx) >= -1e-12 * (1.0 + scale)))


def summarize(cfg: ScenarioConfig, eq: Equilibrium, path: OpinionPath) -> EnsembleSummary:
    x = path.x
    spread = x.max(axis=2) - x.min(axis=2)
    R, _, n = x.shape
    passed = checks = 0
    if cfg.regime.type == "full_consensus":
        cp = _coefficients_fc(cfg)
        for r in range(R):
            for i in range(n):
                for j in range(i + 1, n):
                    passed += opinion_gap_bound_check(path, path, cp, cfg.regime.sigma, i, j, r).passed
                    checks += 1
    else:
        grid = cfg.grid
        fol = [i - 1 for i in _followers(cfg)]
        drift = np.empty_like(x)
        # rebuild alpha + beta x - u for the followers from their dynamics
        df = follower_dynamics(
            [_follower_params(cfg, i + 1) for i in fol],
            [Follower(cfg.regime.sigma, eq.x_bar_1, cfg.solver.follower_drift_sign) for _ in fol],
            [eq.x0[i] for i in fol], grid,
        )
        for a, i in enumerate(fol):
            drift[:, :, i] = df.alpha[:, a] + df.beta[:, a] * x[:, :, i] - path.u[:, :, i]
        for r in range(R):
            for a, i in enumerate(fol):
                for j in fol[a + 1:]:
                    passed += _drift_gap_passes(path, drift, i, j, r)
                    checks += 1
    rate = passed / checks if checks else 1.0
    replicas = tuple(range(cfg.monte_carlo.replica_offset, cfg.monte_carlo.replica_offset + R))
    return EnsembleSummary(
        s=cfg.grid.points, replicas=replicas, spread=spread, mean_opinion=x.mean(axis=0), gap_pass_rate=rate,
        gap_checks=checks, excursions=path.excursions, equilibrium=eq,
    )


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Solve, simulate and summarise one scenario.

    Solver and integrator errors are re-raised with the regime named.
    """
    try:
        eq = solve_equilibrium(cfg)
        path = simulate_ensemble(cfg, eq)
    except OpinionNashError as exc:
        exc.args = (f"[{cfg.regime.type} scenario] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    return ScenarioResult(cfg, eq, path, summarize(cfg, eq, path))


# ---------------------------------------------------------------------------
# export


def _fmt(v) -> str:
    v = float(v)
    return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(c if isinstance(c, str) else (str(c) if isinstance(c, (int, np.integer)) else _fmt(c))
                           for c in row) + "\n")
    return buf.getvalue()


def summary_csv(summary: EnsembleSummary) -> str:
    n = summary.mean_opinion.shape[1]
    lo, hi = summary.spread_band
    header = ["s", "spread_mean", "spread_lo", "spread_hi"] + [f"mean_x_{a + 1}" for a in range(n)]
    mean = summary.spread_mean
    rows = ([s, mean[k], lo[k], hi[k], *summary.mean_opinion[k]] for k, s in enumerate(summary.s))
    return _csv(header, rows)


def trajectories_csv(path: OpinionPath, replicas) -> str:
    R, S1, n = path.x.shape
    s = path.grid.points
    header = ["replica", "s", "agent", "x", "u", "dB"]

    def rows():
        for r in range(R):
            for k in range(S1):
                for a in range(n):
                    dB = path.dB[r, k, a] if k < S1 - 1 else 0.0
                    yield [int(replicas[r]), s[k], a + 1, path.x[r, k, a], path.u[r, k, a], dB]

    return _csv(header, rows())


def equilibrium_csv(eq: Equilibrium) -> str:
    rows = ([a + 1, eq.x0[a], eq.x_star[a], eq.u_star[a]] for a in range(len(eq.x0)))
    return _csv(["agent", "x0", "x_star", "u_star"], rows)


def read_trajectories(text: str, grid: TimeGrid, n: int):
    """Parse a trajectories export back into ``(replicas, x, u, dB)`` arrays."""
    lines = text.strip().splitlines()[1:]
    recs = [ln.split(",") for ln in lines]
    reps = sorted({int(r[0]) for r in recs})
    R, S1 = len(reps), grid.steps + 1
    x = np.empty((R, S1, n))
    u = np.empty((R, S1, n))
    dB = np.empty((R, S1 - 1, n))
    ridx = {r: i for i, r in enumerate(reps)}
    for idx, rec in enumerate(recs):
        r = ridx[int(rec[0])]
        k = (idx // n) % S1
        a = int(rec[2]) - 1
        x[r, k, a] = float(rec[3])
        u[r, k, a] = float(rec[4])
        if k < S1 - 1:
            dB[r, k, a] = float(rec[5])
    return tuple(reps), x, u, dB


def export_results(result: ScenarioResult, out_dir=None, formats=None) -> dict[str, Path]:
    """Write CSV exports, the effective config and a JSON manifest.

    Output bytes depend only on the configuration, the seed, the library
    versions and the kernel backend (all recorded in the manifest).
    """
    cfg = result.config
    out = Path(out_dir) if out_dir is not None else cfg.outputs.resolve()
    formats = tuple(cfg.outputs.formats if formats is None else formats)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    files = {"effective_config.yaml": cfg.to_yaml()}
    if "summary" in formats:
        files["summary.csv"] = summary_csv(result.summary)
    if "equilibrium" in formats:
        files["equilibrium.csv"] = equilibrium_csv(result.equilibrium)
    if "trajectories" in formats:
        files["trajectories.csv"] = trajectories_csv(result.path, result.summary.replicas)
    written = {}
    for name, text in files.items():
        p = out / name
        try:
            p.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc.strerror}") from exc
        written[name] = p
    eq = result.equilibrium
    manifest = {
        "package": "opinion_nash",
        "version": __version__,
        "config_sha256": cfg.sha256(),
        "seed": cfg.monte_carlo.seed,
        "replicas": cfg.monte_carlo.replicas,
        "replica_offset": cfg.monte_carlo.replica_offset,
        "regime": cfg.regime.type,
        "backend": kernels.BACKEND,
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": _scipy_version(),
                     "pyyaml": yaml.__version__},
        "gap_pass_rate": result.summary.gap_pass_rate,
        "gap_checks": result.summary.gap_checks,
        "excursions": [int(v) for v in result.summary.excursions],
        "x_bar_1": eq.x_bar_1,
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
    }
    mp = out / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written["manifest.json"] = mp
    return written


def _scipy_version() -> str:
    import scipy

    return scipy.__version__
