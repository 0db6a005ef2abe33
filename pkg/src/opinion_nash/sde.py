"""Euler-Maruyama integration of the closed-loop opinion dynamics.

Noise comes from counter-based Philox substreams keyed by
``(root seed, replica, agent label)``, so adding agents or replicas never
reshuffles the increments of the existing ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm

from . import coefficients as co
from . import kernels
from .coefficients import CoefficientParams, HParams, MultiplierModel
from .equilibrium import Follower, FullConsensus, Leader
from .errors import DivergenceError, GridMismatchError, SaturationError

Policy = Union[str, Callable[[float, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class TimeGrid:
    t: float
    steps: int

    def __post_init__(self):
        if not (isinstance(self.steps, (int, np.integer)) and self.steps >= 1):
            raise ValueError(f"steps must be an integer >= 1 (got {self.steps!r})")
        if not (math.isfinite(self.t) and self.t > 0):
            raise ValueError(f"horizon t must be positive (got {self.t})")

    @property
    def ds(self) -> float:
        return self.t / self.steps

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.steps + 1) * (self.t / self.steps)

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.steps % factor:
            raise ValueError(f"{self.steps} steps cannot be coarsened by {factor}")
        return TimeGrid(self.t, self.steps // factor)


def _substream(seed: int, replica: int, agent: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(replica, agent))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoisePaths:
    """Brownian increments ``dB`` of shape ``(replicas, steps, agents)``.

    ``dB_lambda`` holds the multiplier-block increments of the stacked system;
    they are zero because the lower diffusion block vanishes.
    """

    seed: int
    grid: TimeGrid
    dB: np.ndarray
    agents: tuple[int, ...]
    replicas: tuple[int, ...]
    dB_lambda: Optional[np.ndarray] = None

    @classmethod
    def generate(cls, seed: int, grid: TimeGrid, agents: Union[int, Sequence[int]], replicas: Union[int, Sequence[int]] = 1,
                 replica_offset: int = 0) -> "NoisePaths":
        """Draw ``N(0, ds)`` increments.

        ``agents`` and ``replicas`` are either counts or explicit labels. Each
        ``(replica, agent)`` pair owns an independent stream.
        """
        agents = tuple(range(agents)) if isinstance(agents, (int, np.integer)) else tuple(int(a) for a in agents)
        if isinstance(replicas, (int, np.integer)):
            if replicas < 1:
                raise ValueError("replicas must be >= 1")
            replicas = tuple(range(replica_offset, replica_offset + replicas))
        else:
            replicas = tuple(int(r) for r in replicas)
        sd = math.sqrt(grid.ds)
        dB = np.empty((len(replicas), grid.steps, len(agents)))
        for ri, r in enumerate(replicas):
            for ai, a in enumerate(agents):
                dB[ri, :, ai] = _substream(seed, r, a).standard_normal(grid.steps) * sd
        dB.setflags(write=False)
        zeros = np.zeros_like(dB)
        zeros.setflags(write=False)
        return cls(seed=seed, grid=grid, dB=dB, agents=agents, replicas=replicas, dB_lambda=zeros)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dB.shape

    def brownian(self) -> np.ndarray:
        """Path values ``B(s_k)`` with ``B(0) = 0``, shape ``(replicas, steps + 1, agents)``."""
        R, S, n = self.dB.shape
        B = np.zeros((R, S + 1, n))
        np.cumsum(self.dB, axis=1, out=B[:, 1:, :])
        return B

    def coarsen(self, factor: int) -> "NoisePaths":
        """Same Brownian path sampled on a grid ``factor`` times coarser."""
        g = self.grid.coarsen(factor)
        R, S, n = self.dB.shape
        dB = self.dB.reshape(R, g.steps, factor, n).sum(axis=2)
        dB.setflags(write=False)
        return NoisePaths(self.seed, g, dB, self.agents, self.replicas, np.zeros_like(dB))

    def select(self, agents: Sequence[int]) -> "NoisePaths":
        """Sub-ensemble restricted to the given agent columns (positional)."""
        idx = list(agents)
        dB = np.ascontiguousarray(self.dB[:, :, idx])
        return NoisePaths(self.seed, self.grid, dB, tuple(self.agents[i] for i in idx), self.replicas, np.zeros_like(dB))


@dataclass
class OpinionPath:
    """Sampled trajectories, shape ``(replicas, steps + 1, agents)`` for ``x`` and ``u``.

    Opinions are not clamped to ``[0, 1]``; :attr:`excursions` counts the grid
    points where an agent left the box.
    """

    grid: TimeGrid
    x: np.ndarray
    u: np.ndarray
    dB: np.ndarray
    regime: str
    diffusion: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_agents(self) -> int:
        return self.x.shape[2]

    @property
    def n_replicas(self) -> int:
        return self.x.shape[0]

    @property
    def excursions(self) -> np.ndarray:
        """Per-agent number of (replica, grid point) samples outside ``[0, 1]``."""
        return ((self.x < 0.0) | (self.x > 1.0)).sum(axis=(0, 1))

    @property
    def opinions(self) -> np.ndarray:
        return self.x

    @property
    def controls(self) -> np.ndarray:
        return self.u


def _as_agent_array(v, n, name):
    a = np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def simulate_general(mu: Callable, sigma: Callable, control_policy: Optional[Callable], x0, grid: TimeGrid,
                     noise: NoisePaths, regime: str = "general") -> OpinionPath:
    """Euler-Maruyama for ``dx = mu(s, x, u) ds + sigma(s, x, u) dB``.

    ``mu``, ``sigma`` and ``control_policy(s, x)`` act on arrays of shape
    ``(replicas, agents)``; a ``None`` policy means ``u = 0``.

    Raises
    ------
    DivergenceError
        When the state stops being finite; carries the step index.
    """
    if noise.grid != grid:
        raise GridMismatchError("noise was drawn on a different grid")
    R, S, n = noise.shape
    s_grid = grid.points
    x = np.empty((R, S + 1, n))
    u = np.zeros((R, S + 1, n))
    x[:, 0, :] = _as_agent_array(x0, n, "x0")
    for k in range(S + 1):
        s = s_grid[k]
        xk = x[:, k, :]
        if control_policy is not None:
            u[:, k, :] = control_policy(s, xk)
        if k == S:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            xn = xk + mu(s, xk, u[:, k, :]) * grid.ds + sigma(s, xk, u[:, k, :]) * noise.dB[:, k, :]
        if not np.all(np.isfinite(xn)):
            raise DivergenceError(f"state became non-finite at step {k + 1}", step=k + 1)
        x[:, k + 1, :] = xn
    return OpinionPath(grid=grid, x=x, u=u, dB=np.asarray(noise.dB), regime=regime)


# ---------------------------------------------------------------------------
# regime dynamics


@dataclass(frozen=True)
class LinearDynamics:
    """Per-agent closed-loop data ``dx = (alpha + beta x - u) ds + diff dB`` on a grid.

    ``W, K, x_ref, x0, sigma`` and the multiplier samples feed the feedback
    control; ``alpha, beta, lam, dlam`` have shape ``(steps + 1, agents)``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    W: np.ndarray
    K: np.ndarray
    x_ref: np.ndarray
    x0: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    dlam: np.ndarray
    regime: str

    @property
    def diffusion(self) -> np.ndarray:
        return np.sqrt(2.0 * self.sigma)


def _multiplier_grid(multipliers, s_grid, n):
    if multipliers is None:
        multipliers = [MultiplierModel()] * n
    elif isinstance(multipliers, MultiplierModel):
        multipliers = [multipliers] * n
    if len(multipliers) != n:
        raise ValueError(f"need {n} multiplier models, got {len(multipliers)}")
    lam = np.empty((len(s_grid), n))
    dlam = np.empty((len(s_grid), n))
    for a, m in enumerate(multipliers):
        lv, dv, _ = co.multiplier_eval(m, s_grid, check_domain=False)
        lam[:, a] = lv
        dlam[:, a] = dv
    return lam, dlam


def full_consensus_dynamics(cp: CoefficientParams, regime: FullConsensus, x0, x_star, grid: TimeGrid,
                            multipliers=None) -> LinearDynamics:
    """Drift ``m + gamma(s) (x - m) - u`` with ``m = mean(x*)``.

    The counterpart opinion in each agent's cost is the mean of the other
    agents' optima.
    """
    x_star = np.asarray(x_star, dtype=float)
    n = x_star.size
    s = grid.points
    g = np.asarray(co.gamma(s, cp))[:, None] * np.ones((1, n))
    m = float(x_star.mean())
    x_ref = (x_star.sum() - x_star) / (n - 1)
    lam, dlam = _multiplier_grid(multipliers, s, n)
    return LinearDynamics(
        alpha=(1.0 - g) * m, beta=g, W=np.full(n, cp.n * cp.w), K=np.full(n, cp.k), x_ref=x_ref,
        x0=_as_agent_array(x0, n, "x0"), sigma=np.full(n, regime.sigma), lam=lam, dlam=dlam, regime="full_consensus",
    )


def leader_dynamics(cp: CoefficientParams, regime: Leader, x0, grid: TimeGrid, multiplier=None) -> LinearDynamics:
    """Drift ``m + gamma_hat(s) (x - m) - u`` with ``m`` the mean assigned opinion."""
    if not regime.x_tilde:
        raise ValueError("leader dynamics need the assigned opinions x_tilde")
    s = grid.points
    g = np.asarray(co.gamma_hat(s, cp))[:, None]
    m = float(np.mean(regime.x_tilde))
    lam, dlam = _multiplier_grid(multiplier, s, 1)
    return LinearDynamics(
        alpha=(1.0 - g) * m, beta=g.copy(), W=np.array([cp.n * cp.w_bar]), K=np.array([cp.k_1]), x_ref=np.array([m]),
        x0=_as_agent_array(x0, 1, "x0"), sigma=np.array([regime.sigma_1]), lam=lam, dlam=dlam, regime="leader",
    )


def follower_dynamics(cps: Sequence[CoefficientParams], regimes: Sequence[Follower], x0, grid: TimeGrid,
                      multipliers=None) -> LinearDynamics:
    """Drift ``(k_i x + sign * w_i1 xbar) / lt + xi_hat(s) (x - xbar) - u`` per follower.

    Each follower carries its own constants (``cp.k`` is ``k_i``).
    """
    n = len(cps)
    if len(regimes) != n:
        raise ValueError("one regime per follower is required")
    s = grid.points
    alpha = np.empty((len(s), n))
    beta = np.empty((len(s), n))
    for a, (cp, rg) in enumerate(zip(cps, regimes)):
        lt = cp.lambda_tilde
        xi = np.asarray(co.xi_hat(s, cp))
        alpha[:, a] = rg.drift_sign * cp.w_i1 / lt * rg.x_bar_1 - xi * rg.x_bar_1
        beta[:, a] = cp.k / lt + xi
    lam, dlam = _multiplier_grid(multipliers, s, n)
    return LinearDynamics(
        alpha=alpha, beta=beta, W=np.array([cp.w_i1 for cp in cps]), K=np.array([cp.k for cp in cps]),
        x_ref=np.array([rg.x_bar_1 for rg in regimes]), x0=_as_agent_array(x0, n, "x0"),
        sigma=np.array([rg.sigma for rg in regimes], dtype=float), lam=lam, dlam=dlam, regime="follower",
    )


def simulate_dynamics(dyn: LinearDynamics, hp: HParams, grid: TimeGrid, noise: NoisePaths,
                      policy: Policy = "feedback") -> OpinionPath:
    """Integrate a regime's closed loop.

    ``policy`` is ``"feedback"`` (equilibrium control from the control cubic),
    ``"zero"`` or a callable ``(s, x) -> u`` on ``(replicas, agents)`` arrays.

    Raises
    ------
    SaturationError
        If ``h`` overflows while evaluating the feedback control.
    DivergenceError
        If the state stops being finite.
    """
    if noise.grid != grid:
        raise GridMismatchError("noise was drawn on a different grid")
    R, S, n = noise.shape
    if dyn.alpha.shape != (S + 1, n):
        raise GridMismatchError(f"dynamics sampled on {dyn.alpha.shape}, noise has {S} steps and {n} agents")
    diff = dyn.diffusion
    if callable(policy):
        k_of = {float(v): i for i, v in enumerate(grid.points)}

        def mu(s, x, u):
            k = k_of[float(s)]
            return dyn.alpha[k] + dyn.beta[k] * x - u

        path = simulate_general(mu, lambda s, x, u: diff, policy, dyn.x0, grid, noise, regime=dyn.regime)
        path.diffusion = diff
        return path
    if policy not in ("feedback", "zero"):
        raise ValueError(f"unknown control policy {policy!r}")
    x, u, fail, reason = kernels.closed_loop_em(
        grid.points, dyn.alpha, dyn.beta, dyn.lam, dyn.dlam, dyn.W, dyn.K, dyn.x_ref, dyn.x0, dyn.sigma, diff,
        hp.b, hp.d, np.asarray(noise.dB), policy == "feedback",
    )
    if fail >= 0:
        if reason == 1:
            raise SaturationError(f"h overflow while evaluating the feedback control at step {fail}")
        raise DivergenceError(f"state became non-finite at step {fail}", step=fail)
    return OpinionPath(grid=grid, x=x, u=u, dB=np.asarray(noise.dB), regime=dyn.regime, diffusion=diff)


def simulate_full_consensus(cp, regime, x0, x_star_profile, grid, noise, hp=HParams(), policy="feedback",
                            multipliers=None) -> OpinionPath:
    dyn = full_consensus_dynamics(cp, regime, x0, x_star_profile, grid, multipliers)
    return simulate_dynamics(dyn, hp, grid, noise, policy)


def simulate_leader(cp, regime, x0, grid, noise, hp=HParams(), policy="feedback", multiplier=None) -> OpinionPath:
    dyn = leader_dynamics(cp, regime, x0, grid, multiplier)
    return simulate_dynamics(dyn, hp, grid, noise, policy)


def simulate_followers(cps, regimes, x0, grid, noise, hp=HParams(), policy="feedback", multipliers=None) -> OpinionPath:
    dyn = follower_dynamics(cps, regimes, x0, grid, multipliers)
    return simulate_dynamics(dyn, hp, grid, noise, policy)


# ---------------------------------------------------------------------------
# stacked linear system


def _checked_expm(M):
    E = expm(M)
    if not np.all(np.isfinite(E)):
        raise SaturationError("matrix exponential overflowed")
    return E


def _system_blocks(sm):
    A = np.asarray(sm.A, dtype=float)
    K_hat = np.asarray(sm.K_hat, dtype=float)
    S_hat = np.asarray(sm.Sigma_hat, dtype=float)
    if S_hat.ndim == 1:
        S_hat = S_hat[:, None]
    N = A.shape[0]
    if A.shape != (N, N) or K_hat.shape != (N, N) or S_hat.shape[0] != N:
        raise GridMismatchError(f"inconsistent system blocks {A.shape}, {K_hat.shape}, {S_hat.shape}")
    return A, K_hat, S_hat


def _brownian(dB, m):
    dB = np.asarray(dB, dtype=float)
    if dB.ndim == 1:
        dB = dB[:, None]
    if dB.shape[1] != m:
        raise GridMismatchError(f"noise has {dB.shape[1]} components, diffusion block expects {m}")
    B = np.zeros((dB.shape[0] + 1, m))
    np.cumsum(dB, axis=0, out=B[1:])
    return B


def closed_form_linear(sm, X0, grid: TimeGrid, dB, form: str = "exact") -> np.ndarray:
    """Variation-of-constants solution of ``dX = (K_hat X0 + A X) ds + Sigma_hat dB``.

    Parameters
    ----------
    sm : SystemMatrices or any object with ``A``, ``K_hat``, ``Sigma_hat``
    X0 : (2n,) array_like
    grid : TimeGrid
    dB : (steps, m) array_like
        Brownian increments; the path is their running sum.
    form : {"exact", "printed"}
        ``"exact"`` is ``e^{As} X0 + int_0^s e^{A(s-r)} dr K_hat X0``;
        ``"printed"`` replaces both by ``e^{As} K_hat X0``. The noise part,
        ``Sigma_hat B(s) + int_0^s e^{A(s-r)} A Sigma_hat B(r) dr``, is shared
        and its integral uses the left-rectangle rule on the grid.

    Returns
    -------
    (steps + 1, 2n) ndarray
    """
    A, K_hat, S_hat = _system_blocks(sm)
    N = A.shape[0]
    X0 = np.asarray(X0, dtype=float)
    B = _brownian(dB, S_hat.shape[1])
    S = B.shape[0] - 1
    if S != grid.steps:
        raise GridMismatchError(f"noise has {S} steps, grid has {grid.steps}")
    ds = grid.ds
    # Van Loan: expm([[A, I], [0, 0]] ds) carries e^{A ds} and int_0^ds e^{Ar} dr
    aug = np.zeros((2 * N, 2 * N))
    aug[:N, :N] = A
    aug[:N, N:] = np.eye(N)
    Eaug = _checked_expm(aug * ds)
    E, Phi_step = Eaug[:N, :N], Eaug[:N, N:]
    drive = K_hat @ X0
    v = B @ (A @ S_hat).T  # A Sigma_hat B(s_k), one row per grid point
    out = np.empty((S + 1, N))
    expAs = np.eye(N)
    Phi = np.zeros((N, N))
    integral = np.zeros(N)
    for k in range(S + 1):
        if form == "exact":
            det = expAs @ X0 + Phi @ drive
        elif form == "printed":
            det = expAs @ drive
        else:
            raise ValueError(f"unknown form {form!r}")
        out[k] = det + S_hat @ B[k] + integral
        if k == S:
            break
        integral = E @ (integral + v[k] * ds)
        Phi = Phi + expAs @ Phi_step
        expAs = expAs @ E
        if not np.all(np.isfinite(expAs)):
            raise SaturationError(f"matrix exponential overflowed at s={grid.points[k + 1]}")
    return out


def simulate_linear_em(sm, X0, grid: TimeGrid, dB) -> np.ndarray:
    """Euler-Maruyama for the stacked linear system (same noise convention as :func:`closed_form_linear`)."""
    A, K_hat, S_hat = _system_blocks(sm)
    X0 = np.asarray(X0, dtype=float)
    dB = np.asarray(dB, dtype=float)
    if dB.ndim == 1:
        dB = dB[:, None]
    drive = K_hat @ X0
    out = np.empty((dB.shape[0] + 1, A.shape[0]))
    out[0] = X0
    for k in range(dB.shape[0]):
        out[k + 1] = out[k] + (drive + A @ out[k]) * grid.ds + S_hat @ dB[k]
    return out


# ---------------------------------------------------------------------------
# opinion-gap bound


@dataclass(frozen=True)
class BoundReport:
    """Opinion-gap bound ``|dx(s)| <= |dx0| + |int (gamma dx - du) ds| + sqrt(2 sigma) |int (dB_i - dB_j)|``.

    ``rhs`` is a scalar for the full-horizon form and an array for the
    running form. ``margin`` is ``min(rhs - lhs)``.
    """

    lhs: np.ndarray
    rhs: Union[float, np.ndarray]
    max_lhs: float
    passed: bool
    margin: float
    worst_index: int

    @property
    def max_rhs(self) -> float:
        return float(np.max(self.rhs))


def opinion_gap_bound_check(path_i: OpinionPath, path_j: OpinionPath, cp: CoefficientParams, sigma: float,
                            agent_i: int = 0, agent_j: int = 0, replica: int = 0, horizon: str = "running",
                            rtol: float = 1e-12) -> BoundReport:
    """Evaluate the pairwise opinion-gap bound on sampled paths.

    Both sides are discretised on the simulation grid: the left side at
    every grid point, the drift and noise integrals with the same
    left-point sums the integrator used. ``horizon="running"`` integrates the
    right side over ``[0, s]``, which is what the integral form of the
    dynamics supports. ``horizon="full"`` integrates over the whole horizon
    ``[0, t]`` for every ``s``; that variant is not a valid bound in general
    and is kept for comparison.

    Raises
    ------
    GridMismatchError
        If the two paths were sampled on different grids.
    """
    if path_i.grid != path_j.grid:
        raise GridMismatchError("paths were sampled on different grids")
    grid = path_i.grid
    dx = path_i.x[replica, :, agent_i] - path_j.x[replica, :, agent_j]
    du = path_i.u[replica, :, agent_i] - path_j.u[replica, :, agent_j]
    dw = path_i.dB[replica, :, agent_i] - path_j.dB[replica, :, agent_j]
    g = np.asarray(co.gamma(grid.points, cp))
    incr = (g[:-1] * dx[:-1] - du[:-1]) * grid.ds
    lhs = np.abs(dx)
    amp = math.sqrt(2.0 * sigma)
    if horizon == "full":
        rhs = abs(dx[0]) + abs(incr.sum()) + amp * abs(dw.sum())
        scale = abs(dx[0]) + np.abs(incr).sum() + amp * np.abs(dw).sum()
    elif horizon == "running":
        drift = np.concatenate([[0.0], np.cumsum(incr)])
        noise = np.concatenate([[0.0], np.cumsum(dw)])
        rhs = abs(dx[0]) + np.abs(drift) + amp * np.abs(noise)
        scale = abs(dx[0]) + np.concatenate([[0.0], np.cumsum(np.abs(incr))]) + amp * np.concatenate(
            [[0.0], np.cumsum(np.abs(dw))])
    else:
        raise ValueError(f"unknown horizon {horizon!r}")
    gap = rhs - lhs
    slack = rtol * (1.0 + scale + lhs)
    worst = int(np.argmin(gap))
    return BoundReport(
        lhs=lhs, rhs=rhs, max_lhs=float(lhs.max()), passed=bool(np.all(gap >= -slack)), margin=float(gap[worst]),
        worst_index=worst,
    )
