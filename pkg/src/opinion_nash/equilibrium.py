"""Feedback Nash controls and optimal opinions for the three game regimes.

Every regime shares one template for the transformed running cost

    f = W/2 (x - x_ref)^2 + K/2 (x - x0)^2 + u^2/2 + b*lam*x*h + lam'*h
        + s*b*lam*h*D(x, u) + s^2 b^2 sigma lam h,

with ``h = exp(s*b*x + d)`` and a drift ``D = alpha + beta*x - u`` that is
linear in the own opinion. The regimes differ only in ``W, K, alpha, beta``:

* full consensus: ``W = n w``, ``K = k``, ``beta = gamma``, ``alpha = (1 - gamma) m``
* leader: the same with ``k_1``, ``n w_bar``, ``gamma_hat`` and the mean of the
  leader-assigned opinions
* follower: ``W = w_i1``, ``K = k_i``, ``beta = k_i/lt + xi_hat``,
  ``alpha = sign * w_i1/lt * xbar - xi_hat * xbar`` (``lt = k_i + w_i1``)

The feedback control solves ``f_u f_xx^2 = 2 f_x f_xu``. Because
``f_x = A1 - C3 u`` and ``f_xx = A2 - C2 u`` this is a cubic in ``u``.
The optimal opinion solves the regime's opinion condition, which becomes a
cubic in ``x`` once ``h`` is replaced by ``e + s*b*x``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import coefficients as co
from .coefficients import CoefficientParams, HParams, MultiplierModel
from .cubic import CubicPoly, RootSet, solve_cubic_real
from .errors import (
    ConvergenceError,
    DegenerateCubicError,
    DegenerateMultiplierError,
    SaturationError,
    StationarityError,
)

STATIONARITY_TOL = 1e-6
# backward error below which two roots count as equally stationary
_TIE_TOL = 1e-9


@dataclass(frozen=True)
class FullConsensus:
    """Complete network, common ``k`` and ``w`` (taken from the coefficient params)."""

    sigma: float = 0.0
    tag: str = field(default="full_consensus", init=False)


@dataclass(frozen=True)
class Leader:
    """Agent 1 fixing its opinion against assigned opinions ``x_tilde`` of the others."""

    sigma_1: float = 0.0
    x_tilde: tuple[float, ...] = ()
    tag: str = field(default="leader", init=False)

    def check_assigned(self, x_star: Sequence[float]) -> None:
        if len(x_star) != len(self.x_tilde):
            raise ValueError("x_star and x_tilde lengths differ")
        bad = [j for j, (xt, xs) in enumerate(zip(self.x_tilde, x_star)) if not xt < xs]
        if bad:
            raise ValueError(f"assigned opinions must be below the optimal ones (violations at {bad})")


@dataclass(frozen=True)
class Follower:
    """Follower tracking the leader's fixed opinion ``x_bar_1``.

    ``drift_sign`` multiplies the leader-attraction term ``w_i1 * x_bar_1 / lt``;
    ``+1`` is the statement form, ``-1`` the variant used in the derivation.
    """

    sigma: float = 0.0
    x_bar_1: float = 0.0
    drift_sign: int = 1
    tag: str = field(default="follower", init=False)

    def __post_init__(self):
        if self.drift_sign not in (1, -1):
            raise ValueError("drift_sign must be +1 or -1")


GameRegime = Union[FullConsensus, Leader, Follower]


@dataclass(frozen=True)
class GameState:
    """Point at which the equilibrium conditions are evaluated.

    ``lam`` is the ``(lambda, lambda', lambda'')`` bundle from
    :func:`opinion_nash.coefficients.multiplier_eval`. ``mean_opt`` is the
    mean-field aggregate (ignored by followers).
    """

    s: float
    x_i: float
    x_j: float
    x0_i: float
    mean_opt: float = 0.0
    u_i: float = 0.0
    lam: tuple[float, float, float] = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class DerivBundle:
    f: float
    f_x: float
    f_xx: float
    f_u: float
    f_xu: float
    A1: float
    A2: float
    C1: float
    C2: float
    C3: float


@dataclass(frozen=True)
class Drift:
    """Regime reduced to the shared template at one time instant."""

    W: float
    K: float
    sigma: float
    alpha: float
    beta: float


def _sigma(regime: GameRegime) -> float:
    return regime.sigma_1 if isinstance(regime, Leader) else regime.sigma


def regime_drift(regime: GameRegime, s: float, mean_opt: float, cp: CoefficientParams) -> Drift:
    if isinstance(regime, FullConsensus):
        g = co.gamma(s, cp)
        return Drift(cp.n * cp.w, cp.k, regime.sigma, (1.0 - g) * mean_opt, g)
    if isinstance(regime, Leader):
        g = co.gamma_hat(s, cp)
        return Drift(cp.n * cp.w_bar, cp.k_1, regime.sigma_1, (1.0 - g) * mean_opt, g)
    if isinstance(regime, Follower):
        lt = cp.lambda_tilde
        xi = co.xi_hat(s, cp)
        xb = regime.x_bar_1
        alpha = regime.drift_sign * cp.w_i1 / lt * xb - xi * xb
        return Drift(cp.w_i1, cp.k, regime.sigma, alpha, cp.k / lt + xi)
    raise TypeError(f"unknown regime {regime!r}")


def drift_value(regime: GameRegime, s: float, x: float, u: float, mean_opt: float, cp: CoefficientParams) -> float:
    dr = regime_drift(regime, s, mean_opt, cp)
    return dr.alpha + dr.beta * x - u


def cost_integrand(W, K, x, x_ref, x0, u) -> float:
    return 0.5 * (W * (x - x_ref) ** 2 + K * (x - x0) ** 2 + u * u)


def f_value(regime: GameRegime, st: GameState, hp: HParams, cp: CoefficientParams) -> float:
    """The transformed running cost ``f`` itself (no derivatives)."""
    dr = regime_drift(regime, st.s, st.mean_opt, cp)
    lam, dlam, _ = st.lam
    s, b, x, u = st.s, hp.b, st.x_i, st.u_i
    h = co.h_exact(s, x, hp)
    D = dr.alpha + dr.beta * x - u
    return (
        cost_integrand(dr.W, dr.K, x, st.x_j, st.x0_i, u)
        + b * lam * x * h
        + dlam * h
        + s * b * lam * h * D
        + s * s * b * b * dr.sigma * lam * h
    )


def f_derivatives(regime: GameRegime, st: GameState, hp: HParams, cp: CoefficientParams) -> DerivBundle:
    """``f`` with its first and mixed partials in own opinion and control.

    Raises
    ------
    DegenerateMultiplierError
        If ``lambda`` is (numerically) zero.
    SaturationError
        If ``h`` overflows.
    """
    lam, dlam, _ = st.lam
    if abs(lam) < 1e-12:
        raise DegenerateMultiplierError(f"multiplier vanishes at s={st.s}")
    dr = regime_drift(regime, st.s, st.mean_opt, cp)
    s, b, x, u = st.s, hp.b, st.x_i, st.u_i
    h = co.h_exact(s, x, hp)
    sb = s * b
    D0 = dr.alpha + dr.beta * x  # u-free part of the drift
    C1 = sb * lam * h
    C2 = sb ** 3 * lam * h
    C3 = sb ** 2 * lam * h
    inner0 = lam * (1.0 + sb * x + s * sb * D0 + s * dr.beta + dr.sigma * s ** 3 * b * b) + s * dlam
    A1 = dr.W * (x - st.x_j) + dr.K * (x - st.x0_i) + b * h * inner0
    A2 = dr.W + dr.K + s * b * b * h * inner0 + s * b * b * lam * (1.0 + s * dr.beta) * h
    f = f_value(regime, st, hp, cp)
    return DerivBundle(
        f=f,
        f_x=A1 - C3 * u,
        f_xx=A2 - C2 * u,
        f_u=u - C1,
        f_xu=-C3,
        A1=A1,
        A2=A2,
        C1=C1,
        C2=C2,
        C3=C3,
    )


def stationarity_residual(regime: GameRegime, st: GameState, hp: HParams, cp: CoefficientParams, u: float) -> float:
    """``|f_u f_xx^2 - 2 f_x f_xu|`` at control ``u``."""
    db = f_derivatives(regime, replace(st, u_i=u), hp, cp)
    return abs(db.f_u * db.f_xx ** 2 - 2.0 * db.f_x * db.f_xu)


def control_cubic_from_bundle(db: DerivBundle) -> CubicPoly:
    A1, A2, C1, C2, C3 = db.A1, db.A2, db.C1, db.C2, db.C3
    return CubicPoly(
        C2 * C2,
        -C2 * (2.0 * A2 + C1 * C2),
        A2 * A2 + 2.0 * A2 * C1 * C2 - 2.0 * C3 * C3,
        2.0 * A1 * C3 - C1 * A2 * A2,
    )


def control_cubic(regime: GameRegime, st: GameState, hp: HParams, cp: CoefficientParams) -> CubicPoly:
    """Stationarity condition expanded in powers of the control.

    Raises
    ------
    DegenerateCubicError
        At ``s = 0`` where every control coefficient but ``u * A2^2`` vanishes;
        use :func:`feedback_control`, which applies the ``u = 0`` limit.
    """
    if st.s == 0.0:
        raise DegenerateCubicError("control cubic is degenerate at s = 0; the feedback control is u = 0 there")
    poly = control_cubic_from_bundle(f_derivatives(regime, st, hp, cp))
    if poly.c3 == 0.0:
        raise DegenerateCubicError("control cubic lost its leading coefficient (s*b*lambda*h underflow)")
    return poly


def feedback_control(regime: GameRegime, st: GameState, hp: HParams, cp: CoefficientParams) -> float:
    """Equilibrium feedback control at the state's time and opinion.

    Among the real roots of the control cubic the most stationary one is
    chosen; roots that are stationary to rounding are tied and the tie goes
    to the smaller running cost.

    Raises
    ------
    StationarityError
        If no root brings the residual under ``1e-6``.
    """
    if st.s == 0.0:
        return 0.0
    poly = control_cubic(regime, st, hp, cp)
    dr = regime_drift(regime, st.s, st.mean_opt, cp)
    cands = []
    for u in solve_cubic_real(poly):
        res = stationarity_residual(regime, st, hp, cp, u)
        backward = res / max(1.0, poly.term_scale(u))
        g = cost_integrand(dr.W, dr.K, st.x_i, st.x_j, st.x0_i, u)
        cands.append((res, backward, g, u))
    best_res = min(c[0] for c in cands)
    tied = [c for c in cands if c[1] <= _TIE_TOL or c[0] == best_res]
    res, _, _, u = min(tied, key=lambda c: (c[2], c[0]))
    if not res < STATIONARITY_TOL:
        raise StationarityError(f"no stationary control at s={st.s}, x={st.x_i}", best_residual=best_res)
    return u


# ---------------------------------------------------------------------------
# opinion condition


@dataclass(frozen=True)
class OpinionTerms:
    """Opinion condition ``H(x) * (p2 x^2 + p1 x + p0) - (W + K) x + A3 = 0``.

    ``H`` is ``b*h`` for the mean-field regimes and ``h`` for followers.
    """

    p2: float
    p1: float
    p0: float
    A3: float
    WK: float
    h_scale: float
    A4: float

    def residual(self, x: float, hp: HParams, s: float, approx: bool = False) -> float:
        h = co.h_approx(s, x, hp) if approx else co.h_exact(s, x, hp)
        return self.h_scale * h * ((self.p2 * x + self.p1) * x + self.p0) - self.WK * x + self.A3

    def cubic(self, hp: HParams, s: float) -> CubicPoly:
        # h_scale * (e + s b x) * (p2 x^2 + p1 x + p0)
        c = self.h_scale
        e, sb = hp.e, s * hp.b
        return CubicPoly(
            c * sb * self.p2,
            c * (e * self.p2 + sb * self.p1),
            c * (e * self.p1 + sb * self.p0) - self.WK,
            c * e * self.p0 + self.A3,
        )


def _consensus_terms(st: GameState, hp: HParams, W: float, K: float, g: float, dg: float, sigma: float) -> OpinionTerms:
    """Collectors of the mean-field opinion condition (shared by full consensus and leader)."""
    lam, dlam, ddlam = st.lam
    s, b, m, u = st.s, hp.b, st.mean_opt, st.u_i
    sb = s * b
    kappa = 1.0 + s * s * b + b + sb
    A4 = lam + s * dlam + s * sb * lam * ((1.0 - g) * m - u) + s * lam * (g + s * sb * sigma)
    p2 = sb * b * lam
    p1 = (
        2.0 * lam
        + sb * dlam
        + kappa * dlam * g
        + g * s * lam
        + s * sb * lam * dg
        + sigma * sb ** 3 * lam
        - sb * lam * (1.0 + s * g)
    )
    p0 = (
        s * ddlam
        + dlam
        + kappa * dlam * ((1.0 - g) * m - u)
        + g * (s * dlam + lam)
        + s * lam * (1.0 - sb * m) * dg
        + sigma * sb * sb * (3.0 * lam + dlam)
        - A4
    )
    A3 = W * st.x_j + K * st.x0_i
    return OpinionTerms(p2=p2, p1=p1, p0=p0, A3=A3, WK=W + K, h_scale=b, A4=A4)


def _follower_terms(st: GameState, hp: HParams, cp: CoefficientParams, regime: Follower) -> OpinionTerms:
    lam, dlam, ddlam = st.lam
    s, b, u = st.s, hp.b, st.u_i
    sb = s * b
    lt = cp.lambda_tilde
    xi = co.xi_hat(st.s, cp)
    dxi = co.xi_hat_ds(st.s, cp)
    xb = regime.x_bar_1
    sg = regime.drift_sign
    B = xi + cp.k / lt
    A4 = lam + s * dlam + s * sb * lam * (sg * cp.w_i1 / lt * xb - xi * xb - u) + s * lam * (B + s * s * b ** 3 * regime.sigma)
    p2 = sb * b * b * lam
    p1 = (
        2.0 * b * lam
        + sb * b * dlam
        + s * (1.0 + sb * b * dlam + b * lam * (1.0 + b + sb)) * B
        + sb * sb * dxi
        + s * sb ** 2 * b * b * regime.sigma * lam
        - sb * b * lam * (1.0 + s * B)
    )
    p0 = (
        sb * ddlam
        + b * dlam
        - sb * (sb * dlam + lam * (1.0 + b + sb)) * ((xi - sg * cp.w_i1 / lt) * xb + u)
        + B * b * (lam + dlam)
        + sb * lam * (1.0 - sb * xb) * dxi
        + sb * sb * b * regime.sigma * lam * (1.0 + 2.0 * s + s * dlam)
        - b * A4
    )
    A3 = cp.w_i1 * st.x_j + cp.k * st.x0_i
    return OpinionTerms(p2=p2, p1=p1, p0=p0, A3=A3, WK=cp.k + cp.w_i1, h_scale=1.0, A4=A4)


def opinion_terms(regime: GameRegime, st: GameState, hp: HParams, cp: CoefficientParams) -> OpinionTerms:
    if isinstance(regime, FullConsensus):
        return _consensus_terms(st, hp, cp.n * cp.w, cp.k, co.gamma(st.s, cp), co.gamma_ds(st.s, cp), regime.sigma)
    if isinstance(regime, Leader):
        return _consensus_terms(
            st, hp, cp.n * cp.w_bar, cp.k_1, co.gamma_hat(st.s, cp), co.gamma_hat_ds(st.s, cp), regime.sigma_1
        )
    if isinstance(regime, Follower):
        return _follower_terms(st, hp, cp, regime)
    raise TypeError(f"unknown regime {regime!r}")


def opinion_cubic(regime: GameRegime, st: GameState, hp: HParams, cp: CoefficientParams) -> CubicPoly:
    """Opinion condition with ``h`` linearised to ``e + s*b*x``, in powers of ``x``.

    Raises
    ------
    DegenerateCubicError
        At ``s = 0`` (leading coefficient ``s^2 b^4 lambda`` vanishes).
    """
    if abs(st.lam[0]) < 1e-12:
        raise DegenerateMultiplierError(f"multiplier vanishes at s={st.s}")
    poly = opinion_terms(regime, st, hp, cp).cubic(hp, st.s)
    if poly.c3 == 0.0:
        raise DegenerateCubicError("opinion cubic is degenerate at s = 0")
    return poly


def opinion_residual(regime: GameRegime, st: GameState, hp: HParams, cp: CoefficientParams, x: float,
                     approx: bool = False) -> float:
    """Signed residual of the opinion condition at ``x`` (exact ``h`` unless ``approx``)."""
    return opinion_terms(regime, st, hp, cp).residual(x, hp, st.s, approx=approx)


def optimal_opinion(regime: GameRegime, st: GameState, hp: HParams, cp: CoefficientParams,
                    roots: Optional[RootSet] = None) -> float:
    """Equilibrium opinion from the opinion cubic.

    The leader takes the largest real root. Other agents take the root whose
    exact-``h`` opinion residual is smallest.
    """
    if roots is None:
        roots = solve_cubic_real(opinion_cubic(regime, st, hp, cp))
    if isinstance(regime, Leader):
        return max(roots.roots)
    terms = opinion_terms(regime, st, hp, cp)

    def score(x):
        try:
            return abs(terms.residual(x, hp, st.s))
        except SaturationError:
            return math.inf

    return min(roots.roots, key=score)


# ---------------------------------------------------------------------------
# equilibrium profile


@dataclass(frozen=True)
class AgentSpec:
    """Per-agent data for the full-consensus profile."""

    x0: float
    multiplier: MultiplierModel = field(default_factory=MultiplierModel)


@dataclass
class FixedPointResult:
    x_star: np.ndarray
    u_star: np.ndarray
    iterations: int
    change: float


def _others_mean(x: np.ndarray) -> np.ndarray:
    n = len(x)
    return (x.sum() - x) / (n - 1)


def mean_field_fixed_point(
    agents: Sequence[AgentSpec],
    regime: FullConsensus,
    hp: HParams,
    cp: CoefficientParams,
    s_eval: float,
    tol: float = 1e-10,
    max_iter: int = 2000,
    damping: float = 0.5,
    x_init: Optional[Sequence[float]] = None,
    couple_control: bool = False,
    control: float = 0.0,
) -> FixedPointResult:
    """Damped fixed-point iteration for the full-consensus opinion profile.

    Each agent's optimum depends on the aggregate ``mean(x*)`` (own entry
    included) and on the mean of the other agents' optima, which serves as
    the counterpart opinion ``x_j``. The control entering the opinion
    condition is held at ``control`` unless ``couple_control`` is set, in which case
    the pair ``(x*, phi*(s, x*))`` is iterated jointly. The coupled map is
    often expansive, so it is off by default.

    ``damping=1`` gives the undamped iteration.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` sweeps without the profile change dropping below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = len(agents)
    x = np.array([a.x0 for a in agents] if x_init is None else x_init, dtype=float)
    u = np.full(n, float(control))
    lams = [co.multiplier_eval(a.multiplier, s_eval) for a in agents]
    change = math.inf
    for it in range(1, max_iter + 1):
        m = float(x.mean())
        xj = _others_mean(x)
        x_new = np.empty(n)
        u_new = np.empty(n)
        for i, a in enumerate(agents):
            st = GameState(s=s_eval, x_i=x[i], x_j=xj[i], x0_i=a.x0, mean_opt=m, u_i=u[i], lam=lams[i])
            xi_opt = optimal_opinion(regime, st, hp, cp)
            x_new[i] = xi_opt
            if couple_control:
                u_new[i] = feedback_control(regime, replace(st, x_i=xi_opt), hp, cp)
            else:
                u_new[i] = control
        x_next = (1.0 - damping) * x + damping * x_new
        u_next = (1.0 - damping) * u + damping * u_new
        change = float(max(np.max(np.abs(x_next - x)), np.max(np.abs(u_next - u))))
        x, u = x_next, u_next
        if not np.all(np.isfinite(x)):
            raise ConvergenceError("profile iteration produced non-finite opinions", last=x, residual=change)
        if change < tol:
            return FixedPointResult(x_star=x, u_star=u, iterations=it, change=change)
    raise ConvergenceError(f"no convergence in {max_iter} iterations (last change {change:.3g})", last=x, residual=change)
