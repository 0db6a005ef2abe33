import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.integrate import quad

from oracles import rk4
from opinion_nash import coefficients as co
from opinion_nash.coefficients import CoefficientParams, HParams
from opinion_nash.equilibrium import Follower, FullConsensus, Leader
from opinion_nash.errors import DivergenceError, GridMismatchError, SaturationError
from opinion_nash.network import NetworkSpec, stack_system_matrices
from opinion_nash.sde import (
    NoisePaths,
    TimeGrid,
    closed_form_linear,
    opinion_gap_bound_check,
    simulate_followers,
    simulate_full_consensus,
    simulate_general,
    simulate_leader,
    simulate_linear_em,
)


def _zero(s, x, u):
    return np.zeros_like(x)


def test_time_grid():
    g = TimeGrid(2.0, 8)
    assert g.ds == 0.25 and g.points[-1] == 2.0 and len(g.points) == 9
    assert g.coarsen(4) == TimeGrid(2.0, 2)
    with pytest.raises(ValueError):
        g.coarsen(3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_general_constant_path():
    grid = TimeGrid(1.0, 100)
    p = simulate_general(_zero, _zero, None, 0.3, grid, NoisePaths.generate(0, grid, 1))
    assert np.all(p.x == 0.3)


def test_general_constant_drift_exact():
    grid = TimeGrid(1.0, 1000)
    p = simulate_general(lambda s, x, u: np.ones_like(x), _zero, None, 0.0, grid, NoisePaths.generate(0, grid, 1))
    assert p.x[0, -1, 0] == pytest.approx(1.0, abs=1e-12)


def test_general_linear_decay_against_rk4():
    ref = rk4(lambda t, y: -y, 1.0, 0.0, 1.0, 1000)
    assert ref == pytest.approx(math.exp(-1), abs=1e-13)
    for steps in (1000, 4000):
        grid = TimeGrid(1.0, steps)
        p = simulate_general(lambda s, x, u: -x, _zero, None, 1.0, grid, NoisePaths.generate(0, grid, 1))
        assert abs(p.x[0, -1, 0] - ref) <= 2 * grid.ds


def test_general_divergence_reports_step():
    grid = TimeGrid(1.0, 100)
    with pytest.raises(DivergenceError) as err:
        simulate_general(lambda s, x, u: x * 1e300, _zero, None, 1e10, grid, NoisePaths.generate(0, grid, 1))
    assert err.value.step >= 1


def test_noise_grid_mismatch():
    with pytest.raises(GridMismatchError):
        simulate_general(_zero, _zero, None, 0.0, TimeGrid(1.0, 10), NoisePaths.generate(0, TimeGrid(1.0, 20), 1))


def test_noise_statistics_and_independence():
    grid = TimeGrid(1.0, 1000)
    noise = NoisePaths.generate(42, grid, 4, replicas=25)
    flat = noise.dB.reshape(-1, 4)
    assert flat.shape[0] * 4 == 100_000
    assert np.var(noise.dB) == pytest.approx(grid.ds, rel=0.03)
    corr = np.corrcoef(flat.T)
    assert np.max(np.abs(corr - np.eye(4))) < 0.03
    lag = np.corrcoef(noise.dB[:, :-1, 0].ravel(), noise.dB[:, 1:, 0].ravel())[0, 1]
    assert abs(lag) < 0.03


def test_noise_substreams_stable_under_agent_count():
    grid = TimeGrid(1.0, 50)
    a = NoisePaths.generate(9, grid, 2)
    b = NoisePaths.generate(9, grid, 5)
    np.testing.assert_array_equal(a.dB, b.dB[:, :, :2])
    c = NoisePaths.generate(9, grid, [4, 1])
    np.testing.assert_array_equal(c.dB[:, :, 1], b.dB[:, :, 1])
    assert not a.dB.flags.writeable and not np.any(a.dB_lambda)


def test_noise_coarsen_keeps_brownian_path():
    grid = TimeGrid(1.0, 64)
    n = NoisePaths.generate(1, grid, 2, replicas=2)
    c = n.coarsen(4)
    np.testing.assert_allclose(c.brownian(), n.brownian()[:, ::4], atol=1e-14)


CP = CoefficientParams(k=1.0, w=0.5, n=3, t=1.0)


def test_full_consensus_diagonal_is_fixed():
    # the drift is m + gamma (x - m) - u, so x = m is at rest only for a zero-mean profile
    grid = TimeGrid(1.0, 200)
    p = simulate_full_consensus(CP, FullConsensus(0.0), [0.0] * 3, [-0.1, 0.0, 0.1], grid,
                                NoisePaths.generate(0, grid, 3), policy="zero")
    assert np.all(p.x == 0.0)


def test_full_consensus_deviation_matches_quadrature():
    grid = TimeGrid(1.0, 10_000)
    delta0 = 0.1
    p = simulate_full_consensus(CP, FullConsensus(0.0), delta0, [-0.1, 0.0, 0.1], grid,
                                NoisePaths.generate(0, grid, 3), policy="zero")
    for s_idx in (2500, 10_000):
        s = grid.points[s_idx]
        ref = delta0 * math.exp(quad(lambda v: co.gamma(v, CP), 0, s, epsabs=1e-14)[0])
        assert np.max(np.abs(p.x[0, s_idx] - ref)) <= 1e-4


def test_full_consensus_nonzero_mean_against_rk4():
    grid = TimeGrid(1.0, 10_000)
    m = 0.5
    p = simulate_full_consensus(CP, FullConsensus(0.0), [0.2, 0.5, 0.9], [0.4, 0.5, 0.6], grid,
                                NoisePaths.generate(0, grid, 3), policy="zero")
    for a, x0 in enumerate([0.2, 0.5, 0.9]):
        ref = rk4(lambda s, x: m + co.gamma(min(s, 1.0), CP) * (x - m), x0, 0.0, 1.0, 2000)
        assert abs(p.x[0, -1, a] - ref) <= 2 * grid.ds


def test_full_consensus_determinism_and_identical_agents():
    grid = TimeGrid(1.0, 300)
    noise = NoisePaths.generate(5, grid, 2, replicas=3)
    a = simulate_full_consensus(CP, FullConsensus(0.05), [0.5, 0.5], [0.5, 0.5], grid, noise)
    b = simulate_full_consensus(CP, FullConsensus(0.05), [0.5, 0.5], [0.5, 0.5], grid,
                                NoisePaths.generate(5, grid, 2, replicas=3))
    assert a.x.tobytes() == b.x.tobytes() and a.u.tobytes() == b.u.tobytes()
    same = NoisePaths(5, grid, np.repeat(noise.dB[:, :, :1], 2, axis=2), (0, 0), noise.replicas)
    c = simulate_full_consensus(CP, FullConsensus(0.05), [0.5, 0.5], [0.5, 0.5], grid, same)
    np.testing.assert_array_equal(c.x[:, :, 0], c.x[:, :, 1])


def test_full_consensus_permutation_equivariance():
    grid = TimeGrid(1.0, 200)
    labels = [0, 1, 2, 3]
    x0 = np.array([0.2, 0.4, 0.6, 0.8])
    xs = np.array([0.3, 0.45, 0.55, 0.7])
    perm = [2, 0, 3, 1]
    cp = CoefficientParams(k=1.0, w=0.5, n=4, t=1.0)
    a = simulate_full_consensus(cp, FullConsensus(0.05), x0, xs, grid, NoisePaths.generate(3, grid, labels, 2))
    b = simulate_full_consensus(cp, FullConsensus(0.05), x0[perm], xs[perm], grid,
                                NoisePaths.generate(3, grid, [labels[i] for i in perm], 2))
    np.testing.assert_array_equal(b.x, a.x[:, :, perm])
    np.testing.assert_array_equal(b.u, a.u[:, :, perm])


def test_leader_constant_at_assigned_mean():
    grid = TimeGrid(1.0, 200)
    cp = CoefficientParams(k_1=1.0, w_bar=0.5, n=3, t=1.0)
    p = simulate_leader(cp, Leader(0.0, (-0.5, 0.25, 0.25)), 0.0, grid, NoisePaths.generate(0, grid, 1), policy="zero")
    assert np.all(p.x == 0.0)


def test_leader_without_influence_matches_hand_drift():
    grid = TimeGrid(1.0, 500)
    cp = CoefficientParams(k_1=1.0, w_bar=0.0, n=3, t=1.0)
    noise = NoisePaths.generate(2, grid, 1, replicas=2)
    pol = lambda s, x: 0.3 * np.sin(3 * s) + 0.1 * x  # noqa: E731
    p = simulate_leader(cp, Leader(0.02, (0.2, 0.4, 0.9)), 0.6, grid, noise, policy=pol)
    ref = simulate_general(lambda s, x, u: x - u, lambda s, x, u: math.sqrt(0.04), pol, 0.6, grid, noise)
    np.testing.assert_allclose(p.x, ref.x, rtol=0, atol=1e-14)


def test_follower_exponential_growth():
    grid = TimeGrid(1.0, 10_000)
    cp = CoefficientParams(k=1.3, w_i1=0.0, t=1.0)
    p = simulate_followers([cp], [Follower(0.0, 0.7)], 1.0, grid, NoisePaths.generate(0, grid, 1), policy="zero")
    assert abs(p.x[0, -1, 0] - math.e) <= 2 * grid.ds


@pytest.mark.parametrize("sign", [1, -1])
def test_follower_started_at_leader_opinion(sign):
    # k_i = 0: lt = w_i1 and the deviation obeys d' = sign * xbar + xi_hat(s) d, d(0) = 0
    grid = TimeGrid(1.0, 10_000)
    cp = CoefficientParams(k=0.0, w_i1=0.8, t=1.0)
    xb = 0.6
    p = simulate_followers([cp], [Follower(0.0, xb, sign)], xb, grid, NoisePaths.generate(0, grid, 1), policy="zero")
    ref = rk4(lambda s, d: sign * xb + co.xi_hat(min(s, 1.0), cp) * d, 0.0, 0.0, 1.0, 2000)
    assert abs(p.x[0, -1, 0] - xb - ref) <= 2 * grid.ds
    # with the leader at zero both variants keep the follower at rest
    q = simulate_followers([cp], [Follower(0.0, 0.0, sign)], 0.0, grid, NoisePaths.generate(0, grid, 1),
                           policy="zero")
    assert np.all(q.x == 0.0)


def test_feedback_saturation_error():
    grid = TimeGrid(1.0, 100)
    with pytest.raises(SaturationError):
        simulate_full_consensus(CP, FullConsensus(0.0), [1e5, 0.5, 0.5], [0.5] * 3, grid,
                                NoisePaths.generate(0, grid, 3), hp=HParams(1.0, 0.1))


def _sys(A, K, S):
    return SimpleNamespace(A=np.atleast_2d(A), K_hat=np.atleast_2d(K), Sigma_hat=np.atleast_2d(S))


def test_closed_form_zero_drift_matrix():
    grid = TimeGrid(1.0, 50)
    rng = np.random.default_rng(0)
    K = rng.normal(size=(2, 2))
    S = rng.normal(size=(2, 1))
    X0 = np.array([0.3, -0.2])
    dB = rng.normal(scale=math.sqrt(grid.ds), size=(50, 1))
    out = closed_form_linear(_sys(np.zeros((2, 2)), K, S), X0, grid, dB, form="printed")
    B = np.concatenate([[0.0], np.cumsum(dB[:, 0])])
    np.testing.assert_allclose(out, (K @ X0)[None, :] + B[:, None] * S[:, 0], atol=1e-14)


def test_closed_form_eigendecomposition():
    grid = TimeGrid(1.0, 40)
    A = np.array([[-1.0, 0.5, 0.0], [0.2, -0.7, 0.1], [0.0, 0.3, -0.4]])
    X0 = np.array([1.0, -0.5, 0.25])
    out = closed_form_linear(_sys(A, np.eye(3), np.zeros((3, 1))), X0, grid, np.zeros((40, 1)), form="printed")
    ev, V = np.linalg.eig(A)
    c = np.linalg.solve(V, X0)
    ref = np.real((V[None, :, :] * (np.exp(np.outer(grid.points, ev)) * c)[:, None, :]).sum(axis=2))
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_closed_form_scalar_hand_evaluation():
    grid = TimeGrid(1.0, 20)
    dB = np.random.default_rng(2).normal(scale=math.sqrt(grid.ds), size=(20, 1))
    x0 = 0.7
    out = closed_form_linear(_sys(-1.0, 0.0, 1.0), [x0], grid, dB)
    B = np.concatenate([[0.0], np.cumsum(dB[:, 0])])
    s = grid.points
    for k in range(21):
        integral = sum(math.exp(-(s[k] - s[j])) * (-1.0) * B[j] * grid.ds for j in range(k))
        assert out[k, 0] == pytest.approx(math.exp(-s[k]) * x0 + B[k] + integral, abs=1e-13)


def test_closed_form_exact_solves_deterministic_system():
    # with zero noise the exact form solves X' = K_hat X0 + A X
    spec = NetworkSpec.complete(2, 0.5, 1.0)
    sm = stack_system_matrices(spec, -0.5 * np.eye(2), 0.1 * np.eye(2))
    X0 = np.array([0.2, 0.8, 1.0, 1.0])
    grid = TimeGrid(1.0, 64)
    out = closed_form_linear(sm, X0, grid, np.zeros((64, 2)))
    fine = simulate_linear_em(sm, X0, TimeGrid(1.0, 2 ** 16), np.zeros((2 ** 16, 2)))
    np.testing.assert_allclose(out[-1], fine[-1], atol=1e-4)
    with pytest.raises(ValueError):
        closed_form_linear(sm, X0, grid, np.zeros((64, 2)), form="other")
    with pytest.raises(GridMismatchError):
        closed_form_linear(sm, X0, grid, np.zeros((32, 2)))


def test_em_approaches_closed_form():
    spec = NetworkSpec.complete(2, 0.5, 1.0)
    sm = stack_system_matrices(spec, -0.5 * np.eye(2), 0.2 * np.eye(2))
    X0 = np.array([0.2, 0.8, 1.0, 1.0])
    fine = TimeGrid(1.0, 4096)
    dB = np.random.default_rng(11).normal(scale=math.sqrt(fine.ds), size=(4096, 2))
    ref = closed_form_linear(sm, X0, fine, dB)
    errs = []
    for f in (64, 16):
        g = fine.coarsen(f)
        em = simulate_linear_em(sm, X0, g, dB.reshape(g.steps, f, 2).sum(axis=1))
        errs.append(np.max(np.abs(em - ref[::f])))
    assert errs[1] < errs[0]


def test_gap_identical_paths_give_zero_lhs():
    grid = TimeGrid(1.0, 200)
    noise = NoisePaths.generate(0, grid, [7])
    a = simulate_full_consensus(CP, FullConsensus(0.05), [0.4] * 3, [0.5] * 3, grid,
                                NoisePaths(0, grid, np.repeat(noise.dB, 3, axis=2), (7, 7, 7), noise.replicas))
    rep = opinion_gap_bound_check(a, a, CP, 0.05, agent_i=0, agent_j=1)
    assert rep.max_lhs == 0.0 and rep.passed


def test_gap_deterministic_pair():
    grid = TimeGrid(1.0, 500)
    p = simulate_full_consensus(CP, FullConsensus(0.0), [0.2, 0.5, 0.9], [0.4, 0.5, 0.6], grid,
                                NoisePaths.generate(0, grid, 3), policy="zero")
    rep = opinion_gap_bound_check(p, p, CP, 0.0, agent_i=0, agent_j=2)
    assert rep.passed
    # no noise and no control: |dx(s)| = |dx0 + int gamma dx| up to the Euler sum
    np.testing.assert_allclose(rep.lhs, rep.rhs, rtol=1e-12)


def test_gap_random_pairs_running_horizon():
    grid = TimeGrid(1.0, 200)
    p = simulate_full_consensus(CP, FullConsensus(0.1), [0.2, 0.5, 0.8], [0.4, 0.5, 0.6], grid,
                                NoisePaths.generate(1, grid, 3, replicas=20))
    for r in range(20):
        assert opinion_gap_bound_check(p, p, CP, 0.1, 0, 2, replica=r).passed
    full = opinion_gap_bound_check(p, p, CP, 0.1, 0, 2, horizon="full")
    assert np.ndim(full.rhs) == 0


def test_gap_grid_mismatch():
    g1, g2 = TimeGrid(1.0, 10), TimeGrid(1.0, 20)
    p1 = simulate_general(_zero, _zero, None, 0.0, g1, NoisePaths.generate(0, g1, 1))
    p2 = simulate_general(_zero, _zero, None, 0.0, g2, NoisePaths.generate(0, g2, 1))
    with pytest.raises(GridMismatchError):
        opinion_gap_bound_check(p1, p2, CP, 0.1)
