"""Social network description and the block matrices of the stacked linear system.

Agents are labelled ``1..n`` in configuration documents and edge lists; all
matrices are indexed from zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class NetworkValidationError(ValueError):
    """Raised when a network spec violates one of its invariants."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid network: " + "; ".join(self.problems))


class DimensionError(ValueError):
    """Raised when a block handed to :func:`stack_system_matrices` has the wrong shape."""


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    w: float


@dataclass(frozen=True)
class NetworkSpec:
    """Weighted directed influence graph.

    ``edges`` holds ``(i, j, w_ij)`` triples: the influence of agent ``j`` on
    agent ``i``. ``stubbornness`` is ``k_i`` for each agent in label order.
    """

    n: int
    edges: tuple[Edge, ...]
    stubbornness: tuple[float, ...]
    leader_id: Optional[int] = None

    @classmethod
    def from_lists(cls, n, edges, stubbornness, leader_id=None) -> "NetworkSpec":
        es = tuple(e if isinstance(e, Edge) else Edge(int(e[0]), int(e[1]), float(e[2])) for e in edges)
        return cls(int(n), es, tuple(float(k) for k in stubbornness), leader_id)

    @classmethod
    def complete(cls, n: int, w: float, k: float) -> "NetworkSpec":
        """All-to-all network with a common weight and stubbornness."""
        edges = [(i, j, w) for i in range(1, n + 1) for j in range(1, n + 1) if i != j]
        return cls.from_lists(n, edges, [k] * n)

    @classmethod
    def star_to_leader(cls, n: int, w: Sequence[float], k: Sequence[float], leader_id: int = 1) -> "NetworkSpec":
        """Every follower points at the leader; the leader has no out-neighbours.

        ``w`` has one entry per follower (in label order, leader skipped).
        """
        followers = [i for i in range(1, n + 1) if i != leader_id]
        edges = [(i, leader_id, wi) for i, wi in zip(followers, w)]
        return cls.from_lists(n, edges, k, leader_id)

    def neighbours(self, i: int) -> list[int]:
        """Out-neighbour set eta_i of agent ``i`` (1-based)."""
        return [e.j for e in self.edges if e.i == i]

    def weight(self, i: int, j: int) -> float:
        for e in self.edges:
            if e.i == i and e.j == j:
                return e.w
        return 0.0


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return not self.problems

    @property
    def ok(self) -> bool:
        return not self.problems

    def __contains__(self, needle: str) -> bool:
        return any(needle in p for p in self.problems)


def validate_network(spec: NetworkSpec) -> ValidationReport:
    """Collect every violated invariant; an empty report means the spec is usable."""
    report = ValidationReport()
    probs = report.problems
    if not isinstance(spec.n, int) or spec.n < 2:
        probs.append(f"agent count must be an integer >= 2 (got {spec.n!r})")
    n = spec.n if isinstance(spec.n, int) else 0
    if len(spec.stubbornness) != n:
        probs.append(f"stubbornness has {len(spec.stubbornness)} entries, expected {n}")
    for idx, k in enumerate(spec.stubbornness):
        if not math.isfinite(k):
            probs.append(f"stubbornness[{idx}] is not finite")
        elif k < 0:
            probs.append(f"stubbornness[{idx}] is negative ({k})")
    seen = set()
    for idx, e in enumerate(spec.edges):
        if not (1 <= e.i <= n and 1 <= e.j <= n):
            probs.append(f"edges[{idx}] references unknown agent ({e.i}, {e.j})")
        if e.i == e.j:
            probs.append(f"edges[{idx}] is a self-edge on agent {e.i}")
        if not math.isfinite(e.w):
            probs.append(f"edges[{idx}] has non-finite weight")
        elif e.w < 0:
            probs.append(f"edges[{idx}] has negative weight ({e.w})")
        if (e.i, e.j) in seen:
            probs.append(f"edges[{idx}] duplicates edge ({e.i}, {e.j})")
        seen.add((e.i, e.j))
    if spec.leader_id is not None and not (1 <= spec.leader_id <= n):
        probs.append(f"leader_id {spec.leader_id} is not an agent")
    return report


def build_influence_matrix(spec: NetworkSpec) -> np.ndarray:
    """Laplacian-like matrix ``W``: ``q_i`` on the diagonal, ``-w_ij`` off it.

    ``q_i`` is the total out-weight of agent ``i`` plus its stubbornness.
    """
    report = validate_network(spec)
    if not report:
        raise NetworkValidationError(report.problems)
    n = spec.n
    W = np.zeros((n, n))
    for e in spec.edges:
        W[e.i - 1, e.j - 1] = -e.w
    q = np.asarray(spec.stubbornness, dtype=float) - W.sum(axis=1)
    W[np.diag_indices(n)] = q
    return W


@dataclass(frozen=True)
class SystemMatrices:
    A: np.ndarray
    K_hat: np.ndarray
    Sigma_hat: np.ndarray
    W: np.ndarray
    q: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[0]


def stack_system_matrices(spec: NetworkSpec, mu, sigma) -> SystemMatrices:
    """Assemble the opinion/multiplier block system ``dX = K_hat X0 ds + A X ds + Sigma_hat dB``.

    Parameters
    ----------
    spec : NetworkSpec
    mu : (n, n) array_like
        Linear opinion drift block.
    sigma : (n, m) array_like
        Opinion diffusion block; the multiplier rows of ``Sigma_hat`` are zero.
    """
    W = build_influence_matrix(spec)
    n = spec.n
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 1:
        sigma = sigma[:, None]
    if mu.shape != (n, n):
        raise DimensionError(f"drift block mu has shape {mu.shape}, expected {(n, n)}")
    if sigma.ndim != 2 or sigma.shape[0] != n:
        raise DimensionError(f"diffusion block sigma has shape {sigma.shape}, expected ({n}, m)")
    I = np.eye(n)
    Z = np.zeros((n, n))
    A = np.block([[mu, -I], [-W, Z]])
    K = np.diag(np.asarray(spec.stubbornness, dtype=float))
    K_hat = np.block([[Z, Z], [K, Z]])
    Sigma_hat = np.vstack([sigma, np.zeros_like(sigma)])
    for arr in (A, K_hat, Sigma_hat, W):
        arr.setflags(write=False)
    return SystemMatrices(A=A, K_hat=K_hat, Sigma_hat=Sigma_hat, W=W, q=W.diagonal().copy())
