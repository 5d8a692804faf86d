"""Offline optimum, comparator flows, and cost adversaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dag import MarkedDag, dag_dist, sink_marginal, unit_path_flow
from .metric import MetricSpace


@dataclass(frozen=True)
class OfflineSolution:
    total: float
    service: float
    movement: float
    path: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"total": self.total, "service": self.service, "movement": self.movement, "path": list(self.path)}


def path_cost(m: MetricSpace, costs, path) -> tuple[float, float]:
    """Service and movement of a state sequence ``path[0..T]``."""
    costs = np.asarray(costs, dtype=float).reshape(-1, m.n)
    path = list(path)
    if len(path) != len(costs) + 1:
        raise ValueError("path must have one more state than there are cost vectors")
    service = math.fsum(float(costs[t, path[t + 1]]) for t in range(len(costs)))
    movement = math.fsum(float(m.dist[path[t], path[t + 1]]) for t in range(len(costs)))
    return service, movement


def offline_opt(m: MetricSpace, costs, start: int = 0) -> OfflineSolution:
    """Cheapest state sequence from ``start`` by dynamic programming.

    ``V_t(x) = c_t(x) + min_y V_{t-1}(y) + d(y, x)``; ties go to the
    smallest index, both in the backpointers and in the final state.
    """
    costs = np.asarray(costs, dtype=float).reshape(-1, m.n)
    if not 0 <= start < m.n:
        raise ValueError(f"start state {start} out of range")
    if np.any(costs < 0) or not np.all(np.isfinite(costs)):
        raise ValueError("costs must be finite and nonnegative")
    T = len(costs)
    V = np.full(m.n, np.inf)
    V[start] = 0.0
    back = np.zeros((T, m.n), dtype=np.int64)
    for t in range(T):
        cand = V[:, None] + m.dist
        back[t] = np.argmin(cand, axis=0)
        V = costs[t] + cand[back[t], np.arange(m.n)]
    path = [int(np.argmin(V))] if T else [start]
    for t in range(T - 1, -1, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    service, movement = path_cost(m, costs, path)
    return OfflineSolution(service + movement, service, movement, tuple(path))


def offline_prefix_values(m: MetricSpace, costs, start: int = 0) -> np.ndarray:
    """``OPT`` of every prefix: entry ``t`` is the optimum over the first ``t`` costs."""
    costs = np.asarray(costs, dtype=float).reshape(-1, m.n)
    V = np.full(m.n, np.inf)
    V[start] = 0.0
    out = np.zeros(len(costs) + 1)
    for t, c in enumerate(costs, 1):
        V = c + (V[:, None] + m.dist).min(axis=0)
        out[t] = V.min()
    return out


# -- comparator flows -----------------------------------------------------------------


def first_paths(d: MarkedDag) -> list[tuple[int, ...]]:
    """For each point, its enumerated path with the smallest id."""
    first: list = [None] * d.n_points
    for g, x in zip(d.paths, d.path_endpoints.tolist()):
        if first[x] is None:
            first[x] = g
    if any(g is None for g in first):
        raise ValueError("some point has no root path")
    return first


@dataclass(frozen=True)
class ComparatorFlows:
    flows: np.ndarray
    movement: np.ndarray

    @property
    def total_movement(self) -> float:
        return math.fsum(self.movement.tolist())


def comparator_flows(d: MarkedDag, offline_path) -> ComparatorFlows:
    """Unit flows along each state's first path, with their l1(omega) moves."""
    first = first_paths(d)
    flows = np.array([unit_path_flow(d, first[x]) for x in offline_path]).reshape(len(offline_path), d.n_arcs)
    moves = np.abs(np.diff(flows, axis=0)) @ d.omega if len(flows) > 1 else np.zeros(0)
    return ComparatorFlows(flows, moves)


def comparator_lipschitz(d: MarkedDag, m: MetricSpace) -> float:
    """Largest ``dag_dist(first path to x, first path to y) / d(x, y)``."""
    first = first_paths(d)
    best = 0.0
    for x in range(m.n):
        for y in range(x + 1, m.n):
            best = max(best, dag_dist(d, first[x], first[y]) / float(m.dist[x, y]))
    return best


def service_bound(d: MarkedDag, costs, comp: ComparatorFlows, kappa: float, q0=None) -> float:
    """``sum <c_t, R_t> + (3 / kappa) sum |R_t - R_{t-1}| + D(R_0 || q0)``."""
    from .engine import global_divergence

    costs = np.asarray(costs, dtype=float).reshape(-1, d.n_points)
    q0 = d.theta if q0 is None else np.asarray(q0, dtype=float)
    served = math.fsum(float(sink_marginal(d, f) @ c) for f, c in zip(comp.flows[1:], costs))
    return served + 3.0 / kappa * comp.total_movement + global_divergence(d, comp.flows[0], q0, kappa)


# -- adversaries -------------------------------------------------------------------------
#
# An adversary is called as ``adv(t, marginal)`` for t = 1, 2, ... and
# returns the next cost vector; it only ever sees the distribution over
# points the algorithm currently plays.


class GreedyMass:
    """Unit cost (times ``magnitude``) on the point with the most mass."""

    def __init__(self, n: int, magnitude: float = 1.0):
        self.n, self.magnitude = n, float(magnitude)

    def __call__(self, t: int, marginal) -> np.ndarray:
        c = np.zeros(self.n)
        c[int(np.argmax(marginal))] = self.magnitude
        return c


class RandomSpike:
    """Cost ``magnitude`` on one uniformly random point per round."""

    def __init__(self, n: int, seed: int = 0, magnitude: float = 1.0):
        self.n, self.magnitude = n, float(magnitude)
        self.rng = np.random.default_rng(seed)

    def __call__(self, t: int, marginal=None) -> np.ndarray:
        c = np.zeros(self.n)
        c[int(self.rng.integers(self.n))] = self.magnitude
        return c


class BlockUniform:
    """Phases that knock out the points one at a time in random order.

    Within a phase every point already knocked out pays ``magnitude`` each
    round; a phase ends once all points but one are out, and the next
    phase starts fresh with a new random order.
    """

    def __init__(self, n: int, seed: int = 0, magnitude: float = 1.0):
        self.n, self.magnitude = n, float(magnitude)
        self.rng = np.random.default_rng(seed)
        self._order: list[int] = []
        self._k = 0

    def __call__(self, t: int, marginal=None) -> np.ndarray:
        if self.n == 1:
            return np.zeros(1)
        if self._k == 0:
            self._order = self.rng.permutation(self.n).tolist()
        self._k += 1
        c = np.zeros(self.n)
        c[self._order[: self._k]] = self.magnitude
        if self._k == self.n - 1:
            self._k = 0
        return c


def make_adversary(spec: str, n: int, seed: int = 0):
    """Parse ``name[:magnitude]`` with name greedy_mass, random_spike or block_uniform."""
    name, _, arg = spec.partition(":")
    mag = float(arg) if arg else 1.0
    if not mag >= 0 or not math.isfinite(mag):
        raise ValueError(f"bad magnitude in adversary spec {spec!r}")
    if name == "greedy_mass":
        return GreedyMass(n, mag)
    if name == "random_spike":
        return RandomSpike(n, seed, mag)
    if name == "block_uniform":
        return BlockUniform(n, seed, mag)
    raise ValueError(f"unknown adversary {name!r}")


def replay(adv, T: int, marginals=None) -> np.ndarray:
    """Cost matrix from a non-adaptive adversary, or against given marginals."""
    rows = []
    for t in range(1, T + 1):
        marg = None if marginals is None else marginals[t - 1]
        rows.append(adv(t, marg))
    return np.array(rows).reshape(T, -1)
