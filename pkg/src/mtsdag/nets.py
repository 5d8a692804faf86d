"""Hierarchical nets, the net DAG built on them, and random-partition embeddings.

Nets at scale ``tau**-k`` are chosen greedily by ball counts so that the
DAG arcs between consecutive levels keep the information depth at most
``3 log n``.  All balls are closed and every argmax breaks ties toward the
smallest point index, so builds are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dag import DagValidationError, MarkedDag, validate
from .metric import MetricSpace

TAU = 12.0


def greedy_net(m: MetricSpace, eta: float) -> list[int]:
    """Greedy ``eta``-net, returned in selection order.

    Each round picks, among points not yet within ``eta`` of a selected
    point, one maximizing ``|B(x, eta/3)|``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    counts = m.ball_counts(eta / 3)
    covered = np.zeros(m.n, dtype=bool)
    net: list[int] = []
    while not covered.all():
        cand = np.flatnonzero(~covered)
        x = int(cand[np.argmax(counts[cand])])
        net.append(x)
        covered |= m.dist[x] <= eta
    return net


@dataclass(frozen=True, eq=False)
class NetHierarchy:
    """Nets ``U_0, ..., U_K`` at radii ``tau**-k``.

    ``ball_counts[k, x]`` is ``|B(x, tau**-k / 3)|``; ``member[k]`` is the
    indicator of ``U_k``.
    """

    metric: MetricSpace
    tau: float
    K: int
    levels: tuple[tuple[int, ...], ...]
    ball_counts: np.ndarray
    member: np.ndarray

    def radius(self, k: int) -> float:
        return self.tau ** (-k)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "K": self.K,
            "levels": [list(u) for u in self.levels],
            "ball_counts": self.ball_counts.tolist(),
        }


def net_hierarchy(m: MetricSpace, tau: float = TAU) -> NetHierarchy:
    if m.n == 1:
        K = 0
    else:
        K = 1 + math.ceil(math.log(1.0 / m.min_distance) / math.log(tau))
        # guard the float log: the bottom radius must be below every distance
        while tau ** (-K) >= m.min_distance:
            K += 1
    levels = tuple(tuple(greedy_net(m, tau ** (-k))) for k in range(K + 1))
    counts = np.array([m.ball_counts(tau ** (-k) / 3) for k in range(K + 1)])
    member = np.zeros((K + 1, m.n), dtype=bool)
    for k, u in enumerate(levels):
        member[k, list(u)] = True
    if not member[K].all():
        raise DagValidationError("bottom net level is not the whole space")
    return NetHierarchy(m, float(tau), K, levels, counts, member)


def selector(h: NetHierarchy, k: int, S) -> int:
    """Net point at level ``k`` near ``S`` with the largest ``tau**-k/3`` ball count."""
    S = np.atleast_1d(np.asarray(S, dtype=np.int64))
    r = h.radius(k)
    near = (h.metric.dist[S] <= 2 * r).any(axis=0) & h.member[k]
    cand = np.flatnonzero(near)
    if cand.size == 0:
        raise RuntimeError(f"selector at level {k}: no net point within {2 * r} of the set")
    return int(cand[np.argmax(h.ball_counts[k, cand])])


def _level_arcs(h: NetHierarchy, k: int) -> list[tuple[int, int]]:
    d = h.metric.dist
    r = h.radius(k)
    cnt = h.ball_counts[k]
    lower = list(h.levels[k + 1])
    # strongest level-k ball count near each lower net point
    need = {v: int(cnt[d[v] <= 6 * h.radius(k + 1)].max()) for v in lower}
    arcs = []
    for u in sorted(h.levels[k]):
        for v in sorted(lower):
            if d[u, v] <= 4 * r and cnt[u] >= need[v]:
                arcs.append((u, v))
    return arcs


@dataclass(frozen=True, eq=False)
class NetDag:
    """A built net DAG together with the hierarchy it came from."""

    dag: MarkedDag
    hierarchy: NetHierarchy
    pruned: tuple[tuple[int, int], ...]


def build_net_dag(m: MetricSpace, tau: float = TAU, hierarchy: NetHierarchy | None = None) -> NetDag:
    """Build the marked DAG over hierarchical nets of ``m``.

    Nodes are ``(point, level)``.  Level-``k`` arcs have length
    ``10 tau**-k`` and probabilities proportional to the lower endpoint's
    ball count.  Nodes that have no arc toward the bottom level are
    removed before the probabilities are normalized.
    """
    h = net_hierarchy(m, tau) if hierarchy is None else hierarchy
    K = h.K
    if K == 0:
        dag = MarkedDag.from_arcs([(0, 0)], [], (0, 0), [(0, 0)], tau=tau, levels=[0])
        return NetDag(validate(dag), h, ())
    if len(h.levels[0]) != 1:
        raise DagValidationError(f"top net level has {len(h.levels[0])} points")
    raw = {k: _level_arcs(h, k) for k in range(K)}
    alive = {(x, K) for x in range(m.n)}
    for k in range(K - 1, -1, -1):
        alive |= {(u, k) for u, v in raw[k] if (v, k + 1) in alive}
    pruned = tuple(sorted((u, k) for k in range(K) for u in h.levels[k] if (u, k) not in alive))
    root = (h.levels[0][0], 0)
    if root not in alive:
        raise DagValidationError("root has no path to the bottom level")

    nodes = [(u, k) for k in range(K + 1) for u in sorted(h.levels[k]) if (u, k) in alive]
    arcs = []
    incoming = {v: 0 for v in nodes}
    for k in range(K):
        weight = 10.0 * tau ** (-k)
        by_tail: dict[int, list[int]] = {}
        for u, v in raw[k]:
            if (u, k) in alive and (v, k + 1) in alive:
                by_tail.setdefault(u, []).append(v)
        for u in sorted(by_tail):
            heads = by_tail[u]
            c = h.ball_counts[k + 1, heads].astype(float)
            total = c.sum()
            for v, cv in zip(heads, c):
                arcs.append(((u, k), (v, k + 1), weight, cv / total))
                incoming[(v, k + 1)] += 1
    orphans = [v for v in nodes if v != root and incoming[v] == 0]
    if orphans:
        raise DagValidationError(f"disconnected node(s) without in-arcs: {orphans[:5]}")
    dag = MarkedDag.from_arcs(
        nodes, arcs, root, [(x, K) for x in range(m.n)], tau=tau, levels=[k for _, k in nodes]
    )
    return NetDag(validate(dag), h, pruned)


def build_hierarchical_dag(m: MetricSpace, tau: float = TAU) -> MarkedDag:
    if m.n < 2:
        raise ValueError("need at least two points")
    return build_net_dag(m, tau).dag


def theta_from_sigma(d: MarkedDag) -> MarkedDag:
    """Replace arc probabilities by path-count ratios ``sigma(v) / sigma(u)``."""
    s = d.sigma
    theta = np.array([s[h] / s[t] for t, h in zip(d.tails.tolist(), d.heads.tolist())], dtype=float)
    return d.replace(theta=theta)


# -- random partitions and the path embedding ---------------------------------------------


@dataclass(frozen=True)
class RandomPartition:
    """Blocks of a random low-diameter partition.

    ``label[x]`` is the center whose ball first captured ``x``.
    """

    label: np.ndarray
    delta: float
    radius: float

    @property
    def blocks(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.label == c) for c in np.unique(self.label)]

    def block_of(self, x: int) -> np.ndarray:
        return np.flatnonzero(self.label == self.label[x])


def ckr_partition(m: MetricSpace, delta: float, rng: np.random.Generator) -> RandomPartition:
    """Random radius in ``[delta/4, delta/2]``, random center order.

    Every point joins the block of the first center (in random order) whose
    closed ball contains it, so blocks have diameter at most ``delta``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    rho = rng.uniform(delta / 4, delta / 2)
    perm = rng.permutation(m.n)
    first = np.argmax(m.dist[:, perm] <= rho, axis=1)
    return RandomPartition(perm[first], float(delta), float(rho))


def psi_embedding(dag: MarkedDag, h: NetHierarchy, partitions, x: int) -> tuple[int, ...]:
    """Map ``x`` to a root-to-sink path using one partition per level.

    ``psi_k(x)`` is the level-``k`` selector applied to the ``tau**-k / 2``
    neighbourhood of the block containing ``x``.
    """
    if len(partitions) != h.K + 1:
        raise ValueError(f"need {h.K + 1} partitions, got {len(partitions)}")
    chain = []
    for k, part in enumerate(partitions):
        block = part.block_of(x)
        nbhd = np.flatnonzero((h.metric.dist[block] <= h.radius(k) / 2).any(axis=0))
        chain.append(selector(h, k, nbhd))
    if chain[-1] != x:
        raise RuntimeError(f"embedding of {x} ends at {chain[-1]}")
    path = []
    for k in range(h.K):
        a = dag.arc_lookup.get((dag.index((chain[k], k)), dag.index((chain[k + 1], k + 1))))
        if a is None:
            raise RuntimeError(f"embedding chain of {x} leaves the DAG at level {k}")
        path.append(a)
    return tuple(path)


class PsiSampler:
    """Vectorized sampling of the path embedding for all points at once.

    Each call to :meth:`sample` draws fresh partitions at every level and
    returns the level-by-level net points ``psi[k, x]``.
    """

    def __init__(self, dag: MarkedDag, h: NetHierarchy):
        self.dag, self.h = dag, h
        d = h.metric.dist
        n = h.metric.n
        self._half = [(d <= h.radius(k) / 2).astype(np.int32) for k in range(h.K + 1)]
        self._nets = [np.array(sorted(u), dtype=np.int64) for u in h.levels]
        self._near = [(d[:, u] <= 2 * h.radius(k)).astype(np.int32) for k, u in enumerate(self._nets)]
        self._score = [h.ball_counts[k, u] * (n + 1) - u for k, u in enumerate(self._nets)]
        # arc id between consecutive levels, -1 where absent
        self._arc = []
        for k in range(h.K):
            tab = np.full((n, n), -1, dtype=np.int64)
            for a in range(dag.n_arcs):
                tu, hv = dag.nodes[dag.tails[a]], dag.nodes[dag.heads[a]]
                if tu[1] == k:
                    tab[tu[0], hv[0]] = a
            self._arc.append(tab)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        h = self.h
        n = h.metric.n
        psi = np.empty((h.K + 1, n), dtype=np.int64)
        for k in range(h.K + 1):
            part = ckr_partition(h.metric, h.radius(k), rng)
            centers, block = np.unique(part.label, return_inverse=True)
            member = np.zeros((centers.size, n), dtype=np.int32)
            member[block, np.arange(n)] = 1
            nbhd = (member @ self._half[k]) > 0
            cand = (nbhd.astype(np.int32) @ self._near[k]) > 0
            score = np.where(cand, self._score[k][None, :], np.iinfo(np.int64).min)
            psi[k] = self._nets[k][np.argmax(score, axis=1)][block]
        return psi

    def arcs(self, psi: np.ndarray) -> np.ndarray:
        """Arc ids of each point's path, shape ``(K, n)``; raises if a chain leaves the DAG."""
        out = np.stack([self._arc[k][psi[k], psi[k + 1]] for k in range(self.h.K)]) if self.h.K else \
            np.zeros((0, psi.shape[1]), dtype=np.int64)
        if np.any(out < 0):
            k, x = np.argwhere(out < 0)[0]
            raise RuntimeError(f"embedding chain of point {x} leaves the DAG at level {k}")
        if np.any(psi[-1] != np.arange(psi.shape[1])):
            raise RuntimeError("embedding does not end at the embedded point")
        return out

    def pair_distances(self, rng: np.random.Generator, pairs, n_samples: int) -> np.ndarray:
        """``dag_dist(Psi x, Psi y)`` for each pair, one row per sample."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        omega = self.dag.omega
        out = np.zeros((n_samples, len(pairs)))
        for s in range(n_samples):
            arcs = self.arcs(self.sample(rng))
            a, b = arcs[:, pairs[:, 0]], arcs[:, pairs[:, 1]]
            diff = a != b
            first = np.argmax(diff, axis=0)
            cols = np.arange(len(pairs))
            out[s] = np.where(
                diff.any(axis=0),
                np.maximum(omega[a[first, cols]], omega[b[first, cols]]),
                0.0,
            )
        return out
