"""Marked DAGs over a finite point set: flows, paths, and the path ultrametric.

A marked DAG carries, for every arc, a length ``omega`` and a probability
``theta``; the ``theta`` values leaving each internal node sum to one.
Root-to-sink paths are represented as tuples of arc indices.  Flows and
conditional distributions are plain float arrays indexed by arc.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Sequence

import numpy as np

from .metric import MetricSpace, emd_exact

DEFAULT_PATH_CAP = 10**6
ROW_SUM_TOL = 1e-12
GEOMETRIC_RTOL = 1e-12


class DagValidationError(ValueError):
    """A marked DAG invariant does not hold; the message names it."""


class PathCapError(RuntimeError):
    """Path enumeration would exceed the configured cap."""


def path_cap() -> int:
    """The path enumeration cap, overridable through ``MTS_PATH_CAP``."""
    return int(os.environ.get("MTS_PATH_CAP", DEFAULT_PATH_CAP))


@dataclass(frozen=True, eq=False)
class MarkedDag:
    """A DAG with arc lengths ``omega`` and arc probabilities ``theta``.

    ``sinks[i]`` is the node index of point ``i``.  Construction does not
    validate; call :func:`validate`.
    """

    nodes: tuple
    tails: np.ndarray
    heads: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    root: int
    sinks: np.ndarray
    tau: float = 4.0
    levels: np.ndarray | None = None
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("tails", "heads", "sinks"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        for name in ("omega", "theta"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.levels is not None:
            object.__setattr__(self, "levels", np.asarray(self.levels, dtype=np.int64))
        for name in ("tails", "heads", "sinks", "omega", "theta", "levels"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.nodes)})

    @classmethod
    def from_arcs(
        cls,
        nodes: Sequence[Hashable],
        arcs: Sequence[tuple],
        root: Hashable,
        sinks: Sequence[Hashable],
        tau: float = 4.0,
        levels: Sequence[int] | None = None,
    ) -> "MarkedDag":
        """Build from node ids and ``(tail, head, omega, theta)`` tuples."""
        nodes = tuple(nodes)
        index = {v: i for i, v in enumerate(nodes)}
        if len(index) != len(nodes):
            raise DagValidationError("duplicate node ids")
        try:
            tails = [index[a[0]] for a in arcs]
            heads = [index[a[1]] for a in arcs]
            sink_idx = [index[s] for s in sinks]
            root_idx = index[root]
        except KeyError as exc:
            raise DagValidationError(f"unknown node id {exc.args[0]!r}") from None
        return cls(
            nodes=nodes,
            tails=np.array(tails, dtype=np.int64),
            heads=np.array(heads, dtype=np.int64),
            omega=np.array([a[2] for a in arcs], dtype=float),
            theta=np.array([a[3] for a in arcs], dtype=float),
            root=root_idx,
            sinks=np.array(sink_idx, dtype=np.int64),
            tau=float(tau),
            levels=None if levels is None else np.asarray(levels, dtype=np.int64),
        )

    def replace(self, **changes) -> "MarkedDag":
        kw = dict(
            nodes=self.nodes, tails=self.tails, heads=self.heads, omega=self.omega,
            theta=self.theta, root=self.root, sinks=self.sinks, tau=self.tau, levels=self.levels,
        )
        kw.update(changes)
        return MarkedDag(**kw)

    def index(self, node_id: Hashable) -> int:
        return self._index[node_id]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_arcs(self) -> int:
        return int(self.tails.size)

    @property
    def n_points(self) -> int:
        return int(self.sinks.size)

    @cached_property
    def out_arcs(self) -> list[np.ndarray]:
        order = np.argsort(self.tails, kind="stable")
        bounds = np.searchsorted(self.tails[order], np.arange(self.n_nodes + 1))
        return [order[bounds[u]:bounds[u + 1]] for u in range(self.n_nodes)]

    @cached_property
    def in_arcs(self) -> list[np.ndarray]:
        order = np.argsort(self.heads, kind="stable")
        bounds = np.searchsorted(self.heads[order], np.arange(self.n_nodes + 1))
        return [order[bounds[u]:bounds[u + 1]] for u in range(self.n_nodes)]

    @cached_property
    def point_of(self) -> np.ndarray:
        """Point index of each node, -1 for nodes that are not sinks."""
        p = np.full(self.n_nodes, -1, dtype=np.int64)
        p[self.sinks] = np.arange(self.n_points)
        return p

    @cached_property
    def is_sink(self) -> np.ndarray:
        return self.point_of >= 0

    @cached_property
    def topo_order(self) -> np.ndarray:
        """All nodes, tails before heads (Kahn's algorithm, smallest index first)."""
        indeg = np.bincount(self.heads, minlength=self.n_nodes)
        stack = sorted(np.flatnonzero(indeg == 0).tolist(), reverse=True)
        order = []
        while stack:
            u = stack.pop()
            order.append(u)
            for a in self.out_arcs[u]:
                v = int(self.heads[a])
                indeg[v] -= 1
                if indeg[v] == 0:
                    stack.append(v)
        if len(order) != self.n_nodes:
            raise DagValidationError("cycle: graph is not acyclic")
        return np.array(order, dtype=np.int64)

    @cached_property
    def internal_topo(self) -> np.ndarray:
        """Internal (non-sink) nodes in topological order."""
        order = self.topo_order
        return order[~self.is_sink[order]]

    @cached_property
    def eta(self) -> np.ndarray:
        return 1.0 + np.log(1.0 / self.theta)

    @cached_property
    def delta(self) -> np.ndarray:
        return self.theta / self.eta

    @cached_property
    def sigma(self) -> list[int]:
        """Number of paths from each node to a sink (exact integers)."""
        s = [0] * self.n_nodes
        for u in self.topo_order[::-1].tolist():
            s[u] = 1 if self.is_sink[u] else sum(s[int(self.heads[a])] for a in self.out_arcs[u])
        return s

    @property
    def n_paths(self) -> int:
        return self.sigma[self.root]

    @cached_property
    def paths(self) -> list[tuple[int, ...]]:
        return enumerate_paths(self)

    @cached_property
    def path_index(self) -> dict[tuple[int, ...], int]:
        return {g: i for i, g in enumerate(self.paths)}

    @cached_property
    def path_endpoints(self) -> np.ndarray:
        """Point index at the end of each enumerated path."""
        return np.array([self.point_of[self.heads[g[-1]]] if g else self.point_of[self.root]
                         for g in self.paths], dtype=np.int64)

    @cached_property
    def path_distance_matrix(self) -> np.ndarray:
        return _path_distance_matrix(self)

    @cached_property
    def arc_lookup(self) -> dict[tuple[int, int], int]:
        return {(int(t), int(h)): a for a, (t, h) in enumerate(zip(self.tails, self.heads))}


# -- validation ---------------------------------------------------------------------


def validate(d: MarkedDag) -> MarkedDag:
    """Check every marked-DAG invariant; raise naming the first violation."""
    n = d.n_nodes
    if not (d.tails.size == d.heads.size == d.omega.size == d.theta.size):
        raise DagValidationError("arc arrays have mismatched lengths")
    if d.tails.size and (d.tails.min() < 0 or d.heads.min() < 0
                         or d.tails.max() >= n or d.heads.max() >= n):
        raise DagValidationError("arc endpoint out of range")
    if np.any(d.tails == d.heads):
        raise DagValidationError("cycle: self-loop arc")
    if len(set(zip(d.tails.tolist(), d.heads.tolist()))) != d.n_arcs:
        raise DagValidationError("parallel arcs")
    if not 0 <= d.root < n:
        raise DagValidationError("root out of range")
    if d.tau < 4:
        raise DagValidationError(f"tau = {d.tau} < 4")
    indeg = np.bincount(d.heads, minlength=n)
    sources = np.flatnonzero(indeg == 0)
    if sources.size != 1 or sources[0] != d.root:
        raise DagValidationError(f"multiple sources: {[d.nodes[s] for s in sources]}")
    d.topo_order  # raises on cycles
    outdeg = np.bincount(d.tails, minlength=n)
    if len(set(d.sinks.tolist())) != d.sinks.size:
        raise DagValidationError("sink map is not injective")
    if set(np.flatnonzero(outdeg == 0).tolist()) != set(d.sinks.tolist()):
        raise DagValidationError("sink set differs from the nodes without out-arcs")
    reach = np.zeros(n, dtype=bool)
    reach[d.root] = True
    for u in d.topo_order:
        if reach[u]:
            reach[d.heads[d.out_arcs[u]]] = True
    if not reach.all():
        raise DagValidationError("node unreachable from root")
    if not np.all(np.isfinite(d.omega)) or np.any(d.omega <= 0):
        raise DagValidationError("omega must be positive and finite")
    if np.any(~(d.theta > 0)) or np.any(d.theta > 1):
        raise DagValidationError("theta must lie in (0, 1]")
    sums = np.bincount(d.tails, weights=d.theta, minlength=n)
    internal = outdeg > 0
    bad = np.flatnonzero(internal & (np.abs(sums - 1.0) > ROW_SUM_TOL))
    if bad.size:
        u = bad[0]
        raise DagValidationError(f"theta row sum at node {d.nodes[u]!r} is {float(sums[u])!r}, not 1")
    for a in range(d.n_arcs):
        nxt = d.out_arcs[d.heads[a]]
        if nxt.size == 0:
            continue
        w = d.omega[nxt].max()
        if not d.omega[a] > w:
            raise DagValidationError(f"omega not decreasing along arcs {a} -> {int(nxt[np.argmax(d.omega[nxt])])}")
        # relative slack absorbs rounding in omega = c * tau**-k
        if d.omega[a] < d.tau * w * (1 - GEOMETRIC_RTOL):
            raise DagValidationError(
                f"tau-geometric violation: omega {float(d.omega[a])!r} < {d.tau} * {float(w)!r}"
            )
    return d


def validate_q(d: MarkedDag, q) -> np.ndarray:
    """Check that ``q`` is a conditional distribution (simplex rows)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (d.n_arcs,):
        raise ValueError(f"q has shape {q.shape}, expected ({d.n_arcs},)")
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError("q has negative or non-finite entries")
    sums = np.bincount(d.tails, weights=q, minlength=d.n_nodes)
    if np.any(np.abs(sums[~d.is_sink] - 1.0) > ROW_SUM_TOL):
        raise ValueError("q rows do not sum to 1")
    return q


def validate_flow(d: MarkedDag, f, tol: float = 1e-12) -> np.ndarray:
    """Check nonnegativity, conservation, and unit outflow at the root."""
    f = np.asarray(f, dtype=float)
    if f.shape != (d.n_arcs,):
        raise ValueError(f"flow has shape {f.shape}, expected ({d.n_arcs},)")
    if np.any(f < 0):
        raise ValueError("flow has negative entries")
    out = np.bincount(d.tails, weights=f, minlength=d.n_nodes)
    inn = np.bincount(d.heads, weights=f, minlength=d.n_nodes)
    mid = ~d.is_sink
    mid[d.root] = False
    if np.any(np.abs(out[mid] - inn[mid]) > tol):
        raise ValueError("flow conservation violated")
    if d.n_arcs and abs(out[d.root] - 1.0) > tol:
        raise ValueError(f"root outflow {out[d.root]!r} != 1")
    return f


# -- flows ---------------------------------------------------------------------------


def node_values(d: MarkedDag, f) -> np.ndarray:
    """``F_u``: outflow at internal nodes, inflow at sinks."""
    out = np.bincount(d.tails, weights=f, minlength=d.n_nodes)
    inn = np.bincount(d.heads, weights=f, minlength=d.n_nodes)
    vals = np.where(d.is_sink, inn, out)
    if d.is_sink[d.root]:
        vals[d.root] = 1.0
    return vals


def sink_marginal(d: MarkedDag, f) -> np.ndarray:
    """The distribution over points induced by a unit flow."""
    if d.n_arcs == 0:
        return np.ones(1)
    return np.bincount(d.heads, weights=f, minlength=d.n_nodes)[d.sinks]


def lambda_map(d: MarkedDag, q) -> np.ndarray:
    """The unit flow with ``F_uv = F_u q_uv``, built in topological order."""
    q = np.asarray(q, dtype=float)
    f = np.zeros(d.n_arcs)
    fu = np.zeros(d.n_nodes)
    fu[d.root] = 1.0
    heads, out = d.heads, d.out_arcs
    for u in d.internal_topo:
        arcs = out[u]
        vals = fu[u] * q[arcs]
        f[arcs] = vals
        np.add.at(fu, heads[arcs], vals)
    return f


def conditionals(d: MarkedDag, f, fill=None) -> np.ndarray:
    """Per-node conditionals ``F_uv / F_u``; rows with ``F_u = 0`` take ``fill`` (theta by default)."""
    f = np.asarray(f, dtype=float)
    fu = np.bincount(d.tails, weights=f, minlength=d.n_nodes)[d.tails]
    fill = d.theta if fill is None else np.asarray(fill, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(fu > 0, f / np.where(fu > 0, fu, 1.0), fill)


def unit_path_flow(d: MarkedDag, path: Sequence[int]) -> np.ndarray:
    f = np.zeros(d.n_arcs)
    f[list(path)] = 1.0
    return f


def path_decompose(d: MarkedDag, f, tol: float = 1e-15) -> dict[tuple[int, ...], float]:
    """Greedy peel-off of a unit flow into weighted root-to-sink paths.

    Repeatedly follows the largest positive residual arc from the root to a
    sink and subtracts the bottleneck.  Each round zeroes at least one arc.
    """
    res = np.array(f, dtype=float)
    out = d.out_arcs
    chi: dict[tuple[int, ...], float] = {}
    for _ in range(d.n_arcs + 1):
        if d.is_sink[d.root] or res[out[d.root]].sum() <= tol:
            break
        u, path = d.root, []
        while not d.is_sink[u]:
            arcs = out[u]
            a = int(arcs[np.argmax(res[arcs])])
            if res[a] <= tol:
                break
            path.append(a)
            u = int(d.heads[a])
        if not d.is_sink[u]:
            break
        w = float(res[path].min())
        res[path] -= w
        res[res < tol] = 0.0
        key = tuple(path)
        chi[key] = chi.get(key, 0.0) + w
    return chi


def recompose(d: MarkedDag, chi: dict[tuple[int, ...], float]) -> np.ndarray:
    f = np.zeros(d.n_arcs)
    for g, w in chi.items():
        f[list(g)] += w
    return f


# -- paths and depths -------------------------------------------------------------------


def enumerate_paths(d: MarkedDag, cap: int | None = None) -> list[tuple[int, ...]]:
    """All root-to-sink paths in depth-first order (out-arcs by index)."""
    cap = path_cap() if cap is None else cap
    if d.n_paths > cap:
        raise PathCapError(f"{d.n_paths} paths exceed the cap of {cap}")
    paths: list[tuple[int, ...]] = []
    stack: list[tuple[int, tuple[int, ...]]] = [(d.root, ())]
    while stack:
        u, prefix = stack.pop()
        arcs = d.out_arcs[u]
        if arcs.size == 0:
            paths.append(prefix)
            continue
        for a in arcs[::-1].tolist():
            stack.append((int(d.heads[a]), prefix + (a,)))
    return paths


def path_theta(d: MarkedDag, path: Sequence[int]) -> float:
    return float(np.prod(d.theta[list(path)])) if len(path) else 1.0


def path_sink(d: MarkedDag, path: Sequence[int]) -> int:
    """The point at the end of ``path``."""
    return int(d.point_of[d.heads[path[-1]]]) if len(path) else int(d.point_of[d.root])


def combinatorial_depth(d: MarkedDag) -> int:
    depth = np.zeros(d.n_nodes, dtype=np.int64)
    for u in d.topo_order[::-1]:
        arcs = d.out_arcs[u]
        if arcs.size:
            depth[u] = 1 + depth[d.heads[arcs]].max()
    return int(depth[d.root])


def information_depth(d: MarkedDag) -> float:
    """``max over paths of log(1/theta(path))``, by dynamic programming."""
    h = np.zeros(d.n_nodes)
    cost = -np.log(d.theta)
    for u in d.topo_order[::-1]:
        arcs = d.out_arcs[u]
        if arcs.size:
            h[u] = (cost[arcs] + h[d.heads[arcs]]).max()
    value = float(h[d.root])
    if d.n_paths > 0 and math.log(d.n_paths) > value + 1e-9:
        raise DagValidationError(
            f"log |P| = {math.log(d.n_paths)} exceeds information depth {value}"
        )
    return value


def check_path(d: MarkedDag, path: Sequence[int]) -> None:
    """Raise ``ValueError`` unless ``path`` is a root-to-sink path of ``d``."""
    path = list(path)
    if any(not 0 <= a < d.n_arcs for a in path):
        raise ValueError("path does not belong to this DAG: arc out of range")
    u = d.root
    for a in path:
        if d.tails[a] != u:
            raise ValueError("path does not belong to this DAG: arcs are not consecutive")
        u = int(d.heads[a])
    if not d.is_sink[u]:
        raise ValueError("path does not belong to this DAG: does not end at a sink")


def dag_dist(d: MarkedDag, g1: Sequence[int], g2: Sequence[int]) -> float:
    """Larger of the two arc lengths where the paths first diverge (0 if equal)."""
    check_path(d, g1)
    check_path(d, g2)
    for a, b in zip(g1, g2):
        if a != b:
            return float(max(d.omega[a], d.omega[b]))
    return 0.0


def _path_distance_matrix(d: MarkedDag) -> np.ndarray:
    paths = d.paths
    m = len(paths)
    width = max((len(g) for g in paths), default=0)
    if width == 0:
        return np.zeros((m, m))
    pad = np.full((m, width), -1, dtype=np.int64)
    for i, g in enumerate(paths):
        pad[i, : len(g)] = g
    om = np.append(d.omega, 0.0)
    out = np.zeros((m, m))
    # process in row blocks to bound memory at about 32 MB
    block = max(1, int(4e6 // max(1, m * width)))
    for s in range(0, m, block):
        a = pad[s : s + block]
        diff = a[:, None, :] != pad[None, :, :]
        first = np.argmax(diff, axis=2)
        any_diff = diff.any(axis=2)
        ai = a[np.arange(len(a))[:, None], first]
        bi = pad[np.arange(m)[None, :], first]
        out[s : s + block] = np.where(any_diff, np.maximum(om[ai], om[bi]), 0.0)
    return out


def l1_omega(d: MarkedDag, f, g) -> float:
    return float(np.sum(d.omega * np.abs(np.asarray(f) - np.asarray(g))))


def psi_flow(d: MarkedDag, f) -> float:
    """``sum over arcs of omega * F``."""
    return float(d.omega @ np.asarray(f))


def path_measure(d: MarkedDag, q) -> np.ndarray:
    """Distribution over enumerated paths given by products of conditionals."""
    q = np.asarray(q, dtype=float)
    return np.array([float(np.prod(q[list(g)])) if g else 1.0 for g in d.paths])


def flow_path_measure(d: MarkedDag, f) -> np.ndarray:
    """Canonical path distribution of a unit flow (products of its conditionals)."""
    return path_measure(d, conditionals(d, f))


def w1_paths(d: MarkedDag, mu, nu) -> float:
    """Transport cost between two path distributions under ``dag_dist``."""
    return emd_exact(mu, nu, d.path_distance_matrix)


def w1_dag_exact(d: MarkedDag, f, g) -> float:
    """Transport distance between two unit flows viewed as path distributions.

    Each flow is read as the distribution over paths obtained by multiplying
    its conditionals ``F_uv / F_u`` along the path.  This is a function of
    the flow alone and coincides with the leaf distribution of the flow on
    the unfolded tree.
    """
    return w1_paths(d, flow_path_measure(d, f), flow_path_measure(d, g))


# -- metric compatibility ----------------------------------------------------------------


def reach_sets(d: MarkedDag) -> np.ndarray:
    """Boolean matrix: which points are reachable from each node."""
    r = np.zeros((d.n_nodes, d.n_points), dtype=bool)
    for u in d.topo_order[::-1]:
        if d.is_sink[u]:
            r[u, d.point_of[u]] = True
        else:
            r[u] = r[d.heads[d.out_arcs[u]]].any(axis=0)
    return r


def expanding_constant(d: MarkedDag, m: MetricSpace) -> float:
    """Largest ``eps`` with ``dag_dist(g1, g2) >= eps * d(end(g1), end(g2))``.

    Paths diverging at node ``u`` through arcs ``a1 != a2`` have distance
    ``max(omega[a1], omega[a2])`` regardless of their prefix or suffix, so
    it suffices to scan divergence arcs against the farthest pair of points
    reachable through them.
    """
    if m.n != d.n_points:
        raise ValueError("metric and DAG have different point counts")
    r = reach_sets(d)
    best = math.inf
    dist = m.dist
    for u in d.internal_topo:
        arcs = d.out_arcs[u]
        for i in range(arcs.size):
            ri = r[d.heads[arcs[i]]]
            for j in range(i + 1, arcs.size):
                rj = r[d.heads[arcs[j]]]
                far = dist[np.ix_(ri, rj)].max()
                if far > 0:
                    best = min(best, max(d.omega[arcs[i]], d.omega[arcs[j]]) / far)
    return float(best)


def expanding_constant_bruteforce(d: MarkedDag, m: MetricSpace) -> float:
    """Same quantity by scanning every pair of enumerated paths."""
    ends = d.path_endpoints
    base = m.dist[np.ix_(ends, ends)]
    mask = base > 0
    if not mask.any():
        return math.inf
    return float((d.path_distance_matrix[mask] / base[mask]).min())


# -- unfolding -----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Unfolding:
    """The tree of root-originating paths of a DAG.

    ``tree`` has one node per path prefix; its sinks are the full paths in
    the order of ``dag.paths``.  ``arc_origin[t]`` is the DAG arc appended
    by tree arc ``t``; ``endpoint[i]`` is the point reached by path ``i``.
    """

    dag: MarkedDag
    tree: MarkedDag
    arc_origin: np.ndarray
    endpoint: np.ndarray

    def lift_q(self, q) -> np.ndarray:
        return np.asarray(q, dtype=float)[self.arc_origin]

    def lift_cost(self, c) -> np.ndarray:
        return np.asarray(c, dtype=float)[self.endpoint]

    def project_q(self, q_tree) -> np.ndarray:
        """Inverse of :meth:`lift_q` on lifted states (first occurrence wins)."""
        q = np.zeros(self.dag.n_arcs)
        q[self.arc_origin[::-1]] = np.asarray(q_tree)[::-1]
        return q


def unfold_to_tree(d: MarkedDag) -> Unfolding:
    paths = d.paths
    nodes: list[tuple[int, ...]] = []
    tails: list[int] = []
    heads: list[int] = []
    origin: list[int] = []
    leaf_of: dict[tuple[int, ...], int] = {}
    stack: list[tuple[int, tuple[int, ...], int]] = [(d.root, (), -1)]
    while stack:
        u, prefix, parent = stack.pop()
        me = len(nodes)
        nodes.append(prefix)
        if parent >= 0:
            tails.append(parent)
            heads.append(me)
            origin.append(prefix[-1])
        arcs = d.out_arcs[u]
        if arcs.size == 0:
            leaf_of[prefix] = me
        for a in arcs[::-1].tolist():
            stack.append((int(d.heads[a]), prefix + (a,), me))
    origin_arr = np.array(origin, dtype=np.int64)
    tree = MarkedDag(
        nodes=tuple(nodes),
        tails=np.array(tails, dtype=np.int64),
        heads=np.array(heads, dtype=np.int64),
        omega=d.omega[origin_arr] if origin else np.zeros(0),
        theta=d.theta[origin_arr] if origin else np.zeros(0),
        root=0,
        sinks=np.array([leaf_of[g] for g in paths], dtype=np.int64),
        tau=d.tau,
        levels=np.array([len(p) for p in nodes], dtype=np.int64),
    )
    return Unfolding(d, tree, origin_arr, d.path_endpoints.copy())


# -- serialization --------------------------------------------------------------------------


def _to_json_id(v):
    return list(_to_json_id(x) for x in v) if isinstance(v, tuple) else v


def _from_json_id(v):
    return tuple(_from_json_id(x) for x in v) if isinstance(v, list) else v


def dag_to_dict(d: MarkedDag, metric: MetricSpace | None = None, **extra) -> dict:
    out = {
        "format": "mtsdag.marked-dag/1",
        "tau": d.tau,
        "root": _to_json_id(d.nodes[d.root]),
        "nodes": [_to_json_id(v) for v in d.nodes],
        "arcs": [
            [_to_json_id(d.nodes[t]), _to_json_id(d.nodes[h]), float(w), float(p)]
            for t, h, w, p in zip(d.tails.tolist(), d.heads.tolist(), d.omega, d.theta)
        ],
        "sinks": [_to_json_id(d.nodes[s]) for s in d.sinks.tolist()],
    }
    if d.levels is not None:
        out["levels"] = d.levels.tolist()
    if metric is not None:
        out["metric"] = {"points": list(metric.points), "dist": metric.dist.tolist(), "scale": metric.scale}
    out.update(extra)
    return out


def dag_from_dict(obj: dict) -> MarkedDag:
    try:
        return MarkedDag.from_arcs(
            nodes=[_from_json_id(v) for v in obj["nodes"]],
            arcs=[(_from_json_id(a[0]), _from_json_id(a[1]), float(a[2]), float(a[3])) for a in obj["arcs"]],
            root=_from_json_id(obj["root"]),
            sinks=[_from_json_id(v) for v in obj["sinks"]],
            tau=float(obj.get("tau", 4.0)),
            levels=obj.get("levels"),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise DagValidationError(f"malformed DAG document: {exc!r}") from None


def metric_from_dict(obj: dict) -> MetricSpace | None:
    from .metric import validate_and_normalize

    meta = obj.get("metric")
    if meta is None:
        return None
    return validate_and_normalize(np.array(meta["dist"], dtype=float), tuple(meta["points"]))


def dumps_dag(d: MarkedDag, metric: MetricSpace | None = None, **extra) -> str:
    return json.dumps(dag_to_dict(d, metric, **extra), indent=1, sort_keys=True)


def save_dag(d: MarkedDag, path, metric: MetricSpace | None = None, **extra) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_dag(d, metric, **extra))
        fh.write("\n")


def load_dag(path, check: bool = True) -> MarkedDag:
    with open(path, encoding="utf-8") as fh:
        d = dag_from_dict(json.load(fh))
    return validate(d) if check else d
