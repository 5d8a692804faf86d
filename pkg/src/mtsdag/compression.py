"""Heavy-light compression of a marked DAG.

An arc ``uv`` is heavy when ``v`` is internal and carries more than half
of the paths leaving ``u``.  Compression replaces each maximal heavy chain
followed by one light arc with a single arc, which keeps path distances
and path probabilities while making the depth logarithmic in the number
of paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dag import MarkedDag, validate


def sigma_counts(d: MarkedDag) -> list[int]:
    """Number of paths from each node to a sink."""
    return list(d.sigma)


def classify_edges(d: MarkedDag, sigma: list[int] | None = None) -> np.ndarray:
    """Boolean array, True where the arc is heavy."""
    s = d.sigma if sigma is None else sigma
    heavy = np.array(
        [(not d.is_sink[h]) and 2 * s[h] > s[t] for t, h in zip(d.tails.tolist(), d.heads.tolist())],
        dtype=bool,
    )
    per_node = np.bincount(d.tails[heavy], minlength=d.n_nodes)
    if per_node.max(initial=0) > 1:
        u = int(np.argmax(per_node))
        raise RuntimeError(f"node {d.nodes[u]!r} has {per_node[u]} heavy out-arcs")
    return heavy


@dataclass(frozen=True, eq=False)
class CompressionResult:
    """Compressed DAG plus the bookkeeping that maps paths across.

    ``chain[a]`` lists the original arcs replaced by compressed arc ``a``
    (heavy arcs first, the light arc last).  Node indices of the compressed
    DAG refer to its own ``nodes`` tuple.
    """

    original: MarkedDag
    compressed: MarkedDag
    sigma: list[int]
    heavy: np.ndarray
    chain: tuple[tuple[int, ...], ...]

    @cached_property
    def _by_endpoints(self) -> dict[tuple, int]:
        c = self.compressed
        return {(c.nodes[t], c.nodes[h]): a for a, (t, h) in enumerate(zip(c.tails.tolist(), c.heads.tolist()))}

    def contract_path(self, path) -> tuple[int, ...]:
        """Image of an original path: each heavy run plus its light arc becomes one arc."""
        o = self.original
        out = []
        start = o.root
        for a in path:
            if not self.heavy[a]:
                head = int(o.heads[a])
                out.append(self._by_endpoints[(o.nodes[start], o.nodes[head])])
                start = head
        return tuple(out)

    def path_map(self) -> list[int]:
        """Compressed path id of every original path id."""
        idx = self.compressed.path_index
        return [idx[self.contract_path(g)] for g in self.original.paths]


def compress(d: MarkedDag) -> CompressionResult:
    """Contract heavy chains of ``d``.

    From every node ``u`` follow its unique maximal heavy chain; each light
    arc leaving a node of that chain becomes an arc from ``u`` to the light
    arc's head, with the light arc's length and the product of
    probabilities along the chain.  Nodes no longer reachable from the root
    are dropped.
    """
    sigma = d.sigma
    heavy = classify_edges(d, sigma)
    heavy_next = np.full(d.n_nodes, -1, dtype=np.int64)
    heavy_next[d.tails[heavy]] = np.flatnonzero(heavy)

    new_arcs: dict[int, list[tuple[int, float, float, tuple[int, ...]]]] = {}
    for u in d.internal_topo.tolist():
        row = []
        v, prob, prefix = u, 1.0, ()
        while True:
            h = int(heavy_next[v])
            for a in d.out_arcs[v].tolist():
                if a != h:
                    row.append((int(d.heads[a]), float(d.omega[a]), prob * float(d.theta[a]), prefix + (a,)))
            if h < 0:
                break
            prob *= float(d.theta[h])
            prefix += (h,)
            v = int(d.heads[h])
        new_arcs[u] = row

    keep = np.zeros(d.n_nodes, dtype=bool)
    keep[d.root] = True
    for u in d.topo_order.tolist():
        if keep[u] and u in new_arcs:
            for v, *_ in new_arcs[u]:
                keep[v] = True
    keep[d.sinks] = True
    kept = np.flatnonzero(keep).tolist()

    arcs, chains = [], []
    for u in kept:
        for v, w, p, ch in new_arcs.get(u, []):
            arcs.append((d.nodes[u], d.nodes[v], w, p))
            chains.append(ch)
    levels = None if d.levels is None else d.levels[kept]
    out = MarkedDag.from_arcs(
        [d.nodes[u] for u in kept], arcs, d.nodes[d.root], [d.nodes[s] for s in d.sinks.tolist()],
        tau=d.tau, levels=levels,
    )
    return CompressionResult(d, validate(out), sigma, heavy, tuple(chains))
