"""Invariant checks on built DAGs and runs, each reported with a residual."""

from __future__ import annotations

import math

import numpy as np

from .compression import CompressionResult, compress
from .dag import (
    MarkedDag,
    combinatorial_depth,
    expanding_constant,
    information_depth,
    lambda_map,
    path_measure,
    path_theta,
    unfold_to_tree,
    w1_paths,
)
from .engine import (
    Check,
    EngineState,
    epsilon_dag,
    kkt_residual,
    node_project,
    step,
    substep,
    verify_step_inequalities,
)
from .metric import MetricSpace
from .nets import NetHierarchy


def _le(name, lhs, rhs, tol=0.0):
    r = float(lhs - rhs)
    return Check(name, bool(r <= tol), r)


def net_checks(h: NetHierarchy) -> list[Check]:
    """Packing and covering of every net level."""
    d = h.metric.dist
    out = []
    for k, U in enumerate(h.levels):
        r = h.radius(k)
        U = list(U)
        if len(U) > 1:
            sep = float((d[np.ix_(U, U)] + np.diag(np.full(len(U), np.inf))).min())
            out.append(Check(f"net[{k}].packing", sep > r, r - sep))
        cover = d[U].min(axis=0).max()
        out.append(_le(f"net[{k}].covering", cover, r))
    return out


def depth_checks(d: MarkedDag) -> list[Check]:
    n = d.n_points
    di = information_depth(d)
    out = [
        _le("info_depth<=3ln(n)", di, 3 * math.log(n), 1e-9),
        _le("paths<=n^3", d.n_paths, n**3),
        _le("ln|P|<=info_depth", math.log(d.n_paths), di, 1e-9),
    ]
    return out


def expansion_checks(d: MarkedDag, m: MetricSpace) -> list[Check]:
    return [_le("expanding>=1", 1.0, expanding_constant(d, m), 1e-12)]


def compression_checks(d: MarkedDag, res: CompressionResult | None = None) -> list[Check]:
    """Distance and probability preservation plus the depth bounds."""
    res = compress(d) if res is None else res
    c = res.compressed
    fmap = np.array(res.path_map(), dtype=np.int64)
    out = []
    bij = len(set(fmap.tolist())) == d.n_paths == c.n_paths
    out.append(Check("compress.bijection", bij, 0.0 if bij else 1.0))
    ends = np.array_equal(c.path_endpoints[fmap], d.path_endpoints)
    out.append(Check("compress.endpoints", ends, 0.0 if ends else 1.0))
    dd = np.max(np.abs(d.path_distance_matrix - c.path_distance_matrix[np.ix_(fmap, fmap)]), initial=0.0)
    out.append(Check("compress.distances", bool(dd == 0.0), float(dd)))
    th = max((abs(path_theta(d, g) - path_theta(c, c.paths[j])) for g, j in zip(d.paths, fmap)), default=0.0)
    out.append(Check("compress.path_theta", th <= 1e-12, th))
    sums = np.bincount(c.tails, weights=c.theta, minlength=c.n_nodes)[~c.is_sink]
    rs = float(np.max(np.abs(sums - 1.0), initial=0.0))
    out.append(Check("compress.row_sums", rs <= 1e-12, rs))
    out.append(_le("compress.depth<=2+log2|P|", combinatorial_depth(c), 2 + math.log2(d.n_paths)))
    out.append(_le("compress.info_depth", information_depth(c), information_depth(d), 1e-9))
    per = np.bincount(d.tails[res.heavy], minlength=d.n_nodes)
    out.append(_le("compress.one_heavy", per.max(initial=0), 1))
    s = d.sigma
    # arcs into sinks are light by definition; the halving applies to the rest
    light = [
        2 * s[h] - s[t]
        for t, h, hv in zip(d.tails.tolist(), d.heads.tolist(), res.heavy.tolist())
        if not hv and not d.is_sink[h]
    ]
    out.append(_le("compress.light_halves", max(light, default=-1), 0))
    return out


def projection_checks(rng: np.random.Generator, n_instances: int = 200) -> list[Check]:
    worst_kkt = worst_sum = worst_alpha = 0.0
    for _ in range(n_instances):
        k = int(rng.integers(2, 9))
        q = rng.dirichlet(np.ones(k))
        theta = rng.dirichlet(np.ones(k))
        omega = rng.uniform(0.5, 10.0, k)
        c = rng.exponential(1.0, k)
        kappa = float(rng.choice([0.5, 1.0, 10.0]))
        o = node_project(q, c, omega, theta, kappa)
        worst_kkt = max(worst_kkt, kkt_residual(q, o.p_row, c, omega, theta, kappa, o.beta, o.alpha))
        worst_sum = max(worst_sum, abs(o.p_row.sum() - 1.0))
        worst_alpha = max(worst_alpha, float(np.max(o.alpha - c)))
    return [
        Check("project.kkt", worst_kkt <= 1e-10, worst_kkt),
        Check("project.sum", bool(worst_sum <= 1e-12), float(worst_sum)),
        Check("project.alphas", worst_alpha <= 1e-12, worst_alpha),
    ]


def random_conditionals(d: MarkedDag, rng: np.random.Generator) -> np.ndarray:
    r = rng.random(d.n_arcs) ** 2
    s = np.bincount(d.tails, weights=r, minlength=d.n_nodes)
    return r / s[d.tails]


def step_checks(d: MarkedDag, kappa: float, rng: np.random.Generator, n_steps: int = 20, n_comparators: int = 5) -> list[Check]:
    """Lemma battery on random sub-steps from random states, worst residual per lemma."""
    eps = epsilon_dag(d, kappa)
    worst: dict[str, Check] = {}
    for _ in range(n_steps):
        q = random_conditionals(d, rng)
        scale = eps if math.isfinite(eps) else 1.0
        c = rng.random(d.n_points) * scale * float(rng.choice([0.5, 1.0, 3.0]))
        sub = substep(d, q, c, kappa)
        comps = [lambda_map(d, random_conditionals(d, rng)) for _ in range(n_comparators)]
        for chk in verify_step_inequalities(d, sub, kappa, comps):
            key = chk.name.split("[")[0]
            prev = worst.get(key)
            if prev is None or (prev.ok and not chk.ok) or (prev.ok == chk.ok and chk.residual > prev.residual):
                worst[key] = Check(f"step.{key}", chk.ok and (prev is None or prev.ok), chk.residual)
    return list(worst.values())


def unfolding_checks(d: MarkedDag, kappa: float, rng: np.random.Generator, T: int = 10) -> list[Check]:
    """Run the DAG and its unfolded tree side by side on the same costs."""
    u = unfold_to_tree(d)
    sd = EngineState.initial(d, kappa)
    st = EngineState.initial(u.tree, kappa, u.lift_q(d.theta))
    ds = dq = 0.0
    scale = sd.epsilon if math.isfinite(sd.epsilon) else 1.0
    for _ in range(T):
        c = rng.random(d.n_points) * 2 * scale
        sd, rd = step(sd, c)
        st, rt = step(st, u.lift_cost(c))
        ds = max(ds, abs(rd.service - rt.service))
        dq = max(dq, float(np.max(np.abs(u.lift_q(sd.q) - st.q), initial=0.0)))
    # transport between the start and end states is the same on both sides
    w_d = w1_paths(d, path_measure(d, d.theta), path_measure(d, sd.q))
    w_t = w1_paths(u.tree, path_measure(u.tree, u.lift_q(d.theta)), path_measure(u.tree, st.q))
    dw = abs(w_d - w_t)
    return [
        Check("unfold.service", ds <= 1e-9, ds),
        Check("unfold.state", dq <= 1e-9, dq),
        Check("unfold.transport", dw <= 1e-9, dw),
    ]


def full_battery(
    d: MarkedDag,
    m: MetricSpace | None = None,
    h: NetHierarchy | None = None,
    kappa: float = 1.0,
    seed: int = 0,
    full: bool = False,
) -> list[Check]:
    rng = np.random.default_rng(seed)
    out: list[Check] = []
    if h is not None:
        out += net_checks(h)
    out += depth_checks(d)
    if m is not None:
        out += expansion_checks(d, m)
    if d.n_arcs:
        out += compression_checks(d)
        out += unfolding_checks(d, kappa, rng, T=30 if full else 5)
        out += step_checks(d, kappa, rng, n_steps=100 if full else 10, n_comparators=10 if full else 3)
    out += projection_checks(rng, 1000 if full else 100)
    return out
