import math

import numpy as np
import pytest

from dagkit import binary_tree, chain, pure_diamond
from mtsdag.battery import net_checks
from mtsdag.dag import enumerate_paths, expanding_constant, information_depth, path_theta, reach_sets, validate
from mtsdag.metric import (
    expander_like_metric,
    path_metric,
    random_euclidean_metric,
    uniform_metric,
    validate_and_normalize,
)
from mtsdag.nets import (
    PsiSampler,
    build_hierarchical_dag,
    build_net_dag,
    ckr_partition,
    greedy_net,
    net_hierarchy,
    psi_embedding,
    selector,
    theta_from_sigma,
)


def greedy_replay(dist, eta):
    """Plain-loop greedy net: largest closed eta/3 ball among uncovered points, lowest index on ties."""
    n = len(dist)
    covered = [False] * n
    out = []
    while not all(covered):
        best, best_count = None, -1
        for x in range(n):
            if covered[x]:
                continue
            cnt = sum(1 for y in range(n) if dist[x][y] <= eta / 3)
            if cnt > best_count:
                best, best_count = x, cnt
        out.append(best)
        for y in range(n):
            if dist[best][y] <= eta:
                covered[y] = True
    return out


def test_greedy_net_trivial():
    assert sorted(greedy_net(uniform_metric(4), 0.5)) == [0, 1, 2, 3]
    assert len(greedy_net(path_metric(6), 1.0)) == 1
    assert len(greedy_net(random_euclidean_metric(7, seed=1), 1.5)) == 1


def test_greedy_net_matches_replay():
    m = path_metric(5)
    assert greedy_net(m, 0.3) == greedy_replay(m.dist.tolist(), 0.3)
    for seed in range(10):
        m = random_euclidean_metric(12, 2, seed=seed)
        for eta in (0.05, 0.2, 0.4):
            assert greedy_net(m, eta) == greedy_replay(m.dist.tolist(), eta)


def test_selector_isolated_and_ties():
    m = random_euclidean_metric(10, 2, seed=3)
    h = net_hierarchy(m)
    assert selector(h, h.K, [4]) == 4
    # at the bottom level every count is 1, so the smallest candidate wins
    cand = np.flatnonzero((m.dist[[2, 7]] <= 2 * h.radius(h.K)).any(axis=0))
    assert selector(h, h.K, [2, 7]) == int(cand.min())


def test_selector_bruteforce():
    rng = np.random.default_rng(0)
    m = random_euclidean_metric(10, 2, seed=11)
    h = net_hierarchy(m)
    k = 1
    r = h.radius(k)
    for _ in range(30):
        S = rng.choice(10, size=int(rng.integers(1, 4)), replace=False)
        best, best_count = None, -1
        for y in sorted(h.levels[k]):
            if min(m.dist[s, y] for s in S) <= 2 * r:
                cnt = int(np.sum(m.dist[y] <= r / 3))
                if cnt > best_count:
                    best, best_count = y, cnt
        assert selector(h, k, S) == best


def test_hierarchy_levels():
    for seed in range(5):
        m = random_euclidean_metric(15, 2, seed=seed)
        h = net_hierarchy(m)
        assert len(h.levels[0]) == 1
        assert sorted(h.levels[h.K]) == list(range(15))
        assert h.K >= 1 + math.ceil(math.log(1 / m.min_distance, 12))
        assert h.radius(h.K) < m.min_distance
        assert all(c.ok for c in net_checks(h))


def test_two_point_uniform():
    d = build_hierarchical_dag(uniform_metric(2))
    h = net_hierarchy(uniform_metric(2))
    assert h.K == 1
    assert d.n_points == 2 and d.n_paths == 2
    assert sorted(d.theta.tolist()) == [0.5, 0.5]
    assert d.omega.tolist() == [10.0, 10.0]


def test_builder_needs_two_points():
    with pytest.raises(ValueError):
        build_hierarchical_dag(uniform_metric(1))


@pytest.mark.parametrize(
    "m",
    [uniform_metric(8), path_metric(9), random_euclidean_metric(12, 2, seed=5), expander_like_metric(16, seed=2)],
    ids=["uniform8", "path9", "euclid12", "expander16"],
)
def test_builder_bounds(m):
    nd = build_net_dag(m)
    d = nd.dag
    n = m.n
    assert information_depth(d) <= 3 * math.log(n) + 1e-9
    assert d.n_paths <= n**3
    assert expanding_constant(d, m) >= 1 - 1e-12
    # any point reachable from (u, k) lies within 5 tau^-k of u
    reach = reach_sets(d)
    for i, (u, k) in enumerate(d.nodes):
        assert m.dist[u, reach[i]].max() <= 5 * 12.0**-k + 1e-12
    # children's small balls are disjoint, so their counts fit in a big ball
    h = nd.hierarchy
    for a_u in d.internal_topo.tolist():
        u, k = d.nodes[a_u]
        heads = [d.nodes[v][0] for v in d.heads[d.out_arcs[a_u]].tolist()]
        small = sum(int(np.sum(m.dist[w] <= h.radius(k + 1) / 3)) for w in heads)
        assert small <= int(np.sum(m.dist[u] <= 6 * h.radius(k)))


def test_builder_deterministic():
    m = random_euclidean_metric(10, 2, seed=9)
    a, b = build_hierarchical_dag(m), build_hierarchical_dag(m)
    assert a.nodes == b.nodes
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.omega, b.omega)


def test_theta_from_sigma_examples():
    assert theta_from_sigma(validate(chain(3))).theta.tolist() == [1.0, 1.0, 1.0]
    assert theta_from_sigma(validate(binary_tree())).theta.tolist() == [0.5] * 6
    dm = theta_from_sigma(validate(pure_diamond()))
    assert dm.theta[dm.out_arcs[dm.root]].tolist() == [0.5, 0.5]


def test_theta_from_sigma_uniform_paths():
    d = theta_from_sigma(build_hierarchical_dag(random_euclidean_metric(14, 2, seed=4)))
    validate(d)
    thetas = [path_theta(d, g) for g in enumerate_paths(d)]
    assert max(abs(t * d.n_paths - 1) for t in thetas) <= 1e-12
    assert information_depth(d) == pytest.approx(math.log(d.n_paths), abs=1e-9)


def test_ckr_extremes():
    m = random_euclidean_metric(9, 2, seed=1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert len(ckr_partition(m, 4.0, rng).blocks) == 1
        assert len(ckr_partition(m, 0.49 * m.min_distance, rng).blocks) == 9


def test_ckr_block_diameter():
    m = random_euclidean_metric(20, 2, seed=2)
    rng = np.random.default_rng(1)
    for delta in (0.1, 0.3, 0.7):
        for _ in range(30):
            for b in ckr_partition(m, delta, rng).blocks:
                assert m.dist[np.ix_(b, b)].max() <= delta


def test_ckr_separation_probability():
    m = uniform_metric(8)
    rng = np.random.default_rng(2)
    N = 100_000
    sep = np.fromiter((p.label[0] != p.label[1] for p in (ckr_partition(m, 1.0, rng) for _ in range(N))), bool, N)
    freq = sep.mean()
    se = sep.std(ddof=1) / math.sqrt(N)
    bound = 8 * 1.0 * math.log(len(m.ball(0, 1.0)) / len(m.ball(0, 1 / 8)))
    assert freq <= bound + 3 * se


def test_psi_embedding_two_points():
    m = uniform_metric(2)
    nd = build_net_dag(m)
    rng = np.random.default_rng(0)
    h = nd.hierarchy
    for x in range(2):
        parts = [ckr_partition(m, h.radius(k), rng) for k in range(h.K + 1)]
        g = psi_embedding(nd.dag, h, parts, x)
        assert g == nd.dag.paths[x]


def test_psi_sampler_matches_single_point_embedding():
    m = random_euclidean_metric(12, 2, seed=6)
    nd = build_net_dag(m)
    h = nd.hierarchy
    sampler = PsiSampler(nd.dag, h)
    for s in range(50):
        psi = sampler.sample(np.random.default_rng(s))
        arcs = sampler.arcs(psi)
        rng = np.random.default_rng(s)
        parts = [ckr_partition(m, h.radius(k), rng) for k in range(h.K + 1)]
        for x in range(m.n):
            assert psi_embedding(nd.dag, h, parts, x) == tuple(arcs[:, x].tolist())


def test_psi_endpoint_is_identity():
    rng = np.random.default_rng(3)
    for seed in range(4):
        m = random_euclidean_metric(16, 2, seed=seed)
        nd = build_net_dag(m)
        sampler = PsiSampler(nd.dag, nd.hierarchy)
        for _ in range(250):
            psi = sampler.sample(rng)
            assert np.array_equal(psi[-1], np.arange(16))
            sampler.arcs(psi)


def test_custom_metric_file_shape():
    m = validate_and_normalize([[0, 3, 4], [3, 0, 5], [4, 5, 0]])
    d = build_hierarchical_dag(m)
    assert d.n_points == 3
