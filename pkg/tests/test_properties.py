"""Randomized invariants, driven by hypothesis-chosen seeds and sizes."""

import itertools

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from dagkit import random_layered, random_q
from mtsdag.compression import compress
from mtsdag.dag import (
    combinatorial_depth,
    conditionals,
    information_depth,
    l1_omega,
    lambda_map,
    path_decompose,
    recompose,
    w1_dag_exact,
)
from mtsdag.engine import node_project, substep
from mtsdag.metric import emd_exact, random_euclidean_metric, validate_and_normalize
from mtsdag.nets import build_hierarchical_dag
from mtsdag.offline import offline_prefix_values

seeds = st.integers(0, 2**31 - 1)
SETTINGS = settings(max_examples=40, deadline=None)


def dag_from(seed, n=None):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6)) if n is None else n
    return random_layered(rng, n, width=3, depth=int(rng.integers(1, 4))), rng


@SETTINGS
@given(seeds, st.integers(2, 12), st.floats(0.01, 100))
def test_normalization_idempotent(seed, n, scale):
    m = random_euclidean_metric(n, 2, seed=seed)
    a = validate_and_normalize(m.dist * scale)
    b = validate_and_normalize(a.dist)
    assert np.array_equal(a.dist, b.dist) and b.scale == 1.0
    assert a.diameter == 1.0


@SETTINGS
@given(seeds, st.integers(2, 8))
def test_emd_is_a_metric(seed, n):
    rng = np.random.default_rng(seed)
    m = random_euclidean_metric(n, 2, seed=seed)
    a, b, c = (rng.dirichlet(np.ones(n)) for _ in range(3))
    ab, ba = emd_exact(a, b, m.dist), emd_exact(b, a, m.dist)
    assert abs(ab - ba) <= 1e-9
    assert emd_exact(a, c, m.dist) <= ab + emd_exact(b, c, m.dist) + 1e-9


@SETTINGS
@given(seeds)
def test_lambda_then_conditionals_recovers_q(seed):
    d, rng = dag_from(seed)
    q = random_q(d, rng, zero_frac=0.3)
    f = lambda_map(d, q)
    r = conditionals(d, f)
    fu = np.bincount(d.tails, weights=f, minlength=d.n_nodes)[d.tails]
    live = fu > 0
    assert np.max(np.abs(r[live] - q[live]), initial=0) <= 1e-12


@SETTINGS
@given(seeds)
def test_decompose_recompose(seed):
    d, rng = dag_from(seed)
    f = lambda_map(d, random_q(d, rng, zero_frac=0.3))
    chi = path_decompose(d, f)
    assert all(w >= 0 for w in chi.values())
    assert np.max(np.abs(recompose(d, chi) - f)) <= 1e-10


@SETTINGS
@given(seeds)
def test_dag_dist_strong_triangle(seed):
    d, _ = dag_from(seed)
    D = d.path_distance_matrix
    k = len(D)
    for i, j, l in itertools.product(range(k), repeat=3):
        assert D[i, l] <= max(D[i, j], D[j, l])


@SETTINGS
@given(seeds)
def test_transport_between_provable_bounds(seed):
    # arc lengths shrink by tau along a path, so a pair of paths that split
    # at an arc of length w differ by at most 2 w tau / (tau - 1) in l1
    d, rng = dag_from(seed)
    f, g = lambda_map(d, random_q(d, rng)), lambda_map(d, random_q(d, rng))
    w, l1 = w1_dag_exact(d, f, g), l1_omega(d, f, g)
    tau = d.tau
    assert (tau - 1) / (2 * tau) * l1 <= w + 1e-9
    assert w <= l1 + 1e-9


@SETTINGS
@given(seeds, st.floats(-5, 5))
def test_shift_covariance(seed, shift):
    d, rng = dag_from(seed)
    q = random_q(d, rng)
    c = rng.random(d.n_points) * 2
    shift = max(shift, -float(c.min()))
    a = substep(d, q, c, 1.0).p
    b = substep(d, q, c + shift, 1.0).p
    assert np.max(np.abs(a - b)) <= 1e-10


@SETTINGS
@given(seeds, st.integers(2, 6), st.integers(1, 30))
def test_offline_monotone_in_T(seed, n, T):
    rng = np.random.default_rng(seed)
    m = random_euclidean_metric(n, 2, seed=seed)
    pref = offline_prefix_values(m, rng.random((T, n)) * rng.choice([0.01, 1, 10]))
    assert np.all(np.diff(pref) >= 0)


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(3, 24))
def test_compression_invariants(seed, n):
    m = random_euclidean_metric(n, 2, seed=seed)
    d = build_hierarchical_dag(m)
    res = compress(d)
    c = res.compressed
    fmap = res.path_map()
    assert np.array_equal(d.path_distance_matrix, c.path_distance_matrix[np.ix_(fmap, fmap)])
    sums = np.bincount(c.tails, weights=c.theta, minlength=c.n_nodes)[~c.is_sink]
    assert np.max(np.abs(sums - 1)) <= 1e-12
    assert combinatorial_depth(c) <= 2 + np.log2(d.n_paths)
    assert information_depth(c) <= information_depth(d) + 1e-9
    s = res.sigma
    per = np.bincount(d.tails[res.heavy], minlength=d.n_nodes)
    assert per.max(initial=0) <= 1
    for t, h in zip(c.tails.tolist(), c.heads.tolist()):
        if not c.is_sink[h]:
            assert 2 * s[d.index(c.nodes[h])] <= s[d.index(c.nodes[t])]


def objective(p, q, chat, omega, theta, kappa):
    eta = 1 + np.log(1 / theta)
    delta = theta / eta
    return float((omega / eta) @ ((p + delta) * np.log((p + delta) / (q + delta)) + q - p)) / kappa + float(p @ chat)


@SETTINGS
@given(seeds, st.integers(2, 8))
def test_projection_beats_feasible_perturbations(seed, k):
    rng = np.random.default_rng(seed)
    q = rng.dirichlet(np.ones(k))
    theta = rng.dirichlet(np.ones(k))
    omega = rng.uniform(0.5, 10, k)
    chat = rng.exponential(1.0, k)
    o = node_project(q, chat, omega, theta, 1.0)
    base = objective(o.p_row, q, chat, omega, theta, 1.0)
    for _ in range(20):
        i, j = rng.choice(k, 2, replace=False)
        t = rng.uniform(0, 1) * o.p_row[i] * 10.0 ** -rng.integers(0, 6)
        p = o.p_row.copy()
        p[i] -= t
        p[j] += t
        assert objective(p, q, chat, omega, theta, 1.0) >= base - 1e-12
