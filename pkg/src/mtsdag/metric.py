"""Finite metric spaces, generators, and exact optimal transport."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TRIANGLE_TOL = 1e-12


class MetricError(ValueError):
    """Raised when a distance matrix is not a valid finite metric."""


@dataclass(frozen=True, eq=False)
class MetricSpace:
    """A finite metric space with diameter normalized to 1.

    Attributes
    ----------
    points : tuple
        Point identifiers, in matrix order.
    dist : ndarray of shape (n, n)
        Normalized distance matrix (read-only).
    scale : float
        The diameter of the raw matrix; ``dist * scale`` recovers it.
    """

    points: tuple
    dist: np.ndarray
    scale: float = 1.0
    _min_distance: float = field(init=False, repr=False)

    def __post_init__(self):
        self.dist.setflags(write=False)
        n = len(self.points)
        if n > 1:
            off = self.dist[~np.eye(n, dtype=bool)]
            object.__setattr__(self, "_min_distance", float(off.min()))
        else:
            object.__setattr__(self, "_min_distance", math.inf)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.n > 1 else 0.0

    @property
    def min_distance(self) -> float:
        """Smallest distance between distinct points (inf when n == 1)."""
        return self._min_distance

    def ball(self, x: int, radius: float) -> np.ndarray:
        """Indices of the closed ball of ``radius`` around point ``x``."""
        return np.flatnonzero(self.dist[x] <= radius)

    def ball_counts(self, radius: float) -> np.ndarray:
        """``|B(x, radius)|`` for every x, closed balls."""
        return np.count_nonzero(self.dist <= radius, axis=1)


def validate_and_normalize(raw, points: Sequence | None = None) -> MetricSpace:
    """Check that ``raw`` is a finite metric and rescale it to diameter 1.

    Raises
    ------
    MetricError
        On an empty or non-square matrix, non-finite entries, asymmetry,
        a nonzero diagonal, coincident distinct points, or a triangle
        inequality violation larger than ``TRIANGLE_TOL`` after scaling.
    """
    d = np.array(raw, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise MetricError(f"distance matrix must be square, got shape {d.shape}")
    n = d.shape[0]
    if n == 0:
        raise MetricError("metric space must have at least one point")
    if not np.all(np.isfinite(d)):
        raise MetricError("distance matrix has non-finite entries")
    if points is None:
        points = tuple(range(n))
    elif len(points) != n:
        raise MetricError(f"{len(points)} identifiers for {n} points")
    if np.any(np.abs(np.diag(d)) > 0):
        raise MetricError("nonzero diagonal entry")
    if np.any(np.abs(d - d.T) > TRIANGLE_TOL * max(1.0, float(np.abs(d).max()))):
        raise MetricError("distance matrix is not symmetric")
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0):
        raise MetricError("distinct points at distance <= 0")
    scale = float(d.max()) if n > 1 else 1.0
    d = d / scale
    d = 0.5 * (d + d.T)
    _check_triangle(d)
    return MetricSpace(tuple(points), d, scale)


def _check_triangle(d: np.ndarray) -> None:
    n = d.shape[0]
    # d[i, k] <= d[i, j] + d[j, k], one pivot j at a time to keep memory O(n^2)
    for j in range(n):
        slack = d[:, j][:, None] + d[j, :][None, :] - d
        if slack.min() < -TRIANGLE_TOL:
            i, k = np.unravel_index(np.argmin(slack), slack.shape)
            raise MetricError(
                f"triangle inequality violated: d({i},{k}) = {d[i, k]:.6g} > "
                f"d({i},{j}) + d({j},{k}) = {d[i, j] + d[j, k]:.6g}"
            )


def is_ultrametric(m: MetricSpace) -> bool:
    d = m.dist
    for j in range(m.n):
        if np.any(d > np.maximum(d[:, j][:, None], d[j, :][None, :]) + TRIANGLE_TOL):
            return False
    return True


# -- generators ---------------------------------------------------------------


def uniform_metric(n: int) -> MetricSpace:
    _check_n(n)
    return validate_and_normalize(np.ones((n, n)) - np.eye(n))


def path_metric(n: int) -> MetricSpace:
    _check_n(n)
    idx = np.arange(n, dtype=float)
    return validate_and_normalize(np.abs(idx[:, None] - idx[None, :]))


def random_euclidean_metric(n: int, dim: int = 2, seed: int = 0) -> MetricSpace:
    """``n`` i.i.d. uniform points in the unit cube, Euclidean distances."""
    _check_n(n)
    if dim < 1:
        raise ValueError("dim must be >= 1")
    x = np.random.default_rng(seed).random((n, dim))
    diff = x[:, None, :] - x[None, :, :]
    return validate_and_normalize(np.sqrt((diff**2).sum(-1)))


def expander_like_metric(n: int, seed: int = 0) -> MetricSpace:
    """Shortest-path metric of a cycle plus two random chord matchings.

    The cycle keeps the graph connected; the random chords make the
    diameter logarithmic in ``n`` with high probability.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import shortest_path

    _check_n(n)
    if n == 1:
        return validate_and_normalize(np.zeros((1, 1)))
    rng = np.random.default_rng(seed)
    rows = list(range(n))
    cols = [(i + 1) % n for i in range(n)]
    for _ in range(2):
        perm = rng.permutation(n)
        for a, b in zip(perm[0::2], perm[1::2]):
            rows.append(int(a))
            cols.append(int(b))
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    d = shortest_path(adj, directed=False, unweighted=True)
    return validate_and_normalize(d)


def _check_n(n: int) -> None:
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")


# -- optimal transport ----------------------------------------------------------


def _pot():
    # POT probes every installed array backend on import; only numpy is used here.
    for name in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot


def emd_exact(mu, nu, ground) -> float:
    """Exact earth mover's distance between two distributions.

    Solved by network simplex on the supports of ``mu`` and ``nu``.
    ``ground`` may be rectangular when the two distributions live on
    different index sets.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    ground = np.asarray(ground, dtype=float)
    if ground.shape != (mu.size, nu.size):
        raise ValueError(f"ground shape {ground.shape} does not match ({mu.size}, {nu.size})")
    if np.any(mu < 0) or np.any(nu < 0):
        raise ValueError("distributions must be nonnegative")
    if np.any(ground < 0):
        raise ValueError("ground costs must be nonnegative")
    if abs(mu.sum() - nu.sum()) > 1e-9:
        raise ValueError(f"mass mismatch: {mu.sum()!r} vs {nu.sum()!r}")
    i = np.flatnonzero(mu > 0)
    j = np.flatnonzero(nu > 0)
    if i.size == 0 or j.size == 0:
        return 0.0
    # a single source or sink has exactly one feasible plan
    if i.size == 1:
        return float(ground[i[0], j] @ nu[j])
    if j.size == 1:
        return float(mu[i] @ ground[i, j[0]])
    a, b = mu[i], nu[j]
    b = b * (a.sum() / b.sum())
    ot = _pot()
    plan = ot.emd(a, b, np.ascontiguousarray(ground[np.ix_(i, j)]), numItermax=10_000_000)
    return float(np.sum(plan * ground[np.ix_(i, j)]))


# -- CSV files --------------------------------------------------------------------


def read_metric_csv(path) -> MetricSpace:
    """Header row of point identifiers, then the n x n distance rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise MetricError(f"{path}: empty metric file")
    points = tuple(rows[0])
    try:
        d = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise MetricError(f"{path}: {exc}") from None
    return validate_and_normalize(d, points)


def write_metric_csv(m: MetricSpace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(m.points)
        for row in m.dist:
            w.writerow([repr(float(v)) for v in row])


def read_vectors_csv(path, n: int | None = None) -> np.ndarray:
    """Rows of distributions or costs, aligned to point order."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
    arr = np.array(rows, dtype=float).reshape(len(rows), -1)
    if n is not None and arr.size and arr.shape[1] != n:
        raise ValueError(f"{path}: rows have {arr.shape[1]} entries, expected {n}")
    return arr


def write_vectors_csv(rows, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for r in np.atleast_2d(np.asarray(rows, dtype=float)):
            w.writerow([repr(float(v)) for v in r])
