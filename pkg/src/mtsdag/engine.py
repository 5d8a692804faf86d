"""Mirror descent on a marked DAG.

The algorithm keeps a conditional distribution ``q`` (one simplex row per
internal node).  A cost vector on the sinks is pushed up the DAG in
reverse topological order; at every node the row is replaced by the
Bregman projection of the local cost-shifted divergence, and the node's
effective cost ``c_hat`` becomes the average of its children's under the
new row.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .dag import (
    MarkedDag,
    combinatorial_depth,
    information_depth,
    lambda_map,
    node_values,
    path_measure,
    psi_flow,
    sink_marginal,
    validate_q,
    w1_paths,
)
from .metric import MetricSpace, emd_exact

MAX_NEWTON = 100
MAX_BISECT = 200
SUM_TOL = 1e-13
CHECK_TOL = 1e-8
IDENTITY_TOL = 1e-12
SMALL_ROW = 24


class ProjectionError(RuntimeError):
    """The local projection could not be solved (malformed inputs)."""


# -- local projection --------------------------------------------------------------


@dataclass(frozen=True)
class ProjectionOutcome:
    """Minimizer of one node's local problem with its KKT multipliers."""

    p_row: np.ndarray
    beta: float
    alpha: np.ndarray
    iterations: int


def _solve_row(q, chat, a, delta):
    """Return ``(p, beta, iterations)`` for one node.

    ``sum_v max(0, (q_v + delta_v) exp(a_v (beta - chat_v)) - delta_v)`` is
    convex and increasing in ``beta``.  Newton started to the right of the
    root stays there and converges monotonically; bisection is the fallback.
    """
    qd = q + delta
    # at beta_v coordinate v alone reaches 1, so the root lies below every beta_v
    hi = float(np.min(chat + np.log((1.0 + delta) / qd) / a))
    lo = float(np.min(chat))
    # zero of the linearization of the unclipped sum; by convexity of exp and
    # clipping from below, the clipped sum there is still >= 1
    w = qd * a
    b0 = min(hi, float(w @ chat) / float(w.sum()))
    if q.size <= SMALL_ROW:
        b, it, ok = _newton_small(qd.tolist(), chat.tolist(), a.tolist(), delta.tolist(), b0)
    else:
        b, it, ok = _newton(qd, chat, a, delta, b0)
    if not ok:
        b, it = _bisect(qd, chat, a, delta, lo, hi)
    p = np.maximum(qd * np.exp(a * (b - chat)) - delta, 0.0)
    s = p.sum()
    if not s > 0:
        raise ProjectionError("projection produced an empty row")
    k = int(np.argmax(p))
    p[k] += 1.0 - s
    return p, b, it


def _newton(qd, chat, a, delta, b):
    g = math.inf
    for it in range(1, MAX_NEWTON + 1):
        e = qd * np.exp(a * (b - chat))
        act = e > delta
        g = float((e[act] - delta[act]).sum()) - 1.0
        if g <= SUM_TOL:
            break
        step = g / float((a[act] * e[act]).sum())
        if not step > 0:
            return b, it, False
        b -= step
        if step <= 1e-16 * (1.0 + abs(b)):
            break
    else:
        return b, MAX_NEWTON, False
    return b, it, abs(g) <= 1e-10


def _newton_small(qd, chat, a, delta, b):
    # same iteration as _newton on Python floats; much cheaper for short rows
    exp = math.exp
    idx = range(len(qd))
    g = math.inf
    for it in range(1, MAX_NEWTON + 1):
        g, dg = -1.0, 0.0
        for i in idx:
            e = qd[i] * exp(a[i] * (b - chat[i]))
            if e > delta[i]:
                g += e - delta[i]
                dg += a[i] * e
        if g <= SUM_TOL:
            break
        step = g / dg
        if not step > 0:
            return b, it, False
        b -= step
        if step <= 1e-16 * (1.0 + abs(b)):
            break
    else:
        return b, MAX_NEWTON, False
    return b, it, abs(g) <= 1e-10


def _bisect(qd, chat, a, delta, lo, hi):
    def g(b):
        return float(np.maximum(qd * np.exp(a * (b - chat)) - delta, 0.0).sum()) - 1.0

    expand = 0
    # written as negations so that a nan sum keeps expanding and then fails
    while not g(lo) <= 0:
        lo -= max(1.0, abs(lo))
        expand += 1
        if expand > MAX_BISECT:
            raise ProjectionError("bracket expansion failed")
    while not g(hi) >= 0:
        hi += max(1.0, abs(hi))
        expand += 1
        if expand > MAX_BISECT:
            raise ProjectionError("bracket expansion failed")
    it = 0
    for it in range(1, MAX_BISECT + 1):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), MAX_NEWTON + it


def _alpha(q, p, chat, inv_a, delta, beta):
    alpha = np.zeros_like(p)
    z = p <= 0
    if z.any():
        alpha[z] = np.maximum(chat[z] - beta + inv_a[z] * np.log(delta[z] / (q[z] + delta[z])), 0.0)
    return alpha


def node_project(q_row, c_hat_row, omega_row, theta_row, kappa: float) -> ProjectionOutcome:
    """Solve ``argmin_p D(p || q) + <p, c_hat>`` over the simplex of one node.

    The minimizer has the form
    ``p_v = max(0, (q_v + delta_v) exp(kappa eta_v / omega_v (beta - c_hat_v)) - delta_v)``
    with ``beta`` fixed by ``sum p = 1``.  Clipped coordinates get the
    nonnegativity multiplier
    ``alpha_v = c_hat_v - beta + omega_v / (kappa eta_v) ln(delta_v / (q_v + delta_v))``.
    """
    q = np.asarray(q_row, dtype=float)
    chat = np.asarray(c_hat_row, dtype=float)
    omega = np.asarray(omega_row, dtype=float)
    theta = np.asarray(theta_row, dtype=float)
    if not (q.shape == chat.shape == omega.shape == theta.shape) or q.ndim != 1 or q.size == 0:
        raise ValueError("row arrays must be one-dimensional and of equal length")
    if not np.all(np.isfinite(q)) or np.any(q < 0) or not abs(q.sum() - 1.0) <= 1e-12:
        raise ValueError("q_row is not a simplex point")
    if np.any(theta <= 0) or np.any(theta > 1) or np.any(omega <= 0):
        raise ValueError("theta must lie in (0, 1] and omega must be positive")
    if not np.all(np.isfinite(chat)):
        raise ValueError("c_hat has non-finite entries")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    eta = 1.0 + np.log(1.0 / theta)
    delta = theta / eta
    a = kappa * eta / omega
    if q.size == 1:
        return ProjectionOutcome(np.ones(1), float(chat[0]), np.zeros(1), 0)
    if chat.max() == chat.min():
        return ProjectionOutcome(q.copy(), float(chat[0]), np.zeros_like(q), 0)
    p, beta, it = _solve_row(q, chat, a, delta)
    return ProjectionOutcome(p, beta, _alpha(q, p, chat, 1.0 / a, delta, beta), it)


def kkt_residual(q_row, p_row, c_hat_row, omega_row, theta_row, kappa, beta, alpha) -> float:
    """Largest violation of stationarity over one row."""
    theta = np.asarray(theta_row, dtype=float)
    eta = 1.0 + np.log(1.0 / theta)
    delta = theta / eta
    lhs = np.asarray(omega_row) / (kappa * eta) * np.log((np.asarray(p_row) + delta) / (np.asarray(q_row) + delta))
    rhs = beta - np.asarray(c_hat_row) + np.asarray(alpha)
    return float(np.max(np.abs(lhs - rhs)))


# -- per-DAG tables and sub-steps -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Row:
    node: int
    arcs: np.ndarray
    heads: np.ndarray
    a: np.ndarray
    inv_a: np.ndarray
    delta: np.ndarray


def _rows(d: MarkedDag, kappa: float) -> list[_Row]:
    rows = []
    for u in d.internal_topo[::-1].tolist():
        arcs = d.out_arcs[u]
        a = kappa * d.eta[arcs] / d.omega[arcs]
        rows.append(_Row(u, arcs, d.heads[arcs], a, 1.0 / a, d.delta[arcs]))
    return rows


@dataclass(frozen=True, eq=False)
class SubstepResult:
    """Everything one application of the update produced.

    ``c_hat`` is indexed by node, ``beta`` by node (zero at sinks), and
    ``alpha`` by arc.
    """

    q: np.ndarray
    p: np.ndarray
    cost: np.ndarray
    c_hat: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    iterations: int


def _substep(d: MarkedDag, rows: list[_Row], q: np.ndarray, c: np.ndarray) -> SubstepResult:
    p = q.copy()
    chat = np.zeros(d.n_nodes)
    chat[d.sinks] = c
    beta = np.zeros(d.n_nodes)
    alpha = np.zeros(d.n_arcs)
    iters = 0
    for r in rows:
        ch = chat[r.heads]
        if r.arcs.size == 1 or ch.max() == ch.min():
            # a constant shift is absorbed by beta and leaves the row unchanged
            beta[r.node] = chat[r.node] = ch[0]
            continue
        qr = q[r.arcs]
        pr, b, it = _solve_row(qr, ch, r.a, r.delta)
        iters += it
        p[r.arcs] = pr
        beta[r.node] = b
        alpha[r.arcs] = _alpha(qr, pr, ch, r.inv_a, r.delta, b)
        chat[r.node] = float(pr @ ch)
    return SubstepResult(q, p, np.asarray(c, dtype=float), chat, beta, alpha, iters)


def substep(d: MarkedDag, q, c, kappa: float) -> SubstepResult:
    """One update ``p = A(q, c)`` without cost splitting."""
    c = np.asarray(c, dtype=float)
    if c.shape != (d.n_points,):
        raise ValueError(f"cost has shape {c.shape}, expected ({d.n_points},)")
    return _substep(d, _rows(d, kappa), np.asarray(q, dtype=float), c)


def epsilon_dag(d: MarkedDag, kappa: float) -> float:
    """Largest per-sub-step cost for which the movement bound applies.

    ``omega_min / (2 (2 Delta_0 + Delta_I)) * (tau - 3) / (tau kappa)``;
    ``inf`` for the single-point DAG.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    depth = 2 * combinatorial_depth(d) + information_depth(d)
    if d.n_arcs == 0 or depth == 0:
        return math.inf
    return float(d.omega.min()) / (2.0 * depth) * (d.tau - 3.0) / (d.tau * kappa)


# -- divergences and potentials ---------------------------------------------------------


def local_divergence(d: MarkedDag, u: int, p_row, q_row, kappa: float) -> float:
    """``D^(u)(p || q)`` for the out-arcs of node ``u`` (in ``out_arcs`` order)."""
    arcs = d.out_arcs[u]
    p = np.asarray(p_row, dtype=float)
    q = np.asarray(q_row, dtype=float)
    w = d.omega[arcs] / d.eta[arcs]
    dl = d.delta[arcs]
    return float(w @ ((p + dl) * np.log((p + dl) / (q + dl)) + q - p)) / kappa


def _arc_divergence_terms(d: MarkedDag, r, q, weight):
    # weight_a * [(r + delta) ln((r + delta)/(q + delta)) + q - r] per arc
    dl = d.delta
    return weight * ((r + dl) * np.log((r + dl) / (q + dl)) + q - r)


def global_divergence(d: MarkedDag, f, q, kappa: float) -> float:
    """``D(F || q)``; nodes without flow contribute nothing."""
    f = np.asarray(f, dtype=float)
    q = np.asarray(q, dtype=float)
    fu = np.bincount(d.tails, weights=f, minlength=d.n_nodes)[d.tails]
    live = fu > 0
    r = np.where(live, f / np.where(live, fu, 1.0), 0.0)
    terms = _arc_divergence_terms(d, r, q, fu)
    return float((d.omega / d.eta) @ np.where(live, terms, 0.0)) / kappa


def psi_potential(d: MarkedDag, f) -> float:
    """``psi(F) = sum omega F``."""
    return psi_flow(d, f)


def Psi_potential(d: MarkedDag, r, kappa: float) -> float:
    """``Psi(r) = - sum_u Lambda(r)_u D^(u)(theta || r)``."""
    fu = node_values(d, lambda_map(d, r))[d.tails]
    terms = _arc_divergence_terms(d, d.theta, np.asarray(r, dtype=float), fu)
    return -float((d.omega / d.eta) @ terms) / kappa


def _Psi_nodes(d: MarkedDag, r, flow, kappa):
    fu = node_values(d, flow)[d.tails]
    terms = (d.omega / d.eta) * _arc_divergence_terms(d, d.theta, np.asarray(r, dtype=float), fu)
    return -np.bincount(d.tails, weights=terms, minlength=d.n_nodes) / kappa


# -- lemma checks ------------------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    """``residual`` is ``lhs - rhs`` for inequalities, ``|lhs - rhs|`` for identities."""

    name: str
    ok: bool
    residual: float


def verify_step_inequalities(
    d: MarkedDag,
    sub: SubstepResult,
    kappa: float,
    comparators: Sequence[np.ndarray] = (),
    tol: float = CHECK_TOL,
) -> list[Check]:
    """Check the per-step service and movement inequalities on one sub-step.

    Returned checks: ``kkt``, ``row_sums``, ``service`` (one per
    comparator), ``height``, ``alphas``, ``mv2``, ``crucial``,
    ``movement``, ``mvmtx`` and, when the cost is at most
    :func:`epsilon_dag`, ``mvmty``.
    """
    q, p, c = sub.q, sub.p, sub.cost
    Q, P = lambda_map(d, q), lambda_map(d, p)
    cQ = float(c @ sink_marginal(d, Q))
    cP = float(c @ sink_marginal(d, P))
    tau = d.tau
    depth = 2 * combinatorial_depth(d) + information_depth(d)
    out: list[Check] = []

    # stationarity, arcwise
    lhs = d.omega / (kappa * d.eta) * np.log((p + d.delta) / (q + d.delta))
    rhs = sub.beta[d.tails] - sub.c_hat[d.heads] + sub.alpha
    multi = np.array([d.out_arcs[u].size > 1 for u in d.tails.tolist()], dtype=bool)
    kkt = float(np.max(np.abs(lhs - rhs)[multi], initial=0.0))
    out.append(Check("kkt", kkt <= 1e-10, kkt))
    sums = np.bincount(d.tails, weights=p, minlength=d.n_nodes)[~d.is_sink]
    rs = float(np.max(np.abs(sums - 1.0), initial=0.0))
    out.append(Check("row_sums", rs <= 1e-12, rs))

    for i, F in enumerate(comparators):
        F = np.asarray(F, dtype=float)
        gap = global_divergence(d, F, p, kappa) - global_divergence(d, F, q, kappa)
        bound = float(c @ (sink_marginal(d, F) - sink_marginal(d, P)))
        out.append(Check(f"service[{i}]", gap - bound <= tol, gap - bound))

    diff = Q - P
    l1 = float(d.omega @ np.abs(diff))
    l1_pos = float(d.omega @ np.maximum(diff, 0.0))
    h = abs(l1 - (2 * l1_pos + psi_flow(d, P) - psi_flow(d, Q)))
    out.append(Check("height", h <= IDENTITY_TOL * max(1.0, l1), h))

    al = float(np.max(sub.alpha - sub.c_hat[d.heads], initial=-np.inf))
    out.append(Check("alphas", al <= IDENTITY_TOL, al))

    mv2 = float(d.eta @ (Q * sub.c_hat[d.heads])) - (combinatorial_depth(d) + information_depth(d)) * cQ
    out.append(Check("mv2", mv2 <= tol, mv2))

    # per-node hybrid inequality
    Pq, Pp = _Psi_nodes(d, q, Q, kappa), _Psi_nodes(d, p, P, kappa)
    Qu, Pu = node_values(d, Q), node_values(d, P)
    wmax = np.zeros(d.n_nodes)
    np.maximum.at(wmax, d.tails, d.omega)
    lin = np.bincount(
        d.tails, weights=(sub.c_hat[d.heads] - sub.alpha) * (Q - d.theta * Qu[d.tails]), minlength=d.n_nodes
    )
    cr = (Pp - Pq) - (2.0 / kappa * np.maximum(Qu - Pu, 0.0) * wmax + lin)
    crv = float(np.max(cr[~d.is_sink], initial=-np.inf))
    out.append(Check("crucial", crv <= tol, crv))

    dPsi = float(Pq.sum() - Pp.sum())
    mv = (tau - 3) / (kappa * tau) * l1_pos - (depth * cQ + dPsi)
    out.append(Check("movement", mv <= tol, mv))
    dpsi = (psi_flow(d, P) - psi_flow(d, Q)) / kappa
    mx = l1 / kappa - (dpsi + 2 * tau / (tau - 3) * (dPsi + depth * cQ))
    out.append(Check("mvmtx", mx <= tol, mx))
    if float(np.max(c, initial=0.0)) <= epsilon_dag(d, kappa):
        my = l1 / kappa - (dpsi + 4 * tau / (tau - 3) * (dPsi + depth * cP))
        out.append(Check("mvmty", my <= tol, my))
    return out


# -- steps and runs ------------------------------------------------------------------------------


@dataclass
class EngineState:
    """Current conditionals plus the fixed data of a run."""

    dag: MarkedDag
    q: np.ndarray
    kappa: float
    step_count: int = 0
    _rows: list = field(default=None, repr=False)
    _eps: float = field(default=None, repr=False)

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        self.q = validate_q(self.dag, self.q).copy()
        if self._rows is None:
            self._rows = _rows(self.dag, self.kappa)
        if self._eps is None:
            self._eps = epsilon_dag(self.dag, self.kappa)

    @classmethod
    def initial(cls, d: MarkedDag, kappa: float, q0=None) -> "EngineState":
        return cls(d, d.theta.copy() if q0 is None else np.asarray(q0, dtype=float), kappa)

    @property
    def topo_order(self) -> np.ndarray:
        return self.dag.internal_topo

    @property
    def epsilon(self) -> float:
        return self._eps

    @property
    def flow(self) -> np.ndarray:
        return lambda_map(self.dag, self.q)

    @property
    def marginal(self) -> np.ndarray:
        return sink_marginal(self.dag, self.flow)


@dataclass
class StepRecord:
    t: int
    service: float
    movement_l1: float
    splits: int
    psi: float
    Psi: float
    divergence: float | None = None
    movement_w1_dag: float | None = None
    movement_w1_base: float | None = None
    checks_passed: int | None = None
    checks_failed: int | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def split_cost(c: np.ndarray, eps: float) -> int:
    """Number of equal pieces needed so each has sup norm at most ``eps``."""
    m = float(np.max(c, initial=0.0))
    return 1 if m <= eps else int(math.ceil(m / eps))


def step(
    state: EngineState,
    c,
    metric: MetricSpace | None = None,
    exact_w1: bool = False,
    reference=None,
    verify_with: Sequence[np.ndarray] | None = None,
    on_substep: Callable[[SubstepResult], None] | None = None,
) -> tuple[EngineState, StepRecord]:
    """Serve one cost vector, splitting it when it exceeds ``epsilon_dag``."""
    d = state.dag
    c = np.asarray(c, dtype=float)
    if c.shape != (d.n_points,):
        raise ValueError(f"cost has shape {c.shape}, expected ({d.n_points},)")
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ValueError("costs must be finite and nonnegative")
    k = split_cost(c, state._eps)
    piece = c / k
    q0 = state.q
    q = q0
    Q = F0 = lambda_map(d, q0)
    service = movement = 0.0
    passed = failed = 0
    for _ in range(k):
        sub = _substep(d, state._rows, q, piece)
        P = lambda_map(d, sub.p)
        service += float(piece @ sink_marginal(d, P))
        movement += float(d.omega @ np.abs(P - Q))
        if verify_with is not None:
            for chk in verify_step_inequalities(d, sub, state.kappa, verify_with):
                passed += chk.ok
                failed += not chk.ok
        if on_substep is not None:
            on_substep(sub)
        q, Q = sub.p, P
    new = EngineState(d, q, state.kappa, state.step_count + 1, state._rows, state._eps)
    rec = StepRecord(
        t=new.step_count,
        service=service,
        movement_l1=movement,
        splits=k,
        psi=psi_flow(d, Q),
        Psi=Psi_potential(d, q, state.kappa),
    )
    if reference is not None:
        rec.divergence = global_divergence(d, reference, q, state.kappa)
    if exact_w1:
        rec.movement_w1_dag = w1_paths(d, path_measure(d, q0), path_measure(d, q))
        if metric is not None:
            rec.movement_w1_base = emd_exact(sink_marginal(d, F0), sink_marginal(d, Q), metric.dist)
    if verify_with is not None:
        rec.checks_passed, rec.checks_failed = passed, failed
    return new, rec


@dataclass
class RunTrace:
    records: list[StepRecord]
    q_final: np.ndarray
    kappa: float
    epsilon: float
    costs: np.ndarray | None = None
    marginals: np.ndarray | None = None

    @property
    def totals(self) -> dict:
        t = {
            "steps": len(self.records),
            "service": math.fsum(r.service for r in self.records),
            "movement_l1": math.fsum(r.movement_l1 for r in self.records),
            "substeps": sum(r.splits for r in self.records),
            "kappa": self.kappa,
            "epsilon": self.epsilon,
        }
        for key in ("movement_w1_dag", "movement_w1_base", "checks_passed", "checks_failed"):
            vals = [getattr(r, key) for r in self.records if getattr(r, key) is not None]
            if vals:
                t[key] = math.fsum(vals) if isinstance(vals[0], float) else sum(vals)
        return t

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        lines.append(json.dumps({"totals": self.totals}, sort_keys=True))
        return "\n".join(lines) + "\n"


CostSource = Callable[[int, np.ndarray], np.ndarray]


def run(
    d: MarkedDag,
    costs: Iterable | CostSource,
    kappa: float,
    q0=None,
    T: int | None = None,
    metric: MetricSpace | None = None,
    exact_w1: bool = False,
    reference=None,
    verify_with: Sequence[np.ndarray] | None = None,
    keep_marginals: bool = False,
) -> RunTrace:
    """Run the dynamics from ``q0`` (``theta`` by default).

    ``costs`` is either a sequence of cost vectors or a callable
    ``costs(t, marginal)`` that sees the current distribution over points
    and returns the next cost vector (``T`` is then required).
    """
    state = EngineState.initial(d, kappa, q0)
    if callable(costs):
        if T is None:
            raise ValueError("T is required with an adaptive cost source")
        source = (costs(t, state_marg) for t, state_marg in _adaptive(lambda: state))
    else:
        arr = np.asarray(costs, dtype=float).reshape(-1, d.n_points) if len(costs) else np.zeros((0, d.n_points))
        source = iter(arr[:T] if T is not None else arr)
    records, marginals, seen = [], [], []
    if keep_marginals:
        marginals.append(state.marginal)
    for c in source:
        state, rec = step(state, c, metric, exact_w1, reference, verify_with)
        records.append(rec)
        seen.append(np.asarray(c, dtype=float))
        if keep_marginals:
            marginals.append(state.marginal)
        if T is not None and len(records) >= T:
            break
    costs_arr = np.array(seen).reshape(len(seen), d.n_points)
    return RunTrace(
        records, state.q, kappa, state.epsilon, costs_arr, np.array(marginals) if keep_marginals else None
    )


def _adaptive(get_state):
    t = 1
    while True:
        yield t, get_state().marginal
        t += 1
