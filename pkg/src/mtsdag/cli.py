"""Command line: build-dag, run, verify.

Exit codes: 0 success, 1 an invariant or lemma check failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import battery
from .compression import compress
from .dag import (
    DagValidationError,
    MarkedDag,
    combinatorial_depth,
    dag_from_dict,
    dumps_dag,
    expanding_constant,
    information_depth,
    metric_from_dict,
    path_cap,
    unit_path_flow,
    validate,
)
from .engine import run as run_dynamics
from .metric import (
    MetricError,
    MetricSpace,
    expander_like_metric,
    path_metric,
    random_euclidean_metric,
    read_metric_csv,
    read_vectors_csv,
    uniform_metric,
)
from .nets import build_net_dag, net_hierarchy, theta_from_sigma
from .offline import (
    comparator_flows,
    comparator_lipschitz,
    first_paths,
    make_adversary,
    offline_opt,
    offline_prefix_values,
    service_bound,
)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def load_metric(spec: str, seed: int = 0) -> MetricSpace:
    """A CSV path, or ``gen:uniform:N``, ``gen:path:N``, ``gen:euclid:N[:dim]``, ``gen:expander:N``."""
    if not spec.startswith("gen:"):
        if not Path(spec).is_file():
            raise InputError(f"metric file not found: {spec}")
        return read_metric_csv(spec)
    parts = spec.split(":")[1:]
    try:
        kind, n = parts[0], int(parts[1])
        if kind == "uniform":
            return uniform_metric(n)
        if kind == "path":
            return path_metric(n)
        if kind == "euclid":
            return random_euclidean_metric(n, int(parts[2]) if len(parts) > 2 else 2, seed)
        if kind == "expander":
            return expander_like_metric(n, seed)
    except (IndexError, ValueError) as exc:
        raise InputError(f"bad generator spec {spec!r}: {exc}") from None
    raise InputError(f"unknown generator {parts[0]!r}")


def dag_stats(d: MarkedDag, m: MetricSpace | None) -> dict:
    out = {
        "n": d.n_points,
        "nodes": d.n_nodes,
        "arcs": d.n_arcs,
        "paths": d.n_paths,
        "depth": combinatorial_depth(d),
        "info_depth": information_depth(d),
    }
    if d.levels is not None and d.levels.size:
        out["K"] = int(d.levels.max())
    if m is not None and d.n_paths <= path_cap():
        out["expanding"] = expanding_constant(d, m)
    return out


def _print_checks(checks, stream=None) -> bool:
    stream = sys.stdout if stream is None else stream
    ok = True
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'} {c.name} residual={c.residual:.3e}", file=stream)
        ok &= c.ok
    return ok


# -- build-dag -------------------------------------------------------------------------------


def cmd_build_dag(args) -> int:
    m = load_metric(args.metric, args.seed)
    try:
        nd = build_net_dag(m)
    except DagValidationError as exc:
        print(f"FAIL build: {exc}", file=sys.stderr)
        return EXIT_FAIL
    d = nd.dag
    if args.theta == "sigma":
        d = validate(theta_from_sigma(d))
    stats = {"uncompressed": dag_stats(d, m)}
    checks = battery.depth_checks(d)
    if d.n_arcs and not args.no_compress:
        res = compress(d)
        checks += battery.compression_checks(d, res)
        d = res.compressed
    stats["final"] = dag_stats(d, m)
    checks += battery.expansion_checks(d, m) if "expanding" in stats["final"] else []
    text = dumps_dag(
        d, m, builder={"kind": "net", "tau": nd.hierarchy.tau, "K": nd.hierarchy.K,
                       "theta": args.theta, "compressed": not args.no_compress}, stats=stats,
    )
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")
    if args.nets:
        Path(args.nets).write_text(json.dumps(nd.hierarchy.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    s = stats["final"]
    print(
        f"n={s['n']} K={s.get('K', 0)} paths={s['paths']} depth={s['depth']} "
        f"info_depth={s['info_depth']:.6f} (3 ln n = {3 * math.log(s['n']):.6f}) "
        f"expanding={s.get('expanding', float('nan')):.6f}",
        file=sys.stderr,
    )
    bad = [c for c in checks if not c.ok]
    for c in bad:
        print(f"FAIL {c.name} residual={c.residual:.3e}", file=sys.stderr)
    return EXIT_FAIL if bad else EXIT_OK


# -- run -----------------------------------------------------------------------------------


def _load_dag_doc(path) -> tuple[MarkedDag, MetricSpace | None, dict]:
    if not Path(path).is_file():
        raise InputError(f"DAG file not found: {path}")
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    return dag_from_dict(doc), metric_from_dict(doc), doc


def _gnuplot(dat: str) -> str:
    return (
        "set xlabel 't'\n"
        "set ylabel 'algorithm cost / OPT'\n"
        "set key off\n"
        f"plot '{dat}' using 1:2 with lines\n"
    )


def cmd_run(args) -> int:
    d, m, doc = _load_dag_doc(args.dag)
    d = validate(d)
    if args.costs.startswith("adversary:"):
        if args.T is None:
            raise InputError("--T is required with an adversary")
        costs = make_adversary(args.costs[len("adversary:"):], d.n_points, args.seed)
    else:
        if not Path(args.costs).is_file():
            raise InputError(f"cost file not found: {args.costs}")
        costs = read_vectors_csv(args.costs, d.n_points)
        if args.T is not None:
            costs = costs[: args.T]
    if args.kappa is not None:
        kappa = float(args.kappa)
        L = None
    else:
        if m is None:
            raise InputError("the DAG file carries no metric; pass --kappa")
        L = comparator_lipschitz(d, m)
        kappa = 6.0 * L
    if not kappa > 0:
        raise InputError("kappa must be positive")
    if m is not None and m.n != d.n_points:
        raise InputError("metric and DAG disagree on the number of points")
    exact = bool(args.exact_w1) and d.n_paths <= path_cap()
    comps = None
    if args.verify:
        comps = [unit_path_flow(d, g) for g in first_paths(d)]
    t0 = time.perf_counter()
    trace = run_dynamics(d, costs, kappa, T=args.T, metric=m, exact_w1=exact, verify_with=comps)
    wall = time.perf_counter() - t0
    tot = trace.totals

    report = {"totals": tot, "kappa": kappa, "lipschitz": L, "dag": doc.get("stats", {"final": dag_stats(d, m)})}
    if m is not None:
        opt = offline_opt(m, trace.costs, 0)
        comp = comparator_flows(d, opt.path)
        movement = tot.get("movement_w1_base", tot["movement_l1"])
        report.update(
            opt=opt.total,
            opt_service=opt.service,
            opt_movement=opt.movement,
            service_gap=tot["service"] - opt.total,
            movement_ratio=movement / opt.total if opt.total > 0 else None,
            movement_measure="w1_base" if "movement_w1_base" in tot else "l1_omega",
            service_bound=service_bound(d, trace.costs, comp, kappa),
            comparator_movement=comp.total_movement,
        )
        prefix = offline_prefix_values(m, trace.costs, 0)
        mv = [r.movement_w1_base if r.movement_w1_base is not None else r.movement_l1 for r in trace.records]
        alg = np.cumsum([r.service for r in trace.records]) + np.cumsum(mv)
        rows = [(t, alg[t - 1] / prefix[t]) for t in range(1, len(alg) + 1) if prefix[t] > 0]
    else:
        rows = []
    if "checks_failed" in tot:
        report["checks"] = {"passed": tot["checks_passed"], "failed": tot["checks_failed"]}

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(trace.to_jsonl(), encoding="utf-8")
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (out / "ratio.dat").write_text("".join(f"{t} {float(r)!r}\n" for t, r in rows), encoding="utf-8")
    (out / "ratio.gp").write_text(_gnuplot("ratio.dat"), encoding="utf-8")
    print(
        f"service={tot['service']:.6f} movement_l1={tot['movement_l1']:.6f} "
        + (f"opt={report['opt']:.6f} " if "opt" in report else "")
        + f"substeps={tot['substeps']} wall={wall:.2f}s",
        file=sys.stderr,
    )
    return EXIT_FAIL if report.get("checks", {}).get("failed") else EXIT_OK


# -- verify --------------------------------------------------------------------------------------


def cmd_verify(args) -> int:
    d, m, doc = _load_dag_doc(args.dag)
    try:
        d = validate(d)
    except DagValidationError as exc:
        print(f"FAIL validate: {exc}")
        return EXIT_FAIL
    print("PASS validate residual=0.000e+00")
    h = None
    builder = doc.get("builder", {})
    if m is not None and builder.get("kind") == "net":
        h = net_hierarchy(m, builder.get("tau", 12.0))
    kappa = args.kappa if args.kappa is not None else 1.0
    checks = battery.full_battery(d, m, h, kappa=kappa, seed=args.seed, full=args.full)
    return EXIT_OK if _print_checks(checks) else EXIT_FAIL


# -- entry point -------------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtsdag", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-dag", help="build a net DAG over a metric")
    b.add_argument("--metric", required=True, help="CSV file or gen:uniform:N, gen:path:N, gen:euclid:N[:dim], gen:expander:N")
    b.add_argument("--no-compress", action="store_true")
    b.add_argument("--theta", choices=("balls", "sigma"), default="balls")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="DAG JSON path (stdout if omitted)")
    b.add_argument("--nets", help="also write the net hierarchy JSON here")
    b.set_defaults(func=cmd_build_dag)

    r = sub.add_parser("run", help="run the dynamics and compare to the offline optimum")
    r.add_argument("--config", help="JSON file with defaults for the options below")
    r.add_argument("--dag")
    r.add_argument("--costs", help="CSV file or adversary:NAME[:magnitude]")
    r.add_argument("--T", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--kappa", type=float)
    r.add_argument("--exact-w1", action="store_true", default=None)
    r.add_argument("--verify", action="store_true", default=None, help="check the step lemmas on every sub-step")
    r.add_argument("--out-dir", default=None)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run the invariant battery on a DAG file")
    v.add_argument("--dag", required=True)
    v.add_argument("--full", action="store_true")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--kappa", type=float)
    v.set_defaults(func=cmd_verify)
    return p


RUN_DEFAULTS = {"T": None, "seed": None, "kappa": None, "exact_w1": False, "verify": False, "out_dir": "."}


def _apply_config(args) -> None:
    cfg = {}
    if args.config:
        if not Path(args.config).is_file():
            raise InputError(f"config file not found: {args.config}")
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: {exc}") from None
        unknown = set(cfg) - set(RUN_DEFAULTS) - {"dag", "costs"}
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
    for key in ("dag", "costs", *RUN_DEFAULTS):
        if getattr(args, key) is None:
            setattr(args, key, cfg.get(key, RUN_DEFAULTS.get(key)))
    if args.dag is None or args.costs is None:
        raise InputError("--dag and --costs are required")
    if args.seed is None:
        if args.costs.startswith("adversary:"):
            raise InputError("--seed is required with an adversary")
        args.seed = 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            _apply_config(args)
        return args.func(args)
    except (InputError, MetricError, DagValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
