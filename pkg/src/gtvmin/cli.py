"""
Command-line harness.

Subcommands: ``generate``, ``solve``, ``analyze``, ``experiment`` and
``normalize``. Exit codes: 0 success, 2 configuration error, 3 numerical
failure, 4 I/O error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .analysis import (AssumptionViolation, check_well_connected, load_partition,
                       save_partition, verify_theorem_bound)
from .datagen import LabelModelSpec, TopologySpec, gen_graph, gen_labels, sample_nodes
from .experiments import (PRESETS, NumericalFailure, emit_plots_data, get_preset,
                          load_config, run_experiment, write_csv)
from .graph import GraphError, load_graph, save_graph
from .losses import KINDS as LOSS_KINDS
from .losses import load_datasets, save_datasets
from .penalties import parse_penalty
from .solver import (STOP_NON_FINITE, SolverConfig, read_weights, solve,
                     write_trace, write_weights)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="gtvmin", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample a synthetic graph and local datasets")
    gen.add_argument("--topology", choices=("sbm", "chain", "star"), required=True)
    gen.add_argument("--sizes", type=int, nargs="+", default=[100, 100])
    gen.add_argument("--p-in", type=float, default=0.5)
    gen.add_argument("--p-out", type=float, default=0.01)
    gen.add_argument("--n", type=int, default=50, help="nodes per chain cluster")
    gen.add_argument("--eps", type=float, default=0.0)
    gen.add_argument("--leaves", type=int, default=49)
    gen.add_argument("--d", type=int, default=2)
    gen.add_argument("--m", type=int, default=5)
    gen.add_argument("--sigma", type=float, default=0.0)
    gen.add_argument("--scheme", choices=("bernoulli", "fixed", "gaussian"), default=None)
    gen.add_argument("--rho", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")

    sol = sub.add_parser("solve", help="run the primal-dual solver")
    sol.add_argument("--graph", required=True)
    sol.add_argument("--data", required=True)
    sol.add_argument("--penalty", default="norm2")
    sol.add_argument("--lambda", dest="lam", type=float, required=True)
    sol.add_argument("--iters", type=int, default=1000)
    sol.add_argument("--gap-tol", type=float, default=None)
    sol.add_argument("--trace-every", type=int, default=10)
    sol.add_argument("--loss", choices=LOSS_KINDS, default="squared")
    sol.add_argument("--eta", type=float, default=0.0)
    sol.add_argument("--trace")
    sol.add_argument("--out", required=True, help="weights CSV")
    sol.add_argument("--seed", type=int, default=None, help="accepted for uniformity; unused")

    ana = sub.add_parser("analyze", help="certify clusters and check the deviation bound")
    ana.add_argument("--graph", required=True)
    ana.add_argument("--data", required=True)
    ana.add_argument("--partition", required=True)
    ana.add_argument("--lambda", dest="lam", type=float, required=True)
    ana.add_argument("--loss", choices=LOSS_KINDS, default="squared")
    ana.add_argument("--eta", type=float, default=0.0)
    ana.add_argument("--mode", choices=("flow", "exhaustive"), default="flow")
    ana.add_argument("--weights", help="solver output to compare against the bound")
    ana.add_argument("--penalty", default="norm2")
    ana.add_argument("--out", help="report JSON (stdout if omitted)")

    exp = sub.add_parser("experiment", help="run a preset or JSON-configured experiment")
    exp.add_argument("config", help=f"preset name ({', '.join(sorted(PRESETS))}) or JSON file")
    exp.add_argument("--seed", type=int, default=None, help="run a single seed")
    exp.add_argument("--iters", type=int, default=None)
    exp.add_argument("--out", help="CSV path (stdout if omitted)")

    nrm = sub.add_parser("normalize", help="rewrite a harness CSV in canonical form")
    nrm.add_argument("input")
    nrm.add_argument("--out")
    return p


def _cmd_generate(a):
    scheme = a.scheme or {"sbm": "bernoulli", "chain": "fixed", "star": "gaussian"}[a.topology]
    try:
        topo = TopologySpec(a.topology, sizes=tuple(a.sizes), p_in=a.p_in, p_out=a.p_out,
                            n=a.n, eps=a.eps, leaves=a.leaves)
        labels = LabelModelSpec(d=a.d, sigma=a.sigma, m=a.m, scheme=scheme)
        if not 0 <= a.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        rng = np.random.default_rng(a.seed)
        g, part = gen_graph(topo, rng)
        datasets, w_true = gen_labels(part, labels, rng)
        sampled = sample_nodes(g.n, a.rho, rng) if a.rho < 1 else range(1, g.n + 1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    os.makedirs(a.out, exist_ok=True)
    keep = set(sampled)
    save_graph(g, os.path.join(a.out, "graph.json"))
    save_datasets({i + 1: ds for i, ds in enumerate(datasets) if i + 1 in keep}, a.d,
                  os.path.join(a.out, "data.json"))
    save_partition(part, os.path.join(a.out, "partition.json"))
    write_weights(w_true, os.path.join(a.out, "truth.csv"))
    return EXIT_OK


def _load_problem(a):
    g = load_graph(a.graph)
    losses = load_datasets(a.data, g.n, kind=a.loss, eta=a.eta)
    return g, losses


def _cmd_solve(a):
    try:
        g, losses = _load_problem(a)
        cfg = SolverConfig(a.lam, parse_penalty(a.penalty), a.iters, a.gap_tol, a.trace_every)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    res = solve(g, losses, cfg)
    write_weights(res.w_final, a.out)
    if a.trace:
        write_trace(res.trace, a.trace)
    print(f"stop_reason={res.stop_reason} iterations={res.iterations}", file=sys.stderr)
    return EXIT_NUMERIC if res.stop_reason == STOP_NON_FINITE else EXIT_OK


def _cmd_analyze(a):
    try:
        g, losses = _load_problem(a)
        part = load_partition(a.partition)
        if part.n != g.n:
            raise ValueError(f"partition covers {part.n} nodes, graph has {g.n}")
        certs = [check_well_connected(g, part, c, losses, a.lam, mode=a.mode)
                 for c in range(1, part.F + 1)]
        report = {"lambda": a.lam, "clusters": [c.to_dict() for c in certs]}
        if a.weights:
            w = read_weights(a.weights)
            reps = verify_theorem_bound(g, part, losses, a.lam, parse_penalty(a.penalty),
                                        w, certs)
            report["bound"] = [{"cluster": r.cluster, "status": r.status, "spread": r.spread,
                                "deviation": r.deviation, "bound": r.bound, "holds": r.holds}
                               for r in reps]
    except (ValueError, KeyError, AssumptionViolation) as exc:
        raise ConfigError(str(exc)) from exc
    text = json.dumps(report, indent=1)
    if a.out:
        with open(a.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _cmd_experiment(a):
    try:
        if a.config in PRESETS or not (a.config.endswith(".json") or os.path.exists(a.config)):
            cfg = get_preset(a.config)
        else:
            cfg = load_config(a.config)
        if a.seed is not None:
            cfg.seeds = [a.seed]
        if a.iters is not None:
            cfg.iters = a.iters
        cfg.validate()
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(str(exc)) from exc
    header, rows = run_experiment(cfg)
    text = write_csv(header, rows, a.out)
    if not a.out:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_normalize(a):
    try:
        text = emit_plots_data(a.input, a.out)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not a.out:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"generate": _cmd_generate, "solve": _cmd_solve, "analyze": _cmd_analyze,
            "experiment": _cmd_experiment, "normalize": _cmd_normalize}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GraphError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
