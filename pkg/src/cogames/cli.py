"""Command-line surface: generate / train / solve / bench / scaling /
oracle-check, each a thin wrapper over the library."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .envs import MstGame, SspGame, TspGame, VrpGame, rollout
from .graphs import (generate_directed_graph, generate_euclidean,
                     generate_random_graph, graph_from_text, graph_to_text,
                     instance_from_text, instance_to_text)
from .oracles import (bellman_ford, dijkstra, farthest_insertion_tour,
                      held_karp, kruskal_mst, nearest_neighbor_tour, prim_mst,
                      two_opt)
from .policy import load_params
from .training import TrainConfig, config_from_text, train
from .tsplib import parse_tsplib


def _add_graph_params(p):
    p.add_argument("--param", action="append", default=[], metavar="K=V",
                   help="kind-specific generator parameter, repeatable "
                        "(e.g. --param d=4 --param p=0.3)")


def _parse_params(pairs):
    out = {}
    for pair in pairs:
        k, v = pair.split("=", 1)
        out[k] = float(v) if ("." in v or "e" in v.lower()) else int(v)
    return out


def cmd_generate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    params = _parse_params(args.param)
    for i in range(args.count):
        seed = args.seed + i
        if args.problem == "euclidean":
            inst = generate_euclidean(args.n, seed)
            text = instance_to_text(inst)
            name = f"euclidean-n{args.n}-s{seed}.txt"
        elif args.directed:
            g = generate_directed_graph(args.kind, args.n, params, seed)
            text = graph_to_text(g)
            name = f"{args.kind}-dir-n{args.n}-s{seed}.txt"
        else:
            g = generate_random_graph(args.kind, args.n, params, seed)
            text = graph_to_text(g)
            name = f"{args.kind}-n{args.n}-s{seed}.txt"
        path = os.path.join(args.out, name)
        with open(path, "w") as fh:
            fh.write(text)
        print(path)
    return 0


def cmd_train(args) -> int:
    if args.config:
        cfg = config_from_text(Path(args.config).read_text())
    else:
        cfg = TrainConfig()
    for field in ("problem", "n", "seed", "epochs", "out_dir"):
        val = getattr(args, field if field != "out_dir" else "out")
        if val is not None:
            setattr(cfg, field, val)
    cfg.validate()
    result = train(cfg, log=print)
    print(f"best validation gap {result.best_gap:.6f} "
          f"(epoch {result.best_epoch})")
    if result.checkpoint_path:
        print(f"checkpoint: {result.checkpoint_path}")
        print(f"metrics:    {result.metrics_path}")
    return 0


def _load_instance(path: str):
    text = Path(path).read_text()
    if path.endswith(".tsp") or "NODE_COORD_SECTION" in text:
        return parse_tsplib(text).to_euclidean()
    if text.startswith("euclidean"):
        return instance_from_text(text)
    return graph_from_text(text)


def cmd_solve(args) -> int:
    payload = _load_instance(args.instance)
    if args.method == "policy":
        with open(args.checkpoint, "rb") as fh:
            params, _, _ = load_params(fh.read())
        if args.problem == "mst":
            game = MstGame(payload)
        elif args.problem == "ssp":
            game = SspGame(payload, source=args.source)
        elif args.problem == "vrp":
            game = VrpGame(payload, vehicles=args.vehicles)
        else:
            game = TspGame(payload, neighbor_cap=args.neighbor_cap)
        traj = rollout(game, params, mode=args.mode, seed=args.seed)
        state = game.initial_state()
        print(f"value {-traj.reward:.17g}")
        print("solution", " ".join(str(a) for a in traj.actions))
        return 0
    if args.problem == "mst":
        solver = {"prim": prim_mst, "kruskal": kruskal_mst}[args.method]
        sol = solver(payload)
        print(f"value {sol.total_weight:.17g}")
        print("solution", " ".join(str(int(e)) for e in sol.edge_ids))
    elif args.problem == "ssp":
        solver = {"dijkstra": dijkstra, "bellman_ford": bellman_ford}[args.method]
        tree = solver(payload, args.source)
        print(f"value {tree.dist.sum():.17g}")
        print("solution", " ".join(str(int(e)) for e in tree.parent_edge))
    else:
        if args.method == "nearest":
            tour = nearest_neighbor_tour(payload)
        elif args.method == "farthest":
            tour = farthest_insertion_tour(payload)
        elif args.method == "two_opt":
            tour = two_opt(payload, nearest_neighbor_tour(payload))
        else:
            tour = held_karp(payload)
        print(f"value {tour.length:.17g}")
        print("solution", " ".join(str(int(c)) for c in tour.perm))
    return 0


def cmd_bench(args) -> int:
    methods = args.methods.split(",")
    params = None
    if args.checkpoint:
        with open(args.checkpoint, "rb") as fh:
            params, _, _ = load_params(fh.read())
    if args.instances == "random":
        if args.problem == "tsp":
            instances = bench_mod.random_tsp_instances(args.n, args.count,
                                                       args.seed)
        else:
            instances = []
            for i in range(args.count):
                g = generate_random_graph(args.kind, args.n,
                                          _parse_params(args.param),
                                          args.seed + i)
                instances.append(bench_mod.BenchInstance(
                    name=f"{args.kind}{args.n}-{args.seed + i}", payload=g,
                    optimum=prim_mst(g).total_weight))
    else:
        instances = []
        for path in sorted(Path(args.instances).glob("*.tsp")):
            t = parse_tsplib(path.read_text())
            instances.append(bench_mod.BenchInstance(
                name=t.name, payload=t.to_euclidean(), optimum=t.optimal))
    seeds = [int(s) for s in args.seeds.split(",")]
    records = bench_mod.run_bench(methods, instances, seeds,
                                  problem=args.problem, params=params,
                                  neighbor_cap=args.neighbor_cap,
                                  out_path=args.out)
    summaries = bench_mod.gap_report(records)
    print(bench_mod.format_gap_report(summaries))
    if args.out:
        print(f"records: {args.out}")
    return 0


def cmd_scaling(args) -> int:
    params = None
    if args.checkpoint:
        with open(args.checkpoint, "rb") as fh:
            params, _, _ = load_params(fh.read())
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = bench_mod.runtime_scaling(args.methods.split(","), sizes,
                                     args.repeats, args.seed, params=params,
                                     neighbor_cap=args.neighbor_cap,
                                     out_path=args.out)
    print("method       n   decode_ms(median)  encode_ms(median)")
    for r in rows:
        print(f"{r.method:<10} {r.n:>5}   {r.decode_ms_median:>12.3f} "
              f"   {r.encode_ms_median:>12.3f}")
    return 0


def cmd_oracle_check(args) -> int:
    """Cross-oracle property suites; prints one PASS/FAIL line each."""
    from .graphs import GRAPH_KINDS
    rng = np.random.default_rng(args.seed)
    failures = 0

    def report(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    ok = True
    for kind in GRAPH_KINDS:
        for i in range(args.trials):
            n = int(rng.integers(10, 40))
            if kind == "rr" and n % 2:
                n += 1
            g = generate_random_graph(kind, n, {}, int(rng.integers(2**31)))
            if abs(prim_mst(g).total_weight
                   - kruskal_mst(g).total_weight) > 1e-12:
                ok = False
    report("prim == kruskal", ok)

    ok = True
    for i in range(args.trials):
        g = generate_directed_graph("er", int(rng.integers(8, 25)),
                                    {"p": 0.4}, int(rng.integers(2**31)))
        a = dijkstra(g, 0).dist
        b = bellman_ford(g, 0).dist
        if not np.allclose(a, b, atol=1e-12):
            ok = False
    report("dijkstra == bellman_ford", ok)

    ok = True
    for i in range(max(3, args.trials // 3)):
        inst = generate_euclidean(8, int(rng.integers(2**31)))
        hk = held_karp(inst).length
        for t in (nearest_neighbor_tour(inst),
                  farthest_insertion_tour(inst)):
            if hk > t.length + 1e-9:
                ok = False
            if two_opt(inst, t).length > t.length + 1e-12:
                ok = False
    report("held_karp <= heuristics; two_opt monotone", ok)

    print(f"{failures} failing suites")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cogames",
        description="Graph combinatorial optimization as single-player "
                    "games: generators, classical baselines, policy "
                    "training, benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write random graphs/instances")
    p.add_argument("--problem", choices=["graph", "euclidean"],
                   default="graph")
    p.add_argument("--kind", default="rr")
    p.add_argument("--directed", action="store_true")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_graph_params(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a policy from a config file")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--problem", choices=["mst", "ssp", "tsp"])
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("solve", help="solve one instance")
    p.add_argument("--problem", choices=["mst", "ssp", "tsp", "vrp"],
                   required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--method", default="policy")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source", type=int, default=0)
    p.add_argument("--vehicles", type=int, default=2)
    p.add_argument("--neighbor-cap", type=int, default=None)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("bench", help="run methods over instance sets")
    p.add_argument("--problem", choices=["tsp", "mst"], default="tsp")
    p.add_argument("--methods", default="nearest,farthest,two_opt")
    p.add_argument("--instances", default="random",
                   help="'random' or a directory of .tsp files")
    p.add_argument("--kind", default="rr")
    _add_graph_params(p)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seeds", default="0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint")
    p.add_argument("--neighbor-cap", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("scaling", help="decode-time scaling measurement")
    p.add_argument("--methods", default="policy,two_opt")
    p.add_argument("--sizes", default="250,500,1000")
    p.add_argument("--repeats", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint")
    p.add_argument("--neighbor-cap", type=int, default=16)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_scaling)

    p = sub.add_parser("oracle-check", help="cross-oracle property suites")
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_oracle_check)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
