"""Benchmark orchestration: method registry, gap accounting, runtime
scaling measurement, and deterministic CSV outputs.

The canonical benchmark CSV contains only seed-deterministic columns
(method, instance, seed, value, gap, error) and is byte-identical across
runs with equal seeds.  Wall-clock measurements go to a separate timing
CSV, since they can never be deterministic.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .envs import MstGame, SspGame, TspGame, rollout
from .errors import ParameterError
from .graphs import EuclideanInstance, WeightedGraph, generate_euclidean
from .oracles import (farthest_insertion_tour, held_karp, kruskal_mst,
                      nearest_neighbor_tour, prim_mst, two_opt)
from .policy import PolicyParams

TSP_METHODS = ("nearest", "farthest", "two_opt", "held_karp", "policy")
MST_METHODS = ("prim", "kruskal", "policy")


@dataclass
class BenchRecord:
    method: str
    instance: str
    seed: int
    value: float
    gap: float | None
    time_ms: float
    timestamp: float
    error: str = ""


@dataclass
class BenchInstance:
    name: str
    payload: object            # EuclideanInstance or WeightedGraph
    optimum: float | None      # exact reference cost if known


def random_tsp_instances(n: int, count: int, seed: int,
                         with_optimum: bool = True) -> list:
    """Uniform random instances; exact optima attached when n permits."""
    out = []
    for i in range(count):
        inst = generate_euclidean(n, seed + i)
        opt = held_karp(inst).length if (with_optimum and 3 <= n <= 16) else None
        out.append(BenchInstance(name=f"rand{n}-{seed + i}", payload=inst,
                                 optimum=opt))
    return out


def solve_tsp_method(method: str, inst: EuclideanInstance, seed: int,
                     params: PolicyParams | None = None,
                     neighbor_cap: int | None = None) -> float:
    if method == "nearest":
        return nearest_neighbor_tour(inst).length
    if method == "farthest":
        return farthest_insertion_tour(inst).length
    if method == "two_opt":
        return two_opt(inst, nearest_neighbor_tour(inst)).length
    if method == "held_karp":
        return held_karp(inst).length
    if method == "policy":
        if params is None:
            raise ParameterError("policy method needs a checkpoint")
        game = TspGame(inst, neighbor_cap=neighbor_cap)
        return -rollout(game, params, mode="greedy", seed=seed).reward
    raise ParameterError(f"unknown tsp method {method!r}")


def solve_mst_method(method: str, g: WeightedGraph, seed: int,
                     params: PolicyParams | None = None) -> float:
    if method == "prim":
        return prim_mst(g).total_weight
    if method == "kruskal":
        return kruskal_mst(g).total_weight
    if method == "policy":
        if params is None:
            raise ParameterError("policy method needs a checkpoint")
        game = MstGame(g)
        return -rollout(game, params, mode="greedy", seed=seed).reward
    raise ParameterError(f"unknown mst method {method!r}")


def run_bench(methods, instances, seeds, problem: str = "tsp",
              params: PolicyParams | None = None,
              neighbor_cap: int | None = None,
              out_path: str | None = None) -> list:
    """One record per (method, instance, seed); failures become error rows
    and the run continues.  Records are sorted by (method, instance, seed)
    and written atomically when out_path is given."""
    solver = solve_tsp_method if problem == "tsp" else solve_mst_method
    records = []
    for method in methods:
        for inst in instances:
            for seed in seeds:
                t0 = time.perf_counter()
                try:
                    if problem == "tsp":
                        value = solver(method, inst.payload, seed, params,
                                       neighbor_cap)
                    else:
                        value = solver(method, inst.payload, seed, params)
                    err = ""
                    gap = (value / inst.optimum
                           if inst.optimum is not None else None)
                except (ParameterError, ValueError) as exc:
                    value, gap, err = float("nan"), None, str(exc)
                ms = (time.perf_counter() - t0) * 1e3
                records.append(BenchRecord(
                    method=method, instance=inst.name, seed=seed, value=value,
                    gap=gap, time_ms=ms, timestamp=time.time(), error=err))
    records.sort(key=lambda r: (r.method, r.instance, r.seed))
    if out_path:
        write_bench_csv(records, out_path)
        write_timing_csv(records, _timing_path(out_path))
    return records


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and np.isnan(x):
        return "nan"
    return repr(float(x))


def write_bench_csv(records, path: str):
    lines = ["method,instance,seed,value,gap,error"]
    for r in records:
        lines.append(f"{r.method},{r.instance},{r.seed},{_fmt(r.value)},"
                     f"{_fmt(r.gap)},{r.error}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_timing_csv(records, path: str):
    lines = ["method,instance,seed,time_ms"]
    for r in records:
        lines.append(f"{r.method},{r.instance},{r.seed},{r.time_ms:.3f}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _timing_path(path: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}_timing{ext or '.csv'}"


def _atomic_write(path: str, text: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Gap report
# ---------------------------------------------------------------------------


@dataclass
class GapSummary:
    method: str
    count: int
    skipped: int              # records without a reference optimum
    mean: float
    median: float
    q25: float
    q75: float


def gap_report(records) -> list:
    """Per-method gap summaries; records lacking optima are flagged in
    `skipped` and excluded from the statistics."""
    by_method = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    out = []
    for method in sorted(by_method):
        rows = by_method[method]
        gaps = np.array([r.gap for r in rows if r.gap is not None])
        skipped = sum(1 for r in rows if r.gap is None)
        if len(gaps) == 0:
            out.append(GapSummary(method, 0, skipped, float("nan"),
                                  float("nan"), float("nan"), float("nan")))
            continue
        out.append(GapSummary(
            method=method, count=len(gaps), skipped=skipped,
            mean=float(gaps.mean()), median=float(np.median(gaps)),
            q25=float(np.quantile(gaps, 0.25)),
            q75=float(np.quantile(gaps, 0.75))))
    return out


def format_gap_report(summaries) -> str:
    lines = [f"{'method':<12} {'count':>5} {'skip':>4} {'mean':>8} "
             f"{'median':>8} {'q25':>8} {'q75':>8}"]
    for s in summaries:
        lines.append(f"{s.method:<12} {s.count:>5} {s.skipped:>4} "
                     f"{s.mean:>8.4f} {s.median:>8.4f} {s.q25:>8.4f} "
                     f"{s.q75:>8.4f}")
    return "\n".join(lines)


def write_gap_report_csv(summaries, path: str):
    lines = ["method,count,skipped,mean,median,q25,q75"]
    for s in summaries:
        lines.append(f"{s.method},{s.count},{s.skipped},{_fmt(s.mean)},"
                     f"{_fmt(s.median)},{_fmt(s.q25)},{_fmt(s.q75)}")
    _atomic_write(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Runtime scaling
# ---------------------------------------------------------------------------


@dataclass
class ScalingRow:
    method: str
    n: int
    decode_ms_median: float
    decode_ms_q25: float
    decode_ms_q75: float
    encode_ms_median: float   # 0 for classical methods


def _time_policy_decode(inst: EuclideanInstance, params: PolicyParams,
                        neighbor_cap: int | None):
    """Encoder and decode loop timed separately (the encoder runs once per
    graph; per-step decoding is the scaling subject)."""
    game = TspGame(inst, neighbor_cap=neighbor_cap)
    from .autodiff import no_grad
    from .envs import encode_game, step
    from .policy import candidate_logits, decoder_keys
    with no_grad():
        t0 = time.perf_counter()
        emb = encode_game(game, params)
        keys = decoder_keys(emb, params)
        encode_ms = (time.perf_counter() - t0) * 1e3
        state = game.initial_state()
        t1 = time.perf_counter()
        while not game.is_terminal(state):
            cands = state.allowed()
            logits = candidate_logits(emb, keys, state.current, cands, params)
            action = int(cands[int(np.argmax(logits.data))])
            state = step(state, action)
        decode_ms = (time.perf_counter() - t1) * 1e3
    return encode_ms, decode_ms


def runtime_scaling(methods, sizes, repeats: int, seed: int,
                    params: PolicyParams | None = None,
                    neighbor_cap: int | None = 16,
                    out_path: str | None = None) -> list:
    """Median decode time per instance size.  The first repeat of each
    (method, size) is a warm-up and is discarded; all timing uses the
    monotonic clock."""
    if repeats < 2:
        raise ParameterError("need repeats >= 2 (first repeat is discarded)")
    rows = []
    for method in methods:
        for n in sizes:
            decode_times, encode_times = [], []
            for rep in range(repeats):
                inst = generate_euclidean(n, seed + rep)
                if method == "policy":
                    if params is None:
                        raise ParameterError("policy scaling needs a checkpoint")
                    enc, dec = _time_policy_decode(inst, params, neighbor_cap)
                else:
                    t0 = time.perf_counter()
                    solve_tsp_method(method, inst, seed)
                    dec = (time.perf_counter() - t0) * 1e3
                    enc = 0.0
                if rep == 0:
                    continue
                decode_times.append(dec)
                encode_times.append(enc)
            rows.append(ScalingRow(
                method=method, n=n,
                decode_ms_median=float(np.median(decode_times)),
                decode_ms_q25=float(np.quantile(decode_times, 0.25)),
                decode_ms_q75=float(np.quantile(decode_times, 0.75)),
                encode_ms_median=float(np.median(encode_times))))
    if out_path:
        lines = ["method,n,decode_ms_median,decode_ms_q25,decode_ms_q75,"
                 "encode_ms_median"]
        for r in rows:
            lines.append(f"{r.method},{r.n},{r.decode_ms_median:.3f},"
                         f"{r.decode_ms_q25:.3f},{r.decode_ms_q75:.3f},"
                         f"{r.encode_ms_median:.3f}")
        _atomic_write(out_path, "\n".join(lines) + "\n")
    return rows
