"""Classical exact and heuristic algorithms used as baselines and as
ground-truth oracles for optimality gaps.

Determinism: every greedy choice breaks ties by lowest node/edge id, so
repeated runs give identical solutions.  All weights are float64 and oracle
comparisons use absolute tolerance 1e-12.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StructureError
from .graphs import EuclideanInstance, WeightedGraph, is_spanning_tree

WEIGHT_TOL = 1e-12


@dataclass
class TreeSolution:
    edge_ids: np.ndarray  # int64, sorted
    total_weight: float


@dataclass
class Tour:
    perm: np.ndarray  # int64 permutation of 0..n-1
    length: float


@dataclass
class PathTree:
    source: int
    dist: np.ndarray  # float64 per node
    parent_edge: np.ndarray  # int64 per node, -1 at the source


@dataclass
class RouteSet:
    """Vehicle routes, each stored as a city sequence starting and ending
    at the depot."""
    routes: list
    max_route_length: float


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def prim_mst(g: WeightedGraph) -> TreeSolution:
    """Minimum spanning tree by Prim's algorithm from node 0."""
    if g.directed:
        raise StructureError("MST requires an undirected graph")
    in_tree = np.zeros(g.n, dtype=bool)
    in_tree[0] = True
    heap = []
    for nbr, e in g.neighbors(0):
        heapq.heappush(heap, (g.w[e], e, nbr))
    chosen = []
    while heap and len(chosen) < g.n - 1:
        _, e, node = heapq.heappop(heap)
        if in_tree[node]:
            continue
        in_tree[node] = True
        chosen.append(e)
        for nbr, e2 in g.neighbors(node):
            if not in_tree[nbr]:
                heapq.heappush(heap, (g.w[e2], e2, nbr))
    if len(chosen) != g.n - 1:
        raise StructureError("graph is disconnected; no spanning tree exists")
    ids = np.array(sorted(chosen), dtype=np.int64)
    return TreeSolution(edge_ids=ids, total_weight=float(g.w[ids].sum()))


def kruskal_mst(g: WeightedGraph) -> TreeSolution:
    """Minimum spanning tree by Kruskal's algorithm (sort + union-find)."""
    if g.directed:
        raise StructureError("MST requires an undirected graph")
    order = sorted(range(g.m), key=lambda e: (g.w[e], e))
    uf = UnionFind(g.n)
    chosen = []
    for e in order:
        if uf.union(int(g.u[e]), int(g.v[e])):
            chosen.append(e)
            if len(chosen) == g.n - 1:
                break
    if len(chosen) != g.n - 1:
        raise StructureError("graph is disconnected; no spanning tree exists")
    ids = np.array(sorted(chosen), dtype=np.int64)
    return TreeSolution(edge_ids=ids, total_weight=float(g.w[ids].sum()))


def _out_arcs(g: WeightedGraph):
    """Arc adjacency treating an undirected edge as two arcs."""
    adj = [[] for _ in range(g.n)]
    for e in range(g.m):
        a, b = int(g.u[e]), int(g.v[e])
        adj[a].append((b, e))
        if not g.directed:
            adj[b].append((a, e))
    return adj


def dijkstra(g: WeightedGraph, source: int) -> PathTree:
    """Shortest paths with nonnegative weights; every node must be reachable."""
    if np.any(g.w < 0):
        raise ParameterError("dijkstra requires nonnegative weights")
    adj = _out_arcs(g)
    dist = np.full(g.n, np.inf)
    parent = np.full(g.n, -1, dtype=np.int64)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(g.n, dtype=bool)
    while heap:
        d, x = heapq.heappop(heap)
        if done[x]:
            continue
        done[x] = True
        for y, e in adj[x]:
            nd = d + g.w[e]
            if nd < dist[y]:
                dist[y] = nd
                parent[y] = e
                heapq.heappush(heap, (nd, y))
    if not done.all():
        unreachable = np.flatnonzero(~done).tolist()
        raise StructureError(f"nodes unreachable from {source}: {unreachable}")
    return PathTree(source=source, dist=dist, parent_edge=parent)


def bellman_ford(g: WeightedGraph, source: int) -> PathTree:
    """Shortest paths by repeated relaxation; detects negative cycles."""
    adj_u = g.u if g.directed else np.concatenate([g.u, g.v])
    adj_v = g.v if g.directed else np.concatenate([g.v, g.u])
    adj_w = g.w if g.directed else np.concatenate([g.w, g.w])
    eid = np.arange(g.m) if g.directed else np.concatenate([np.arange(g.m)] * 2)
    dist = np.full(g.n, np.inf)
    parent = np.full(g.n, -1, dtype=np.int64)
    dist[source] = 0.0
    for _ in range(g.n - 1):
        changed = False
        for a, b, wt, e in zip(adj_u, adj_v, adj_w, eid):
            if dist[a] + wt < dist[b]:
                dist[b] = dist[a] + wt
                parent[b] = e
                changed = True
        if not changed:
            break
    for a, b, wt in zip(adj_u, adj_v, adj_w):
        if dist[a] + wt < dist[b] - WEIGHT_TOL:
            raise StructureError("negative cycle reachable from source")
    if np.any(np.isinf(dist)):
        unreachable = np.flatnonzero(np.isinf(dist)).tolist()
        raise StructureError(f"nodes unreachable from {source}: {unreachable}")
    return PathTree(source=source, dist=dist, parent_edge=parent)


# ---------------------------------------------------------------------------
# Tours
# ---------------------------------------------------------------------------


def tour_length(inst: EuclideanInstance, perm) -> float:
    """Cycle length of a permutation under the instance metric.

    Under the rounded metric each leg is rounded before summing, so the
    result is an integer-valued float.
    """
    perm = np.asarray(perm, dtype=np.int64)
    n = inst.n
    if len(perm) != n or len(np.unique(perm)) != n or perm.min() < 0 or perm.max() >= n:
        raise ParameterError("perm must be a permutation of 0..n-1")
    a = inst.coords[perm]
    b = inst.coords[np.roll(perm, -1)]
    legs = np.sqrt(((a - b) ** 2).sum(axis=1))
    if inst.metric == "euclid_round":
        legs = np.floor(legs + 0.5)
    return float(legs.sum())


def held_karp(inst: EuclideanInstance) -> Tour:
    """Exact TSP by bitmask dynamic programming, n in [3, 16]."""
    n = inst.n
    if not (3 <= n <= 16):
        raise ParameterError(f"held_karp supports 3 <= n <= 16, got {n}")
    dmat = inst.distance_matrix()
    full = 1 << n
    # dp[mask, j]: cheapest path starting at 0, visiting exactly `mask`,
    # ending at j.  Each (mask | 1<<k, k) has the unique predecessor mask,
    # so one sweep in increasing mask order fills the table.
    dp = np.full((full, n), np.inf)
    back = np.full((full, n), -1, dtype=np.int64)
    dp[1, 0] = 0.0
    cols = np.arange(n)
    for mask in range(1, full):
        if not mask & 1:
            continue
        row = dp[mask]
        if not np.isfinite(row).any():
            continue
        vals = row[:, None] + dmat  # over (last j, next k)
        best_j = np.argmin(vals, axis=0)
        best_v = vals[best_j, cols]
        for k in range(1, n):
            if not mask & (1 << k):
                nm = mask | (1 << k)
                dp[nm, k] = best_v[k]
                back[nm, k] = best_j[k]
    final = dp[full - 1] + dmat[:, 0]
    final[0] = np.inf
    j = int(np.argmin(final))
    length = float(final[j])
    perm = []
    mask = full - 1
    while j != 0:
        perm.append(j)
        j, mask = int(back[mask, j]), mask ^ (1 << j)
    perm.append(0)
    perm.reverse()
    return Tour(perm=np.array(perm, dtype=np.int64), length=length)


def nearest_neighbor_tour(inst: EuclideanInstance, start: int = 0) -> Tour:
    """Repeatedly visit the closest unvisited city (ties: lowest id)."""
    n = inst.n
    if not (0 <= start < n):
        raise ParameterError(f"start node {start} outside 0..n-1")
    dmat = inst.distance_matrix()
    visited = np.zeros(n, dtype=bool)
    perm = [start]
    visited[start] = True
    cur = start
    for _ in range(n - 1):
        row = np.where(visited, np.inf, dmat[cur])
        cur = int(np.argmin(row))
        visited[cur] = True
        perm.append(cur)
    perm = np.array(perm, dtype=np.int64)
    return Tour(perm=perm, length=tour_length(inst, perm))


def farthest_insertion_tour(inst: EuclideanInstance) -> Tour:
    """Insert the city farthest from the partial tour at its cheapest
    position.  Starts from the farthest pair; all ties break by lowest id."""
    n = inst.n
    if n < 3:
        raise ParameterError(f"farthest insertion needs n >= 3, got {n}")
    dmat = inst.distance_matrix()
    flat = int(np.argmax(dmat))
    a, b = divmod(flat, n)
    if a > b:
        a, b = b, a
    tour = [a, b]
    in_tour = np.zeros(n, dtype=bool)
    in_tour[[a, b]] = True
    # distance from each city to the partial tour
    mind = np.minimum(dmat[:, a], dmat[:, b])
    for _ in range(n - 2):
        mind_masked = np.where(in_tour, -np.inf, mind)
        city = int(np.argmax(mind_masked))
        best_pos, best_delta = 0, np.inf
        for pos in range(len(tour)):
            i, j = tour[pos], tour[(pos + 1) % len(tour)]
            delta = dmat[i, city] + dmat[city, j] - dmat[i, j]
            if delta < best_delta - WEIGHT_TOL:
                best_delta, best_pos = delta, pos
        tour.insert(best_pos + 1, city)
        in_tour[city] = True
        mind = np.minimum(mind, dmat[:, city])
    perm = np.array(tour, dtype=np.int64)
    return Tour(perm=perm, length=tour_length(inst, perm))


def two_opt(inst: EuclideanInstance, tour: Tour) -> Tour:
    """First-improvement 2-exchange in lexicographic (i, j) order, scan
    restarted after each improvement, until no improving exchange remains."""
    n = inst.n
    perm = np.asarray(tour.perm, dtype=np.int64).copy()
    if len(perm) != n or len(np.unique(perm)) != n:
        raise ParameterError("input tour is not a permutation")
    dmat = inst.distance_matrix()
    improved = True
    while improved:
        improved = False
        for i in range(n - 2):
            a, b = perm[i], perm[i + 1]
            j_hi = n - 1 if i > 0 else n - 2  # skip the exchange that only reverses
            js = np.arange(i + 2, j_hi + 1)
            if len(js) == 0:
                continue
            c = perm[js]
            d = perm[(js + 1) % n]
            delta = dmat[a, c] + dmat[b, d] - (dmat[a, b] + dmat[c, d])
            hits = np.flatnonzero(delta < -WEIGHT_TOL)
            if len(hits):
                j = int(js[hits[0]])
                perm[i + 1:j + 1] = perm[i + 1:j + 1][::-1]
                improved = True
                break
    return Tour(perm=perm, length=tour_length(inst, perm))


# ---------------------------------------------------------------------------
# Vehicle routing
# ---------------------------------------------------------------------------


def route_length(inst: EuclideanInstance, route) -> float:
    """Length of one depot-to-depot route given as a full node sequence."""
    total = 0.0
    for i in range(len(route) - 1):
        total += inst.distance(int(route[i]), int(route[i + 1]))
    return total


def _route_dp(inst: EuclideanInstance, cities):
    """One path DP over all city subsets: dp[mask, j] is the cheapest path
    depot -> mask -> j.  Returns (dp, back, depot distances)."""
    k = len(cities)
    depot = inst.depot
    d = np.array([[inst.distance(a, b) for b in cities] for a in cities])
    d0 = np.array([inst.distance(depot, c) for c in cities])
    full = 1 << k
    dp = np.full((full, k), np.inf)
    back = np.full((full, k), -1, dtype=np.int64)
    for j in range(k):
        dp[1 << j, j] = d0[j]
    cols = np.arange(k)
    for mask in range(1, full):
        row = dp[mask]
        if not np.isfinite(row).any():
            continue
        vals = row[:, None] + d
        best_j = np.argmin(vals, axis=0)
        best_v = vals[best_j, cols]
        for t in range(k):
            if not mask & (1 << t):
                nm = mask | (1 << t)
                if best_v[t] < dp[nm, t]:
                    dp[nm, t] = best_v[t]
                    back[nm, t] = best_j[t]
    return dp, back, d0


def _reconstruct_route(cities, dp, back, d0, mask, depot) -> list:
    if mask == 0:
        return [depot, depot]
    j = int(np.argmin(dp[mask] + d0))
    seq = []
    while j != -1:
        seq.append(cities[j])
        j, mask = int(back[mask, j]), mask ^ (1 << j)
    seq.reverse()
    return [depot, *seq, depot]


def brute_force_vrp(inst: EuclideanInstance, vehicles: int) -> RouteSet:
    """Exact min-max vehicle routing over all city partitions and orders.

    Budgeted for n <= 10 cities (including the depot) and at most 3
    vehicles.
    """
    n = inst.n
    if n > 10 or vehicles > 3 or vehicles < 1:
        raise ParameterError(f"brute_force_vrp supports n <= 10, 1 <= M <= 3, "
                             f"got n={n} M={vehicles}")
    depot = inst.depot
    cities = [c for c in range(n) if c != depot]
    k = len(cities)
    dp, back, d0 = _route_dp(inst, cities)
    sub_cost = np.min(dp + d0[None, :], axis=1)
    sub_cost[0] = 0.0
    best_val, best_assign = np.inf, None
    for assign in itertools.product(range(vehicles), repeat=k):
        masks = [0] * vehicles
        for i, veh in enumerate(assign):
            masks[veh] |= 1 << i
        val = max(sub_cost[m] for m in masks)
        if val < best_val - WEIGHT_TOL:
            best_val, best_assign = val, masks
    routes = [_reconstruct_route(cities, dp, back, d0, m, depot)
              for m in best_assign]
    return RouteSet(routes=routes, max_route_length=float(best_val))


def validate_route_set(inst: EuclideanInstance, rs: RouteSet):
    """Check coverage: every non-depot city in exactly one route."""
    depot = inst.depot
    seen = []
    for route in rs.routes:
        if len(route) and (route[0] != depot or route[-1] != depot):
            raise StructureError("route must start and end at the depot")
        seen.extend(c for c in route[1:-1] if c != depot)
    expected = sorted(c for c in range(inst.n) if c != depot)
    if sorted(seen) != expected:
        raise StructureError("routes must cover every city exactly once")
