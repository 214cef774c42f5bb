"""Graph core: weighted graphs, seeded random-graph generation, the
edge-to-vertex dual (line graph), Euclidean instances, and structural
predicates.

Randomness contract: every generator takes a 64-bit seed and draws from a
single ``numpy`` PCG64 stream.  Topology is drawn first; edge weights are
drawn afterwards, in the order of the canonical (sorted) edge list.  Equal
(kind, n, params, seed) therefore yields a bit-identical graph on any
platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, StructureError

GRAPH_KINDS = ("er", "ba", "sbm", "ws", "rr")

# Connected graphs are produced by rejection sampling; after this many
# failed attempts the parameters are considered unusable.
MAX_CONNECTIVITY_ATTEMPTS = 100


@dataclass
class WeightedGraph:
    """A simple graph with float edge weights.

    Nodes are 0..n-1.  For undirected graphs each edge is stored once with
    u < v and queried symmetrically.  For directed graphs (u, v) is an arc
    and (v, u) may coexist.  The adjacency index is built eagerly and can
    be rebuilt and compared for consistency checks.
    """

    n: int
    u: np.ndarray  # int64, shape (m,)
    v: np.ndarray  # int64, shape (m,)
    w: np.ndarray  # float64, shape (m,)
    directed: bool = False
    _adj: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.int64)
        self.v = np.asarray(self.v, dtype=np.int64)
        self.w = np.asarray(self.w, dtype=np.float64)
        if not (len(self.u) == len(self.v) == len(self.w)):
            raise ParameterError("edge arrays must have equal length")
        self._validate()
        if self._adj is None:
            self._adj = self.build_adjacency()

    def _validate(self):
        if self.n < 1:
            raise ParameterError(f"node count must be >= 1, got {self.n}")
        if self.m and (self.u.min() < 0 or max(self.u.max(), self.v.max()) >= self.n):
            raise ParameterError("edge endpoint outside 0..n-1")
        if np.any(self.u == self.v):
            raise StructureError("self-loops are not allowed")
        key = self.u * self.n + self.v if self.directed else (
            np.minimum(self.u, self.v) * self.n + np.maximum(self.u, self.v))
        if len(np.unique(key)) != self.m:
            raise StructureError("duplicate edges are not allowed")

    @property
    def m(self) -> int:
        return len(self.u)

    def build_adjacency(self):
        """Per-node list of (neighbor id, edge id) pairs, sorted by edge id.

        For directed graphs only out-arcs appear under their tail node.
        """
        adj = [[] for _ in range(self.n)]
        for e in range(self.m):
            a, b = int(self.u[e]), int(self.v[e])
            adj[a].append((b, e))
            if not self.directed:
                adj[b].append((a, e))
        return adj

    def neighbors(self, i: int):
        return self._adj[i]

    def adjacency_consistent(self) -> bool:
        return self._adj == self.build_adjacency()

    def edge(self, e: int):
        return int(self.u[e]), int(self.v[e]), float(self.w[e])

    def __eq__(self, other):
        if not isinstance(other, WeightedGraph):
            return NotImplemented
        return (self.n == other.n and self.directed == other.directed
                and np.array_equal(self.u, other.u)
                and np.array_equal(self.v, other.v)
                and np.array_equal(self.w, other.w))


@dataclass
class LineGraphMapping:
    """Edge-to-vertex dual of an undirected graph (or of the arc set of a
    directed one).

    Dual node i corresponds to primal edge ``to_primal[i]`` and carries the
    primal edge weight as its node weight.  Dual nodes are adjacent iff the
    primal edges share an endpoint.
    """

    dual: WeightedGraph
    node_weights: np.ndarray  # float64, shape (m_primal,)
    to_primal: np.ndarray  # int64
    to_dual: np.ndarray  # int64


def line_graph(g: WeightedGraph) -> LineGraphMapping:
    """Build the line graph. Dual node ids equal primal edge ids.

    Dual edges carry weight 0; the information lives in the node weights.
    """
    if g.m == 0:
        raise StructureError("line graph of an edgeless graph is undefined")
    incident = [[] for _ in range(g.n)]
    for e in range(g.m):
        incident[int(g.u[e])].append(e)
        incident[int(g.v[e])].append(e)
    pairs = set()
    for edges in incident:
        for i in range(len(edges)):
            for j in range(i + 1, len(edges)):
                a, b = edges[i], edges[j]
                pairs.add((a, b) if a < b else (b, a))
    pairs = sorted(pairs)
    du = np.array([p[0] for p in pairs], dtype=np.int64)
    dv = np.array([p[1] for p in pairs], dtype=np.int64)
    dual = WeightedGraph(g.m, du, dv, np.zeros(len(pairs)), directed=False)
    ids = np.arange(g.m, dtype=np.int64)
    return LineGraphMapping(dual=dual, node_weights=g.w.copy(),
                            to_primal=ids, to_dual=ids.copy())


def is_connected(g: WeightedGraph) -> bool:
    """True iff every node is reachable from node 0 ignoring direction."""
    if g.n == 1:
        return True
    adj = [[] for _ in range(g.n)]
    for e in range(g.m):
        a, b = int(g.u[e]), int(g.v[e])
        adj[a].append(b)
        adj[b].append(a)
    seen = np.zeros(g.n, dtype=bool)
    seen[0] = True
    stack = [0]
    count = 1
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if not seen[y]:
                seen[y] = True
                count += 1
                stack.append(y)
    return count == g.n


def is_spanning_tree(g: WeightedGraph, edge_ids) -> bool:
    """True iff the selected edges form a spanning tree of g.

    A set of exactly n-1 edges that connects all n nodes is necessarily
    acyclic, so the check is an edge count plus BFS reachability over the
    selected subgraph.
    """
    ids = sorted(set(int(e) for e in edge_ids))
    if ids and (ids[0] < 0 or ids[-1] >= g.m):
        raise ParameterError("edge id outside 0..m-1")
    if len(ids) != g.n - 1:
        return False
    if g.n == 1:
        return True
    adj = [[] for _ in range(g.n)]
    for e in ids:
        a, b = int(g.u[e]), int(g.v[e])
        adj[a].append(b)
        adj[b].append(a)
    seen = np.zeros(g.n, dtype=bool)
    seen[0] = True
    stack = [0]
    count = 1
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if not seen[y]:
                seen[y] = True
                count += 1
                stack.append(y)
    return count == g.n


# ---------------------------------------------------------------------------
# Random generators
# ---------------------------------------------------------------------------


def _finish_graph(n, pairs, rng) -> WeightedGraph:
    """Sort edges canonically, then draw weights (after topology)."""
    pairs = sorted((min(a, b), max(a, b)) for a, b in pairs)
    u = np.array([p[0] for p in pairs], dtype=np.int64)
    v = np.array([p[1] for p in pairs], dtype=np.int64)
    w = rng.uniform(0.0, 1.0, size=len(pairs))
    return WeightedGraph(n, u, v, w, directed=False)


def _er_pairs(n, p, rng):
    iu, iv = np.triu_indices(n, k=1)
    mask = rng.random(len(iu)) < p
    return list(zip(iu[mask].tolist(), iv[mask].tolist()))


def _ba_pairs(n, m_attach, rng):
    if not (1 <= m_attach < n):
        raise ParameterError(f"BA attachment m must be in [1, n), got {m_attach}")
    targets = list(range(m_attach))
    repeated = []
    pairs = []
    for source in range(m_attach, n):
        pairs.extend((source, t) for t in targets)
        repeated.extend(targets)
        repeated.extend([source] * m_attach)
        # sample m distinct targets preferentially (by degree)
        chosen = set()
        while len(chosen) < m_attach:
            chosen.add(repeated[int(rng.integers(len(repeated)))])
        targets = sorted(chosen)
    return pairs


def _sbm_pairs(n, blocks, p_intra, p_inter, rng):
    if blocks < 1 or blocks > n:
        raise ParameterError(f"SBM block count must be in [1, n], got {blocks}")
    sizes = [n // blocks + (1 if i < n % blocks else 0) for i in range(blocks)]
    label = np.repeat(np.arange(blocks), sizes)
    iu, iv = np.triu_indices(n, k=1)
    prob = np.where(label[iu] == label[iv], p_intra, p_inter)
    mask = rng.random(len(iu)) < prob
    return list(zip(iu[mask].tolist(), iv[mask].tolist()))


def _ws_pairs(n, k, beta, rng):
    if k % 2 != 0 or not (2 <= k < n):
        raise ParameterError(f"WS degree k must be even and in [2, n), got {k}")
    if not (0.0 <= beta <= 1.0):
        raise ParameterError(f"WS rewiring probability must be in [0, 1], got {beta}")
    edges = set()
    for j in range(1, k // 2 + 1):
        for i in range(n):
            edges.add((min(i, (i + j) % n), max(i, (i + j) % n)))
    edges = sorted(edges)
    result = set(edges)
    for (a, b) in edges:
        if rng.random() < beta:
            # rewire the far endpoint of (a, b) to a fresh node
            candidates_tried = 0
            while candidates_tried < 4 * n:
                c = int(rng.integers(n))
                candidates_tried += 1
                if c == a:
                    continue
                new = (min(a, c), max(a, c))
                if new in result:
                    continue
                result.discard((a, b))
                result.add(new)
                break
    return sorted(result)


def _rr_pairs(n, d, rng):
    if d < 1 or d >= n:
        raise ParameterError(f"RR degree must be in [1, n), got {d}")
    if (n * d) % 2 != 0:
        raise ParameterError(f"RR requires n*d even, got n={n} d={d}")
    # pairing model: retry until the matching is simple
    for _ in range(MAX_CONNECTIVITY_ATTEMPTS * 10):
        stubs = np.repeat(np.arange(n), d)
        rng.shuffle(stubs)
        a = stubs[0::2]
        b = stubs[1::2]
        if np.any(a == b):
            continue
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * n + hi
        if len(np.unique(key)) != len(key):
            continue
        return list(zip(lo.tolist(), hi.tolist()))
    raise ParameterError(f"could not realize a simple {d}-regular graph on {n} nodes")


def generate_random_graph(kind: str, n: int, params: dict | None = None,
                          seed: int = 0) -> WeightedGraph:
    """Generate a connected undirected graph with uniform(0,1) edge weights.

    kind is one of er/ba/sbm/ws/rr.  Kind-specific params (with defaults):
      er:  p (0.3)
      ba:  m (2) edges per attached node
      sbm: blocks (4), p_intra (0.5), p_inter (0.05)
      ws:  k (4), beta (0.1)
      rr:  d (4)

    Disconnected draws are rejected and regenerated, up to
    MAX_CONNECTIVITY_ATTEMPTS; persistent failure raises ParameterError.
    """
    kind = kind.lower()
    if kind not in GRAPH_KINDS:
        raise ParameterError(f"unknown graph kind {kind!r}, expected one of {GRAPH_KINDS}")
    if n < 2:
        raise ParameterError(f"need n >= 2 nodes, got {n}")
    params = dict(params or {})
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(MAX_CONNECTIVITY_ATTEMPTS):
        if kind == "er":
            pairs = _er_pairs(n, params.get("p", 0.3), rng)
        elif kind == "ba":
            pairs = _ba_pairs(n, int(params.get("m", 2)), rng)
        elif kind == "sbm":
            pairs = _sbm_pairs(n, int(params.get("blocks", 4)),
                               params.get("p_intra", 0.5),
                               params.get("p_inter", 0.05), rng)
        elif kind == "ws":
            pairs = _ws_pairs(n, int(params.get("k", 4)), params.get("beta", 0.1), rng)
        else:
            pairs = _rr_pairs(n, int(params.get("d", 4)), rng)
        if not pairs:
            continue
        g = _finish_graph(n, pairs, rng)
        if is_connected(g):
            return g
    raise ParameterError(
        f"no connected {kind} graph with n={n} params={params} "
        f"in {MAX_CONNECTIVITY_ATTEMPTS} attempts")


def generate_directed_graph(kind: str, n: int, params: dict | None = None,
                            seed: int = 0) -> WeightedGraph:
    """Directed instance for shortest-path games: an undirected topology
    where each edge becomes two opposite arcs with independent weights.

    Weights are drawn after topology, in canonical edge order, forward arc
    before backward arc.
    """
    base = generate_random_graph(kind, n, params, seed)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    u = np.empty(2 * base.m, dtype=np.int64)
    v = np.empty(2 * base.m, dtype=np.int64)
    u[0::2], v[0::2] = base.u, base.v
    u[1::2], v[1::2] = base.v, base.u
    w = rng.uniform(0.0, 1.0, size=2 * base.m)
    return WeightedGraph(n, u, v, w, directed=True)


# ---------------------------------------------------------------------------
# Euclidean instances
# ---------------------------------------------------------------------------

METRIC_EUCLID = "euclid"
METRIC_ROUNDED = "euclid_round"  # TSPLIB EUC_2D: legs rounded half-up to int


@dataclass
class EuclideanInstance:
    """Cities in the plane.  Distances are derived on demand.

    metric "euclid" is the real-valued L2 distance; "euclid_round" rounds
    each leg half-up to the nearest integer (TSPLIB EUC_2D convention).
    """

    coords: np.ndarray  # float64, shape (n, 2)
    metric: str = METRIC_EUCLID
    depot: int = 0
    name: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ParameterError("coords must have shape (n, 2)")
        if self.metric not in (METRIC_EUCLID, METRIC_ROUNDED):
            raise ParameterError(f"unknown metric {self.metric!r}")
        if not (0 <= self.depot < self.n):
            raise ParameterError(f"depot {self.depot} outside 0..n-1")

    @property
    def n(self) -> int:
        return len(self.coords)

    def distance(self, i: int, j: int) -> float:
        d = math.hypot(self.coords[i, 0] - self.coords[j, 0],
                       self.coords[i, 1] - self.coords[j, 1])
        if self.metric == METRIC_ROUNDED:
            return float(math.floor(d + 0.5))
        return d

    def distance_matrix(self) -> np.ndarray:
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        d = np.sqrt((diff ** 2).sum(axis=2))
        if self.metric == METRIC_ROUNDED:
            d = np.floor(d + 0.5)
        return d


def generate_euclidean(n: int, seed: int = 0) -> EuclideanInstance:
    """n cities drawn uniformly from the unit square, deterministic per seed."""
    if n < 2:
        raise ParameterError(f"need n >= 2 cities, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return EuclideanInstance(coords=rng.uniform(0.0, 1.0, size=(n, 2)))


# ---------------------------------------------------------------------------
# Serialization: line-oriented text, round-trips float64 bit-exactly
# ---------------------------------------------------------------------------


def graph_to_text(g: WeightedGraph) -> str:
    lines = [f"{g.n} {g.m} {int(g.directed)}"]
    for e in range(g.m):
        lines.append(f"{int(g.u[e])} {int(g.v[e])} {g.w[e]:.17g}")
    return "\n".join(lines) + "\n"


def graph_from_text(text: str) -> WeightedGraph:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty graph text")
    head = lines[0].split()
    if len(head) != 3:
        raise FormatError(f"bad graph header: {lines[0]!r}")
    n, m, directed = int(head[0]), int(head[1]), bool(int(head[2]))
    if len(lines) - 1 != m:
        raise FormatError(f"header promises {m} edges, found {len(lines) - 1}")
    u = np.empty(m, dtype=np.int64)
    v = np.empty(m, dtype=np.int64)
    w = np.empty(m, dtype=np.float64)
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != 3:
            raise FormatError(f"bad edge line: {ln!r}")
        u[i], v[i], w[i] = int(parts[0]), int(parts[1]), float(parts[2])
    return WeightedGraph(n, u, v, w, directed=directed)


def instance_to_text(inst: EuclideanInstance) -> str:
    lines = [f"euclidean {inst.n} {inst.metric} {inst.depot}"]
    for x, y in inst.coords:
        lines.append(f"{x:.17g} {y:.17g}")
    return "\n".join(lines) + "\n"


def instance_from_text(text: str) -> EuclideanInstance:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("euclidean"):
        raise FormatError("not a euclidean instance file")
    head = lines[0].split()
    if len(head) != 4:
        raise FormatError(f"bad instance header: {lines[0]!r}")
    n, metric, depot = int(head[1]), head[2], int(head[3])
    if len(lines) - 1 != n:
        raise FormatError(f"header promises {n} cities, found {len(lines) - 1}")
    coords = np.array([[float(p) for p in ln.split()] for ln in lines[1:]])
    return EuclideanInstance(coords=coords, metric=metric, depot=depot)
