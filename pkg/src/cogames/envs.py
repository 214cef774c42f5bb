"""Single-player games over graphs: per-problem state, masking, transition,
reward, and episode rollout.

Problems that select edges (spanning tree, shortest paths) play on the line
graph: actions are dual nodes, i.e. primal edges/arcs.  Problems that
select nodes (tours, routes) play on the metric instance directly.

Validity masking: by default the tree/path games only offer actions that
keep the partial solution extendable to a valid one (cut edges for trees,
arcs into unreached nodes for path trees), so finished episodes are valid
by construction and the reward penalty branch stays cold.  Construct a
game with mask_invalid=False to get the penalty-only variant where any
frontier edge may be chosen and invalid solutions earn a large negative
reward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tensor, no_grad, permute, stack_rows, take_rows,
                       transpose2d)
from .errors import DecodingError, ParameterError, StructureError
from .graphs import (EuclideanInstance, LineGraphMapping, WeightedGraph,
                     is_spanning_tree, line_graph)
from .oracles import RouteSet, route_length, tour_length
from .policy import (AttentionGraph, PolicyParams, attention_graph_from_graph,
                     candidate_logits, complete_attention_graph, decoder_keys,
                     encode, knn_attention_graph)

NEG_LOGIT = -1e30


def default_penalty(n: int) -> float:
    """Penalty for structurally invalid solutions: the node count strictly
    dominates any achievable weight sum (weights are below 1)."""
    return float(n)


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------


def mst_reward(g: WeightedGraph, edge_ids, penalty: float | None = None) -> float:
    """Negative selected weight, minus a penalty unless the selection is a
    spanning tree."""
    ids = np.asarray(sorted(set(int(e) for e in edge_ids)), dtype=np.int64)
    if len(ids) and (ids[0] < 0 or ids[-1] >= g.m):
        raise ParameterError("edge id outside 0..m-1")
    pen = default_penalty(g.n) if penalty is None else penalty
    total = float(g.w[ids].sum()) if len(ids) else 0.0
    indicator = 0.0 if is_spanning_tree(g, ids) else pen
    return -(indicator + total)


def ssp_reward(g: WeightedGraph, source: int, arc_ids,
               penalty: float | None = None) -> float:
    """Negative total path length from `source` to every node, decoding one
    path per destination by walking unique selected in-arcs backwards.

    A destination with no decodable path (no in-arc, ambiguous in-arcs, or
    a cycle) contributes the penalty instead of a path weight.
    """
    if not g.directed:
        raise ParameterError("ssp_reward requires a directed graph")
    ids = sorted(set(int(e) for e in arc_ids))
    if ids and (ids[0] < 0 or ids[-1] >= g.m):
        raise ParameterError("arc id outside 0..m-1")
    pen = default_penalty(g.n) if penalty is None else penalty
    in_arcs = {}
    for e in ids:
        in_arcs.setdefault(int(g.v[e]), []).append(e)
    total = 0.0
    for dest in range(g.n):
        if dest == source:
            continue
        node, weight, hops, ok = dest, 0.0, 0, False
        while hops <= g.n:
            arcs = in_arcs.get(node, ())
            if node == source:
                ok = True
                break
            if len(arcs) != 1:
                break
            e = arcs[0]
            weight += float(g.w[e])
            node = int(g.u[e])
            hops += 1
        total += weight if ok else pen
    return -total


def tsp_reward(inst: EuclideanInstance, perm) -> float:
    """Negative tour length."""
    return -tour_length(inst, perm)


def vrp_reward(inst: EuclideanInstance, routes) -> float:
    """Negative length of the longest route, depot to depot.

    Raises StructureError if any city is missed or covered twice.
    """
    if isinstance(routes, RouteSet):
        routes = routes.routes
    depot = inst.depot
    seen = []
    for route in routes:
        if len(route) < 2 or route[0] != depot or route[-1] != depot:
            raise StructureError("each route must start and end at the depot")
        seen.extend(int(c) for c in route[1:-1])
    expected = sorted(c for c in range(inst.n) if c != depot)
    if sorted(seen) != expected:
        raise StructureError("routes must cover every city exactly once")
    longest = max(route_length(inst, r) for r in routes)
    return -longest


# ---------------------------------------------------------------------------
# Episode state
# ---------------------------------------------------------------------------


@dataclass
class EpisodeState:
    game: object
    t: int = 0
    selected: list = field(default_factory=list)
    mask: np.ndarray = None          # True = forbidden next action
    current: int | None = None
    covered: np.ndarray = None       # touched/reached nodes (edge games)
    visited: np.ndarray = None       # visited cities (tour games)
    routes: list = None              # closed routes so far (VRP)
    route_open: list = None          # cities of the route in progress (VRP)
    vehicle: int = 1                 # 1-based vehicle index (VRP)

    def allowed(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    def digest(self):
        return (self.game.problem, self.t, self.current,
                int((~self.mask).sum()))


def step(state: EpisodeState, action: int) -> EpisodeState:
    """Apply one action; raises DecodingError if the action is masked."""
    if state.mask[action]:
        raise DecodingError(f"action {action} is masked at step {state.t}")
    return state.game.apply(state, int(action))


# ---------------------------------------------------------------------------
# Games
# ---------------------------------------------------------------------------


class MstGame:
    """Select primal edges (as line-graph nodes) to build a spanning tree."""

    problem = "mst"

    def __init__(self, graph: WeightedGraph,
                 mapping: LineGraphMapping | None = None,
                 mask_invalid: bool = True):
        if graph.directed:
            raise ParameterError("spanning-tree game needs an undirected graph")
        self.graph = graph
        self.mapping = mapping if mapping is not None else line_graph(graph)
        self.mask_invalid = mask_invalid
        self.n_actions = graph.m
        self.episode_length = graph.n - 1
        self._attention = None

    def features(self) -> np.ndarray:
        return self.mapping.node_weights[:, None]

    def attention_graph(self) -> AttentionGraph:
        if self._attention is None:
            self._attention = attention_graph_from_graph(self.mapping.dual)
        return self._attention

    def initial_state(self) -> EpisodeState:
        return EpisodeState(game=self,
                            mask=np.zeros(self.n_actions, dtype=bool),
                            covered=np.zeros(self.graph.n, dtype=bool))

    def _mask_from(self, covered: np.ndarray, selected_flags: np.ndarray):
        cu = covered[self.graph.u]
        cv = covered[self.graph.v]
        if self.mask_invalid:
            allowed = cu ^ cv          # cut edges only: tree by construction
        else:
            allowed = (cu | cv) & ~selected_flags   # line-graph frontier
        allowed &= ~selected_flags
        return ~allowed

    def apply(self, state: EpisodeState, action: int) -> EpisodeState:
        covered = state.covered.copy()
        covered[self.graph.u[action]] = True
        covered[self.graph.v[action]] = True
        selected = state.selected + [action]
        flags = np.zeros(self.n_actions, dtype=bool)
        flags[selected] = True
        return EpisodeState(game=self, t=state.t + 1, selected=selected,
                            mask=self._mask_from(covered, flags),
                            current=action, covered=covered)

    def is_terminal(self, state: EpisodeState) -> bool:
        return state.t >= self.episode_length

    def solution(self, state: EpisodeState):
        return list(state.selected)

    def final_reward(self, state: EpisodeState) -> float:
        return mst_reward(self.graph, state.selected)


class SspGame:
    """Select arcs (as line-graph nodes) to build a shortest-path in-tree
    out of a source node."""

    problem = "ssp"

    def __init__(self, graph: WeightedGraph, source: int = 0,
                 mapping: LineGraphMapping | None = None,
                 mask_invalid: bool = True):
        if not graph.directed:
            raise ParameterError("shortest-path game needs a directed graph")
        self.graph = graph
        self.source = source
        self.mapping = mapping if mapping is not None else line_graph(graph)
        self.mask_invalid = mask_invalid
        self.n_actions = graph.m
        self.episode_length = graph.n - 1
        self._attention = None

    def features(self) -> np.ndarray:
        return self.mapping.node_weights[:, None]

    def attention_graph(self) -> AttentionGraph:
        if self._attention is None:
            self._attention = attention_graph_from_graph(self.mapping.dual)
        return self._attention

    def initial_state(self) -> EpisodeState:
        covered = np.zeros(self.graph.n, dtype=bool)
        covered[self.source] = True
        state = EpisodeState(game=self, mask=None, covered=covered)
        state.mask = self._mask_from(covered, np.zeros(self.n_actions, bool),
                                     first=True)
        return state

    def _mask_from(self, covered, selected_flags, first=False):
        if self.mask_invalid:
            allowed = covered[self.graph.u] & ~covered[self.graph.v]
        elif first:
            allowed = np.ones(self.n_actions, dtype=bool)
        else:
            allowed = (covered[self.graph.u] | covered[self.graph.v])
        allowed &= ~selected_flags
        return ~allowed

    def apply(self, state: EpisodeState, action: int) -> EpisodeState:
        covered = state.covered.copy()
        if self.mask_invalid:
            covered[self.graph.v[action]] = True
        else:
            covered[self.graph.u[action]] = True
            covered[self.graph.v[action]] = True
        selected = state.selected + [action]
        flags = np.zeros(self.n_actions, dtype=bool)
        flags[selected] = True
        return EpisodeState(game=self, t=state.t + 1, selected=selected,
                            mask=self._mask_from(covered, flags),
                            current=action, covered=covered)

    def is_terminal(self, state: EpisodeState) -> bool:
        return state.t >= self.episode_length

    def solution(self, state: EpisodeState):
        return list(state.selected)

    def final_reward(self, state: EpisodeState) -> float:
        return ssp_reward(self.graph, self.source, state.selected)


class TspGame:
    """Visit every city once; the first move is pinned to city 0 because
    tour length is rotation invariant."""

    problem = "tsp"

    def __init__(self, inst: EuclideanInstance, neighbor_cap: int | None = None):
        self.inst = inst
        self.neighbor_cap = neighbor_cap
        self.n_actions = inst.n
        self.episode_length = inst.n
        self.start = 0
        self._attention = None
        self._nearest = None  # per-node neighbor ranking, built when capped

    def features(self) -> np.ndarray:
        coords = self.inst.coords
        lo = coords.min(axis=0)
        extent = max(float((coords.max(axis=0) - lo).max()), 1e-12)
        return (coords - lo) / extent

    def attention_graph(self) -> AttentionGraph:
        if self._attention is None:
            cap = self.neighbor_cap
            if cap is not None and self.inst.n > cap + 1:
                self._attention = knn_attention_graph(self.features(), cap)
            else:
                self._attention = complete_attention_graph(self.inst.n)
        return self._attention

    def _neighbor_ranking(self):
        if self._nearest is None:
            d = self.inst.distance_matrix()
            np.fill_diagonal(d, np.inf)
            self._nearest = np.argsort(d, axis=1, kind="stable")
        return self._nearest

    def initial_state(self) -> EpisodeState:
        mask = np.ones(self.n_actions, dtype=bool)
        mask[self.start] = False
        return EpisodeState(game=self, mask=mask,
                            visited=np.zeros(self.n_actions, dtype=bool))

    def _mask_from(self, visited, current):
        cap = self.neighbor_cap
        remaining = int((~visited).sum())
        if cap is None or remaining <= cap:
            return visited.copy()
        # restrict candidates to the cap nearest unvisited cities
        mask = np.ones(self.n_actions, dtype=bool)
        found = 0
        for j in self._neighbor_ranking()[current]:
            if not visited[j]:
                mask[j] = False
                found += 1
                if found == cap:
                    break
        return mask

    def apply(self, state: EpisodeState, action: int) -> EpisodeState:
        visited = state.visited.copy()
        visited[action] = True
        selected = state.selected + [action]
        return EpisodeState(game=self, t=state.t + 1, selected=selected,
                            mask=self._mask_from(visited, action),
                            current=action, visited=visited)

    def is_terminal(self, state: EpisodeState) -> bool:
        return state.t >= self.episode_length

    def solution(self, state: EpisodeState) -> np.ndarray:
        return np.array(state.selected, dtype=np.int64)

    def final_reward(self, state: EpisodeState) -> float:
        return tsp_reward(self.inst, self.solution(state))


class VrpGame:
    """Route M vehicles from a shared depot; selecting the depot closes the
    current route.  The depot cannot be selected twice in a row, and the
    last vehicle must finish the remaining cities."""

    problem = "vrp"

    def __init__(self, inst: EuclideanInstance, vehicles: int):
        if vehicles < 1:
            raise ParameterError("need at least one vehicle")
        self.inst = inst
        self.vehicles = vehicles
        self.n_actions = inst.n
        self.episode_length = None  # dynamic: <= (n - 1) + (M - 1) steps
        self.depot = inst.depot
        self._attention = None

    def features(self) -> np.ndarray:
        coords = self.inst.coords
        lo = coords.min(axis=0)
        extent = max(float((coords.max(axis=0) - lo).max()), 1e-12)
        return (coords - lo) / extent

    def attention_graph(self) -> AttentionGraph:
        if self._attention is None:
            self._attention = complete_attention_graph(self.inst.n)
        return self._attention

    def initial_state(self) -> EpisodeState:
        visited = np.zeros(self.n_actions, dtype=bool)
        visited[self.depot] = True
        mask = visited.copy()  # depot masked: no empty first route
        return EpisodeState(game=self, mask=mask, visited=visited,
                            current=self.depot, routes=[], route_open=[])

    def _mask_from(self, visited, current, vehicle):
        mask = visited.copy()
        mask[self.depot] = (current == self.depot) or (vehicle >= self.vehicles)
        return mask

    def apply(self, state: EpisodeState, action: int) -> EpisodeState:
        visited = state.visited.copy()
        routes = [list(r) for r in state.routes]
        route_open = list(state.route_open)
        vehicle = state.vehicle
        if action == self.depot:
            routes.append([self.depot, *route_open, self.depot])
            route_open = []
            vehicle += 1
        else:
            visited[action] = True
            route_open.append(action)
        return EpisodeState(game=self, t=state.t + 1,
                            selected=state.selected + [action],
                            mask=self._mask_from(visited, action, vehicle),
                            current=action, visited=visited, routes=routes,
                            route_open=route_open, vehicle=vehicle)

    def is_terminal(self, state: EpisodeState) -> bool:
        return bool(state.visited.all())

    def solution(self, state: EpisodeState) -> RouteSet:
        routes = [list(r) for r in state.routes]
        if state.route_open:
            routes.append([self.depot, *state.route_open, self.depot])
        lengths = [route_length(self.inst, r) for r in routes]
        return RouteSet(routes=routes,
                        max_route_length=max(lengths) if lengths else 0.0)

    def final_reward(self, state: EpisodeState) -> float:
        return vrp_reward(self.inst, self.solution(state))


# ---------------------------------------------------------------------------
# Rollout
# ---------------------------------------------------------------------------


@dataclass
class BatchRecord:
    logp_matrix: Tensor  # (T, B)


@dataclass
class Trajectory:
    actions: list
    logps: np.ndarray            # float log-probabilities of taken actions
    reward: float
    digests: list
    logp_tensors: list = None    # per-step scalar tensors (recorded rollouts)
    batch: BatchRecord = None    # shared record for batched rollouts
    col: int = 0
    per_step_rewards: list = None

    def dump(self) -> str:
        """Newline-delimited debug records: step, action, logp, reward."""
        lines = []
        for t, (a, lp) in enumerate(zip(self.actions, self.logps)):
            lines.append(f"{t} {a} {lp:.17g} {self.reward:.17g}")
        return "\n".join(lines) + "\n"


def _pick(probs: np.ndarray, candidates: np.ndarray, mode: str, rng) -> int:
    if mode == "greedy":
        return int(candidates[np.argmax(probs)])
    cum = np.cumsum(probs)
    r = rng.random() * cum[-1]
    return int(candidates[min(np.searchsorted(cum, r), len(candidates) - 1)])


def rollout(game, params: PolicyParams, mode: str = "greedy",
            seed: int | None = None, record: bool = False) -> Trajectory:
    """Play one full episode.

    greedy mode takes the argmax action (ties to the lowest id); sample
    mode draws from the masked distribution using the given seed.  With
    record=True the returned trajectory carries log-probability tensors
    connected to the parameter tape.
    """
    if mode not in ("greedy", "sample"):
        raise ParameterError(f"unknown rollout mode {mode!r}")
    rng = np.random.Generator(np.random.PCG64(0 if seed is None else seed))
    ctx = no_grad() if not record else _NullCtx()
    with ctx:
        emb = encode_game(game, params)
        keys = decoder_keys(emb, params)
        state = game.initial_state()
        actions, logps, tensors, digests = [], [], [], []
        while not game.is_terminal(state):
            cands = state.allowed()
            if len(cands) == 0:
                raise DecodingError(
                    f"no unmasked action at step {state.t} of {game.problem}")
            logits = candidate_logits(emb, keys, state.current, cands, params)
            shifted = logits - float(logits.data.max())
            ex_data = np.exp(shifted.data)
            probs = ex_data / ex_data.sum()
            pos = int(np.flatnonzero(cands == _pick(probs, cands, mode, rng))[0])
            if record:
                logz = shifted.exp().sum().log()
                lp = take_rows(shifted, np.array([pos])).sum() - logz
                tensors.append(lp)
                logps.append(float(lp.data))
            else:
                logps.append(float(np.log(probs[pos])))
            digests.append(state.digest())
            actions.append(int(cands[pos]))
            state = step(state, int(cands[pos]))
        reward = game.final_reward(state)
    return Trajectory(actions=actions, logps=np.array(logps), reward=reward,
                      digests=digests, logp_tensors=tensors if record else None)


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def encode_game(game, params: PolicyParams) -> Tensor:
    return encode(game.features(), game.attention_graph(), params)


def _block_attention(graphs: list) -> AttentionGraph:
    """Disjoint union of equal-sized attention graphs."""
    n = graphs[0].n
    src, dst, starts, counts = [], [], [], []
    edge_off = 0
    for b, g in enumerate(graphs):
        src.append(g.src + b * n)
        dst.append(g.dst + b * n)
        starts.append(g.seg_starts + edge_off)
        counts.append(g.seg_counts)
        edge_off += len(g.src)
    return AttentionGraph(n=n * len(graphs), src=np.concatenate(src),
                          dst=np.concatenate(dst),
                          seg_starts=np.concatenate(starts),
                          seg_counts=np.concatenate(counts),
                          blocks=len(graphs), n_per=n)


def rollout_batch(games: list, params: PolicyParams, rng,
                  mode: str = "sample") -> list:
    """Recorded lockstep rollouts for same-shape games (training path).

    All games must share problem type, action count, and episode length.
    Returns trajectories whose log-probabilities live in one shared (T, B)
    tensor, which reinforce_loss consumes efficiently.
    """
    B = len(games)
    N = games[0].n_actions
    T = games[0].episode_length
    if any(g.n_actions != N or g.episode_length != T for g in games):
        raise ParameterError("rollout_batch needs same-shaped games")
    feats = np.concatenate([g.features() for g in games])
    block = _block_attention([g.attention_graph() for g in games])
    emb = encode(feats, block, params)            # (B*N, k)
    keys = decoder_keys(emb, params)              # (B*N, k)
    k = params.config.hidden_dim
    keys_t = permute(keys.reshape(B, N, k), (0, 2, 1))   # (B, k, N)
    states = [g.initial_state() for g in games]
    step_logps = []
    actions_hist = [[] for _ in range(B)]
    digests = [[] for _ in range(B)]
    offsets = np.arange(B) * N
    for t in range(T):
        allowed = np.zeros((B, N), dtype=bool)
        currents = np.zeros(B, dtype=np.int64)
        for b, s in enumerate(states):
            cands = s.allowed()
            if len(cands) == 0:
                raise DecodingError(f"episode {b} has no unmasked action")
            allowed[b, cands] = True
            currents[b] = -1 if s.current is None else s.current
        if t == 0 and states[0].current is None:
            q_in = emb.reshape(B, N, k).mean(axis=1)          # (B, k)
        else:
            q_in = take_rows(emb, offsets + currents)
        q = q_in @ transpose2d(params.phi1)
        raw = (q.reshape(B, 1, k) @ keys_t).reshape(B, N) * (1.0 / np.sqrt(k))
        logits = raw.tanh() * params.config.clip              # (B, N)
        masked = logits + np.where(allowed, 0.0, NEG_LOGIT)
        shift = masked.data.max(axis=1, keepdims=True)
        shifted = masked - shift
        ex = shifted.exp()
        z = ex.sum(axis=1)                                    # (B,)
        probs = ex.data / z.data[:, None]
        chosen = np.zeros(B, dtype=np.int64)
        for b in range(B):
            cands = np.flatnonzero(allowed[b])
            chosen[b] = _pick(probs[b, cands], cands, mode, rng)
            digests[b].append(states[b].digest())
            actions_hist[b].append(int(chosen[b]))
        flat = take_rows(shifted.reshape(B * N, 1),
                         offsets + chosen).reshape(B)
        logp_t = flat - z.log()                               # (B,)
        step_logps.append(logp_t)
        states = [step(s, int(a)) for s, a in zip(states, chosen)]
    logp_matrix = stack_rows(step_logps)                      # (T, B)
    record = BatchRecord(logp_matrix=logp_matrix)
    out = []
    for b, (g, s) in enumerate(zip(games, states)):
        out.append(Trajectory(actions=actions_hist[b],
                              logps=logp_matrix.data[:, b].copy(),
                              reward=g.final_reward(s),
                              digests=digests[b], batch=record, col=b))
    return out
