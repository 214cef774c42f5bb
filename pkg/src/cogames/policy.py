"""The learnable policy: a multi-head graph-attention encoder, a
tanh-clipped attention decoder, and a versioned binary checkpoint format.

The encoder runs once per graph per episode and produces per-node
embeddings whose parameter count is independent of graph size.  The
decoder turns (embeddings, current node, candidate set) into a masked
action distribution.

Attention normalization includes the self term (softmax over {i} union
N(i)); this is implemented by adding one self-loop per node to the
attention edge list.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tensor, no_grad, permute, repeat_rows, segment_sum,
                       take_rows, transpose2d)
from .errors import DecodingError, FormatError, ShapeError
from .graphs import WeightedGraph

CHECKPOINT_MAGIC = b"COGAMES\x00"
CHECKPOINT_VERSION = 1

NEG_INF_LOGIT = -1e30


@dataclass
class PolicyConfig:
    input_dim: int = 2          # 2 for city coordinates, 1 for edge weights
    hidden_dim: int = 128
    layers: int = 3
    heads: int = 8
    clip: float = 10.0          # decoder tanh clipping constant
    leaky_slope: float = 0.2
    ln_eps: float = 1e-5


@dataclass
class LayerParams:
    theta: Tensor      # (d_in, heads * d_h) packed per-head weight matrices
    att_dst: Tensor    # (heads, d_h) attention vector half applied to node i
    att_src: Tensor    # (heads, d_h) attention vector half applied to neighbor j
    bias: Tensor       # (d_h,) post-aggregation bias
    ln_scale: Tensor   # (d_h,)
    ln_shift: Tensor   # (d_h,)


@dataclass
class PolicyParams:
    config: PolicyConfig
    layers: list
    phi1: Tensor       # (d_h, d_h) decoder query projection
    phi2: Tensor       # (d_h, d_h) decoder key projection

    def parameters(self):
        """(name, tensor, group) triples in the declared checkpoint order."""
        out = []
        for i, lay in enumerate(self.layers):
            out.append((f"layer{i}.theta", lay.theta, "encoder"))
            out.append((f"layer{i}.att_dst", lay.att_dst, "encoder"))
            out.append((f"layer{i}.att_src", lay.att_src, "encoder"))
            out.append((f"layer{i}.bias", lay.bias, "encoder"))
            out.append((f"layer{i}.ln_scale", lay.ln_scale, "encoder"))
            out.append((f"layer{i}.ln_shift", lay.ln_shift, "encoder"))
        out.append(("phi1", self.phi1, "decoder"))
        out.append(("phi2", self.phi2, "decoder"))
        return out

    def tensors(self):
        return [t for _, t, _ in self.parameters()]

    def check_finite(self):
        for name, t, _ in self.parameters():
            if not np.isfinite(t.data).all():
                raise ShapeError(f"parameter {name} contains non-finite values")

    def shape_audit(self):
        cfg = self.config
        d_in = cfg.input_dim
        for i, lay in enumerate(self.layers):
            expect = (d_in, cfg.heads * cfg.hidden_dim)
            if lay.theta.shape != expect:
                raise ShapeError(f"layer {i} theta shape {lay.theta.shape}, "
                                 f"expected {expect}")
            if lay.att_dst.shape != (cfg.heads, cfg.hidden_dim):
                raise ShapeError(f"layer {i} att_dst shape {lay.att_dst.shape}")
            if lay.att_src.shape != (cfg.heads, cfg.hidden_dim):
                raise ShapeError(f"layer {i} att_src shape {lay.att_src.shape}")
            d_in = cfg.hidden_dim
        if self.phi1.shape != (cfg.hidden_dim, cfg.hidden_dim):
            raise ShapeError(f"phi1 shape {self.phi1.shape}")
        if self.phi2.shape != (cfg.hidden_dim, cfg.hidden_dim):
            raise ShapeError(f"phi2 shape {self.phi2.shape}")


def init_params(config: PolicyConfig, seed: int = 0) -> PolicyParams:
    """Glorot-uniform initialization, deterministic per seed."""
    rng = np.random.Generator(np.random.PCG64(seed))

    def glorot(shape, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-lim, lim, size=shape), requires_grad=True)

    layers = []
    d_in = config.input_dim
    k = config.hidden_dim
    for _ in range(config.layers):
        layers.append(LayerParams(
            theta=glorot((d_in, config.heads * k), d_in, k),
            att_dst=glorot((config.heads, k), k, 1),
            att_src=glorot((config.heads, k), k, 1),
            bias=Tensor(rng.uniform(-0.5, 0.5, size=k), requires_grad=True),
            ln_scale=Tensor(np.ones(k), requires_grad=True),
            ln_shift=Tensor(np.zeros(k), requires_grad=True),
        ))
        d_in = k
    return PolicyParams(
        config=config,
        layers=layers,
        phi1=glorot((k, k), k, k),
        phi2=glorot((k, k), k, k),
    )


# ---------------------------------------------------------------------------
# Attention graph: preprocessed edge lists for the encoder
# ---------------------------------------------------------------------------


# Above this many nodes per graph the encoder switches from dense per-graph
# attention tensors to gather/scatter over the edge list.
DENSE_MAX_NODES = 128


@dataclass
class AttentionGraph:
    """Directed attention edges (src -> dst) with one self-loop per dst,
    sorted by dst so per-node softmax segments are contiguous.  A disjoint
    union of equal-sized blocks keeps blocks/n_per for the dense path."""
    n: int
    src: np.ndarray
    dst: np.ndarray
    seg_starts: np.ndarray  # first edge index of each dst segment
    seg_counts: np.ndarray
    blocks: int = 1
    n_per: int = 0
    _dense: np.ndarray = None

    def __post_init__(self):
        if self.n_per == 0:
            self.n_per = self.n

    def dense_mask(self) -> np.ndarray:
        """(blocks, n_per, n_per) bool; entry [b, i, j] allows node i of
        block b to attend to node j."""
        if self._dense is None:
            mask = np.zeros((self.blocks, self.n_per, self.n_per), dtype=bool)
            b = self.dst // self.n_per
            mask[b, self.dst % self.n_per, self.src % self.n_per] = True
            self._dense = mask
        return self._dense


def build_attention_graph(n: int, pairs_src, pairs_dst) -> AttentionGraph:
    """pairs are directed neighbor relations (j -> i means j in N(i));
    self-loops are added here."""
    src = np.concatenate([np.asarray(pairs_src, dtype=np.int64), np.arange(n)])
    dst = np.concatenate([np.asarray(pairs_dst, dtype=np.int64), np.arange(n)])
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    seg_counts = np.bincount(dst, minlength=n)
    seg_starts = np.concatenate([[0], np.cumsum(seg_counts)[:-1]])
    return AttentionGraph(n=n, src=src, dst=dst,
                          seg_starts=seg_starts.astype(np.int64),
                          seg_counts=seg_counts.astype(np.int64))


def attention_graph_from_graph(g: WeightedGraph) -> AttentionGraph:
    """Attention neighborhoods from explicit graph structure (both
    directions of every edge)."""
    src = np.concatenate([g.u, g.v])
    dst = np.concatenate([g.v, g.u])
    return build_attention_graph(g.n, src, dst)


def knn_attention_graph(coords: np.ndarray, k: int) -> AttentionGraph:
    """Symmetrized k-nearest-neighbor attention structure for metric
    instances too large for complete attention."""
    n = len(coords)
    k = min(k, n - 1)
    diff = coords[:, None, :] - coords[None, :, :]
    d = (diff ** 2).sum(axis=2)
    np.fill_diagonal(d, np.inf)
    nbr = np.argpartition(d, k - 1, axis=1)[:, :k]
    src = []
    dst = []
    for i in range(n):
        for j in nbr[i]:
            src.append(j)
            dst.append(i)
            src.append(i)
            dst.append(j)
    pairs = sorted(set(zip(src, dst)))
    return build_attention_graph(n, [p[0] for p in pairs], [p[1] for p in pairs])


def complete_attention_graph(n: int) -> AttentionGraph:
    idx = np.arange(n)
    src = np.concatenate([np.delete(idx, i) for i in range(n)])
    dst = np.repeat(idx, n - 1)
    return build_attention_graph(n, src, dst)


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


def gat_layer(x: Tensor, graph: AttentionGraph, lay: LayerParams,
              config: PolicyConfig, normalize: bool = True) -> Tensor:
    """One graph-attention layer.

    x: (n, d_in) node features.  Returns (n, d_h).  With normalize=False
    this is the bare attention update (head-averaged); the full layer adds
    the projected input and a bias before layer norm and ReLU, which keeps
    per-node information from washing out under aggregation.  Small graphs
    take a dense per-block attention path; large ones use gather/scatter
    over the edge list.  Both compute softmax over {i} union N(i).
    """
    n, d_in = x.shape
    if d_in != lay.theta.shape[0]:
        raise ShapeError(f"feature dim {d_in} does not match theta "
                         f"{lay.theta.shape}")
    if graph.n_per <= DENSE_MAX_NODES:
        out, proj = _gat_attend_dense(x, graph, lay, config)
    else:
        out, proj = _gat_attend_sparse(x, graph, lay, config)
    if not normalize:
        return out
    pre = out + proj + lay.bias
    mu = pre.mean(axis=1, keepdims=True)
    centered = pre - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    normed = centered / (var + config.ln_eps).sqrt()
    return (normed * lay.ln_scale + lay.ln_shift).relu()


def _gat_attend_sparse(x: Tensor, graph: AttentionGraph, lay: LayerParams,
                       config: PolicyConfig):
    n = x.shape[0]
    heads, k = lay.att_dst.shape
    h = (x @ lay.theta).reshape(n, heads, k)
    score_dst = (h * lay.att_dst).sum(axis=2)   # (n, heads)
    score_src = (h * lay.att_src).sum(axis=2)
    e = (take_rows(score_dst, graph.dst) + take_rows(score_src, graph.src))
    e = e.leaky_relu(config.leaky_slope)        # (E, heads)
    # numerically safe softmax per dst segment; the max shift is constant
    seg_max = np.maximum.reduceat(e.data, graph.seg_starts, axis=0)
    shift = np.repeat(seg_max, graph.seg_counts, axis=0)
    ex = (e - shift).exp()
    denom = repeat_rows(segment_sum(ex, graph.seg_starts), graph.seg_counts)
    alpha = ex / denom                          # (E, heads)
    msg = take_rows(h, graph.src) * alpha.reshape(len(graph.src), heads, 1)
    agg = segment_sum(msg, graph.seg_starts)    # (n, heads, k)
    return agg.mean(axis=1), h.mean(axis=1)


def _gat_attend_dense(x: Tensor, graph: AttentionGraph, lay: LayerParams,
                      config: PolicyConfig):
    blocks, n_per = graph.blocks, graph.n_per
    heads, k = lay.att_dst.shape
    h = (x @ lay.theta).reshape(blocks, n_per, heads, k)
    proj = h.mean(axis=2).reshape(blocks * n_per, k)
    h = permute(h, (0, 2, 1, 3))                        # (B, H, N, k)
    score_dst = (h * lay.att_dst.reshape(1, heads, 1, k)).sum(axis=3)
    score_src = (h * lay.att_src.reshape(1, heads, 1, k)).sum(axis=3)
    e = (score_dst.reshape(blocks, heads, n_per, 1)
         + score_src.reshape(blocks, heads, 1, n_per))
    e = e.leaky_relu(config.leaky_slope)                # (B, H, N, N)
    gate = np.where(graph.dense_mask()[:, None, :, :], 0.0, NEG_INF_LOGIT)
    e = e + gate
    shift = e.data.max(axis=3, keepdims=True)
    ex = (e - shift).exp()                              # exact 0 off-mask
    alpha = ex / ex.sum(axis=3, keepdims=True)
    out = alpha @ h                                     # (B, H, N, k)
    out = permute(out, (0, 2, 1, 3)).mean(axis=2)       # heads averaged
    return out.reshape(blocks * n_per, k), proj


def encode(features: np.ndarray, graph: AttentionGraph,
           params: PolicyParams) -> Tensor:
    """Stack the configured attention layers; run once per graph per episode."""
    if features.shape[0] != graph.n:
        raise ShapeError(f"{features.shape[0]} feature rows for {graph.n} nodes")
    if features.shape[1] != params.config.input_dim:
        raise ShapeError(f"feature dim {features.shape[1]}, policy expects "
                         f"{params.config.input_dim}")
    x = Tensor(np.asarray(features, dtype=np.float64))
    for lay in params.layers:
        x = gat_layer(x, graph, lay, params.config)
    return x


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------


@dataclass
class ActionDistribution:
    probs: np.ndarray         # (n,) sums to 1, exactly 0 on masked entries
    mask: np.ndarray          # (n,) bool, True = forbidden

    def __post_init__(self):
        if self.probs.shape != self.mask.shape:
            raise ShapeError("probs and mask must have equal shape")


def decoder_keys(embeddings: Tensor, params: PolicyParams) -> Tensor:
    """Phi2-projected embeddings; computed once per episode."""
    return embeddings @ transpose2d(params.phi2)


def candidate_logits(embeddings: Tensor, keys: Tensor, current: int | None,
                     candidates: np.ndarray, params: PolicyParams) -> Tensor:
    """Clipped attention logits over a candidate set.

    current=None uses the mean embedding as the query source (episode start
    for edge-selection games).
    """
    k = params.config.hidden_dim
    if current is None:
        q_in = embeddings.mean(axis=0, keepdims=True)
    else:
        q_in = take_rows(embeddings, np.array([current]))
    q = q_in @ transpose2d(params.phi1)              # (1, k)
    cand_keys = take_rows(keys, candidates)          # (C, k)
    raw = (cand_keys @ q.reshape(k, 1)).reshape(-1) * (1.0 / np.sqrt(k))
    return raw.tanh() * params.config.clip


def decode_step(embeddings: Tensor, current: int | None, mask: np.ndarray,
                params: PolicyParams, keys: Tensor | None = None,
                candidates: np.ndarray | None = None) -> ActionDistribution:
    """Masked action distribution for one step.

    mask[i] True forbids i.  candidates restricts the support further (for
    sparse games and capped metric decoding); it defaults to all unmasked
    nodes.  Masked entries get probability exactly 0.
    """
    n = embeddings.shape[0]
    if mask.shape != (n,):
        raise ShapeError(f"mask shape {mask.shape} for {n} nodes")
    if candidates is None:
        candidates = np.flatnonzero(~mask)
    else:
        candidates = np.asarray(candidates, dtype=np.int64)
        candidates = candidates[~mask[candidates]]
    if len(candidates) == 0:
        raise DecodingError("all candidate actions are masked")
    if keys is None:
        keys = decoder_keys(embeddings, params)
    with no_grad():
        logits = candidate_logits(embeddings, keys, current, candidates, params)
    x = logits.data - logits.data.max()
    ex = np.exp(x)
    probs = np.zeros(n)
    probs[candidates] = ex / ex.sum()
    return ActionDistribution(probs=probs, mask=mask.copy())


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _write_array(buf, arr: np.ndarray):
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    buf.write(struct.pack("<I", len(arr.shape)))
    for s in arr.shape:
        buf.write(struct.pack("<Q", s))
    buf.write(data)


def _read_array(buf, expect_shape=None) -> np.ndarray:
    raw = buf.read(4)
    if len(raw) < 4:
        raise FormatError("checkpoint truncated (array header)")
    ndim, = struct.unpack("<I", raw)
    if ndim > 4:
        raise FormatError(f"implausible array rank {ndim}")
    shape = []
    for _ in range(ndim):
        raw = buf.read(8)
        if len(raw) < 8:
            raise FormatError("checkpoint truncated (array shape)")
        shape.append(struct.unpack("<Q", raw)[0])
    shape = tuple(shape)
    if expect_shape is not None and shape != tuple(expect_shape):
        raise FormatError(f"array shape {shape}, expected {tuple(expect_shape)}")
    count = int(np.prod(shape)) if shape else 1
    data = buf.read(8 * count)
    if len(data) < 8 * count:
        raise FormatError("checkpoint truncated (array data)")
    return np.frombuffer(data, dtype="<f8").reshape(shape).copy()


def save_params(params: PolicyParams, optimizer_state=None,
                extra_text: str = "") -> bytes:
    """Versioned binary checkpoint: magic, version, dimension header,
    embedded config text, then every array as little-endian float64 in
    declared order, then optional optimizer state."""
    cfg = params.config
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<IIII", cfg.input_dim, cfg.hidden_dim,
                          cfg.layers, cfg.heads))
    buf.write(struct.pack("<ddd", cfg.clip, cfg.leaky_slope, cfg.ln_eps))
    blob = extra_text.encode("utf-8")
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for _, tensor, _ in params.parameters():
        _write_array(buf, tensor.data)
    if optimizer_state is None:
        buf.write(struct.pack("<I", 0))
    else:
        buf.write(struct.pack("<I", 1))
        buf.write(struct.pack("<Q", optimizer_state.step))
        for name, _, _ in params.parameters():
            _write_array(buf, optimizer_state.m[name])
            _write_array(buf, optimizer_state.v[name])
    return buf.getvalue()


def load_params(data: bytes):
    """Inverse of save_params.  Returns (params, optimizer_state_or_None,
    extra_text).  Bit-exact round trip."""
    from .training import AdamState  # local import to avoid a module cycle

    buf = io.BytesIO(data)
    magic = buf.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise FormatError("not a policy checkpoint (bad magic)")
    raw = buf.read(4)
    if len(raw) < 4:
        raise FormatError("checkpoint truncated (version)")
    version, = struct.unpack("<I", raw)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    header = buf.read(16 + 24 + 8)
    if len(header) < 48:
        raise FormatError("checkpoint truncated (header)")
    d_in, d_h, n_layers, heads = struct.unpack("<IIII", header[:16])
    clip, slope, eps = struct.unpack("<ddd", header[16:40])
    blob_len, = struct.unpack("<Q", header[40:48])
    blob = buf.read(blob_len)
    if len(blob) < blob_len:
        raise FormatError("checkpoint truncated (config text)")
    cfg = PolicyConfig(input_dim=d_in, hidden_dim=d_h, layers=n_layers,
                       heads=heads, clip=clip, leaky_slope=slope, ln_eps=eps)
    layers = []
    cur = d_in
    for _ in range(n_layers):
        layers.append(LayerParams(
            theta=Tensor(_read_array(buf, (cur, heads * d_h)), requires_grad=True),
            att_dst=Tensor(_read_array(buf, (heads, d_h)), requires_grad=True),
            att_src=Tensor(_read_array(buf, (heads, d_h)), requires_grad=True),
            bias=Tensor(_read_array(buf, (d_h,)), requires_grad=True),
            ln_scale=Tensor(_read_array(buf, (d_h,)), requires_grad=True),
            ln_shift=Tensor(_read_array(buf, (d_h,)), requires_grad=True),
        ))
        cur = d_h
    params = PolicyParams(
        config=cfg, layers=layers,
        phi1=Tensor(_read_array(buf, (d_h, d_h)), requires_grad=True),
        phi2=Tensor(_read_array(buf, (d_h, d_h)), requires_grad=True),
    )
    raw = buf.read(4)
    if len(raw) < 4:
        raise FormatError("checkpoint truncated (optimizer flag)")
    has_opt, = struct.unpack("<I", raw)
    opt = None
    if has_opt:
        raw = buf.read(8)
        if len(raw) < 8:
            raise FormatError("checkpoint truncated (optimizer step)")
        step, = struct.unpack("<Q", raw)
        m, v = {}, {}
        for name, tensor, _ in params.parameters():
            m[name] = _read_array(buf, tensor.data.shape)
            v[name] = _read_array(buf, tensor.data.shape)
        opt = AdamState(step=step, m=m, v=v)
    return params, opt, blob.decode("utf-8")
