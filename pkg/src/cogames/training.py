"""Policy-gradient training: batched sampled rollouts, baseline, the
REINFORCE loss, Adam with separate encoder/decoder learning rates,
stagnation-driven learning-rate reduction, metrics CSV, checkpointing.

The loss is the advantage-weighted negative log-likelihood of the taken
actions,

    L = mean over episodes of sum_t (b - r) * log p(a_t),

so gradient descent on L increases the probability of actions from
episodes that beat the baseline.  The terminal reward is broadcast to all
steps of its episode.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import numpy as np

from .autodiff import Tensor, no_grad, zero_grads
from .errors import FormatError, ParameterError, TrainingError
from .envs import (MstGame, SspGame, TspGame, rollout, rollout_batch)
from .graphs import (generate_directed_graph, generate_euclidean,
                     generate_random_graph)
from .oracles import dijkstra, held_karp, prim_mst
from .policy import PolicyConfig, PolicyParams, init_params, save_params

PROBLEMS = ("mst", "ssp", "tsp")

METRICS_HEADER = "epoch,mean_reward,mean_gap,loss,lr_enc,lr_dec"


@dataclass
class TrainConfig:
    problem: str = "mst"
    graph_kind: str = "rr"          # random-graph family (mst/ssp)
    n: int = 20                     # nodes (mst/ssp) or cities (tsp)
    graph_params: dict = field(default_factory=dict)
    batch_size: int = 32
    batches_per_epoch: int = 25
    epochs: int = 20
    lr_enc: float = 1e-3
    lr_dec: float = 1e-4
    lr_factor: float = 10.0         # stagnation divides both rates by this
    patience: int = 5
    min_rel_improve: float = 1e-4
    baseline: str = "ema"           # or "greedy" (self-rollout baseline)
    ema_decay: float = 0.95
    grad_clip: float = 1.0
    seed: int = 0
    val_size: int = 50
    checkpoint_every: int = 0       # epochs; 0 = only best/final
    hidden_dim: int = 128
    heads: int = 8
    layers: int = 3
    clip: float = 10.0
    mask_invalid: bool = True
    source: int = 0                 # ssp source node
    out_dir: str = ""

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ParameterError(f"problem must be one of {PROBLEMS}")
        if self.batch_size < 1:
            raise ParameterError("batch size must be >= 1")
        if self.lr_enc <= 0 or self.lr_dec <= 0:
            raise ParameterError("learning rates must be positive")
        if self.baseline not in ("ema", "greedy"):
            raise ParameterError("baseline must be 'ema' or 'greedy'")


@dataclass
class BaselineState:
    kind: str
    value: float | None = None           # moving average
    per_instance: np.ndarray | None = None   # greedy self-rollout values


# ---------------------------------------------------------------------------
# Config file round trip (plain key = value lines)
# ---------------------------------------------------------------------------


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.name == "graph_params":
            val = ";".join(f"{k}={v}" for k, v in sorted(val.items()))
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> TrainConfig:
    cfg = TrainConfig()
    known = {f.name: f for f in fields(cfg)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise FormatError(f"config line {lineno}: unknown key {key!r}")
        if key == "graph_params":
            params = {}
            for part in filter(None, (p.strip() for p in val.split(";"))):
                k, v = (s.strip() for s in part.split("=", 1))
                params[k] = float(v) if ("." in v or "e" in v.lower()) else int(v)
            setattr(cfg, key, params)
            continue
        typ = known[key].type
        if typ == "bool" or isinstance(getattr(cfg, key), bool):
            setattr(cfg, key, val.lower() in ("1", "true", "yes"))
        elif isinstance(getattr(cfg, key), int):
            setattr(cfg, key, int(val))
        elif isinstance(getattr(cfg, key), float):
            setattr(cfg, key, float(val))
        else:
            setattr(cfg, key, val)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def reinforce_loss(trajectories, baseline: BaselineState) -> Tensor:
    """Advantage-weighted negative log-likelihood of the taken actions,
    averaged over the batch."""
    if not trajectories:
        raise ParameterError("empty trajectory batch")
    rewards = np.array([t.reward for t in trajectories])
    if baseline.per_instance is not None:
        base = np.asarray(baseline.per_instance, dtype=np.float64)
    else:
        base = np.full(len(trajectories), float(baseline.value or 0.0))
    coef = base - rewards  # minimizing pushes up log p of above-baseline runs
    shared = trajectories[0].batch
    if shared is not None and all(t.batch is shared for t in trajectories) \
            and len(trajectories) == shared.logp_matrix.shape[1]:
        cols = np.array([t.col for t in trajectories])
        if np.array_equal(cols, np.arange(len(trajectories))):
            total = (shared.logp_matrix * coef[None, :]).sum()
            return total * (1.0 / len(trajectories))
    pieces = None
    for t, c in zip(trajectories, coef):
        if t.logp_tensors is None:
            raise ParameterError("trajectory was not recorded on the tape")
        ep = t.logp_tensors[0]
        for lp in t.logp_tensors[1:]:
            ep = ep + lp
        term = ep * float(c)
        pieces = term if pieces is None else pieces + term
    return pieces * (1.0 / len(trajectories))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: PolicyParams, opt: AdamState, lr_enc: float,
                   lr_dec: float, grad_clip: float = 1.0,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8):
    """One Adam update with bias correction, per-group learning rates, and
    global gradient-norm clipping.  Parameters with no gradient are left
    untouched (their moments still decay correctness-neutrally on use)."""
    named = params.parameters()
    grads = {}
    sq = 0.0
    for name, tensor, _ in named:
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name}")
        grads[name] = g
        sq += float((g * g).sum())
    norm = np.sqrt(sq)
    scale = 1.0 if norm <= grad_clip or norm == 0.0 else grad_clip / norm
    opt.step += 1
    t = opt.step
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    for name, tensor, group in named:
        g = grads[name] * scale
        if name not in opt.m:
            opt.m[name] = np.zeros_like(tensor.data)
            opt.v[name] = np.zeros_like(tensor.data)
        opt.m[name] = beta1 * opt.m[name] + (1 - beta1) * g
        opt.v[name] = beta2 * opt.v[name] + (1 - beta2) * g * g
        mhat = opt.m[name] / corr1
        vhat = opt.v[name] / corr2
        lr = lr_enc if group == "encoder" else lr_dec
        tensor.data = tensor.data - lr * mhat / (np.sqrt(vhat) + eps)
    params.check_finite()
    return params


# ---------------------------------------------------------------------------
# Instance sampling and evaluation
# ---------------------------------------------------------------------------


def _spawn_seeds(seed: int, count: int, tag: int):
    return [int(s.generate_state(1)[0])
            for s in np.random.SeedSequence([seed, tag]).spawn(count)]


def make_game(cfg: TrainConfig, instance_seed: int, with_oracle: bool = False):
    """Build one game; with_oracle=True also returns the exact optimum for
    gap accounting (skipped for training instances, where it is unused)."""
    if cfg.problem == "mst":
        g = generate_random_graph(cfg.graph_kind, cfg.n, cfg.graph_params,
                                  instance_seed)
        game = MstGame(g, mask_invalid=cfg.mask_invalid)
        return (game, prim_mst(g).total_weight) if with_oracle else game
    if cfg.problem == "ssp":
        g = generate_directed_graph(cfg.graph_kind, cfg.n, cfg.graph_params,
                                    instance_seed)
        game = SspGame(g, source=cfg.source, mask_invalid=cfg.mask_invalid)
        if not with_oracle:
            return game
        return game, float(dijkstra(g, cfg.source).dist.sum())
    inst = generate_euclidean(cfg.n, instance_seed)
    game = TspGame(inst)
    if not with_oracle:
        return game
    opt = held_karp(inst).length if cfg.n <= 16 else float("nan")
    return game, opt


def policy_config_for(cfg: TrainConfig) -> PolicyConfig:
    input_dim = 2 if cfg.problem in ("tsp", "vrp") else 1
    return PolicyConfig(input_dim=input_dim, hidden_dim=cfg.hidden_dim,
                        heads=cfg.heads, layers=cfg.layers, clip=cfg.clip)


@dataclass
class GapStats:
    gaps: np.ndarray
    mean: float
    median: float
    q25: float
    q75: float

    @staticmethod
    def from_gaps(gaps) -> "GapStats":
        gaps = np.asarray(gaps, dtype=np.float64)
        return GapStats(gaps=gaps, mean=float(gaps.mean()),
                        median=float(np.median(gaps)),
                        q25=float(np.quantile(gaps, 0.25)),
                        q75=float(np.quantile(gaps, 0.75)))


def evaluate(params: PolicyParams, games_with_opts) -> GapStats:
    """Greedy-rollout optimality gaps: method cost / oracle cost (>= 1 up
    to float error when the oracle is exact)."""
    gaps = []
    for game, opt in games_with_opts:
        if not np.isfinite(opt):
            raise ParameterError("instance lacks an exact reference optimum")
        traj = rollout(game, params, mode="greedy")
        gaps.append(-traj.reward / opt)
    return GapStats.from_gaps(gaps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: PolicyParams
    optimizer: AdamState
    history: list                  # metric CSV rows (without header)
    best_gap: float
    best_epoch: int
    metrics_path: str = ""
    checkpoint_path: str = ""


def train(cfg: TrainConfig, log=None) -> TrainResult:
    """Run the full training loop; deterministic per cfg.seed.

    Writes metrics.csv, best.ckpt and last.ckpt under cfg.out_dir when set;
    returns the best parameters (by validation gap) in memory either way.
    """
    cfg.validate()
    pol_cfg = policy_config_for(cfg)
    params = init_params(pol_cfg, seed=_spawn_seeds(cfg.seed, 1, 0)[0])
    opt = AdamState()
    sample_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
    val_games = [make_game(cfg, s, with_oracle=True)
                 for s in _spawn_seeds(cfg.seed, cfg.val_size, 2)]
    train_seeds = iter(_spawn_seeds(
        cfg.seed, cfg.epochs * cfg.batches_per_epoch * cfg.batch_size, 3))
    baseline = BaselineState(kind=cfg.baseline)
    lr_enc, lr_dec = cfg.lr_enc, cfg.lr_dec
    history = []
    best_gap, best_epoch, best_blob = np.inf, -1, None
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_rewards = []
        epoch_loss = 0.0
        for _ in range(cfg.batches_per_epoch):
            games = [make_game(cfg, next(train_seeds))
                     for _ in range(cfg.batch_size)]
            trajs = rollout_batch(games, params, sample_rng, mode="sample")
            rewards = np.array([t.reward for t in trajs])
            if cfg.baseline == "greedy":
                with no_grad():
                    base = [rollout(g, params, mode="greedy").reward
                            for g in games]
                batch_baseline = BaselineState("greedy",
                                               per_instance=np.array(base))
            else:
                if baseline.value is None:
                    baseline.value = float(rewards.mean())
                batch_baseline = BaselineState("ema", value=baseline.value)
            loss = reinforce_loss(trajs, batch_baseline)
            zero_grads(params.tensors())
            loss.backward()
            optimizer_step(params, opt, lr_enc, lr_dec, cfg.grad_clip)
            if cfg.baseline == "ema":
                baseline.value = (cfg.ema_decay * baseline.value
                                  + (1 - cfg.ema_decay) * float(rewards.mean()))
            epoch_rewards.extend(rewards.tolist())
            epoch_loss += float(loss.data)
        stats = evaluate(params, val_games)
        mean_reward = float(np.mean(epoch_rewards))
        mean_loss = epoch_loss / cfg.batches_per_epoch
        row = (f"{epoch},{mean_reward!r},{stats.mean!r},{mean_loss!r},"
               f"{lr_enc!r},{lr_dec!r}")
        history.append(row)
        if log:
            log(row)
        if stats.mean < best_gap * (1.0 - cfg.min_rel_improve):
            best_gap, best_epoch, stale = stats.mean, epoch, 0
            best_blob = save_params(params, opt, config_to_text(cfg))
        else:
            stale += 1
            if stale >= cfg.patience:
                lr_enc /= cfg.lr_factor
                lr_dec /= cfg.lr_factor
                stale = 0
        if cfg.out_dir and cfg.checkpoint_every \
                and epoch % cfg.checkpoint_every == 0:
            _write_file(os.path.join(cfg.out_dir, f"epoch{epoch:04d}.ckpt"),
                        save_params(params, opt, config_to_text(cfg)))
    if best_blob is None:
        best_blob = save_params(params, opt, config_to_text(cfg))
        best_gap, best_epoch = evaluate(params, val_games).mean, cfg.epochs
    metrics_path = ckpt_path = ""
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
        _write_text_atomic(metrics_path,
                           "\n".join([METRICS_HEADER, *history]) + "\n")
        ckpt_path = os.path.join(cfg.out_dir, "best.ckpt")
        _write_file(ckpt_path, best_blob)
        _write_file(os.path.join(cfg.out_dir, "last.ckpt"),
                    save_params(params, opt, config_to_text(cfg)))
    from .policy import load_params
    best_params, best_opt, _ = load_params(best_blob)
    return TrainResult(params=best_params, optimizer=best_opt,
                       history=history, best_gap=best_gap,
                       best_epoch=best_epoch, metrics_path=metrics_path,
                       checkpoint_path=ckpt_path)


def _write_file(path: str, blob: bytes):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _write_text_atomic(path: str, text: str):
    _write_file(path, text.encode("utf-8"))
