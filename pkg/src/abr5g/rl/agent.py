"""Rollouts, advantage actor-critic updates, training loop and the
evaluation-time policy wrapper.

Workers step their simulator sessions in lockstep so one batched forward
pass serves every worker; gradients from all workers are summed and applied
once per epoch, which keeps training bit-reproducible for a fixed seed.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..abr import Policy
from ..errors import NoData, NumericalFault
from ..qoe import DEFAULT_LADDER, BitrateLadder, SessionRecord, get_metric, session_qoe
from ..simulator import Observation, SimConfig, StreamSession, download_chunk, observe
from ..traces import ThroughputTrace
from .checkpoint import Checkpoint, load_checkpoint, read_header, save_checkpoint
from .network import Bundle, PolicyNetwork, log_softmax, softmax, stack_bundles

log = logging.getLogger(__name__)

THROUGHPUT_SCALE_KBPS = 10_000.0
DOWNLOAD_TIME_SCALE_S = 10.0
ORIGINAL_SIM = SimConfig(buffer_capacity_s=60.0, pause_on_full_ms=500)


@dataclass(frozen=True)
class TrainConfig:
    actor_lr: float = 5e-5
    critic_lr: float = 1e-3
    gamma: float = 0.99
    entropy_start: float = 1.0
    entropy_end: float = 0.1
    workers: int = 8
    epochs: int = 2000
    reward_metric: str = "hd"
    reward_mu: float = 80.0
    legacy_smoothness: bool = False
    # QoE_hd rewards run to 50 per chunk; at 0.02 the entropy bonus swamps the
    # advantages and the policy stays uniform for thousands of epochs
    reward_scale: float = 0.1
    seed: int = 0
    n_filters: int = 320
    kernel: int = 4
    checkpoint_every: int = 100
    lte_fraction: float = 0.1
    action_rungs: tuple | None = None
    dtype: str = "float32"

    PAPER_EPOCHS = 120_000

    def __post_init__(self):
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise ValueError("learning rates must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.workers < 1 or self.epochs < 0 or self.checkpoint_every < 1:
            raise ValueError("workers and checkpoint_every must be >= 1, epochs >= 0")
        if not 0 <= self.lte_fraction <= 1:
            raise ValueError("lte_fraction must be in [0, 1]")
        if self.action_rungs is not None:
            object.__setattr__(self, "action_rungs", tuple(int(r) for r in self.action_rungs))

    def entropy_weight(self, epoch: int) -> float:
        """Linear decay from ``entropy_start`` to ``entropy_end``."""
        if self.epochs <= 1:
            return self.entropy_end
        frac = min(max(epoch / (self.epochs - 1), 0.0), 1.0)
        return self.entropy_start + frac * (self.entropy_end - self.entropy_start)

    @classmethod
    def original_pensieve(cls, **overrides) -> "TrainConfig":
        """Six rungs up to 1080p, 128 units, actor LR 1e-4, linear-bitrate reward
        with the 4.3 rebuffer penalty and symmetric smoothness."""
        base = dict(n_filters=128, actor_lr=1e-4, reward_metric="lin", reward_mu=4.3,
                    legacy_smoothness=True, reward_scale=1.0, action_rungs=(0, 1, 2, 3, 4, 5))
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, doc) -> "TrainConfig":
        doc = dict(doc or {})
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown training settings: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["action_rungs"] = list(self.action_rungs) if self.action_rungs is not None else None
        return d


@dataclass(frozen=True)
class RewardSpec:
    metric: str = "hd"
    mu: float | None = 80.0
    legacy: bool = False

    @classmethod
    def of(cls, config: TrainConfig) -> "RewardSpec":
        return cls(config.reward_metric, config.reward_mu, config.legacy_smoothness)

    def table(self, ladder):
        m = get_metric(self.metric)
        return m.values(ladder), (m.mu if self.mu is None else self.mu)


# --- observation conditioning -------------------------------------------------

@dataclass(frozen=True)
class InputScaling:
    """Constants that map raw observations into the network's input range."""

    buffer_capacity_s: float = 24.0
    max_chunk_bits: float = DEFAULT_LADDER.bitrates_kbps[-1] * 1000.0 * 2.0

    @classmethod
    def for_sim(cls, sim: SimConfig, ladder=DEFAULT_LADDER, action_rungs=None) -> "InputScaling":
        top = ladder.bitrates_kbps[action_rungs[-1] if action_rungs else -1]
        return cls(sim.buffer_capacity_s, float(top) * 1000.0 * sim.chunk_duration_s)


def normalize_observation(observation: Observation, total_chunks: int = 390,
                          scaling: InputScaling = InputScaling(), ladder: BitrateLadder = DEFAULT_LADDER,
                          action_rungs=None) -> Bundle:
    """Scale one observation into a batch-of-one network input."""
    return normalize_many([observation], [total_chunks], scaling, ladder, action_rungs)


def normalize_many(observations: Sequence[Observation], total_chunks, scaling: InputScaling,
                   ladder: BitrateLadder = DEFAULT_LADDER, action_rungs=None) -> Bundle:
    sizes = np.array([o.next_chunk_bits for o in observations], dtype=np.float64)
    if action_rungs is not None:
        sizes = sizes[:, list(action_rungs)]
    last = np.array([0.0 if o.last_rung is None else ladder.resolutions[o.last_rung] / 4320.0
                     for o in observations])
    return Bundle(
        throughput=np.array([o.past_throughputs_kbps for o in observations]) / THROUGHPUT_SCALE_KBPS,
        download_time=np.array([o.past_download_times_s for o in observations]) / DOWNLOAD_TIME_SCALE_S,
        chunk_sizes=sizes / scaling.max_chunk_bits,
        buffer=np.array([o.buffer_s for o in observations]) / scaling.buffer_capacity_s,
        remaining=np.array([o.chunks_remaining for o in observations], dtype=np.float64)
        / np.asarray(total_chunks, dtype=np.float64),
        last_quality=last,
    )


# --- rollouts -----------------------------------------------------------------

@dataclass
class Trajectory:
    bundle: Bundle
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    rungs: np.ndarray
    rebuffers_s: np.ndarray
    terminal: bool = True
    bootstrap_value: float = 0.0

    def __len__(self):
        return self.actions.size

    @property
    def record(self) -> SessionRecord:
        return SessionRecord(tuple(self.rungs.tolist()), tuple(self.rebuffers_s.tolist()))


def _choose(probs: np.ndarray, mode: str, rng) -> np.ndarray:
    if mode == "argmax":
        return probs.argmax(axis=1)
    if mode != "sample":
        raise ValueError(f"unknown rollout mode {mode!r}")
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return (cdf > u[:, None]).argmax(axis=1)


def rollout_batch(network: PolicyNetwork, traces: Sequence[ThroughputTrace], sim: SimConfig = SimConfig(),
                  mode: str = "argmax", rng=None, ladder: BitrateLadder = DEFAULT_LADDER,
                  reward: RewardSpec = RewardSpec(), action_rungs=None, starts_s=None,
                  scaling: InputScaling | None = None) -> list[Trajectory]:
    """Play one full session per trace, all sessions advancing together."""
    rng = np.random.default_rng(rng)
    n_env = len(traces)
    action_rungs = list(range(len(ladder))) if action_rungs is None else list(action_rungs)
    if len(action_rungs) != network.n_actions:
        raise ValueError("action_rungs must match the network's action count")
    scaling = scaling or InputScaling.for_sim(sim, ladder, action_rungs)
    q, mu = reward.table(ladder)
    starts = [0.0] * n_env if starts_s is None else list(starts_s)
    sessions = [StreamSession(cursor_s=float(s)) for s in starts]
    T = sim.total_chunks
    bundles, actions = [], np.empty((T, n_env), dtype=np.int64)
    rungs = np.empty((T, n_env), dtype=np.int64)
    rewards = np.empty((T, n_env))
    rebuf = np.empty((T, n_env))
    for t in range(T):
        obs = [observe(s, sim, ladder) for s in sessions]
        x = normalize_many(obs, T, scaling, ladder, action_rungs)
        a = _choose(network.probabilities(x), mode, rng)
        bundles.append(x)
        actions[t] = a
        for i, s in enumerate(sessions):
            prev = s.last_rung
            rung = action_rungs[a[i]]
            out = download_chunk(s, traces[i], rung, sim, ladder)
            r = q[rung] - mu * out.rebuffer_s
            if prev is not None:
                diff = q[prev] - q[rung]
                r -= abs(diff) if reward.legacy else (diff if diff > 0 else 0.0)
            rungs[t, i] = rung
            rewards[t, i] = r
            rebuf[t, i] = out.rebuffer_s
    trajectories = []
    for i in range(n_env):
        b = stack_bundles([bd.take(slice(i, i + 1)) for bd in bundles])
        trajectories.append(Trajectory(b, actions[:, i].copy(), rewards[:, i].copy(), None,
                                       rungs[:, i].copy(), rebuf[:, i].copy()))
    if trajectories:
        everything = stack_bundles([tr.bundle for tr in trajectories])
        values = network.critic.forward(everything)[0][:, 0].astype(np.float64)
        for i, tr in enumerate(trajectories):
            tr.values = values[i * T:(i + 1) * T]
    return trajectories


def rollout(network: PolicyNetwork, trace: ThroughputTrace, sim: SimConfig = SimConfig(), mode: str = "argmax",
            seed=None, ladder: BitrateLadder = DEFAULT_LADDER, reward: RewardSpec = RewardSpec(),
            action_rungs=None, start_s: float = 0.0, scaling: InputScaling | None = None) -> Trajectory:
    return rollout_batch(network, [trace], sim, mode, np.random.default_rng(seed), ladder, reward,
                         action_rungs, [start_s], scaling)[0]


# --- learning -----------------------------------------------------------------

class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray):
        """Descend along ``grad`` in place."""
        self.t += 1
        g = grad.astype(np.float64)
        self.m *= self.beta1
        self.m += (1 - self.beta1) * g
        g *= g
        self.v *= self.beta2
        self.v += (1 - self.beta2) * g
        step_size = self.lr / (1 - self.beta1 ** self.t)
        denom = np.sqrt(self.v / (1 - self.beta2 ** self.t))
        denom += self.eps
        np.divide(self.m, denom, out=denom)
        denom *= step_size
        params -= denom.astype(params.dtype, copy=False)

    def state(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t}

    def load(self, state):
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)
        self.t = int(state["t"])


class Learner:
    """Owns the network parameters and both optimisers."""

    def __init__(self, network: PolicyNetwork, config: TrainConfig):
        self.network = network
        self.config = config
        self.actor_opt = Adam(network.actor.size, config.actor_lr)
        self.critic_opt = Adam(network.critic.size, config.critic_lr)


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def actor_gradient(network: PolicyNetwork, bundle: Bundle, actions, advantages, entropy_weight: float):
    """Gradient (for ascent) of ``sum A * log pi(a|s) + beta * sum H(pi(.|s))``.

    Returns ``(grad, mean_entropy)``.
    """
    logits, cache = network.actor.forward(bundle)
    logits = logits.astype(np.float64)
    logp = log_softmax(logits)
    p = np.exp(logp)
    entropy = -(p * logp).sum(axis=1)
    onehot = np.zeros_like(p)
    onehot[np.arange(p.shape[0]), actions] = 1.0
    dz = np.asarray(advantages, dtype=np.float64)[:, None] * (onehot - p)
    dz -= entropy_weight * p * (logp + entropy[:, None])
    return network.actor.backward(cache, dz), float(entropy.mean())


def critic_gradient(network: PolicyNetwork, bundle: Bundle, returns):
    """Gradient (for descent) of ``0.5 * sum (R - V)^2``; also returns V."""
    value, cache = network.critic.forward(bundle)
    v = value[:, 0].astype(np.float64)
    return network.critic.backward(cache, (v - returns)[:, None]), v


def a3c_update(learner: Learner, trajectories: Sequence[Trajectory], config: TrainConfig | None = None,
               entropy_weight: float | None = None) -> dict:
    """One synchronous actor-critic step over every worker's trajectory."""
    if not trajectories:
        raise NoData("need at least one trajectory")
    config = config or learner.config
    beta = config.entropy_start if entropy_weight is None else entropy_weight
    net = learner.network
    returns = np.concatenate([
        discounted_returns(tr.rewards * config.reward_scale, config.gamma,
                           0.0 if tr.terminal else tr.bootstrap_value)
        for tr in trajectories])
    bundle = stack_bundles([tr.bundle for tr in trajectories])
    actions = np.concatenate([tr.actions for tr in trajectories])
    g_critic, values = critic_gradient(net, bundle, returns)
    advantages = returns - values
    g_actor, entropy = actor_gradient(net, bundle, actions, advantages, beta)
    if not (np.all(np.isfinite(g_actor)) and np.all(np.isfinite(g_critic))):
        raise NumericalFault("non-finite gradient; update skipped")
    learner.actor_opt.step(net.actor.params, -g_actor)
    learner.critic_opt.step(net.critic.params, g_critic)
    return {
        "entropy": entropy,
        "mean_advantage": float(advantages.mean()),
        "critic_loss": float(0.5 * np.mean(advantages ** 2)),
        "mean_reward": float(np.mean(np.concatenate([tr.rewards for tr in trajectories]))),
        "entropy_weight": beta,
    }


# --- training loop ------------------------------------------------------------

def validation_score(network, traces, sim, ladder=DEFAULT_LADDER, action_rungs=None, scaling=None) -> float:
    """Mean hd QoE (standard penalty) of argmax sessions over ``traces``."""
    trajs = rollout_batch(network, traces, sim, "argmax", None, ladder, RewardSpec("hd", None),
                          action_rungs, None, scaling)
    return float(np.mean([session_qoe("hd", ladder, tr.record) for tr in trajs]))


@dataclass
class TrainResult:
    checkpoints: list
    best: Checkpoint
    log_rows: list = field(default_factory=list)
    network: PolicyNetwork | None = None


LOG_FIELDS = ("epoch", "mean_reward", "entropy", "entropy_weight", "critic_loss", "validation_qoe")


def _log_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in rows:
        w.writerow(["" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                    for k in LOG_FIELDS])
    return buf.getvalue()


def _read_log(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for r in csv.DictReader(f):
            rows.append({k: (int(v) if k == "epoch" else float(v)) for k, v in r.items() if v != ""})
    return rows


def _pick_trace(rng, traces, lte_traces, lte_fraction):
    if lte_traces and (not traces or rng.random() < lte_fraction):
        pool = lte_traces
    else:
        pool = traces
    return pool[int(rng.integers(len(pool)))]


def train(traces: Sequence[ThroughputTrace], sim: SimConfig = SimConfig(), config: TrainConfig = TrainConfig(),
          validation: Sequence[ThroughputTrace] | None = None, eval_sim: SimConfig | None = None,
          ladder: BitrateLadder = DEFAULT_LADDER, lte_traces: Sequence[ThroughputTrace] = (),
          out_dir=None, resume: Checkpoint | None = None, keep_params: bool = True) -> TrainResult:
    """Train a policy; returns every checkpoint with the best-validating one marked.

    One epoch = each worker plays one session (``sim.total_chunks`` chunks)
    from a random start in a randomly drawn trace, followed by one update.
    Checkpoints are taken before the first epoch, every
    ``config.checkpoint_every`` epochs and at the end.
    """
    traces = list(traces)
    if not traces and not lte_traces:
        raise NoData("no training traces")
    if not validation:
        log.warning("no validation traces given; validating on the training set")
        validation = traces or list(lte_traces)
    eval_sim = eval_sim or sim
    action_rungs = config.action_rungs
    n_actions = len(action_rungs) if action_rungs else len(ladder)
    scaling = InputScaling.for_sim(sim, ladder, action_rungs)
    reward = RewardSpec.of(config)

    if resume is not None:
        network = resume.network()
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
    else:
        seq = np.random.SeedSequence(config.seed)
        init_seed, run_seed = seq.spawn(2)
        network = PolicyNetwork(n_actions, config.n_filters, config.kernel, dtype=np.dtype(config.dtype),
                                seed=np.random.default_rng(init_seed))
        rng = np.random.default_rng(run_seed)
        start_epoch = 0
    learner = Learner(network, config)
    if resume is not None and resume.optimizer:
        learner.actor_opt.load(resume.optimizer["actor"])
        learner.critic_opt.load(resume.optimizer["critic"])

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    meta = {"arch": network.arch(), "action_rungs": list(action_rungs) if action_rungs else None,
            "buffer_capacity_s": scaling.buffer_capacity_s, "max_chunk_bits": scaling.max_chunk_bits,
            "ladder": ladder.to_list(), "dtype": config.dtype, "train_config": config.to_dict(),
            "sim_config": sim.to_dict()}

    checkpoints, rows = [], []
    if resume is not None and out is not None:
        # keep the history of the run being continued
        for path in sorted(out.glob("checkpoint_*.bin")):
            ck = read_header(path)
            if ck.epoch <= resume.epoch:
                checkpoints.append(load_checkpoint(path) if keep_params else ck)
        if (out / "train_log.csv").exists():
            rows = [r for r in _read_log(out / "train_log.csv") if r["epoch"] <= resume.epoch]

    def snapshot(epoch):
        score = validation_score(network, validation, eval_sim, ladder, action_rungs, scaling)
        ck = Checkpoint(epoch, network.flat().copy(), score, rng.bit_generator.state, meta)
        if out is not None:
            save_checkpoint(out / f"checkpoint_{epoch:06d}.bin", ck)
            # optimiser moments only for the latest snapshot; they dwarf the weights
            opt = {"actor": learner.actor_opt.state(), "critic": learner.critic_opt.state()}
            save_checkpoint(out / "resume.bin", replace(ck, optimizer=opt))
        if not keep_params:
            ck = replace(ck, params=None)
        checkpoints.append(ck)
        log.info("epoch %d validation QoE_hd %.3f", epoch, score)
        return score

    if resume is None:
        score = snapshot(0)
        rows.append({"epoch": 0, "validation_qoe": score})
    for epoch in range(start_epoch, config.epochs):
        chosen = [_pick_trace(rng, traces, list(lte_traces), config.lte_fraction) for _ in range(config.workers)]
        starts = [float(rng.integers(0, max(1, int(t.duration_s)))) for t in chosen]
        trajs = rollout_batch(network, chosen, sim, "sample", rng, ladder, reward, action_rungs, starts, scaling)
        row = {"epoch": epoch + 1}
        try:
            stats = a3c_update(learner, trajs, config, config.entropy_weight(epoch))
            row.update(stats)
        except NumericalFault as exc:
            log.warning("epoch %d: %s", epoch + 1, exc)
        done = epoch + 1
        if done % config.checkpoint_every == 0 or done == config.epochs:
            row["validation_qoe"] = snapshot(done)
        rows.append(row)

    if not checkpoints:
        raise NoData("training produced no checkpoints")
    best = max(checkpoints, key=lambda c: c.validation_qoe)
    if out is not None:
        (out / "train_log.csv").write_text(_log_csv(rows), encoding="utf-8", newline="\n")
        (out / "best.txt").write_text(f"checkpoint_{best.epoch:06d}.bin\n", encoding="utf-8", newline="\n")
    return TrainResult(checkpoints, best, rows, network)


# --- evaluation policy --------------------------------------------------------

class RLPolicy(Policy):
    """Greedy (argmax) policy driven by a trained actor."""

    name = "rl"

    def __init__(self, network: PolicyNetwork, ladder: BitrateLadder = DEFAULT_LADDER,
                 sim: SimConfig = SimConfig(), action_rungs=None, scaling: InputScaling | None = None):
        super().__init__(ladder)
        self.network = network
        self.sim = sim
        self.action_rungs = list(range(len(ladder))) if action_rungs is None else list(action_rungs)
        if len(self.action_rungs) != network.n_actions:
            raise ValueError("action_rungs must match the network's action count")
        self.scaling = scaling or InputScaling.for_sim(sim, ladder, self.action_rungs)

    @classmethod
    def from_checkpoint(cls, checkpoint, ladder: BitrateLadder = DEFAULT_LADDER, sim: SimConfig = SimConfig()):
        if isinstance(checkpoint, (str, os.PathLike)):
            checkpoint = load_checkpoint(checkpoint)
        meta = checkpoint.meta
        scaling = InputScaling(meta["buffer_capacity_s"], meta["max_chunk_bits"])
        return cls(checkpoint.network(), ladder, sim, meta.get("action_rungs"), scaling)

    def decide(self, observation):
        x = normalize_many([observation], [self.sim.total_chunks], self.scaling, self.ladder, self.action_rungs)
        return int(self.action_rungs[int(np.argmax(self.network.probabilities(x)[0]))])
