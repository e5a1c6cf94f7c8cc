"""Conventional ABR baselines: buffer-based, rate-based, BOLA, MPC and
robustMPC.

Every policy exposes ``decide(observation) -> rung`` and ``reset()``. Only
MPC carries state between chunks (its prediction-error window), so use one
policy instance per session.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np

from .qoe import DEFAULT_LADDER, BitrateLadder, get_metric
from .simulator import Observation, SimConfig

PREDICTION_WINDOW = 5
TIE_TOLERANCE = 1e-9


def harmonic_mean(values) -> float:
    """Harmonic mean of the positive entries (0 if there are none)."""
    v = [float(x) for x in values if x > 0]
    if not v:
        return 0.0
    return len(v) / sum(1.0 / x for x in v)


def predict_throughput(past_throughputs_kbps, window: int = PREDICTION_WINDOW) -> float:
    positive = [x for x in past_throughputs_kbps if x > 0]
    return harmonic_mean(positive[-window:])


def bb_decide(buffer_s: float, reservoir_s: float = 4.0, cushion_s: float = 16.0, n_rungs: int = 10) -> int:
    top = n_rungs - 1
    if buffer_s < reservoir_s:
        return 0
    if buffer_s >= reservoir_s + cushion_s:
        return top
    return min(top, int(math.floor(top * (buffer_s - reservoir_s) / cushion_s)))


def rb_decide(past_throughputs_kbps, ladder: BitrateLadder = DEFAULT_LADDER, window: int = PREDICTION_WINDOW) -> int:
    prediction = predict_throughput(past_throughputs_kbps, window)
    if prediction <= 0:
        return 0
    ok = np.nonzero(ladder.bitrates_kbps <= prediction)[0]
    return int(ok[-1]) if ok.size else 0


def bola_calibrate(ladder: BitrateLadder, switch_up_s: float, top_from_s: float) -> tuple[float, float]:
    """Pick BOLA's ``V`` and ``gamma_p`` from two buffer anchors.

    The rung 0 -> 1 switch happens at ``switch_up_s`` and the second-highest
    -> top switch at ``top_from_s``. With log utilities these adjacent
    crossings bound the whole envelope, so rung 0 holds below the first
    anchor and the top rung above the second.
    """
    R = ladder.bitrates_kbps
    if len(R) < 2:
        return 1.0, 1.0
    u = np.log(R / R[0])
    low = u[1] * R[0] / (R[1] - R[0])
    high = (u[-2] * R[-1] - u[-1] * R[-2]) / (R[-1] - R[-2])
    V = (top_from_s - switch_up_s) / (high + low)
    if V <= 0:
        raise ValueError("BOLA anchors must satisfy switch_up_s < top_from_s")
    gamma_p = (switch_up_s + V * low) / V
    return float(V), float(gamma_p)


def bola_objective(buffer_s: float, ladder: BitrateLadder, V: float, gamma_p: float) -> np.ndarray:
    R = ladder.bitrates_kbps
    u = np.log(R / R[0])
    return (V * (u + gamma_p) - buffer_s) / R


def bola_decide(buffer_s: float, ladder: BitrateLadder, V: float, gamma_p: float) -> int:
    score = bola_objective(buffer_s, ladder, V, gamma_p)
    top = score.max()
    # ties go to the higher rung, including ties blurred by rounding
    return int(np.flatnonzero(score >= top - TIE_TOLERANCE * abs(top))[-1])


# --- MPC ----------------------------------------------------------------------

def mpc_plan(buffer_s: float, last_rung, sizes_bits, prediction_kbps: float, horizon: int,
             q, mu: float, chunk_duration_s: float):
    """Score every rung sequence of length ``horizon`` under a constant
    throughput prediction.

    The sequence tree is expanded one level at a time; leaves come out in
    lexicographic order, so the first maximum has the lowest first rung.
    Returns ``(first_rung, best_score)``.
    """
    q = np.asarray(q, dtype=float)
    n = q.size
    dl = np.asarray(sizes_bits, dtype=float) / (prediction_kbps * 1000.0)
    buf = np.array([float(buffer_s)])
    score = np.array([0.0])
    prev_q = np.array([np.nan if last_rung is None else q[last_rung]])
    for _ in range(horizon):
        parents = buf.size
        b = np.repeat(buf, n)
        d = np.tile(dl, parents)
        qq = np.tile(q, parents)
        stall = np.maximum(d - b, 0.0)
        drop = np.repeat(prev_q, n) - qq
        penalty = np.where(drop > 0, drop, 0.0)
        score = np.repeat(score, n) + (qq - mu * stall - penalty)
        buf = np.maximum(b - d, 0.0) + chunk_duration_s
        prev_q = qq
    top = score.max()
    # float noise must not break a tie: the first leaf within tolerance wins
    best = int(np.flatnonzero(score >= top - TIE_TOLERANCE * max(1.0, abs(top)))[0])
    return best // n ** (horizon - 1), float(score[best])


def mpc_decide(observation: Observation, ladder: BitrateLadder = DEFAULT_LADDER, horizon: int = 5,
               robust: bool = False, past_errors=(), metric="hd", chunk_duration_s: float = 2.0,
               window: int = PREDICTION_WINDOW) -> int:
    prediction = predict_throughput(observation.past_throughputs_kbps, window)
    if prediction <= 0:
        return 0
    if robust and len(past_errors):
        prediction /= 1.0 + max(list(past_errors)[-window:])
    h = min(horizon, observation.chunks_remaining) if observation.chunks_remaining > 0 else horizon
    m = get_metric(metric)
    rung, _ = mpc_plan(observation.buffer_s, observation.last_rung, observation.next_chunk_bits,
                       prediction, max(h, 1), m.values(ladder), m.mu, chunk_duration_s)
    return rung


# --- policy objects -----------------------------------------------------------

class Policy:
    name = "policy"

    def __init__(self, ladder: BitrateLadder = DEFAULT_LADDER):
        self.ladder = ladder

    def decide(self, observation: Observation) -> int:
        raise NotImplementedError

    def reset(self):
        pass

    def __repr__(self):
        return f"{type(self).__name__}()"


class BufferBased(Policy):
    name = "bb"

    def __init__(self, ladder=DEFAULT_LADDER, reservoir_s=4.0, cushion_s=16.0):
        super().__init__(ladder)
        if reservoir_s < 0 or cushion_s <= 0:
            raise ValueError("reservoir must be >= 0 and cushion > 0")
        self.reservoir_s = reservoir_s
        self.cushion_s = cushion_s

    def decide(self, observation):
        return bb_decide(observation.buffer_s, self.reservoir_s, self.cushion_s, len(self.ladder))


class RateBased(Policy):
    name = "rb"

    def __init__(self, ladder=DEFAULT_LADDER, window=PREDICTION_WINDOW):
        super().__init__(ladder)
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window

    def decide(self, observation):
        return rb_decide(observation.past_throughputs_kbps, self.ladder, self.window)


class Bola(Policy):
    name = "bola"

    def __init__(self, ladder=DEFAULT_LADDER, buffer_capacity_s=24.0, switch_up_s=3.5, top_fraction=0.875):
        super().__init__(ladder)
        self.V, self.gamma_p = bola_calibrate(ladder, switch_up_s, top_fraction * buffer_capacity_s)

    def decide(self, observation):
        return bola_decide(observation.buffer_s, self.ladder, self.V, self.gamma_p)


class Mpc(Policy):
    """Exhaustive-horizon MPC; ``robust=True`` discounts the harmonic-mean
    prediction by the worst recent relative prediction error."""

    def __init__(self, ladder=DEFAULT_LADDER, horizon=5, robust=False, metric="hd",
                 chunk_duration_s=2.0, window=PREDICTION_WINDOW):
        super().__init__(ladder)
        if not 1 <= horizon <= 6:
            raise ValueError("horizon must be in 1..6")
        self.horizon = horizon
        self.robust = robust
        self.metric = get_metric(metric)
        self.chunk_duration_s = chunk_duration_s
        self.window = window
        self.reset()

    @property
    def name(self):
        return "robust_mpc" if self.robust else "mpc"

    def reset(self):
        self.errors = deque(maxlen=self.window)
        self._last_prediction = None

    def decide(self, observation):
        measured = observation.past_throughputs_kbps[-1]
        if self._last_prediction is not None and measured > 0:
            self.errors.append(abs(self._last_prediction - measured) / measured)
        prediction = predict_throughput(observation.past_throughputs_kbps, self.window)
        self._last_prediction = prediction if prediction > 0 else None
        return mpc_decide(observation, self.ladder, self.horizon, self.robust, tuple(self.errors),
                          self.metric, self.chunk_duration_s, self.window)


class Fixed(Policy):
    """Always the same rung; handy for tests and sanity checks."""

    def __init__(self, ladder=DEFAULT_LADDER, rung=0):
        super().__init__(ladder)
        self.rung = ladder.check(rung)
        self.name = f"fixed{rung}"

    def decide(self, observation):
        return self.rung


CONVENTIONAL = ("bb", "rb", "bola", "mpc", "robust_mpc")


def make_policy(kind: str, ladder: BitrateLadder = DEFAULT_LADDER, sim: SimConfig = SimConfig(), **params) -> Policy:
    """Build a conventional policy by name. RL policies live in ``abr5g.rl``."""
    if kind == "bb":
        return BufferBased(ladder, **params)
    if kind == "rb":
        return RateBased(ladder, **params)
    if kind == "bola":
        params.setdefault("buffer_capacity_s", sim.buffer_capacity_s)
        return Bola(ladder, **params)
    if kind in ("mpc", "robust_mpc"):
        params.setdefault("chunk_duration_s", sim.chunk_duration_s)
        return Mpc(ladder, robust=(kind == "robust_mpc"), **params)
    if kind == "fixed":
        return Fixed(ladder, **params)
    raise ValueError(f"unknown policy kind {kind!r}")
