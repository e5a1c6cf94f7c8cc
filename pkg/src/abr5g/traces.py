"""Throughput traces: parsing, integration, Mahimahi conversion, windowing
and Markov-chain synthesis.

Traces are piecewise constant: each sample holds until the next one, and the
last sample holds until ``duration_ms``. Time queries past the end of a trace
wrap around to ``t = 0``. Since 1 kbps is exactly 1 bit/ms, integrating a
trace is a sum of ``kbps * ms`` products.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DeadTrace, InvalidInterval, InvalidSpec, MalformedTrace

MTU_BYTES = 1500
BITS_PER_PACKET = MTU_BYTES * 8
SOURCES = ("measured", "synthetic", "mahimahi")


@dataclass(frozen=True, eq=False)
class ThroughputTrace:
    """Timestamped downlink throughput samples.

    Parameters
    ----------
    t_ms : array of int
        Sample start times in ms, strictly increasing, starting at 0.
    kbps : array of float
        Throughput held from each sample time until the next one.
    duration_ms : int, optional
        End of the last sample. Defaults to the last timestamp plus the
        previous sampling interval (1000 ms for single-sample traces).
    """

    t_ms: np.ndarray
    kbps: np.ndarray
    name: str = ""
    source: str = "measured"
    duration_ms: int | None = None
    _cum_bits: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.asarray(self.t_ms, dtype=np.int64).copy()
        r = np.asarray(self.kbps, dtype=np.float64).copy()
        if t.ndim != 1 or t.shape != r.shape or t.size == 0:
            raise MalformedTrace("need matching non-empty 1-d time and throughput arrays")
        if t[0] != 0:
            raise MalformedTrace("first sample must be at t_ms = 0")
        if np.any(np.diff(t) <= 0):
            raise MalformedTrace("timestamps must be strictly increasing")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise MalformedTrace("throughput must be finite and non-negative")
        if self.source not in SOURCES:
            raise ValueError(f"unknown trace source {self.source!r}")
        dur = self.duration_ms
        if dur is None:
            dur = int(t[-1] + (t[-1] - t[-2] if t.size > 1 else 1000))
        dur = int(dur)
        if dur <= t[-1]:
            raise MalformedTrace("duration must extend past the last sample")
        t.setflags(write=False)
        r.setflags(write=False)
        edges = np.append(t, dur)
        cum = np.concatenate(([0.0], np.cumsum(r * np.diff(edges))))
        cum.setflags(write=False)
        object.__setattr__(self, "t_ms", t)
        object.__setattr__(self, "kbps", r)
        object.__setattr__(self, "duration_ms", dur)
        object.__setattr__(self, "_cum_bits", cum)

    def __len__(self):
        return self.t_ms.size

    @property
    def duration_s(self) -> float:
        return self.duration_ms / 1000.0

    @property
    def total_bits(self) -> float:
        """Bits delivered over one pass of the trace."""
        return float(self._cum_bits[-1])

    @property
    def has_service(self) -> bool:
        return bool(np.any(self.kbps > 0))

    @property
    def mean_kbps(self) -> float:
        return self.total_bits / self.duration_ms

    def bits_until(self, t_s: float) -> float:
        """Cumulative bits delivered from trace start to ``t_s`` (looped)."""
        t = t_s * 1000.0
        loops, rem = divmod(t, self.duration_ms)
        i = int(np.searchsorted(self.t_ms, rem, side="right")) - 1
        partial = self._cum_bits[i] + self.kbps[i] * (rem - self.t_ms[i])
        return loops * self.total_bits + float(partial)

    def time_to_deliver(self, start_s: float, bits: float) -> float:
        """Smallest ``dt`` such that ``start_s .. start_s + dt`` carries ``bits``."""
        if bits <= 0:
            return 0.0
        if not self.has_service:
            raise DeadTrace(f"trace {self.name!r} never delivers any data")
        target = self.bits_until(start_s) + bits
        total = self.total_bits
        loops = math.floor(target / total)
        rem = target - loops * total
        rem = min(rem, total)
        if rem <= 0:
            # landing exactly on a loop boundary; the data may already be in
            # before trailing zero-rate samples of the previous pass
            loops -= 1
            rem = total
        j = int(np.searchsorted(self._cum_bits, rem, side="left"))
        if self._cum_bits[j] == rem:
            t_ms = self._edge(j)
        else:
            k = j - 1
            t_ms = self.t_ms[k] + (rem - self._cum_bits[k]) / self.kbps[k]
        end = (loops * self.duration_ms + t_ms) / 1000.0
        return float(max(end - start_s, 0.0))

    def _edge(self, j):
        return self.duration_ms if j == self.t_ms.size else int(self.t_ms[j])

    def rate_at(self, t_s: float) -> float:
        rem = (t_s * 1000.0) % self.duration_ms
        i = int(np.searchsorted(self.t_ms, rem, side="right")) - 1
        return float(self.kbps[i])

    def scaled(self, k: float) -> "ThroughputTrace":
        return ThroughputTrace(self.t_ms, self.kbps * k, self.name, self.source, self.duration_ms)

    def summary(self) -> dict:
        return {
            "name": self.name,
            "samples": len(self),
            "duration_s": self.duration_s,
            "mean_kbps": self.mean_kbps,
            "min_kbps": float(self.kbps.min()),
            "max_kbps": float(self.kbps.max()),
        }

    def to_csv(self) -> str:
        lines = ["timestamp_ms,throughput_kbps"]
        lines += [f"{t},{r!r}" for t, r in zip(self.t_ms.tolist(), self.kbps.tolist())]
        return "\n".join(lines) + "\n"


def constant_trace(kbps: float, duration_s: float = 1.0, name: str = "constant") -> ThroughputTrace:
    return ThroughputTrace([0], [kbps], name=name, source="synthetic",
                           duration_ms=int(round(duration_s * 1000)))


def parse_csv(text: str, name: str = "") -> ThroughputTrace:
    """Parse ``timestamp_ms,throughput_kbps`` rows into a trace rebased to 0.

    A single leading header line is tolerated. Errors carry the 1-based line
    number of the offending row.
    """
    times, rates = [], []
    prev = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise MalformedTrace(f"expected 2 fields, got {len(parts)}", line=lineno)
        try:
            t = float(parts[0])
            r = float(parts[1])
        except ValueError:
            if not times and lineno == 1:
                continue  # header
            raise MalformedTrace(f"non-numeric field in {line!r}", line=lineno) from None
        if not (math.isfinite(t) and math.isfinite(r)):
            raise MalformedTrace("non-finite value", line=lineno)
        if prev is not None and t <= prev:
            raise MalformedTrace(f"timestamp {t:g} does not increase", line=lineno)
        if r < 0:
            raise MalformedTrace(f"negative throughput {r:g}", line=lineno)
        prev = t
        times.append(t)
        rates.append(r)
    if not times:
        raise MalformedTrace("no samples")
    t_ms = np.rint(np.asarray(times) - times[0]).astype(np.int64)
    if np.any(np.diff(t_ms) <= 0):
        raise MalformedTrace("timestamps collide after rounding to whole ms")
    trace = ThroughputTrace(t_ms, rates, name=name, source="measured")
    if not trace.has_service:
        raise DeadTrace(f"trace {name!r} has no positive throughput sample")
    return trace


def integrate_bits(trace: ThroughputTrace, t0_s: float, t1_s: float) -> float:
    """Bits carried by the (looped) trace between ``t0_s`` and ``t1_s``."""
    if t0_s < 0 or t1_s < t0_s:
        raise InvalidInterval(f"bad interval [{t0_s}, {t1_s}]")
    if t1_s == t0_s:
        return 0.0
    return trace.bits_until(t1_s) - trace.bits_until(t0_s)


def _per_ms_bits(trace: ThroughputTrace) -> np.ndarray:
    edges = np.append(trace.t_ms, trace.duration_ms)
    return np.repeat(trace.kbps, np.diff(edges))


def to_mahimahi(trace: ThroughputTrace, mtu_bytes: int = MTU_BYTES) -> list[int]:
    """Packet delivery opportunities, one ms timestamp per MTU-sized packet.

    Millisecond ``m`` covers ``(m-1, m]``; a fractional-packet remainder
    carries over from one ms to the next.
    """
    packet = mtu_bytes * 8
    cum = np.cumsum(_per_ms_bits(trace))
    sent = np.floor(cum / packet).astype(np.int64)
    counts = np.diff(sent, prepend=0)
    stamps = np.repeat(np.arange(1, cum.size + 1, dtype=np.int64), counts)
    return stamps.tolist()


def from_mahimahi(lines: Iterable, bucket_ms: int = 1000, duration_ms: int | None = None,
                  mtu_bytes: int = MTU_BYTES, name: str = "") -> ThroughputTrace:
    """Rebuild a bucketed throughput trace from Mahimahi timestamps.

    ``lines`` may be ints or text lines. Without ``duration_ms`` the trace
    spans the smallest whole number of buckets covering the last stamp.
    """
    if bucket_ms <= 0:
        raise InvalidInterval("bucket_ms must be positive")
    stamps = []
    for lineno, raw in enumerate(lines, start=1):
        if isinstance(raw, str):
            raw = raw.strip()
            if not raw:
                continue
        try:
            v = int(raw)
        except ValueError:
            raise MalformedTrace(f"not an integer: {raw!r}", line=lineno) from None
        if v < 0:
            raise MalformedTrace("negative timestamp", line=lineno)
        if stamps and v < stamps[-1]:
            raise MalformedTrace("timestamps decrease", line=lineno)
        stamps.append(v)
    stamps = np.asarray(stamps, dtype=np.int64)
    last = int(stamps[-1]) if stamps.size else 0
    if duration_ms is None:
        duration_ms = max(bucket_ms, -(-last // bucket_ms) * bucket_ms)
    n_buckets = -(-int(duration_ms) // bucket_ms)
    idx = np.clip((stamps - 1) // bucket_ms, 0, n_buckets - 1)
    counts = np.bincount(idx, minlength=n_buckets)[:n_buckets]
    kbps = counts * (mtu_bytes * 8) / bucket_ms
    t_ms = np.arange(n_buckets, dtype=np.int64) * bucket_ms
    return ThroughputTrace(t_ms, kbps, name=name, source="mahimahi",
                           duration_ms=n_buckets * bucket_ms)


def read_mahimahi(path, **kw) -> ThroughputTrace:
    with open(path, encoding="utf-8") as f:
        return from_mahimahi(f, **kw)


def write_mahimahi(path, stamps: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(f"{s}\n" for s in stamps))


def slice_window(trace: ThroughputTrace, start_s: float, duration_s: float = 900.0) -> ThroughputTrace:
    """Cut ``[start_s, start_s + duration_s)`` out of the looped trace."""
    if duration_s <= 0:
        raise InvalidInterval("window duration must be positive")
    if start_s < 0:
        raise InvalidInterval("window start must be non-negative")
    start = int(round(start_s * 1000))
    end = start + int(round(duration_s * 1000))
    D = trace.duration_ms
    first, last = start // D, (end - 1) // D
    times = [start]
    rates = [trace.rate_at(start / 1000.0)]
    for k in range(first, last + 1):
        absolute = trace.t_ms + k * D
        keep = (absolute > start) & (absolute < end)
        times.extend(absolute[keep].tolist())
        rates.extend(trace.kbps[keep].tolist())
    t = np.asarray(times, dtype=np.int64) - start
    return ThroughputTrace(t, rates, name=trace.name, source=trace.source, duration_ms=end - start)


def random_window(trace: ThroughputTrace, duration_s: float, rng: np.random.Generator) -> tuple[float, ThroughputTrace]:
    """Pick a whole-second window start uniformly among those that fit."""
    room = trace.duration_s - duration_s
    start = float(rng.integers(0, int(room) + 1)) if room > 0 else 0.0
    return start, slice_window(trace, start, duration_s)


# --- synthetic traces -------------------------------------------------------

@dataclass(frozen=True)
class BandState:
    name: str
    mean_kbps: float
    stddev_kbps: float
    mean_dwell_s: float


@dataclass(frozen=True)
class SyntheticSpec:
    """Markov band-switching model.

    The chain stays in a state for an exponentially distributed dwell time
    and then jumps according to ``transition``; each sample is Gaussian
    around the state's mean, clipped at zero.
    """

    states: tuple
    transition: tuple
    sample_interval_ms: int = 1000
    duration_s: float = 900.0
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        states = tuple(s if isinstance(s, BandState) else BandState(**s) for s in self.states)
        P = np.asarray(self.transition, dtype=np.float64)
        n = len(states)
        if n == 0:
            raise InvalidSpec("need at least one band state")
        if P.shape != (n, n):
            raise InvalidSpec(f"transition matrix must be {n}x{n}, got {P.shape}")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise InvalidSpec("transition probabilities must be finite and non-negative")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
            raise InvalidSpec("transition matrix rows must sum to 1")
        for s in states:
            if not s.mean_dwell_s > 0:
                raise InvalidSpec(f"state {s.name!r}: dwell time must be positive")
            if s.mean_kbps < 0 or s.stddev_kbps < 0:
                raise InvalidSpec(f"state {s.name!r}: negative mean or stddev")
            if s.name == "outage" and s.mean_kbps != 0:
                raise InvalidSpec("outage state must have zero mean")
        if self.sample_interval_ms <= 0 or self.duration_s <= 0:
            raise InvalidSpec("sample interval and duration must be positive")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transition", tuple(tuple(row) for row in P.tolist()))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.transition)

    def with_seed(self, seed: int) -> "SyntheticSpec":
        return SyntheticSpec(self.states, self.transition, self.sample_interval_ms,
                             self.duration_s, seed, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "states": [vars(s).copy() for s in self.states],
            "transition": [list(r) for r in self.transition],
            "sample_interval_ms": self.sample_interval_ms,
            "duration_s": self.duration_s,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        try:
            return cls(
                states=tuple(doc["states"]),
                transition=tuple(map(tuple, doc["transition"])),
                sample_interval_ms=int(doc.get("sample_interval_ms", 1000)),
                duration_s=float(doc.get("duration_s", 900.0)),
                seed=int(doc.get("seed", 0)),
                name=str(doc.get("name", "synthetic")),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"bad synthetic spec: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        return cls.from_dict(json.loads(text))


def jump_chain_stationary(P: np.ndarray) -> np.ndarray:
    """Stationary distribution of the embedded jump chain."""
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.clip(pi, 0, None) / np.clip(pi, 0, None).sum()


def band_path(spec: SyntheticSpec, rng: np.random.Generator, until_s: float | None = None):
    """Sample (state, dwell_s) pairs until their total exceeds ``until_s``."""
    until_s = spec.duration_s if until_s is None else until_s
    P = spec.matrix
    dwell = np.array([s.mean_dwell_s for s in spec.states])
    occupancy = jump_chain_stationary(P) * dwell
    state = int(rng.choice(len(spec.states), p=occupancy / occupancy.sum()))
    elapsed = 0.0
    path = []
    while elapsed < until_s:
        d = float(rng.exponential(dwell[state]))
        path.append((state, d))
        elapsed += d
        state = int(rng.choice(len(spec.states), p=P[state]))
    return path


def synthesize(spec: SyntheticSpec) -> ThroughputTrace:
    rng = np.random.default_rng(spec.seed)
    path = band_path(spec, rng)
    n = int(math.ceil(spec.duration_s * 1000 / spec.sample_interval_ms))
    t_ms = np.arange(n, dtype=np.int64) * spec.sample_interval_ms
    ends = np.cumsum([d for _, d in path]) * 1000.0
    idx = np.minimum(np.searchsorted(ends, t_ms, side="right"), len(path) - 1)
    which = np.array([s for s, _ in path])[idx]
    mean = np.array([s.mean_kbps for s in spec.states])[which]
    std = np.array([s.stddev_kbps for s in spec.states])[which]
    kbps = np.maximum(mean + std * rng.standard_normal(n), 0.0)
    trace = ThroughputTrace(t_ms, kbps, name=spec.name, source="synthetic",
                            duration_ms=int(round(spec.duration_s * 1000)))
    if not trace.has_service:
        raise InvalidSpec(f"spec {spec.name!r} with seed {spec.seed} produced no service")
    return trace
