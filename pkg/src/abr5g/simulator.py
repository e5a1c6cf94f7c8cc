"""Chunk-level playback simulation over a throughput trace.

Each chunk request pays a fixed RTT, then downloads the chunk's payload at
``payload_efficiency`` times the trace rate. Playback drains the buffer while
downloading; if the buffer empties first the difference is a stall. When the
new chunk pushes the buffer above capacity the client waits
``pause_on_full_ms`` (playback continues) until it fits again.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .errors import DeadTrace, PolicyFault, SessionComplete
from .qoe import DEFAULT_LADDER, BitrateLadder, SessionRecord, get_metric, session_qoe
from .traces import ThroughputTrace

HISTORY_LEN = 8


@dataclass(frozen=True)
class SimConfig:
    chunk_duration_s: float = 2.0
    buffer_capacity_s: float = 24.0
    pause_on_full_ms: int = 2000
    link_rtt_ms: int = 80
    payload_efficiency: float = 0.95
    total_chunks: int = 390

    def __post_init__(self):
        if not (self.chunk_duration_s > 0 and self.buffer_capacity_s > 0 and self.pause_on_full_ms > 0
                and self.link_rtt_ms >= 0 and self.total_chunks > 0):
            raise ValueError("simulator settings must be positive")
        if not 0 < self.payload_efficiency <= 1:
            raise ValueError("payload_efficiency must be in (0, 1]")
        if self.buffer_capacity_s < self.chunk_duration_s:
            raise ValueError("buffer must hold at least one chunk")

    @classmethod
    def from_dict(cls, doc: Mapping | None) -> "SimConfig":
        doc = dict(doc or {})
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown simulator settings: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StreamSession:
    """Mutable playback state of one client."""

    clock_s: float = 0.0
    buffer_s: float = 0.0
    next_chunk: int = 0
    last_rung: int | None = None
    cursor_s: float = 0.0
    throughputs_kbps: list = field(default_factory=list)
    download_times_s: list = field(default_factory=list)


@dataclass(frozen=True)
class ChunkOutcome:
    index: int
    rung: int
    chunk_bits: float
    download_time_s: float
    rebuffer_s: float
    pause_s: float
    buffer_before_s: float
    buffer_after_s: float

    @property
    def throughput_kbps(self) -> float:
        return self.chunk_bits / (self.download_time_s * 1000.0)


@dataclass(frozen=True)
class Observation:
    """What a policy sees before choosing the next chunk's rung.

    Histories hold the last ``HISTORY_LEN`` chunks, oldest first, left-padded
    with zeros.
    """

    buffer_s: float
    past_throughputs_kbps: tuple
    past_download_times_s: tuple
    next_chunk_bits: tuple
    chunks_remaining: int
    last_rung: int | None = None


def reset(session: StreamSession | None = None, config: SimConfig | None = None) -> StreamSession:
    """Return a session rewound to t=0 with an empty buffer."""
    if session is None:
        return StreamSession()
    session.clock_s = 0.0
    session.buffer_s = 0.0
    session.next_chunk = 0
    session.last_rung = None
    session.cursor_s = 0.0
    session.throughputs_kbps = []
    session.download_times_s = []
    return session


class Manifest:
    """Per-chunk size overrides on top of the constant-bitrate model."""

    def __init__(self, overrides: Mapping | None = None):
        self.overrides = {(int(c), int(r)): float(b) for (c, r), b in dict(overrides or {}).items()}

    def get(self, chunk, rung):
        return self.overrides.get((chunk, rung))


def chunk_size_bits(ladder: BitrateLadder, rung: int, config: SimConfig, chunk_index: int | None = None,
                    manifest: Manifest | None = None) -> float:
    rung = ladder.check(rung)
    if manifest is not None and chunk_index is not None:
        size = manifest.get(chunk_index, rung)
        if size is not None:
            return size
    return float(ladder.bitrates_kbps[rung]) * 1000.0 * config.chunk_duration_s


def next_chunk_sizes(ladder, config, chunk_index, manifest=None) -> tuple:
    if manifest is None:
        return tuple((ladder.bitrates_kbps * (1000.0 * config.chunk_duration_s)).tolist())
    return tuple(float(chunk_size_bits(ladder, r, config, chunk_index, manifest)) for r in range(len(ladder)))


def download_chunk(session: StreamSession, trace: ThroughputTrace, rung: int, config: SimConfig,
                   ladder: BitrateLadder = DEFAULT_LADDER, manifest: Manifest | None = None) -> ChunkOutcome:
    """Fetch the next chunk at ``rung`` and advance ``session`` in place."""
    if session.next_chunk >= config.total_chunks:
        raise SessionComplete(f"all {config.total_chunks} chunks already played")
    bits = chunk_size_bits(ladder, rung, config, session.next_chunk, manifest)
    rtt = config.link_rtt_ms / 1000.0
    transfer = trace.time_to_deliver(session.cursor_s + rtt, bits / config.payload_efficiency)
    dt = rtt + transfer

    before = session.buffer_s
    rebuffer = max(0.0, dt - before)
    buffer = max(before - dt, 0.0) + config.chunk_duration_s
    pause = 0.0
    step = config.pause_on_full_ms / 1000.0
    while buffer > config.buffer_capacity_s:
        buffer -= step
        pause += step

    session.clock_s += dt + pause
    session.cursor_s += dt + pause
    session.buffer_s = buffer
    session.last_rung = rung
    session.throughputs_kbps.append(bits / (dt * 1000.0))
    session.download_times_s.append(dt)
    del session.throughputs_kbps[:-HISTORY_LEN]
    del session.download_times_s[:-HISTORY_LEN]
    out = ChunkOutcome(session.next_chunk, rung, bits, dt, rebuffer, pause, before, buffer)
    session.next_chunk += 1
    return out


def _padded(values):
    values = list(values)[-HISTORY_LEN:]
    return tuple([0.0] * (HISTORY_LEN - len(values)) + values)


def observe(session: StreamSession, config: SimConfig, ladder: BitrateLadder = DEFAULT_LADDER,
            manifest: Manifest | None = None) -> Observation:
    remaining = config.total_chunks - session.next_chunk
    sizes = next_chunk_sizes(ladder, config, session.next_chunk, manifest) if remaining > 0 \
        else (0.0,) * len(ladder)
    return Observation(
        buffer_s=session.buffer_s,
        past_throughputs_kbps=_padded(session.throughputs_kbps),
        past_download_times_s=_padded(session.download_times_s),
        next_chunk_bits=sizes,
        chunks_remaining=remaining,
        last_rung=session.last_rung,
    )


@dataclass
class SessionResult:
    record: SessionRecord
    outcomes: list
    observations: list
    qoe: float
    clock_s: float
    residual_buffer_s: float

    @property
    def mean_rung(self) -> float:
        return float(np.mean(self.record.rungs))

    @property
    def total_rebuffer_s(self) -> float:
        return self.record.total_rebuffer_s


def _as_rung(choice, ladder):
    if isinstance(choice, (bool, np.bool_)) or not isinstance(choice, (int, np.integer)):
        raise PolicyFault(f"policy returned {choice!r}, not an integer rung")
    if not 0 <= choice < len(ladder):
        raise PolicyFault(f"policy returned rung {choice}, valid range is 0..{len(ladder) - 1}")
    return int(choice)


def run_session(trace: ThroughputTrace, policy, ladder: BitrateLadder = DEFAULT_LADDER,
                config: SimConfig = SimConfig(), metric="hd", manifest: Manifest | None = None) -> SessionResult:
    """Play a whole video, asking ``policy.decide(observation)`` before each chunk."""
    if not trace.has_service:
        raise DeadTrace(f"trace {trace.name!r} has no positive throughput sample")
    if hasattr(policy, "reset"):
        policy.reset()
    session = StreamSession()
    outcomes, observations = [], []
    while session.next_chunk < config.total_chunks:
        obs = observe(session, config, ladder, manifest)
        observations.append(obs)
        idx = session.next_chunk
        try:
            rung = _as_rung(policy.decide(obs), ladder)
        except PolicyFault as exc:
            raise PolicyFault(f"chunk {idx}: {exc}") from None
        outcomes.append(download_chunk(session, trace, rung, config, ladder, manifest))
    record = SessionRecord(tuple(o.rung for o in outcomes), tuple(o.rebuffer_s for o in outcomes))
    return SessionResult(record, outcomes, observations, session_qoe(get_metric(metric), ladder, record),
                         session.clock_s, session.buffer_s)


LOG_COLUMNS = ("index", "rung", "bits", "download_time_s", "rebuffer_s", "pause_s", "buffer_after_s")


def session_log_csv(outcomes: Sequence[ChunkOutcome]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for o in outcomes:
        w.writerow([o.index, o.rung, repr(float(o.chunk_bits)), repr(o.download_time_s), repr(o.rebuffer_s),
                    repr(o.pause_s), repr(o.buffer_after_s)])
    return buf.getvalue()


def clock_residual(result: SessionResult, config: SimConfig) -> float:
    """Played media + stalls + leftover buffer minus wall clock; ~0 always."""
    played = len(result.outcomes) * config.chunk_duration_s - result.residual_buffer_s
    return played + result.total_rebuffer_s - result.clock_s
