"""Bitrate ladder, QoE metrics and session scoring.

Session QoE follows the downgrade-only smoothness form::

    QoE = sum q(R_n) - mu * sum T_n - sum_{n<N} S_n * (q(R_n) - q(R_{n+1}))

where ``S_n`` is 1 only when quality drops. The legacy form penalises
``|q(R_{n+1}) - q(R_n)|`` in both directions.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateReference, EmptyRecord, InvalidRung


@dataclass(frozen=True)
class Representation:
    rung: int
    vertical_resolution: int
    bitrate_kbps: float

    @property
    def label(self) -> str:
        return f"{self.vertical_resolution}p"


class BitrateLadder:
    """Ordered quality rungs; bitrate and resolution strictly increase."""

    def __init__(self, representations: Sequence):
        reps = []
        for i, r in enumerate(representations):
            if not isinstance(r, Representation):
                res, rate = r
                r = Representation(i, int(res), float(rate))
            reps.append(r)
        if not reps:
            raise ValueError("ladder needs at least one representation")
        for i, r in enumerate(reps):
            if r.rung != i:
                raise ValueError(f"representation {i} carries rung {r.rung}")
            if r.bitrate_kbps <= 0:
                raise ValueError("bitrates must be positive")
        for a, b in zip(reps, reps[1:]):
            if b.bitrate_kbps <= a.bitrate_kbps or b.vertical_resolution <= a.vertical_resolution:
                raise ValueError("ladder must be strictly increasing in bitrate and resolution")
        self.representations = tuple(reps)
        self.bitrates_kbps = np.array([r.bitrate_kbps for r in reps])
        self.resolutions = np.array([r.vertical_resolution for r in reps])
        self.bitrates_kbps.setflags(write=False)
        self.resolutions.setflags(write=False)

    def __len__(self):
        return len(self.representations)

    def __getitem__(self, rung):
        return self.representations[self.check(rung)]

    def __iter__(self):
        return iter(self.representations)

    def __eq__(self, other):
        return isinstance(other, BitrateLadder) and self.representations == other.representations

    def __hash__(self):
        return hash(self.representations)

    def __repr__(self):
        inner = ", ".join(f"{r.label}@{r.bitrate_kbps:g}" for r in self)
        return f"BitrateLadder({inner})"

    @property
    def top(self) -> int:
        return len(self) - 1

    def check(self, rung) -> int:
        if isinstance(rung, (bool, np.bool_)) or not isinstance(rung, (int, np.integer)):
            raise InvalidRung(f"rung must be an integer, got {rung!r}")
        if not 0 <= rung < len(self):
            raise InvalidRung(f"rung {rung} outside 0..{len(self) - 1}")
        return int(rung)

    def subset(self, rungs: Sequence[int]) -> "BitrateLadder":
        return BitrateLadder([(self[r].vertical_resolution, self[r].bitrate_kbps) for r in rungs])

    def to_list(self) -> list:
        return [[r.vertical_resolution, r.bitrate_kbps] for r in self]


DEFAULT_LADDER = BitrateLadder([
    (144, 100), (240, 300), (360, 500), (480, 1000), (720, 2000),
    (1080, 4000), (1440, 8000), (2160, 18000), (2880, 28000), (4320, 37500),
])


@dataclass(frozen=True)
class QoeMetric:
    """A quality function plus its rebuffer penalty ``mu`` (per second).

    ``kind`` is one of ``lin`` (bitrate in Mbps), ``log`` (ln of bitrate over
    the lowest rung), ``hd`` (50 * resolution / 4320) or ``table`` (explicit
    score per vertical resolution).
    """

    id: str
    kind: str
    mu: float
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("lin", "log", "hd", "table"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.kind == "table" and not self.table:
            raise ValueError("table metric needs a score table")
        object.__setattr__(self, "table", tuple((int(k), float(v)) for k, v in dict(self.table).items()))

    def values(self, ladder: BitrateLadder = DEFAULT_LADDER) -> np.ndarray:
        """q for every rung of ``ladder``."""
        if self.kind == "lin":
            return ladder.bitrates_kbps / 1000.0
        if self.kind == "log":
            return np.log(ladder.bitrates_kbps / ladder.bitrates_kbps[0])
        if self.kind == "hd":
            return 50.0 * ladder.resolutions / 4320.0
        scores = dict(self.table)
        try:
            return np.array([scores[int(res)] for res in ladder.resolutions], dtype=float)
        except KeyError as exc:
            raise InvalidRung(f"metric {self.id!r} has no score for {exc.args[0]}p") from None


def _table(*scores):
    return tuple(zip((144, 240, 360, 480, 720, 1080, 1440, 2160, 2880, 4320), scores))


METRICS = {
    "lin": QoeMetric("lin", "lin", 37.5),
    "log": QoeMetric("log", "log", 5.93),
    "hd": QoeMetric("hd", "hd", 24.0),
    "smartphone": QoeMetric("smartphone", "table", 25.0, _table(1, 10, 25, 35, 42, 45, 47, 48, 49, 50)),
    "tv": QoeMetric("tv", "table", 45.0, _table(1, 8, 18, 24, 30, 35, 42, 46, 48, 50)),
    "vr": QoeMetric("vr", "table", 50.0, _table(1, 6, 14, 18, 25, 32, 38, 42, 46, 50)),
}
METRIC_IDS = tuple(METRICS)


def get_metric(metric) -> QoeMetric:
    if isinstance(metric, QoeMetric):
        return metric
    try:
        return METRICS[metric]
    except KeyError:
        raise KeyError(f"unknown QoE metric {metric!r}; choose from {', '.join(METRICS)}") from None


@dataclass(frozen=True)
class SessionRecord:
    """Per-chunk rung and stall time of one playback session."""

    rungs: tuple
    rebuffers_s: tuple

    def __post_init__(self):
        rungs = tuple(int(r) for r in self.rungs)
        reb = tuple(float(t) for t in self.rebuffers_s)
        if len(rungs) != len(reb):
            raise ValueError("rungs and rebuffers must have equal length")
        if any(t < 0 or not math.isfinite(t) for t in reb):
            raise ValueError("rebuffer times must be finite and non-negative")
        object.__setattr__(self, "rungs", rungs)
        object.__setattr__(self, "rebuffers_s", reb)

    @classmethod
    def from_chunks(cls, chunks) -> "SessionRecord":
        chunks = list(chunks)
        return cls(tuple(c[0] for c in chunks), tuple(c[1] for c in chunks))

    def __len__(self):
        return len(self.rungs)

    @property
    def total_rebuffer_s(self) -> float:
        return float(sum(self.rebuffers_s))

    def switches(self) -> tuple[int, int]:
        """(downward, upward) rung switch counts."""
        d = np.diff(self.rungs)
        return int(np.sum(d < 0)), int(np.sum(d > 0))


def quality(metric, ladder: BitrateLadder, rung: int) -> float:
    rung = ladder.check(rung)
    return float(get_metric(metric).values(ladder)[rung])


def downgrade_indicator(q_prev: float, q_next: float) -> int:
    return 1 if q_next < q_prev else 0


def chunk_reward(metric, ladder: BitrateLadder, prev_rung, rung, rebuffer_s: float,
                 mu_override: float | None = None) -> float:
    """Reward of one chunk; the first chunk (``prev_rung is None``) has no
    smoothness term."""
    m = get_metric(metric)
    mu = m.mu if mu_override is None else mu_override
    q = quality(m, ladder, rung)
    if prev_rung is None:
        return q - mu * rebuffer_s
    q_prev = quality(m, ladder, prev_rung)
    s = downgrade_indicator(q_prev, q)
    return q - mu * rebuffer_s - s * (q_prev - q)


def _terms(metric, ladder, record):
    if len(record) == 0:
        raise EmptyRecord("session record has no chunks")
    m = get_metric(metric)
    for r in record.rungs:
        ladder.check(r)
    q = m.values(ladder)[np.asarray(record.rungs)]
    return m, q, np.asarray(record.rebuffers_s)


def chunk_rewards(metric, ladder: BitrateLadder, record: SessionRecord,
                  mu_override: float | None = None, legacy: bool = False) -> np.ndarray:
    """Per-chunk reward terms of a session, in playback order."""
    m, q, t = _terms(metric, ladder, record)
    mu = m.mu if mu_override is None else mu_override
    drops = np.zeros_like(q)
    drops[1:] = q[:-1] - q[1:]
    penalty = np.abs(drops) if legacy else np.maximum(drops, 0.0)
    return (q - mu * t) - penalty


def session_qoe(metric, ladder: BitrateLadder, record: SessionRecord,
                mu_override: float | None = None) -> float:
    # fsum is exact, so any ordering of the same chunk terms gives the same total
    return math.fsum(chunk_rewards(metric, ladder, record, mu_override))


def session_qoe_legacy(metric, ladder: BitrateLadder, record: SessionRecord,
                       mu_override: float | None = None) -> float:
    return math.fsum(chunk_rewards(metric, ladder, record, mu_override, legacy=True))


def normalize_scores(scores: Mapping[str, float], reference: str) -> dict:
    """Divide every score by the reference algorithm's score."""
    if reference not in scores:
        raise KeyError(f"reference {reference!r} missing from scores")
    ref = scores[reference]
    if ref == 0 or not math.isfinite(ref):
        raise DegenerateReference(f"reference {reference!r} scored {ref}")
    return {k: (1.0 if k == reference else v / ref) for k, v in scores.items()}


# --- config documents -------------------------------------------------------

def ladder_from_config(doc) -> BitrateLadder:
    """Build a ladder from ``[[resolution, kbps], ...]`` or ``{"ladder": ...}``."""
    if isinstance(doc, Mapping):
        doc = doc["ladder"]
    return BitrateLadder([tuple(x) for x in doc])


def metrics_from_config(doc: Mapping) -> dict:
    """Built-in metrics with overrides applied.

    Each entry of ``doc["metrics"]`` is ``{"id", "kind", "mu", "table"?}``;
    ``table`` maps vertical resolution (as a string or int) to a score. Giving
    only ``id`` and ``mu`` overrides the penalty of a built-in.
    """
    out = dict(METRICS)
    for entry in doc.get("metrics", []):
        mid = entry["id"]
        base = out.get(mid)
        kind = entry.get("kind", base.kind if base else None)
        mu = float(entry.get("mu", base.mu if base else 0))
        table = entry.get("table", dict(base.table) if base else {})
        out[mid] = QoeMetric(mid, kind, mu, tuple((int(k), v) for k, v in dict(table).items()))
    return out


def youtube_reference() -> dict:
    """Median AV1 bitrates and buffer lengths observed on YouTube (reference only)."""
    text = resources.files("abr5g.data").joinpath("youtube_reference.json").read_text(encoding="utf-8")
    return json.loads(text)
