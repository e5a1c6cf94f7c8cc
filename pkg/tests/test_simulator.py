import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abr5g.abr import Fixed
from abr5g.errors import DeadTrace, InvalidRung, PolicyFault, SessionComplete
from abr5g.qoe import DEFAULT_LADDER as L, get_metric, session_qoe
from abr5g.simulator import (
    HISTORY_LEN, LOG_COLUMNS, Manifest, SimConfig, StreamSession, chunk_size_bits, clock_residual,
    download_chunk, observe, reset, run_session, session_log_csv,
)
from abr5g.traces import ThroughputTrace, constant_trace

EXACT = SimConfig(payload_efficiency=1.0)


def brute_download_time(trace, cursor_s, bits, cfg):
    """Step the link one millisecond at a time (ms-aligned traces and cursors)."""
    rtt_ms = cfg.link_rtt_ms
    need = bits / cfg.payload_efficiency
    t = int(round(cursor_s * 1000)) + rtt_ms
    per_ms = np.repeat(trace.kbps, np.diff(np.append(trace.t_ms, trace.duration_ms)))
    got, ms = 0.0, 0
    while got < need - 1e-9:
        got += per_ms[(t + ms) % trace.duration_ms]
        ms += 1
    return (rtt_ms + ms) / 1000.0


def test_chunk_sizes():
    cfg = SimConfig()
    assert chunk_size_bits(L, 7, cfg) == 36_000_000
    assert chunk_size_bits(L, 0, cfg) == 200_000
    m = Manifest({(7, 9): 70_000_000})
    assert chunk_size_bits(L, 9, cfg, 7, m) == 70_000_000
    assert chunk_size_bits(L, 9, cfg, 8, m) == 75_000_000
    with pytest.raises(InvalidRung):
        chunk_size_bits(L, 10, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(buffer_capacity_s=1.0)
    with pytest.raises(ValueError):
        SimConfig(payload_efficiency=0)
    with pytest.raises(ValueError):
        SimConfig.from_dict({"bogus": 1})
    assert SimConfig.from_dict(SimConfig().to_dict()) == SimConfig()


def test_download_with_ample_buffer():
    s = StreamSession(buffer_s=3.0)
    out = download_chunk(s, constant_trace(36_000, 10), 7, EXACT)
    assert out.download_time_s == pytest.approx(1.08)
    assert out.rebuffer_s == 0
    assert out.buffer_after_s == pytest.approx(3.92)


def test_download_with_stall():
    s = StreamSession(buffer_s=0.5)
    out = download_chunk(s, constant_trace(36_000, 10), 7, EXACT)
    assert out.rebuffer_s == pytest.approx(0.58)
    assert out.buffer_after_s == pytest.approx(2.0)


def test_pause_on_full():
    s = StreamSession(buffer_s=23.5)
    out = download_chunk(s, constant_trace(10_000, 10), 0, EXACT)
    assert out.download_time_s == pytest.approx(0.1)
    assert out.pause_s == 2.0
    assert out.buffer_after_s == pytest.approx(23.4)
    assert s.clock_s == pytest.approx(2.1)
    assert s.cursor_s == pytest.approx(2.1)


def test_session_complete():
    cfg = SimConfig(total_chunks=1)
    s = StreamSession()
    download_chunk(s, constant_trace(1000), 0, cfg)
    with pytest.raises(SessionComplete):
        download_chunk(s, constant_trace(1000), 0, cfg)


def test_oversupplied_lowest_rung():
    res = run_session(constant_trace(200_000, 900), Fixed(L, 0))
    assert set(res.record.rungs) == {0}
    assert res.total_rebuffer_s == pytest.approx(0.082, abs=0.001)  # startup fetch only
    assert all(t == 0 for t in res.record.rebuffers_s[1:])
    assert len(res.record) == 390


def test_dead_air_prefix():
    tr = ThroughputTrace([0, 10_000], [0, 500_000], duration_ms=900_000)
    res = run_session(tr, Fixed(L, 9), config=SimConfig(total_chunks=5))
    assert res.record.rebuffers_s[0] >= 10 - 1e-9


def test_dead_trace_refused():
    with pytest.raises(DeadTrace):
        run_session(ThroughputTrace([0], [0.0], duration_ms=1000), Fixed(L, 0))


class Wild:
    def decide(self, obs):
        return 10 if obs.chunks_remaining < 5 else 3


def test_policy_fault_names_chunk():
    with pytest.raises(PolicyFault, match="chunk 386"):
        run_session(constant_trace(50_000, 900), Wild())


def test_run_is_deterministic():
    tr = ThroughputTrace(np.arange(0, 900_000, 1000), np.random.default_rng(1).uniform(0, 60_000, 900))
    a = run_session(tr, Fixed(L, 8))
    b = run_session(tr, Fixed(L, 8))
    assert a.outcomes == b.outcomes and a.observations == b.observations


def test_reset():
    s = StreamSession(clock_s=5, buffer_s=7, next_chunk=3, last_rung=2, cursor_s=5, throughputs_kbps=[1.0])
    reset(s, SimConfig())
    assert (s.buffer_s, s.clock_s, s.next_chunk, s.last_rung, s.throughputs_kbps) == (0, 0, 0, None, [])
    tr = constant_trace(20_000, 900)
    cfg = SimConfig(total_chunks=20)
    fresh = StreamSession()
    used = StreamSession()
    for _ in range(5):
        download_chunk(used, tr, 4, cfg)
    reset(used, cfg)
    for _ in range(20):
        assert download_chunk(used, tr, 6, cfg) == download_chunk(fresh, tr, 6, cfg)


def test_observation_padding():
    s = StreamSession()
    cfg = SimConfig()
    tr = constant_trace(20_000, 900)
    first = observe(s, cfg)
    assert first.past_throughputs_kbps == (0.0,) * HISTORY_LEN and first.last_rung is None
    assert first.chunks_remaining == 390 and len(first.next_chunk_bits) == 10
    for _ in range(3):
        download_chunk(s, tr, 2, cfg)
    obs = observe(s, cfg)
    assert obs.past_throughputs_kbps[:5] == (0.0,) * 5 and all(x > 0 for x in obs.past_throughputs_kbps[5:])
    assert obs.last_rung == 2


def test_session_log_columns():
    res = run_session(constant_trace(30_000, 900), Fixed(L, 5), config=SimConfig(total_chunks=4))
    text = session_log_csv(res.outcomes)
    lines = text.splitlines()
    assert lines[0] == ",".join(LOG_COLUMNS) and len(lines) == 5


traces = st.lists(st.integers(0, 60_000), min_size=1, max_size=10).filter(any).map(
    lambda r: ThroughputTrace(np.arange(len(r)) * 250, [float(x) for x in r]))


@settings(max_examples=200, deadline=None)
@given(traces, st.integers(0, 9), st.integers(0, 5_000), st.floats(0, 24))
def test_download_time_matches_ms_oracle(tr, rung, cursor_ms, buffer_s):
    cfg = SimConfig()
    s = StreamSession(buffer_s=buffer_s, cursor_s=cursor_ms / 1000)
    bits = chunk_size_bits(L, rung, cfg)
    out = download_chunk(s, tr, rung, cfg)
    assert abs(out.download_time_s - brute_download_time(tr, cursor_ms / 1000, bits, cfg)) <= 0.002
    assert out.rebuffer_s == pytest.approx(max(0.0, out.download_time_s - buffer_s))


class RandomPolicy:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.buffers = []

    def decide(self, obs):
        self.buffers.append(obs.buffer_s)
        return int(self.rng.integers(0, 10))


@settings(max_examples=40, deadline=None)
@given(traces, st.integers(0, 1000))
def test_session_invariants(tr, seed):
    cfg = SimConfig(total_chunks=60)
    pol = RandomPolicy(seed)
    res = run_session(tr, pol, config=cfg)
    assert max(pol.buffers) <= cfg.buffer_capacity_s
    assert all(o.buffer_after_s >= 0 for o in res.outcomes)
    assert abs(clock_residual(res, cfg)) < 1e-6
    if res.total_rebuffer_s == 0:
        total = sum(o.download_time_s + o.pause_s for o in res.outcomes)
        assert res.clock_s == pytest.approx(total, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(traces, st.integers(0, 8), st.integers(0, 5_000))
def test_higher_rung_never_faster(tr, rung, cursor_ms):
    cfg = SimConfig()
    lo = download_chunk(StreamSession(cursor_s=cursor_ms / 1000), tr, rung, cfg)
    hi = download_chunk(StreamSession(cursor_s=cursor_ms / 1000), tr, rung + 1, cfg)
    assert hi.download_time_s >= lo.download_time_s


@settings(max_examples=100, deadline=None)
@given(traces, st.integers(0, 9), st.floats(1, 20))
def test_faster_link_never_slower(tr, rung, k):
    cfg = SimConfig()
    base = download_chunk(StreamSession(), tr, rung, cfg)
    fast = download_chunk(StreamSession(), tr.scaled(k), rung, cfg)
    assert cfg.link_rtt_ms / 1000 <= fast.download_time_s <= base.download_time_s + 1e-12


def test_reward_plumbing_matches_metric():
    tr = ThroughputTrace(np.arange(0, 900_000, 1000), np.random.default_rng(3).uniform(0, 40_000, 900))
    res = run_session(tr, RandomPolicy(2), config=SimConfig(total_chunks=80), metric="vr")
    assert res.qoe == session_qoe(get_metric("vr"), L, res.record)
