"""
Chunk-level streaming simulator
===============================

Download chunks over a looping trace with an RTT, a payload efficiency,
a 24 s buffer and a 2 s pause whenever the buffer would overflow.
"""

from abr5g.abr import Fixed
from abr5g.qoe import DEFAULT_LADDER as L
from abr5g.simulator import SimConfig, StreamSession, download_chunk, observe, run_session, session_log_csv
from abr5g.traces import constant_trace

cfg = SimConfig()
print(cfg)

# one 2160p chunk (36 Mbit) over a 36 Mbps link with 3 s already buffered
s = StreamSession(buffer_s=3.0)
out = download_chunk(s, constant_trace(36_000, 10), 7, SimConfig(payload_efficiency=1.0))
print(out)

# a nearly full buffer: the player waits 2 s before the next request
s = StreamSession(buffer_s=23.5)
out = download_chunk(s, constant_trace(10_000, 10), 0, SimConfig(payload_efficiency=1.0))
print(f"pause {out.pause_s} s, buffer after {out.buffer_after_s:.2f} s, clock {s.clock_s:.2f} s")

# what a policy sees before each decision
print(observe(s, cfg))

# a whole session at a fixed rung; the only stall is the startup fetch
res = run_session(constant_trace(200_000, 900), Fixed(L, 9))
print(f"qoe {res.qoe:.1f}, mean rung {res.mean_rung}, rebuffer {res.total_rebuffer_s:.3f} s, "
      f"{len(res.record)} chunks, {res.clock_s:.0f} s of wall clock")

# squeeze the link and the top rung starts to stall
res = run_session(constant_trace(30_000, 900), Fixed(L, 9))
print(f"30 Mbps at 8K: rebuffer {res.total_rebuffer_s:.1f} s, qoe {res.qoe:.0f}")

print(session_log_csv(res.outcomes[:4]))
