"""
Throughput traces
=================

Build, synthesise, window and convert the link traces every other part of
the package runs on.
"""

import numpy as np

from abr5g import scenarios
from abr5g.traces import (
    ThroughputTrace, from_mahimahi, integrate_bits, parse_csv, random_window, synthesize, to_mahimahi,
)

# a trace is a step function: rate k kbps from t_ms[k] until the next step; kbps is also bits per ms
tr = ThroughputTrace([0, 1000, 2500], [40_000, 5_000, 120_000], duration_ms=4000, name="handover")
print(tr.summary())

# the link loops, so 5 s into a 4 s trace is back in the first step
print("rate at 5.0 s:", tr.rate_at(5.0), "kbps")
print("bits in [0.5 s, 3.0 s):", integrate_bits(tr, 0.5, 3.0))
print("time to push 36 Mbit from t=0.9 s:", round(tr.time_to_deliver(0.9, 36e6), 4), "s")

# CSV in, CSV out (timestamp_ms,throughput_kbps; one header line allowed)
text = "timestamp_ms,throughput_kbps\n0,1500\n1000,2200\n2000,0\n3000,900\n"
walk = parse_csv(text, name="walk")
print(walk.to_csv())

# Mahimahi: one line per 1500-byte packet opportunity, stamped in ms
stamps = to_mahimahi(walk)
print(len(stamps), "packets; first few:", stamps[:5])
back = from_mahimahi(stamps, bucket_ms=1000, duration_ms=walk.duration_ms)
print("round trip kbps:", back.kbps.tolist())  # each bucket within one packet (12 kbps at 1 s buckets)

# band-switching synthesis: a Markov jump chain over frequency bands
spec = scenarios.scenario_spec("suburban_train", seed=3)
for state in spec.states:
    print(f"  {state.name:14s} {state.mean_kbps:>9.0f} kbps  dwell {state.mean_dwell_s:>4.0f} s")
train = synthesize(spec)
print(train.name, train.summary())

# identical seeds give identical traces
assert np.array_equal(synthesize(spec).kbps, train.kbps)

# the evaluation picks a random 15 minute window; the start is what gets logged
start, window = random_window(scenarios.scenario_trace("driving"), 300.0, np.random.default_rng(0))
print(f"window starts at {start:.0f} s, mean {window.mean_kbps:.0f} kbps")

# the built-in scenario families
for name, t in scenarios.evaluation_suite().items():
    s = t.summary()
    print(f"{name:15s} mean {s['mean_kbps'] / 1000:7.1f} Mbps   min {s['min_kbps'] / 1000:6.1f}   "
          f"max {s['max_kbps'] / 1000:7.1f}")
