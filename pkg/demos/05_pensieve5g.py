"""
Training the actor-critic policy
================================

A short desk-scale run: 8 workers, one 100-chunk session each per epoch,
best checkpoint chosen on held-out traces. Set EPOCHS higher for a real
run (the acceptance suite uses 2,000).
"""

import os
import time

import numpy as np

from abr5g import scenarios
from abr5g.abr import make_policy
from abr5g.rl.agent import RLPolicy, TrainConfig, normalize_observation, train
from abr5g.rl.network import PolicyNetwork, gradient_check
from abr5g.simulator import SimConfig, StreamSession, observe, run_session
from abr5g.traces import constant_trace

EPOCHS = int(os.environ.get("EPOCHS", 200))

# the hand-written backprop, checked against finite differences
net = PolicyNetwork(seed=0)
bundle = normalize_observation(observe(StreamSession(), SimConfig()))
print({k: v for k, v in gradient_check(net, bundle).items() if "error" in k})

# sanity run: a 200 Mbps link, where the right answer is always the top rung
fast = constant_trace(200_000, 900)
t = time.monotonic()
res = train([fast], SimConfig(total_chunks=100), TrainConfig(epochs=min(EPOCHS, 300), seed=1), validation=[fast])
pol = RLPolicy.from_checkpoint(res.best)
print(f"oversupplied link: mean rung {run_session(fast, pol).mean_rung:.2f} "
      f"(best epoch {res.best.epoch}, {time.monotonic() - t:.0f} s)")

# the real thing: SA scenarios plus a slice of LTE-like traces
t = time.monotonic()
res = train(scenarios.training_traces(), SimConfig(total_chunks=100), TrainConfig(epochs=EPOCHS, seed=0),
            validation=scenarios.validation_traces(), eval_sim=SimConfig(), lte_traces=scenarios.lte_traces())
print(f"trained {EPOCHS} epochs in {time.monotonic() - t:.0f} s; validation by checkpoint:")
print([(c.epoch, round(c.validation_qoe)) for c in res.checkpoints])

pol = RLPolicy.from_checkpoint(res.best)
for name, tr in scenarios.evaluation_suite().items():
    rl = run_session(tr, pol)
    bb = run_session(tr, make_policy("bb"))
    print(f"{name:15s} rl {rl.qoe:8.0f} (rung {rl.mean_rung:.1f})   bb {bb.qoe:8.0f}")

entropy = np.mean([r["entropy"] for r in res.log_rows if "entropy" in r][-20:])
print(f"policy entropy over the last 20 epochs: {entropy:.2f} (uniform is {np.log(10):.2f})")
