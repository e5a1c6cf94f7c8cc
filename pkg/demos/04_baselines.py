"""
Conventional ABR baselines
==========================

Buffer-based, rate-based, BOLA, MPC and robustMPC on the synthetic 5G
scenarios, scored with QoE_HD. MPC enumerates every 5-chunk plan at each
decision; the whole table takes about a minute.
"""

import time

from abr5g import scenarios
from abr5g.abr import CONVENTIONAL, bb_decide, make_policy, mpc_decide, rb_decide
from abr5g.simulator import SimConfig, StreamSession, observe, run_session

# single decisions first
print("BB at 12 s of buffer ->", bb_decide(12.0))
print("RB at 4 Mbps ->", rb_decide([4000] * 8))
o = observe(StreamSession(buffer_s=2.0, last_rung=5, throughputs_kbps=[5000.0] * 8), SimConfig())
print("MPC, one step, 5 Mbps, 2 s buffer ->", mpc_decide(o, horizon=1))

suite = scenarios.evaluation_suite()
print(f"{'':15s}" + "".join(f"{k:>12s}" for k in CONVENTIONAL))
for name, tr in suite.items():
    t = time.monotonic()
    cells = []
    for kind in CONVENTIONAL:
        res = run_session(tr, make_policy(kind))
        cells.append(f"{res.qoe:8.0f}/{res.mean_rung:3.1f}")
    print(f"{name:15s}" + "".join(f"{c:>12s}" for c in cells), f"  ({time.monotonic() - t:.0f} s)")
# cells are QoE_HD / mean rung
