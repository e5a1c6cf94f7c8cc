"""
QoE metrics
===========

Session scores on the 10-rung UHD ladder, the downgrade-only smoothness
term, and normalising a set of results against a reference.
"""

from abr5g.qoe import (
    DEFAULT_LADDER as L, METRIC_IDS, METRICS, SessionRecord, chunk_reward, normalize_scores, quality, session_qoe,
    session_qoe_legacy, youtube_reference,
)

print(L)
for m in METRIC_IDS:
    q = [round(quality(m, L, r), 2) for r in range(len(L))]
    print(f"{m:11s} mu={METRICS[m].mu:<5} {q}")

# 1080p, 2160p, 1080p with half a second of stall on the middle chunk
rec = SessionRecord((5, 7, 5), (0.0, 0.5, 0.0))
print("hd, downgrades only :", session_qoe("hd", L, rec))          # 12.5 + 25 + 12.5 - 12 - 12.5
print("hd, every switch    :", session_qoe_legacy("hd", L, rec))   # the upgrade is charged too

# per-chunk terms; training uses a heavier stall penalty (80 instead of 24)
print(chunk_reward("hd", L, None, 9, 0.0, mu_override=80), chunk_reward("hd", L, None, 9, 1.0, mu_override=80))

# a steady climb is free under the new smoothness term
climb = SessionRecord(tuple(range(10)), (0.0,) * 10)
print("climb:", session_qoe("tv", L, climb), "vs", session_qoe_legacy("tv", L, climb))

# normalise against a reference algorithm; signs survive
print(normalize_scores({"bb": 8000.0, "mpc": 9100.0, "pensieve_5g": 9500.0, "stally": -950.0}, "pensieve_5g"))

# where the ladder came from
for row in youtube_reference()["rows"]:
    print(row)
