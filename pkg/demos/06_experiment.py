"""
An evaluation matrix
====================

The pipeline behind ``abr5g eval`` and ``abr5g report``, driven from
Python: scenarios times algorithms, every metric, normalised tables and
plot data on disk.
"""

import json
import tempfile
from pathlib import Path

from abr5g.experiment import ExperimentPlan, report, run_plan, write_outputs

plan = ExperimentPlan.from_dict({
    "seed": 11,
    "scenarios": [
        {"name": "tram", "synthetic": "streetcar", "window": {"duration_s": 400}},
        {"name": "gig", "synthetic": "concert", "window": {"duration_s": 400}},
    ],
    "algorithms": ["bb", "rb", "bola", {"name": "mpc3", "kind": "mpc", "params": {"horizon": 3}}],
    "metrics": ["hd", "smartphone", "vr"],
    "sim": {"total_chunks": 120},
    "reference": "mpc3",
})

cells, windows = run_plan(plan)
print(json.dumps(windows, indent=1))

out = Path(tempfile.mkdtemp(prefix="abr5g_"))
summary = write_outputs(out, plan, cells, windows)
print(sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()))
print((out / "results.csv").read_text().splitlines()[:4])

# re-normalise against another algorithm without re-running anything
doc = report(out, reference="bola")
for metric, table in doc["tables"].items():
    print(metric, {s: {a: round(v, 3) for a, v in row.items()} for s, row in table.items()})
print(doc["aggregates"])
