"""Evaluation matrix: scenarios x algorithms x metrics.

A plan is a JSON document::

    {
      "seed": 0,
      "scenarios": [
        {"name": "driving", "synthetic": "driving", "window": {"duration_s": 900}},
        {"name": "office", "trace": "traces/office.csv", "window": {"start_s": 120}}
      ],
      "algorithms": ["bb", "mpc", {"name": "pensieve_5g", "kind": "rl", "checkpoint": "ck.bin"}],
      "metrics": ["hd", "smartphone"],
      "sim": {"total_chunks": 390},
      "reference": "pensieve_5g",
      "pensieve_baseline": "pensieve"
    }

``synthetic`` is a built-in scenario name or an inline synthetic spec.
Windows without ``start_s`` are placed at random with a generator seeded
from the plan seed and the scenario's position; the chosen start is written
to the summary. Relative paths resolve against the plan file's directory.

Each (scenario, algorithm) session runs once; every metric is scored from
the same chunk record.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import scenarios
from .abr import CONVENTIONAL, make_policy
from .errors import DegenerateReference, PolicyFault
from .qoe import DEFAULT_LADDER, METRIC_IDS, normalize_scores, session_qoe
from .simulator import SimConfig, run_session, session_log_csv
from .traces import SyntheticSpec, parse_csv, slice_window, synthesize, random_window

log = logging.getLogger(__name__)

RL_KINDS = ("rl",)
RESULT_COLUMNS = ("scenario", "algorithm", "metric", "qoe", "rebuffer_s", "mean_rung",
                  "switches_down", "switches_up", "normalized", "status")


class PlanError(ValueError):
    """The plan document is inconsistent or references missing files."""


@dataclass(frozen=True)
class ScenarioEntry:
    name: str
    trace: str | None = None
    synthetic: object = None
    start_s: float | None = None
    duration_s: float = 900.0


@dataclass(frozen=True)
class AlgorithmEntry:
    name: str
    kind: str
    checkpoint: str | None = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentPlan:
    scenarios: tuple
    algorithms: tuple
    metrics: tuple
    sim: SimConfig = SimConfig()
    seed: int = 0
    reference: str | None = None
    pensieve_baseline: str | None = None
    base_dir: str = "."

    def __post_init__(self):
        if not self.scenarios or not self.algorithms or not self.metrics:
            raise PlanError("a plan needs at least one scenario, algorithm and metric")
        for label, names in (("scenario", [s.name for s in self.scenarios]),
                             ("algorithm", [a.name for a in self.algorithms])):
            dupes = sorted({n for n in names if names.count(n) > 1})
            if dupes:
                raise PlanError(f"duplicate {label} names: {dupes}")
        unknown = [m for m in self.metrics if m not in METRIC_IDS]
        if unknown:
            raise PlanError(f"unknown metrics {unknown}; known: {list(METRIC_IDS)}")
        algos = {a.name for a in self.algorithms}
        for role in ("reference", "pensieve_baseline"):
            name = getattr(self, role)
            if name is not None and name not in algos:
                raise PlanError(f"{role} {name!r} is not one of the plan's algorithms")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @classmethod
    def from_dict(cls, doc: Mapping, base_dir=".") -> "ExperimentPlan":
        try:
            scen = []
            for s in doc["scenarios"]:
                window = s.get("window", {})
                if (s.get("trace") is None) == (s.get("synthetic") is None):
                    raise PlanError(f"scenario {s.get('name')!r} needs exactly one of 'trace' or 'synthetic'")
                scen.append(ScenarioEntry(s["name"], s.get("trace"), s.get("synthetic"),
                                          window.get("start_s"), float(window.get("duration_s", 900.0))))
            algos = []
            for a in doc["algorithms"]:
                if isinstance(a, str):
                    a = {"name": a, "kind": a}
                kind = a.get("kind", a["name"])
                if kind not in CONVENTIONAL + RL_KINDS + ("fixed",):
                    raise PlanError(f"unknown algorithm kind {kind!r}")
                if kind in RL_KINDS and not a.get("checkpoint"):
                    raise PlanError(f"rl algorithm {a['name']!r} needs a checkpoint")
                algos.append(AlgorithmEntry(a["name"], kind, a.get("checkpoint"), dict(a.get("params", {}))))
            return cls(tuple(scen), tuple(algos), tuple(doc["metrics"]), SimConfig.from_dict(doc.get("sim")),
                       int(doc.get("seed", 0)), doc.get("reference"), doc.get("pensieve_baseline"), str(base_dir))
        except KeyError as exc:
            raise PlanError(f"plan is missing {exc}") from None
        except TypeError as exc:
            raise PlanError(f"malformed plan: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise PlanError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc, path.parent)

    def with_seed(self, seed: int) -> "ExperimentPlan":
        return ExperimentPlan(self.scenarios, self.algorithms, self.metrics, self.sim, seed,
                              self.reference, self.pensieve_baseline, self.base_dir)

    def check_files(self):
        """Raise PlanError for any trace or checkpoint that does not exist."""
        for s in self.scenarios:
            if s.trace is not None and not self.resolve(s.trace).is_file():
                raise PlanError(f"scenario {s.name!r}: trace file {s.trace} not found")
        for a in self.algorithms:
            if a.checkpoint is not None and not self.resolve(a.checkpoint).is_file():
                raise PlanError(f"algorithm {a.name!r}: checkpoint {a.checkpoint} not found")


# --- scenario materialisation -----------------------------------------------

def scenario_source(plan: ExperimentPlan, entry: ScenarioEntry):
    if entry.trace is not None:
        path = plan.resolve(entry.trace)
        return parse_csv(path.read_text(encoding="utf-8"), name=entry.name)
    syn = entry.synthetic
    if isinstance(syn, str):
        spec = scenarios.scenario_spec(syn, scenarios.EVAL_SEED)
    else:
        spec = SyntheticSpec.from_dict(syn)
    return synthesize(spec)


def window_seed(plan_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([plan_seed, index]).generate_state(1)[0])


def materialise(plan: ExperimentPlan, index: int):
    """Return ``(trace, window_record)`` for scenario ``index``."""
    entry = plan.scenarios[index]
    source = scenario_source(plan, entry)
    if entry.start_s is None:
        seed = window_seed(plan.seed, index)
        start, trace = random_window(source, entry.duration_s, np.random.default_rng(seed))
    else:
        seed = None
        start = float(entry.start_s)
        trace = slice_window(source, start, entry.duration_s)
    return trace, {"scenario": entry.name, "start_s": start, "duration_s": entry.duration_s,
                   "window_seed": seed, "mean_kbps": trace.mean_kbps}


def build_policy(plan: ExperimentPlan, algo: AlgorithmEntry):
    if algo.kind in RL_KINDS:
        from .rl.agent import RLPolicy

        return RLPolicy.from_checkpoint(str(plan.resolve(algo.checkpoint)), DEFAULT_LADDER, plan.sim)
    return make_policy(algo.kind, DEFAULT_LADDER, plan.sim, **algo.params)


# --- running ------------------------------------------------------------------

@dataclass
class CellResult:
    scenario: str
    algorithm: str
    status: str
    scores: dict
    rebuffer_s: float = math.nan
    mean_rung: float = math.nan
    switches: tuple = (0, 0)
    log_csv: str = ""
    error: str = ""


def run_cell(plan: ExperimentPlan, trace, scenario: str, algo: AlgorithmEntry) -> CellResult:
    policy = build_policy(plan, algo)
    try:
        result = run_session(trace, policy, DEFAULT_LADDER, plan.sim)
    except PolicyFault as exc:
        log.error("%s / %s failed: %s", scenario, algo.name, exc)
        return CellResult(scenario, algo.name, "failed", {}, error=str(exc))
    scores = {m: session_qoe(m, DEFAULT_LADDER, result.record) for m in plan.metrics}
    return CellResult(scenario, algo.name, "ok", scores, result.total_rebuffer_s, result.mean_rung,
                      result.record.switches(), session_log_csv(result.outcomes))


def _cell_job(args):
    plan, index, algo_index = args
    trace, _ = materialise(plan, index)
    return run_cell(plan, trace, plan.scenarios[index].name, plan.algorithms[algo_index])


def run_plan(plan: ExperimentPlan, jobs: int = 1):
    """Evaluate every cell; returns ``(cells, windows)`` in plan order."""
    plan.check_files()
    windows = [materialise(plan, i)[1] for i in range(len(plan.scenarios))]
    tasks = [(plan, i, j) for i in range(len(plan.scenarios)) for j in range(len(plan.algorithms))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_cell_job, tasks))
    else:
        traces = {}
        cells = []
        for plan_, i, j in tasks:
            if i not in traces:
                traces[i] = materialise(plan, i)[0]
            cells.append(run_cell(plan, traces[i], plan.scenarios[i].name, plan.algorithms[j]))
    return cells, windows


# --- tables ---------------------------------------------------------------------

def result_rows(cells: Sequence[CellResult], metrics: Sequence[str]) -> list[dict]:
    rows = []
    for c in cells:
        for m in metrics:
            rows.append({
                "scenario": c.scenario, "algorithm": c.algorithm, "metric": m,
                "qoe": c.scores.get(m, math.nan), "rebuffer_s": c.rebuffer_s, "mean_rung": c.mean_rung,
                "switches_down": c.switches[0], "switches_up": c.switches[1],
                "normalized": math.nan, "status": c.status,
            })
    return rows


def normalize_rows(rows: list[dict], reference: str | None) -> list[str]:
    """Fill ``normalized`` per (scenario, metric) group in place.

    Groups where the reference is absent, failed or scored zero keep their
    raw QoE in ``normalized``; the returned warnings say which.
    """
    warnings = []
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["scenario"], r["metric"]), []).append(r)
    for (scen, metric), members in groups.items():
        scores = {r["algorithm"]: r["qoe"] for r in members if r["status"] == "ok"}
        try:
            if reference is None:
                raise KeyError("no reference algorithm")
            norm = normalize_scores(scores, reference)
        except (KeyError, DegenerateReference) as exc:
            warnings.append(f"{scen}/{metric}: raw scores reported ({exc.args[0] if exc.args else exc})")
            norm = scores
        for r in members:
            r["normalized"] = norm.get(r["algorithm"], math.nan)
    return warnings


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def rows_csv(rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def read_rows(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        for k in ("qoe", "rebuffer_s", "mean_rung", "normalized"):
            r[k] = float(r[k]) if r[k] != "" else math.nan
        for k in ("switches_down", "switches_up"):
            r[k] = int(r[k])
        rows.append(r)
    return rows


def aggregates(rows: Sequence[Mapping], reference: str | None, pensieve_baseline: str | None) -> dict:
    """Mean relative improvement of the reference over (a) the best
    conventional baseline and (b) the Pensieve baseline, over every
    (scenario, metric) group where both sides have a score."""
    if reference is None:
        return {}
    groups: dict = {}
    for r in rows:
        if r["status"] == "ok":
            groups.setdefault((r["scenario"], r["metric"]), {})[r["algorithm"]] = r["qoe"]
    conv, pens, per_baseline = [], [], {}
    best_by_group = {}
    for key, scores in groups.items():
        if reference not in scores:
            continue
        ref = scores[reference]
        baselines = {a: s for a, s in scores.items() if a not in (reference, pensieve_baseline)}
        for a, s in baselines.items():
            if s != 0:
                per_baseline.setdefault(a, []).append((ref - s) / abs(s))
        if baselines:
            best_name = max(sorted(baselines), key=lambda a: baselines[a])
            best = baselines[best_name]
            best_by_group[f"{key[0]}/{key[1]}"] = best_name
            if best != 0:
                conv.append((ref - best) / abs(best))
        if pensieve_baseline in scores and scores[pensieve_baseline] != 0:
            p = scores[pensieve_baseline]
            pens.append((ref - p) / abs(p))
    mean = lambda xs: float(np.mean(xs)) if xs else None  # noqa: E731
    return {
        "reference": reference,
        "improvement_over_best_conventional": mean(conv),
        "improvement_over_pensieve_baseline": mean(pens),
        "improvement_over_each_baseline": {a: mean(v) for a, v in sorted(per_baseline.items())},
        "best_conventional_per_group": dict(sorted(best_by_group.items())),
        "groups": len(conv),
    }


def plot_data(rows: Sequence[Mapping], metric: str) -> str:
    """Bar-chart data for one metric: one line per (scenario, algorithm)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x_label", "series", "value"))
    for r in rows:
        if r["metric"] == metric:
            w.writerow((r["scenario"], r["algorithm"], _fmt(r["normalized"])))
    return buf.getvalue()


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def write_outputs(out: Path, plan: ExperimentPlan, cells, windows) -> dict:
    rows = result_rows(cells, plan.metrics)
    warnings = normalize_rows(rows, plan.reference)
    for w in warnings:
        log.warning(w)
    for c in cells:
        if c.status == "ok":
            write_atomic(out / "logs" / f"{c.scenario}__{c.algorithm}.csv", c.log_csv)
    write_atomic(out / "results.csv", rows_csv(rows))
    for m in plan.metrics:
        write_atomic(out / "plots" / f"{m}.csv", plot_data(rows, m))
    summary = {
        "seed": plan.seed,
        "reference": plan.reference,
        "pensieve_baseline": plan.pensieve_baseline,
        "sim": plan.sim.to_dict(),
        "metrics": list(plan.metrics),
        "algorithms": [a.name for a in plan.algorithms],
        "windows": windows,
        "aggregates": aggregates(rows, plan.reference, plan.pensieve_baseline),
        "failed": [{"scenario": c.scenario, "algorithm": c.algorithm, "error": c.error}
                   for c in cells if c.status != "ok"],
        "warnings": warnings,
    }
    write_atomic(out / "summary.json", dumps_json(_clean(summary)))
    return summary


def report(results_dir: Path, reference: str | None = None, pensieve_baseline: str | None = None,
           out: Path | None = None) -> dict:
    """Re-normalise an eval run's results, optionally against another reference."""
    results_dir = Path(results_dir)
    rows = read_rows((results_dir / "results.csv").read_text(encoding="utf-8"))
    summary_path = results_dir / "summary.json"
    previous = json.loads(summary_path.read_text(encoding="utf-8")) if summary_path.exists() else {}
    prev_agg = previous.get("aggregates") or {}
    reference = reference or previous.get("reference") or prev_agg.get("reference")
    pensieve_baseline = pensieve_baseline or previous.get("pensieve_baseline")
    warnings = normalize_rows(rows, reference)
    for w in warnings:
        log.warning(w)
    out = Path(out) if out is not None else results_dir / "report"
    metrics = sorted({r["metric"] for r in rows}, key=lambda m: METRIC_IDS.index(m) if m in METRIC_IDS else 99)
    tables = {}
    for r in rows:
        tables.setdefault(r["metric"], {}).setdefault(r["scenario"], {})[r["algorithm"]] = r["normalized"]
    write_atomic(out / "normalized.csv", rows_csv(rows))
    for m in metrics:
        write_atomic(out / "plots" / f"{m}.csv", plot_data(rows, m))
    doc = {"reference": reference, "tables": tables, "warnings": warnings,
           "aggregates": aggregates(rows, reference, pensieve_baseline)}
    write_atomic(out / "report.json", dumps_json(_clean(doc)))
    return doc
