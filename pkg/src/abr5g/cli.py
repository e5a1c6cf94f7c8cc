"""Command-line entry point: ``abr5g {ingest,synth,eval,train,report}``.

Exit codes: 0 success, 2 usage or configuration error, 3 partial failure.
Set ``ABR5G_LOG`` (e.g. ``DEBUG``) to change the log level.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import scenarios
from .errors import Abr5gError, InvalidSpec, MalformedTrace
from .experiment import PlanError, ExperimentPlan, dumps_json, report, run_plan, write_atomic, write_outputs
from .traces import SyntheticSpec, from_mahimahi, parse_csv, synthesize, to_mahimahi

log = logging.getLogger("abr5g")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 2, 3


class UsageError(Exception):
    pass


def _inputs(paths, pattern):
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob(pattern)))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"{p}: no such file or directory")
    if not files:
        raise UsageError(f"no input files matching {pattern}")
    return files


def _prepare_out(out: Path, force: bool):
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"{out} already exists and is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def _summary_line(trace) -> str:
    s = trace.summary()
    return (f"{trace.name}: {s['duration_s']:.1f} s, mean {s['mean_kbps']:.1f} kbps, "
            f"min {s['min_kbps']:.1f}, max {s['max_kbps']:.1f}")


# --- subcommands --------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pattern = "*" if args.from_mahimahi else "*.csv"
    bad = 0
    for path in _inputs(args.paths, pattern):
        try:
            text = path.read_text(encoding="utf-8")
            if args.from_mahimahi:
                trace = from_mahimahi(text.splitlines(), bucket_ms=args.bucket_ms, name=path.stem)
            else:
                trace = parse_csv(text, name=path.stem)
        except (MalformedTrace, Abr5gError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            bad += 1
            continue
        if args.to_mahimahi:
            write_atomic(out / f"{path.stem}.mahi", "".join(f"{t}\n" for t in to_mahimahi(trace)))
        else:
            write_atomic(out / f"{path.stem}.csv", trace.to_csv())
        print(_summary_line(trace))
    return EXIT_USAGE if bad else EXIT_OK


def _load_spec(source: str) -> SyntheticSpec:
    path = Path(source)
    if path.is_file():
        try:
            return SyntheticSpec.from_json(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: not valid JSON ({exc})") from None
    try:
        return scenarios.scenario_spec(source)
    except KeyError as exc:
        raise UsageError(f"{source}: neither a spec file nor a built-in scenario ({exc.args[0]})") from None


def cmd_synth(args) -> int:
    spec = _load_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        trace = synthesize(spec.with_seed(args.seed + i))
        path = out / f"{spec.name}_{args.seed + i}.csv"
        write_atomic(path, trace.to_csv())
        print(f"{path.name}: " + _summary_line(trace).split(": ", 1)[1])
    return EXIT_OK


def cmd_eval(args) -> int:
    plan = ExperimentPlan.load(args.plan)
    if args.seed is not None:
        plan = plan.with_seed(args.seed)
    out = Path(args.out)
    plan.check_files()
    _prepare_out(out, args.force)
    cells, windows = run_plan(plan, jobs=args.jobs)
    summary = write_outputs(out, plan, cells, windows)
    agg = summary["aggregates"]
    if agg:
        for key in ("improvement_over_best_conventional", "improvement_over_pensieve_baseline"):
            if agg.get(key) is not None:
                print(f"{key}: {100 * agg[key]:+.1f}%")
    print(f"{len(cells)} sessions, {len(summary['failed'])} failed; results in {out}")
    return EXIT_PARTIAL if summary["failed"] else EXIT_OK


def _train_inputs(doc: dict, key: str, default):
    """Traces from ``{"scenarios": [...], "per_scenario": n, "seed_base": s}``
    or ``{"files": [...]}``."""
    part = doc.get(key, default)
    if part is None:
        return []
    if "files" in part:
        return [parse_csv(Path(f).read_text(encoding="utf-8"), name=Path(f).stem) for f in part["files"]]
    base = part.get("seed_base", scenarios.TRAIN_SEED_BASE)
    return [scenarios.scenario_trace(n, base + i) for n in part["scenarios"] for i in range(part.get("per_scenario", 1))]


def cmd_train(args) -> int:
    from .rl.agent import ORIGINAL_SIM, TrainConfig, train
    from .rl.checkpoint import load_checkpoint
    from .simulator import SimConfig

    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    settings = dict(doc.get("train", {}))
    if args.seed is not None:
        settings["seed"] = args.seed
    preset = doc.get("preset", "pensieve_5g")
    if preset == "original":
        config = TrainConfig.original_pensieve(**settings)
        base_sim = ORIGINAL_SIM.to_dict()
    elif preset == "pensieve_5g":
        config = TrainConfig.from_dict(settings)
        base_sim = {}
    else:
        raise UsageError(f"unknown preset {preset!r}; use 'pensieve_5g' or 'original'")
    sim = SimConfig.from_dict({**base_sim, **doc.get("sim", {})})
    eval_sim = SimConfig.from_dict({**base_sim, **doc.get("eval_sim", {})})
    sa = {"scenarios": list(scenarios.SA_SCENARIOS), "per_scenario": 4}
    traces = _train_inputs(doc, "traces", sa)
    validation = _train_inputs(doc, "validation", {**sa, "per_scenario": 1,
                                                    "seed_base": scenarios.VALIDATION_SEED_BASE})
    lte = _train_inputs(doc, "lte", {"scenarios": ["lte"], "per_scenario": 2})

    out = Path(args.out)
    resume = None
    if args.resume:
        resume_path = Path(args.resume)
        if resume_path.is_dir():
            resume_path = resume_path / "resume.bin"
        if not resume_path.is_file():
            raise UsageError(f"{resume_path}: no checkpoint to resume from")
        resume = load_checkpoint(resume_path)
        out.mkdir(parents=True, exist_ok=True)
    else:
        _prepare_out(out, args.force)
    result = train(traces, sim, config, validation=validation, eval_sim=eval_sim, lte_traces=lte,
                   out_dir=out, resume=resume, keep_params=False)
    write_atomic(out / "train_config.json", dumps_json({"preset": preset, "train": config.to_dict(),
                                                        "sim": sim.to_dict(), "eval_sim": eval_sim.to_dict()}))
    print(f"{len(result.checkpoints)} checkpoints; best epoch {result.best.epoch} "
          f"(validation QoE_hd {result.best.validation_qoe:.2f}) in {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    results = Path(args.results)
    if not (results / "results.csv").is_file():
        raise UsageError(f"{results}: no results.csv (run 'abr5g eval' first)")
    doc = report(results, args.reference, args.pensieve_baseline, Path(args.out) if args.out else None)
    for w in doc["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    agg = doc["aggregates"]
    for key in ("improvement_over_best_conventional", "improvement_over_pensieve_baseline"):
        if agg.get(key) is not None:
            print(f"{key}: {100 * agg[key]:+.1f}%")
    for metric, table in doc["tables"].items():
        print(f"[{metric}]")
        for scen, row in table.items():
            cells = "  ".join(f"{a}={v:.3f}" if v == v else f"{a}=failed" for a, v in row.items())
            print(f"  {scen}: {cells}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abr5g", description="5G UHD ABR experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate throughput CSVs and write canonical trace files")
    p.add_argument("paths", nargs="+", help="CSV files or directories of *.csv")
    p.add_argument("--out", required=True)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--to-mahimahi", action="store_true", help="write Mahimahi packet timestamps")
    mode.add_argument("--from-mahimahi", action="store_true", help="inputs are Mahimahi files")
    p.add_argument("--bucket-ms", type=int, default=1000)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate synthetic traces from a band-switching spec")
    p.add_argument("spec", help="spec JSON file or built-in scenario name")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="run a scenario x algorithm evaluation plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train an RL policy")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="resume.bin file or a previous output directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="normalise eval results and emit plot data")
    p.add_argument("results", help="directory written by 'abr5g eval'")
    p.add_argument("--reference")
    p.add_argument("--pensieve-baseline")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ABR5G_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1 or getattr(args, "count", 1) < 0:
        parser.error("--jobs must be >= 1 and --count >= 0")
    try:
        return args.func(args)
    except (UsageError, PlanError, InvalidSpec, ValueError) as exc:
        print(f"abr5g {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
