import csv
import json

import pytest

from abr5g.abr import make_policy
from abr5g.cli import main
from abr5g.experiment import RESULT_COLUMNS
from abr5g.qoe import DEFAULT_LADDER as L, session_qoe
from abr5g.simulator import SimConfig, run_session
from abr5g.traces import constant_trace, parse_csv


def write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# --- ingest -------------------------------------------------------------------

def test_ingest_valid_file(tmp_path, capsys):
    src = write(tmp_path / "in" / "walk.csv", "timestamp_ms,throughput_kbps\n0,1000\n1000,3000\n2000,2000\n")
    assert main(["ingest", str(src), "--out", str(tmp_path / "out")]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("walk: 3.0 s, mean 2000.0 kbps, min 1000.0, max 3000.0")
    back = parse_csv((tmp_path / "out" / "walk.csv").read_text())
    assert back.kbps.tolist() == [1000, 3000, 2000]


def test_ingest_reports_bad_line(tmp_path, capsys):
    body = "".join(f"{i * 1000},{1000 + i}\n" for i in range(16)) + "16000,lots\n"
    src = write(tmp_path / "bad.csv", body)
    assert main(["ingest", str(src), "--out", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "bad.csv" in err and "line 17" in err


def test_ingest_directory(tmp_path, capsys):
    for name in ("a", "b", "c"):
        write(tmp_path / "in" / f"{name}.csv", "0,100\n500,200\n")
    write(tmp_path / "in" / "notes.txt", "not a trace")
    assert main(["ingest", str(tmp_path / "in"), "--out", str(tmp_path / "out")]) == 0
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["a.csv", "b.csv", "c.csv"]


def test_ingest_mahimahi_round_trip(tmp_path):
    src = write(tmp_path / "t.csv", "0,24000\n1000,12000\n2000,36000\n")
    assert main(["ingest", str(src), "--out", str(tmp_path / "mm"), "--to-mahimahi"]) == 0
    assert main(["ingest", str(tmp_path / "mm"), "--out", str(tmp_path / "back"), "--from-mahimahi"]) == 0
    back = parse_csv((tmp_path / "back" / "t.csv").read_text())
    assert back.kbps.tolist() == [24000, 12000, 36000]


def test_ingest_missing_path(tmp_path):
    assert main(["ingest", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "out")]) == 2


# --- synth --------------------------------------------------------------------

def test_synth_is_deterministic(tmp_path):
    for run in ("x", "y"):
        assert main(["synth", "driving", "--count", "3", "--seed", "7", "--out", str(tmp_path / run)]) == 0
    names = sorted(p.name for p in (tmp_path / "x").iterdir())
    assert names == ["driving_7.csv", "driving_8.csv", "driving_9.csv"]
    assert tree(tmp_path / "x") == tree(tmp_path / "y")
    assert (tmp_path / "x" / "driving_7.csv").read_bytes() != (tmp_path / "x" / "driving_8.csv").read_bytes()


def test_synth_from_spec_file(tmp_path):
    spec = {"name": "two", "states": [{"name": "hi", "mean_kbps": 9000, "stddev_kbps": 0, "mean_dwell_s": 5},
                                      {"name": "lo", "mean_kbps": 1000, "stddev_kbps": 0, "mean_dwell_s": 5}],
            "transition": [[0, 1], [1, 0]], "sample_interval_ms": 1000, "duration_s": 60}
    path = write(tmp_path / "spec.json", json.dumps(spec))
    assert main(["synth", str(path), "--out", str(tmp_path / "out")]) == 0
    tr = parse_csv((tmp_path / "out" / "two_0.csv").read_text())
    assert set(tr.kbps.tolist()) <= {1000.0, 9000.0}


@pytest.mark.parametrize("transition", [[[0.5, 0.6], [1, 0]], [[0, 1]], [[0, -1], [1, 0]]])
def test_synth_invalid_matrix(tmp_path, transition, capsys):
    spec = {"name": "bad", "states": [{"name": "a", "mean_kbps": 1, "stddev_kbps": 0, "mean_dwell_s": 1},
                                      {"name": "b", "mean_kbps": 2, "stddev_kbps": 0, "mean_dwell_s": 1}],
            "transition": transition, "sample_interval_ms": 1000, "duration_s": 10}
    path = write(tmp_path / "spec.json", json.dumps(spec))
    assert main(["synth", str(path), "--out", str(tmp_path / "out")]) == 2
    assert "abr5g synth" in capsys.readouterr().err


def test_synth_unknown_scenario(tmp_path):
    assert main(["synth", "moon_base", "--out", str(tmp_path)]) == 2


# --- eval ---------------------------------------------------------------------

def oversupplied_plan(tmp_path, algorithms=("rb", "mpc"), metrics=("hd",), **extra):
    write(tmp_path / "fast.csv", constant_trace(200_000, 900).to_csv())
    plan = {"seed": 3, "scenarios": [{"name": "fast", "trace": "fast.csv", "window": {"start_s": 0}}],
            "algorithms": list(algorithms), "metrics": list(metrics), **extra}
    first = algorithms[0]
    plan.setdefault("reference", first if isinstance(first, str) else first["name"])
    return write(tmp_path / "plan.json", json.dumps(plan))


def test_eval_shape_and_reference(tmp_path):
    plan = oversupplied_plan(tmp_path)
    assert main(["eval", "--plan", str(plan), "--out", str(tmp_path / "res")]) == 0
    table = rows(tmp_path / "res" / "results.csv")
    assert len(table) == 2 and list(table[0]) == list(RESULT_COLUMNS)
    ref = [r for r in table if r["algorithm"] == "rb"][0]
    assert float(ref["normalized"]) == 1.0
    files = tree(tmp_path / "res")
    assert {"results.csv", "summary.json", "plots/hd.csv", "logs/fast__rb.csv", "logs/fast__mpc.csv"} <= set(files)


def test_eval_oversupplied_rows(tmp_path):
    plan = oversupplied_plan(tmp_path)
    main(["eval", "--plan", str(plan), "--out", str(tmp_path / "res")])
    for r in rows(tmp_path / "res" / "results.csv"):
        assert float(r["mean_rung"]) >= 8.9
        # the only stall is the startup fetch: RTT plus a rung-0 chunk at 95% payload efficiency
        assert float(r["rebuffer_s"]) == pytest.approx(0.08 + 200_000 / (200_000 * 950), rel=1e-9)
    log = rows(tmp_path / "res" / "logs" / "fast__mpc.csv")
    assert [int(r["rung"]) for r in log[-100:]] == [9] * 100
    assert all(float(r["rebuffer_s"]) == 0 for r in log[1:])


def test_eval_scores_equal_library_calls(tmp_path):
    plan = oversupplied_plan(tmp_path, algorithms=("bb", "bola"), metrics=("hd", "vr"))
    main(["eval", "--plan", str(plan), "--out", str(tmp_path / "res")])
    tr = constant_trace(200_000, 900)
    for r in rows(tmp_path / "res" / "results.csv"):
        direct = run_session(tr, make_policy(r["algorithm"]), config=SimConfig())
        assert float(r["qoe"]) == session_qoe(r["metric"], L, direct.record)


def test_eval_is_byte_identical(tmp_path):
    plan = {"seed": 5, "scenarios": [{"name": "drive", "synthetic": "driving", "window": {"duration_s": 200}},
                                     {"name": "tram", "synthetic": "streetcar", "window": {"duration_s": 200}}],
            "algorithms": ["bb", "rb"], "metrics": ["hd", "tv"], "reference": "bb",
            "sim": {"total_chunks": 40}}
    path = write(tmp_path / "plan.json", json.dumps(plan))
    assert main(["eval", "--plan", str(path), "--out", str(tmp_path / "a")]) == 0
    assert main(["eval", "--plan", str(path), "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert main(["eval", "--plan", str(path), "--out", str(tmp_path / "c"), "--seed", "6"]) == 0
    assert tree(tmp_path / "a")["results.csv"] != tree(tmp_path / "c")["results.csv"]
    windows = json.loads((tmp_path / "a" / "summary.json").read_text())["windows"]
    assert all(isinstance(w["window_seed"], int) for w in windows)


def test_eval_refuses_existing_output(tmp_path):
    plan = oversupplied_plan(tmp_path)
    write(tmp_path / "res" / "keep.txt", "x")
    assert main(["eval", "--plan", str(plan), "--out", str(tmp_path / "res")]) == 2
    assert main(["eval", "--plan", str(plan), "--out", str(tmp_path / "res"), "--force"]) == 0


def test_eval_missing_checkpoint(tmp_path, capsys):
    plan = oversupplied_plan(tmp_path, algorithms=("bb", {"name": "p5g", "kind": "rl", "checkpoint": "gone.bin"}))
    assert main(["eval", "--plan", str(plan), "--out", str(tmp_path / "res")]) == 2
    assert "gone.bin" in capsys.readouterr().err


def test_eval_bad_plan(tmp_path):
    path = write(tmp_path / "plan.json", json.dumps({"scenarios": [], "algorithms": ["bb"], "metrics": ["hd"]}))
    assert main(["eval", "--plan", str(path), "--out", str(tmp_path / "res")]) == 2


# --- train --------------------------------------------------------------------

TRAIN_DOC = {"train": {"n_filters": 16, "workers": 2, "epochs": 4, "checkpoint_every": 2, "seed": 1},
             "sim": {"total_chunks": 10}, "eval_sim": {"total_chunks": 10},
             "traces": {"scenarios": ["driving"], "per_scenario": 1},
             "validation": {"scenarios": ["streetcar"], "per_scenario": 1, "seed_base": 2000},
             "lte": None}


def test_train_writes_checkpoints(tmp_path):
    cfg = write(tmp_path / "train.json", json.dumps(TRAIN_DOC))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    names = sorted(p.name for p in (tmp_path / "run").iterdir())
    assert names == ["best.txt", "checkpoint_000000.bin", "checkpoint_000002.bin", "checkpoint_000004.bin",
                     "resume.bin", "train_config.json", "train_log.csv"]
    log = rows(tmp_path / "run" / "train_log.csv")
    assert [int(r["epoch"]) for r in log] == [0, 1, 2, 3, 4]


def test_train_is_byte_identical(tmp_path):
    cfg = write(tmp_path / "train.json", json.dumps(TRAIN_DOC))
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / run)]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_train_resume_continues_numbering(tmp_path):
    short = {**TRAIN_DOC, "train": {**TRAIN_DOC["train"], "epochs": 2}}
    cfg = write(tmp_path / "short.json", json.dumps(short))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    longer = write(tmp_path / "long.json", json.dumps({**TRAIN_DOC, "train": {**TRAIN_DOC["train"], "epochs": 6}}))
    assert main(["train", "--config", str(longer), "--out", str(tmp_path / "run"),
                 "--resume", str(tmp_path / "run")]) == 0
    ckpts = sorted(p.name for p in (tmp_path / "run").glob("checkpoint_*.bin"))
    assert ckpts == [f"checkpoint_{e:06d}.bin" for e in (0, 2, 4, 6)]
    assert [int(r["epoch"]) for r in rows(tmp_path / "run" / "train_log.csv")] == list(range(7))


def test_train_refuses_existing_output(tmp_path):
    cfg = write(tmp_path / "train.json", json.dumps(TRAIN_DOC))
    write(tmp_path / "run" / "old.txt", "x")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 2
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run"), "--force"]) == 0


def test_train_bad_config(tmp_path):
    cfg = write(tmp_path / "train.json", json.dumps({"train": {"actor_lr": -1}}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 2
    cfg = write(tmp_path / "preset.json", json.dumps({"preset": "pensieve_9g"}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run2")]) == 2


def test_trained_checkpoint_evaluates(tmp_path):
    cfg = write(tmp_path / "train.json", json.dumps(TRAIN_DOC))
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")])
    plan = oversupplied_plan(tmp_path, algorithms=(
        {"name": "p5g", "kind": "rl", "checkpoint": "run/checkpoint_000004.bin"}, "bb"))
    assert main(["eval", "--plan", str(plan), "--out", str(tmp_path / "res")]) == 0
    assert len(rows(tmp_path / "res" / "results.csv")) == 2


# --- report -------------------------------------------------------------------

def fake_results(tmp_path, entries):
    out = tmp_path / "res"
    out.mkdir()
    with open(out / "results.csv", "w", newline="") as f:
        w = csv.DictWriter(f, RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for scen, algo, metric, qoe in entries:
            w.writerow({"scenario": scen, "algorithm": algo, "metric": metric, "qoe": qoe, "rebuffer_s": 0,
                        "mean_rung": 5, "switches_down": 0, "switches_up": 0, "normalized": "", "status": "ok"})
    return out


def test_report_groups(tmp_path):
    res = fake_results(tmp_path, [(s, a, m, q) for s in ("s1", "s2") for m in ("hd", "vr")
                                  for a, q in (("ref", 100.0), ("bb", 80.0), ("mpc", 90.0))])
    assert main(["report", str(res), "--reference", "ref"]) == 0
    doc = json.loads((res / "report" / "report.json").read_text())
    assert set(doc["tables"]) == {"hd", "vr"}
    assert doc["tables"]["hd"]["s1"] == {"bb": 0.8, "mpc": 0.9, "ref": 1.0}
    assert len(rows(res / "report" / "normalized.csv")) == 12
    assert doc["aggregates"]["improvement_over_best_conventional"] == pytest.approx(10 / 90)


def test_report_without_reference_falls_back(tmp_path, capsys):
    res = fake_results(tmp_path, [("s1", "bb", "hd", 80.0), ("s1", "mpc", "hd", 90.0)])
    assert main(["report", str(res), "--reference", "p5g"]) == 0
    assert "warning" in capsys.readouterr().err
    doc = json.loads((res / "report" / "report.json").read_text())
    assert doc["tables"]["hd"]["s1"] == {"bb": 80.0, "mpc": 90.0}


def test_report_keeps_sign(tmp_path):
    res = fake_results(tmp_path, [("s1", "ref", "hd", 60.0), ("s1", "bb", "hd", -30.0)])
    main(["report", str(res), "--reference", "ref"])
    doc = json.loads((res / "report" / "report.json").read_text())
    assert doc["tables"]["hd"]["s1"]["bb"] == -0.5


def test_report_needs_results(tmp_path):
    assert main(["report", str(tmp_path)]) == 2
