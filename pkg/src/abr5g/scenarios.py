"""Built-in synthetic scenario suite.

Six band-switching models shaped after common 5G field conditions plus an
LTE-like model for the small legacy share of the training mix. Rates are
in kbps; the top ladder rung needs roughly 40 Mbps of raw throughput, so
the interesting scenarios keep a good share of their time near or below
that line.

Seeds are partitioned so training, validation and evaluation never share a
trace: training uses ``TRAIN_SEED_BASE + i``, validation
``VALIDATION_SEED_BASE + i`` and the evaluation suite ``EVAL_SEED``.
"""
from __future__ import annotations

from dataclasses import replace

from .traces import BandState, SyntheticSpec, ThroughputTrace, synthesize

TRAIN_SEED_BASE = 1000
VALIDATION_SEED_BASE = 2000
EVAL_SEED = 7

LOW = "low_band_fdd"
MID = "mid_band_tdd"
NRDC = "nr_dc_high"
OUTAGE = "outage"


def _spec(name, states, transition) -> SyntheticSpec:
    return SyntheticSpec(tuple(BandState(*s) for s in states), transition, 1000, 900.0, 0, name)


SCENARIOS: dict[str, SyntheticSpec] = {
    # mid-band most of the way, dropping to low band between cells
    "driving": _spec("driving", [
        (MID, 140_000, 70_000, 35.0),
        (LOW, 22_000, 10_000, 18.0),
        (OUTAGE, 0, 0, 2.0),
    ], [[0.0, 0.9, 0.1], [0.85, 0.0, 0.15], [0.3, 0.7, 0.0]]),
    # slow urban movement with good mid-band coverage and brief shadowing
    "streetcar": _spec("streetcar", [
        (MID, 220_000, 90_000, 50.0),
        (LOW, 35_000, 15_000, 12.0),
    ], [[0.0, 1.0], [1.0, 0.0]]),
    # suburban line: mostly low band, occasional mid-band stations
    "suburban_train": _spec("suburban_train", [
        (LOW, 18_000, 9_000, 30.0),
        (MID, 70_000, 35_000, 15.0),
        (OUTAGE, 0, 0, 3.0),
    ], [[0.0, 0.75, 0.25], [0.9, 0.0, 0.1], [1.0, 0.0, 0.0]]),
    # fringe low-band coverage with frequent complete loss of service
    "rural_train": _spec("rural_train", [
        (LOW, 12_000, 6_000, 25.0),
        ("weak_" + LOW, 4_000, 2_500, 15.0),
        (OUTAGE, 0, 0, 5.0),
    ], [[0.0, 0.6, 0.4], [0.6, 0.0, 0.4], [0.5, 0.5, 0.0]]),
    # mid band shared with a crowd: high variance around the top rung
    "concert": _spec("concert", [
        ("loaded_" + MID, 30_000, 18_000, 20.0),
        ("heavily_loaded_" + MID, 12_000, 8_000, 15.0),
        (MID, 90_000, 40_000, 10.0),
    ], [[0.0, 0.6, 0.4], [0.8, 0.0, 0.2], [0.7, 0.3, 0.0]]),
    # sub-6 plus mmWave dual connectivity while walking
    "nr_dc_walking": _spec("nr_dc_walking", [
        (NRDC, 1_100_000, 400_000, 30.0),
        (MID, 350_000, 150_000, 20.0),
    ], [[0.0, 1.0], [1.0, 0.0]]),
}

SA_SCENARIOS = ("driving", "streetcar", "suburban_train", "rural_train", "concert")
NR_DC_SCENARIOS = ("nr_dc_walking",)

LTE_SPEC = _spec("lte", [
    ("lte_good", 25_000, 10_000, 25.0),
    ("lte_poor", 7_000, 4_000, 20.0),
], [[0.0, 1.0], [1.0, 0.0]])


def scenario_spec(name: str, seed: int = EVAL_SEED) -> SyntheticSpec:
    if name == "lte":
        return LTE_SPEC.with_seed(seed)
    try:
        return SCENARIOS[name].with_seed(seed)
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)} and 'lte'") from None


def scenario_trace(name: str, seed: int = EVAL_SEED) -> ThroughputTrace:
    return replace(synthesize(scenario_spec(name, seed)), name=f"{name}_s{seed}")


def evaluation_suite(seed: int = EVAL_SEED) -> dict[str, ThroughputTrace]:
    """One 15-minute trace per scenario, in a fixed order."""
    return {name: scenario_trace(name, seed) for name in SCENARIOS}


def training_traces(per_scenario: int = 4, scenarios=SA_SCENARIOS) -> list[ThroughputTrace]:
    return [scenario_trace(n, TRAIN_SEED_BASE + i) for n in scenarios for i in range(per_scenario)]


def validation_traces(per_scenario: int = 1, scenarios=SA_SCENARIOS) -> list[ThroughputTrace]:
    return [scenario_trace(n, VALIDATION_SEED_BASE + i) for n in scenarios for i in range(per_scenario)]


def lte_traces(count: int = 2) -> list[ThroughputTrace]:
    return [scenario_trace("lte", TRAIN_SEED_BASE + i) for i in range(count)]
