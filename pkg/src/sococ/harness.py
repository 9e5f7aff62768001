"""Experiment presets, config-file loading and the end-to-end run driver.

Presets exp1..exp6 reproduce the published experiment parameters at full
scale (exp1..exp4 are guarded because they need hours and tens of GB);
the -desk variants reproduce the same regimes at workstation scale, with
every deviation recorded in the preset's scale_note.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import engine as engine_mod
from .engine import EngineConfig, init_servers
from .errors import ConfigurationError
from .market import MarketConfig
from .metrics import MetricsConfig, MetricsSink, RunReport, build_report, emit
from .topology import TopologyConfig, organize
from .workload import DistributionSpec, WorkloadConfig, generate_stream

log = logging.getLogger("sococ")

# Presets above these sizes refuse to run without --allow-huge.
HUGE_CORE_LIMIT = 200_000
HUGE_REQUEST_LIMIT = 2_000_000

THIRD = 1.0 / 3.0

# Desk-scale presets shrink the known-core (pcs) lists by orders of
# magnitude, so the published 0.1% invitation fraction would invite only 1-2
# leader candidates and change the auction regime. The desk fraction holds
# the invited-candidate count in each experiment's original regime instead:
# ~60 candidates for the light-load presets (pcs ~ 2000, election never
# fails, as at full scale) and 3-4 for the heavy-load presets (pcs ~ 100),
# which lands the success rate in the published heavy-load band.
DESK_FRACTION = 0.03


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    topology: TopologyConfig
    engine: EngineConfig
    workload: WorkloadConfig
    market: MarketConfig
    metrics: MetricsConfig
    scale_note: str = ""


def _workload_of(interarrival_mean, service, workload_hi, n_requests):
    return WorkloadConfig(
        interarrival=DistributionSpec("exponential", interarrival_mean),
        service=service,
        workload_range=(0.1, workload_hi),
        mode_probabilities=(THIRD, THIRD, THIRD),
        n_requests=n_requests,
    )


def _build_presets() -> dict[str, ExperimentPreset]:
    presets: dict[str, ExperimentPreset] = {}

    full_scale_topo = TopologyConfig(
        n_core=8_388_608, n_periphery=1000, n_aux=10,
        primary_contacts_per_core=500, periphery_per_core=10,
    )
    light_engine = EngineConfig(
        initial_state_mix=(0.2, 0.4, 0.15, 0.25), initial_load_range=(0.3, 0.8)
    )
    heavy_engine = EngineConfig(
        initial_state_mix=(0.0, THIRD, THIRD, THIRD), initial_load_range=(0.5, 0.8)
    )
    exp_service = DistributionSpec("exponential", 1.2)
    pareto_service = DistributionSpec("pareto", 2.0, 1.0)
    full_scale_metrics = MetricsConfig(bin_size=1_000_000, n_subsets=1_000)

    presets["exp1"] = ExperimentPreset(
        name="exp1",
        topology=full_scale_topo,
        engine=light_engine,
        workload=_workload_of(1.5, exp_service, 8.0, 50_000_000),
        market=MarketConfig("C2", 0.001, False),
        metrics=full_scale_metrics,
        scale_note="full published scale; needs --allow-huge",
    )
    presets["exp2"] = replace(
        presets["exp1"],
        name="exp2",
        workload=_workload_of(1.5, exp_service, 40.0, 50_000_000),
        market=MarketConfig("C2", 0.001, True),
    )
    presets["exp3"] = ExperimentPreset(
        name="exp3",
        topology=full_scale_topo,
        engine=heavy_engine,
        workload=_workload_of(1.0, pareto_service, 40.0, 50_000_000),
        market=MarketConfig("C2", 0.001, True),
        metrics=full_scale_metrics,
        scale_note=(
            "full published scale; needs --allow-huge. Secondary contacts "
            "enabled: the experiment text says primary-only but the reported "
            "results are explained by leaders falling back to secondary "
            "contacts, so the preset follows the explanation."
        ),
    )
    presets["exp4"] = replace(
        presets["exp3"],
        name="exp4",
        market=MarketConfig("C1", 0.001, True, invited_fraction_c1=0.001),
        scale_note="full published scale; needs --allow-huge. Periphery-initiated (C1).",
    )

    small_topo = TopologyConfig(
        n_core=100, n_periphery=2, n_aux=2,
        primary_contacts_per_core=10, periphery_per_core=2,
    )
    small_engine = EngineConfig(
        initial_state_mix=(0.2, 0.4, 0.15, 0.25), initial_load_range=(0.7, 0.9)
    )
    small_metrics = MetricsConfig(bin_size=20, n_subsets=10)
    presets["exp5"] = ExperimentPreset(
        name="exp5",
        topology=small_topo,
        engine=small_engine,
        workload=_workload_of(1.5, exp_service, 8.0, 1000),
        market=MarketConfig("C1", 0.001, False, invited_fraction_c1=0.001),
        metrics=small_metrics,
        scale_note=(
            "published scale (N=100, M=2, 10^3 requests). Unpublished "
            "details filled in: state mix reused from exp1, m=2 (every core "
            "knows both periphery servers), n=10, bins of 20 with 10 subsets."
        ),
    )
    presets["exp6"] = replace(
        presets["exp5"],
        name="exp6",
        workload=_workload_of(1.5, exp_service, 40.0, 1000),
        market=MarketConfig("C1", 0.001, True, invited_fraction_c1=0.001),
        scale_note=(
            presets["exp5"].scale_note
            + " use_secondary is set per the experiment description but is "
            "inert: C1 coalitions never traverse contact lists."
        ),
    )

    desk_topo = TopologyConfig(
        n_core=10_000, n_periphery=50, n_aux=10,
        primary_contacts_per_core=100, periphery_per_core=10,
    )
    desk_metrics = MetricsConfig(bin_size=2_000, n_subsets=100)
    desk_note_light = (
        "desk scale: N=10,000, M=50, n=100, m=10, 10^5 requests, bins of "
        "2,000 with 100 subsets; leader-candidate fraction raised to 0.03 "
        "so ~60 candidates are invited (pcs ~ 2,000), matching the "
        "always-finds-a-leader regime of the full-scale run."
    )
    presets["exp1-desk"] = ExperimentPreset(
        name="exp1-desk",
        topology=desk_topo,
        engine=light_engine,
        workload=_workload_of(1.5, exp_service, 8.0, 100_000),
        market=MarketConfig("C2", DESK_FRACTION, False),
        metrics=desk_metrics,
        scale_note=desk_note_light,
    )
    presets["exp2-desk"] = replace(
        presets["exp1-desk"],
        name="exp2-desk",
        workload=_workload_of(1.5, exp_service, 40.0, 100_000),
        market=MarketConfig("C2", DESK_FRACTION, True),
        scale_note=desk_note_light,
    )

    heavy_desk_topo = TopologyConfig(
        n_core=10_000, n_periphery=1000, n_aux=10,
        primary_contacts_per_core=100, periphery_per_core=10,
    )
    desk_note_heavy = (
        "desk scale: N=10,000 with the published periphery dimensions "
        "(M=1,000, m=10), n=100, 10^5 requests, bins of 2,000 with 100 "
        "subsets, fraction 0.03; a periphery knows ~100 cores so auctions "
        "invite 3-4 leader candidates, reproducing the published heavy-load "
        "success band through candidate scarcity."
    )
    presets["exp3-desk"] = ExperimentPreset(
        name="exp3-desk",
        topology=heavy_desk_topo,
        engine=heavy_engine,
        workload=_workload_of(1.0, pareto_service, 40.0, 100_000),
        market=MarketConfig("C2", DESK_FRACTION, True),
        metrics=desk_metrics,
        scale_note=desk_note_heavy,
    )
    presets["exp4-desk"] = replace(
        presets["exp3-desk"],
        name="exp4-desk",
        market=MarketConfig("C1", DESK_FRACTION, True, invited_fraction_c1=DESK_FRACTION),
        scale_note=desk_note_heavy + " Periphery-initiated (C1).",
    )
    return presets


_PRESETS = _build_presets()

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str) -> ExperimentPreset:
    """Look up a named experiment preset."""
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        ) from None


def is_huge(p: ExperimentPreset) -> bool:
    return (
        p.topology.n_core > HUGE_CORE_LIMIT
        or p.workload.n_requests > HUGE_REQUEST_LIMIT
    )


def derive_seeds(seed: int) -> tuple[int, int, int, int]:
    """Derive independent (topology, engine, workload, market) sub-seeds."""
    children = np.random.SeedSequence(seed).spawn(4)
    return tuple(int(c.generate_state(1, np.uint64)[0]) for c in children)


# ---------------------------------------------------------------------------
# strict config-file loading
# ---------------------------------------------------------------------------

def _require(d: dict, path: str, required: tuple[str, ...], optional: tuple[str, ...] = ()):
    unknown = set(d) - set(required) - set(optional)
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigurationError(f"{path}: missing keys {missing}")


def _pair(value, path: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigurationError(f"{path}: expected [lo, hi]")
    return float(value[0]), float(value[1])


def _dist(d: dict, path: str) -> DistributionSpec:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigurationError(f"{path}: expected an object with a 'kind'")
    kind = d["kind"]
    if kind == "exponential":
        _require(d, path, ("kind", "mean"))
        return DistributionSpec("exponential", float(d["mean"]))
    if kind == "pareto":
        _require(d, path, ("kind", "alpha", "scale"))
        return DistributionSpec("pareto", float(d["alpha"]), float(d["scale"]))
    if kind == "uniform":
        _require(d, path, ("kind", "low", "high"))
        return DistributionSpec("uniform", float(d["low"]), float(d["high"]))
    raise ConfigurationError(f"{path}.kind: unknown distribution {kind!r}")


def load_config(path: str | Path) -> ExperimentPreset:
    """Load a run configuration from a strict-schema JSON file.

    Unknown keys anywhere in the file are errors; validation failures carry
    the offending field path.
    """
    path = Path(path)
    with open(path) as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    _require(raw, "config", ("topology", "workload", "market", "engine"),
             ("metrics", "name"))

    t = raw["topology"]
    _require(t, "topology",
             ("n_core", "n_periphery", "primary_contacts_per_core", "periphery_per_core"),
             ("n_aux",))
    try:
        topo = TopologyConfig(
            n_core=int(t["n_core"]),
            n_periphery=int(t["n_periphery"]),
            n_aux=int(t.get("n_aux", 0)),
            primary_contacts_per_core=int(t["primary_contacts_per_core"]),
            periphery_per_core=int(t["periphery_per_core"]),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"topology: {exc}") from None

    w = raw["workload"]
    _require(w, "workload",
             ("interarrival", "service", "workload_scu", "mode_probs", "n_requests"))
    try:
        workload = WorkloadConfig(
            interarrival=_dist(w["interarrival"], "workload.interarrival"),
            service=_dist(w["service"], "workload.service"),
            workload_range=_pair(w["workload_scu"], "workload.workload_scu"),
            mode_probabilities=tuple(float(p) for p in w["mode_probs"]),
            n_requests=int(w["n_requests"]),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"workload: {exc}") from None

    m = raw["market"]
    _require(m, "market", ("initiation",),
             ("leader_candidate_fraction", "use_secondary", "invited_fraction_c1",
              "cost_range"))
    try:
        market = MarketConfig(
            initiation=m["initiation"],
            leader_candidate_fraction=float(m.get("leader_candidate_fraction", 0.001)),
            use_secondary_contacts=bool(m.get("use_secondary", False)),
            invited_fraction_c1=float(m.get("invited_fraction_c1", 0.001)),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"market: {exc}") from None

    e = raw["engine"]
    _require(e, "engine", (),
             ("capacity_scu", "initial_state_mix", "initial_load_range"))
    try:
        eng = EngineConfig(
            capacity_scu=float(e.get("capacity_scu", 10.0)),
            initial_state_mix=tuple(float(f) for f in e.get(
                "initial_state_mix", (0.2, 0.4, 0.15, 0.25))),
            initial_load_range=_pair(e.get("initial_load_range", (0.3, 0.8)),
                                     "engine.initial_load_range"),
            # cost_range rides in the market section but parameterizes
            # fleet initialization
            cost_range=_pair(m.get("cost_range", (1.0, 10.0)), "market.cost_range"),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"engine: {exc}") from None

    mc = raw.get("metrics", {})
    _require(mc, "metrics", (), ("bin_size", "n_subsets", "coalition_buckets"))
    try:
        metrics = MetricsConfig(
            bin_size=int(mc.get("bin_size", 1_000_000)),
            n_subsets=int(mc.get("n_subsets", 1_000)),
            coalition_buckets=int(mc.get("coalition_buckets", 20)),
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"metrics: {exc}") from None

    return ExperimentPreset(
        name=str(raw.get("name", path.stem)),
        topology=topo, engine=eng, workload=workload, market=market,
        metrics=metrics, scale_note="loaded from config file",
    )


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

def _config_echo(p: ExperimentPreset, seed: int, seeds: tuple[int, int, int, int]) -> dict:
    return {
        "preset": p.name,
        "scale_note": p.scale_note,
        "topology": asdict(p.topology),
        "engine": asdict(p.engine),
        "workload": asdict(p.workload),
        "market": asdict(p.market),
        "metrics": asdict(p.metrics),
        "seed": seed,
        "derived_seeds": {
            "topology": seeds[0], "engine": seeds[1],
            "workload": seeds[2], "market": seeds[3],
        },
    }


def run_experiment(
    preset_or_name: ExperimentPreset | str,
    seed: int,
    out_dir: str | Path | None = None,
    *,
    bin_size: int | None = None,
    n_subsets: int | None = None,
    check_invariants: bool = False,
    allow_huge: bool = False,
) -> RunReport:
    """organize -> init_servers -> generate_stream -> run -> emit.

    The run seed is split into independent sub-seeds for the topology draw,
    fleet initialization, the request stream and the auction lottery, all
    echoed into summary.json.
    """
    p = preset(preset_or_name) if isinstance(preset_or_name, str) else preset_or_name
    if is_huge(p) and not allow_huge:
        raise ConfigurationError(
            f"preset {p.name!r} is full published scale "
            f"(N={p.topology.n_core:,}, {p.workload.n_requests:,} requests); "
            "pass --allow-huge to run it anyway"
        )
    seeds = derive_seeds(seed)
    tcfg = replace(p.topology, seed=seeds[0])
    ecfg = replace(p.engine, seed=seeds[1])
    wcfg = replace(p.workload, seed=seeds[2])
    mcfg = p.market
    mets = p.metrics
    if bin_size is not None:
        mets = replace(mets, bin_size=bin_size)
    if n_subsets is not None:
        mets = replace(mets, n_subsets=n_subsets)

    t0 = time.perf_counter()
    topo = organize(tcfg)
    t1 = time.perf_counter()
    log.info("%s: organized %d cores / %d periphery in %.2fs",
             p.name, tcfg.n_core, tcfg.n_periphery, t1 - t0)

    fleet = init_servers(topo, ecfg)
    stream = generate_stream(wcfg, topo.n_periphery)
    sink = MetricsSink(mets.bin_size, mets.n_subsets)
    market_rng = np.random.default_rng(seeds[3])
    stats = engine_mod.run(
        topo, fleet, stream, mcfg, sink, market_rng, check_invariants=check_invariants
    )
    t2 = time.perf_counter()
    log.info("%s: %d requests (%d won, %d unsatisfied) in %.2fs",
             p.name, stats.n_requests, stats.successes, stats.unsatisfied, t2 - t1)

    report = build_report(
        sink, fleet, stats,
        config_echo=_config_echo(p, seed, seeds),
        seed=seed, preset=p.name, coalition_buckets=mets.coalition_buckets,
    )
    if out_dir is not None:
        emit(report, out_dir)
        log.info("%s: report written to %s (emit %.2fs)",
                 p.name, out_dir, time.perf_counter() - t2)
    return report


def sweep(
    preset_or_name: ExperimentPreset | str,
    n_seeds: int,
    first_seed: int,
    out_dir: str | Path,
    **kwargs,
) -> list[RunReport]:
    """Run the same preset across consecutive seeds, one subdirectory each."""
    if n_seeds < 1:
        raise ConfigurationError("n_seeds must be >= 1")
    out = Path(out_dir)
    reports = []
    for seed in range(first_seed, first_seed + n_seeds):
        reports.append(
            run_experiment(preset_or_name, seed, out / f"seed-{seed}", **kwargs)
        )
    return reports
