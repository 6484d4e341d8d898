# ragsched/cli.py
"""
Command-line surface: gen-workload, plan, profile, simulate, compare, timeline.

Exit codes: 0 success, 2 invalid arguments, 3 infeasible scenario,
4 runtime error. Reports go to stdout, diagnostics to stderr.
"""
import functools
import logging
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import click
import typer

from ragsched import artifacts
from ragsched.config import ExperimentSpec, load_experiment, load_profile, read_config
from ragsched.cost_model import step_timeline
from ragsched.domain import DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig
from ragsched.errors import ConfigError, RagschedError
from ragsched.logging_setup import log_run_info, setup_logging
from ragsched.memory_planner import (
    PlacementGrid, check_feasible, diagnose, enumerate_feasible, plan_transfer,
)
from ragsched.metrics import compare, metrics_report
from ragsched.prefetch_timeline import Phase, PrefetchMode
from ragsched.scheduler import PolicyTable, active_profile
from ragsched.settings import DEFAULTS, atomic_write_text, load_settings
from ragsched.simulator import BatchPolicy, SimConfig, SimMode, run
from ragsched.workload import generate_poisson, load_trace, parse_intervals, save_trace

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, no_args_is_help=True,
                  help="Placement planning, batch scheduling and simulation for RAG serving.")


class ModeChoice(str, Enum):
    pipelined = "pipelined"
    serial = "serial"
    all = "all"


def guarded(command):
    """Map library failures to exit codes"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except RagschedError as e:
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(e.exit_code)
        except typer.Exit:
            raise
        except Exception as e:
            logger.exception("Unexpected failure")
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(4)
    return wrapper


def emit(text: str, out: Optional[Path], force: bool):
    """Write to a file when given, else print"""
    if out is None:
        typer.echo(text, nl=False)
        return
    artifacts.ensure_writable([out], force)
    atomic_write_text(out, text)


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(
        None, "--log-level", help="DEBUG, INFO, WARNING or ERROR (default from RAGSCHED_LOG_LEVEL)"),
    log_dir: Optional[Path] = typer.Option(
        None, "--log-dir", help="Also write a rotating DEBUG log file here"),
    settings: Optional[Path] = typer.Option(
        None, "--settings", help="JSON file overlaying the tunable defaults"),
):
    setup_logging("ragsched", log_level, log_dir)
    if settings is not None:
        try:
            DEFAULTS.update(load_settings(settings))
        except RagschedError as e:
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(e.exit_code)


@app.command("gen-workload")
@guarded
def cmd_gen_workload(
    intervals: Optional[str] = typer.Option(None, help="duration:rate pairs, e.g. 1200:4/min,1200:8/min [default: DEFAULT_INTERVALS setting]"),
    seed: int = typer.Option(7, help="Random seed"),
    top_k: Optional[int] = typer.Option(None, min=1, help="Retrieved chunks per request [default: DEFAULT_TOP_K setting]"),
    time_scale: float = typer.Option(1.0, click_type=click.FloatRange(min=0.0, min_open=True), help="Divide all durations by this factor"),
    out: Path = typer.Option(Path("workload.csv"), help="Output CSV"),
    force: bool = typer.Option(False, "--force", help="Overwrite existing output"),
):
    """Generate interval-rated Poisson arrivals"""
    log_run_info(logger, "gen-workload", seed)
    if intervals is None:
        intervals = DEFAULTS["DEFAULT_INTERVALS"]
    schedule = parse_intervals(intervals).scaled(time_scale)
    requests = generate_poisson(schedule, seed, top_k)
    artifacts.ensure_writable([out], force)
    save_trace(requests, out)
    typer.echo(f"{len(requests)} requests written to {out}")


def _scenario(hardware: str, model: str, database: str
              ) -> Tuple[HardwareProfile, ModelProfile, DatabaseProfile]:
    hw = load_profile(hardware, HardwareProfile)
    llm = load_profile(model, ModelProfile)
    db = load_profile(database, DatabaseProfile, hw=hw)
    return hw, llm, db


@app.command("plan")
@guarded
def cmd_plan(
    hardware: str = typer.Option("preset:pf-high", help="Hardware profile file or preset:<name>"),
    model: str = typer.Option("preset:model-70b", help="Model profile file or preset:<name>"),
    database: str = typer.Option("preset:db-256g", help="Database profile file or preset:<name>"),
    placement: Optional[Path] = typer.Option(None, help="Placement YAML to check"),
    transfer_to: Optional[Path] = typer.Option(None, help="Second placement: report the transfer plan"),
    batch: Optional[int] = typer.Option(None, min=1, help="Enumerate the default grid at this batch size"),
    out: Optional[Path] = typer.Option(None, help="Write JSON here instead of stdout"),
    force: bool = typer.Option(False, "--force"),
):
    """Check placement feasibility, enumerate feasible placements or plan a transfer"""
    log_run_info(logger, "plan")
    hw, llm, db = _scenario(hardware, model, database)
    result: Dict[str, Any] = {}
    if placement is not None:
        cfg = read_config(placement, PlacementConfig)
        result["placement"] = cfg.to_dict()
        result["feasibility"] = check_feasible(cfg, hw, llm, db).to_dict()
        if transfer_to is not None:
            target = read_config(transfer_to, PlacementConfig)
            result["transfer"] = plan_transfer(cfg, target, hw, llm, db).to_dict()
    elif batch is not None:
        grid = PlacementGrid.default(db, DEFAULTS["GRID_STEP"], DEFAULTS["GRID_MAX_BATCH"])
        grid = PlacementGrid(grid.w_gpu_steps, grid.c_gpu_steps, grid.partitions, (batch,))
        feasible = enumerate_feasible(hw, llm, db, grid)
        result["batch"] = batch
        result["grid_points"] = grid.size
        result["feasible_count"] = len(feasible)
        if feasible:
            best = max(feasible, key=lambda c: (c.w_gpu, c.c_gpu, c.resident_partitions))
            result["most_resident"] = best.to_dict()
        else:
            result["binding"] = diagnose(hw, llm, db, batch)
    else:
        raise ConfigError("plan needs --placement or --batch")
    emit(artifacts.to_json(result), out, force)


def _experiment(path: Path, seed: Optional[int]) -> ExperimentSpec:
    spec = load_experiment(path)
    if seed is not None:
        spec = replace(spec, seed=seed)
    return spec


@app.command("profile")
@guarded
def cmd_profile(
    experiment: Path = typer.Argument(..., help="Experiment YAML"),
    out: Path = typer.Option(Path("policy.json"), help="PolicyTable JSON"),
    seed: Optional[int] = typer.Option(None, help="Override the experiment seed"),
    force: bool = typer.Option(False, "--force"),
):
    """Search placements per backlog range and write the policy table"""
    spec = _experiment(experiment, seed)
    log_run_info(logger, "profile", spec.seed)
    artifacts.ensure_writable([out], force)
    table = _profile(spec.scaled())
    artifacts.write_json(table.to_dict(), out)
    for entry in table.entries:
        typer.echo(f"backlog {entry.range_label()}: {entry.placement.describe()} "
                   f"fit a={entry.fit.a:.6g} c={entry.fit.c:.6g}")
        for i, step in enumerate(entry.path):
            typer.echo(f"  step {i}: {step.placement.describe()} t_ret={step.t_retrieval:.3f} "
                       f"t_gen={step.t_generation:.3f} objective={step.objective:.3f}")
    typer.echo(f"policy written to {out}")


def _profile(spec: ExperimentSpec) -> PolicyTable:
    return active_profile(spec.hardware, spec.model, spec.database, spec.probe_batches,
                          spec.partition_candidates, spec.batch_candidates,
                          spec.prefetch_mode, spec.seed, DEFAULTS["GRID_STEP"])


def _load_policy(path: Path) -> PolicyTable:
    return PolicyTable.from_dict(artifacts.read_json(path))


def _simulate_one(spec: ExperimentSpec, mode: str, policy: Optional[Dict[str, Any]],
                  workload: list, out_dir: Path, force: bool) -> str:
    """One mode of one experiment; runs in a worker process under --jobs"""
    cfg = SimConfig(
        mode=SimMode(mode), hw=spec.hardware, model=spec.model, db=spec.database,
        policy=None if policy is None else PolicyTable.from_dict(policy),
        prefetch_mode=spec.prefetch_mode, max_retrieval_batch=spec.max_retrieval_batch,
        seed=spec.seed, batch_candidates=spec.batch_candidates,
        batch_policy=BatchPolicy(spec.batch_policy), fixed_batch=spec.fixed_batch,
        schedule=spec.schedule, serial_window=spec.serial_window,
        serial_batch_size=spec.serial_batch_size,
    )
    outcome = run(workload, cfg)
    artifacts.write_outcome(outcome, out_dir, force)
    return metrics_report(outcome).render()


@app.command("simulate")
@guarded
def cmd_simulate(
    experiment: Path = typer.Argument(..., help="Experiment YAML"),
    mode: ModeChoice = typer.Option(ModeChoice.all, help="Which system to run (all = experiment modes)"),
    policy: Optional[Path] = typer.Option(None, help="PolicyTable JSON (overrides the experiment)"),
    auto_profile: bool = typer.Option(False, "--auto-profile", help="Profile inline when no policy is given"),
    batch_policy: Optional[BatchPolicy] = typer.Option(None, help="Override the batch policy"),
    out: Optional[Path] = typer.Option(None, help="Output directory (default from experiment)"),
    seed: Optional[int] = typer.Option(None, help="Override the experiment seed"),
    jobs: int = typer.Option(1, min=1, help="Run modes in parallel processes"),
    force: bool = typer.Option(False, "--force"),
):
    """Replay the workload and write traces.csv, events.jsonl and summary.json per mode"""
    spec = _experiment(experiment, seed)
    if batch_policy is not None:
        spec = replace(spec, batch_policy=batch_policy.value)
    log_run_info(logger, "simulate", spec.seed)
    modes: List[str] = list(spec.modes) if mode is ModeChoice.all else [mode.value]
    out_dir = out or spec.output_dir
    scaled = spec.scaled()

    policy_data = None
    if "pipelined" in modes:
        policy_path = policy or spec.policy_path
        if policy_path is not None:
            if not Path(policy_path).exists():
                raise ConfigError(f"Policy file {policy_path} does not exist")
            policy_data = _load_policy(policy_path).to_dict()
        elif auto_profile:
            policy_data = _profile(scaled).to_dict()
        else:
            raise ConfigError("pipelined mode needs a policy file (--policy) or --auto-profile")

    if scaled.workload_path is not None:
        workload = load_trace(scaled.workload_path)
    else:
        workload = generate_poisson(scaled.schedule, scaled.seed, scaled.top_k)

    runs = [(m, out_dir / m if len(modes) > 1 else out_dir) for m in modes]
    for _, run_dir in runs:
        artifacts.ensure_writable(artifacts.outcome_paths(run_dir), force)

    if jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(runs))) as pool:
            futures = [pool.submit(_simulate_one, scaled, m, policy_data, workload, d, force)
                       for m, d in runs]
            reports = [f.result() for f in futures]
    else:
        reports = [_simulate_one(scaled, m, policy_data, workload, d, force) for m, d in runs]

    for (m, run_dir), report in zip(runs, reports):
        typer.echo(report)
        typer.echo(f"artifacts: {run_dir}\n")


@app.command("compare")
@guarded
def cmd_compare(
    a: Path = typer.Argument(..., help="summary.json (or run directory) of system A"),
    b: Path = typer.Argument(..., help="summary.json (or run directory) of system B"),
    out: Optional[Path] = typer.Option(None, help="Also write the comparison JSON here"),
    force: bool = typer.Option(False, "--force"),
):
    """Ratios and deltas of latency metrics between two runs on the same workload"""
    log_run_info(logger, "compare")
    result = compare(artifacts.read_summary(a), artifacts.read_summary(b))
    typer.echo(result.render(), nl=False)
    if out is not None:
        artifacts.ensure_writable([out], force)
        artifacts.write_json(result.to_dict(), out)


@app.command("timeline")
@guarded
def cmd_timeline(
    placement: Path = typer.Argument(..., help="Placement YAML"),
    hardware: str = typer.Option("preset:pf-high"),
    model: str = typer.Option("preset:model-70b"),
    phase: Phase = typer.Option(Phase.DECODE),
    prefetch_mode: PrefetchMode = typer.Option(PrefetchMode.CONTINUOUS),
    prefill_scale: float = typer.Option(1.0, min=0.0),
    out: Optional[Path] = typer.Option(None, help="Write CSV here instead of stdout"),
    force: bool = typer.Option(False, "--force"),
):
    """Per-layer transfer and compute timeline of one jitter-free step"""
    log_run_info(logger, "timeline")
    hw = load_profile(hardware, HardwareProfile)
    llm = load_profile(model, ModelProfile)
    cfg = read_config(placement, PlacementConfig)
    timeline = step_timeline(cfg, hw, llm, phase, prefetch_mode, prefill_scale)
    emit(timeline.to_csv(), out, force)
