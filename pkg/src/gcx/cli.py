"""Command line interface.

Exit codes: 0 success (all assertions pass), 1 scenario assertions
failed, 2 invalid input (bad JSON, unknown scenario, corrupt log).

Every subcommand takes ``--json`` for machine-readable output.  The
``GCX_CONFIG`` environment variable may point to a JSON file with
engine configuration defaults; scenario files override it key by key.
"""

from __future__ import annotations

import json
import os
import sys
from typing import Any, Dict, Optional

import click

from .compute_units import (
    DEFAULT_THRESHOLDS,
    ConvLayerSpec,
    FlopsMode,
    ReferenceSystem,
    SystemProfile,
    TrainingJobSpec,
    compute_hours,
    conv_layer_flops,
    grade,
    required_rate,
    training_flops,
)
from .errors import GcxError
from .instruments import InstrumentSpec
from .numerics import dec, quantize
from .risk import Exposure, MarginParams, initial_margin, maintenance_margin
from .sim import Scenario, replay_log, run_scenario, scenario_library
from .sim.report import canonical_json

EXIT_ASSERTIONS_FAILED = 1
EXIT_INVALID_INPUT = 2


def _die(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_INVALID_INPUT)


def _read_json(source: str) -> Any:
    """Parse JSON from a file path or '-' for stdin."""
    try:
        text = sys.stdin.read() if source == "-" else open(source).read()
    except OSError as exc:
        _die(f"cannot read {source!r}: {exc}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        _die(f"{source!r} is not valid JSON: {exc}")


def _env_config() -> Dict[str, Any]:
    path = os.environ.get("GCX_CONFIG")
    if not path:
        return {}
    raw = _read_json(path)
    if not isinstance(raw, dict):
        _die(f"GCX_CONFIG file {path!r} must hold a JSON object")
    return raw


def _merge_config(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def _load_scenario(ref: str) -> Scenario:
    library = scenario_library()
    if ref in library:
        scenario = library[ref]
    elif os.path.exists(ref):
        try:
            scenario = Scenario.from_json(open(ref).read())
        except GcxError as exc:
            _die(str(exc))
    else:
        known = ", ".join(sorted(library))
        _die(f"{ref!r} is neither a scenario file nor a built-in ({known})")
    env = _env_config()
    if env:
        scenario.config = _merge_config(env, scenario.config)
        scenario.validate()
    return scenario


def _reference_from(config: Dict[str, Any],
                    performance: Optional[str],
                    efficiency: Optional[str]) -> ReferenceSystem:
    raw = dict(config.get("reference", {}))
    if performance is not None:
        raw["reference_performance"] = performance
    if efficiency is not None:
        raw["reference_efficiency"] = efficiency
    raw.setdefault("id", "reference")
    raw.setdefault("reference_performance", "1e12")
    raw.setdefault("reference_efficiency", "5e9")
    return ReferenceSystem(**raw)


def _emit(payload: Dict[str, Any], as_json: bool, human: str) -> None:
    if as_json:
        click.echo(canonical_json(payload))
    else:
        click.echo(human)


@click.group()
def main() -> None:
    """Compute-hour exchange tools: sizing, grading, margin, simulation."""


# ----------------------------------------------------------------------
# compute units


@main.command("estimate-flops")
@click.option("--job", "job_src", metavar="FILE",
              help="training job JSON (use '-' for stdin)")
@click.option("--layer", "layer_src", metavar="FILE",
              help="conv layer JSON (use '-' for stdin)")
@click.option("--mode", type=click.Choice([m.value for m in FlopsMode]),
              default=FlopsMode.STANDARD.value, show_default=True,
              help="conv layer counting mode")
@click.option("--json", "as_json", is_flag=True)
def estimate_flops(job_src: Optional[str], layer_src: Optional[str],
                   mode: str, as_json: bool) -> None:
    """Estimate FLOPs for a training job or a single conv layer."""
    if bool(job_src) == bool(layer_src):
        _die("provide exactly one of --job or --layer")
    try:
        if layer_src:
            layer = ConvLayerSpec(**_read_json(layer_src))
            flops = conv_layer_flops(layer, FlopsMode(mode))
            _emit({"flops": flops, "mode": mode}, as_json,
                  f"flops: {flops}")
            return
        job = TrainingJobSpec(**_read_json(job_src))
        flops = training_flops(job)
        payload: Dict[str, Any] = {"flops": flops}
        pflops = quantize(dec(flops) / dec(10) ** 15)
        human = f"flops: {flops} ({dec(flops):.6E}, {pflops} PFLOPs)"
        if job.deadline_hours is not None:
            rate, ch = required_rate(job, _reference_from(_env_config(),
                                                          None, None))
            payload["required_rate_flops"] = str(rate)
            payload["compute_hours"] = str(ch.value)
            human += (f"\nrequired rate: {rate} FLOPS"
                      f"\ncompute hours: {ch.value}")
        _emit(payload, as_json, human)
    except (GcxError, TypeError, ValueError) as exc:
        _die(str(exc))


@main.command("compute-hours")
@click.option("--performance", required=True, metavar="FLOPS",
              help="measured sustained FLOPS")
@click.option("--hours", required=True, metavar="H", help="wall-clock hours")
@click.option("--uptime", default="100", show_default=True,
              metavar="PCT", help="uptime percentage scaling the window")
@click.option("--reference-performance", "ref_perf", metavar="FLOPS",
              help="override the reference system performance")
@click.option("--json", "as_json", is_flag=True)
def compute_hours_cmd(performance: str, hours: str, uptime: str,
                      ref_perf: Optional[str], as_json: bool) -> None:
    """Normalize measured capacity over a window into compute hours."""
    try:
        ref = _reference_from(_env_config(), ref_perf, None)
        profile = SystemProfile(provider_id="<cli>",
                                measured_performance=dec(performance),
                                uptime_pct=dec(uptime))
        operational = dec(hours) * profile.uptime_pct / 100
        ch = compute_hours(profile, ref, operational)
    except (GcxError, ValueError, ArithmeticError) as exc:
        _die(str(exc))
    _emit({"compute_hours": str(ch.value),
           "operational_hours": str(operational)},
          as_json, f"compute hours: {ch.value}")


@main.command("grade")
@click.argument("profile_src", metavar="PROFILE")
@click.option("--reference-performance", "ref_perf", metavar="FLOPS")
@click.option("--reference-efficiency", "ref_eff", metavar="FLOPS_PER_WATT")
@click.option("--json", "as_json", is_flag=True)
def grade_cmd(profile_src: str, ref_perf: Optional[str],
              ref_eff: Optional[str], as_json: bool) -> None:
    """Grade a provider profile (JSON file or '-') against the reference."""
    try:
        profile = SystemProfile(**_read_json(profile_src))
        ref = _reference_from(_env_config(), ref_perf, ref_eff)
        triple = grade(profile, ref, DEFAULT_THRESHOLDS)
    except (GcxError, TypeError, ValueError) as exc:
        _die(str(exc))
    _emit({"grade": str(triple),
           "performance": triple.performance.value,
           "reliability": int(triple.reliability),
           "energy": triple.energy.value,
           "energy_defaulted": triple.energy_defaulted},
          as_json, f"grade: {triple}")


# ----------------------------------------------------------------------
# risk


@main.command("margin")
@click.argument("portfolio_src", metavar="PORTFOLIO")
@click.option("--json", "as_json", is_flag=True)
def margin_cmd(portfolio_src: str, as_json: bool) -> None:
    """Portfolio margin from a JSON document.

    Expects {"instruments": [...], "exposures": [{"instrument", "quantity"}],
    "marks": {...}, "vols": {...}, "params": {...}, "now": 0}.
    """
    doc = _read_json(portfolio_src)
    try:
        specs = {raw["id"]: InstrumentSpec.from_dict(raw)
                 for raw in doc.get("instruments", [])}
        exposures = [Exposure(e["instrument"], int(e["quantity"]))
                     for e in doc.get("exposures", [])]
        marks = {k: dec(v) for k, v in doc.get("marks", {}).items()}
        vols = {k: dec(v) for k, v in doc.get("vols", {}).items()}
        params = MarginParams(**doc.get("params", {}))
        initial = initial_margin(exposures, marks, vols, specs,
                                 now=int(doc.get("now", 0)), params=params)
        maintenance = maintenance_margin(initial, params)
    except (GcxError, TypeError, ValueError, KeyError) as exc:
        _die(str(exc))
    _emit({"initial": str(initial), "maintenance": str(maintenance)},
          as_json,
          f"initial margin: {initial}\nmaintenance margin: {maintenance}")


# ----------------------------------------------------------------------
# simulation


@main.command("list-instruments")
@click.argument("scenario_ref", metavar="SCENARIO")
@click.option("--json", "as_json", is_flag=True)
def list_instruments(scenario_ref: str, as_json: bool) -> None:
    """List the instruments a scenario would list on the exchange."""
    scenario = _load_scenario(scenario_ref)
    if as_json:
        click.echo(canonical_json({"instruments": scenario.instruments}))
        return
    for raw in scenario.instruments:
        spec = InstrumentSpec.from_dict(raw)
        extra = []
        if spec.expiry is not None:
            extra.append(f"expiry={spec.expiry}")
        if spec.strike is not None:
            extra.append(f"strike={spec.strike}")
        if spec.underlying:
            extra.append(f"underlying={spec.underlying}")
        detail = f" ({', '.join(extra)})" if extra else ""
        click.echo(f"{spec.id}: {spec.kind.value} size={spec.contract_size} "
                   f"tick={spec.tick_size}{detail}")


@main.command("run")
@click.argument("scenario_ref", metavar="SCENARIO")
@click.option("--seed", type=int, help="override the scenario seed")
@click.option("--log", "log_path", type=click.Path(dir_okay=False),
              help="write the command/event log here")
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              help="write the canonical JSON report here")
@click.option("--json", "as_json", is_flag=True,
              help="print the full report as JSON")
def run_cmd(scenario_ref: str, seed: Optional[int], log_path: Optional[str],
            report_path: Optional[str], as_json: bool) -> None:
    """Run a scenario; exit 1 if any of its assertions fail."""
    scenario = _load_scenario(scenario_ref)
    try:
        result = run_scenario(scenario, seed=seed)
    except GcxError as exc:
        _die(str(exc))
    if log_path:
        result.write_log(log_path)
    if report_path:
        with open(report_path, "w") as fh:
            fh.write(result.report_json() + "\n")
    if as_json:
        click.echo(result.report_json())
    else:
        click.echo(f"scenario: {result.scenario_name} (seed {result.seed})")
        for check in result.report["assertions"]:
            status = "PASS" if check["passed"] else "FAIL"
            click.echo(f"{status} {check['name']}: {check['detail']}")
        click.echo(f"state hash: {result.report['state_hash']}")
    if not result.passed:
        sys.exit(EXIT_ASSERTIONS_FAILED)


@main.command("replay")
@click.argument("log_path", metavar="LOG", type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def replay_cmd(log_path: str, as_json: bool) -> None:
    """Replay a run log and verify its footer hash."""
    try:
        with open(log_path) as fh:
            engine = replay_log(fh)
    except OSError as exc:
        _die(f"cannot read {log_path!r}: {exc}")
    except GcxError as exc:
        _die(str(exc))
    _emit({"state_hash": engine.state_hash(), "time": engine.time},
          as_json, f"replay verified, state hash: {engine.state_hash()}")


@main.command("report")
@click.argument("log_path", metavar="LOG", type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def report_cmd(log_path: str, as_json: bool) -> None:
    """Summarize a run log without re-executing it."""
    counts: Dict[str, int] = {}
    header: Dict[str, Any] = {}
    footer: Dict[str, Any] = {}
    try:
        with open(log_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                rtype = record.get("type")
                if rtype == "header":
                    header = record
                elif rtype == "footer":
                    footer = record
                elif rtype == "evt":
                    etype = record["data"].get("e", "?")
                    counts[etype] = counts.get(etype, 0) + 1
    except OSError as exc:
        _die(f"cannot read {log_path!r}: {exc}")
    except (json.JSONDecodeError, KeyError) as exc:
        _die(f"{log_path!r} is not a valid run log: {exc}")
    if not header or not footer:
        _die(f"{log_path!r} is missing its header or footer")
    payload = {"scenario": header.get("scenario"), "seed": header.get("seed"),
               "commands": footer.get("commands"),
               "state_hash": footer.get("state_hash"),
               "events_by_type": dict(sorted(counts.items()))}
    lines = [f"scenario: {payload['scenario']} (seed {payload['seed']})",
             f"commands: {payload['commands']}"]
    lines += [f"  {etype}: {n}" for etype, n in payload["events_by_type"].items()]
    lines.append(f"state hash: {payload['state_hash']}")
    _emit(payload, as_json, "\n".join(lines))


@main.command("ledger")
@click.argument("scenario_ref", metavar="SCENARIO")
@click.option("--seed", type=int, help="override the scenario seed")
@click.option("--json", "as_json", is_flag=True)
def ledger_cmd(scenario_ref: str, seed: Optional[int], as_json: bool) -> None:
    """Run a scenario and print the final token ledger state."""
    scenario = _load_scenario(scenario_ref)
    try:
        result = run_scenario(scenario, seed=seed)
    except GcxError as exc:
        _die(str(exc))
    snapshot = result.engine.ledger.snapshot()
    if as_json:
        click.echo(canonical_json(snapshot))
        return
    click.echo(f"total supply: {snapshot['total_supply']}")
    click.echo(f"issued: {snapshot['cumulative_issued']} "
               f"burned: {snapshot['cumulative_burned']}")
    click.echo(f"fee pool: {snapshot['fee_pool']}")
    click.echo(f"insurance fund: stable={snapshot['insurance_fund']['stable']} "
               f"tokens={snapshot['insurance_fund']['tokens']}")
    for holder, balance in snapshot["balances"].items():
        click.echo(f"  balance {holder}: {balance}")
    for holder, staked in snapshot["staked"].items():
        click.echo(f"  staked {holder}: {staked}")


if __name__ == "__main__":
    main()
