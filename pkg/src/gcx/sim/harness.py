"""Run scenarios and replay their logs.

A run produces a JSON-lines log: one header record, one record per
executed command, one record per emitted engine event, and a footer
carrying the final state hash.  Replaying the command records rebuilds
the exact same state; the footer hash proves it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

from ..engine import ENGINE_VERSION, Engine, EngineConfig
from ..errors import CorruptLog, VersionMismatch
from .clock import SimClock
from .report import build_report, canonical_json
from .scenario import SCHEMA_VERSION, Scenario


@dataclass
class RunResult:
    scenario_name: str
    seed: int
    engine: Engine
    report: dict
    log_lines: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.report["all_assertions_passed"])

    def report_json(self) -> str:
        return canonical_json(self.report)

    def write_log(self, path: str) -> None:
        with open(path, "w") as fh:
            for line in self.log_lines:
                fh.write(line + "\n")


def run_scenario(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    effective_seed = scenario.seed if seed is None else int(seed)
    paths = scenario.build_paths(effective_seed)
    commands = scenario.compile(paths)

    engine = Engine(EngineConfig.from_dict(scenario.config))
    clock = SimClock()
    for at, cmd in commands:
        clock.schedule(at, cmd)

    lines = [canonical_json({
        "type": "header",
        "schema_version": SCHEMA_VERSION,
        "engine_version": ENGINE_VERSION,
        "scenario": scenario.name,
        "seed": effective_seed,
        "config": scenario.config,
    })]
    event_cursor = 0
    while clock:
        at, cmd = clock.pop()
        engine.execute(at, cmd)
        lines.append(canonical_json({"type": "cmd", "t": at, "data": cmd}))
        for event in engine.events[event_cursor:]:
            lines.append(canonical_json({"type": "evt", "data": event}))
        event_cursor = len(engine.events)

    state_hash = engine.state_hash()
    lines.append(canonical_json({
        "type": "footer",
        "state_hash": state_hash,
        "commands": len(commands),
        "events": len(engine.events),
    }))

    report = build_report(engine, scenario, paths, effective_seed)
    return RunResult(scenario.name, effective_seed, engine, report, lines)


def replay_log(lines: Iterable[str]) -> Engine:
    """Rebuild engine state from a log and verify the footer hash."""
    header = None
    footer = None
    engine: Optional[Engine] = None
    commands = 0
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLog(f"line {i + 1} is not valid JSON: {exc}") from exc
        rtype = record.get("type")
        if rtype == "header":
            if record.get("schema_version") != SCHEMA_VERSION:
                raise VersionMismatch(
                    f"log schema {record.get('schema_version')!r}, "
                    f"expected {SCHEMA_VERSION}")
            if record.get("engine_version") != ENGINE_VERSION:
                raise VersionMismatch(
                    f"log written by engine {record.get('engine_version')!r}, "
                    f"this is {ENGINE_VERSION}")
            header = record
            engine = Engine(EngineConfig.from_dict(record.get("config", {})))
        elif rtype == "cmd":
            if engine is None:
                raise CorruptLog("command record before header")
            engine.execute(int(record["t"]), record["data"])
            commands += 1
        elif rtype == "evt":
            continue
        elif rtype == "footer":
            footer = record
        else:
            raise CorruptLog(f"line {i + 1} has unknown record type {rtype!r}")
    if header is None:
        raise CorruptLog("log has no header")
    if footer is None:
        raise CorruptLog("log has no footer (truncated?)")
    if commands != int(footer.get("commands", -1)):
        raise CorruptLog(
            f"log has {commands} commands, footer says {footer.get('commands')}")
    final = engine.state_hash()
    if final != footer.get("state_hash"):
        raise CorruptLog(
            f"replayed hash {final} != footer hash {footer.get('state_hash')}")
    return engine
