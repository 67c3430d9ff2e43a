"""Scenario definition, validation, and compilation to engine commands.

A scenario is a declarative JSON document: configuration, instruments,
participants, price paths, scripted agent events, and assertions.  The
compiler turns it into a flat list of timestamped engine commands.

Within a single timestamp, commands run in a fixed phase order:

* phase 0: setup (listings, guarantors, accounts, static vols)
* phase 1: mark updates from price paths
* phase 2: scripted agent events, in document order
* phase 3: lifecycle (option expiry before future expiry, capacity
  screens, deadline sweeps, funding)
* phase 4: margin sweeps

so agents always react to fresh marks and lifecycle always sees the
day's trades.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

from ..engine import Engine
from ..errors import ScenarioInvalid
from ..numerics import SECONDS_PER_HOUR, dec, quantize
from .prices import PricePath

SCHEMA_VERSION = 1

ENGINE_OPS = frozenset(
    name[len("_op_"):] for name in dir(Engine) if name.startswith("_op_")
)

# instrument kinds that produce delivery obligations at expiry
_FUTURE_KINDS = {"future"}
_OPTION_KINDS = {"call_option", "put_option"}


_COMPARATORS = {
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
    "gt": lambda a, b: a > b,
    "ge": lambda a, b: a >= b,
    "eq": lambda a, b: a == b,
}


def _when_holds(cond: Mapping[str, Any], at: int,
                paths: Mapping[str, PricePath]) -> bool:
    """Evaluate an event's ``when`` clause against the price paths."""
    pid = cond.get("path")
    if pid not in paths:
        raise ScenarioInvalid(f"when clause references unknown path {pid!r}")
    value = paths[pid].value_at(int(cond.get("at", at)))
    ops = [k for k in cond if k in _COMPARATORS]
    if len(ops) != 1:
        raise ScenarioInvalid("when clause needs exactly one comparator")
    return _COMPARATORS[ops[0]](value, dec(cond[ops[0]]))


def _resolve(value: Any, at: int, paths: Mapping[str, PricePath]) -> Any:
    """Replace ``{"path": id, ...}`` placeholders with path values.

    ``at`` defaults to the event's own time; ``offset`` shifts the
    resolved price, for quoting a spread around an index.
    """
    if isinstance(value, dict) and "path" in value:
        pid = value["path"]
        if pid not in paths:
            raise ScenarioInvalid(f"placeholder references unknown path {pid!r}")
        resolved = paths[pid].value_at(int(value.get("at", at)))
        if "offset" in value:
            resolved = quantize(resolved + dec(value["offset"]))
        return str(resolved)
    if isinstance(value, dict):
        return {k: _resolve(v, at, paths) for k, v in value.items()}
    if isinstance(value, list):
        return [_resolve(v, at, paths) for v in value]
    return value


@dataclass
class Scenario:
    name: str
    seed: int
    end: int
    config: Dict[str, Any] = field(default_factory=dict)
    instruments: List[Dict[str, Any]] = field(default_factory=list)
    guarantors: List[Dict[str, Any]] = field(default_factory=list)
    accounts: List[Dict[str, Any]] = field(default_factory=list)
    prices: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    vols: Dict[str, Any] = field(default_factory=dict)
    token_mark: Any = None
    events: List[Dict[str, Any]] = field(default_factory=list)
    auto: Dict[str, Any] = field(default_factory=dict)
    assertions: List[Dict[str, Any]] = field(default_factory=list)

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Scenario":
        if not isinstance(raw, Mapping):
            raise ScenarioInvalid("scenario must be a JSON object")
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ScenarioInvalid(
                f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
        for key in ("name", "seed", "end"):
            if key not in raw:
                raise ScenarioInvalid(f"scenario missing required field {key!r}")
        scenario = cls(
            name=str(raw["name"]),
            seed=int(raw["seed"]),
            end=int(raw["end"]),
            config=dict(raw.get("config", {})),
            instruments=[dict(i) for i in raw.get("instruments", [])],
            guarantors=[dict(g) for g in raw.get("guarantors", [])],
            accounts=[dict(a) for a in raw.get("accounts", [])],
            prices={k: dict(v) for k, v in raw.get("prices", {}).items()},
            vols=dict(raw.get("vols", {})),
            token_mark=raw.get("token_mark"),
            events=[dict(e) for e in raw.get("events", [])],
            auto=dict(raw.get("auto", {})),
            assertions=[dict(a) for a in raw.get("assertions", [])],
        )
        scenario.validate()
        return scenario

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioInvalid(f"scenario is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "end": self.end,
            "config": self.config,
            "instruments": self.instruments,
            "guarantors": self.guarantors,
            "accounts": self.accounts,
            "prices": self.prices,
            "vols": self.vols,
            "token_mark": self.token_mark,
            "events": self.events,
            "auto": self.auto,
            "assertions": self.assertions,
        }

    # ------------------------------------------------------------------
    # validation

    def validate(self) -> None:
        from .report import ASSERTION_KINDS

        if self.end < 0:
            raise ScenarioInvalid("end must be non-negative")
        instrument_ids = set()
        for spec in self.instruments:
            iid = spec.get("id")
            if not iid:
                raise ScenarioInvalid("instrument without id")
            if iid in instrument_ids:
                raise ScenarioInvalid(f"duplicate instrument {iid!r}")
            instrument_ids.add(iid)

        guarantor_ids = set()
        for g in self.guarantors:
            gid = g.get("id")
            if not gid:
                raise ScenarioInvalid("guarantor without id")
            if gid in guarantor_ids:
                raise ScenarioInvalid(f"duplicate guarantor {gid!r}")
            guarantor_ids.add(gid)

        account_ids = set(guarantor_ids)
        for a in self.accounts:
            aid = a.get("id")
            if not aid:
                raise ScenarioInvalid("account without id")
            if aid in account_ids:
                raise ScenarioInvalid(f"duplicate account {aid!r}")
            if a.get("guarantor") not in guarantor_ids:
                raise ScenarioInvalid(
                    f"account {aid!r} references unknown guarantor "
                    f"{a.get('guarantor')!r}")
            account_ids.add(aid)

        for pid in self.prices:
            if pid not in instrument_ids:
                raise ScenarioInvalid(f"price path for unknown instrument {pid!r}")
        for vid in self.vols:
            if vid not in instrument_ids:
                raise ScenarioInvalid(f"vol for unknown instrument {vid!r}")

        spot_index = self.config.get("spot_index")
        if spot_index is not None and spot_index not in instrument_ids:
            raise ScenarioInvalid(f"spot_index {spot_index!r} is not a listed instrument")

        for i, event in enumerate(self.events):
            where = f"events[{i}]"
            if "time" not in event or int(event["time"]) < 0:
                raise ScenarioInvalid(f"{where} needs a non-negative time")
            if int(event["time"]) > self.end:
                raise ScenarioInvalid(f"{where} scheduled after scenario end")
            op = event.get("op")
            if op not in ENGINE_OPS:
                raise ScenarioInvalid(f"{where} has unknown op {op!r}")
            for key in ("account", "contributor"):
                if key in event and event[key] not in account_ids:
                    raise ScenarioInvalid(
                        f"{where} references unknown account {event[key]!r}")
            if "instrument" in event and event["instrument"] not in instrument_ids:
                raise ScenarioInvalid(
                    f"{where} references unknown instrument {event['instrument']!r}")
            if "when" in event:
                cond = event["when"]
                if not isinstance(cond, Mapping) or cond.get("path") not in self.prices:
                    raise ScenarioInvalid(f"{where} when clause needs a known path")
                if len([k for k in cond if k in _COMPARATORS]) != 1:
                    raise ScenarioInvalid(
                        f"{where} when clause needs exactly one comparator")

        for i, assertion in enumerate(self.assertions):
            where = f"assertions[{i}]"
            kind = assertion.get("kind")
            if kind not in ASSERTION_KINDS:
                raise ScenarioInvalid(f"{where} has unknown kind {kind!r}")
            if "account" in assertion and assertion["account"] not in account_ids:
                raise ScenarioInvalid(
                    f"{where} references unknown account {assertion['account']!r}")

    # ------------------------------------------------------------------
    # compilation

    def build_paths(self, seed: Optional[int] = None) -> Dict[str, PricePath]:
        effective = self.seed if seed is None else int(seed)
        paths: Dict[str, PricePath] = {}
        for salt, pid in enumerate(sorted(self.prices)):
            paths[pid] = PricePath.from_spec(pid, self.prices[pid], effective, salt)
        return paths

    def compile(self, paths: Mapping[str, PricePath]) -> List[Tuple[int, Dict[str, Any]]]:
        """Materialize the full command list, ordered by (time, phase)."""
        staged: List[Tuple[int, int, int, Dict[str, Any]]] = []
        counter = 0

        def stage(at: int, phase: int, cmd: Dict[str, Any]) -> None:
            nonlocal counter
            staged.append((int(at), phase, counter, cmd))
            counter += 1

        # phase 0: setup
        for spec in self.instruments:
            stage(0, 0, {"op": "list_instrument", "spec": spec})
        for g in self.guarantors:
            cmd = {"op": "create_guarantor"}
            cmd.update(g)
            stage(0, 0, cmd)
        for a in self.accounts:
            cmd = {"op": "create_account"}
            cmd.update(a)
            stage(0, 0, cmd)
        for vid in sorted(self.vols):
            stage(0, 0, {"op": "set_vol", "instrument": vid,
                         "vol": str(self.vols[vid])})
        if self.token_mark is not None and not isinstance(self.token_mark, Mapping):
            stage(0, 0, {"op": "set_token_mark", "price": str(self.token_mark)})

        # phase 1: marks from price paths, merged across instruments by time
        mark_points: List[Tuple[int, str, str]] = []
        for pid in sorted(paths):
            for t, price in paths[pid].points:
                if t <= self.end:
                    mark_points.append((t, pid, str(price)))
        mark_points.sort(key=lambda p: (p[0], p[1]))
        for t, pid, price in mark_points:
            stage(t, 1, {"op": "set_mark", "instrument": pid, "price": price})
        if isinstance(self.token_mark, Mapping):
            token_path = PricePath.from_spec("<token>", self.token_mark,
                                             self.seed, len(paths))
            for t, price in token_path.points:
                if t <= self.end:
                    stage(t, 1, {"op": "set_token_mark", "price": str(price)})

        # phase 2: scripted agent events
        for event in self.events:
            at = int(event["time"])
            if "when" in event and not _when_holds(event["when"], at, paths):
                continue
            cmd = {k: v for k, v in event.items() if k not in ("time", "when")}
            cmd = _resolve(cmd, at, paths)
            stage(at, 2, cmd)

        # phase 3: lifecycle
        if self.auto.get("lifecycle", True):
            self._stage_lifecycle(stage, paths)

        # phase 4: margin sweeps after every distinct mark time
        if self.auto.get("margin_sweeps", True):
            for t in sorted({p[0] for p in mark_points}):
                stage(t, 4, {"op": "margin_sweep"})

        staged.sort(key=lambda item: (item[0], item[1], item[2]))
        return [(at, cmd) for at, _, _, cmd in staged]

    def _stage_lifecycle(self, stage, paths: Mapping[str, PricePath]) -> None:
        clearing = self.config.get("clearing", {})
        lead = int(clearing.get("verification_lead_hours", 24)) * SECONDS_PER_HOUR
        window = int(clearing.get("delivery_window_hours", 24)) * SECONDS_PER_HOUR
        spot_index = self.config.get("spot_index")

        def settlement_source(spec: Mapping[str, Any]) -> PricePath:
            iid = spec["id"]
            if spot_index in paths:
                return paths[spot_index]
            if iid in paths:
                return paths[iid]
            raise ScenarioInvalid(
                f"no price path to settle {iid!r}: provide one for it or "
                f"for the spot index")

        options = [s for s in self.instruments if s.get("kind") in _OPTION_KINDS]
        futures = [s for s in self.instruments if s.get("kind") in _FUTURE_KINDS]
        perps = [s for s in self.instruments if s.get("kind") == "perpetual"]

        by_id = {s["id"]: s for s in self.instruments}
        for spec in sorted(options, key=lambda s: (int(s["expiry"]), s["id"])):
            expiry = int(spec["expiry"])
            if expiry > self.end:
                continue
            underlying = spec.get("underlying")
            future = by_id.get(underlying)
            if future is not None and int(future.get("expiry", -1)) == expiry:
                # the underlying future converges to spot at shared expiry
                source = settlement_source(future)
            elif underlying in paths:
                source = paths[underlying]
            else:
                source = settlement_source(spec)
            stage(expiry, 3, {"op": "expire_options", "instrument": spec["id"],
                              "underlying_price": str(source.value_at(expiry))})

        deadline_times = set()
        for spec in sorted(futures, key=lambda s: (int(s["expiry"]), s["id"])):
            expiry = int(spec["expiry"])
            if expiry > self.end:
                continue
            source = settlement_source(spec)
            screen_at = expiry - lead
            if spec.get("settlement", "physical") == "physical" and screen_at > 0:
                stage(screen_at, 3, {"op": "screen_capacity",
                                     "instrument": spec["id"]})
            stage(expiry, 3, {"op": "expire_future", "instrument": spec["id"],
                              "settlement_price": str(source.value_at(expiry))})
            if spec.get("settlement", "physical") == "physical":
                deadline_times.add(expiry + window + 1)

        for t in sorted(deadline_times):
            if t <= self.end:
                stage(t, 3, {"op": "deadline_sweep"})

        if self.auto.get("funding", bool(perps)):
            for spec in sorted(perps, key=lambda s: s["id"]):
                interval = int(spec.get("funding_interval") or 0)
                if interval <= 0:
                    continue
                t = interval
                while t <= self.end:
                    stage(t, 3, {"op": "funding", "instrument": spec["id"]})
                    t += interval
