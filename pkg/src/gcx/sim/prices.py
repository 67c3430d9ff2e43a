"""Deterministic price paths for the simulator.

Two kinds are supported:

* ``explicit``: a literal list of ``[time, price]`` points.
* ``gbm``: geometric Brownian motion sampled on a fixed step from a
  seeded ``random.Random``.  Floats appear only inside the generator;
  every emitted price is quantized to the exchange quantum the moment it
  is produced, so downstream arithmetic stays exact and replayable.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from decimal import Decimal
from typing import List, Mapping, Optional, Tuple

from ..errors import ScenarioInvalid
from ..numerics import SECONDS_PER_YEAR, dec, quantize


@dataclass
class PricePath:
    instrument_id: str
    points: List[Tuple[int, Decimal]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.points:
            raise ScenarioInvalid(f"price path for {self.instrument_id!r} has no points")
        last_t = None
        for t, price in self.points:
            if last_t is not None and t <= last_t:
                raise ScenarioInvalid(
                    f"price path for {self.instrument_id!r} not strictly increasing at t={t}"
                )
            if price < 0:
                raise ScenarioInvalid(
                    f"price path for {self.instrument_id!r} has negative price at t={t}"
                )
            last_t = t

    @classmethod
    def explicit(cls, instrument_id: str, points: List[Tuple[int, Decimal]]) -> "PricePath":
        return cls(instrument_id, [(int(t), quantize(dec(p))) for t, p in points])

    @classmethod
    def gbm(
        cls,
        instrument_id: str,
        seed: int,
        s0: Decimal,
        drift: Decimal,
        vol: Decimal,
        start: int,
        end: int,
        step: int,
    ) -> "PricePath":
        if step <= 0:
            raise ScenarioInvalid(f"gbm step must be positive for {instrument_id!r}")
        if end < start:
            raise ScenarioInvalid(f"gbm end before start for {instrument_id!r}")
        if s0 <= 0:
            raise ScenarioInvalid(f"gbm initial price must be positive for {instrument_id!r}")
        rng = random.Random(seed)
        mu = float(drift)
        sigma = float(vol)
        dt = step / SECONDS_PER_YEAR
        level = float(s0)
        points = [(int(start), quantize(dec(s0)))]
        t = int(start) + step
        while t <= end:
            z = rng.gauss(0.0, 1.0)
            level *= math.exp((mu - 0.5 * sigma * sigma) * dt + sigma * math.sqrt(dt) * z)
            points.append((t, quantize(dec(repr(level)))))
            t += step
        return cls(instrument_id, points)

    @classmethod
    def from_spec(cls, instrument_id: str, spec: Mapping, default_seed: int, salt: int) -> "PricePath":
        """Build a path from its scenario JSON spec.

        GBM specs without an explicit ``seed`` derive one from the
        scenario seed plus a per-path salt, so overriding the scenario
        seed re-rolls every unseeded path while seeded paths stay put.
        """
        kind = spec.get("kind")
        if kind == "explicit":
            raw = spec.get("points")
            if not isinstance(raw, list) or not raw:
                raise ScenarioInvalid(f"explicit path for {instrument_id!r} needs points")
            return cls.explicit(instrument_id, [(p[0], p[1]) for p in raw])
        if kind == "gbm":
            for key in ("s0", "vol", "end", "step"):
                if key not in spec:
                    raise ScenarioInvalid(f"gbm path for {instrument_id!r} missing {key!r}")
            seed = spec.get("seed")
            if seed is None:
                seed = default_seed * 1_000_003 + salt
            return cls.gbm(
                instrument_id,
                seed=int(seed),
                s0=dec(spec["s0"]),
                drift=dec(spec.get("drift", "0")),
                vol=dec(spec["vol"]),
                start=int(spec.get("start", 0)),
                end=int(spec["end"]),
                step=int(spec["step"]),
            )
        raise ScenarioInvalid(f"unknown path kind {kind!r} for {instrument_id!r}")

    def value_at(self, at: int) -> Decimal:
        """Price in force at time ``at``: the last point at or before it."""
        value = self.points[0][1]
        for t, price in self.points:
            if t > at:
                break
            value = price
        return value

    def times(self) -> List[int]:
        return [t for t, _ in self.points]
