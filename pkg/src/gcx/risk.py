"""Scenario-grid margining and participant reputation.

Initial margin revalues the portfolio at every node of a price x vol
grid and charges the worst loss.  Maintenance margin is a configured
fraction of initial.  Reputation is a pure fold over delivery events.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Mapping, Optional

from .errors import MissingMark, MissingVol, UnknownAccount
from .instruments import (
    InstrumentKind,
    InstrumentSpec,
    black76_premium,
    option_right,
)
from .numerics import ONE, ZERO, dec, quantize, SECONDS_PER_YEAR


@dataclass(frozen=True)
class MarginParams:
    price_scan_pct: Decimal = dec("0.15")
    scan_steps: int = 7
    vol_scan_pct: Decimal = dec("0.25")
    maintenance_fraction: Decimal = dec("0.75")

    def __post_init__(self):
        object.__setattr__(self, "price_scan_pct", dec(self.price_scan_pct))
        object.__setattr__(self, "vol_scan_pct", dec(self.vol_scan_pct))
        object.__setattr__(self, "maintenance_fraction", dec(self.maintenance_fraction))
        if not (0 < self.price_scan_pct < 1):
            raise ValueError("price_scan_pct must be in (0, 1)")
        if self.scan_steps < 3 or self.scan_steps % 2 == 0:
            raise ValueError("scan_steps must be an odd integer >= 3")
        if not (0 < self.maintenance_fraction <= 1):
            raise ValueError("maintenance_fraction must be in (0, 1]")

    def price_multipliers(self) -> list[Decimal]:
        """scan_steps factors evenly spanning 1 +/- price_scan_pct."""
        step = 2 * self.price_scan_pct / (self.scan_steps - 1)
        return [ONE - self.price_scan_pct + step * k
                for k in range(self.scan_steps)]

    def vol_multipliers(self) -> list[Decimal]:
        return [ONE - self.vol_scan_pct, ONE, ONE + self.vol_scan_pct]


@dataclass(frozen=True)
class Exposure:
    """Signed contract count in one instrument, for margin purposes."""

    instrument_id: str
    quantity: int


def _value(spec: InstrumentSpec, price: Decimal, vol: Optional[Decimal],
           now: int) -> Decimal:
    """Per-contract value under a scenario price/vol (futures: the price)."""
    if spec.is_option:
        if spec.expiry is None or spec.expiry <= now:
            t = ZERO
        else:
            t = dec(spec.expiry - now) / SECONDS_PER_YEAR
        return black76_premium(price, spec.strike, vol, t,
                               option_right(spec.kind)) * spec.contract_size
    return price * spec.contract_size


def initial_margin(portfolio: Iterable[Exposure],
                   marks: Mapping[str, Decimal],
                   vols: Mapping[str, Decimal],
                   specs: Mapping[str, InstrumentSpec],
                   now: int = 0,
                   params: MarginParams = MarginParams()) -> Decimal:
    """Worst grid loss of the portfolio, floored at zero.

    Options are revalued with Black-76 at each shifted underlying price
    and vol; futures and spot move linearly.  Each exposure is scanned
    against its own mark, so offsetting legs on the same underlying net
    out node by node.
    """
    entries = []
    for exp in portfolio:
        if exp.quantity == 0:
            continue
        spec = specs[exp.instrument_id]
        price_key = spec.underlying if spec.is_option else exp.instrument_id
        if price_key not in marks:
            raise MissingMark(f"no mark for {price_key}")
        vol = None
        if spec.is_option:
            if exp.instrument_id in vols:
                vol = dec(vols[exp.instrument_id])
            elif spec.underlying in vols:
                vol = dec(vols[spec.underlying])
            else:
                raise MissingVol(f"no vol for {exp.instrument_id}")
        entries.append((spec, exp.quantity, dec(marks[price_key]), vol))
    if not entries:
        return ZERO

    worst = ZERO
    for pm in params.price_multipliers():
        for vm in params.vol_multipliers():
            pnl = ZERO
            for spec, qty, mark, vol in entries:
                base = _value(spec, mark, vol, now)
                bumped = _value(spec, mark * pm,
                                vol * vm if vol is not None else None, now)
                pnl += (bumped - base) * qty
            worst = min(worst, pnl)
    return quantize(-worst)


def maintenance_margin(initial: Decimal,
                       params: MarginParams = MarginParams()) -> Decimal:
    return quantize(dec(initial) * params.maintenance_fraction)


class MarginStatus(enum.Enum):
    HEALTHY = "healthy"
    MARGIN_CALL = "margin_call"
    LIQUIDATE = "liquidate"


def margin_check(equity: Decimal, initial: Decimal,
                 maintenance: Decimal) -> MarginStatus:
    """Classify equity against the two thresholds (both boundaries inclusive
    on the safe side: equity == initial is healthy, equity == maintenance is
    a margin call)."""
    equity, initial, maintenance = dec(equity), dec(initial), dec(maintenance)
    if equity >= initial:
        return MarginStatus.HEALTHY
    if equity >= maintenance:
        return MarginStatus.MARGIN_CALL
    return MarginStatus.LIQUIDATE


class ReputationEvent(enum.Enum):
    DELIVERY_SUCCESS = "delivery_success"
    DELIVERY_FAILURE = "delivery_failure"
    LIQUIDATION = "liquidation"


REPUTATION_DELTA = {
    ReputationEvent.DELIVERY_SUCCESS: 1,
    ReputationEvent.DELIVERY_FAILURE: -10,
    ReputationEvent.LIQUIDATION: -5,
}


@dataclass
class ReputationScore:
    """Integer standing in [0, 100]; every account starts at 100."""

    account_id: str
    score: int = 100
    events: list[ReputationEvent] = field(default_factory=list)

    def apply(self, event: ReputationEvent) -> int:
        self.events.append(event)
        self.score = max(0, min(100, self.score + REPUTATION_DELTA[event]))
        return self.score

    @classmethod
    def replay(cls, account_id: str,
               events: Iterable[ReputationEvent]) -> "ReputationScore":
        """Rebuild a score purely from its event history."""
        rep = cls(account_id)
        for event in events:
            rep.apply(event)
        return rep


class ReputationBook:
    """Engine-side registry of reputation scores."""

    def __init__(self):
        self.scores: dict[str, ReputationScore] = {}

    def register(self, account_id: str) -> ReputationScore:
        rep = ReputationScore(account_id)
        self.scores[account_id] = rep
        return rep

    def update(self, account_id: str, event: ReputationEvent) -> ReputationScore:
        rep = self.scores.get(account_id)
        if rep is None:
            raise UnknownAccount(f"no reputation record for {account_id}")
        rep.apply(event)
        return rep
