"""Contract specifications and their lifecycle rules.

Five kinds trade against compute hours: spot, futures, calls, puts and
perpetuals.  Options exercise into their underlying future (American
style); perpetuals never expire and instead exchange periodic funding.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Optional

from .compute_units import GradeTriple
from .errors import (
    Expired,
    InvalidInstrument,
    NegativeInputs,
    NotAnOption,
    NotLong,
)
from .numerics import Number, ONE, ZERO, dec, dsum, quantize


class InstrumentKind(enum.Enum):
    SPOT = "spot"
    FUTURE = "future"
    CALL_OPTION = "call_option"
    PUT_OPTION = "put_option"
    PERPETUAL = "perpetual"


class Settlement(enum.Enum):
    """How a future resolves at expiry: compute delivery or pure cash."""

    PHYSICAL = "physical"
    CASH = "cash"


OPTION_KINDS = (InstrumentKind.CALL_OPTION, InstrumentKind.PUT_OPTION)


@dataclass(frozen=True)
class InstrumentSpec:
    """Listing terms for one tradable contract."""

    id: str
    kind: InstrumentKind
    contract_size: Decimal                     # CH per contract
    tick_size: Decimal                         # price increment per CH
    grade_floor: GradeTriple = GradeTriple.parse("D4Z")
    expiry: Optional[int] = None               # simulation seconds
    strike: Optional[Decimal] = None           # options only
    underlying: Optional[str] = None           # options reference a future
    funding_interval: Optional[int] = None     # perpetuals only, seconds
    settlement: Settlement = Settlement.PHYSICAL

    def __post_init__(self):
        object.__setattr__(self, "contract_size", dec(self.contract_size))
        object.__setattr__(self, "tick_size", dec(self.tick_size))
        if self.strike is not None:
            object.__setattr__(self, "strike", dec(self.strike))
        self.validate()

    @classmethod
    def from_dict(cls, raw: dict) -> "InstrumentSpec":
        """Parse JSON-friendly listing terms (enum names as strings)."""
        fields = dict(raw)
        fields["kind"] = InstrumentKind(fields["kind"])
        if "settlement" in fields:
            fields["settlement"] = Settlement(fields["settlement"])
        if "grade_floor" in fields:
            fields["grade_floor"] = GradeTriple.parse(fields["grade_floor"])
        return cls(**fields)

    def validate(self) -> None:
        """Raise InvalidInstrument naming the first violated listing rule."""
        if self.contract_size <= 0:
            raise InvalidInstrument(f"{self.id}: contract_size must be > 0")
        if self.tick_size <= 0:
            raise InvalidInstrument(f"{self.id}: tick_size must be > 0")
        kind = self.kind
        if kind in OPTION_KINDS:
            if self.strike is None or self.strike <= 0:
                raise InvalidInstrument(f"{self.id}: option needs strike > 0")
            if not self.underlying:
                raise InvalidInstrument(f"{self.id}: option needs an underlying future")
            if self.expiry is None:
                raise InvalidInstrument(f"{self.id}: option needs an expiry")
            if self.funding_interval is not None:
                raise InvalidInstrument(f"{self.id}: option cannot carry funding_interval")
        elif kind is InstrumentKind.FUTURE:
            if self.expiry is None:
                raise InvalidInstrument(f"{self.id}: future needs an expiry")
            if self.strike is not None or self.underlying is not None:
                raise InvalidInstrument(f"{self.id}: future cannot carry strike/underlying")
            if self.funding_interval is not None:
                raise InvalidInstrument(f"{self.id}: future cannot carry funding_interval")
        elif kind is InstrumentKind.PERPETUAL:
            if self.funding_interval is None or self.funding_interval <= 0:
                raise InvalidInstrument(f"{self.id}: perpetual needs funding_interval > 0")
            if self.expiry is not None:
                raise InvalidInstrument(f"{self.id}: perpetual cannot expire")
            if self.strike is not None or self.underlying is not None:
                raise InvalidInstrument(f"{self.id}: perpetual cannot carry strike/underlying")
        else:  # spot
            if self.expiry is not None or self.strike is not None \
                    or self.underlying is not None or self.funding_interval is not None:
                raise InvalidInstrument(f"{self.id}: spot carries no derivative terms")

    @property
    def is_option(self) -> bool:
        return self.kind in OPTION_KINDS

    def aligned_price(self, price: Decimal) -> bool:
        """Price is an exact multiple of the tick."""
        return (dec(price) % self.tick_size) == 0


@dataclass
class Lot:
    """One open parcel of contracts at a single basis price."""

    quantity: int       # signed: + long, - short
    basis: Decimal      # price per CH


@dataclass
class Position:
    """Open exposure in one instrument for one account.

    Futures keep per-lot bases between variation marks so every cash flow
    is a product of exact decimals; the volume-weighted entry price is
    derived for reporting only.
    """

    account_id: str
    instrument_id: str
    contract_size: Decimal
    lots: list[Lot] = field(default_factory=list)
    realized_pnl: Decimal = ZERO

    @property
    def net_quantity(self) -> int:
        return sum(lot.quantity for lot in self.lots)

    @property
    def entry_price(self) -> Optional[Decimal]:
        """Volume-weighted basis of the open lots (reporting only)."""
        qty = self.net_quantity
        if qty == 0:
            return None
        notional = dsum(lot.basis * lot.quantity for lot in self.lots)
        return quantize(notional / qty)

    def apply_fill(self, signed_qty: int, price: Decimal) -> Decimal:
        """Apply a fill; returns the realized cash flow from closed lots.

        Opposing quantity closes existing lots FIFO at (price - basis);
        any remainder opens a new lot at the fill price.
        """
        price = dec(price)
        cash = ZERO
        remaining = signed_qty
        while remaining != 0 and self.lots and \
                (self.lots[0].quantity > 0) != (remaining > 0):
            lot = self.lots[0]
            closed = min(abs(remaining), abs(lot.quantity))
            direction = 1 if lot.quantity > 0 else -1
            cash += (price - lot.basis) * closed * direction * self.contract_size
            lot.quantity += closed * (-direction)
            remaining += closed * direction
            if lot.quantity == 0:
                self.lots.pop(0)
        if remaining != 0:
            self.lots.append(Lot(remaining, price))
        self.realized_pnl += cash
        return cash

    def mark_to(self, price: Decimal) -> Decimal:
        """Cash-settle variation to ``price`` and rebase all lots onto it."""
        price = dec(price)
        cash = dsum((price - lot.basis) * lot.quantity * self.contract_size
                    for lot in self.lots)
        qty = self.net_quantity
        self.lots = [Lot(qty, price)] if qty != 0 else []
        return cash

    def unrealized_at(self, price: Decimal) -> Decimal:
        """Mark-to-market value change of the open lots at ``price``."""
        price = dec(price)
        return dsum((price - lot.basis) * lot.quantity * self.contract_size
                    for lot in self.lots)


@dataclass(frozen=True)
class ExerciseResult:
    """Futures delta produced by exercising an option position."""

    future_id: str
    quantity_delta: int     # signed futures contracts acquired
    entry_price: Decimal    # the strike
    options_closed: int


def exercise_option(position: Position, option: InstrumentSpec,
                    quantity: int, at: int) -> ExerciseResult:
    """Exercise long options into the underlying future at the strike.

    Long calls yield +1 future per contract, long puts -1.  The option
    position is reduced by the exercised quantity; no compute delivery is
    triggered here.
    """
    if not option.is_option:
        raise NotAnOption(f"{option.id} is not an option")
    held = position.net_quantity
    if held <= 0:
        raise NotLong(f"{position.account_id} holds no long {option.id}")
    if option.expiry is not None and at > option.expiry:
        raise Expired(f"{option.id} expired at {option.expiry}")
    if quantity < 0:
        raise ValueError("exercise quantity must be >= 0")
    quantity = min(quantity, held)
    if quantity == 0:
        return ExerciseResult(option.underlying, 0, option.strike, 0)
    sign = 1 if option.kind is InstrumentKind.CALL_OPTION else -1
    # Burn the exercised options at their basis; premium was paid at entry.
    position.apply_fill(-quantity, ZERO)
    return ExerciseResult(option.underlying, sign * quantity, option.strike, quantity)


@dataclass(frozen=True)
class FundingTransfer:
    """Signed cash flow to one account from a perp funding exchange."""

    account_id: str
    amount: Decimal   # positive = account receives


def perp_funding(instrument: InstrumentSpec, mark: Number, index: Number,
                 positions: Iterable[Position],
                 coefficient: Number = ONE) -> list[FundingTransfer]:
    """Periodic funding transfers keeping the perp near its index.

    Each position pays (mark - index) * net_quantity * contract_size *
    coefficient; longs pay when mark > index.  Transfers net to zero
    whenever open interest does.
    """
    if instrument.kind is not InstrumentKind.PERPETUAL:
        raise InvalidInstrument(f"{instrument.id} is not a perpetual")
    gap = (dec(mark) - dec(index)) * dec(coefficient)
    transfers = []
    for pos in positions:
        qty = pos.net_quantity
        if qty == 0:
            continue
        transfers.append(FundingTransfer(pos.account_id,
                                         -gap * qty * instrument.contract_size))
    return transfers


class OptionRight(enum.Enum):
    CALL = "call"
    PUT = "put"


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def black76_premium(future_price: Number, strike: Number, vol: Number,
                    time_to_expiry: Number, kind: OptionRight) -> Decimal:
    """Black-76 option premium on a future at zero discount rate.

    The call is evaluated and floored at intrinsic; the put is derived
    through zero-rate parity (P = C - F + K) so every quoted pair
    satisfies C - P = F - K exactly in decimal.
    """
    f, k = dec(future_price), dec(strike)
    sigma, t = dec(vol), dec(time_to_expiry)
    if f < 0 or k <= 0 or sigma < 0 or t < 0:
        raise NegativeInputs(
            f"bad Black-76 inputs F={f} K={k} vol={sigma} T={t}")
    intrinsic_call = max(f - k, ZERO)
    if sigma == 0 or t == 0 or f == 0:
        call = quantize(intrinsic_call)
    else:
        ff, kk = float(f), float(k)
        sig_sqrt_t = float(sigma) * math.sqrt(float(t))
        d1 = (math.log(ff / kk) + 0.5 * float(sigma) ** 2 * float(t)) / sig_sqrt_t
        d2 = d1 - sig_sqrt_t
        raw = ff * _norm_cdf(d1) - kk * _norm_cdf(d2)
        call = max(quantize(raw), quantize(intrinsic_call))
    if kind is OptionRight.CALL:
        return call
    return call - (f - k)


def option_right(kind: InstrumentKind) -> OptionRight:
    if kind is InstrumentKind.CALL_OPTION:
        return OptionRight.CALL
    if kind is InstrumentKind.PUT_OPTION:
        return OptionRight.PUT
    raise NotAnOption(f"{kind} has no option right")
