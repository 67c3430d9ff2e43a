"""Clearing layer: guarantor pools, margin gating, delivery and defaults.

The ClearingHouse owns all accounts and pools, tracks delivery
obligations through their state machine, and applies the layered
default waterfall.  Token quantities are always delegated to the
TokenLedger; this module moves stable currency and compute hours.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_FLOOR
from typing import Mapping, Optional

from .compute_units import (
    GradeTriple,
    ReferenceSystem,
    SystemProfile,
    compute_hours,
    grade,
)
from .errors import (
    BadState,
    MissingMark,
    NoGuarantor,
    NotAFuture,
    NotExpired,
    UnknownAccount,
    UnknownObligation,
)
from .instruments import InstrumentKind, InstrumentSpec, Position, Settlement, black76_premium, option_right
from .matching import Side
from .numerics import QUANTUM, ZERO, dec, dsum, pro_rata, quantize, SECONDS_PER_HOUR, SECONDS_PER_YEAR
from .risk import Exposure, MarginParams, MarginStatus, initial_margin, maintenance_margin, margin_check
from .tokens import TokenLedger


class AccountRole(enum.Enum):
    HEDGER = "hedger"
    TRADER = "trader"
    MARKET_MAKER = "market_maker"
    GUARANTOR = "guarantor"


@dataclass
class Account:
    """One participant: segregated stable collateral plus open positions."""

    account_id: str
    role: AccountRole
    guarantor_id: Optional[str] = None
    stable_balance: Decimal = ZERO
    positions: dict[str, Position] = field(default_factory=dict)
    ch_received: Decimal = ZERO     # compute hours taken via delivery or spot
    ch_delivered: Decimal = ZERO
    profile: Optional[SystemProfile] = None

    def position(self, spec: InstrumentSpec) -> Position:
        pos = self.positions.get(spec.id)
        if pos is None:
            pos = Position(self.account_id, spec.id, spec.contract_size)
            self.positions[spec.id] = pos
        return pos


@dataclass
class GuarantorPool:
    """A clearing member's mutualized resources, separate from customers."""

    guarantor_id: str
    pool_collateral: Decimal = ZERO
    customers: set[str] = field(default_factory=set)
    insurance_stake: Decimal = ZERO   # tokens placed in the insurance fund

    @property
    def token_account(self) -> str:
        """Ledger account holding the pool's own staked tokens."""
        return f"{self.guarantor_id}::pool"


class ObligationStatus(enum.Enum):
    PENDING = "pending"
    CAPACITY_VERIFIED = "capacity_verified"
    DELIVERED = "delivered"
    FAILED = "failed"
    COMPENSATED = "compensated"


LEGAL_TRANSITIONS = {
    ObligationStatus.PENDING: {ObligationStatus.CAPACITY_VERIFIED},
    ObligationStatus.CAPACITY_VERIFIED: {ObligationStatus.DELIVERED,
                                         ObligationStatus.FAILED},
    ObligationStatus.FAILED: {ObligationStatus.COMPENSATED},
    ObligationStatus.DELIVERED: set(),
    ObligationStatus.COMPENSATED: set(),
}


@dataclass
class DeliveryObligation:
    """A short's duty to deliver compute hours to a matched long."""

    obligation_id: str
    short_account: str
    long_account: str
    quantity: Decimal            # compute hours
    grade_floor: GradeTriple
    contract_price: Decimal      # stable per CH
    created_at: int
    deadline: int
    status: ObligationStatus = ObligationStatus.PENDING
    history: list[tuple[int, ObligationStatus]] = field(default_factory=list)
    locked_tokens: Decimal = ZERO

    def advance(self, to: ObligationStatus, at: int) -> None:
        if to not in LEGAL_TRANSITIONS[self.status]:
            raise BadState(f"{self.obligation_id}: {self.status.value} -> {to.value}")
        self.status = to
        self.history.append((at, to))


class CapacityOutcome(enum.Enum):
    CAPACITY_VERIFIED = "capacity_verified"
    LIQUIDATE_SHORT = "liquidate_short"


class DeliveryVerdict(enum.Enum):
    ACCEPTED = "accepted"
    CHALLENGED_FAILED = "challenged_failed"


def run_kernel(seed: int, iterations: int) -> str:
    """Deterministic compute stand-in: an iterated sha256 chain."""
    digest = hashlib.sha256(str(seed).encode()).digest()
    for _ in range(iterations):
        digest = hashlib.sha256(digest).digest()
    return digest.hex()


@dataclass(frozen=True)
class ComputeTask:
    """Verifiable workload: recomputing the kernel must reproduce the digest."""

    task_id: str
    kernel_seed: int
    iterations: int
    expected_digest: str

    @classmethod
    def make(cls, task_id: str, kernel_seed: int, iterations: int) -> "ComputeTask":
        return cls(task_id, kernel_seed, iterations,
                   run_kernel(kernel_seed, iterations))


@dataclass(frozen=True)
class ClearingConfig:
    delivery_window_hours: int = 24
    verification_lead_hours: int = 24
    insurance_fraction: Decimal = dec("0.05")  # of aggregate customer margin


@dataclass(frozen=True)
class GateResult:
    approved: bool
    reason: str = ""
    shortfall: Decimal = ZERO


@dataclass(frozen=True)
class LayerDraw:
    layer: str
    amount: Decimal           # stable value moved to the beneficiary
    tokens: Decimal = ZERO    # token quantity, for the staked layers


@dataclass(frozen=True)
class WaterfallRecord:
    defaulter: str
    guarantor: Optional[str]
    beneficiary: str
    shortfall: Decimal
    draws: tuple[LayerDraw, ...]
    haircut: Decimal

    def total_drawn(self) -> Decimal:
        return dsum(d.amount for d in self.draws)


@dataclass(frozen=True)
class SettlementRecord:
    obligation_id: str
    outcome: str                       # delivered | compensated
    cash_paid: Decimal                 # long -> short on delivery
    replacement_cost: Decimal
    slashed_tokens: Decimal
    slash_value: Decimal
    waterfall: Optional[WaterfallRecord]
    compensation_value: Decimal        # slash value + waterfall draws


WATERFALL_LAYERS = ("defaulter_collateral", "defaulter_stake",
                    "pool_collateral", "pool_stake", "insurance_fund")


def tokens_for_value(value: Decimal, token_mark: Decimal) -> Decimal:
    """Token quantity worth at most ``value`` at the mark (floor, 6dp)."""
    if token_mark <= 0:
        return ZERO
    return (value / token_mark).quantize(QUANTUM, rounding=ROUND_FLOOR)


def match_longs_to_shorts(shorts: list[tuple[str, int]],
                          longs: list[tuple[str, int]],
                          ) -> list[tuple[str, str, int]]:
    """Greedy largest-first pairing; ties break by account id ascending."""
    shorts = [[a, q] for a, q in shorts if q > 0]
    longs = [[a, q] for a, q in longs if q > 0]
    matches = []
    while shorts and longs:
        s = min(shorts, key=lambda e: (-e[1], e[0]))
        l = min(longs, key=lambda e: (-e[1], e[0]))
        qty = min(s[1], l[1])
        matches.append((s[0], l[0], qty))
        s[1] -= qty
        l[1] -= qty
        if s[1] == 0:
            shorts.remove(s)
        if l[1] == 0:
            longs.remove(l)
    return matches


@dataclass(frozen=True)
class ExpiryResult:
    instrument_id: str
    settlement_price: Decimal
    variation: dict[str, Decimal]      # final cash convergence per account
    obligations: tuple[DeliveryObligation, ...]


class ClearingHouse:
    def __init__(self, ledger: TokenLedger,
                 specs: Mapping[str, InstrumentSpec],
                 config: ClearingConfig = ClearingConfig(),
                 margin_params: MarginParams = MarginParams()):
        self.ledger = ledger
        self.specs = specs
        self.config = config
        self.margin_params = margin_params
        self.accounts: dict[str, Account] = {}
        self.pools: dict[str, GuarantorPool] = {}
        self.obligations: dict[str, DeliveryObligation] = {}
        self.settlements: list[SettlementRecord] = []
        self.waterfalls: list[WaterfallRecord] = []
        self.haircuts: list[tuple[str, Decimal]] = []   # (beneficiary, amount)
        self._next_obligation = 1

    # -- registry ------------------------------------------------------

    def add_guarantor(self, guarantor_id: str,
                      pool_collateral: Decimal = ZERO) -> GuarantorPool:
        pool = GuarantorPool(guarantor_id, dec(pool_collateral))
        self.pools[guarantor_id] = pool
        self.accounts[guarantor_id] = Account(guarantor_id,
                                              AccountRole.GUARANTOR,
                                              guarantor_id)
        pool.customers.add(guarantor_id)
        return pool

    def add_account(self, account_id: str, role: AccountRole,
                    guarantor_id: str, balance: Decimal = ZERO) -> Account:
        if guarantor_id not in self.pools:
            raise NoGuarantor(f"{account_id}: unknown guarantor {guarantor_id}")
        account = Account(account_id, role, guarantor_id, dec(balance))
        self.accounts[account_id] = account
        self.pools[guarantor_id].customers.add(account_id)
        return account

    def account(self, account_id: str) -> Account:
        try:
            return self.accounts[account_id]
        except KeyError:
            raise UnknownAccount(account_id) from None

    def pool_of(self, account_id: str) -> Optional[GuarantorPool]:
        gid = self.account(account_id).guarantor_id
        return self.pools.get(gid) if gid else None

    # -- valuation -----------------------------------------------------

    def option_unit_value(self, spec: InstrumentSpec,
                           marks: Mapping[str, Decimal],
                           vols: Mapping[str, Decimal], now: int) -> Decimal:
        if spec.underlying not in marks:
            raise MissingMark(f"no mark for {spec.underlying}")
        vol = vols.get(spec.id, vols.get(spec.underlying))
        if vol is None:
            raise MissingMark(f"no vol for {spec.id}")
        t = ZERO if spec.expiry is None or spec.expiry <= now \
            else dec(spec.expiry - now) / SECONDS_PER_YEAR
        return black76_premium(dec(marks[spec.underlying]), spec.strike,
                               dec(vol), t, option_right(spec.kind))

    def equity(self, account_id: str, marks: Mapping[str, Decimal],
               vols: Mapping[str, Decimal], now: int) -> Decimal:
        """Stable collateral plus mark value of every open position."""
        account = self.account(account_id)
        total = account.stable_balance
        for pos in account.positions.values():
            qty = pos.net_quantity
            if qty == 0:
                continue
            spec = self.specs[pos.instrument_id]
            if spec.is_option:
                unit = self.option_unit_value(spec, marks, vols, now)
                total += unit * qty * spec.contract_size
            else:
                if pos.instrument_id not in marks:
                    raise MissingMark(f"no mark for {pos.instrument_id}")
                total += pos.unrealized_at(dec(marks[pos.instrument_id]))
        return total

    def exposures(self, account_id: str) -> list[Exposure]:
        return [Exposure(p.instrument_id, p.net_quantity)
                for p in self.account(account_id).positions.values()
                if p.net_quantity != 0
                and self.specs[p.instrument_id].kind is not InstrumentKind.SPOT]

    def margin_of(self, account_id: str, marks: Mapping[str, Decimal],
                  vols: Mapping[str, Decimal], now: int,
                  extra: Optional[Exposure] = None) -> Decimal:
        exposures = self.exposures(account_id)
        if extra is not None and extra.quantity != 0:
            merged = False
            for i, e in enumerate(exposures):
                if e.instrument_id == extra.instrument_id:
                    exposures[i] = Exposure(e.instrument_id,
                                            e.quantity + extra.quantity)
                    merged = True
                    break
            if not merged:
                exposures.append(extra)
        return initial_margin(exposures, marks, vols, self.specs, now,
                              self.margin_params)

    def margin_status(self, account_id: str, marks: Mapping[str, Decimal],
                      vols: Mapping[str, Decimal], now: int) -> MarginStatus:
        equity = self.equity(account_id, marks, vols, now)
        initial = self.margin_of(account_id, marks, vols, now)
        return margin_check(equity, initial,
                            maintenance_margin(initial, self.margin_params))

    # -- pre-trade gate --------------------------------------------------

    def pre_trade_gate(self, account_id: str, instrument_id: str, side: Side,
                       price: Decimal, quantity: int,
                       marks: Mapping[str, Decimal],
                       vols: Mapping[str, Decimal], now: int) -> GateResult:
        """Approve iff a worst-case full fill leaves equity >= initial margin.

        The hypothetical fill executes at the order's own limit price; spot
        buys only need cash for the full cost.
        """
        account = self.account(account_id)
        if account.guarantor_id is None:
            raise NoGuarantor(f"{account_id} is not onboarded to a guarantor")
        spec = self.specs[instrument_id]
        price = dec(price)
        signed = quantity if side is Side.BUY else -quantity
        cost = price * quantity * spec.contract_size

        if spec.kind is InstrumentKind.SPOT:
            if side is Side.BUY and account.stable_balance < cost:
                return GateResult(False, "insufficient funds for spot purchase",
                                  quantize(cost - account.stable_balance))
            return GateResult(True)

        if instrument_id not in marks:
            # a never-marked instrument is valued at the order's own limit
            marks = {**marks, instrument_id: price}
        equity = self.equity(account_id, marks, vols, now)
        if spec.is_option:
            unit = self.option_unit_value(spec, marks, vols, now)
            # premium leaves as cash, option value arrives (or vice versa)
            equity += (unit - price) * signed * spec.contract_size
        else:
            mark = dec(marks.get(instrument_id, price))
            equity += (mark - price) * signed * spec.contract_size

        required = self.margin_of(account_id, marks, vols, now,
                                  extra=Exposure(instrument_id, signed))
        if equity >= required:
            return GateResult(True)
        return GateResult(False, "insufficient collateral for margin",
                          quantize(required - equity))

    # -- marks and expiry ------------------------------------------------

    def mark_all(self, instrument_id: str, price: Decimal) -> dict[str, Decimal]:
        """Exchange variation margin on one instrument across all accounts.

        Zero-sum whenever open interest nets to zero (options are premium
        paid and never marked).
        """
        spec = self.specs[instrument_id]
        if spec.is_option or spec.kind is InstrumentKind.SPOT:
            return {}
        flows: dict[str, Decimal] = {}
        for account in self.accounts.values():
            pos = account.positions.get(instrument_id)
            if pos is None or not pos.lots:
                continue
            cash = pos.mark_to(dec(price))
            if cash != 0:
                account.stable_balance += cash
                flows[account.account_id] = cash
        return flows

    def expire_futures(self, instrument_id: str, spot_price: Decimal,
                       now: int, token_mark: Decimal = ZERO) -> ExpiryResult:
        """Converge a future to spot and turn shorts into delivery duties.

        Physical settlement matches longs to shorts greedily largest-first
        within each guarantor pool, then across pools; cash settlement ends
        at the final variation exchange.
        """
        spec = self.specs[instrument_id]
        if spec.kind is not InstrumentKind.FUTURE:
            raise NotAFuture(instrument_id)
        if spec.expiry is None or now < spec.expiry:
            raise NotExpired(f"{instrument_id} expires at {spec.expiry}, now {now}")
        spot_price = dec(spot_price)
        variation = self.mark_all(instrument_id, spot_price)

        obligations: list[DeliveryObligation] = []
        if spec.settlement is Settlement.PHYSICAL:
            shorts_by_pool: dict[str, list[tuple[str, int]]] = {}
            longs_by_pool: dict[str, list[tuple[str, int]]] = {}
            for account in self.accounts.values():
                pos = account.positions.get(instrument_id)
                if pos is None:
                    continue
                qty = pos.net_quantity
                gid = account.guarantor_id or ""
                if qty < 0:
                    shorts_by_pool.setdefault(gid, []).append(
                        (account.account_id, -qty))
                elif qty > 0:
                    longs_by_pool.setdefault(gid, []).append(
                        (account.account_id, qty))

            matches: list[tuple[str, str, int]] = []
            spill_shorts: list[tuple[str, int]] = []
            spill_longs: list[tuple[str, int]] = []
            for gid in sorted(set(shorts_by_pool) | set(longs_by_pool)):
                shorts = shorts_by_pool.get(gid, [])
                longs = longs_by_pool.get(gid, [])
                local = match_longs_to_shorts(shorts, longs)
                matches.extend(local)
                matched_s: dict[str, int] = {}
                matched_l: dict[str, int] = {}
                for s, l, q in local:
                    matched_s[s] = matched_s.get(s, 0) + q
                    matched_l[l] = matched_l.get(l, 0) + q
                spill_shorts.extend((a, q - matched_s.get(a, 0))
                                    for a, q in shorts if q > matched_s.get(a, 0))
                spill_longs.extend((a, q - matched_l.get(a, 0))
                                   for a, q in longs if q > matched_l.get(a, 0))
            matches.extend(match_longs_to_shorts(spill_shorts, spill_longs))

            deadline = now + self.config.delivery_window_hours * SECONDS_PER_HOUR
            for short_id, long_id, contracts in matches:
                quantity = quantize(dec(contracts) * spec.contract_size)
                ob = DeliveryObligation(
                    obligation_id=f"ob-{self._next_obligation}",
                    short_account=short_id,
                    long_account=long_id,
                    quantity=quantity,
                    grade_floor=spec.grade_floor,
                    contract_price=spot_price,
                    created_at=now,
                    deadline=deadline,
                )
                self._next_obligation += 1
                self.obligations[ob.obligation_id] = ob
                obligations.append(ob)
                # Reserve slash exposure so stake cannot walk away mid-flight.
                if token_mark > 0:
                    exposure = tokens_for_value(quantize(quantity * spot_price),
                                                token_mark)
                    exposure = min(exposure,
                                   self.ledger.staked_of(short_id)
                                   - self.ledger.locked_of(short_id))
                    if exposure > 0:
                        ob.locked_tokens = exposure
                        self.ledger.lock(short_id, exposure)

        for account in self.accounts.values():
            account.positions.pop(instrument_id, None)
        return ExpiryResult(instrument_id, spot_price, variation,
                            tuple(obligations))

    # -- delivery pipeline ----------------------------------------------

    def obligation(self, obligation_id: str) -> DeliveryObligation:
        try:
            return self.obligations[obligation_id]
        except KeyError:
            raise UnknownObligation(obligation_id) from None

    def verify_capacity(self, obligation: DeliveryObligation,
                        profile: SystemProfile, ref: ReferenceSystem,
                        at: Optional[int] = None) -> CapacityOutcome:
        """Check the short can produce the obligation quantity in its window.

        Operational hours are the delivery window scaled by the profile's
        uptime; the profile must also meet the listing's grade floor.
        A zero-quantity obligation verifies vacuously.
        """
        window_hours = dec(obligation.deadline - obligation.created_at) / SECONDS_PER_HOUR
        if obligation.quantity == 0:
            ok = True
        else:
            effective = window_hours * profile.uptime_pct / 100
            deliverable = compute_hours(profile, ref, effective)
            ok = (deliverable.value >= obligation.quantity
                  and grade(profile, ref).meets_floor(obligation.grade_floor))
        if not ok:
            return CapacityOutcome.LIQUIDATE_SHORT
        if obligation.status is ObligationStatus.PENDING:
            obligation.advance(ObligationStatus.CAPACITY_VERIFIED,
                               obligation.created_at if at is None else at)
        return CapacityOutcome.CAPACITY_VERIFIED

    def verify_delivery(self, obligation_id: str, task: ComputeTask,
                        claimed_digest: str, now: int) -> DeliveryVerdict:
        """Recompute the kernel and compare digests; lapsed deadline fails."""
        ob = self.obligation(obligation_id)
        if ob.status is not ObligationStatus.CAPACITY_VERIFIED:
            raise BadState(f"{obligation_id} is {ob.status.value}")
        if now > ob.deadline:
            return DeliveryVerdict.CHALLENGED_FAILED
        recomputed = run_kernel(task.kernel_seed, task.iterations)
        if claimed_digest == recomputed == task.expected_digest:
            return DeliveryVerdict.ACCEPTED
        return DeliveryVerdict.CHALLENGED_FAILED

    def settle_delivery(self, obligation_id: str, verdict: DeliveryVerdict,
                        now: int, spot_at_deadline: Decimal,
                        token_mark: Decimal) -> SettlementRecord:
        """Terminal settlement: pay on delivery, slash and compensate on failure."""
        ob = self.obligation(obligation_id)
        if ob.status is not ObligationStatus.CAPACITY_VERIFIED:
            raise BadState(f"{obligation_id} is {ob.status.value}")
        short = self.account(ob.short_account)
        long = self.account(ob.long_account)

        if verdict is DeliveryVerdict.ACCEPTED:
            cash = quantize(ob.contract_price * ob.quantity)
            long.stable_balance -= cash
            short.stable_balance += cash
            long.ch_received += ob.quantity
            short.ch_delivered += ob.quantity
            ob.advance(ObligationStatus.DELIVERED, now)
            self._release_lock(ob)
            record = SettlementRecord(obligation_id, "delivered", cash, ZERO,
                                      ZERO, ZERO, None, ZERO)
            self.settlements.append(record)
            return record

        ob.advance(ObligationStatus.FAILED, now)
        replacement = quantize(dec(spot_at_deadline) * ob.quantity)
        slash_tokens = min(tokens_for_value(replacement, dec(token_mark)),
                           self.ledger.staked_of(ob.short_account))
        slash_value = ZERO
        if slash_tokens > 0:
            self.ledger.slash(ob.short_account, slash_tokens,
                              beneficiary=ob.long_account,
                              compensation_share=Decimal(1))
            slash_value = slash_tokens * dec(token_mark)
            # slash already released its own share of the lock
            ob.locked_tokens = max(ZERO, ob.locked_tokens - slash_tokens)
        self._release_lock(ob)

        remaining = replacement - slash_value
        waterfall = None
        if remaining > 0:
            waterfall = self.apply_waterfall(ob.short_account, remaining,
                                             dec(token_mark), ob.long_account)
        ob.advance(ObligationStatus.COMPENSATED, now)
        compensation = slash_value + (waterfall.total_drawn() if waterfall else ZERO)
        record = SettlementRecord(obligation_id, "compensated", ZERO,
                                  replacement, slash_tokens, slash_value,
                                  waterfall, compensation)
        self.settlements.append(record)
        return record

    def _release_lock(self, ob: DeliveryObligation) -> None:
        if ob.locked_tokens > 0:
            self.ledger.release(ob.short_account, ob.locked_tokens)
            ob.locked_tokens = ZERO

    # -- default waterfall ------------------------------------------------

    def apply_waterfall(self, defaulter_id: str, shortfall: Decimal,
                        token_mark: Decimal, beneficiary_id: str,
                        ) -> WaterfallRecord:
        """Cover a shortfall layer by layer, in strict order.

        Layer draws move stable or staked-token value to the beneficiary
        and sum, together with the final haircut, exactly to the shortfall.
        """
        shortfall = dec(shortfall)
        if shortfall <= 0:
            raise ValueError("waterfall requires a positive shortfall")
        defaulter = self.account(defaulter_id)
        beneficiary = self.account(beneficiary_id)
        pool = self.pool_of(defaulter_id)
        remaining = shortfall
        draws: list[LayerDraw] = []

        # 1. defaulter's remaining segregated collateral
        available = max(defaulter.stable_balance, ZERO)
        take = min(available, remaining)
        if defaulter_id != beneficiary_id:
            defaulter.stable_balance -= take
            beneficiary.stable_balance += take
        draws.append(LayerDraw("defaulter_collateral", take))
        remaining -= take

        # 2. defaulter's staked tokens, valued at the mark
        take_tokens = min(tokens_for_value(remaining, token_mark),
                          self.ledger.staked_of(defaulter_id))
        value = take_tokens * token_mark
        if take_tokens > 0:
            self.ledger.slash(defaulter_id, take_tokens,
                              beneficiary=beneficiary_id,
                              compensation_share=Decimal(1))
        draws.append(LayerDraw("defaulter_stake", value, take_tokens))
        remaining -= value

        # 3 + 4. guarantor pool collateral, then pool stake
        if pool is not None:
            take = min(pool.pool_collateral, remaining)
            pool.pool_collateral -= take
            beneficiary.stable_balance += take
            draws.append(LayerDraw("pool_collateral", take))
            remaining -= take

            take_tokens = min(tokens_for_value(remaining, token_mark),
                              self.ledger.staked_of(pool.token_account))
            value = take_tokens * token_mark
            if take_tokens > 0:
                self.ledger.slash(pool.token_account, take_tokens,
                                  beneficiary=beneficiary_id,
                                  compensation_share=Decimal(1))
            draws.append(LayerDraw("pool_stake", value, take_tokens))
            remaining -= value
        else:
            draws.append(LayerDraw("pool_collateral", ZERO))
            draws.append(LayerDraw("pool_stake", ZERO))

        # 5. insurance fund
        drawn = self.ledger.fund.draw(remaining)
        if drawn > 0:
            beneficiary.stable_balance += drawn
        draws.append(LayerDraw("insurance_fund", drawn))
        remaining -= drawn

        # 6. uncovered residual is a haircut against the beneficiary
        if remaining > 0:
            self.haircuts.append((beneficiary_id, remaining))
        record = WaterfallRecord(defaulter_id,
                                 pool.guarantor_id if pool else None,
                                 beneficiary_id, shortfall, tuple(draws),
                                 remaining)
        self.waterfalls.append(record)
        assert record.total_drawn() + record.haircut == shortfall, \
            "waterfall draws must sum to the shortfall"
        return record

    # -- reporting --------------------------------------------------------

    def required_insurance_stake(self, guarantor_id: str,
                                 marks: Mapping[str, Decimal],
                                 vols: Mapping[str, Decimal], now: int,
                                 token_mark: Decimal) -> Decimal:
        """Tokens the pool should hold in the fund: a configured fraction
        of aggregate customer initial margin, at the current token mark."""
        pool = self.pools[guarantor_id]
        aggregate = dsum(self.margin_of(a, marks, vols, now)
                         for a in sorted(pool.customers))
        if dec(token_mark) <= 0:
            return ZERO
        return quantize(aggregate * self.config.insurance_fraction / dec(token_mark))

    def total_stable(self) -> Decimal:
        """Stable currency across accounts, pools and the insurance fund."""
        return (dsum(a.stable_balance for a in self.accounts.values())
                + dsum(p.pool_collateral for p in self.pools.values())
                + self.ledger.fund.stable_balance
                + self.ledger.fee_pool)
