"""Single-writer exchange engine: commands in, events and state out.

The engine owns every stateful component (books, accounts, token
ledger, obligations) and mutates them only through `execute`, one
command at a time, so a command stream fully determines final state.

Cash mechanics are chosen so stable currency is conserved at every
command boundary:
  - futures fills rebase both parties to the current mark immediately,
    making each fill's cash flows net to zero;
  - option fills exchange premium explicitly (position lots are
    bookkeeping only);
  - everything else moves stable between accounts, pools, the insurance
    fund and the fee pool.
The invariant `total stable == cumulative exogenous deposits` is
asserted after every command.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Optional

from .clearing import (
    AccountRole,
    ClearingConfig,
    ClearingHouse,
    ComputeTask,
    DeliveryObligation,
    DeliveryVerdict,
    CapacityOutcome,
    ObligationStatus,
    WaterfallRecord,
    LayerDraw,
    match_longs_to_shorts,
    tokens_for_value,
)
from .compute_units import ReferenceSystem, SystemProfile
from .errors import GcxError
from .instruments import (
    InstrumentKind,
    InstrumentSpec,
    OptionRight,
    black76_premium,
    exercise_option,
    perp_funding,
)
from .matching import MatchingEngine, Side, TimeInForce
from .numerics import ONE, ZERO, dec, SECONDS_PER_HOUR, SECONDS_PER_YEAR
from .risk import (
    MarginParams,
    MarginStatus,
    ReputationBook,
    ReputationEvent,
)
from .tokens import TokenConfig, TokenLedger

ENGINE_VERSION = "0.1.0"

DEFAULT_REFERENCE = ReferenceSystem(
    id="reference-node",
    reference_performance=Decimal("1e12"),   # 1 TFLOPS
    reference_efficiency=Decimal("5e9"),     # FLOPS per watt
)


@dataclass(frozen=True)
class EngineConfig:
    token: TokenConfig = TokenConfig()
    clearing: ClearingConfig = ClearingConfig()
    margin: MarginParams = MarginParams()
    reference: ReferenceSystem = DEFAULT_REFERENCE
    spot_index: Optional[str] = None   # instrument whose mark is the CH spot price

    @classmethod
    def from_dict(cls, raw: dict) -> "EngineConfig":
        token = TokenConfig(**raw.get("token", {}))
        clearing = ClearingConfig(**{
            k: (dec(v) if k == "insurance_fraction" else v)
            for k, v in raw.get("clearing", {}).items()})
        margin = MarginParams(**raw.get("margin", {}))
        ref = raw.get("reference")
        reference = ReferenceSystem(**ref) if ref else DEFAULT_REFERENCE
        return cls(token, clearing, margin, reference, raw.get("spot_index"))


def _capable_profile(ref: ReferenceSystem) -> SystemProfile:
    """Stand-in profile for parties assumed able to deliver (guarantors)."""
    return SystemProfile(
        provider_id="<assumed>",
        measured_performance=ref.reference_performance * 10,
        uptime_pct=Decimal(100),
        measured_power=ref.reference_performance * 10 / ref.reference_efficiency
        / 10,   # 10x the reference efficiency
    )


class Engine:
    def __init__(self, config: EngineConfig = EngineConfig()):
        self.config = config
        self.specs: dict[str, InstrumentSpec] = {}
        self.matching = MatchingEngine()
        self.ledger = TokenLedger(config.token)
        self.house = ClearingHouse(self.ledger, self.specs, config.clearing,
                                   config.margin)
        self.reputation = ReputationBook()
        self.marks: dict[str, Decimal] = {}
        self.vols: dict[str, Decimal] = {}
        self.token_mark: Decimal = ONE
        self.last_trade: dict[str, Decimal] = {}
        self.time = 0
        self.events: list[dict] = []
        self.flows: dict[str, dict[str, Decimal]] = {}
        self.margin_calls: list[dict] = []
        self.liquidations: list[str] = []
        self.parity_pairs: list[tuple[str, str]] = []   # (call id, put id)
        self.parity_checks = 0
        self.parity_failures = 0
        self.exogenous_stable = ZERO

    # ------------------------------------------------------------------
    # plumbing

    def _emit(self, etype: str, **payload: Any) -> dict:
        event = {"e": etype, "t": self.time}
        for key, value in payload.items():
            event[key] = str(value) if isinstance(value, Decimal) else value
        self.events.append(event)
        return event

    def _note_flow(self, account_id: str, tag: str, amount: Decimal) -> None:
        if amount == 0:
            return
        flows = self.flows.setdefault(account_id, {})
        flows[tag] = flows.get(tag, ZERO) + amount

    def _cash(self, account_id: str, tag: str, amount: Decimal) -> None:
        """Move stable into (+) or out of (-) an account, tagged."""
        if amount == 0:
            return
        self.house.account(account_id).stable_balance += amount
        self._note_flow(account_id, tag, amount)

    def _spot(self, default: Optional[Decimal] = None) -> Decimal:
        if self.config.spot_index and self.config.spot_index in self.marks:
            return self.marks[self.config.spot_index]
        if default is not None:
            return default
        raise GcxError("no spot index mark available")

    def _check_conservation(self) -> None:
        total = self.house.total_stable()
        assert total == self.exogenous_stable, \
            f"stable leak: holdings {total} != deposits {self.exogenous_stable}"
        self.ledger.check_supply_identity()
        assert self.ledger.total_supply <= self.ledger.config.supply_cap

    # ------------------------------------------------------------------
    # command entry point

    def execute(self, at: int, cmd: dict) -> None:
        if at < self.time:
            raise GcxError(f"clock moved backwards: {at} < {self.time}")
        self.time = at
        handler = getattr(self, "_op_" + cmd["op"], None)
        if handler is None:
            raise GcxError(f"unknown op {cmd['op']!r}")
        handler(cmd)
        self._check_conservation()

    # ------------------------------------------------------------------
    # setup ops

    def _op_list_instrument(self, cmd: dict) -> None:
        spec = InstrumentSpec.from_dict(cmd["spec"])
        self.specs[spec.id] = spec
        self.matching.create_book(spec.id, spec.tick_size)
        if spec.is_option:
            for other_id, other in self.specs.items():
                if (other.is_option and other.kind is not spec.kind
                        and other.underlying == spec.underlying
                        and other.strike == spec.strike
                        and other.expiry == spec.expiry):
                    call, put = ((spec.id, other_id)
                                 if spec.kind is InstrumentKind.CALL_OPTION
                                 else (other_id, spec.id))
                    self.parity_pairs.append((call, put))
        self._emit("instrument_listed", instrument=spec.id, kind=spec.kind.value)

    def _op_create_guarantor(self, cmd: dict) -> None:
        pool = self.house.add_guarantor(cmd["id"], dec(cmd.get("pool_collateral", 0)))
        self.reputation.register(cmd["id"])
        self.exogenous_stable += pool.pool_collateral
        stake = dec(cmd.get("pool_stake_tokens", 0))
        if stake > 0:
            self.ledger.mint_initial(pool.token_account, stake)
            self.ledger.stake(pool.token_account, stake)
        insurance = dec(cmd.get("insurance_stake_tokens", 0))
        if insurance > 0:
            self.ledger.mint_initial(cmd["id"], insurance)
            self.ledger.fund_stake(cmd["id"], insurance)
            pool.insurance_stake = insurance
        fund_stable = dec(cmd.get("fund_stable", 0))
        if fund_stable > 0:
            self.ledger.fund.contribute(cmd["id"], fund_stable)
            self.exogenous_stable += fund_stable
        self._emit("guarantor_created", guarantor=cmd["id"])

    def _op_create_account(self, cmd: dict) -> None:
        account = self.house.add_account(cmd["id"], AccountRole(cmd["role"]),
                                         cmd["guarantor"],
                                         dec(cmd.get("balance", 0)))
        self.reputation.register(cmd["id"])
        self.exogenous_stable += account.stable_balance
        self._note_flow(cmd["id"], "deposit", account.stable_balance)
        tokens = dec(cmd.get("tokens", 0))
        staked = dec(cmd.get("staked", 0))
        if tokens > 0 or staked > 0:
            self.ledger.mint_initial(cmd["id"], tokens + staked)
        if staked > 0:
            self.ledger.stake(cmd["id"], staked)
        profile = cmd.get("profile")
        if profile:
            account.profile = SystemProfile(**profile)
        self._emit("account_created", account=cmd["id"], role=cmd["role"])

    def _op_fund_account(self, cmd: dict) -> None:
        amount = dec(cmd["amount"])
        self._cash(cmd["account"], "deposit", amount)
        self.exogenous_stable += amount
        self._emit("deposit", account=cmd["account"], amount=amount)

    def _op_contribute_fund(self, cmd: dict) -> None:
        amount = dec(cmd["amount"])
        self._cash(cmd["contributor"], "fund_contribution", -amount)
        self.ledger.fund.contribute(cmd["contributor"], amount)
        self._emit("fund_contribution", contributor=cmd["contributor"],
                   amount=amount)

    def _op_mint_tokens(self, cmd: dict) -> None:
        self.ledger.mint_initial(cmd["account"], dec(cmd["amount"]))
        self._emit("tokens_minted", account=cmd["account"], amount=dec(cmd["amount"]))

    def _op_stake(self, cmd: dict) -> None:
        self.ledger.stake(cmd["account"], dec(cmd["amount"]))
        self._emit("staked", account=cmd["account"], amount=dec(cmd["amount"]))

    def _op_unstake(self, cmd: dict) -> None:
        self.ledger.unstake(cmd["account"], dec(cmd["amount"]))
        self._emit("unstaked", account=cmd["account"], amount=dec(cmd["amount"]))

    def _op_issue_tokens(self, cmd: dict) -> None:
        self.ledger.issue(dec(cmd["amount"]))
        self._emit("tokens_issued", amount=dec(cmd["amount"]))

    def _op_performance_burn(self, cmd: dict) -> None:
        burned = self.ledger.performance_burn(cmd["account"], int(cmd["missed"]))
        self._emit("performance_burn", account=cmd["account"],
                   missed=int(cmd["missed"]), burned=burned)

    def _op_distribute_yield(self, cmd: dict) -> None:
        reps = {aid: rep.score for aid, rep in self.reputation.scores.items()}
        transfers = self.ledger.distribute_yield(reps)
        for transfer in transfers:
            self._cash(transfer.contributor, "yield", transfer.amount)
            self._emit("yield", contributor=transfer.contributor,
                       amount=transfer.amount)

    # ------------------------------------------------------------------
    # marks

    def _op_set_mark(self, cmd: dict) -> None:
        instrument_id = cmd["instrument"]
        price = dec(cmd["price"])
        self.marks[instrument_id] = price
        if instrument_id in self.specs:
            for account_id, cash in self.house.mark_all(instrument_id, price).items():
                self._note_flow(account_id, "variation", cash)
        self._check_parity(instrument_id)
        self._emit("mark", instrument=instrument_id, price=price)

    def _op_set_vol(self, cmd: dict) -> None:
        self.vols[cmd["instrument"]] = dec(cmd["vol"])

    def _op_set_token_mark(self, cmd: dict) -> None:
        self.token_mark = dec(cmd["price"])

    def _check_parity(self, underlying_id: str) -> None:
        """Exact zero-rate put-call parity on every quoted pair."""
        for call_id, put_id in self.parity_pairs:
            call = self.specs[call_id]
            if call.underlying != underlying_id:
                continue
            vol = self.vols.get(call_id, self.vols.get(underlying_id))
            if vol is None or call.expiry is None or call.expiry < self.time:
                continue
            f = self.marks[underlying_id]
            t = dec(call.expiry - self.time) / SECONDS_PER_YEAR
            c = black76_premium(f, call.strike, vol, t, OptionRight.CALL)
            p = black76_premium(f, call.strike, vol, t, OptionRight.PUT)
            self.parity_checks += 1
            if c - p != f - call.strike:
                self.parity_failures += 1

    # ------------------------------------------------------------------
    # trading

    def _op_submit_order(self, cmd: dict) -> None:
        account_id = cmd["account"]
        instrument_id = cmd["instrument"]
        side = Side(cmd["side"])
        price = dec(cmd["price"])
        quantity = int(cmd["quantity"])
        tif = TimeInForce(cmd.get("tif", "gtc"))
        gate = self.house.pre_trade_gate(account_id, instrument_id, side,
                                         price, quantity, self.marks,
                                         self.vols, self.time)
        if not gate.approved:
            self._emit("order_rejected", account=account_id,
                       instrument=instrument_id, reason=gate.reason,
                       shortfall=gate.shortfall)
            return
        order, trades = self.matching.submit(account_id, instrument_id, side,
                                             price, quantity, tif)
        self._emit("order_accepted", order_id=order.id, account=account_id,
                   instrument=instrument_id, side=side.value, price=price,
                   quantity=quantity, remaining=order.remaining)
        for trade in trades:
            self._settle_trade(trade)

    def _op_cancel_all(self, cmd: dict) -> None:
        account_id = cmd["account"]
        instrument_id = cmd.get("instrument")
        for order in list(self.matching.orders.values()):
            if order.active and order.remaining > 0 \
                    and order.account_id == account_id \
                    and (instrument_id is None
                         or order.instrument_id == instrument_id):
                self.matching.cancel(order.id)
                self._emit("order_cancelled", order_id=order.id,
                           account=account_id)

    def _settle_trade(self, trade) -> None:
        spec = self.specs[trade.instrument_id]
        buyer = self.house.account(trade.buyer)
        seller = self.house.account(trade.seller)
        notional = trade.price * trade.quantity * spec.contract_size
        self.last_trade[spec.id] = trade.price
        self._emit("trade", trade_id=trade.id, instrument=spec.id,
                   price=trade.price, quantity=trade.quantity,
                   buyer=trade.buyer, seller=trade.seller,
                   self_trade=trade.self_trade)

        if spec.kind is InstrumentKind.SPOT:
            ch = dec(trade.quantity) * spec.contract_size
            self._cash(trade.buyer, "spot", -notional)
            self._cash(trade.seller, "spot", notional)
            buyer.ch_received += ch
            seller.ch_delivered += ch
        elif spec.is_option:
            self._cash(trade.buyer, "premium", -notional)
            self._cash(trade.seller, "premium", notional)
            buyer.position(spec).apply_fill(trade.quantity, trade.price)
            seller.position(spec).apply_fill(-trade.quantity, trade.price)
        else:
            mark = self.marks.setdefault(spec.id, trade.price)
            for account, signed in ((buyer, trade.quantity),
                                    (seller, -trade.quantity)):
                pos = account.position(spec)
                cash = pos.apply_fill(signed, trade.price)
                cash += pos.mark_to(mark)
                self._cash(account.account_id, "variation", cash)

        if self.ledger.config.fee_bps > 0:
            for account_id in (trade.buyer, trade.seller):
                record = self.ledger.charge_fee(account_id, notional,
                                                self.token_mark)
                if record.fee > 0:
                    self._cash(account_id, "fees", -record.fee)
                    self._emit("fee", account=account_id, fee=record.fee,
                               tokens_burned=record.tokens_burned)

    # ------------------------------------------------------------------
    # options lifecycle

    def _assign_and_open_futures(self, spec: InstrumentSpec,
                                 exerciser_id: str, quantity: int) -> None:
        """Open futures legs for an exercise: longs at the strike, shorts
        assigned largest-first, everyone rebased to the current mark."""
        sign = 1 if spec.kind is InstrumentKind.CALL_OPTION else -1
        shorts = []
        for account in self.house.accounts.values():
            pos = account.positions.get(spec.id)
            if pos is not None and pos.net_quantity < 0:
                shorts.append((account.account_id, -pos.net_quantity))
        assignments = match_longs_to_shorts(shorts, [(exerciser_id, quantity)])
        underlying = self.specs[spec.underlying]
        mark = self.marks.get(underlying.id, spec.strike)
        legs = [(exerciser_id, sign * quantity)]
        for short_id, _, qty in assignments:
            short_pos = self.house.account(short_id).positions[spec.id]
            short_pos.apply_fill(qty, ZERO)   # premium already settled at trade
            legs.append((short_id, -sign * qty))
        for account_id, signed in legs:
            pos = self.house.account(account_id).position(underlying)
            pos.apply_fill(signed, spec.strike)
            self._cash(account_id, "exercise", pos.mark_to(mark))
        self._emit("exercise", instrument=spec.id, account=exerciser_id,
                   quantity=quantity, strike=spec.strike,
                   assigned=[[a, q] for a, _, q in assignments])

    def _op_exercise(self, cmd: dict) -> None:
        spec = self.specs[cmd["instrument"]]
        account = self.house.account(cmd["account"])
        pos = account.position(spec)
        result = exercise_option(pos, spec, int(cmd["quantity"]), self.time)
        if result.options_closed > 0:
            self._assign_and_open_futures(spec, cmd["account"],
                                          result.options_closed)

    def _op_expire_options(self, cmd: dict) -> None:
        spec = self.specs[cmd["instrument"]]
        settlement = dec(cmd["underlying_price"])
        if spec.kind is InstrumentKind.CALL_OPTION:
            itm = settlement > spec.strike
        else:
            itm = settlement < spec.strike
        for order in list(self.matching.orders.values()):
            if order.active and order.remaining > 0 \
                    and order.instrument_id == spec.id:
                self.matching.cancel(order.id)
        holders = [(a, a.positions[spec.id].net_quantity)
                   for a in self.house.accounts.values()
                   if spec.id in a.positions]
        for account, qty in holders:
            account.positions.pop(spec.id, None)
        if itm:
            # all longs exercise, all shorts are assigned; quantities net out
            sign = 1 if spec.kind is InstrumentKind.CALL_OPTION else -1
            underlying = self.specs[spec.underlying]
            mark = self.marks.get(underlying.id, settlement)
            for account, qty in holders:
                if qty == 0:
                    continue
                pos = account.position(underlying)
                pos.apply_fill(sign * qty, spec.strike)
                self._cash(account.account_id, "exercise", pos.mark_to(mark))
        self._emit("option_expiry", instrument=spec.id, itm=itm,
                   settlement=settlement)

    # ------------------------------------------------------------------
    # perps

    def _op_funding(self, cmd: dict) -> None:
        spec = self.specs[cmd["instrument"]]
        index = dec(cmd["index"]) if "index" in cmd else self._spot()
        mark = self.marks.get(spec.id, index)
        positions = [a.positions[spec.id] for a in self.house.accounts.values()
                     if spec.id in a.positions]
        for transfer in perp_funding(spec, mark, index, positions):
            self._cash(transfer.account_id, "funding", transfer.amount)
        self._emit("funding", instrument=spec.id, mark=mark, index=index)

    # ------------------------------------------------------------------
    # futures expiry and delivery

    def _op_screen_capacity(self, cmd: dict) -> None:
        """Pre-expiry check: shorts with a registered profile that cannot
        cover their open quantity are liquidated before expiry."""
        spec = self.specs[cmd["instrument"]]
        window = self.house.config.delivery_window_hours * SECONDS_PER_HOUR
        for account in list(self.house.accounts.values()):
            pos = account.positions.get(spec.id)
            if pos is None or pos.net_quantity >= 0 or account.profile is None:
                continue
            probe = DeliveryObligation(
                obligation_id="screen", short_account=account.account_id,
                long_account="", quantity=dec(-pos.net_quantity) * spec.contract_size,
                grade_floor=spec.grade_floor,
                contract_price=self.marks.get(spec.id, ZERO),
                created_at=self.time, deadline=self.time + window)
            outcome = self.house.verify_capacity(probe, account.profile,
                                                 self.config.reference)
            self._emit("capacity_screen", account=account.account_id,
                       instrument=spec.id, outcome=outcome.value)
            if outcome is CapacityOutcome.LIQUIDATE_SHORT:
                self._liquidate(account.account_id, "capacity")

    def _op_expire_future(self, cmd: dict) -> None:
        spec = self.specs[cmd["instrument"]]
        settlement = dec(cmd["settlement_price"])
        for order in list(self.matching.orders.values()):
            if order.active and order.remaining > 0 \
                    and order.instrument_id == spec.id:
                self.matching.cancel(order.id)
        self.marks[spec.id] = settlement
        result = self.house.expire_futures(spec.id, settlement, self.time,
                                           self.token_mark)
        for account_id, cash in result.variation.items():
            self._note_flow(account_id, "variation", cash)
        self._emit("future_expired", instrument=spec.id, settlement=settlement,
                   obligations=[ob.obligation_id for ob in result.obligations])
        for ob in result.obligations:
            short = self.house.account(ob.short_account)
            profile = short.profile or _capable_profile(self.config.reference)
            outcome = self.house.verify_capacity(ob, profile,
                                                 self.config.reference,
                                                 at=self.time)
            if outcome is CapacityOutcome.LIQUIDATE_SHORT:
                # screen was bypassed; the guarantor inherits the duty
                guarantor_id = short.guarantor_id
                self._emit("obligation_reassigned", obligation=ob.obligation_id,
                           from_account=ob.short_account, to=guarantor_id)
                ob.short_account = guarantor_id
                self.house.verify_capacity(
                    ob, _capable_profile(self.config.reference),
                    self.config.reference, at=self.time)
                self._liquidate(short.account_id, "capacity")
            self._emit("obligation", obligation=ob.obligation_id,
                       short=ob.short_account, long=ob.long_account,
                       quantity=ob.quantity, price=ob.contract_price,
                       deadline=ob.deadline, status=ob.status.value)

    def _op_deliver(self, cmd: dict) -> None:
        account_id = cmd["account"]
        honest = bool(cmd.get("honest", True))
        open_obs = sorted(
            (ob for ob in self.house.obligations.values()
             if ob.short_account == account_id
             and ob.status is ObligationStatus.CAPACITY_VERIFIED),
            key=lambda ob: ob.obligation_id)
        for ob in open_obs:
            seed = int(hashlib.sha256(ob.obligation_id.encode()).hexdigest()[:8], 16)
            task = ComputeTask.make(f"task-{ob.obligation_id}", seed, 32)
            claimed = task.expected_digest if honest else "0" * 64
            verdict = self.house.verify_delivery(ob.obligation_id, task,
                                                 claimed, self.time)
            self._settle_obligation(ob, verdict)

    def _op_deadline_sweep(self, cmd: dict) -> None:
        overdue = sorted(
            (ob for ob in self.house.obligations.values()
             if ob.status is ObligationStatus.CAPACITY_VERIFIED
             and ob.deadline < self.time),
            key=lambda ob: ob.obligation_id)
        for ob in overdue:
            self._settle_obligation(ob, DeliveryVerdict.CHALLENGED_FAILED)

    def _settle_obligation(self, ob: DeliveryObligation,
                           verdict: DeliveryVerdict) -> None:
        spot = self._spot(default=ob.contract_price)
        before = {aid: acc.stable_balance
                  for aid, acc in self.house.accounts.items()}
        record = self.house.settle_delivery(ob.obligation_id, verdict,
                                            self.time, spot, self.token_mark)
        for aid, acc in self.house.accounts.items():
            delta = acc.stable_balance - before[aid]
            if delta == 0:
                continue
            if record.outcome == "delivered":
                tag = "delivery"
            elif aid == ob.long_account:
                tag = "compensation"
            else:
                tag = "default_waterfall"
            self._note_flow(aid, tag, delta)
        event = self.reputation.update(
            ob.short_account,
            ReputationEvent.DELIVERY_SUCCESS if record.outcome == "delivered"
            else ReputationEvent.DELIVERY_FAILURE)
        self._emit("settlement", obligation=ob.obligation_id,
                   outcome=record.outcome, cash=record.cash_paid,
                   replacement=record.replacement_cost,
                   slashed_tokens=record.slashed_tokens,
                   slash_value=record.slash_value,
                   reputation=event.score,
                   waterfall=[[d.layer, str(d.amount), str(d.tokens)]
                              for d in record.waterfall.draws]
                   if record.waterfall else [],
                   haircut=record.waterfall.haircut if record.waterfall else ZERO)

    # ------------------------------------------------------------------
    # margining and liquidation

    def _op_margin_sweep(self, cmd: dict) -> None:
        for account in list(self.house.accounts.values()):
            if not any(p.net_quantity != 0 for p in account.positions.values()):
                continue
            status = self.house.margin_status(account.account_id, self.marks,
                                              self.vols, self.time)
            if status is MarginStatus.HEALTHY:
                continue
            self.margin_calls.append({"t": self.time,
                                      "account": account.account_id,
                                      "status": status.value})
            self._emit("margin_call", account=account.account_id,
                       status=status.value)
            if status is MarginStatus.LIQUIDATE:
                self._liquidate(account.account_id, "margin")

    def _liquidate(self, account_id: str, reason: str) -> None:
        """Close everything best-effort on the book; transfer remainders to
        the guarantor at the current mark; cover any stable debt layer by
        layer."""
        account = self.house.account(account_id)
        self.liquidations.append(account_id)
        self._emit("liquidation", account=account_id, reason=reason)
        for order in list(self.matching.orders.values()):
            if order.active and order.remaining > 0 \
                    and order.account_id == account_id:
                self.matching.cancel(order.id)

        guarantor_id = account.guarantor_id or account_id
        for instrument_id in sorted(account.positions):
            pos = account.positions[instrument_id]
            spec = self.specs[instrument_id]
            if pos.net_quantity == 0:
                account.positions.pop(instrument_id)
                continue
            if spec.is_option:
                self._transfer_position(account_id, guarantor_id, spec,
                                        self.house.option_unit_value(
                                            spec, self.marks, self.vols,
                                            self.time))
                continue
            side = Side.SELL if pos.net_quantity > 0 else Side.BUY
            book = self.matching.book(instrument_id)
            while pos.net_quantity != 0:
                best = book.best_bid() if side is Side.SELL else book.best_ask()
                if best is None:
                    break
                _, trades = self.matching.submit(account_id, instrument_id,
                                                 side, best,
                                                 abs(pos.net_quantity),
                                                 TimeInForce.IOC)
                if not trades:
                    break
                for trade in trades:
                    self._settle_trade(trade)
            if pos.net_quantity != 0:
                mark = self.marks.get(instrument_id, pos.lots[0].basis)
                self._transfer_position(account_id, guarantor_id, spec, mark)

        self.reputation.update(account_id, ReputationEvent.LIQUIDATION)
        if account.stable_balance < 0:
            self._cover_debt(account_id, -account.stable_balance)

    def _transfer_position(self, from_id: str, to_id: str,
                           spec: InstrumentSpec, price: Decimal) -> None:
        """Move an open position to the guarantor at a given unit price."""
        source = self.house.account(from_id)
        target = self.house.account(to_id)
        pos = source.positions.pop(spec.id)
        qty = pos.net_quantity
        if qty == 0 or from_id == to_id:
            if qty != 0:
                source.positions[spec.id] = pos
            return
        target_pos = target.position(spec)
        if spec.is_option:
            value = price * qty * spec.contract_size
            pos.apply_fill(-qty, price)
            target_pos.apply_fill(qty, price)
            self._cash(from_id, "liquidation", value)
            self._cash(to_id, "liquidation", -value)
        else:
            cash = pos.apply_fill(-qty, price)
            self._cash(from_id, "liquidation", cash)
            target_pos.apply_fill(qty, price)
            self._cash(to_id, "liquidation", target_pos.mark_to(
                self.marks.get(spec.id, price)))
        self._emit("position_transferred", instrument=spec.id,
                   from_account=from_id, to=to_id, quantity=qty, price=price)

    def _cover_debt(self, account_id: str, debt: Decimal) -> None:
        """Waterfall for a liquidation debt owed to the clearing system.

        Staked-token layers are bought by the insurance fund at the token
        mark (bounded by its stable), so every draw arrives as stable; any
        residual is recorded as a haircut and the balance is written off.
        """
        account = self.house.account(account_id)
        pool = self.house.pool_of(account_id)
        fund = self.ledger.fund
        remaining = debt
        draws = [LayerDraw("defaulter_collateral", ZERO)]

        def buy_stake(holder: str, layer: str, remaining: Decimal) -> LayerDraw:
            tokens = min(tokens_for_value(min(remaining, fund.stable_balance),
                                          self.token_mark),
                         self.ledger.staked_of(holder))
            value = tokens * self.token_mark
            if tokens > 0:
                self.ledger.fund_acquire_stake(holder, tokens)
                fund.draw(value)
                self._cash(account_id, "default_waterfall", value)
            return LayerDraw(layer, value, tokens)

        draw = buy_stake(account_id, "defaulter_stake", remaining)
        draws.append(draw)
        remaining -= draw.amount

        if pool is not None:
            take = min(pool.pool_collateral, remaining)
            pool.pool_collateral -= take
            self._cash(account_id, "default_waterfall", take)
            draws.append(LayerDraw("pool_collateral", take))
            remaining -= take
            draw = buy_stake(pool.token_account, "pool_stake", remaining)
            draws.append(draw)
            remaining -= draw.amount
        else:
            draws.append(LayerDraw("pool_collateral", ZERO))
            draws.append(LayerDraw("pool_stake", ZERO))

        take = fund.draw(remaining)
        if take > 0:
            self._cash(account_id, "default_waterfall", take)
        draws.append(LayerDraw("insurance_fund", take))
        remaining -= take

        if remaining > 0:
            # written off: deposits shrink by the uncovered residual
            self._cash(account_id, "haircut", remaining)
            self.exogenous_stable += remaining
            self.house.haircuts.append((account_id, remaining))
        record = WaterfallRecord(account_id,
                                 pool.guarantor_id if pool else None,
                                 account_id, debt, tuple(draws), remaining)
        self.house.waterfalls.append(record)
        self._emit("debt_waterfall", account=account_id, debt=debt,
                   draws=[[d.layer, str(d.amount), str(d.tokens)]
                          for d in draws],
                   haircut=remaining)

    # ------------------------------------------------------------------
    # physical production

    def _op_production_period(self, cmd: dict) -> None:
        capacity = dec(cmd["capacity_ch"])
        power_cost = dec(cmd["power_cost"])
        shutdown = bool(cmd.get("shutdown", False))
        spot = self._spot()
        revenue = capacity * spot
        pnl = revenue - power_cost
        running = True
        if shutdown and pnl < 0:
            pnl = ZERO
            running = False
        self._cash(cmd["account"], "production", pnl)
        self.exogenous_stable += pnl
        if running:
            self.house.account(cmd["account"]).ch_delivered += capacity
        self._emit("production", account=cmd["account"], spot=spot,
                   capacity=capacity, power_cost=power_cost, pnl=pnl,
                   running=running)

    # ------------------------------------------------------------------
    # snapshot and hash

    def state_snapshot(self) -> dict:
        accounts = {}
        for aid, acc in sorted(self.house.accounts.items()):
            accounts[aid] = {
                "stable": str(acc.stable_balance),
                "ch_received": str(acc.ch_received),
                "ch_delivered": str(acc.ch_delivered),
                "positions": {
                    iid: {"lots": [[lot.quantity, str(lot.basis)]
                                   for lot in pos.lots],
                          "realized": str(pos.realized_pnl)}
                    for iid, pos in sorted(acc.positions.items()) if pos.lots},
            }
        books = {}
        for iid in sorted(self.matching.books):
            depth = self.matching.depth(iid)
            books[iid] = {side: [[str(p), q] for p, q in levels]
                          for side, levels in depth.items()}
        return {
            "engine_version": ENGINE_VERSION,
            "time": self.time,
            "marks": {k: str(v) for k, v in sorted(self.marks.items())},
            "vols": {k: str(v) for k, v in sorted(self.vols.items())},
            "token_mark": str(self.token_mark),
            "accounts": accounts,
            "pools": {gid: {"collateral": str(p.pool_collateral),
                            "insurance_stake": str(p.insurance_stake),
                            "customers": sorted(p.customers)}
                      for gid, p in sorted(self.house.pools.items())},
            "ledger": self.ledger.snapshot(),
            "obligations": {
                ob.obligation_id: {
                    "short": ob.short_account, "long": ob.long_account,
                    "quantity": str(ob.quantity),
                    "price": str(ob.contract_price),
                    "deadline": ob.deadline, "status": ob.status.value}
                for ob in sorted(self.house.obligations.values(),
                                 key=lambda o: o.obligation_id)},
            "books": books,
            "counters": {"next_id": self.matching._next_id,
                         "next_obligation": self.house._next_obligation},
            "haircuts": [[b, str(a)] for b, a in self.house.haircuts],
            "reputation": {aid: rep.score
                           for aid, rep in sorted(self.reputation.scores.items())},
            "exogenous_stable": str(self.exogenous_stable),
        }

    def state_hash(self) -> str:
        blob = json.dumps(self.state_snapshot(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
