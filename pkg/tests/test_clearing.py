"""Clearing house tests: delivery pipeline, default waterfall, gating.

Waterfall layer amounts are hand-derived from the layer balances set up
in each test, then asserted to the last digit.
"""

from decimal import Decimal

import pytest

from gcx.clearing import (
    AccountRole,
    CapacityOutcome,
    ClearingConfig,
    ClearingHouse,
    ComputeTask,
    DeliveryObligation,
    DeliveryVerdict,
    ObligationStatus,
    WATERFALL_LAYERS,
    match_longs_to_shorts,
    run_kernel,
    tokens_for_value,
)
from gcx.compute_units import ReferenceSystem, SystemProfile
from gcx.errors import (
    BadState,
    NoGuarantor,
    NotAFuture,
    NotExpired,
    UnknownAccount,
    UnknownObligation,
)
from gcx.instruments import InstrumentSpec
from gcx.matching import Side
from gcx.numerics import ZERO, dec, dsum
from gcx.tokens import TokenLedger

REF = ReferenceSystem(id="ref", reference_performance="1e12",
                      reference_efficiency="5e9")

SPECS = {
    "F": InstrumentSpec.from_dict({
        "id": "F", "kind": "future", "contract_size": "1",
        "tick_size": "0.01", "expiry": 1000, "settlement": "physical"}),
    "FC": InstrumentSpec.from_dict({
        "id": "FC", "kind": "future", "contract_size": "1",
        "tick_size": "0.01", "expiry": 1000, "settlement": "cash"}),
    "S": InstrumentSpec.from_dict({
        "id": "S", "kind": "spot", "contract_size": "1", "tick_size": "0.01"}),
}


def make_house(**kwargs):
    ledger = TokenLedger()
    house = ClearingHouse(ledger, SPECS, **kwargs)
    house.add_guarantor("g1", pool_collateral=dec(1000))
    return house, ledger


def fund_account(house, ledger, account_id, role=AccountRole.TRADER,
                 balance=dec(10_000), tokens=ZERO, staked=ZERO):
    house.add_account(account_id, role, "g1", balance)
    if tokens or staked:
        ledger.mint_initial(account_id, tokens + staked)
        if staked:
            ledger.stake(account_id, staked)


class TestKernel:
    def test_kernel_deterministic(self):
        assert run_kernel(42, 10) == run_kernel(42, 10)
        assert run_kernel(42, 10) != run_kernel(43, 10)
        assert run_kernel(42, 10) != run_kernel(42, 11)

    def test_task_digest_verifies(self):
        task = ComputeTask.make("t1", 7, 5)
        assert run_kernel(7, 5) == task.expected_digest


class TestMatching:
    def test_greedy_largest_first(self):
        shorts = [("s_small", 3), ("s_big", 7)]
        longs = [("l_small", 4), ("l_big", 6)]
        got = match_longs_to_shorts(shorts, longs)
        # each round re-picks the largest remaining on both sides
        assert got == [("s_big", "l_big", 6), ("s_small", "l_small", 3),
                       ("s_big", "l_small", 1)]

    def test_ties_break_by_account_id(self):
        got = match_longs_to_shorts([("sb", 5), ("sa", 5)], [("lx", 10)])
        assert got == [("sa", "lx", 5), ("sb", "lx", 5)]

    def test_unbalanced_sides_leave_residual(self):
        got = match_longs_to_shorts([("s", 10)], [("l", 4)])
        assert got == [("s", "l", 4)]
        assert match_longs_to_shorts([], [("l", 4)]) == []

    def test_quantity_conserved(self):
        shorts = [("s1", 9), ("s2", 5), ("s3", 2)]
        longs = [("l1", 7), ("l2", 7), ("l3", 2)]
        got = match_longs_to_shorts(shorts, longs)
        assert sum(q for _, _, q in got) == 16
        per_short = {}
        per_long = {}
        for s, l, q in got:
            per_short[s] = per_short.get(s, 0) + q
            per_long[l] = per_long.get(l, 0) + q
        assert all(per_short[a] <= q for a, q in shorts)
        assert all(per_long[a] <= q for a, q in longs)


class TestTokensForValue:
    def test_floor_quantization(self):
        assert tokens_for_value(dec(10), dec(3)) == dec("3.333333")
        assert tokens_for_value(dec(10), dec(2)) == dec(5)
        assert tokens_for_value(dec(10), ZERO) == ZERO


class TestObligationStateMachine:
    def make_ob(self):
        return DeliveryObligation("ob-1", "s", "l", dec(10),
                                  SPECS["F"].grade_floor, dec(100), 0, 86400)

    def test_happy_path(self):
        ob = self.make_ob()
        ob.advance(ObligationStatus.CAPACITY_VERIFIED, 1)
        ob.advance(ObligationStatus.DELIVERED, 2)
        assert ob.history == [(1, ObligationStatus.CAPACITY_VERIFIED),
                              (2, ObligationStatus.DELIVERED)]

    def test_failure_path(self):
        ob = self.make_ob()
        ob.advance(ObligationStatus.CAPACITY_VERIFIED, 1)
        ob.advance(ObligationStatus.FAILED, 2)
        ob.advance(ObligationStatus.COMPENSATED, 3)

    @pytest.mark.parametrize("sequence", [
        [ObligationStatus.DELIVERED],
        [ObligationStatus.FAILED],
        [ObligationStatus.COMPENSATED],
        [ObligationStatus.CAPACITY_VERIFIED, ObligationStatus.COMPENSATED],
        [ObligationStatus.CAPACITY_VERIFIED, ObligationStatus.DELIVERED,
         ObligationStatus.FAILED],
    ])
    def test_illegal_transitions_rejected(self, sequence):
        ob = self.make_ob()
        with pytest.raises(BadState):
            for to in sequence:
                ob.advance(to, 0)

    def test_terminal_states_frozen(self):
        ob = self.make_ob()
        ob.advance(ObligationStatus.CAPACITY_VERIFIED, 1)
        ob.advance(ObligationStatus.DELIVERED, 2)
        with pytest.raises(BadState):
            ob.advance(ObligationStatus.FAILED, 3)


class TestCapacity:
    def make_verified_ob(self, quantity=dec(10)):
        return DeliveryObligation("ob-1", "s", "l", quantity,
                                  SPECS["F"].grade_floor, dec(100), 0,
                                  24 * 3600)

    def test_able_profile_verifies(self):
        house, _ = make_house()
        ob = self.make_verified_ob(dec(10))
        profile = SystemProfile("s", dec("1e12"), uptime_pct=dec(100))
        assert house.verify_capacity(ob, profile, REF) is \
            CapacityOutcome.CAPACITY_VERIFIED
        assert ob.status is ObligationStatus.CAPACITY_VERIFIED

    def test_uptime_scales_the_window(self):
        # 24h window at 50% uptime -> 12 effective hours of the reference
        house, _ = make_house()
        profile = SystemProfile("s", dec("1e12"), uptime_pct=dec(50))
        ok = self.make_verified_ob(dec(12))
        assert house.verify_capacity(ok, profile, REF) is \
            CapacityOutcome.CAPACITY_VERIFIED
        too_much = self.make_verified_ob(dec("12.000001"))
        assert house.verify_capacity(too_much, profile, REF) is \
            CapacityOutcome.LIQUIDATE_SHORT

    def test_grade_floor_enforced(self):
        house, _ = make_house()
        floored = DeliveryObligation(
            "ob-1", "s", "l", dec(1),
            InstrumentSpec.from_dict({
                "id": "Fg", "kind": "future", "contract_size": "1",
                "tick_size": "0.01", "expiry": 1000,
                "settlement": "physical", "grade_floor": "B2Y",
            }).grade_floor,
            dec(100), 0, 24 * 3600)
        weak = SystemProfile("s", dec("1e12"), uptime_pct=dec(99))  # C3 axis
        assert house.verify_capacity(floored, weak, REF) is \
            CapacityOutcome.LIQUIDATE_SHORT

    def test_zero_quantity_verifies_vacuously(self):
        house, _ = make_house()
        ob = self.make_verified_ob(ZERO)
        profile = SystemProfile("s", dec("1"), uptime_pct=dec(1))
        assert house.verify_capacity(ob, profile, REF) is \
            CapacityOutcome.CAPACITY_VERIFIED


class TestDeliveryVerification:
    def setup_verified(self):
        house, ledger = make_house()
        fund_account(house, ledger, "s")
        fund_account(house, ledger, "l")
        ob = DeliveryObligation("ob-1", "s", "l", dec(10),
                                SPECS["F"].grade_floor, dec(100), 0, 86400)
        ob.advance(ObligationStatus.CAPACITY_VERIFIED, 0)
        house.obligations["ob-1"] = ob
        return house, ob

    def test_honest_digest_accepted(self):
        house, ob = self.setup_verified()
        task = ComputeTask.make("t", 9, 3)
        verdict = house.verify_delivery("ob-1", task, run_kernel(9, 3), now=100)
        assert verdict is DeliveryVerdict.ACCEPTED

    def test_wrong_digest_fails(self):
        house, ob = self.setup_verified()
        task = ComputeTask.make("t", 9, 3)
        verdict = house.verify_delivery("ob-1", task, "0" * 64, now=100)
        assert verdict is DeliveryVerdict.CHALLENGED_FAILED

    def test_lapsed_deadline_fails_even_with_digest(self):
        house, ob = self.setup_verified()
        task = ComputeTask.make("t", 9, 3)
        verdict = house.verify_delivery("ob-1", task, run_kernel(9, 3),
                                        now=ob.deadline + 1)
        assert verdict is DeliveryVerdict.CHALLENGED_FAILED

    def test_unknown_obligation(self):
        house, _ = self.setup_verified()
        with pytest.raises(UnknownObligation):
            house.verify_delivery("ghost", ComputeTask.make("t", 1, 1), "x", 0)


class TestPreTradeGate:
    def test_spot_buy_needs_cash(self):
        house, ledger = make_house()
        fund_account(house, ledger, "a", balance=dec(50))
        result = house.pre_trade_gate("a", "S", Side.BUY, dec(100), 1, {}, {}, 0)
        assert not result.approved
        assert result.shortfall == dec(50)
        result = house.pre_trade_gate("a", "S", Side.BUY, dec(50), 1, {}, {}, 0)
        assert result.approved

    def test_future_needs_margin_headroom(self):
        house, ledger = make_house()
        fund_account(house, ledger, "rich", balance=dec(1000))
        fund_account(house, ledger, "poor", balance=dec(1))
        marks = {"F": dec(100)}
        # initial margin for 1 contract at mark 100 is 15
        assert house.pre_trade_gate("rich", "F", Side.BUY, dec(100), 1,
                                    marks, {}, 0).approved
        result = house.pre_trade_gate("poor", "F", Side.BUY, dec(100), 1,
                                      marks, {}, 0)
        assert not result.approved
        assert result.shortfall == dec(14)

    def test_unmarked_future_valued_at_limit_price(self):
        house, ledger = make_house()
        fund_account(house, ledger, "a", balance=dec(1000))
        assert house.pre_trade_gate("a", "F", Side.BUY, dec(100), 1,
                                    {}, {}, 0).approved

    def test_requires_onboarded_account(self):
        house, _ = make_house()
        with pytest.raises(UnknownAccount):
            house.pre_trade_gate("ghost", "F", Side.BUY, dec(100), 1, {}, {}, 0)


class TestExpiry:
    def set_position(self, house, account_id, qty, price=dec(100),
                     instrument="F"):
        pos = house.account(account_id).position(SPECS[instrument])
        pos.apply_fill(qty, price)

    def test_cash_future_creates_no_obligations(self):
        house, ledger = make_house()
        fund_account(house, ledger, "long")
        fund_account(house, ledger, "short")
        self.set_position(house, "long", 10, instrument="FC")
        self.set_position(house, "short", -10, instrument="FC")
        result = house.expire_futures("FC", dec(110), now=1000)
        assert result.obligations == ()
        assert house.account("long").stable_balance == dec(10_100)
        assert house.account("short").stable_balance == dec(9_900)
        assert not house.account("long").positions

    def test_physical_future_creates_matched_obligations(self):
        house, ledger = make_house()
        fund_account(house, ledger, "long")
        fund_account(house, ledger, "short", staked=dec(2000))
        self.set_position(house, "long", 10)
        self.set_position(house, "short", -10)
        result = house.expire_futures("F", dec(110), now=1000,
                                      token_mark=dec(1))
        assert len(result.obligations) == 1
        ob = result.obligations[0]
        assert (ob.short_account, ob.long_account) == ("short", "long")
        assert ob.quantity == dec(10)
        assert ob.contract_price == dec(110)
        assert ob.deadline == 1000 + 24 * 3600
        # slash exposure locked: 10 CH * 110 at mark 1 = 1100 tokens
        assert ob.locked_tokens == dec(1100)
        assert ledger.locked_of("short") == dec(1100)

    def test_lock_capped_at_free_stake(self):
        house, ledger = make_house()
        fund_account(house, ledger, "long")
        fund_account(house, ledger, "short", staked=dec(300))
        self.set_position(house, "long", 10)
        self.set_position(house, "short", -10)
        result = house.expire_futures("F", dec(110), now=1000,
                                      token_mark=dec(1))
        assert result.obligations[0].locked_tokens == dec(300)

    def test_guards(self):
        house, ledger = make_house()
        with pytest.raises(NotAFuture):
            house.expire_futures("S", dec(100), now=1000)
        with pytest.raises(NotExpired):
            house.expire_futures("F", dec(100), now=999)


class TestSettleDelivery:
    def setup_obligation(self, staked=dec(2000), short_balance=dec(10_000)):
        house, ledger = make_house()
        fund_account(house, ledger, "long")
        fund_account(house, ledger, "short", balance=short_balance,
                     staked=staked)
        pos_l = house.account("long").position(SPECS["F"])
        pos_l.apply_fill(10, dec(100))
        pos_s = house.account("short").position(SPECS["F"])
        pos_s.apply_fill(-10, dec(100))
        result = house.expire_futures("F", dec(100), now=1000,
                                      token_mark=dec(1))
        ob = result.obligations[0]
        house.verify_capacity(ob, SystemProfile("short", dec("1e13")), REF)
        return house, ledger, ob

    def test_delivered_moves_cash_and_hours(self):
        house, ledger, ob = self.setup_obligation()
        record = house.settle_delivery(ob.obligation_id,
                                       DeliveryVerdict.ACCEPTED, 2000,
                                       dec(100), dec(1))
        assert record.outcome == "delivered"
        assert record.cash_paid == dec(1000)
        assert house.account("long").stable_balance == dec(9_000)
        assert house.account("short").stable_balance == dec(11_000)
        assert house.account("long").ch_received == dec(10)
        assert house.account("short").ch_delivered == dec(10)
        assert ob.status is ObligationStatus.DELIVERED
        assert ledger.locked_of("short") == ZERO

    def test_failure_slashes_stake_to_cover_replacement(self):
        house, ledger, ob = self.setup_obligation(staked=dec(2000))
        record = house.settle_delivery(ob.obligation_id,
                                       DeliveryVerdict.CHALLENGED_FAILED, 2000,
                                       dec(120), dec(1))
        assert record.outcome == "compensated"
        assert record.replacement_cost == dec(1200)
        assert record.slashed_tokens == dec(1200)   # fully covered by stake
        assert record.slash_value == dec(1200)
        assert record.waterfall is None
        assert record.compensation_value == dec(1200)
        assert ledger.balance("long") == dec(1200)  # slash pays in tokens
        assert ob.status is ObligationStatus.COMPENSATED

    def test_failure_with_thin_stake_cascades_to_waterfall(self):
        house, ledger, ob = self.setup_obligation(staked=dec(400),
                                                  short_balance=dec(300))
        record = house.settle_delivery(ob.obligation_id,
                                       DeliveryVerdict.CHALLENGED_FAILED, 2000,
                                       dec(120), dec(1))
        # replacement 1200: slash 400 stake, then 300 collateral,
        # then guarantor pool covers the remaining 500
        assert record.slashed_tokens == dec(400)
        wf = record.waterfall
        assert wf is not None
        draws = {d.layer: d.amount for d in wf.draws}
        assert draws["defaulter_collateral"] == dec(300)
        assert draws["defaulter_stake"] == ZERO      # already slashed empty
        assert draws["pool_collateral"] == dec(500)
        assert wf.haircut == ZERO
        assert record.compensation_value == dec(1200)
        assert house.pools["g1"].pool_collateral == dec(500)

    def test_settle_requires_verified_state(self):
        house, ledger = make_house()
        fund_account(house, ledger, "s")
        fund_account(house, ledger, "l")
        ob = DeliveryObligation("ob-x", "s", "l", dec(1),
                                SPECS["F"].grade_floor, dec(100), 0, 86400)
        house.obligations["ob-x"] = ob
        with pytest.raises(BadState):
            house.settle_delivery("ob-x", DeliveryVerdict.ACCEPTED, 0,
                                  dec(100), dec(1))


class TestWaterfall:
    def test_layer_order_and_exact_sums(self):
        ledger = TokenLedger()
        house = ClearingHouse(ledger, SPECS)
        pool = house.add_guarantor("g1", pool_collateral=dec(25))
        house.add_account("d", AccountRole.TRADER, "g1", balance=dec(30))
        house.add_account("b", AccountRole.TRADER, "g1")
        ledger.mint_initial("d", dec(20))
        ledger.stake("d", dec(20))
        ledger.mint_initial(pool.token_account, dec(10))
        ledger.stake(pool.token_account, dec(10))
        ledger.fund.contribute("g1", dec(100))

        record = house.apply_waterfall("d", dec(100), dec(1), "b")
        assert [d.layer for d in record.draws] == list(WATERFALL_LAYERS)
        amounts = [d.amount for d in record.draws]
        assert amounts == [dec(30), dec(20), dec(25), dec(10), dec(15)]
        assert record.haircut == ZERO
        assert record.total_drawn() == dec(100)
        assert house.account("b").stable_balance == dec(70)   # stable legs
        assert ledger.balance("b") == dec(30)                 # token legs
        assert ledger.fund.stable_balance == dec(85)

    def test_early_layer_covers_everything(self):
        ledger = TokenLedger()
        house = ClearingHouse(ledger, SPECS)
        house.add_guarantor("g1", pool_collateral=dec(500))
        house.add_account("d", AccountRole.TRADER, "g1", balance=dec(80))
        house.add_account("b", AccountRole.TRADER, "g1")
        record = house.apply_waterfall("d", dec(50), dec(1), "b")
        amounts = {d.layer: d.amount for d in record.draws}
        assert amounts["defaulter_collateral"] == dec(50)
        assert all(amounts[l] == ZERO for l in WATERFALL_LAYERS[1:])
        assert house.account("d").stable_balance == dec(30)
        assert house.pools["g1"].pool_collateral == dec(500)

    def test_haircut_absorbs_uncovered_residual(self):
        ledger = TokenLedger()
        house = ClearingHouse(ledger, SPECS)
        house.add_guarantor("g1", pool_collateral=dec(10))
        house.add_account("d", AccountRole.TRADER, "g1", balance=dec(5))
        house.add_account("b", AccountRole.TRADER, "g1")
        record = house.apply_waterfall("d", dec(100), dec(1), "b")
        assert record.haircut == dec(85)
        assert record.total_drawn() == dec(15)
        assert house.haircuts == [("b", dec(85))]

    def test_negative_defaulter_balance_contributes_nothing(self):
        ledger = TokenLedger()
        house = ClearingHouse(ledger, SPECS)
        house.add_guarantor("g1", pool_collateral=dec(40))
        house.add_account("d", AccountRole.TRADER, "g1", balance=dec(-25))
        house.add_account("b", AccountRole.TRADER, "g1")
        record = house.apply_waterfall("d", dec(30), dec(1), "b")
        amounts = {d.layer: d.amount for d in record.draws}
        assert amounts["defaulter_collateral"] == ZERO
        assert amounts["pool_collateral"] == dec(30)
        assert house.account("d").stable_balance == dec(-25)

    def test_requires_positive_shortfall(self):
        house, _ = make_house()
        house.add_account("d", AccountRole.TRADER, "g1")
        house.add_account("b", AccountRole.TRADER, "g1")
        with pytest.raises(ValueError):
            house.apply_waterfall("d", ZERO, dec(1), "b")


class TestRequiredInsuranceStake:
    def test_fraction_of_aggregate_margin(self):
        house, ledger = make_house()
        fund_account(house, ledger, "a", balance=dec(10_000))
        pos = house.account("a").position(SPECS["FC"])
        pos.apply_fill(10, dec(100))
        marks = {"FC": dec(100)}
        # customer margin: 10 contracts * 15 = 150; 5% = 7.5; at mark 2 -> 3.75
        required = house.required_insurance_stake("g1", marks, {}, 0, dec(2))
        assert required == dec("3.75")
        assert house.required_insurance_stake("g1", marks, {}, 0, ZERO) == ZERO


def test_total_stable_spans_all_venues():
    house, ledger = make_house()
    fund_account(house, ledger, "a", balance=dec(100))
    ledger.fund.contribute("g1", dec(50))
    ledger.fee_pool = dec(7)
    assert house.total_stable() == dec(100) + dec(1000) + dec(50) + dec(7)
