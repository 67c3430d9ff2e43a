"""End-to-end engine tests driven purely through the command interface.

Stable-currency conservation is asserted inside `execute` after every
command, so each scenario here doubles as a conservation check.
"""

from decimal import Decimal

import pytest

from gcx.engine import Engine, EngineConfig
from gcx.errors import GcxError
from gcx.numerics import ZERO, dec, dsum

DAY = 86_400
EXPIRY = 3 * DAY

FUTF = {"id": "F", "kind": "future", "contract_size": "1",
        "tick_size": "0.01", "expiry": EXPIRY, "settlement": "physical"}
FUTC = {"id": "FC", "kind": "future", "contract_size": "1",
        "tick_size": "0.01", "expiry": EXPIRY, "settlement": "cash"}
SPOT = {"id": "S", "kind": "spot", "contract_size": "1", "tick_size": "0.01"}
CALL = {"id": "C", "kind": "call_option", "contract_size": "1",
        "tick_size": "0.01", "expiry": EXPIRY, "strike": "100",
        "underlying": "FC"}
PUT = {"id": "P", "kind": "put_option", "contract_size": "1",
       "tick_size": "0.01", "expiry": EXPIRY, "strike": "100",
       "underlying": "FC"}


def make_engine(fee_bps="0", spot_index=None):
    cfg = {"token": {"fee_bps": fee_bps, "burn_bps": "0"}}
    if spot_index:
        cfg["spot_index"] = spot_index
    return Engine(EngineConfig.from_dict(cfg))


def boot(engine, *instruments, accounts=(("alice", 10_000), ("mm", 100_000)),
         guarantor_extra=None):
    t = 0
    g = {"op": "create_guarantor", "id": "g1", "pool_collateral": "50000"}
    g.update(guarantor_extra or {})
    engine.execute(t, g)
    for spec in instruments:
        engine.execute(t, {"op": "list_instrument", "spec": spec})
    for name, balance in accounts:
        engine.execute(t, {"op": "create_account", "id": name,
                           "role": "trader", "guarantor": "g1",
                           "balance": str(balance)})
    return engine


def cross(engine, t, seller, buyer, instrument, price, qty):
    engine.execute(t, {"op": "submit_order", "account": seller,
                       "instrument": instrument, "side": "sell",
                       "price": str(price), "quantity": qty})
    engine.execute(t, {"op": "submit_order", "account": buyer,
                       "instrument": instrument, "side": "buy",
                       "price": str(price), "quantity": qty})


def events_of(engine, etype):
    return [e for e in engine.events if e["e"] == etype]


def conserved(engine):
    return engine.house.total_stable() == engine.exogenous_stable


class TestFuturesLifecycle:
    def test_cost_telescopes_to_entry_price_plus_fees(self):
        engine = make_engine(fee_bps="10")
        boot(engine, FUTF)
        cross(engine, 10, "mm", "alice", "F", 100, 10)
        # one fee per side: 10 bps on 1000 notional
        assert [dec(e["fee"]) for e in events_of(engine, "fee")] == \
            [dec(1), dec(1)]
        engine.execute(1000, {"op": "set_mark", "instrument": "F",
                              "price": "90"})
        engine.execute(2000, {"op": "set_mark", "instrument": "F",
                              "price": "105"})
        engine.execute(EXPIRY, {"op": "expire_future", "instrument": "F",
                                "settlement_price": "110"})
        engine.execute(EXPIRY + 100, {"op": "deliver", "account": "mm",
                                      "honest": True})
        alice = engine.house.account("alice")
        assert alice.ch_received == dec(10)
        # variation telescopes 100 -> 110, delivery pays 110: all-in cost
        # is the entry price plus the fee
        spent = dec(10_000) - alice.stable_balance
        assert spent == dec(100) * 10 + dec(1)
        assert conserved(engine)

    def test_dishonest_delivery_compensates_long(self):
        engine = make_engine()
        boot(engine, FUTF,
             accounts=(("alice", 10_000), ("mm", 100_000)))
        engine.execute(0, {"op": "mint_tokens", "account": "mm",
                           "amount": "5000"})
        engine.execute(0, {"op": "stake", "account": "mm", "amount": "5000"})
        cross(engine, 10, "mm", "alice", "F", 100, 10)
        engine.execute(EXPIRY, {"op": "expire_future", "instrument": "F",
                                "settlement_price": "120"})
        engine.execute(EXPIRY + 100, {"op": "deliver", "account": "mm",
                                      "honest": False})
        [settle] = events_of(engine, "settlement")
        assert settle["outcome"] == "compensated"
        assert settle["replacement"] == "1200.000000"
        # stake covers the whole replacement in tokens at mark 1
        assert settle["slashed_tokens"] == "1200.000000"
        assert engine.ledger.balance("alice") == dec(1200)
        assert engine.reputation.scores["mm"].score == 90
        assert conserved(engine)

    def test_deadline_sweep_fails_idle_shorts(self):
        engine = make_engine()
        boot(engine, FUTF)
        cross(engine, 10, "mm", "alice", "F", 100, 10)
        engine.execute(EXPIRY, {"op": "expire_future", "instrument": "F",
                                "settlement_price": "100"})
        deadline = EXPIRY + 24 * 3600
        engine.execute(deadline + 1, {"op": "deadline_sweep"})
        [settle] = events_of(engine, "settlement")
        assert settle["outcome"] == "compensated"
        assert conserved(engine)


class TestTradingMechanics:
    def test_gate_rejection_emits_event_and_no_trade(self):
        engine = make_engine()
        boot(engine, FUTC, accounts=(("poor", 1), ("mm", 100_000)))
        engine.execute(0, {"op": "set_mark", "instrument": "FC",
                           "price": "100"})
        engine.execute(10, {"op": "submit_order", "account": "poor",
                            "instrument": "FC", "side": "buy",
                            "price": "100", "quantity": 10})
        assert len(events_of(engine, "order_rejected")) == 1
        assert events_of(engine, "trade") == []

    def test_spot_trade_moves_hours_immediately(self):
        engine = make_engine()
        boot(engine, SPOT)
        cross(engine, 10, "mm", "alice", "S", 100, 5)
        alice = engine.house.account("alice")
        assert alice.ch_received == dec(5)
        assert alice.stable_balance == dec(9_500)
        assert engine.house.account("mm").ch_delivered == dec(5)
        assert conserved(engine)

    def test_option_premium_exchanged_up_front(self):
        engine = make_engine()
        boot(engine, FUTC, CALL)
        engine.execute(0, {"op": "set_vol", "instrument": "FC",
                           "vol": "0.2"})
        engine.execute(0, {"op": "set_mark", "instrument": "FC",
                           "price": "100"})
        cross(engine, 10, "mm", "alice", "C", 4, 5)
        assert engine.house.account("alice").stable_balance == dec(9_980)
        assert engine.house.account("mm").stable_balance == dec(100_020)
        assert engine.house.account("alice").positions["C"].net_quantity == 5
        assert conserved(engine)

    def test_cancel_all_clears_resting_orders(self):
        engine = make_engine()
        boot(engine, FUTC)
        engine.execute(0, {"op": "set_mark", "instrument": "FC",
                           "price": "100"})
        engine.execute(10, {"op": "submit_order", "account": "mm",
                            "instrument": "FC", "side": "sell",
                            "price": "101", "quantity": 5})
        engine.execute(10, {"op": "submit_order", "account": "mm",
                            "instrument": "FC", "side": "buy",
                            "price": "99", "quantity": 5})
        engine.execute(20, {"op": "cancel_all", "account": "mm"})
        assert engine.matching.best_bid_ask("FC") == (None, None)
        assert len(events_of(engine, "order_cancelled")) == 2

    def test_fees_accrue_to_pool(self):
        engine = make_engine(fee_bps="10")
        boot(engine, FUTC)
        engine.execute(0, {"op": "set_mark", "instrument": "FC",
                           "price": "100"})
        cross(engine, 10, "mm", "alice", "FC", 100, 10)
        assert engine.ledger.fee_pool == dec(2)
        assert conserved(engine)


class TestOptionsLifecycle:
    def boot_with_calls(self):
        engine = make_engine()
        boot(engine, FUTC, CALL)
        engine.execute(0, {"op": "set_vol", "instrument": "FC", "vol": "0.2"})
        engine.execute(0, {"op": "set_mark", "instrument": "FC",
                           "price": "100"})
        cross(engine, 10, "mm", "alice", "C", 4, 5)
        return engine

    def test_exercise_opens_future_legs_at_strike(self):
        engine = self.boot_with_calls()
        engine.execute(500, {"op": "set_mark", "instrument": "FC",
                             "price": "110"})
        engine.execute(600, {"op": "exercise", "instrument": "C",
                             "account": "alice", "quantity": 5})
        alice = engine.house.account("alice")
        mm = engine.house.account("mm")
        assert "C" not in alice.positions or \
            alice.positions["C"].net_quantity == 0
        assert alice.positions["FC"].net_quantity == 5
        assert mm.positions["FC"].net_quantity == -5
        # strike 100, mark 110: exercising long banks 50, the short owes it
        assert engine.flows["alice"]["exercise"] == dec(50)
        assert engine.flows["mm"]["exercise"] == dec(-50)
        assert conserved(engine)

    def test_itm_expiry_assigns_everyone(self):
        engine = self.boot_with_calls()
        engine.execute(EXPIRY, {"op": "set_mark", "instrument": "FC",
                                "price": "120"})
        engine.execute(EXPIRY, {"op": "expire_options", "instrument": "C",
                                "underlying_price": "120"})
        alice = engine.house.account("alice")
        assert alice.positions["FC"].net_quantity == 5
        assert engine.flows["alice"]["exercise"] == dec(100)
        assert engine.house.account("mm").positions["FC"].net_quantity == -5
        [expiry] = events_of(engine, "option_expiry")
        assert expiry["itm"]
        assert conserved(engine)

    def test_otm_expiry_removes_positions_quietly(self):
        engine = self.boot_with_calls()
        engine.execute(EXPIRY, {"op": "expire_options", "instrument": "C",
                                "underlying_price": "90"})
        assert "C" not in engine.house.account("alice").positions
        assert "FC" not in engine.house.account("alice").positions
        [expiry] = events_of(engine, "option_expiry")
        assert not expiry["itm"]

    def test_parity_checked_on_every_quoted_pair(self):
        engine = make_engine()
        boot(engine, FUTC, CALL, PUT)
        engine.execute(0, {"op": "set_vol", "instrument": "FC", "vol": "0.2"})
        engine.execute(0, {"op": "set_mark", "instrument": "FC",
                           "price": "100"})
        engine.execute(500, {"op": "set_mark", "instrument": "FC",
                             "price": "104"})
        assert engine.parity_checks == 2
        assert engine.parity_failures == 0


class TestPerpFunding:
    def test_funding_is_zero_sum_and_longs_pay_above_index(self):
        engine = make_engine()
        perp = {"id": "PP", "kind": "perpetual", "contract_size": "1",
                "tick_size": "0.01", "funding_interval": 3600}
        boot(engine, perp)
        cross(engine, 10, "mm", "alice", "PP", 100, 10)
        engine.execute(3600, {"op": "funding", "instrument": "PP",
                              "index": "95"})
        alice_flow = engine.flows["alice"]["funding"]
        mm_flow = engine.flows["mm"]["funding"]
        assert alice_flow < 0       # long pays when mark > index
        assert alice_flow + mm_flow == ZERO
        assert conserved(engine)


class TestMarginAndLiquidation:
    def boot_levered(self, balance):
        engine = make_engine()
        boot(engine, FUTC, accounts=(("alice", balance), ("mm", 100_000)))
        engine.execute(0, {"op": "set_mark", "instrument": "FC",
                           "price": "100"})
        cross(engine, 10, "mm", "alice", "FC", 100, 10)
        return engine

    def test_margin_call_without_liquidation(self):
        engine = self.boot_levered(200)
        engine.execute(1000, {"op": "set_mark", "instrument": "FC",
                              "price": "94"})
        engine.execute(1000, {"op": "margin_sweep"})
        assert engine.margin_calls == [{"t": 1000, "account": "alice",
                                        "status": "margin_call"}]
        assert engine.liquidations == []

    def test_liquidation_closes_position_on_the_book(self):
        engine = self.boot_levered(200)
        engine.execute(1000, {"op": "set_mark", "instrument": "FC",
                              "price": "90"})
        engine.execute(1000, {"op": "submit_order", "account": "mm",
                              "instrument": "FC", "side": "buy",
                              "price": "90", "quantity": 10})
        engine.execute(1000, {"op": "margin_sweep"})
        assert engine.liquidations == ["alice"]
        alice = engine.house.account("alice")
        assert all(p.net_quantity == 0 for p in alice.positions.values())
        assert engine.reputation.scores["alice"].score == 95
        assert conserved(engine)

    def test_debt_covered_layer_by_layer_with_haircut(self):
        engine = make_engine()
        boot(engine, FUTC,
             accounts=(("alice", 160), ("mm", 100_000)),
             guarantor_extra={"pool_collateral": "120",
                              "pool_stake_tokens": "50",
                              "fund_stable": "150"})
        engine.execute(0, {"op": "mint_tokens", "account": "alice",
                           "amount": "100"})
        engine.execute(0, {"op": "stake", "account": "alice",
                           "amount": "100"})
        engine.execute(0, {"op": "set_mark", "instrument": "FC",
                           "price": "100"})
        cross(engine, 10, "mm", "alice", "FC", 100, 10)
        engine.execute(1000, {"op": "set_mark", "instrument": "FC",
                              "price": "44"})
        engine.execute(1000, {"op": "margin_sweep"})
        [wf] = events_of(engine, "debt_waterfall")
        assert wf["debt"] == "400"
        draws = {layer: dec(amount) for layer, amount, _ in wf["draws"]}
        assert draws == {"defaulter_collateral": ZERO,
                         "defaulter_stake": dec(100),
                         "pool_collateral": dec(120),
                         "pool_stake": dec(50),
                         "insurance_fund": ZERO}
        assert dec(wf["haircut"]) == dec(130)
        # the written-off debt leaves the account at exactly zero
        assert engine.house.account("alice").stable_balance == ZERO
        assert engine.house.pools["g1"].pool_collateral == ZERO
        assert engine.ledger.fund.token_balance == dec(150)
        assert conserved(engine)


class TestProduction:
    def test_production_books_pnl_and_hours(self):
        engine = make_engine(spot_index="IDX")
        boot(engine, accounts=(("carol", 5000),))
        engine.execute(0, {"op": "set_mark", "instrument": "IDX",
                           "price": "100"})
        engine.execute(100, {"op": "production_period", "account": "carol",
                             "capacity_ch": "10", "power_cost": "400"})
        carol = engine.house.account("carol")
        assert carol.stable_balance == dec(5_600)
        assert carol.ch_delivered == dec(10)
        assert conserved(engine)

    def test_shutdown_option_floors_loss_at_zero(self):
        engine = make_engine(spot_index="IDX")
        boot(engine, accounts=(("carol", 5000),))
        engine.execute(0, {"op": "set_mark", "instrument": "IDX",
                           "price": "100"})
        engine.execute(100, {"op": "production_period", "account": "carol",
                             "capacity_ch": "10", "power_cost": "2000",
                             "shutdown": True})
        carol = engine.house.account("carol")
        assert carol.stable_balance == dec(5_000)
        assert carol.ch_delivered == ZERO
        [prod] = events_of(engine, "production")
        assert not prod["running"]

    def test_running_at_a_loss_without_shutdown(self):
        engine = make_engine(spot_index="IDX")
        boot(engine, accounts=(("carol", 5000),))
        engine.execute(0, {"op": "set_mark", "instrument": "IDX",
                           "price": "100"})
        engine.execute(100, {"op": "production_period", "account": "carol",
                             "capacity_ch": "10", "power_cost": "2000"})
        assert engine.house.account("carol").stable_balance == dec(4_000)
        assert engine.house.account("carol").ch_delivered == dec(10)
        assert conserved(engine)


class TestDeterminism:
    COMMANDS = [
        (0, {"op": "create_guarantor", "id": "g1",
             "pool_collateral": "1000"}),
        (0, {"op": "list_instrument", "spec": FUTC}),
        (0, {"op": "create_account", "id": "a", "role": "trader",
             "guarantor": "g1", "balance": "10000"}),
        (0, {"op": "create_account", "id": "b", "role": "market_maker",
             "guarantor": "g1", "balance": "10000"}),
        (5, {"op": "set_mark", "instrument": "FC", "price": "100"}),
        (10, {"op": "submit_order", "account": "a", "instrument": "FC",
              "side": "buy", "price": "100", "quantity": 3}),
        (11, {"op": "submit_order", "account": "b", "instrument": "FC",
              "side": "sell", "price": "100", "quantity": 3}),
        (20, {"op": "set_mark", "instrument": "FC", "price": "103"}),
    ]

    def run_all(self):
        engine = Engine(EngineConfig.from_dict({}))
        for at, cmd in self.COMMANDS:
            engine.execute(at, cmd)
        return engine

    def test_same_commands_same_hash(self):
        assert self.run_all().state_hash() == self.run_all().state_hash()

    def test_divergent_commands_change_hash(self):
        base = self.run_all()
        other = Engine(EngineConfig.from_dict({}))
        for at, cmd in self.COMMANDS[:-1]:
            other.execute(at, cmd)
        other.execute(20, {"op": "set_mark", "instrument": "FC",
                           "price": "104"})
        assert base.state_hash() != other.state_hash()

    def test_snapshot_is_json_ready(self):
        import json
        snap = self.run_all().state_snapshot()
        assert json.loads(json.dumps(snap)) == snap


class TestGuards:
    def test_unknown_op_rejected(self):
        engine = make_engine()
        with pytest.raises(GcxError):
            engine.execute(0, {"op": "fabricate_money"})

    def test_clock_cannot_move_backwards(self):
        engine = make_engine()
        engine.execute(100, {"op": "create_guarantor", "id": "g1"})
        with pytest.raises(GcxError):
            engine.execute(99, {"op": "create_guarantor", "id": "g2"})
