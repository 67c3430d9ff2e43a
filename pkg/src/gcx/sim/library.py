"""Built-in scenarios.

Each scenario pairs a market script with assertions whose expected
values come from closed-form payoff algebra, not from the engine, so a
run cross-checks the whole pipeline against an independent model.

All of them trade compute-hour (CH) instruments against a spot index:
physical futures deliver CH through obligations, cash futures and the
options on them settle against the index at expiry.
"""

from __future__ import annotations

from typing import Callable, Dict

from .scenario import Scenario

HOUR = 3600
DAY = 86400
EXPIRY = 3 * DAY
DELIVER_AT = EXPIRY + HOUR
END = EXPIRY + DAY + 2 * HOUR


def _config() -> dict:
    # hedge-invariance oracles need zero fees; fee mechanics get their own tests
    return {
        "token": {"fee_bps": "0", "burn_bps": "0"},
        "clearing": {"delivery_window_hours": 24, "verification_lead_hours": 24},
        "spot_index": "CH-SPOT",
    }


def _spot_instrument() -> dict:
    return {"id": "CH-SPOT", "kind": "spot", "contract_size": "1",
            "tick_size": "0.000001"}


def _future(iid: str = "CHF", settlement: str = "physical") -> dict:
    return {"id": iid, "kind": "future", "contract_size": "1",
            "tick_size": "0.01", "expiry": EXPIRY, "settlement": settlement}


def _option(iid: str, kind: str, strike: str, underlying: str) -> dict:
    return {"id": iid, "kind": kind, "contract_size": "1", "tick_size": "0.01",
            "expiry": EXPIRY, "strike": strike, "underlying": underlying}


def _provider_profile(name: str) -> dict:
    return {"provider_id": name, "measured_performance": "1e13",
            "uptime_pct": "99.95", "measured_power": "2500"}


def _guarantor(**overrides) -> dict:
    g = {"id": "g1", "pool_collateral": "50000",
         "insurance_stake_tokens": "1000", "fund_stable": "20000"}
    g.update(overrides)
    return g


def _gbm_spot() -> dict:
    return {"kind": "gbm", "s0": "100", "drift": "0.10", "vol": "0.5",
            "start": 0, "end": EXPIRY, "step": HOUR}


def _order(t: int, account: str, instrument: str, side: str, price,
           quantity: int, **extra) -> dict:
    event = {"time": t, "op": "submit_order", "account": account,
             "instrument": instrument, "side": side, "price": price,
             "quantity": quantity}
    event.update(extra)
    return event


def _cross(t: int, seller: str, buyer: str, instrument: str, price,
           quantity: int, **extra) -> list:
    return [_order(t, seller, instrument, "sell", price, quantity, **extra),
            _order(t, buyer, instrument, "buy", price, quantity, **extra)]


def alice_futures_hedge() -> dict:
    """Buyer locks in CH at the futures price; delivery makes it real."""
    return {
        "schema_version": 1, "name": "alice_futures_hedge", "seed": 11,
        "end": END, "config": _config(),
        "instruments": [_spot_instrument(), _future()],
        "guarantors": [_guarantor()],
        "accounts": [
            {"id": "mm", "role": "market_maker", "guarantor": "g1",
             "balance": "200000", "staked": "5000",
             "profile": _provider_profile("mm")},
            {"id": "alice", "role": "hedger", "guarantor": "g1",
             "balance": "100000"},
        ],
        "prices": {"CH-SPOT": _gbm_spot()},
        "token_mark": "1",
        "events": _cross(HOUR, "mm", "alice", "CHF", "100", 10)
        + [{"time": DELIVER_AT, "op": "deliver", "account": "mm",
            "honest": True}],
        "assertions": [
            {"name": "buyer pays the locked price", "kind": "cost_per_ch",
             "account": "alice", "expected": "100"},
            {"name": "seller earns the locked price", "kind": "revenue_per_ch",
             "account": "mm", "expected": "100"},
            {"kind": "ch_received", "account": "alice", "expected": "10"},
            {"kind": "obligations_terminal", "delivered": 1},
            {"kind": "no_margin_calls"},
            {"kind": "no_liquidations"},
            {"kind": "conservation"},
            {"kind": "supply_identity"},
        ],
    }


def alice_put_floor() -> dict:
    """Long future plus long put: cost capped near the strike on a crash."""
    exercise_when = {"path": "CH-SPOT", "at": EXPIRY, "lt": "95"}
    return {
        "schema_version": 1, "name": "alice_put_floor", "seed": 23,
        "end": END, "config": _config(),
        "instruments": [_spot_instrument(), _future(),
                        _option("CHP", "put_option", "95", "CHF")],
        "guarantors": [_guarantor()],
        "accounts": [
            {"id": "mm", "role": "market_maker", "guarantor": "g1",
             "balance": "500000", "staked": "5000",
             "profile": _provider_profile("mm")},
            {"id": "alice", "role": "hedger", "guarantor": "g1",
             "balance": "100000"},
        ],
        "prices": {"CH-SPOT": _gbm_spot()},
        "vols": {"CHP": "0.5"},
        "token_mark": "1",
        "events": _cross(HOUR, "mm", "alice", "CHF", "100", 10)
        + _cross(HOUR, "mm", "alice", "CHP", "3", 10)
        + [{"time": EXPIRY, "op": "exercise", "account": "alice",
            "instrument": "CHP", "quantity": 10, "when": exercise_when}]
        + _cross(EXPIRY, "mm", "alice", "CH-SPOT", {"path": "CH-SPOT"}, 10,
                 when=exercise_when)
        + [{"time": DELIVER_AT, "op": "deliver", "account": "mm",
            "honest": True}],
        "assertions": [
            {"name": "all-in cost respects the put floor", "kind": "payoff",
             "formula": "put_floor_cost", "measure": "cost_per_ch",
             "account": "alice",
             "params": {"path": "CH-SPOT", "at": EXPIRY, "strike": "95",
                        "entry": "100", "premium_per_ch": "3"}},
            {"kind": "ch_received", "account": "alice", "expected": "10"},
            {"kind": "obligations_terminal"},
            {"kind": "no_liquidations"},
            {"kind": "conservation"},
            {"kind": "supply_identity"},
        ],
    }


def alice_straddle() -> dict:
    """Long call plus long put pays out volatility around the strike."""
    return {
        "schema_version": 1, "name": "alice_straddle", "seed": 37,
        "end": END, "config": _config(),
        "instruments": [_spot_instrument(), _future("CHF-C", "cash"),
                        _option("CHC", "call_option", "100", "CHF-C"),
                        _option("CHP", "put_option", "100", "CHF-C")],
        "guarantors": [_guarantor()],
        "accounts": [
            {"id": "mm", "role": "market_maker", "guarantor": "g1",
             "balance": "500000"},
            {"id": "alice", "role": "trader", "guarantor": "g1",
             "balance": "100000"},
        ],
        "prices": {"CH-SPOT": _gbm_spot(),
                   "CHF-C": {"kind": "explicit", "points": [[0, "100"]]}},
        "vols": {"CHC": "0.5", "CHP": "0.5"},
        "token_mark": "1",
        "events": _cross(HOUR, "mm", "alice", "CHC", "4", 5)
        + _cross(HOUR, "mm", "alice", "CHP", "4", 5),
        "assertions": [
            {"name": "straddle pays the absolute move", "kind": "payoff",
             "formula": "straddle_long", "measure": "net_cash",
             "account": "alice",
             "params": {"path": "CH-SPOT", "at": EXPIRY, "strike": "100",
                        "quantity": "5", "contract_size": "1",
                        "premium_total": "40"}},
            {"kind": "parity_clean"},
            {"kind": "no_liquidations"},
            {"kind": "conservation"},
            {"kind": "supply_identity"},
        ],
    }


def bob_producer_hedge() -> dict:
    """Provider sells forward and delivers: revenue locked at the trade."""
    return {
        "schema_version": 1, "name": "bob_producer_hedge", "seed": 41,
        "end": END, "config": _config(),
        "instruments": [_spot_instrument(), _future()],
        "guarantors": [_guarantor()],
        "accounts": [
            {"id": "bob", "role": "hedger", "guarantor": "g1",
             "balance": "200000", "staked": "5000",
             "profile": _provider_profile("bob")},
            {"id": "tina", "role": "trader", "guarantor": "g1",
             "balance": "200000"},
        ],
        "prices": {"CH-SPOT": _gbm_spot()},
        "token_mark": "1",
        "events": _cross(HOUR, "bob", "tina", "CHF", "100", 20)
        + [{"time": DELIVER_AT, "op": "deliver", "account": "bob",
            "honest": True}],
        "assertions": [
            {"name": "producer revenue locked at entry", "kind": "revenue_per_ch",
             "account": "bob", "expected": "100"},
            {"kind": "ch_delivered", "account": "bob", "expected": "20"},
            {"kind": "cost_per_ch", "account": "tina", "expected": "100"},
            {"kind": "obligations_terminal", "delivered": 1},
            {"kind": "no_margin_calls"},
            {"kind": "no_liquidations"},
            {"kind": "conservation"},
            {"kind": "supply_identity"},
        ],
    }


def bob_put_protection() -> dict:
    """Producer sells at spot but owns puts: revenue floored at the strike."""
    return {
        "schema_version": 1, "name": "bob_put_protection", "seed": 53,
        "end": END, "config": _config(),
        "instruments": [_spot_instrument(), _future("CHF-C", "cash"),
                        _option("CHP", "put_option", "95", "CHF-C")],
        "guarantors": [_guarantor()],
        "accounts": [
            {"id": "mm", "role": "market_maker", "guarantor": "g1",
             "balance": "500000"},
            {"id": "bob", "role": "hedger", "guarantor": "g1",
             "balance": "100000", "profile": _provider_profile("bob")},
        ],
        "prices": {"CH-SPOT": _gbm_spot(),
                   "CHF-C": {"kind": "explicit", "points": [[0, "100"]]}},
        "vols": {"CHP": "0.5"},
        "token_mark": "1",
        "events": _cross(HOUR, "mm", "bob", "CHP", "3", 50)
        + [{"time": EXPIRY, "op": "production_period", "account": "bob",
            "capacity_ch": "50", "power_cost": "1000"}],
        "assertions": [
            {"name": "spot sales plus puts floor the revenue", "kind": "payoff",
             "formula": "put_protection_net", "measure": "net_cash",
             "account": "bob",
             "params": {"path": "CH-SPOT", "at": EXPIRY, "strike": "95",
                        "quantity": "50", "contract_size": "1",
                        "capacity_ch": "50", "power_cost": "1000",
                        "premium_total": "150"}},
            {"kind": "ch_delivered", "account": "bob", "expected": "50"},
            {"kind": "no_liquidations"},
            {"kind": "conservation"},
            {"kind": "supply_identity"},
        ],
    }


def carol_covered_calls() -> dict:
    """Producer sells calls against capacity: premium now, capped upside."""
    return {
        "schema_version": 1, "name": "carol_covered_calls", "seed": 67,
        "end": END, "config": _config(),
        "instruments": [_spot_instrument(), _future("CHF-C", "cash"),
                        _option("CHC", "call_option", "110", "CHF-C")],
        "guarantors": [_guarantor()],
        "accounts": [
            {"id": "mm", "role": "market_maker", "guarantor": "g1",
             "balance": "500000"},
            {"id": "carol", "role": "hedger", "guarantor": "g1",
             "balance": "100000", "profile": _provider_profile("carol")},
        ],
        "prices": {"CH-SPOT": _gbm_spot(),
                   "CHF-C": {"kind": "explicit", "points": [[0, "100"]]}},
        "vols": {"CHC": "0.5"},
        "token_mark": "1",
        "events": _cross(HOUR, "carol", "mm", "CHC", "4", 30)
        + [{"time": EXPIRY, "op": "production_period", "account": "carol",
            "capacity_ch": "30", "power_cost": "600"}],
        "assertions": [
            {"name": "production plus short calls", "kind": "payoff",
             "formula": "covered_call_net", "measure": "net_cash",
             "account": "carol",
             "params": {"path": "CH-SPOT", "at": EXPIRY, "strike": "110",
                        "quantity": "30", "contract_size": "1",
                        "capacity_ch": "30", "power_cost": "600",
                        "premium_total": "120"}},
            {"kind": "ch_delivered", "account": "carol", "expected": "30"},
            {"kind": "no_liquidations"},
            {"kind": "conservation"},
            {"kind": "supply_identity"},
        ],
    }


def carol_short_strangle_with_shutdown() -> dict:
    """Short strangle where the plant's shutdown option caps the damage."""
    return {
        "schema_version": 1, "name": "carol_short_strangle_with_shutdown",
        "seed": 79, "end": END, "config": _config(),
        "instruments": [_spot_instrument(), _future("CHF-C", "cash"),
                        _option("CHC", "call_option", "130", "CHF-C"),
                        _option("CHP", "put_option", "75", "CHF-C")],
        "guarantors": [_guarantor()],
        "accounts": [
            {"id": "mm", "role": "market_maker", "guarantor": "g1",
             "balance": "500000"},
            {"id": "carol", "role": "hedger", "guarantor": "g1",
             "balance": "100000", "profile": _provider_profile("carol")},
        ],
        "prices": {"CH-SPOT": _gbm_spot(),
                   "CHF-C": {"kind": "explicit", "points": [[0, "100"]]}},
        "vols": {"CHC": "0.5", "CHP": "0.5"},
        "token_mark": "1",
        "events": _cross(HOUR, "carol", "mm", "CHC", "2", 20)
        + _cross(HOUR, "carol", "mm", "CHP", "2", 20)
        + [{"time": EXPIRY, "op": "production_period", "account": "carol",
            "capacity_ch": "40", "power_cost": "4400", "shutdown": True}],
        "assertions": [
            {"name": "strangle with shutdown floor", "kind": "payoff",
             "formula": "strangle_shutdown_net", "measure": "net_cash",
             "account": "carol",
             "params": {"path": "CH-SPOT", "at": EXPIRY, "call_strike": "130",
                        "put_strike": "75", "quantity": "20",
                        "contract_size": "1", "capacity_ch": "40",
                        "power_cost": "4400", "premium_total": "80"}},
            {"name": "never worse than the bare short put",
             "kind": "loss_bounded", "formula": "naked_put_loss",
             "account": "carol",
             "params": {"path": "CH-SPOT", "at": EXPIRY, "put_strike": "75",
                        "quantity": "20", "contract_size": "1",
                        "premium_put": "40"}},
            {"kind": "parity_clean"},
            {"kind": "no_liquidations"},
            {"kind": "conservation"},
            {"kind": "supply_identity"},
        ],
    }


def bulk_vs_spot() -> dict:
    """One bulk forward versus repeated spot buys on a peaky price."""
    purchases = [[50000, "10"], [100000, "10"], [150000, "10"], [200000, "10"]]
    spot_path = {"kind": "explicit", "points": [
        [0, "100"], [43200, "125"], [86400, "85"], [129600, "130"],
        [172800, "90"], [216000, "135"], [259200, "95"]]}
    events = _cross(HOUR, "mm", "bulk", "CHF", "100", 40)
    for t, qty in purchases:
        events += _cross(t, "mm", "spotty", "CH-SPOT",
                         {"path": "CH-SPOT"}, int(qty))
    events.append({"time": DELIVER_AT, "op": "deliver", "account": "mm",
                   "honest": True})
    return {
        "schema_version": 1, "name": "bulk_vs_spot", "seed": 83,
        "end": END, "config": _config(),
        "instruments": [_spot_instrument(), _future()],
        "guarantors": [_guarantor()],
        "accounts": [
            {"id": "mm", "role": "market_maker", "guarantor": "g1",
             "balance": "500000", "staked": "10000",
             "profile": _provider_profile("mm")},
            {"id": "bulk", "role": "hedger", "guarantor": "g1",
             "balance": "100000"},
            {"id": "spotty", "role": "hedger", "guarantor": "g1",
             "balance": "100000"},
        ],
        "prices": {"CH-SPOT": spot_path},
        "token_mark": "1",
        "events": events,
        "assertions": [
            {"name": "bulk buyer pays the forward price", "kind": "cost_per_ch",
             "account": "bulk", "expected": "100"},
            {"name": "spot buyer pays the ladder average", "kind": "payoff",
             "formula": "spot_ladder_cost", "measure": "cost_per_ch",
             "account": "spotty",
             "params": {"path": "CH-SPOT", "purchases": purchases}},
            {"kind": "ch_received", "account": "spotty", "expected": "40"},
            {"kind": "ch_received", "account": "bulk", "expected": "40"},
            {"kind": "obligations_terminal", "delivered": 1},
            {"kind": "no_liquidations"},
            {"kind": "conservation"},
            {"kind": "supply_identity"},
        ],
    }


def default_and_waterfall() -> dict:
    """Failed delivery: stake slashed first, then the loss waterfall."""
    return {
        "schema_version": 1, "name": "default_and_waterfall", "seed": 97,
        "end": END, "config": _config(),
        "instruments": [_spot_instrument(), _future()],
        "guarantors": [_guarantor(pool_collateral="300",
                                  pool_stake_tokens="100",
                                  insurance_stake_tokens="0",
                                  fund_stable="500")],
        "accounts": [
            {"id": "eve", "role": "hedger", "guarantor": "g1",
             "balance": "400", "staked": "400",
             "profile": _provider_profile("eve")},
            {"id": "hana", "role": "hedger", "guarantor": "g1",
             "balance": "100000"},
        ],
        "prices": {"CH-SPOT": {"kind": "explicit",
                               "points": [[0, "100"], [EXPIRY, "120"]]}},
        "token_mark": "1",
        "events": _cross(HOUR, "eve", "hana", "CHF", "100", 10)
        + [{"time": DELIVER_AT, "op": "deliver", "account": "eve",
            "honest": False}],
        "assertions": [
            {"kind": "obligations_terminal", "compensated": 1},
            {"name": "stake, then pool, then fund, no haircut",
             "kind": "waterfall_order",
             "expect_layers": ["defaulter_collateral", "pool_collateral",
                               "pool_stake", "insurance_fund"],
             "haircut": "0"},
            {"name": "buyer made whole at replacement cost",
             "kind": "compensated_fully", "obligation": "ob-1"},
            {"kind": "reputation", "account": "eve", "expected": 90},
            {"kind": "liquidated", "account": "eve", "expected": False},
            {"kind": "conservation"},
            {"kind": "supply_identity"},
        ],
    }


_BUILDERS: Dict[str, Callable[[], dict]] = {
    "alice_futures_hedge": alice_futures_hedge,
    "alice_put_floor": alice_put_floor,
    "alice_straddle": alice_straddle,
    "bob_producer_hedge": bob_producer_hedge,
    "bob_put_protection": bob_put_protection,
    "carol_covered_calls": carol_covered_calls,
    "carol_short_strangle_with_shutdown": carol_short_strangle_with_shutdown,
    "bulk_vs_spot": bulk_vs_spot,
    "default_and_waterfall": default_and_waterfall,
}


def scenario_names() -> list:
    return sorted(_BUILDERS)


def scenario_library() -> Dict[str, Scenario]:
    return {name: Scenario.from_dict(build()) for name, build in _BUILDERS.items()}
