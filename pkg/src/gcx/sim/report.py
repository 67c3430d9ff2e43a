"""Run reports and assertion evaluation.

A report is a canonical JSON document derived from final engine state:
account economics, lifecycle outcomes, invariant checks, and the result
of each scenario assertion.  Identical inputs produce byte-identical
reports.

Payoff assertions compare realized account cash against closed-form
expressions evaluated directly from the price paths, independent of the
engine's bookkeeping.
"""

from __future__ import annotations

import json
from decimal import Decimal
from typing import Any, Callable, Dict, Mapping, Tuple

from ..clearing import WATERFALL_LAYERS, ObligationStatus
from ..engine import ENGINE_VERSION, Engine
from ..numerics import ZERO, dec, dsum, quantize

AssertionFn = Callable[[Engine, Any, Mapping, Mapping[str, Any]], Tuple[bool, str]]

# flows that are financing rather than trading results
_FINANCING_TAGS = {"deposit", "fund_contribution"}


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def net_trading_cash(engine: Engine, account_id: str) -> Decimal:
    flows = engine.flows.get(account_id, {})
    return dsum(v for tag, v in flows.items() if tag not in _FINANCING_TAGS)


def cost_per_ch(engine: Engine, account_id: str) -> Decimal:
    received = engine.house.account(account_id).ch_received
    if received == 0:
        raise ZeroDivisionError(f"{account_id} received no compute hours")
    return -net_trading_cash(engine, account_id) / received


def revenue_per_ch(engine: Engine, account_id: str) -> Decimal:
    delivered = engine.house.account(account_id).ch_delivered
    if delivered == 0:
        raise ZeroDivisionError(f"{account_id} delivered no compute hours")
    return net_trading_cash(engine, account_id) / delivered


def _path_value(paths: Mapping, params: Mapping[str, Any], key: str = "path") -> Decimal:
    return paths[params[key]].value_at(int(params["at"]))


def _compare(actual: Decimal, expected: Decimal, tolerance: Decimal) -> Tuple[bool, str]:
    diff = abs(actual - expected)
    passed = diff <= tolerance
    return passed, f"actual={actual} expected={expected} diff={diff}"


def _tol(assertion: Mapping[str, Any]) -> Decimal:
    return dec(assertion.get("tolerance", "0"))


# ----------------------------------------------------------------------
# closed-form payoff oracles, evaluated from price paths only

def _payoff_straddle_long(paths: Mapping, p: Mapping[str, Any]) -> Decimal:
    settle = _path_value(paths, p)
    strike = dec(p["strike"])
    scale = dec(p["quantity"]) * dec(p["contract_size"])
    return abs(settle - strike) * scale - dec(p["premium_total"])


def _payoff_put_floor_cost(paths: Mapping, p: Mapping[str, Any]) -> Decimal:
    settle = _path_value(paths, p)
    strike = dec(p["strike"])
    entry = dec(p["entry"])
    premium = dec(p["premium_per_ch"])
    if settle >= strike:
        return entry + premium
    return settle + (entry - strike) + premium


def _payoff_put_protection_net(paths: Mapping, p: Mapping[str, Any]) -> Decimal:
    settle = _path_value(paths, p)
    strike = dec(p["strike"])
    scale = dec(p["quantity"]) * dec(p["contract_size"])
    production = dec(p["capacity_ch"]) * settle - dec(p["power_cost"])
    return production + max(strike - settle, ZERO) * scale - dec(p["premium_total"])


def _payoff_covered_call_net(paths: Mapping, p: Mapping[str, Any]) -> Decimal:
    settle = _path_value(paths, p)
    strike = dec(p["strike"])
    scale = dec(p["quantity"]) * dec(p["contract_size"])
    production = dec(p["capacity_ch"]) * settle - dec(p["power_cost"])
    return production - max(settle - strike, ZERO) * scale + dec(p["premium_total"])


def _payoff_strangle_shutdown_net(paths: Mapping, p: Mapping[str, Any]) -> Decimal:
    settle = _path_value(paths, p)
    call_strike = dec(p["call_strike"])
    put_strike = dec(p["put_strike"])
    scale = dec(p["quantity"]) * dec(p["contract_size"])
    production = max(dec(p["capacity_ch"]) * settle - dec(p["power_cost"]), ZERO)
    short_legs = (max(settle - call_strike, ZERO)
                  + max(put_strike - settle, ZERO)) * scale
    return production + dec(p["premium_total"]) - short_legs


def _payoff_naked_put_loss(paths: Mapping, p: Mapping[str, Any]) -> Decimal:
    """Loss of a bare short put: what the hedged book must not exceed."""
    settle = _path_value(paths, p)
    scale = dec(p["quantity"]) * dec(p["contract_size"])
    return max(dec(p["put_strike"]) - settle, ZERO) * scale - dec(p["premium_put"])


def _payoff_spot_ladder_cost(paths: Mapping, p: Mapping[str, Any]) -> Decimal:
    """Average price of buying fixed lots at scheduled times off a path."""
    path = paths[p["path"]]
    total_cost = ZERO
    total_qty = ZERO
    for t, qty in p["purchases"]:
        q = dec(qty)
        total_cost += path.value_at(int(t)) * q
        total_qty += q
    return total_cost / total_qty


PAYOFF_FORMULAS: Dict[str, Callable[[Mapping, Mapping[str, Any]], Decimal]] = {
    "straddle_long": _payoff_straddle_long,
    "put_floor_cost": _payoff_put_floor_cost,
    "put_protection_net": _payoff_put_protection_net,
    "covered_call_net": _payoff_covered_call_net,
    "strangle_shutdown_net": _payoff_strangle_shutdown_net,
    "naked_put_loss": _payoff_naked_put_loss,
    "spot_ladder_cost": _payoff_spot_ladder_cost,
}


# ----------------------------------------------------------------------
# assertion kinds

def _assert_cost_per_ch(engine, scenario, paths, a):
    return _compare(quantize(cost_per_ch(engine, a["account"])),
                    quantize(dec(a["expected"])), _tol(a))


def _assert_revenue_per_ch(engine, scenario, paths, a):
    return _compare(quantize(revenue_per_ch(engine, a["account"])),
                    quantize(dec(a["expected"])), _tol(a))


def _assert_net_cash(engine, scenario, paths, a):
    return _compare(net_trading_cash(engine, a["account"]),
                    dec(a["expected"]), _tol(a))


def _assert_payoff(engine, scenario, paths, a):
    formula = PAYOFF_FORMULAS[a["formula"]]
    expected = quantize(formula(paths, a["params"]))
    measure = a.get("measure", "net_cash")
    if measure == "net_cash":
        actual = quantize(net_trading_cash(engine, a["account"]))
    elif measure == "cost_per_ch":
        actual = quantize(cost_per_ch(engine, a["account"]))
    elif measure == "revenue_per_ch":
        actual = quantize(revenue_per_ch(engine, a["account"]))
    else:
        return False, f"unknown measure {measure!r}"
    return _compare(actual, expected, _tol(a))


def _assert_loss_bounded(engine, scenario, paths, a):
    """Realized net cash must not fall below minus the oracle loss bound."""
    formula = PAYOFF_FORMULAS[a["formula"]]
    bound = formula(paths, a["params"])
    actual = net_trading_cash(engine, a["account"])
    passed = actual >= -bound
    return passed, f"net={actual} floor={-bound}"


def _assert_no_margin_calls(engine, scenario, paths, a):
    account = a.get("account")
    calls = [c for c in engine.margin_calls
             if account is None or c["account"] == account]
    return not calls, f"margin_calls={len(calls)}"


def _assert_no_liquidations(engine, scenario, paths, a):
    account = a.get("account")
    liqs = [x for x in engine.liquidations if account is None or x == account]
    return not liqs, f"liquidations={liqs}"


def _assert_liquidated(engine, scenario, paths, a):
    hit = a["account"] in engine.liquidations
    return hit == bool(a.get("expected", True)), f"liquidated={hit}"


def _assert_obligations_terminal(engine, scenario, paths, a):
    states: Dict[str, int] = {}
    for ob in engine.house.obligations.values():
        states[ob.status.value] = states.get(ob.status.value, 0) + 1
    terminal = {ObligationStatus.DELIVERED.value, ObligationStatus.COMPENSATED.value}
    stuck = {s: n for s, n in states.items() if s not in terminal}
    if stuck:
        return False, f"non-terminal obligations: {stuck}"
    for key in ("delivered", "compensated"):
        if key in a and states.get(key, 0) != int(a[key]):
            return False, f"{key}={states.get(key, 0)} expected {a[key]}"
    return True, f"states={dict(sorted(states.items()))}"


def _assert_waterfall_order(engine, scenario, paths, a):
    records = engine.house.waterfalls
    if not records:
        return False, "no waterfall records"
    order = {layer: i for i, layer in enumerate(WATERFALL_LAYERS)}
    for record in records:
        indices = [order[d.layer] for d in record.draws]
        if indices != sorted(indices):
            return False, f"layer order violated: {[d.layer for d in record.draws]}"
        drawn = record.total_drawn()
        if drawn + record.haircut != record.shortfall:
            return False, (f"draws {drawn} + haircut {record.haircut} "
                           f"!= shortfall {record.shortfall}")
    layers_hit = sorted({d.layer for r in records for d in r.draws if d.amount > 0},
                        key=lambda l: order[l])
    for want in a.get("expect_layers", []):
        if want not in layers_hit:
            return False, f"layer {want!r} not drawn (hit: {layers_hit})"
    if "haircut" in a:
        total_haircut = dsum(r.haircut for r in records)
        if total_haircut != dec(a["haircut"]):
            return False, f"haircut={total_haircut} expected {a['haircut']}"
    return True, f"layers={layers_hit}"


def _assert_compensated_fully(engine, scenario, paths, a):
    for record in engine.house.settlements:
        if record.obligation_id == a["obligation"]:
            if record.outcome != "compensated":
                return False, f"outcome={record.outcome}"
            ok = record.compensation_value == record.replacement_cost
            return ok, (f"compensation={record.compensation_value} "
                        f"replacement={record.replacement_cost}")
    return False, f"no settlement for {a['obligation']!r}"


def _assert_conservation(engine, scenario, paths, a):
    total = engine.house.total_stable()
    ok = total == engine.exogenous_stable
    return ok, f"holdings={total} deposits={engine.exogenous_stable}"


def _assert_supply_identity(engine, scenario, paths, a):
    ledger = engine.ledger
    lhs = ledger.cumulative_issued
    rhs = ledger.total_supply + ledger.cumulative_burned
    return lhs == rhs, f"issued={lhs} supply+burned={rhs}"


def _assert_parity_clean(engine, scenario, paths, a):
    ok = engine.parity_failures == 0
    return ok, (f"checks={engine.parity_checks} "
                f"failures={engine.parity_failures}")


def _assert_ch_received(engine, scenario, paths, a):
    got = engine.house.account(a["account"]).ch_received
    return got == dec(a["expected"]), f"ch_received={got}"


def _assert_ch_delivered(engine, scenario, paths, a):
    got = engine.house.account(a["account"]).ch_delivered
    return got == dec(a["expected"]), f"ch_delivered={got}"


def _assert_reputation(engine, scenario, paths, a):
    score = engine.reputation.scores[a["account"]].score
    if "below" in a:
        return score < int(a["below"]), f"score={score}"
    return score == int(a["expected"]), f"score={score}"


ASSERTION_KINDS: Dict[str, AssertionFn] = {
    "cost_per_ch": _assert_cost_per_ch,
    "revenue_per_ch": _assert_revenue_per_ch,
    "net_cash": _assert_net_cash,
    "payoff": _assert_payoff,
    "loss_bounded": _assert_loss_bounded,
    "no_margin_calls": _assert_no_margin_calls,
    "no_liquidations": _assert_no_liquidations,
    "liquidated": _assert_liquidated,
    "obligations_terminal": _assert_obligations_terminal,
    "waterfall_order": _assert_waterfall_order,
    "compensated_fully": _assert_compensated_fully,
    "conservation": _assert_conservation,
    "supply_identity": _assert_supply_identity,
    "parity_clean": _assert_parity_clean,
    "ch_received": _assert_ch_received,
    "ch_delivered": _assert_ch_delivered,
    "reputation": _assert_reputation,
}


def evaluate_assertions(engine: Engine, scenario, paths: Mapping) -> list:
    results = []
    for assertion in scenario.assertions:
        fn = ASSERTION_KINDS[assertion["kind"]]
        try:
            passed, detail = fn(engine, scenario, paths, assertion)
        except Exception as exc:   # surfaced in the report, not swallowed
            passed, detail = False, f"error: {exc}"
        results.append({
            "name": assertion.get("name", assertion["kind"]),
            "kind": assertion["kind"],
            "passed": bool(passed),
            "detail": detail,
        })
    return results


def build_report(engine: Engine, scenario, paths: Mapping, seed: int) -> dict:
    accounts = {}
    for aid, acc in sorted(engine.house.accounts.items()):
        flows = engine.flows.get(aid, {})
        accounts[aid] = {
            "stable": str(acc.stable_balance),
            "tokens": str(engine.ledger.balance(aid)),
            "staked": str(engine.ledger.staked_of(aid)),
            "ch_received": str(acc.ch_received),
            "ch_delivered": str(acc.ch_delivered),
            "net_trading_cash": str(net_trading_cash(engine, aid)),
            "flows": {tag: str(v) for tag, v in sorted(flows.items())},
            "reputation": engine.reputation.scores[aid].score
            if aid in engine.reputation.scores else None,
        }

    obligations = {}
    for ob in sorted(engine.house.obligations.values(),
                     key=lambda o: o.obligation_id):
        obligations[ob.obligation_id] = {
            "short": ob.short_account,
            "long": ob.long_account,
            "quantity": str(ob.quantity),
            "price": str(ob.contract_price),
            "status": ob.status.value,
        }

    settlements = [{
        "obligation": r.obligation_id,
        "outcome": r.outcome,
        "cash_paid": str(r.cash_paid),
        "replacement_cost": str(r.replacement_cost),
        "slashed_tokens": str(r.slashed_tokens),
        "slash_value": str(r.slash_value),
        "compensation_value": str(r.compensation_value),
    } for r in engine.house.settlements]

    waterfalls = [{
        "defaulter": r.defaulter,
        "guarantor": r.guarantor,
        "shortfall": str(r.shortfall),
        "draws": [[d.layer, str(d.amount), str(d.tokens)] for d in r.draws],
        "haircut": str(r.haircut),
    } for r in engine.house.waterfalls]

    assertions = evaluate_assertions(engine, scenario, paths)
    ledger = engine.ledger

    return {
        "schema_version": 1,
        "engine_version": ENGINE_VERSION,
        "scenario": scenario.name,
        "seed": seed,
        "final_time": engine.time,
        "event_count": len(engine.events),
        "accounts": accounts,
        "margin_calls": engine.margin_calls,
        "liquidations": list(engine.liquidations),
        "obligations": obligations,
        "settlements": settlements,
        "waterfalls": waterfalls,
        "haircuts": [[b, str(v)] for b, v in engine.house.haircuts],
        "parity": {"pairs": len(engine.parity_pairs),
                   "checks": engine.parity_checks,
                   "failures": engine.parity_failures},
        "supply": ledger.snapshot(),
        "conservation": {
            "total_stable": str(engine.house.total_stable()),
            "exogenous_stable": str(engine.exogenous_stable),
            "holds": engine.house.total_stable() == engine.exogenous_stable,
        },
        "assertions": assertions,
        "all_assertions_passed": all(a["passed"] for a in assertions),
        "state_hash": engine.state_hash(),
    }
