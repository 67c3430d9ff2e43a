"""Grid margin and reputation tests.

The margin oracle here re-derives the worst grid loss with a plain
double loop over explicit multiplier lists, independent of the engine's
implementation details.
"""

import random
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcx.errors import MissingMark, MissingVol, UnknownAccount
from gcx.instruments import InstrumentSpec, black76_premium, option_right
from gcx.numerics import ONE, SECONDS_PER_YEAR, ZERO, dec, quantize
from gcx.risk import (
    Exposure,
    MarginParams,
    MarginStatus,
    REPUTATION_DELTA,
    ReputationBook,
    ReputationEvent,
    ReputationScore,
    initial_margin,
    maintenance_margin,
    margin_check,
)

YEAR = 31_536_000


def _future(iid="F", expiry=YEAR):
    return InstrumentSpec.from_dict({
        "id": iid, "kind": "future", "contract_size": "1",
        "tick_size": "0.01", "expiry": expiry, "settlement": "cash"})


def _option(iid="C", kind="call_option", strike="100", expiry=YEAR,
            underlying="F"):
    return InstrumentSpec.from_dict({
        "id": iid, "kind": kind, "contract_size": "1", "tick_size": "0.01",
        "expiry": expiry, "strike": strike, "underlying": underlying})


def oracle_margin(portfolio, marks, vols, specs, now, params):
    """Reference: revalue at every (price, vol) node, charge worst loss."""
    step = 2 * params.price_scan_pct / (params.scan_steps - 1)
    price_mults = [ONE - params.price_scan_pct + step * k
                   for k in range(params.scan_steps)]
    vol_mults = [ONE - params.vol_scan_pct, ONE, ONE + params.vol_scan_pct]

    def value(spec, price, vol):
        if spec.is_option:
            t = ZERO if spec.expiry <= now else \
                dec(spec.expiry - now) / SECONDS_PER_YEAR
            return black76_premium(price, spec.strike, vol, t,
                                   option_right(spec.kind)) * spec.contract_size
        return price * spec.contract_size

    worst = ZERO
    for pm in price_mults:
        for vm in vol_mults:
            pnl = ZERO
            for exp in portfolio:
                if exp.quantity == 0:
                    continue
                spec = specs[exp.instrument_id]
                mark = marks[spec.underlying if spec.is_option
                             else exp.instrument_id]
                vol = None
                if spec.is_option:
                    vol = dec(vols.get(exp.instrument_id,
                                       vols.get(spec.underlying)))
                base = value(spec, mark, vol)
                bumped = value(spec, mark * pm,
                               vol * vm if vol is not None else None)
                pnl += (bumped - base) * exp.quantity
            worst = min(worst, pnl)
    return quantize(-worst)


class TestMarginParams:
    def test_multipliers_span_scan_range(self):
        params = MarginParams(price_scan_pct="0.15", scan_steps=7)
        mults = params.price_multipliers()
        assert len(mults) == 7
        assert mults[0] == dec("0.85")
        assert mults[-1] == dec("1.15")
        assert mults[3] == ONE

    def test_validation(self):
        with pytest.raises(ValueError):
            MarginParams(price_scan_pct="0")
        with pytest.raises(ValueError):
            MarginParams(price_scan_pct="1.5")
        with pytest.raises(ValueError):
            MarginParams(scan_steps=4)
        with pytest.raises(ValueError):
            MarginParams(scan_steps=1)
        with pytest.raises(ValueError):
            MarginParams(maintenance_fraction="0")


class TestInitialMargin:
    def test_single_long_future_worst_case_is_full_scan_down(self):
        specs = {"F": _future()}
        im = initial_margin([Exposure("F", 1)], {"F": dec(100)}, {}, specs)
        # worst node is the 15% down move: lose 15 per contract
        assert im == dec("15")

    def test_short_future_symmetric(self):
        specs = {"F": _future()}
        im = initial_margin([Exposure("F", -1)], {"F": dec(100)}, {}, specs)
        assert im == dec("15")

    def test_scales_with_quantity(self):
        specs = {"F": _future()}
        one = initial_margin([Exposure("F", 1)], {"F": dec(100)}, {}, specs)
        ten = initial_margin([Exposure("F", 10)], {"F": dec(100)}, {}, specs)
        assert ten == 10 * one

    def test_monotone_in_scan_width(self):
        specs = {"F": _future()}
        narrow = initial_margin([Exposure("F", 1)], {"F": dec(100)}, {}, specs,
                                params=MarginParams(price_scan_pct="0.10"))
        wide = initial_margin([Exposure("F", 1)], {"F": dec(100)}, {}, specs,
                              params=MarginParams(price_scan_pct="0.30"))
        assert narrow == dec("10")
        assert wide == dec("30")
        assert wide > narrow

    def test_empty_and_zero_exposures_cost_nothing(self):
        specs = {"F": _future()}
        assert initial_margin([], {}, {}, specs) == ZERO
        assert initial_margin([Exposure("F", 0)], {}, {}, specs) == ZERO

    def test_hedged_pair_subadditive(self):
        # long future + long put: the put gains where the future loses,
        # so the joint margin must not exceed the sum of the legs
        specs = {"F": _future(), "P": _option("P", "put_option")}
        marks = {"F": dec(100)}
        vols = {"F": dec("0.4")}
        fut = initial_margin([Exposure("F", 1)], marks, vols, specs)
        put = initial_margin([Exposure("P", 1)], marks, vols, specs)
        both = initial_margin([Exposure("F", 1), Exposure("P", 1)],
                              marks, vols, specs)
        assert both <= fut + put
        assert both < fut   # the put genuinely offsets

    def test_matches_oracle_on_random_portfolios(self):
        specs = {
            "F": _future(),
            "C": _option("C", "call_option", "100"),
            "P": _option("P", "put_option", "95"),
        }
        marks = {"F": dec(100)}
        vols = {"F": dec("0.5")}
        params = MarginParams()
        rng = random.Random(7)
        for _ in range(60):
            portfolio = [Exposure(iid, rng.randint(-5, 5))
                         for iid in ("F", "C", "P")]
            got = initial_margin(portfolio, marks, vols, specs,
                                 now=0, params=params)
            want = oracle_margin(portfolio, marks, vols, specs, 0, params)
            assert got == want

    def test_instrument_vol_preferred_over_underlying(self):
        specs = {"C": _option()}
        marks = {"F": dec(100)}
        by_inst = initial_margin([Exposure("C", -1)], marks,
                                 {"C": dec("0.9"), "F": dec("0.1")}, specs)
        by_under = initial_margin([Exposure("C", -1)], marks,
                                  {"F": dec("0.9")}, specs)
        assert by_inst == by_under

    def test_missing_mark_and_vol_raise(self):
        specs = {"F": _future(), "C": _option()}
        with pytest.raises(MissingMark):
            initial_margin([Exposure("F", 1)], {}, {}, specs)
        with pytest.raises(MissingVol):
            initial_margin([Exposure("C", 1)], {"F": dec(100)}, {}, specs)

    def test_margin_never_negative(self):
        # a long option can only lose its premium; margin is floored at 0
        specs = {"C": _option(strike="50")}   # deep ITM call
        marks = {"F": dec(100)}
        vols = {"F": dec("0.2")}
        im = initial_margin([Exposure("C", 1)], marks, vols, specs)
        assert im >= ZERO

    @given(qty=st.integers(min_value=-8, max_value=8),
           mark=st.integers(min_value=10, max_value=500))
    @settings(max_examples=60, deadline=None)
    def test_future_margin_closed_form(self, qty, mark):
        # linear payoff: worst loss is scan_pct * |qty| * mark exactly
        specs = {"F": _future()}
        im = initial_margin([Exposure("F", qty)], {"F": dec(mark)}, {}, specs)
        assert im == quantize(dec("0.15") * abs(qty) * dec(mark))


class TestMaintenanceAndCheck:
    def test_maintenance_is_configured_fraction(self):
        assert maintenance_margin(dec(100)) == dec("75")
        params = MarginParams(maintenance_fraction="0.5")
        assert maintenance_margin(dec(100), params) == dec("50")

    @pytest.mark.parametrize("equity,expected", [
        (dec(100), MarginStatus.HEALTHY),
        (dec(150), MarginStatus.HEALTHY),
        (dec("99.999999"), MarginStatus.MARGIN_CALL),
        (dec(75), MarginStatus.MARGIN_CALL),
        (dec("74.999999"), MarginStatus.LIQUIDATE),
        (dec(-10), MarginStatus.LIQUIDATE),
    ])
    def test_bands(self, equity, expected):
        assert margin_check(equity, dec(100), dec(75)) is expected


class TestReputation:
    def test_deltas(self):
        assert REPUTATION_DELTA[ReputationEvent.DELIVERY_SUCCESS] == 1
        assert REPUTATION_DELTA[ReputationEvent.DELIVERY_FAILURE] == -10
        assert REPUTATION_DELTA[ReputationEvent.LIQUIDATION] == -5

    def test_starts_at_100_and_clamps_high(self):
        rep = ReputationScore("a")
        assert rep.score == 100
        rep.apply(ReputationEvent.DELIVERY_SUCCESS)
        assert rep.score == 100   # clamped at the ceiling

    def test_failure_and_recovery(self):
        rep = ReputationScore("a")
        rep.apply(ReputationEvent.DELIVERY_FAILURE)
        assert rep.score == 90
        rep.apply(ReputationEvent.LIQUIDATION)
        assert rep.score == 85
        for _ in range(3):
            rep.apply(ReputationEvent.DELIVERY_SUCCESS)
        assert rep.score == 88

    def test_clamps_at_zero(self):
        rep = ReputationScore("a")
        for _ in range(20):
            rep.apply(ReputationEvent.DELIVERY_FAILURE)
        assert rep.score == 0

    @given(st.lists(st.sampled_from(list(ReputationEvent)), max_size=40))
    @settings(max_examples=80, deadline=None)
    def test_replay_reproduces_fold(self, events):
        live = ReputationScore("a")
        for event in events:
            live.apply(event)
        replayed = ReputationScore.replay("a", events)
        assert replayed.score == live.score
        assert replayed.events == live.events
        assert 0 <= replayed.score <= 100

    def test_book_register_and_update(self):
        book = ReputationBook()
        book.register("a")
        rep = book.update("a", ReputationEvent.DELIVERY_FAILURE)
        assert rep.score == 90
        with pytest.raises(UnknownAccount):
            book.update("ghost", ReputationEvent.DELIVERY_SUCCESS)
